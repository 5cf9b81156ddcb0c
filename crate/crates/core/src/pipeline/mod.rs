//! Cross-validation harness for the model suite: univariate gBLUP, the
//! concatenated baseline, and per-timepoint factor models with and without
//! Procrustes alignment, each under CV1 and CV2 and for incremental growth
//! stage subsets.

pub mod concat;
pub mod report;
pub mod series;
pub mod summary;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::covest::estimate_covariances;
use crate::design::{genotype_blues, Stage, TrialDataset, TrialDesign};
use crate::error::{Error, Result};
use crate::gblup::{cv1_with, cv2_with, estimate_multitrait_cov, BlupResult, Cv2Method, MultiTraitCov, Scenario, TrainingKinship};
use crate::kinship::{genomic_relationship, partition_kinship, GrmOptions, KinshipPartition};
use crate::linalg::{pearson, select_columns, select_rows};
use crate::selection::{best_subset, SelectionOptions, SubsetResult};
use crate::symmat::SymMatrix;

pub use concat::{concatenated_baseline, ConcatModel};
pub use series::{fit_series, SeriesFit, SeriesOptions, TargetTimepoint};
pub use summary::{summarize, FitSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Model {
    Univariate,
    Concatenated,
    Varimax,
    Procrustes,
}

impl Model {
    pub const ALL: [Model; 4] = [Model::Univariate, Model::Concatenated, Model::Varimax, Model::Procrustes];
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Univariate => "gBLUP",
            Model::Concatenated => "concat-glfBLUP",
            Model::Varimax => "varimax-glfBLUP",
            Model::Procrustes => "procrustes-glfBLUP",
        })
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gblup" | "univariate" => Ok(Model::Univariate),
            "concat" | "concat-glfblup" | "concatenated" => Ok(Model::Concatenated),
            "varimax" | "varimax-glfblup" => Ok(Model::Varimax),
            "procrustes" | "procrustes-glfblup" => Ok(Model::Procrustes),
            other => Err(Error::Parse(format!("unknown model {other:?}"))),
        }
    }
}

/// Growth stages whose secondary data a model may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StageSubset {
    Vegetative,
    VegetativeHeading,
    All,
}

impl StageSubset {
    pub const ALL: [StageSubset; 3] = [StageSubset::Vegetative, StageSubset::VegetativeHeading, StageSubset::All];

    pub fn stages(self) -> &'static [Stage] {
        match self {
            StageSubset::Vegetative => &[Stage::Vegetative],
            StageSubset::VegetativeHeading => &[Stage::Vegetative, Stage::Heading],
            StageSubset::All => &[Stage::Vegetative, Stage::Heading, Stage::GrainFilling],
        }
    }
}

impl fmt::Display for StageSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageSubset::Vegetative => "vegetative",
            StageSubset::VegetativeHeading => "vegetative+heading",
            StageSubset::All => "all",
        })
    }
}

impl FromStr for StageSubset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(' ', "").as_str() {
            "vegetative" | "veg" => Ok(StageSubset::Vegetative),
            "vegetative+heading" | "veg+heading" | "heading" => Ok(StageSubset::VegetativeHeading),
            "all" => Ok(StageSubset::All),
            other => Err(Error::Parse(format!("unknown stage subset {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvPlan {
    pub replicates: usize,
    pub train_fraction: f64,
    pub scenarios: Vec<Scenario>,
    pub stages: Vec<StageSubset>,
    pub models: Vec<Model>,
    pub seed: u64,
    pub selection: SelectionOptions,
    pub cv2_method: Cv2Method,
}

impl Default for CvPlan {
    fn default() -> Self {
        Self {
            replicates: 100,
            train_fraction: 2.0 / 3.0,
            scenarios: vec![Scenario::Cv1, Scenario::Cv2],
            stages: StageSubset::ALL.to_vec(),
            models: Model::ALL.to_vec(),
            seed: 0,
            selection: SelectionOptions::default(),
            cv2_method: Cv2Method::Exact,
        }
    }
}

impl CvPlan {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("plan needs at least one replicate".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("train fraction {} outside (0, 1)", self.train_fraction)));
        }
        if self.scenarios.is_empty() || self.stages.is_empty() || self.models.is_empty() {
            return Err(Error::Config("plan needs at least one scenario, stage subset and model".into()));
        }
        if self.scenarios.contains(&Scenario::Uni) {
            return Err(Error::Config("scenarios are CV1 and/or CV2; univariate gBLUP is a model".into()));
        }
        Ok(())
    }
}

/// Genotype split of one replicate: sorted train and test indices. Fully
/// determined by (seed, replicate).
pub fn split_genotypes(g: usize, train_fraction: f64, seed: u64, replicate: usize) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    let mut ids: Vec<usize> = (0..g).collect();
    ids.shuffle(&mut rng);
    let n_train = ((g as f64) * train_fraction).round().clamp(1.0, (g - 1) as f64) as usize;
    let mut train = ids[..n_train].to_vec();
    let mut test = ids[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Pearson correlation of predictions with observed genotype means.
pub fn predictive_ability(predicted: &[f64], observed: &[f64]) -> Result<f64> {
    if predicted.len() != observed.len() {
        return Err(Error::shape(format!("{} predictions for {} observations", predicted.len(), observed.len())));
    }
    if predicted.len() < 3 {
        return Err(Error::Design(format!("predictive ability needs at least 3 test genotypes, got {}", predicted.len())));
    }
    pearson(predicted, observed).ok_or(Error::UndefinedCorrelation)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaRecord {
    pub model: Model,
    pub scenario: Scenario,
    pub stage: StageSubset,
    pub replicate: usize,
    /// None when the model failed or PA was undefined.
    pub pa: Option<f64>,
    pub note: String,
}

/// One candidate factor column of a per-timepoint model in one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRecord {
    pub model: Model,
    pub stage: StageSubset,
    pub replicate: usize,
    pub timepoint: String,
    pub factor: usize,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRuntime {
    pub stage: StageSubset,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct CvReport {
    pub plan: CvPlan,
    pub pa: Vec<PaRecord>,
    pub selection: Vec<SelectionRecord>,
    /// Full-data fit used for the loadings, correlation and trajectory
    /// tables.
    pub summary: Option<FitSummary>,
    /// Wall-clock seconds per stage subset summed over replicates.
    pub runtime: Vec<StageRuntime>,
}

/// Runtimes are excluded: two runs of the same plan compare equal.
impl PartialEq for CvReport {
    fn eq(&self, other: &Self) -> bool {
        self.plan == other.plan && self.pa == other.pa && self.selection == other.selection && self.summary == other.summary
    }
}

impl CvReport {
    pub fn empty(plan: CvPlan) -> Self {
        Self { plan, pa: Vec::new(), selection: Vec::new(), summary: None, runtime: Vec::new() }
    }

    /// Mean PA over non-missing replicates.
    pub fn mean_pa(&self, model: Model, scenario: Scenario, stage: StageSubset) -> Option<f64> {
        let v: Vec<f64> = self
            .pa
            .iter()
            .filter(|r| r.model == model && r.scenario == scenario && r.stage == stage)
            .filter_map(|r| r.pa)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// PA values of one cell, indexed by replicate.
    pub fn pa_by_replicate(&self, model: Model, scenario: Scenario, stage: StageSubset) -> Vec<Option<f64>> {
        let mut out = vec![None; self.plan.replicates];
        for r in &self.pa {
            if r.model == model && r.scenario == scenario && r.stage == stage && r.replicate < out.len() {
                out[r.replicate] = r.pa;
            }
        }
        out
    }
}

/// Kinship of the dataset: the supplied matrix, else VanRaden from markers.
pub fn dataset_kinship(data: &TrialDataset) -> Result<SymMatrix> {
    match &data.kinship {
        Some(k) => Ok(k.clone()),
        None => genomic_relationship(&data.markers, GrmOptions::default()),
    }
}

/// Everything a replicate needs about its split.
pub struct SplitData {
    pub part: KinshipPartition,
    pub kin: TrainingKinship,
    pub design_o: TrialDesign,
    pub design_u: TrialDesign,
    pub secondary_o: Vec<DMatrix<f64>>,
    pub secondary_u: Vec<DMatrix<f64>>,
    pub focal_o: DVector<f64>,
    pub focal_u: DVector<f64>,
}

impl SplitData {
    pub fn new(data: &TrialDataset, k: &SymMatrix, train: &[usize], test: &[usize]) -> Result<Self> {
        let part = partition_kinship(k, train, test)?;
        let (design_o, rows_o) = data.design.restrict(train)?;
        let (design_u, rows_u) = data.design.restrict(test)?;
        let kin = TrainingKinship::new(&part.k_train, &design_o.replicate_counts())?;
        let pick = |v: &DVector<f64>, rows: &[usize]| DVector::from_iterator(rows.len(), rows.iter().map(|&i| v[i]));
        Ok(Self {
            part,
            kin,
            secondary_o: data.secondary.iter().map(|y| select_rows(y, &rows_o)).collect(),
            secondary_u: data.secondary.iter().map(|y| select_rows(y, &rows_u)).collect(),
            focal_o: pick(&data.focal, &rows_o),
            focal_u: pick(&data.focal, &rows_u),
            design_o,
            design_u,
        })
    }

    fn focal_means(v: &DVector<f64>, design: &TrialDesign) -> Result<DVector<f64>> {
        Ok(genotype_blues(&DMatrix::from_column_slice(v.len(), 1, v.as_slice()), design)?.column(0).clone_owned())
    }

    pub fn observed_test_means(&self) -> Result<DVector<f64>> {
        Self::focal_means(&self.focal_u, &self.design_u)
    }
}

/// Candidate factor scores of one model on training and test rows.
struct Candidates {
    genotype_o: DMatrix<f64>,
    plot_o: DMatrix<f64>,
    plot_u: DMatrix<f64>,
    /// (timepoint index, factor) per column.
    labels: Vec<(usize, usize)>,
}

/// Training-only state of a factor model, for leakage checks and reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: Model,
    pub series: Option<SeriesFit>,
    pub concat: Option<ConcatModel>,
    pub candidate_labels: Vec<(usize, usize)>,
    pub subset: SubsetResult,
    pub covariance: MultiTraitCov,
    pub cv1: BlupResult,
}

fn candidates_for(model: Model, split: &SplitData, tps: &[usize], opts: &SeriesOptions) -> Result<(Candidates, Option<SeriesFit>, Option<ConcatModel>)> {
    match model {
        Model::Varimax | Model::Procrustes => {
            let aligned = model == Model::Procrustes;
            let fit = fit_series(&split.secondary_o, &split.design_o, tps, opts)?;
            let so = fit.scores(&split.secondary_o, &split.design_o, aligned)?;
            let su = fit.scores(&split.secondary_u, &split.design_u, aligned)?;
            let (genotype_o, local) = so.stacked_genotype_scores();
            let labels = local.iter().map(|&(i, k)| (tps[i], k)).collect();
            let c = Candidates {
                genotype_o,
                plot_o: so.stacked_plot_scores().0,
                plot_u: su.stacked_plot_scores().0,
                labels,
            };
            Ok((c, Some(fit), None))
        }
        Model::Concatenated => {
            let cm = concatenated_baseline(&split.secondary_o, &split.design_o, tps, opts)?;
            let plot_o = cm.projection.apply(&cm.stack(&split.secondary_o));
            let plot_u = cm.projection.apply(&cm.stack(&split.secondary_u));
            let genotype_o = genotype_blues(&plot_o, &split.design_o)?;
            let labels = (0..cm.n_factors()).map(|k| (usize::MAX, k)).collect();
            Ok((Candidates { genotype_o, plot_o, plot_u, labels }, None, Some(cm)))
        }
        Model::Univariate => Err(Error::Config("univariate gBLUP has no factor candidates".into())),
    }
}

fn with_focal(x: &DMatrix<f64>, focal: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone().insert_column(x.ncols(), 0.0);
    out.set_column(x.ncols(), focal);
    out
}

/// Fit a factor model and its CV1 predictions on the training part of a
/// split. Touches test secondaries only through the candidate scores that
/// CV2 later uses; the test focal values are never read.
fn train_factor_model(
    model: Model,
    split: &SplitData,
    tps: &[usize],
    opts: &SeriesOptions,
    plan: &CvPlan,
) -> Result<(TrainedModel, Candidates)> {
    let (cands, series, concat) = candidates_for(model, split, tps, opts)?;
    let y_means = SplitData::focal_means(&split.focal_o, &split.design_o)?;
    let subset = best_subset(&y_means, &cands.genotype_o, plan.selection)?;
    let plot_matrix = with_focal(&select_columns(&cands.plot_o, &subset.selected), &split.focal_o);
    let covariance = estimate_multitrait_cov(&plot_matrix, &split.design_o)?;
    let (cv1, _) = cv1_with(&plot_matrix, &split.design_o, &covariance, &split.part, &split.kin)?;
    let trained = TrainedModel {
        model,
        series,
        concat,
        candidate_labels: cands.labels.clone(),
        subset,
        covariance,
        cv1,
    };
    Ok((trained, cands))
}

/// Training-side CV1 fit of a factor model for an explicit split.
pub fn train_cv1(
    data: &TrialDataset,
    k: &SymMatrix,
    train: &[usize],
    test: &[usize],
    model: Model,
    stage: StageSubset,
    plan: &CvPlan,
) -> Result<TrainedModel> {
    let split = SplitData::new(data, k, train, test)?;
    let tps = data.design.timepoints_in(stage.stages());
    train_factor_model(model, &split, &tps, &SeriesOptions::default(), plan).map(|(t, _)| t)
}

fn univariate(split: &SplitData) -> Result<BlupResult> {
    let y = DMatrix::from_column_slice(split.focal_o.len(), 1, split.focal_o.as_slice());
    let cov: MultiTraitCov = estimate_covariances(&y, &split.design_o)?.into();
    let (mut r, _) = cv1_with(&y, &split.design_o, &cov, &split.part, &split.kin)?;
    r.scenario = Scenario::Uni;
    Ok(r)
}

fn pa_of(result: &Result<BlupResult>, observed: &DVector<f64>) -> (Option<f64>, String) {
    match result {
        Ok(r) => match predictive_ability(r.g_hat_test.as_slice(), observed.as_slice()) {
            Ok(v) => (Some(v), String::new()),
            Err(e) => (None, e.to_string()),
        },
        Err(e) => (None, e.to_string()),
    }
}

struct ReplicateOutcome {
    pa: Vec<PaRecord>,
    selection: Vec<SelectionRecord>,
    runtime: Vec<(StageSubset, f64)>,
}

fn run_replicate(data: &TrialDataset, k: &SymMatrix, plan: &CvPlan, rep: usize) -> ReplicateOutcome {
    let mut out = ReplicateOutcome { pa: Vec::new(), selection: Vec::new(), runtime: Vec::new() };
    let (train, test) = split_genotypes(data.design.n_genotypes(), plan.train_fraction, plan.seed, rep);
    let record = |out: &mut ReplicateOutcome, model, scenario, stage, (pa, note): (Option<f64>, String)| {
        out.pa.push(PaRecord { model, scenario, stage, replicate: rep, pa, note });
    };
    let split = match SplitData::new(data, k, &train, &test).and_then(|s| s.observed_test_means().map(|o| (s, o))) {
        Ok(v) => v,
        Err(e) => {
            warn!("replicate {rep}: split failed: {e}");
            for &stage in &plan.stages {
                for &model in &plan.models {
                    for &scenario in &plan.scenarios {
                        record(&mut out, model, scenario, stage, (None, e.to_string()));
                    }
                }
            }
            return out;
        }
    };
    let (split, observed) = split;
    let opts = SeriesOptions::default();
    let uni = plan.models.contains(&Model::Univariate).then(|| pa_of(&univariate(&split), &observed));

    for &stage in &plan.stages {
        let start = Instant::now();
        let tps = data.design.timepoints_in(stage.stages());
        for &model in &plan.models {
            if model == Model::Univariate {
                for &scenario in &plan.scenarios {
                    record(&mut out, model, scenario, stage, uni.clone().expect("univariate requested"));
                }
                continue;
            }
            let trained = if tps.is_empty() {
                Err(Error::TooFewTimepoints(0))
            } else {
                train_factor_model(model, &split, &tps, &opts, plan)
            };
            let (trained, cands) = match trained {
                Ok(v) => v,
                Err(e) => {
                    for &scenario in &plan.scenarios {
                        record(&mut out, model, scenario, stage, (None, e.to_string()));
                    }
                    continue;
                }
            };
            if model != Model::Concatenated {
                for (j, &(l, factor)) in trained.candidate_labels.iter().enumerate() {
                    out.selection.push(SelectionRecord {
                        model,
                        stage,
                        replicate: rep,
                        timepoint: data.design.timepoints()[l].label.clone(),
                        factor,
                        selected: trained.subset.selected.contains(&j),
                    });
                }
            }
            for &scenario in &plan.scenarios {
                let result = match scenario {
                    Scenario::Cv1 => Ok(trained.cv1.clone()),
                    Scenario::Cv2 => {
                        let plot_matrix =
                            with_focal(&select_columns(&cands.plot_o, &trained.subset.selected), &split.focal_o);
                        let test = select_columns(&cands.plot_u, &trained.subset.selected);
                        cv2_with(
                            &plot_matrix,
                            &split.design_o,
                            &test,
                            &split.design_u,
                            &trained.covariance,
                            &split.part,
                            &split.kin,
                            plan.cv2_method,
                        )
                    }
                    Scenario::Uni => unreachable!("rejected by plan validation"),
                };
                record(&mut out, model, scenario, stage, pa_of(&result, &observed));
            }
        }
        out.runtime.push((stage, start.elapsed().as_secs_f64()));
    }
    out
}

/// Run every replicate of the plan. Replicates run in parallel on the
/// current rayon pool; results are merged in replicate order.
pub fn run_cv(data: &TrialDataset, plan: &CvPlan) -> Result<CvReport> {
    plan.validate()?;
    data.validate()?;
    let k = dataset_kinship(data)?;
    info!("cross-validation: {} replicates, {} genotypes", plan.replicates, data.design.n_genotypes());
    let outcomes: Vec<ReplicateOutcome> =
        (0..plan.replicates).into_par_iter().map(|rep| run_replicate(data, &k, plan, rep)).collect();
    let mut report = CvReport::empty(plan.clone());
    let mut runtime: Vec<StageRuntime> = plan.stages.iter().map(|&stage| StageRuntime { stage, seconds: 0.0 }).collect();
    for o in outcomes {
        report.pa.extend(o.pa);
        report.selection.extend(o.selection);
        for (stage, secs) in o.runtime {
            if let Some(r) = runtime.iter_mut().find(|r| r.stage == stage) {
                r.seconds += secs;
            }
        }
    }
    let failed = report.pa.iter().filter(|r| r.pa.is_none()).count();
    if failed > 0 {
        warn!("{failed} of {} PA values missing (see the note column)", report.pa.len());
    }
    report.runtime = runtime;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pa_examples() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!((predictive_ability(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((predictive_ability(&neg, &a).unwrap() + 1.0).abs() < 1e-15);
        assert!((predictive_ability(&a, &[1.0, 2.0, 3.0, 5.0, 4.0]).unwrap() - 0.9).abs() < 1e-12);
        assert!(matches!(predictive_ability(&[1.0; 5], &a), Err(Error::UndefinedCorrelation)));
        assert!(predictive_ability(&a[..2], &a[..2]).is_err());
    }

    #[test]
    fn splits_are_reproducible_and_disjoint() {
        let (a, b) = split_genotypes(30, 2.0 / 3.0, 7, 3);
        assert_eq!((a.clone(), b.clone()), split_genotypes(30, 2.0 / 3.0, 7, 3));
        assert_eq!(a.len(), 20);
        assert!(a.iter().all(|x| !b.contains(x)));
        assert_ne!(a, split_genotypes(30, 2.0 / 3.0, 7, 4).0);
    }

    #[test]
    fn names_round_trip() {
        for m in Model::ALL {
            assert_eq!(m.to_string().parse::<Model>().unwrap(), m);
        }
        for s in StageSubset::ALL {
            assert_eq!(s.to_string().parse::<StageSubset>().unwrap(), s);
        }
    }
}
