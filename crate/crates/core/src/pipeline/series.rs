//! Per-timepoint factor models on one data set: covariances, dimension,
//! ML fit at a common dimension, Varimax, alignment and score projections.

use log::{debug, warn};
use nalgebra::DMatrix;

use crate::covest::{estimate_covariances, CovariancePair};
use crate::design::{genotype_blues, Stage, TrialDesign};
use crate::error::{Error, Result};
use crate::factor::{fit_factor_model, select_dimension, varimax, FactorModel, FitOptions, ScreeProfile, VarimaxOptions};
use crate::linalg::column_means;
use crate::procrustes::{align_series, AlignedLoadingsSeries};
use crate::scores::{score_series, ScoreSeries, TimepointProjection};
use crate::symmat::{cov_to_cor, SymMatrix};

/// Which timepoint the loadings are aligned to.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum TargetTimepoint {
    /// First heading-stage timepoint, or the last timepoint when none of
    /// the fitted timepoints is at heading.
    #[default]
    AutoHeading,
    /// Timepoint label, or 1-based position in the design.
    Label(String),
}

impl std::str::FromStr for TargetTimepoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "" => Err(Error::Config("empty target timepoint".into())),
            "auto-heading" | "auto" => Ok(Self::AutoHeading),
            other => Ok(Self::Label(other.to_string())),
        }
    }
}

impl std::fmt::Display for TargetTimepoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::AutoHeading => f.write_str("auto-heading"),
            Self::Label(l) => f.write_str(l),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SeriesOptions {
    pub target: TargetTimepoint,
    pub fit: FitOptions,
    pub varimax: VarimaxOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimepointFit {
    /// Index into the design's timepoints.
    pub timepoint: usize,
    pub covariances: CovariancePair,
    pub correlation: SymMatrix,
    pub scree: ScreeProfile,
    /// Dimension chosen at this timepoint alone.
    pub m_selected: usize,
    /// Fit at the common dimension, loadings after Varimax.
    pub model: FactorModel,
    /// Column means of the genotype BLUEs, used to center scores.
    pub center: nalgebra::DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFit {
    pub fits: Vec<TimepointFit>,
    /// Common dimension (modal per-timepoint choice, smallest on ties).
    pub m: usize,
    /// Alignment over `fits`; `alignment.target` indexes `fits`.
    pub alignment: AlignedLoadingsSeries,
    pub raw_projections: Vec<TimepointProjection>,
    pub aligned_projections: Vec<TimepointProjection>,
}

impl SeriesFit {
    pub fn timepoints(&self) -> Vec<usize> {
        self.fits.iter().map(|f| f.timepoint).collect()
    }

    pub fn projections(&self, aligned: bool) -> &[TimepointProjection] {
        if aligned {
            &self.aligned_projections
        } else {
            &self.raw_projections
        }
    }

    /// Scores of the fitted timepoints for any rows sharing the traits
    /// (training or test plots).
    pub fn scores(&self, secondary: &[DMatrix<f64>], design: &TrialDesign, aligned: bool) -> Result<ScoreSeries> {
        let tps = self.timepoints();
        let slices: Vec<DMatrix<f64>> = tps.iter().map(|&l| secondary[l].clone()).collect();
        score_series(&slices, &design.with_timepoints(&tps), self.projections(aligned), aligned)
    }
}

/// Most frequent value, smallest on ties.
pub fn modal_dimension(ms: &[usize]) -> Option<usize> {
    let max = *ms.iter().max()?;
    let mut counts = vec![0usize; max + 1];
    for &m in ms {
        counts[m] += 1;
    }
    let best = *counts.iter().max()?;
    counts.iter().position(|&c| c == best)
}

/// Alignment target among `timepoints` (returned as a position in it).
pub fn resolve_target(design: &TrialDesign, timepoints: &[usize], target: &TargetTimepoint) -> Result<usize> {
    let tps = design.timepoints();
    match target {
        TargetTimepoint::AutoHeading => Ok(timepoints
            .iter()
            .position(|&l| tps[l].stage == Stage::Heading)
            .unwrap_or(timepoints.len().saturating_sub(1))),
        TargetTimepoint::Label(label) => timepoints
            .iter()
            .position(|&l| &tps[l].label == label)
            .or_else(|| label.parse::<usize>().ok().and_then(|i| timepoints.iter().position(|&l| l + 1 == i)))
            .ok_or_else(|| Error::Config(format!("target timepoint {label:?} is not among the fitted timepoints"))),
    }
}

/// Covariances and per-timepoint dimension for one timepoint.
fn screen(y: &DMatrix<f64>, design: &TrialDesign) -> Result<(CovariancePair, SymMatrix, ScreeProfile, usize)> {
    let pair = estimate_covariances(y, design)?;
    let r = cov_to_cor(&pair.sigma_g)?;
    let (m, scree) = select_dimension(&r)?;
    Ok((pair, r, scree, m))
}

fn with_context(e: Error, label: &str) -> Error {
    match e {
        Error::Conditioning(m) => Error::Conditioning(format!("timepoint {label}: {m}")),
        Error::Shape(m) => Error::Shape(format!("timepoint {label}: {m}")),
        Error::Design(m) => Error::Design(format!("timepoint {label}: {m}")),
        other => other,
    }
}

/// Fit the factor pipeline on `timepoints` (indices into `design`'s
/// timepoints; `secondary` holds all of them).
pub fn fit_series(
    secondary: &[DMatrix<f64>],
    design: &TrialDesign,
    timepoints: &[usize],
    opts: &SeriesOptions,
) -> Result<SeriesFit> {
    if timepoints.is_empty() {
        return Err(Error::TooFewTimepoints(0));
    }
    let labels: Vec<&str> = timepoints.iter().map(|&l| design.timepoints()[l].label.as_str()).collect();
    let mut screened = Vec::with_capacity(timepoints.len());
    for (i, &l) in timepoints.iter().enumerate() {
        screened.push(screen(&secondary[l], design).map_err(|e| with_context(e, labels[i]))?);
    }
    let ms: Vec<usize> = screened.iter().map(|s| s.3).collect();
    let m = modal_dimension(&ms).expect("non-empty");
    if ms.iter().any(|&x| x != m) {
        debug!("per-timepoint dimensions {ms:?}; refitting all at {m}");
    }

    let mut fits = Vec::with_capacity(timepoints.len());
    for (i, ((pair, r, scree, m_sel), &l)) in screened.into_iter().zip(timepoints).enumerate() {
        let model = fit_factor_model(&r, m, opts.fit).map_err(|e| with_context(e, labels[i]))?;
        if !model.converged {
            warn!("timepoint {}: factor fit did not converge in {} iterations", labels[i], model.iterations);
        }
        let rot = varimax(&model.loadings, opts.varimax)?;
        let model = model.rotated(&rot.rotation);
        let blues = genotype_blues(&secondary[l], design)?;
        fits.push(TimepointFit {
            timepoint: l,
            covariances: pair,
            correlation: r,
            scree,
            m_selected: m_sel,
            model,
            center: column_means(&blues),
        });
    }

    let target = resolve_target(design, timepoints, &opts.target)?;
    let loadings: Vec<DMatrix<f64>> = fits.iter().map(|f| f.model.loadings.clone()).collect();
    let alignment = align_series(&loadings, target)?;

    let mut raw_projections = Vec::with_capacity(fits.len());
    let mut aligned_projections = Vec::with_capacity(fits.len());
    for (i, f) in fits.iter().enumerate() {
        let weight = 1.0 / f.covariances.r_used;
        let p = TimepointProjection::new(&f.model.loadings, &f.model.uniquenesses, &f.covariances, f.center.clone(), weight)
            .map_err(|e| with_context(e, labels[i]))?;
        aligned_projections.push(p.permuted(&alignment.permutations[i]));
        raw_projections.push(p);
    }
    Ok(SeriesFit { fits, m, alignment, raw_projections, aligned_projections })
}
