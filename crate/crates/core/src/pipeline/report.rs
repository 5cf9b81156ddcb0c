//! CSV reports of a cross-validation run and their parser.
//!
//! Floats are written with `Display`, which is the shortest representation
//! that parses back to the same bits, so `parse_reports(emit_reports(r)) == r`.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::config::{plan_from_str, plan_to_string};
use crate::covest::trait_heritabilities;
use crate::design::TrialDataset;
use crate::error::{Error, Result};
use crate::io::{read_table, write_table};

use super::series::SeriesFit;
use super::summary::{CharacteristicRow, CorrelationRow, FitSummary, LoadingRow, PermutationRow, TrajectoryRow};
use super::{CvReport, PaRecord, SelectionRecord, StageRuntime};

pub const PLAN_FILE: &str = "plan.txt";
pub const FIT_FILE: &str = "fit.txt";
pub const PA_FILE: &str = "pa_boxplot.csv";
pub const SELECTION_FILE: &str = "selection_incidence.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const RUNTIME_FILE: &str = "runtime.csv";
pub const LOADINGS_FILE: &str = "loadings_series.csv";
pub const PERMUTATIONS_FILE: &str = "permutations.csv";
pub const CORRELATIONS_FILE: &str = "factor_correlations.csv";
pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const CHARACTERISTICS_FILE: &str = "characteristics.csv";

/// Every file `emit_reports` writes, `fit.txt` only when the report carries
/// a fit summary.
pub const REPORT_FILES: [&str; 10] = [
    PLAN_FILE,
    PA_FILE,
    SELECTION_FILE,
    SUMMARY_FILE,
    RUNTIME_FILE,
    LOADINGS_FILE,
    PERMUTATIONS_FILE,
    CORRELATIONS_FILE,
    TRAJECTORIES_FILE,
    CHARACTERISTICS_FILE,
];

const PA_HEADER: [&str; 6] = ["model", "scenario", "stage", "replicate", "pa", "note"];
const SELECTION_HEADER: [&str; 6] = ["model", "stage", "replicate", "timepoint", "factor", "selected"];
const SUMMARY_HEADER: [&str; 11] = ["model", "scenario", "stage", "n", "n_missing", "mean", "min", "q1", "median", "q3", "max"];
const RUNTIME_HEADER: [&str; 2] = ["stage", "seconds"];
const LOADINGS_HEADER: [&str; 5] = ["timepoint", "trait", "factor", "raw", "aligned"];
const PERMUTATIONS_HEADER: [&str; 4] = ["timepoint", "m_selected", "permutation", "fallback"];
const CORRELATIONS_HEADER: [&str; 4] = ["timepoint", "factor", "phenotypic", "genetic"];
const TRAJECTORIES_HEADER: [&str; 4] = ["genotype", "factor", "time", "fitted"];
const CHARACTERISTICS_HEADER: [&str; 9] = ["genotype", "factor", "t0", "t1", "auc", "min", "max", "time_of_max", "mean_slope"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// One row per (model, scenario, stage) cell present in the report, in plan
/// order.
pub fn summary_rows(report: &CvReport) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for &model in &report.plan.models {
        for &scenario in &report.plan.scenarios {
            for &stage in &report.plan.stages {
                let cell: Vec<&PaRecord> =
                    report.pa.iter().filter(|r| r.model == model && r.scenario == scenario && r.stage == stage).collect();
                if cell.is_empty() {
                    continue;
                }
                let mut v: Vec<f64> = cell.iter().filter_map(|r| r.pa).collect();
                v.sort_by(f64::total_cmp);
                let mut row = vec![
                    model.to_string(),
                    scenario.to_string(),
                    stage.to_string(),
                    v.len().to_string(),
                    (cell.len() - v.len()).to_string(),
                ];
                if v.is_empty() {
                    row.extend(std::iter::repeat_n(String::new(), 6));
                } else {
                    row.push((v.iter().sum::<f64>() / v.len() as f64).to_string());
                    row.extend([0.0, 0.25, 0.5, 0.75, 1.0].iter().map(|&p| quantile(&v, p).to_string()));
                }
                rows.push(row);
            }
        }
    }
    rows
}

pub fn emit_reports(report: &CvReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join(PLAN_FILE), plan_to_string(&report.plan))?;
    write_table(
        &out_dir.join(PA_FILE),
        &PA_HEADER,
        report.pa.iter().map(|r| {
            vec![
                r.model.to_string(),
                r.scenario.to_string(),
                r.stage.to_string(),
                r.replicate.to_string(),
                opt(r.pa),
                r.note.clone(),
            ]
        }),
    )?;
    write_table(
        &out_dir.join(SELECTION_FILE),
        &SELECTION_HEADER,
        report.selection.iter().map(|r| {
            vec![
                r.model.to_string(),
                r.stage.to_string(),
                r.replicate.to_string(),
                r.timepoint.clone(),
                (r.factor + 1).to_string(),
                u8::from(r.selected).to_string(),
            ]
        }),
    )?;
    write_table(&out_dir.join(SUMMARY_FILE), &SUMMARY_HEADER, summary_rows(report))?;
    write_table(
        &out_dir.join(RUNTIME_FILE),
        &RUNTIME_HEADER,
        report.runtime.iter().map(|r| vec![r.stage.to_string(), r.seconds.to_string()]),
    )?;
    emit_summary(report.summary.as_ref(), out_dir)
}

fn emit_summary(summary: Option<&FitSummary>, out_dir: &Path) -> Result<()> {
    let fit_path = out_dir.join(FIT_FILE);
    match summary {
        Some(s) => fs::write(&fit_path, format!("m = {}\ntarget = {}\n", s.m, s.target))?,
        None if fit_path.exists() => fs::remove_file(&fit_path)?,
        None => {}
    }
    let empty = FitSummary {
        m: 0,
        target: String::new(),
        loadings: Vec::new(),
        permutations: Vec::new(),
        correlations: Vec::new(),
        trajectories: Vec::new(),
        characteristics: Vec::new(),
    };
    let s = summary.unwrap_or(&empty);
    write_table(
        &out_dir.join(LOADINGS_FILE),
        &LOADINGS_HEADER,
        s.loadings.iter().map(|r| {
            vec![r.timepoint.clone(), r.trait_label.clone(), r.factor.to_string(), r.raw.to_string(), r.aligned.to_string()]
        }),
    )?;
    write_table(
        &out_dir.join(PERMUTATIONS_FILE),
        &PERMUTATIONS_HEADER,
        s.permutations.iter().map(|r| {
            vec![r.timepoint.clone(), r.m_selected.to_string(), r.permutation.to_string(), u8::from(r.fallback).to_string()]
        }),
    )?;
    write_table(
        &out_dir.join(CORRELATIONS_FILE),
        &CORRELATIONS_HEADER,
        s.correlations
            .iter()
            .map(|r| vec![r.timepoint.clone(), r.factor.to_string(), opt(r.phenotypic), opt(r.genetic)]),
    )?;
    write_table(
        &out_dir.join(TRAJECTORIES_FILE),
        &TRAJECTORIES_HEADER,
        s.trajectories
            .iter()
            .map(|r| vec![r.genotype.clone(), r.factor.to_string(), r.time.to_string(), r.fitted.to_string()]),
    )?;
    write_table(
        &out_dir.join(CHARACTERISTICS_FILE),
        &CHARACTERISTICS_HEADER,
        s.characteristics.iter().map(|r| {
            vec![
                r.genotype.clone(),
                r.factor.to_string(),
                r.t0.to_string(),
                r.t1.to_string(),
                r.auc.to_string(),
                r.min.to_string(),
                r.max.to_string(),
                r.time_of_max.to_string(),
                r.mean_slope.to_string(),
            ]
        }),
    )
}

/// Per-timepoint covariance tables (long format, upper triangle) and
/// per-trait heritabilities of a series fit.
pub fn emit_covariances(fit: &SeriesFit, data: &TrialDataset, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let labels = &data.trait_labels;
    let mut h2_rows = Vec::new();
    for f in &fit.fits {
        let tp = &data.design.timepoints()[f.timepoint].label;
        let c = &f.covariances;
        let mut rows = Vec::new();
        for (name, m) in [("G", &c.sigma_g), ("E", &c.sigma_e), ("P", &c.sigma_p)] {
            for i in 0..m.dim() {
                for j in i..m.dim() {
                    rows.push(vec![name.to_string(), labels[i].clone(), labels[j].clone(), m.get(i, j).to_string()]);
                }
            }
        }
        write_table(&out_dir.join(format!("covariances_{tp}.csv")), &["component", "trait_i", "trait_j", "value"], rows)?;
        for (j, h) in trait_heritabilities(c).into_iter().enumerate() {
            h2_rows.push(vec![
                tp.clone(),
                labels[j].clone(),
                c.sigma_g.get(j, j).to_string(),
                c.sigma_e.get(j, j).to_string(),
                opt(h),
            ]);
        }
    }
    write_table(&out_dir.join("heritability.csv"), &["timepoint", "trait", "sigma_g", "sigma_e", "h2"], h2_rows)
}

struct Rows {
    path: String,
    rows: Vec<Vec<String>>,
}

impl Rows {
    fn read(dir: &Path, name: &str, header: &[&str]) -> Result<Self> {
        let path = dir.join(name);
        let (h, rows) = read_table(&path)?;
        if h.len() != header.len() || h.iter().zip(header).any(|(a, b)| a != b) {
            return Err(Error::Parse(format!("{}: expected header {}", path.display(), header.join(","))));
        }
        Ok(Self { path: path.display().to_string(), rows })
    }

    fn field<T: FromStr>(&self, row: usize, col: usize) -> Result<T> {
        let s = &self.rows[row][col];
        s.parse().map_err(|_| Error::Parse(format!("{} row {}: cannot parse {s:?}", self.path, row + 2)))
    }

    fn opt_field(&self, row: usize, col: usize) -> Result<Option<f64>> {
        if self.rows[row][col].is_empty() {
            Ok(None)
        } else {
            self.field(row, col).map(Some)
        }
    }

    fn flag(&self, row: usize, col: usize) -> Result<bool> {
        match self.rows[row][col].as_str() {
            "0" => Ok(false),
            "1" => Ok(true),
            s => Err(Error::Parse(format!("{} row {}: expected 0 or 1, found {s:?}", self.path, row + 2))),
        }
    }

    fn text(&self, row: usize, col: usize) -> String {
        self.rows[row][col].clone()
    }

    fn map<T>(&self, f: impl Fn(usize) -> Result<T>) -> Result<Vec<T>> {
        (0..self.rows.len()).map(f).collect()
    }
}

/// Re-read a directory written by [`emit_reports`].
pub fn parse_reports(dir: &Path) -> Result<CvReport> {
    let plan = plan_from_str(&fs::read_to_string(dir.join(PLAN_FILE))?)?;
    let t = Rows::read(dir, PA_FILE, &PA_HEADER)?;
    let pa = t.map(|i| {
        Ok(PaRecord {
            model: t.field(i, 0)?,
            scenario: t.field(i, 1)?,
            stage: t.field(i, 2)?,
            replicate: t.field(i, 3)?,
            pa: t.opt_field(i, 4)?,
            note: t.text(i, 5),
        })
    })?;
    let t = Rows::read(dir, SELECTION_FILE, &SELECTION_HEADER)?;
    let selection = t.map(|i| {
        let factor: usize = t.field(i, 4)?;
        Ok(SelectionRecord {
            model: t.field(i, 0)?,
            stage: t.field(i, 1)?,
            replicate: t.field(i, 2)?,
            timepoint: t.text(i, 3),
            factor: factor.checked_sub(1).ok_or_else(|| Error::Parse("factors are numbered from 1".into()))?,
            selected: t.flag(i, 5)?,
        })
    })?;
    let t = Rows::read(dir, RUNTIME_FILE, &RUNTIME_HEADER)?;
    let runtime = t.map(|i| Ok(StageRuntime { stage: t.field(i, 0)?, seconds: t.field(i, 1)? }))?;
    let summary = if dir.join(FIT_FILE).exists() { Some(parse_summary(dir)?) } else { None };
    Ok(CvReport { plan, pa, selection, summary, runtime })
}

fn parse_summary(dir: &Path) -> Result<FitSummary> {
    let kv = crate::config::parse_key_values(&fs::read_to_string(dir.join(FIT_FILE))?)?;
    let m = kv
        .get("m")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Parse(format!("{FIT_FILE}: missing or invalid m")))?;
    let target = kv.get("target").cloned().ok_or_else(|| Error::Parse(format!("{FIT_FILE}: missing target")))?;
    let t = Rows::read(dir, LOADINGS_FILE, &LOADINGS_HEADER)?;
    let loadings = t.map(|i| {
        Ok(LoadingRow {
            timepoint: t.text(i, 0),
            trait_label: t.text(i, 1),
            factor: t.field(i, 2)?,
            raw: t.field(i, 3)?,
            aligned: t.field(i, 4)?,
        })
    })?;
    let t = Rows::read(dir, PERMUTATIONS_FILE, &PERMUTATIONS_HEADER)?;
    let permutations = t.map(|i| {
        Ok(PermutationRow {
            timepoint: t.text(i, 0),
            m_selected: t.field(i, 1)?,
            permutation: t.field(i, 2)?,
            fallback: t.flag(i, 3)?,
        })
    })?;
    let t = Rows::read(dir, CORRELATIONS_FILE, &CORRELATIONS_HEADER)?;
    let correlations = t.map(|i| {
        Ok(CorrelationRow {
            timepoint: t.text(i, 0),
            factor: t.field(i, 1)?,
            phenotypic: t.opt_field(i, 2)?,
            genetic: t.opt_field(i, 3)?,
        })
    })?;
    let t = Rows::read(dir, TRAJECTORIES_FILE, &TRAJECTORIES_HEADER)?;
    let trajectories = t.map(|i| {
        Ok(TrajectoryRow { genotype: t.text(i, 0), factor: t.field(i, 1)?, time: t.field(i, 2)?, fitted: t.field(i, 3)? })
    })?;
    let t = Rows::read(dir, CHARACTERISTICS_FILE, &CHARACTERISTICS_HEADER)?;
    let characteristics = t.map(|i| {
        Ok(CharacteristicRow {
            genotype: t.text(i, 0),
            factor: t.field(i, 1)?,
            t0: t.field(i, 2)?,
            t1: t.field(i, 3)?,
            auc: t.field(i, 4)?,
            min: t.field(i, 5)?,
            max: t.field(i, 6)?,
            time_of_max: t.field(i, 7)?,
            mean_slope: t.field(i, 8)?,
        })
    })?;
    Ok(FitSummary { m, target, loadings, permutations, correlations, trajectories, characteristics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gblup::Scenario;
    use crate::pipeline::{CvPlan, Model, StageSubset};

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 1.0), 4.0);
    }

    #[test]
    fn empty_report_writes_headers_only() {
        let dir = tempfile::tempdir().unwrap();
        let report = CvReport::empty(CvPlan::default());
        emit_reports(&report, dir.path()).unwrap();
        for f in REPORT_FILES.iter().filter(|f| f.ends_with(".csv")) {
            let text = fs::read_to_string(dir.path().join(f)).unwrap();
            assert_eq!(text.lines().count(), 1, "{f}");
        }
        assert!(!dir.path().join(FIT_FILE).exists());
        assert_eq!(parse_reports(dir.path()).unwrap(), report);
    }

    #[test]
    fn records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut report = CvReport::empty(CvPlan { replicates: 2, ..CvPlan::default() });
        report.pa.push(PaRecord {
            model: Model::Procrustes,
            scenario: Scenario::Cv2,
            stage: StageSubset::VegetativeHeading,
            replicate: 1,
            pa: Some(0.1 + 0.2),
            note: String::new(),
        });
        report.pa.push(PaRecord {
            model: Model::Concatenated,
            scenario: Scenario::Cv1,
            stage: StageSubset::All,
            replicate: 0,
            pa: None,
            note: "baseline degenerate: only 2 columns, survive".into(),
        });
        report.selection.push(SelectionRecord {
            model: Model::Varimax,
            stage: StageSubset::Vegetative,
            replicate: 0,
            timepoint: "T02".into(),
            factor: 1,
            selected: true,
        });
        report.runtime.push(StageRuntime { stage: StageSubset::All, seconds: 1.5 });
        emit_reports(&report, dir.path()).unwrap();
        let back = parse_reports(dir.path()).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.runtime, report.runtime);
        assert_eq!(back.pa[0].pa.unwrap().to_bits(), (0.1f64 + 0.2).to_bits());
    }
}
