//! Full-data fit tables: loadings before and after alignment, permutation
//! log, factor/focal correlations, smoothed trajectories and their
//! characteristics.

use log::warn;
use nalgebra::DMatrix;

use crate::covest::estimate_covariances;
use crate::design::{genotype_blues, Stage, TrialDataset};
use crate::error::{Error, Result};
use crate::linalg::pearson;
use crate::procrustes::SignedPermutation;
use crate::splines::{extract_characteristics, fit_trajectories, Penalty};

use super::series::{fit_series, SeriesFit, SeriesOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct LoadingRow {
    pub timepoint: String,
    pub trait_label: String,
    pub factor: usize,
    pub raw: f64,
    pub aligned: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermutationRow {
    pub timepoint: String,
    /// Dimension chosen at this timepoint before the common refit.
    pub m_selected: usize,
    pub permutation: SignedPermutation,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationRow {
    pub timepoint: String,
    pub factor: usize,
    /// Pearson correlation of genotype-mean scores with focal means.
    pub phenotypic: Option<f64>,
    /// Genetic correlation from the two-trait [score, focal] covariance.
    pub genetic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    /// Genotype id, or `population` for the population curve.
    pub genotype: String,
    pub factor: usize,
    pub time: f64,
    pub fitted: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicRow {
    pub genotype: String,
    pub factor: usize,
    pub t0: f64,
    pub t1: f64,
    pub auc: f64,
    pub min: f64,
    pub max: f64,
    pub time_of_max: f64,
    pub mean_slope: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub m: usize,
    pub target: String,
    pub loadings: Vec<LoadingRow>,
    pub permutations: Vec<PermutationRow>,
    pub correlations: Vec<CorrelationRow>,
    pub trajectories: Vec<TrajectoryRow>,
    pub characteristics: Vec<CharacteristicRow>,
}

/// Default characteristic interval: first heading timepoint to the last
/// timepoint (the whole series when no timepoint is at heading).
pub fn default_interval(data: &TrialDataset) -> (f64, f64) {
    let tps = data.design.timepoints();
    let last = tps.last().map_or(0.0, |t| t.day);
    let first = tps.iter().find(|t| t.stage == Stage::Heading).or(tps.first()).map_or(0.0, |t| t.day);
    if first < last {
        (first, last)
    } else {
        (tps.first().map_or(0.0, |t| t.day), last)
    }
}

fn genetic_correlation(a: &[f64], b: &[f64], data: &TrialDataset) -> Option<f64> {
    let m = DMatrix::from_fn(a.len(), 2, |i, j| if j == 0 { a[i] } else { b[i] });
    let pair = estimate_covariances(&m, &data.design).ok()?;
    let s = pair.sigma_g.matrix();
    let d = s[(0, 0)] * s[(1, 1)];
    (d > 0.0).then(|| s[(0, 1)] / d.sqrt())
}

/// Fit every timepoint of the dataset and tabulate the results.
pub fn summarize(data: &TrialDataset, opts: &SeriesOptions) -> Result<(SeriesFit, FitSummary)> {
    let design = &data.design;
    let all: Vec<usize> = (0..design.n_timepoints()).collect();
    let fit = fit_series(&data.secondary, design, &all, opts)?;
    let labels: Vec<String> = design.timepoints().iter().map(|t| t.label.clone()).collect();
    let a = &fit.alignment;

    let mut loadings = Vec::new();
    let mut permutations = Vec::new();
    for (i, f) in fit.fits.iter().enumerate() {
        let label = &labels[f.timepoint];
        for (j, trait_label) in data.trait_labels.iter().enumerate() {
            for k in 0..fit.m {
                loadings.push(LoadingRow {
                    timepoint: label.clone(),
                    trait_label: trait_label.clone(),
                    factor: k + 1,
                    raw: a.raw[i][(j, k)],
                    aligned: a.aligned[i][(j, k)],
                });
            }
        }
        permutations.push(PermutationRow {
            timepoint: label.clone(),
            m_selected: f.m_selected,
            permutation: a.permutations[i].clone(),
            fallback: a.fallback[i],
        });
    }

    let scores = fit.scores(&data.secondary, design, true)?;
    let focal_plots = DMatrix::from_column_slice(data.focal.len(), 1, data.focal.as_slice());
    let focal_means: Vec<f64> = genotype_blues(&focal_plots, design)?.column(0).iter().copied().collect();
    let focal: Vec<f64> = data.focal.iter().copied().collect();
    let mut correlations = Vec::new();
    for (i, f) in fit.fits.iter().enumerate() {
        for k in 0..fit.m {
            let gs: Vec<f64> = scores.genotype_scores[i].column(k).iter().copied().collect();
            let ps: Vec<f64> = scores.plot_scores[i].column(k).iter().copied().collect();
            correlations.push(CorrelationRow {
                timepoint: labels[f.timepoint].clone(),
                factor: k + 1,
                phenotypic: pearson(&gs, &focal_means),
                genetic: genetic_correlation(&ps, &focal, data),
            });
        }
    }

    let days: Vec<f64> = design.timepoints().iter().map(|t| t.day).collect();
    let mut trajectories = Vec::new();
    let mut characteristics = Vec::new();
    match fit_trajectories(&scores, &days, Penalty::Gcv) {
        Ok(tf) => {
            for k in 0..fit.m {
                for &t in &days {
                    trajectories.push(TrajectoryRow {
                        genotype: "population".into(),
                        factor: k + 1,
                        time: t,
                        fitted: tf.population_at(k, t)?,
                    });
                }
            }
            for (c, id) in design.genotype_ids().iter().enumerate() {
                for k in 0..fit.m {
                    for &t in &days {
                        trajectories.push(TrajectoryRow {
                            genotype: id.clone(),
                            factor: k + 1,
                            time: t,
                            fitted: tf.genotype_at(k, c, t)?,
                        });
                    }
                }
            }
            let (t0, t1) = default_interval(data);
            let ch = extract_characteristics(&tf, t0, t1)?;
            for (c, id) in design.genotype_ids().iter().enumerate() {
                for k in 0..fit.m {
                    characteristics.push(CharacteristicRow {
                        genotype: id.clone(),
                        factor: k + 1,
                        t0,
                        t1,
                        auc: ch.auc[(c, k)],
                        min: ch.min[(c, k)],
                        max: ch.max[(c, k)],
                        time_of_max: ch.time_of_max[(c, k)],
                        mean_slope: ch.mean_slope[(c, k)],
                    });
                }
            }
        }
        Err(e @ Error::TooFewTimepoints(_)) => warn!("no trajectories: {e}"),
        Err(e) => return Err(e),
    }

    let summary = FitSummary {
        m: fit.m,
        target: labels[fit.fits[a.target].timepoint].clone(),
        loadings,
        permutations,
        correlations,
        trajectories,
        characteristics,
    };
    Ok((fit, summary))
}
