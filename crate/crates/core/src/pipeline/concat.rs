//! Concatenated baseline: every trait × timepoint column in one factor
//! model, after dropping near-duplicate columns.

use log::debug;
use nalgebra::DMatrix;

use crate::covest::{estimate_covariances, CovariancePair};
use crate::design::{genotype_blues, TrialDesign};
use crate::error::{Error, Result};
use crate::factor::{fit_factor_model, select_dimension, varimax, FactorModel, ScreeProfile};
use crate::linalg::{column_means, select_columns};
use crate::scores::TimepointProjection;
use crate::symmat::cov_to_cor;

use super::series::SeriesOptions;

/// Columns whose |genetic correlation| with an already kept column exceeds
/// this are dropped.
pub const REDUNDANCY_THRESHOLD: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct ConcatModel {
    /// Surviving (timepoint, trait) columns, in stacking order.
    pub columns: Vec<(usize, usize)>,
    pub covariances: CovariancePair,
    pub scree: ScreeProfile,
    pub model: FactorModel,
    pub projection: TimepointProjection,
}

impl ConcatModel {
    /// Stacked surviving columns of any rows.
    pub fn stack(&self, secondary: &[DMatrix<f64>]) -> DMatrix<f64> {
        let n = secondary.first().map_or(0, |y| y.nrows());
        DMatrix::from_fn(n, self.columns.len(), |i, j| {
            let (l, t) = self.columns[j];
            secondary[l][(i, t)]
        })
    }

    pub fn n_factors(&self) -> usize {
        self.model.m
    }
}

fn stack_all(secondary: &[DMatrix<f64>], timepoints: &[usize]) -> (DMatrix<f64>, Vec<(usize, usize)>) {
    let cols: Vec<(usize, usize)> =
        timepoints.iter().flat_map(|&l| (0..secondary[l].ncols()).map(move |t| (l, t))).collect();
    let n = secondary.first().map_or(0, |y| y.nrows());
    let m = DMatrix::from_fn(n, cols.len(), |i, j| secondary[cols[j].0][(i, cols[j].1)]);
    (m, cols)
}

/// Greedy filter on a genetic covariance: keep a column unless its
/// |correlation| with an earlier kept column exceeds the threshold. Columns
/// without genetic variance are dropped as well.
pub fn redundancy_filter(sigma_g: &DMatrix<f64>, threshold: f64) -> Vec<usize> {
    let p = sigma_g.nrows();
    let mut kept: Vec<usize> = Vec::new();
    for j in 0..p {
        let vj = sigma_g[(j, j)];
        if !(vj > 0.0) {
            continue;
        }
        let redundant = kept.iter().any(|&k| {
            let rho = sigma_g[(j, k)] / (vj * sigma_g[(k, k)]).sqrt();
            rho.abs() > threshold
        });
        if !redundant {
            kept.push(j);
        }
    }
    kept
}

pub fn concatenated_baseline(
    secondary: &[DMatrix<f64>],
    design: &TrialDesign,
    timepoints: &[usize],
    opts: &SeriesOptions,
) -> Result<ConcatModel> {
    let (stacked, cols) = stack_all(secondary, timepoints);
    let all = estimate_covariances(&stacked, design)?;
    let keep = redundancy_filter(all.sigma_g.matrix(), REDUNDANCY_THRESHOLD);
    debug!("concatenated baseline: {} of {} columns survive", keep.len(), cols.len());
    if keep.len() < 3 {
        return Err(Error::BaselineDegenerate(keep.len()));
    }
    let columns: Vec<(usize, usize)> = keep.iter().map(|&j| cols[j]).collect();
    let y = select_columns(&stacked, &keep);
    let covariances = estimate_covariances(&y, design)?;
    let r = cov_to_cor(&covariances.sigma_g)?;
    let (m, scree) = select_dimension(&r)?;
    let model = fit_factor_model(&r, m, opts.fit)?;
    let rot = varimax(&model.loadings, opts.varimax)?;
    let model = model.rotated(&rot.rotation);
    let center = column_means(&genotype_blues(&y, design)?);
    let projection =
        TimepointProjection::new(&model.loadings, &model.uniquenesses, &covariances, center, 1.0 / covariances.r_used)?;
    Ok(ConcatModel { columns, covariances, scree, model, projection })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_keeps_lowest_index_of_duplicates() {
        let base = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.1, 0.3, 2.0, 0.2, 0.1, 0.2, 1.5]);
        // Columns 3..6 duplicate 0..3 (scaled), so the genetic correlation is 1.
        let scale = [1.0, 2.0, 0.5, 3.0, 1.0, 4.0];
        let idx = [0, 1, 2, 0, 1, 2];
        let s = DMatrix::from_fn(6, 6, |i, j| base[(idx[i], idx[j])] * scale[i] * scale[j]);
        assert_eq!(redundancy_filter(&s, REDUNDANCY_THRESHOLD), vec![0, 1, 2]);
        let mut z = s.clone();
        z[(0, 0)] = 0.0;
        assert_eq!(redundancy_filter(&z, REDUNDANCY_THRESHOLD), vec![1, 2, 3]);
    }
}
