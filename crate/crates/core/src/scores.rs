//! Thomson regression factor scores.
//!
//! Loadings and uniquenesses live on the genetic correlation scale, so data
//! and Σ_E are first divided by the genetic standard deviations. The
//! projection M = A⁻¹Λ(I + ΛᵀA⁻¹Λ)⁻¹ with A = Ψ + wΣ_E is then applied to
//! centered, standardized rows.

use nalgebra::{DMatrix, DVector};

use crate::covest::CovariancePair;
use crate::design::{genotype_blues, TrialDesign};
use crate::error::{Error, Result};
use crate::linalg::cholesky_ridged;
use crate::procrustes::SignedPermutation;

/// M = A⁻¹Λ(I + ΛᵀA⁻¹Λ)⁻¹ with A = Ψ + w·Σ_E (all on one scale).
pub fn thomson_projection(
    loadings: &DMatrix<f64>,
    psi: &DVector<f64>,
    sigma_e: &DMatrix<f64>,
    weight: f64,
) -> Result<DMatrix<f64>> {
    let (s, m) = loadings.shape();
    if psi.len() != s || sigma_e.shape() != (s, s) {
        return Err(Error::shape(format!(
            "thomson: loadings {s}x{m}, psi {}, sigma_e {:?}",
            psi.len(),
            sigma_e.shape()
        )));
    }
    let a = DMatrix::from_diagonal(psi) + sigma_e * weight;
    if a.diagonal().iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Conditioning("Ψ + wΣ_E has a non-positive diagonal; raise the uniqueness floor".into()));
    }
    let chol = cholesky_ridged(&a, "Ψ + wΣ_E").map_err(|_| {
        Error::Conditioning("Ψ + wΣ_E is singular; raise the uniqueness floor".into())
    })?;
    let ainv_l = chol.solve(loadings);
    let inner = DMatrix::identity(m, m) + loadings.transpose() * &ainv_l;
    let inner_chol = cholesky_ridged(&inner, "I + ΛᵀA⁻¹Λ")?;
    // M = A⁻¹Λ · inner⁻¹, computed as (inner⁻¹ (A⁻¹Λ)ᵀ)ᵀ.
    Ok(inner_chol.solve(&ainv_l.transpose()).transpose())
}

/// data · M for rows already centered and on the scale of the loadings.
pub fn thomson_scores(
    data: &DMatrix<f64>,
    loadings: &DMatrix<f64>,
    psi: &DVector<f64>,
    sigma_e: &DMatrix<f64>,
    weight: f64,
) -> Result<DMatrix<f64>> {
    if data.ncols() != loadings.nrows() {
        return Err(Error::shape(format!("{} data columns for {} loadings rows", data.ncols(), loadings.nrows())));
    }
    Ok(data * thomson_projection(loadings, psi, sigma_e, weight)?)
}

/// Everything needed to score new rows at one timepoint: centering, genetic
/// scaling and the projection.
#[derive(Debug, Clone, PartialEq)]
pub struct TimepointProjection {
    pub center: DVector<f64>,
    /// Genetic standard deviations √diag(Σ_G).
    pub scale: DVector<f64>,
    /// s × m.
    pub projection: DMatrix<f64>,
}

impl TimepointProjection {
    /// `loadings`/`psi` on the correlation scale of `pair.sigma_g`;
    /// `center` is the training mean per trait.
    pub fn new(
        loadings: &DMatrix<f64>,
        psi: &DVector<f64>,
        pair: &CovariancePair,
        center: DVector<f64>,
        weight: f64,
    ) -> Result<Self> {
        let s = pair.dim();
        let mut scale = DVector::zeros(s);
        for j in 0..s {
            let v = pair.sigma_g.get(j, j);
            if !(v > 0.0) {
                return Err(Error::DegenerateVariance { index: j, value: v });
            }
            scale[j] = v.sqrt();
        }
        let se = pair.sigma_e.matrix();
        let se_std = DMatrix::from_fn(s, s, |i, j| se[(i, j)] / (scale[i] * scale[j]));
        let projection = thomson_projection(loadings, psi, &se_std, weight)?;
        Ok(Self { center, scale, projection })
    }

    pub fn n_factors(&self) -> usize {
        self.projection.ncols()
    }

    /// Scores of raw (uncentered) rows.
    pub fn apply(&self, rows: &DMatrix<f64>) -> DMatrix<f64> {
        let std = DMatrix::from_fn(rows.nrows(), rows.ncols(), |i, j| (rows[(i, j)] - self.center[j]) / self.scale[j]);
        std * &self.projection
    }

    /// Projection for loadings Λ·P, which is exactly M·P.
    pub fn permuted(&self, p: &SignedPermutation) -> Self {
        Self { projection: p.apply(&self.projection), ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    /// g × m per timepoint.
    pub genotype_scores: Vec<DMatrix<f64>>,
    /// n × m per timepoint.
    pub plot_scores: Vec<DMatrix<f64>>,
    pub aligned: bool,
    pub timepoint_labels: Vec<String>,
}

impl ScoreSeries {
    /// Genotype scores of all timepoints side by side (g × Σm), with
    /// (timepoint, factor) labels per column.
    pub fn stacked_genotype_scores(&self) -> (DMatrix<f64>, Vec<(usize, usize)>) {
        stack(&self.genotype_scores)
    }

    pub fn stacked_plot_scores(&self) -> (DMatrix<f64>, Vec<(usize, usize)>) {
        stack(&self.plot_scores)
    }
}

fn stack(blocks: &[DMatrix<f64>]) -> (DMatrix<f64>, Vec<(usize, usize)>) {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let labels: Vec<(usize, usize)> =
        blocks.iter().enumerate().flat_map(|(l, b)| (0..b.ncols()).map(move |k| (l, k))).collect();
    let mut out = DMatrix::zeros(rows, labels.len());
    let mut col = 0;
    for b in blocks {
        out.view_mut((0, col), (rows, b.ncols())).copy_from(b);
        col += b.ncols();
    }
    (out, labels)
}

/// Genotype scores from BLUEs and plot scores from plot rows, both through
/// the same per-timepoint projection.
pub fn score_series(
    secondary: &[DMatrix<f64>],
    design: &TrialDesign,
    projections: &[TimepointProjection],
    aligned: bool,
) -> Result<ScoreSeries> {
    if secondary.len() != projections.len() || secondary.len() != design.n_timepoints() {
        return Err(Error::shape(format!(
            "{} data slices, {} projections, {} timepoints",
            secondary.len(),
            projections.len(),
            design.n_timepoints()
        )));
    }
    let mut genotype_scores = Vec::with_capacity(secondary.len());
    let mut plot_scores = Vec::with_capacity(secondary.len());
    for (l, (y, proj)) in secondary.iter().zip(projections).enumerate() {
        let label = &design.timepoints()[l].label;
        let blues = genotype_blues(y, design).map_err(|e| context(e, label))?;
        genotype_scores.push(proj.apply(&blues));
        plot_scores.push(proj.apply(y));
    }
    Ok(ScoreSeries {
        genotype_scores,
        plot_scores,
        aligned,
        timepoint_labels: design.timepoints().iter().map(|t| t.label.clone()).collect(),
    })
}

fn context(e: Error, label: &str) -> Error {
    match e {
        Error::Shape(m) => Error::Shape(format!("timepoint {label}: {m}")),
        Error::Conditioning(m) => Error::Conditioning(format!("timepoint {label}: {m}")),
        other => other,
    }
}
