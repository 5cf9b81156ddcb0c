//! Moment estimators of genetic and residual covariance.
//!
//! Plot residuals around genotype means give Σ_E with n − g degrees of
//! freedom. The covariance of genotype means estimates Σ_P = Σ_G + r⁻¹Σ_E,
//! so Σ_G is recovered as Σ_P − r⁻¹Σ_E and repaired to be positive
//! semidefinite.

use log::warn;
use nalgebra::DMatrix;

use crate::design::{genotype_blues, plot_residuals, TrialDesign};
use crate::error::{Error, Result};
use crate::linalg::{center_rows, column_means, cross_product};
use crate::symmat::{nearest_psd, MatrixKind, SymMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct CovariancePair {
    pub sigma_g: SymMatrix,
    pub sigma_e: SymMatrix,
    pub sigma_p: SymMatrix,
    /// Replicate count used in the r⁻¹Σ_E correction.
    pub r_used: f64,
    /// Whether Σ_P − r⁻¹Σ_E needed eigenvalue clipping.
    pub repaired: bool,
}

impl CovariancePair {
    pub fn dim(&self) -> usize {
        self.sigma_g.dim()
    }
}

/// Σ_E = RᵀR / (n − g).
pub fn estimate_residual_cov(residuals: &DMatrix<f64>, design: &TrialDesign) -> Result<SymMatrix> {
    let (n, g) = (design.n_plots(), design.n_genotypes());
    if residuals.nrows() != n {
        return Err(Error::shape(format!("{} residual rows for {n} plots", residuals.nrows())));
    }
    if n <= g {
        return Err(Error::InsufficientReplication { n, g });
    }
    SymMatrix::symmetrized(cross_product(residuals, (n - g) as f64), MatrixKind::Covariance)
}

/// Σ_P from BLUE rows (denominator g − 1) and Σ_G = nearest_psd(Σ_P − r⁻¹Σ_E).
pub fn estimate_genetic_cov(blues: &DMatrix<f64>, sigma_e: &SymMatrix, r: f64) -> Result<CovariancePair> {
    let (g, s) = (blues.nrows(), blues.ncols());
    if g < 3 {
        return Err(Error::TooFewGenotypes(g));
    }
    if sigma_e.dim() != s {
        return Err(Error::shape(format!("Σ_E is {0}x{0} but BLUEs have {s} traits", sigma_e.dim())));
    }
    if g < s + 1 {
        warn!("only {g} genotypes for {s} traits: Σ_P will be singular");
    }
    let centered = center_rows(blues, &column_means(blues));
    let sigma_p = SymMatrix::symmetrized(cross_product(&centered, (g - 1) as f64), MatrixKind::Covariance)?;
    // Negative diagonal entries are legitimate here; nearest_psd fixes them.
    let raw = SymMatrix::new_unchecked(
        crate::linalg::symmetrize(&(sigma_p.matrix() - sigma_e.matrix() / r)),
        MatrixKind::Covariance,
    );
    let repaired_g = nearest_psd(&raw, None)?;
    let repaired = repaired_g.matrix() != raw.matrix();
    Ok(CovariancePair { sigma_g: repaired_g, sigma_e: sigma_e.clone(), sigma_p, r_used: r, repaired })
}

/// All covariance pieces for one plot-level data slice.
pub fn estimate_covariances(y: &DMatrix<f64>, design: &TrialDesign) -> Result<CovariancePair> {
    let blues = genotype_blues(y, design)?;
    let residuals = plot_residuals(y, &blues, design)?;
    let sigma_e = estimate_residual_cov(&residuals, design)?;
    estimate_genetic_cov(&blues, &sigma_e, design.effective_replicates())
}

/// Broad-sense heritability on the genotype-mean scale, σ_G / (σ_G + σ_E/r).
pub fn heritability(sigma_g: f64, sigma_e: f64, r: f64) -> Result<f64> {
    if sigma_g < 0.0 || sigma_e < 0.0 || !sigma_g.is_finite() || !sigma_e.is_finite() {
        return Err(Error::NonFinite(format!("variances ({sigma_g}, {sigma_e})")));
    }
    let denom = sigma_g + sigma_e / r;
    if denom <= 0.0 {
        return Err(Error::UndefinedHeritability);
    }
    Ok((sigma_g / denom).clamp(0.0, 1.0))
}

/// Per-trait heritabilities of one covariance pair.
pub fn trait_heritabilities(pair: &CovariancePair) -> Vec<Option<f64>> {
    (0..pair.dim())
        .map(|j| heritability(pair.sigma_g.get(j, j), pair.sigma_e.get(j, j), pair.r_used).ok())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::test_timepoints;
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Independent-genotype data with known Σ_G and Σ_E (given as Cholesky
    /// factors).
    fn sample(
        g: usize,
        r: usize,
        lg: &DMatrix<f64>,
        le: &DMatrix<f64>,
        rng: &mut ChaCha8Rng,
    ) -> (DMatrix<f64>, TrialDesign) {
        let s = lg.nrows();
        let design = TrialDesign::balanced(g, r, test_timepoints(2)).unwrap();
        let mut y = DMatrix::zeros(g * r, s);
        for c in 0..g {
            let z = DVector::from_fn(s, |_, _| StandardNormal.sample(rng));
            let gc = lg * z;
            for q in 0..r {
                let e = le * DVector::from_fn(s, |_, _| StandardNormal.sample(rng));
                y.set_row(c * r + q, &(&gc + e).transpose());
            }
        }
        (y, design)
    }

    #[test]
    fn zero_residuals_give_zero_matrix() {
        let d = TrialDesign::balanced(3, 2, test_timepoints(2)).unwrap();
        let e = estimate_residual_cov(&DMatrix::zeros(6, 2), &d).unwrap();
        assert_eq!(e.matrix(), &DMatrix::zeros(2, 2));
    }

    #[test]
    fn residual_variance_arithmetic() {
        let d = TrialDesign::balanced(2, 3, test_timepoints(2)).unwrap();
        let r = DMatrix::from_column_slice(6, 1, &[-1.0, 0.0, 1.0, -1.0, 0.0, 1.0]);
        let e = estimate_residual_cov(&r, &d).unwrap();
        assert!((e.get(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn no_replication_is_error() {
        let d = TrialDesign::balanced(3, 1, test_timepoints(2)).unwrap();
        assert!(matches!(
            estimate_residual_cov(&DMatrix::zeros(3, 2), &d),
            Err(Error::InsufficientReplication { .. })
        ));
    }

    #[test]
    fn zero_sigma_e_gives_sigma_p() {
        let blues = DMatrix::from_row_slice(4, 2, &[1.0, 0.5, -0.3, 0.2, 0.7, -1.0, 0.1, 0.4]);
        let pair = estimate_genetic_cov(&blues, &SymMatrix::new(DMatrix::zeros(2, 2), MatrixKind::Covariance).unwrap(), 3.0)
            .unwrap();
        assert_eq!(pair.sigma_g.matrix(), pair.sigma_p.matrix());
    }

    #[test]
    fn too_few_genotypes() {
        let e = SymMatrix::identity(2, MatrixKind::Covariance);
        assert!(matches!(estimate_genetic_cov(&DMatrix::zeros(2, 2), &e, 1.0), Err(Error::TooFewGenotypes(2))));
    }

    #[test]
    fn residual_cov_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let se = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 0.5]);
        let le = se.clone().cholesky().unwrap().l();
        let lg = DMatrix::identity(2, 2);
        let (y, d) = sample(1000, 3, &lg, &le, &mut rng);
        let pair = estimate_covariances(&y, &d).unwrap();
        // SE of a covariance entry with 2000 df: sqrt((σ_ij² + σ_ii σ_jj)/df).
        let df = 2000.0;
        for i in 0..2 {
            for j in 0..2 {
                let sem = ((se[(i, j)].powi(2) + se[(i, i)] * se[(j, j)]) / df).sqrt();
                assert!((pair.sigma_e.get(i, j) - se[(i, j)]).abs() < 3.0 * sem);
            }
        }
    }

    #[test]
    fn genetic_identity_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let id = DMatrix::identity(3, 3);
        let (y, d) = sample(1000, 3, &id, &id, &mut rng);
        let pair = estimate_covariances(&y, &d).unwrap();
        // Diagonal SE is about sqrt(2/999)·(1 + 1/3) ≈ 0.06; allow four of them.
        assert!((pair.sigma_g.matrix() - &id).amax() < 0.25);
        assert_eq!(pair.r_used, 3.0);
    }

    #[test]
    fn indefinite_difference_is_repaired_to_spectral_projection() {
        // Σ_P nearly singular, Σ_E/r pushes one eigenvalue below zero.
        let blues = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, -1.0, -1.0, 0.5, 0.5, -0.5, -0.5001]);
        let e = SymMatrix::new(DMatrix::identity(2, 2) * 0.003, MatrixKind::Covariance).unwrap();
        let pair = estimate_genetic_cov(&blues, &e, 3.0).unwrap();
        assert!(pair.repaired);
        let raw = pair.sigma_p.matrix() - e.matrix() / 3.0;
        let (vals, vecs) = crate::linalg::sym_eigen_desc(&raw);
        assert!(vals[1] < 0.0);
        let floor = 1e-8 * vals[0];
        let oracle = &vecs * DMatrix::from_diagonal(&vals.map(|v| v.max(floor))) * vecs.transpose();
        assert!((pair.sigma_g.matrix() - oracle).norm() < 1e-6);
        assert!(pair.sigma_g.eigenvalues()[1] > 0.0);
    }

    #[test]
    fn heritability_values() {
        assert_eq!(heritability(1.0, 1.0, 1.0).unwrap(), 0.5);
        assert_eq!(heritability(0.0, 2.0, 3.0).unwrap(), 0.0);
        assert!((heritability(1.5, 3.0, 3.0).unwrap() - 0.6).abs() < 1e-15);
        assert!(matches!(heritability(0.0, 0.0, 3.0), Err(Error::UndefinedHeritability)));
    }

    #[test]
    fn scale_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lg = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.5, 0.8, 0.0, 0.2, 0.1, 0.9]);
        let (y, d) = sample(80, 3, &lg, &DMatrix::identity(3, 3), &mut rng);
        let a = 2.5;
        let mut ys = y.clone();
        ys.column_mut(1).scale_mut(a);
        let p0 = estimate_covariances(&y, &d).unwrap();
        let p1 = estimate_covariances(&ys, &d).unwrap();
        let scale = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, a, 1.0]));
        for (m0, m1) in [
            (p0.sigma_e.matrix(), p1.sigma_e.matrix()),
            (p0.sigma_p.matrix(), p1.sigma_p.matrix()),
        ] {
            assert!((&scale * m0 * &scale - m1).amax() < 1e-8);
        }
        let raw0 = p0.sigma_p.matrix() - p0.sigma_e.matrix() / 3.0;
        let raw1 = p1.sigma_p.matrix() - p1.sigma_e.matrix() / 3.0;
        assert!((&scale * raw0 * &scale - raw1).amax() < 1e-8);
    }

    #[test]
    fn moment_estimator_unbiased_in_simulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let sg = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 2.0]);
        let se = DMatrix::from_row_slice(2, 2, &[1.5, -0.3, -0.3, 1.0]);
        let (lg, le) = (sg.clone().cholesky().unwrap().l(), se.clone().cholesky().unwrap().l());
        let reps = 200;
        let mut draws = Vec::with_capacity(reps);
        for _ in 0..reps {
            let (y, d) = sample(60, 3, &lg, &le, &mut rng);
            let p = estimate_covariances(&y, &d).unwrap();
            draws.push(p.sigma_p.matrix() - p.sigma_e.matrix() / 3.0);
        }
        for i in 0..2 {
            for j in 0..=i {
                let vals: Vec<f64> = draws.iter().map(|m| m[(i, j)]).collect();
                let mean = vals.iter().sum::<f64>() / reps as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
                let mcse = (var / reps as f64).sqrt();
                assert!((mean - sg[(i, j)]).abs() < 2.0 * mcse, "entry ({i},{j}): {mean} vs {}", sg[(i, j)]);
            }
        }
    }
}
