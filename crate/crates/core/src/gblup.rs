//! Univariate and multivariate genomic BLUP of the focal trait.
//!
//! Genotype means are sufficient for the genetic values under a resolved
//! design, so every solve works on the g_o × t matrix of training means Ȳ
//! with Var(vec Ȳ) = Σ_G ⊗ K_o + Σ_E ⊗ D, D = diag(1/r_c).
//!
//! The covariance is diagonalized on both sides. With Σ_E = LLᵀ,
//! L⁻¹Σ_G L⁻ᵀ = V diag(d) Vᵀ and W = L⁻ᵀV, the trait transform gives
//! WᵀΣ_G W = diag(d) and WᵀΣ_E W = I. With D^(-1/2) K_o D^(-1/2) = U diag(λ) Uᵀ
//! and Q = Uᵀ D^(-1/2), the genotype transform gives QK_oQᵀ = diag(λ) and
//! QDQᵀ = I. The entries of QȲW are then independent with variance
//! d_k λ_i + 1, and every BLUP quantity is an entrywise shrinkage.

use nalgebra::{DMatrix, DVector};

use crate::covest::{estimate_covariances, CovariancePair};
use crate::design::{genotype_blues, TrialDesign};
use crate::error::{Error, Result};
use crate::kinship::KinshipPartition;
use crate::linalg::{cholesky_ridged, sym_eigen_desc};
use crate::symmat::SymMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scenario {
    Uni,
    Cv1,
    Cv2,
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scenario::Uni => "UNI",
            Scenario::Cv1 => "CV1",
            Scenario::Cv2 => "CV2",
        })
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "UNI" => Ok(Scenario::Uni),
            "CV1" => Ok(Scenario::Cv1),
            "CV2" => Ok(Scenario::Cv2),
            other => Err(Error::Parse(format!("unknown scenario {other:?}"))),
        }
    }
}

/// Genetic and residual covariance of [selected scores, focal]; the focal
/// trait is the last row/column.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTraitCov {
    pub sigma_g: SymMatrix,
    pub sigma_e: SymMatrix,
}

impl MultiTraitCov {
    pub fn n_traits(&self) -> usize {
        self.sigma_g.dim()
    }

    pub fn focal(&self) -> usize {
        self.n_traits() - 1
    }
}

impl From<CovariancePair> for MultiTraitCov {
    fn from(p: CovariancePair) -> Self {
        Self { sigma_g: p.sigma_g, sigma_e: p.sigma_e }
    }
}

/// Two-moment estimate of the combined covariance from training plots.
pub fn estimate_multitrait_cov(plot_matrix: &DMatrix<f64>, design: &TrialDesign) -> Result<MultiTraitCov> {
    let t = plot_matrix.ncols();
    if t + 1 > design.n_genotypes() {
        return Err(Error::shape(format!("{t} traits need more than {} genotypes", design.n_genotypes())));
    }
    Ok(estimate_covariances(plot_matrix, design)?.into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlupResult {
    /// Focal BLUPs of the training genotypes.
    pub g_hat_train: DVector<f64>,
    /// Focal predictions of the test genotypes.
    pub g_hat_test: DVector<f64>,
    pub scenario: Scenario,
    /// Per-trait intercepts (focal last).
    pub beta: DVector<f64>,
}

/// Eigen-structure of the training kinship scaled by replicate counts.
/// Depends only on K_o and r_c, so it is shared by every model fitted on the
/// same split.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingKinship {
    pub lambda: DVector<f64>,
    /// Q = Uᵀ D^(-1/2), g_o × g_o.
    pub q: DMatrix<f64>,
    pub counts: Vec<usize>,
}

impl TrainingKinship {
    pub fn new(k_o: &DMatrix<f64>, counts: &[usize]) -> Result<Self> {
        let g = k_o.nrows();
        if k_o.ncols() != g || counts.len() != g {
            return Err(Error::shape(format!("kinship {:?} with {} replicate counts", k_o.shape(), counts.len())));
        }
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::Design("training genotype without plots".into()));
        }
        let sr: Vec<f64> = counts.iter().map(|&c| (c as f64).sqrt()).collect();
        let scaled = DMatrix::from_fn(g, g, |i, j| k_o[(i, j)] * sr[i] * sr[j]);
        let (lambda, u) = sym_eigen_desc(&scaled);
        if lambda.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training kinship spectrum".into()));
        }
        let q = DMatrix::from_fn(g, g, |i, j| u[(j, i)] * sr[j]);
        Ok(Self { lambda: lambda.map(|v| v.max(0.0)), q, counts: counts.to_vec() })
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }
}

/// Multi-trait BLUP of the training genotypes.
#[derive(Debug, Clone, PartialEq)]
pub struct KroneckerFit {
    pub beta: DVector<f64>,
    /// Ĝ_o, g_o × t.
    pub g_train: DMatrix<f64>,
    /// K_o⁻¹ Ĝ_o, g_o × t, computed without inverting K_o.
    pub kinv_g: DMatrix<f64>,
    /// Transformed-trait variances d_k.
    pub d: DVector<f64>,
    /// W⁻ᵀ = LV; Σ_G = W⁻ᵀ diag(d) W⁻¹.
    pub w_inv_t: DMatrix<f64>,
}

impl KroneckerFit {
    pub fn new(means: &DMatrix<f64>, sigma_g: &DMatrix<f64>, sigma_e: &DMatrix<f64>, kin: &TrainingKinship) -> Result<Self> {
        let (g, t) = means.shape();
        if g != kin.dim() || sigma_g.shape() != (t, t) || sigma_e.shape() != (t, t) {
            return Err(Error::shape(format!(
                "BLUP inputs: means {g}x{t}, Σ_G {:?}, Σ_E {:?}, kinship {}",
                sigma_g.shape(),
                sigma_e.shape(),
                kin.dim()
            )));
        }
        let chol = cholesky_ridged(sigma_e, "Σ_E").map_err(|e| match e {
            Error::Conditioning(m) => Error::Conditioning(format!("{m}; V̂ is singular, add a residual ridge")),
            other => other,
        })?;
        let l = chol.l();
        let linv = l.clone().try_inverse().ok_or_else(|| Error::Conditioning("Σ_E factor not invertible".into()))?;
        let (d, v) = sym_eigen_desc(&crate::linalg::symmetrize(&(&linv * sigma_g * linv.transpose())));
        let d = d.map(|x| x.max(0.0));
        let w = linv.transpose() * &v;
        let w_inv = v.transpose() * l.transpose();
        let w_inv_t = &l * &v;

        let y = &kin.q * means * &w;
        let q1 = kin.q.column_sum();
        let mut beta_t = DVector::zeros(t);
        for k in 0..t {
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..g {
                let var = d[k] * kin.lambda[i] + 1.0;
                num += q1[i] * y[(i, k)] / var;
                den += q1[i] * q1[i] / var;
            }
            if !(den > 0.0) {
                return Err(Error::Conditioning("intercept not estimable".into()));
            }
            beta_t[k] = num / den;
        }
        let mut shrunk = DMatrix::zeros(g, t);
        let mut a = DMatrix::zeros(g, t);
        for k in 0..t {
            for i in 0..g {
                let var = d[k] * kin.lambda[i] + 1.0;
                let r = y[(i, k)] - q1[i] * beta_t[k];
                shrunk[(i, k)] = d[k] * kin.lambda[i] / var * r;
                a[(i, k)] = d[k] / var * r;
            }
        }
        let beta = &w_inv_t * beta_t;
        // Q⁻¹ = D^(1/2) U.
        let sr: Vec<f64> = kin.counts.iter().map(|&c| (c as f64).sqrt()).collect();
        let q_inv = DMatrix::from_fn(g, g, |i, j| kin.q[(j, i)] / (sr[i] * sr[i]));
        let g_train = q_inv * shrunk * &w_inv;
        let kinv_g = kin.q.transpose() * a * &w_inv;
        Ok(Self { beta, g_train, kinv_g, d, w_inv_t })
    }

    pub fn n_traits(&self) -> usize {
        self.beta.len()
    }

    /// K_uo K_o⁻¹ Ĝ_o.
    pub fn predict(&self, k_uo: &DMatrix<f64>) -> DMatrix<f64> {
        k_uo * &self.kinv_g
    }

    /// Cov(G_u[:, a], G_u[:, b] | Y_o) for the listed traits, as a block
    /// matrix ordered trait-major (block (a, b) is g_u × g_u).
    pub fn conditional_cov(
        &self,
        kin: &TrainingKinship,
        k_uo: &DMatrix<f64>,
        k_u: &DMatrix<f64>,
        traits: &[usize],
    ) -> DMatrix<f64> {
        let gu = k_u.nrows();
        let h = k_uo * kin.q.transpose();
        let n = traits.len();
        let mut out = DMatrix::zeros(n * gu, n * gu);
        for k in 0..self.n_traits() {
            let dk = self.d[k];
            if dk == 0.0 {
                continue;
            }
            let weights = DVector::from_iterator(kin.dim(), kin.lambda.iter().map(|&l| dk * dk / (dk * l + 1.0)));
            let hw = DMatrix::from_fn(gu, kin.dim(), |i, j| h[(i, j)] * weights[j]);
            let ck = k_u * dk - hw * h.transpose();
            for (ai, &a) in traits.iter().enumerate() {
                for (bi, &b) in traits.iter().enumerate() {
                    let c = self.w_inv_t[(a, k)] * self.w_inv_t[(b, k)];
                    if c != 0.0 {
                        let mut block = out.view_mut((ai * gu, bi * gu), (gu, gu));
                        block += &ck * c;
                    }
                }
            }
        }
        out
    }
}

fn training_means(plot_matrix: &DMatrix<f64>, design: &TrialDesign, part: &KinshipPartition) -> Result<DMatrix<f64>> {
    if design.n_genotypes() != part.k_train.nrows() {
        return Err(Error::shape(format!(
            "{} training genotypes but kinship block is {}",
            design.n_genotypes(),
            part.k_train.nrows()
        )));
    }
    genotype_blues(plot_matrix, design)
}

/// Single-trait gBLUP from genotype means with replicate counts.
pub fn univariate_gblup_means(
    y_means: &DVector<f64>,
    counts: &[usize],
    sigma_g: f64,
    sigma_e: f64,
    part: &KinshipPartition,
) -> Result<BlupResult> {
    if sigma_g < 0.0 || !(sigma_e > 0.0) {
        return Err(Error::Conditioning(format!("variances σ_G = {sigma_g}, σ_E = {sigma_e}; V̂ singular")));
    }
    let kin = TrainingKinship::new(&part.k_train, counts)?;
    let means = DMatrix::from_column_slice(y_means.len(), 1, y_means.as_slice());
    let fit = KroneckerFit::new(
        &means,
        &DMatrix::from_element(1, 1, sigma_g),
        &DMatrix::from_element(1, 1, sigma_e),
        &kin,
    )?;
    Ok(BlupResult {
        g_hat_train: fit.g_train.column(0).clone_owned(),
        g_hat_test: fit.predict(&part.k_cross).column(0).clone_owned(),
        scenario: Scenario::Uni,
        beta: fit.beta,
    })
}

/// Single-trait gBLUP from training plots.
pub fn univariate_gblup(
    y_train: &DVector<f64>,
    design: &TrialDesign,
    sigma_g: f64,
    sigma_e: f64,
    part: &KinshipPartition,
) -> Result<BlupResult> {
    let m = training_means(&DMatrix::from_column_slice(y_train.len(), 1, y_train.as_slice()), design, part)?;
    univariate_gblup_means(&m.column(0).clone_owned(), &design.replicate_counts(), sigma_g, sigma_e, part)
}

/// Multi-trait BLUP with only training secondaries: the focal column of
/// K_uo K_o⁻¹ Ĝ_o.
pub fn cv1_predict(
    plot_matrix: &DMatrix<f64>,
    design: &TrialDesign,
    cov: &MultiTraitCov,
    part: &KinshipPartition,
) -> Result<BlupResult> {
    let kin = TrainingKinship::new(&part.k_train, &design.replicate_counts())?;
    cv1_with(plot_matrix, design, cov, part, &kin).map(|(r, _)| r)
}

pub(crate) fn cv1_with(
    plot_matrix: &DMatrix<f64>,
    design: &TrialDesign,
    cov: &MultiTraitCov,
    part: &KinshipPartition,
    kin: &TrainingKinship,
) -> Result<(BlupResult, KroneckerFit)> {
    let means = training_means(plot_matrix, design, part)?;
    let fit = KroneckerFit::new(&means, cov.sigma_g.matrix(), cov.sigma_e.matrix(), kin)?;
    let f = cov.focal();
    let result = BlupResult {
        g_hat_train: fit.g_train.column(f).clone_owned(),
        g_hat_test: fit.predict(&part.k_cross).column(f).clone_owned(),
        scenario: Scenario::Cv1,
        beta: fit.beta.clone(),
    };
    Ok((result, fit))
}

/// Second step of CV2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Cv2Method {
    /// Conditional expectation of the test focal values given training data
    /// and test secondaries, intercepts fixed at their training estimates.
    #[default]
    Exact,
    /// Correction (σ_G^{fw} ⊗ K_u⁻¹) V⁻¹ vec(Ȳ_wu − 1β_wᵀ − Ĝ_wu) with
    /// V = Σ_G^{ww} ⊗ K_u⁻¹ + Σ_E^{ww} ⊗ I.
    Verbatim,
}

/// Multi-trait BLUP with secondaries observed on the test genotypes as well.
/// `secondary_test` holds the non-focal columns of the test plots in
/// `design_test` order, which must follow `part.test_ids`.
pub fn cv2_predict(
    plot_matrix: &DMatrix<f64>,
    design: &TrialDesign,
    secondary_test: &DMatrix<f64>,
    design_test: &TrialDesign,
    cov: &MultiTraitCov,
    part: &KinshipPartition,
    method: Cv2Method,
) -> Result<BlupResult> {
    let kin = TrainingKinship::new(&part.k_train, &design.replicate_counts())?;
    cv2_with(plot_matrix, design, secondary_test, design_test, cov, part, &kin, method)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn cv2_with(
    plot_matrix: &DMatrix<f64>,
    design: &TrialDesign,
    secondary_test: &DMatrix<f64>,
    design_test: &TrialDesign,
    cov: &MultiTraitCov,
    part: &KinshipPartition,
    kin: &TrainingKinship,
    method: Cv2Method,
) -> Result<BlupResult> {
    let t = cov.n_traits();
    let f = cov.focal();
    let nw = t - 1;
    let gu = part.k_test.nrows();
    if secondary_test.nrows() == 0 || design_test.n_plots() == 0 {
        return Err(Error::Scenario("no test secondary data; use cv1_predict".into()));
    }
    if secondary_test.ncols() != nw || secondary_test.nrows() != design_test.n_plots() || design_test.n_genotypes() != gu
    {
        return Err(Error::Scenario(format!(
            "test secondaries are {}x{} for {} plots / {} genotypes; expected {nw} columns and {gu} genotypes",
            secondary_test.nrows(),
            secondary_test.ncols(),
            design_test.n_plots(),
            design_test.n_genotypes()
        )));
    }
    let (mut result, fit) = cv1_with(plot_matrix, design, cov, part, kin)?;
    result.scenario = Scenario::Cv2;
    if nw == 0 {
        return Ok(result);
    }
    let g_u = fit.predict(&part.k_cross);
    let test_means = genotype_blues(secondary_test, design_test)?;
    let mut z = DVector::zeros(nw * gu);
    for a in 0..nw {
        for i in 0..gu {
            z[a * gu + i] = test_means[(i, a)] - fit.beta[a] - g_u[(i, a)];
        }
    }
    let sg = cov.sigma_g.matrix();
    let se = cov.sigma_e.matrix();
    let correction = match method {
        Cv2Method::Exact => {
            let traits: Vec<usize> = (0..t).collect();
            let c = fit.conditional_cov(kin, &part.k_cross, &part.k_test, &traits);
            let counts = design_test.replicate_counts();
            let mut var = c.view((0, 0), (nw * gu, nw * gu)).clone_owned();
            for a in 0..nw {
                for b in 0..nw {
                    for i in 0..gu {
                        var[(a * gu + i, b * gu + i)] += se[(a, b)] / counts[i] as f64;
                    }
                }
            }
            let cross = c.view((f * gu, 0), (gu, nw * gu)).clone_owned();
            let chol = cholesky_ridged(&var, "CV2 test covariance")?;
            cross * chol.solve(&z)
        }
        Cv2Method::Verbatim => {
            let ku_inv = cholesky_ridged(&part.k_test, "K_u")?.inverse();
            let mut v = DMatrix::zeros(nw * gu, nw * gu);
            for a in 0..nw {
                for b in 0..nw {
                    let mut block = v.view_mut((a * gu, b * gu), (gu, gu));
                    block += &ku_inv * sg[(a, b)];
                    for i in 0..gu {
                        block[(i, i)] += se[(a, b)];
                    }
                }
            }
            let mut cross = DMatrix::zeros(gu, nw * gu);
            for b in 0..nw {
                cross.view_mut((0, b * gu), (gu, gu)).copy_from(&(&ku_inv * sg[(f, b)]));
            }
            let chol = cholesky_ridged(&v, "CV2 step-two V̂")?;
            cross * chol.solve(&z)
        }
    };
    result.g_hat_test += correction;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::test_timepoints;
    use crate::kinship::partition_kinship;
    use crate::symmat::MatrixKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng, jitter: f64) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        &a * a.transpose() + DMatrix::identity(n, n) * jitter
    }

    fn identity_partition(g: usize, test: usize) -> KinshipPartition {
        let k = SymMatrix::identity(g + test, MatrixKind::Kinship);
        let train: Vec<usize> = (0..g).collect();
        let te: Vec<usize> = (g..g + test).collect();
        partition_kinship(&k, &train, &te).unwrap()
    }

    #[test]
    fn identity_kinship_halves_deviations() {
        let y = DVector::from_row_slice(&[1.0, 3.0, 2.0, 6.0]);
        let part = identity_partition(4, 2);
        let res = univariate_gblup_means(&y, &[1; 4], 1.0, 1.0, &part).unwrap();
        let expected = y.add_scalar(-3.0) * 0.5;
        assert!((res.g_hat_train - expected).amax() < 1e-12);
        assert!((res.beta[0] - 3.0).abs() < 1e-12);
        assert!(res.g_hat_test.amax() < 1e-12);
    }

    #[test]
    fn zero_genetic_variance_gives_zero_blups() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = SymMatrix::symmetrized(random_spd(6, &mut rng, 0.5), MatrixKind::Kinship).unwrap();
        let part = partition_kinship(&k, &[0, 1, 2, 3], &[4, 5]).unwrap();
        let y = DVector::from_row_slice(&[1.0, -2.0, 0.5, 4.0]);
        let res = univariate_gblup_means(&y, &[2; 4], 0.0, 1.0, &part).unwrap();
        assert!(res.g_hat_train.amax() < 1e-14 && res.g_hat_test.amax() < 1e-14);
    }

    #[test]
    fn test_predictions_follow_kinship_regression() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = SymMatrix::symmetrized(random_spd(9, &mut rng, 0.3), MatrixKind::Kinship).unwrap();
        let part = partition_kinship(&k, &[0, 2, 4, 6, 8, 1], &[3, 5, 7]).unwrap();
        let y = DVector::from_fn(6, |_, _| rng.random::<f64>());
        let res = univariate_gblup_means(&y, &[3, 2, 3, 1, 3, 3], 0.7, 1.3, &part).unwrap();
        let direct = &part.k_cross * part.k_train.clone().cholesky().unwrap().solve(&res.g_hat_train);
        assert!((direct - res.g_hat_test).amax() < 1e-10);
    }

    #[test]
    fn diagonal_covariances_reduce_to_univariate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = SymMatrix::symmetrized(random_spd(9, &mut rng, 0.3), MatrixKind::Kinship).unwrap();
        let part = partition_kinship(&k, &[0, 1, 2, 3, 4, 5], &[6, 7, 8]).unwrap();
        let design = TrialDesign::balanced(6, 2, test_timepoints(2)).unwrap();
        let y = DMatrix::from_fn(12, 2, |_, _| rng.random::<f64>());
        let cov = MultiTraitCov {
            sigma_g: SymMatrix::new(DMatrix::from_diagonal(&DVector::from_row_slice(&[0.8, 0.5])), MatrixKind::Covariance)
                .unwrap(),
            sigma_e: SymMatrix::new(DMatrix::from_diagonal(&DVector::from_row_slice(&[0.4, 1.1])), MatrixKind::Covariance)
                .unwrap(),
        };
        let multi = cv1_predict(&y, &design, &cov, &part).unwrap();
        let uni = univariate_gblup(&y.column(1).clone_owned(), &design, 0.5, 1.1, &part).unwrap();
        assert!((multi.g_hat_train - uni.g_hat_train).amax() < 1e-8);
        assert!((multi.g_hat_test - &uni.g_hat_test).amax() < 1e-8);

        let test_design = TrialDesign::balanced(3, 2, test_timepoints(2)).unwrap();
        let yw = DMatrix::from_fn(6, 1, |_, _| rng.random::<f64>());
        for method in [Cv2Method::Exact, Cv2Method::Verbatim] {
            let cv2 = cv2_predict(&y, &design, &yw, &test_design, &cov, &part, method).unwrap();
            assert!((cv2.g_hat_test - &uni.g_hat_test).amax() < 1e-8);
        }
    }

    #[test]
    fn cv2_without_test_data_is_scenario_error() {
        let part = identity_partition(4, 2);
        let design = TrialDesign::balanced(4, 2, test_timepoints(2)).unwrap();
        let test_design = TrialDesign::balanced(2, 2, test_timepoints(2)).unwrap();
        let cov = MultiTraitCov {
            sigma_g: SymMatrix::identity(2, MatrixKind::Covariance),
            sigma_e: SymMatrix::identity(2, MatrixKind::Covariance),
        };
        let err = cv2_predict(&DMatrix::zeros(8, 2), &design, &DMatrix::zeros(0, 1), &test_design, &cov, &part, Cv2Method::Exact);
        assert!(matches!(err, Err(Error::Scenario(_))));
    }

    #[test]
    fn intercept_absorbs_shift_and_scale_is_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = SymMatrix::symmetrized(random_spd(8, &mut rng, 0.3), MatrixKind::Kinship).unwrap();
        let part = partition_kinship(&k, &[0, 1, 2, 3, 4], &[5, 6, 7]).unwrap();
        let design = TrialDesign::balanced(5, 2, test_timepoints(2)).unwrap();
        let y = DMatrix::from_fn(10, 2, |_, _| rng.random::<f64>());
        let sg = random_spd(2, &mut rng, 0.2);
        let se = random_spd(2, &mut rng, 0.2);
        let cov = MultiTraitCov {
            sigma_g: SymMatrix::symmetrized(sg.clone(), MatrixKind::Covariance).unwrap(),
            sigma_e: SymMatrix::symmetrized(se.clone(), MatrixKind::Covariance).unwrap(),
        };
        let base = cv1_predict(&y, &design, &cov, &part).unwrap();
        let mut shifted = y.clone();
        shifted.column_mut(1).add_scalar_mut(17.0);
        let sh = cv1_predict(&shifted, &design, &cov, &part).unwrap();
        assert!((&sh.g_hat_test - &base.g_hat_test).amax() < 1e-8);

        let a = 3.5;
        let mut scaled = y.clone();
        scaled.column_mut(1).scale_mut(a);
        let s = DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, a]));
        let cov_s = MultiTraitCov {
            sigma_g: SymMatrix::symmetrized(&s * sg * &s, MatrixKind::Covariance).unwrap(),
            sigma_e: SymMatrix::symmetrized(&s * se * &s, MatrixKind::Covariance).unwrap(),
        };
        let sc = cv1_predict(&scaled, &design, &cov_s, &part).unwrap();
        assert!((sc.g_hat_test - &base.g_hat_test * a).amax() < 1e-8);
    }
}
