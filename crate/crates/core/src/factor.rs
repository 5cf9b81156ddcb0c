//! Per-timepoint factor analysis of a genetic correlation matrix: scree-based
//! dimension choice, maximum-likelihood fitting and Varimax rotation.
//!
//! The ML fit profiles the loadings out of the discrepancy. For fixed Ψ, with
//! Ψ^(-1/2) R Ψ^(-1/2) = Ω diag(θ) Ωᵀ, the optimal loadings are
//! Ψ^(1/2) Ω_m diag(√(θ_k − 1)₊) and the discrepancy reduces to a sum of
//! θ − ln θ − 1 over the eigenvalues that are not absorbed by the loadings.
//! What remains is a smooth box-constrained problem in ln ψ.

use log::debug;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_ridged, condition_number, sym_eigen_desc};
use crate::symmat::SymMatrix;

/// Eigenvalue diagnostics behind the dimension choice.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreeProfile {
    /// δ_1 ≥ … ≥ δ_s.
    pub eigenvalues: DVector<f64>,
    /// af_j for j = 2..s−1; `acceleration[0]` belongs to j = 2.
    pub acceleration: Vec<f64>,
    /// 1-based position of the largest acceleration (s′).
    pub elbow: usize,
    /// Optimal-coordinate line through (j+1, δ_{j+1}) and (s, δ_s), for
    /// j = 1..s−2: intercepts a_{j+1} and slopes b_{j+1}.
    pub oc_intercepts: Vec<f64>,
    pub oc_slopes: Vec<f64>,
    pub condition_number: f64,
}

impl ScreeProfile {
    /// Eigenvalue predicted at position j by the optimal-coordinate line
    /// anchored at j + 1 (j is 1-based, 1 ≤ j ≤ s − 2).
    pub fn optimal_coordinate(&self, j: usize) -> f64 {
        self.oc_intercepts[j - 1] + self.oc_slopes[j - 1] * j as f64
    }
}

/// Choose the number of factors: eigenvalues at or above one that precede
/// the point of maximal acceleration in the scree, at least one.
pub fn select_dimension(r: &SymMatrix) -> Result<(usize, ScreeProfile)> {
    let s = r.dim();
    if s < 3 {
        return Err(Error::TooFewTraits(s));
    }
    let (delta, _) = sym_eigen_desc(r.matrix());
    let acceleration: Vec<f64> = (1..s - 1).map(|i| delta[i + 1] - 2.0 * delta[i] + delta[i - 1]).collect();
    let mut best = 0;
    for (i, &a) in acceleration.iter().enumerate() {
        if a > acceleration[best] {
            best = i;
        }
    }
    let elbow = best + 2;
    let m = (1..=s).filter(|&j| delta[j - 1] >= 1.0 && j < elbow).count().max(1);

    let mut oc_intercepts = Vec::with_capacity(s - 2);
    let mut oc_slopes = Vec::with_capacity(s - 2);
    for j in 1..=s - 2 {
        let b = (delta[s - 1] - delta[j]) / (s - j - 1) as f64;
        oc_slopes.push(b);
        oc_intercepts.push(delta[j] - b * (j + 1) as f64);
    }
    let profile = ScreeProfile {
        condition_number: condition_number(r.matrix()),
        eigenvalues: delta,
        acceleration,
        elbow,
        oc_intercepts,
        oc_slopes,
    };
    Ok((m, profile))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Lower bound on every uniqueness (Heywood protection).
    pub psi_floor: f64,
    /// Stop when the projected gradient norm (in ln ψ) drops below this.
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { psi_floor: 0.005, grad_tol: 1e-6, max_iter: 500 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    /// s × m.
    pub loadings: DMatrix<f64>,
    pub uniquenesses: DVector<f64>,
    pub m: usize,
    /// Discrepancy at the returned parameters.
    pub fit: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Some uniqueness sits at the floor.
    pub heywood: bool,
}

impl FactorModel {
    /// ΛΛᵀ + Ψ.
    pub fn implied(&self) -> DMatrix<f64> {
        &self.loadings * self.loadings.transpose() + DMatrix::from_diagonal(&self.uniquenesses)
    }

    pub fn communalities(&self) -> DVector<f64> {
        DVector::from_iterator(self.loadings.nrows(), self.loadings.row_iter().map(|r| r.norm_squared()))
    }

    /// Same model with loadings right-multiplied by `t`.
    pub fn rotated(&self, t: &DMatrix<f64>) -> FactorModel {
        FactorModel { loadings: &self.loadings * t, ..self.clone() }
    }
}

/// ln|Σ| + tr(RΣ⁻¹) − ln|R| − s for Σ = ΛΛᵀ + Ψ.
pub fn discrepancy(r: &DMatrix<f64>, loadings: &DMatrix<f64>, psi: &DVector<f64>) -> Result<f64> {
    let s = r.nrows();
    let sigma = loadings * loadings.transpose() + DMatrix::from_diagonal(psi);
    let cs = cholesky_ridged(&sigma, "implied covariance")?;
    let cr = cholesky_ridged(r, "correlation matrix")?;
    let logdet = |l: &DMatrix<f64>| 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let tr = cs.solve(r).trace();
    Ok(logdet(&cs.l()) + tr - logdet(&cr.l()) - s as f64)
}

/// Profiled discrepancy and its gradient with respect to x = ln ψ.
pub struct ProfileObjective<'a> {
    r: &'a DMatrix<f64>,
    m: usize,
}

pub struct ProfilePoint {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub loadings: DMatrix<f64>,
}

impl<'a> ProfileObjective<'a> {
    pub fn new(r: &'a DMatrix<f64>, m: usize) -> Self {
        Self { r, m }
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> ProfilePoint {
        let s = self.r.nrows();
        let inv_sqrt: Vec<f64> = x.iter().map(|v| (-0.5 * v).exp()).collect();
        let scaled = DMatrix::from_fn(s, s, |i, j| self.r[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
        let (theta, omega) = sym_eigen_desc(&scaled);
        let mut value = 0.0;
        let mut gradient = DVector::zeros(s);
        let mut loadings = DMatrix::zeros(s, self.m);
        for k in 0..s {
            let t = theta[k];
            if k < self.m && t > 1.0 {
                let w = (t - 1.0).sqrt();
                for j in 0..s {
                    loadings[(j, k)] = omega[(j, k)] * w / inv_sqrt[j];
                }
            } else {
                value += t - t.ln() - 1.0;
                for j in 0..s {
                    gradient[j] += omega[(j, k)].powi(2) * (1.0 - t);
                }
            }
        }
        ProfilePoint { value, gradient, loadings }
    }
}

fn projected_gradient(x: &DVector<f64>, g: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |j, _| {
        if (x[j] <= lo[j] && g[j] > 0.0) || (x[j] >= hi[j] && g[j] < 0.0) {
            0.0
        } else {
            g[j]
        }
    })
}

fn stationary(pg: &DVector<f64>, value: f64) -> bool {
    pg.norm_squared() <= 1e-10 * value.abs().max(1.0)
}

/// Maximum-likelihood factor model with `m` factors for a correlation
/// (or covariance) matrix. Loadings are returned unrotated.
pub fn fit_factor_model(r: &SymMatrix, m: usize, opts: FitOptions) -> Result<FactorModel> {
    let s = r.dim();
    if m == 0 || m >= s {
        return Err(Error::shape(format!("factor count {m} must lie in 1..{s}")));
    }
    let rm = r.matrix();
    let (vals, _) = sym_eigen_desc(rm);
    if !(vals[s - 1] > 0.0) {
        return Err(Error::NotPositiveDefinite(format!("smallest eigenvalue {:e}", vals[s - 1])));
    }
    let lo = DVector::from_element(s, opts.psi_floor.ln());
    let hi = DVector::from_fn(s, |j, _| rm[(j, j)].max(opts.psi_floor).ln());

    // Start from 1 − SMC, i.e. 1 / diag(R⁻¹).
    let rinv = cholesky_ridged(rm, "factor start")?.inverse();
    let mut x = DVector::from_fn(s, |j, _| (1.0 / rinv[(j, j)]).ln().clamp(lo[j], hi[j]));

    let objective = ProfileObjective::new(rm, m);
    let mut point = objective.evaluate(&x);
    let mut hinv = DMatrix::<f64>::identity(s, s);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let pg = projected_gradient(&x, &point.gradient, &lo, &hi);
        if pg.norm() < opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let free: Vec<bool> = pg.iter().zip(point.gradient.iter()).map(|(p, g)| *p != 0.0 || *g == 0.0).collect();
        let mut dir = DVector::zeros(s);
        for i in 0..s {
            if free[i] {
                let mut acc = 0.0;
                for j in 0..s {
                    if free[j] {
                        acc -= hinv[(i, j)] * point.gradient[j];
                    }
                }
                dir[i] = acc;
            }
        }
        if dir.dot(&pg) >= 0.0 {
            hinv.fill_with_identity();
            dir = -&pg;
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = DVector::from_fn(s, |j, _| (x[j] + step * dir[j]).clamp(lo[j], hi[j]));
            let cand = objective.evaluate(&trial);
            let decrease = point.gradient.dot(&(&trial - &x));
            if cand.value.is_finite() && cand.value <= point.value + 1e-4 * decrease {
                accepted = Some((trial, cand));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, next)) = accepted else {
            if hinv != DMatrix::identity(s, s) {
                hinv.fill_with_identity();
                continue;
            }
            // Near-singular inputs (e.g. after PSD repair) put a floor under
            // the attainable gradient; accept when a full steepest-descent
            // step would change F by less than its working precision.
            converged = stationary(&pg, point.value);
            debug!("factor fit: line search failed after {iterations} iterations, |g| = {:e}", pg.norm());
            break;
        };
        let sv = &xn - &x;
        let yv = &next.gradient - &point.gradient;
        let sy = sv.dot(&yv);
        if sy > 1e-12 * sv.norm() * yv.norm() {
            let rho = 1.0 / sy;
            let hy = &hinv * &yv;
            let yhy = yv.dot(&hy);
            hinv += (&sv * sv.transpose()) * (rho * (1.0 + rho * yhy)) - (&hy * sv.transpose() + &sv * hy.transpose()) * rho;
        }
        let moved = sv.amax();
        x = xn;
        point = next;
        if moved == 0.0 {
            converged = stationary(&pg, point.value);
            break;
        }
    }
    let psi = x.map(f64::exp);
    let heywood = x.iter().zip(lo.iter()).any(|(a, b)| *a <= *b + 1e-12);
    Ok(FactorModel { loadings: point.loadings, uniquenesses: psi, m, fit: point.value, converged, iterations, heywood })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarimaxOptions {
    /// Kaiser row normalization before rotating.
    pub normalize: bool,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for VarimaxOptions {
    fn default() -> Self {
        Self { normalize: true, max_iter: 1000, tol: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Varimax {
    pub loadings: DMatrix<f64>,
    /// Orthogonal m × m matrix with loadings_out = loadings_in · rotation.
    pub rotation: DMatrix<f64>,
}

fn row_norms(l: &DMatrix<f64>) -> Vec<f64> {
    l.row_iter().map(|r| r.norm()).collect()
}

fn normalized(l: &DMatrix<f64>, normalize: bool) -> DMatrix<f64> {
    if !normalize {
        return l.clone();
    }
    let norms = row_norms(l);
    DMatrix::from_fn(l.nrows(), l.ncols(), |i, j| if norms[i] > 0.0 { l[(i, j)] / norms[i] } else { 0.0 })
}

/// Σ_k [ mean_j z_jk⁴ − (mean_j z_jk²)² ] on (optionally row-normalized)
/// loadings.
pub fn varimax_criterion(l: &DMatrix<f64>, normalize: bool) -> f64 {
    let z = normalized(l, normalize);
    let p = z.nrows() as f64;
    z.column_iter()
        .map(|c| {
            let m2 = c.iter().map(|v| v * v).sum::<f64>() / p;
            let m4 = c.iter().map(|v| v.powi(4)).sum::<f64>() / p;
            m4 - m2 * m2
        })
        .sum()
}

/// Orthogonal Varimax rotation by the SVD fixed-point iteration.
pub fn varimax(l: &DMatrix<f64>, opts: VarimaxOptions) -> Result<Varimax> {
    let (p, m) = l.shape();
    if m == 0 || p == 0 {
        return Err(Error::shape(format!("varimax needs a non-empty loadings matrix, got {p}x{m}")));
    }
    if m == 1 {
        return Ok(Varimax { loadings: l.clone(), rotation: DMatrix::identity(1, 1) });
    }
    let x = normalized(l, opts.normalize);
    let mut t = DMatrix::<f64>::identity(m, m);
    let mut d = 0.0;
    for _ in 0..opts.max_iter {
        let z = &x * &t;
        let col_ss: Vec<f64> = z.column_iter().map(|c| c.norm_squared() / p as f64).collect();
        let target = DMatrix::from_fn(p, m, |i, j| z[(i, j)].powi(3) - z[(i, j)] * col_ss[j]);
        let b = x.transpose() * target;
        let svd = b.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        t = u * vt;
        let past = d;
        d = svd.singular_values.sum();
        if d < past * (1.0 + opts.tol) {
            break;
        }
    }
    Ok(Varimax { loadings: l * &t, rotation: t })
}

/// Flip columns so each has a nonnegative sum.
pub fn orient_columns(l: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let signs: Vec<f64> = l.column_iter().map(|c| if c.sum() < 0.0 { -1.0 } else { 1.0 }).collect();
    let out = DMatrix::from_fn(l.nrows(), l.ncols(), |i, j| l[(i, j)] * signs[j]);
    (out, signs)
}
