//! Smoothed factor-score trajectories and the characteristics extracted
//! from them.
//!
//! Two levels: a population curve fitted to the per-timepoint mean score,
//! and per-genotype deviation curves fitted to the residuals with one shared
//! penalty. Both are penalized cubic B-splines (second-difference penalty);
//! with only two or three timepoints the fit degrades to piecewise-linear
//! interpolation.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scores::ScoreSeries;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    Fixed(f64),
    /// Generalized cross-validation over a log grid 1e-4..1e6.
    Gcv,
}

/// B-spline basis on an extended knot vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    pub knots: Vec<f64>,
    pub degree: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Basis {
    /// Equally spaced cubic basis with `nseg` segments on [lo, hi].
    pub fn cubic(lo: f64, hi: f64, nseg: usize) -> Self {
        let dx = (hi - lo) / nseg as f64;
        let knots = (0..nseg + 7).map(|i| lo + (i as f64 - 3.0) * dx).collect();
        Self { knots, degree: 3, lo, hi }
    }

    /// Hat functions centered at the given points (piecewise-linear
    /// interpolation).
    pub fn linear(points: &[f64]) -> Self {
        let (lo, hi) = (points[0], points[points.len() - 1]);
        let mut knots = Vec::with_capacity(points.len() + 2);
        knots.push(lo - 1.0);
        knots.extend_from_slice(points);
        knots.push(hi + 1.0);
        Self { knots, degree: 1, lo, hi }
    }

    pub fn len(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All basis functions at x (Cox–de Boor).
    pub fn eval(&self, x: f64) -> DVector<f64> {
        let k = &self.knots;
        let nk = k.len();
        let mut b: Vec<f64> = (0..nk - 1).map(|i| if k[i] <= x && x < k[i + 1] { 1.0 } else { 0.0 }).collect();
        for p in 1..=self.degree {
            for i in 0..nk - 1 - p {
                let left = if k[i + p] > k[i] { (x - k[i]) / (k[i + p] - k[i]) * b[i] } else { 0.0 };
                let right =
                    if k[i + p + 1] > k[i + 1] { (k[i + p + 1] - x) / (k[i + p + 1] - k[i + 1]) * b[i + 1] } else { 0.0 };
                b[i] = left + right;
            }
        }
        DVector::from_iterator(self.len(), b.into_iter().take(self.len()))
    }

    pub fn design(&self, xs: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(xs.len(), self.len());
        for (i, &x) in xs.iter().enumerate() {
            out.set_row(i, &self.eval(x).transpose());
        }
        out
    }

    /// Knots inside [lo, hi], the breakpoints of the piecewise polynomial.
    fn breakpoints(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = self.knots.iter().copied().filter(|&k| k > self.lo && k < self.hi).collect();
        pts.insert(0, self.lo);
        pts.push(self.hi);
        pts.dedup();
        pts
    }
}

fn second_difference_penalty(n: usize) -> DMatrix<f64> {
    if n < 3 {
        return DMatrix::zeros(n, n);
    }
    let mut d = DMatrix::zeros(n - 2, n);
    for i in 0..n - 2 {
        d[(i, i)] = 1.0;
        d[(i, i + 1)] = -2.0;
        d[(i, i + 2)] = 1.0;
    }
    d.transpose() * d
}

/// Linear smoother pieces: coefficients = H·y, fitted = B·H·y.
struct Smoother {
    hat_coef: DMatrix<f64>,
    trace: f64,
}

fn smoother(b: &DMatrix<f64>, pen: &DMatrix<f64>, lambda: f64) -> Result<Smoother> {
    let n = b.ncols();
    let mut lhs = b.transpose() * b + pen * lambda;
    let scale = lhs.trace() / n as f64;
    for i in 0..n {
        lhs[(i, i)] += 1e-12 * scale;
    }
    let chol = lhs.cholesky().ok_or_else(|| Error::Conditioning("spline normal equations".into()))?;
    let hat_coef = chol.solve(&b.transpose());
    let trace = (b * &hat_coef).trace();
    Ok(Smoother { hat_coef, trace })
}

fn lambda_grid() -> Vec<f64> {
    (0..=40).map(|i| 10f64.powf(-4.0 + 0.25 * i as f64)).collect()
}

/// Penalty minimizing GCV = n·RSS / (n − df)² for the given response
/// columns (each column one series over the timepoints).
fn choose_lambda(b: &DMatrix<f64>, pen: &DMatrix<f64>, ys: &DMatrix<f64>) -> Result<f64> {
    let (tau, cols) = ys.shape();
    let n = (tau * cols) as f64;
    let mut best = (f64::INFINITY, lambda_grid()[0]);
    for lambda in lambda_grid() {
        let s = smoother(b, pen, lambda)?;
        let fitted = b * (&s.hat_coef * ys);
        let rss = (ys - fitted).norm_squared();
        let df = s.trace * cols as f64;
        let denom = (n - df).max(1e-12);
        let gcv = n * rss / (denom * denom);
        if gcv < best.0 * (1.0 - 1e-12) {
            best = (gcv, lambda);
        }
    }
    Ok(best.1)
}

/// Fitted trajectories for every factor of a score series.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFit {
    pub basis: Basis,
    pub times: Vec<f64>,
    /// Population coefficients per factor.
    pub population: Vec<DVector<f64>>,
    /// Genotype deviation coefficients per factor (g × basis).
    pub deviations: Vec<DMatrix<f64>>,
    pub lambda_population: Vec<f64>,
    pub lambda_deviation: Vec<f64>,
    /// Mean squared residual per timepoint, per factor.
    pub residual_variance: Vec<DVector<f64>>,
    pub piecewise_linear: bool,
}

impl TrajectoryFit {
    pub fn n_factors(&self) -> usize {
        self.population.len()
    }

    pub fn n_genotypes(&self) -> usize {
        self.deviations.first().map_or(0, |d| d.nrows())
    }

    fn check(&self, t: f64) -> Result<()> {
        let tol = 1e-9 * (self.basis.hi - self.basis.lo).abs().max(1.0);
        if t < self.basis.lo - tol || t > self.basis.hi + tol {
            return Err(Error::Extrapolation { t0: t, t1: t, lo: self.basis.lo, hi: self.basis.hi });
        }
        Ok(())
    }

    fn eval_clamped(&self, t: f64) -> DVector<f64> {
        self.basis.eval(t.clamp(self.basis.lo, self.basis.hi))
    }

    pub fn population_at(&self, factor: usize, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(self.eval_clamped(t).dot(&self.population[factor]))
    }

    pub fn deviation_at(&self, factor: usize, genotype: usize, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(self.deviations[factor].row(genotype).transpose().dot(&self.eval_clamped(t)))
    }

    /// Population plus deviation.
    pub fn genotype_at(&self, factor: usize, genotype: usize, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(self.curve(factor, genotype)(t))
    }

    fn curve(&self, factor: usize, genotype: usize) -> impl Fn(f64) -> f64 + '_ {
        let coef = &self.population[factor] + self.deviations[factor].row(genotype).transpose();
        move |t| self.eval_clamped(t).dot(&coef)
    }
}

fn nseg_for(tau: usize) -> usize {
    (tau.saturating_sub(3)).clamp(1, 20)
}

/// Fit population and genotype-deviation curves to the genotype scores of
/// every factor. `times` gives the time coordinate of each timepoint.
pub fn fit_trajectories(scores: &ScoreSeries, times: &[f64], penalty: Penalty) -> Result<TrajectoryFit> {
    let tau = scores.genotype_scores.len();
    if times.len() != tau {
        return Err(Error::shape(format!("{} times for {tau} timepoints", times.len())));
    }
    if tau < 2 {
        return Err(Error::TooFewTimepoints(tau));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Design("trajectory times must be strictly increasing".into()));
    }
    let m = scores.genotype_scores[0].ncols();
    let g = scores.genotype_scores[0].nrows();
    if scores.genotype_scores.iter().any(|s| s.shape() != (g, m)) {
        return Err(Error::shape("score series has inconsistent shapes across timepoints"));
    }
    let piecewise_linear = tau < 4;
    let basis = if piecewise_linear {
        warn!("only {tau} timepoints: trajectories are piecewise linear");
        Basis::linear(times)
    } else {
        Basis::cubic(times[0], times[tau - 1], nseg_for(tau))
    };
    let b = basis.design(times);
    let pen = if piecewise_linear { DMatrix::zeros(basis.len(), basis.len()) } else { second_difference_penalty(basis.len()) };

    let mut fit = TrajectoryFit {
        basis,
        times: times.to_vec(),
        population: Vec::with_capacity(m),
        deviations: Vec::with_capacity(m),
        lambda_population: Vec::with_capacity(m),
        lambda_deviation: Vec::with_capacity(m),
        residual_variance: Vec::with_capacity(m),
        piecewise_linear,
    };
    for k in 0..m {
        // τ × g matrix of this factor's scores.
        let y = DMatrix::from_fn(tau, g, |l, c| scores.genotype_scores[l][(c, k)]);
        let mean = DVector::from_iterator(tau, y.row_iter().map(|r| r.mean()));
        let resid = DMatrix::from_fn(tau, g, |l, c| y[(l, c)] - mean[l]);
        let (lp, ld) = match (penalty, piecewise_linear) {
            (_, true) => (0.0, 0.0),
            (Penalty::Fixed(v), false) => (v, v),
            (Penalty::Gcv, false) => (
                choose_lambda(&b, &pen, &DMatrix::from_column_slice(tau, 1, mean.as_slice()))?,
                choose_lambda(&b, &pen, &resid)?,
            ),
        };
        let sp = smoother(&b, &pen, lp)?;
        let sd = smoother(&b, &pen, ld)?;
        let pop = &sp.hat_coef * &mean;
        let dev = (&sd.hat_coef * &resid).transpose();
        let fitted = &b * (&pop * DMatrix::from_element(1, g, 1.0) + dev.transpose());
        let rv = DVector::from_iterator(tau, (&y - fitted).row_iter().map(|r| r.norm_squared() / g as f64));
        fit.population.push(pop);
        fit.deviations.push(dev);
        fit.lambda_population.push(lp);
        fit.lambda_deviation.push(ld);
        fit.residual_variance.push(rv);
    }
    Ok(fit)
}

/// Per genotype × factor summaries of the genotype curves over [t0, t1].
#[derive(Debug, Clone, PartialEq)]
pub struct SplineCharacteristics {
    pub interval: (f64, f64),
    pub auc: DMatrix<f64>,
    pub min: DMatrix<f64>,
    pub max: DMatrix<f64>,
    pub time_of_max: DMatrix<f64>,
    pub mean_slope: DMatrix<f64>,
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: usize) -> f64 {
    let mid = 0.5 * (a + b);
    let left = simpson(f, a, mid);
    let right = simpson(f, mid, b);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    adaptive_simpson(f, a, mid, left, tol / 2.0, depth - 1) + adaptive_simpson(f, mid, b, right, tol / 2.0, depth - 1)
}

/// ∫ f over [a, b], split at the basis breakpoints so every piece is a
/// polynomial.
fn integrate(f: &dyn Fn(f64) -> f64, basis: &Basis, a: f64, b: f64) -> f64 {
    let mut cuts: Vec<f64> = basis.breakpoints().into_iter().filter(|&k| k > a && k < b).collect();
    cuts.insert(0, a);
    cuts.push(b);
    cuts.windows(2)
        .map(|w| adaptive_simpson(f, w[0], w[1], simpson(f, w[0], w[1]), 1e-13, 30))
        .sum()
}

/// Maximize f on [a, b]: 256-point grid, then golden-section refinement in
/// the bracketing grid cells.
fn maximize(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let n = 256;
    let step = (b - a) / (n - 1) as f64;
    let xs: Vec<f64> = (0..n).map(|i| if i == n - 1 { b } else { a + step * i as f64 }).collect();
    let mut best = 0;
    for i in 1..n {
        if f(xs[i]) > f(xs[best]) {
            best = i;
        }
    }
    let (mut lo, mut hi) = (xs[best.saturating_sub(1)], xs[(best + 1).min(n - 1)]);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - phi * (hi - lo);
    let mut d = lo + phi * (hi - lo);
    for _ in 0..100 {
        if f(c) > f(d) {
            hi = d;
        } else {
            lo = c;
        }
        c = hi - phi * (hi - lo);
        d = lo + phi * (hi - lo);
        if hi - lo < 1e-12 * (b - a).abs().max(1.0) {
            break;
        }
    }
    let x = 0.5 * (lo + hi);
    if f(x) >= f(xs[best]) {
        (x, f(x))
    } else {
        (xs[best], f(xs[best]))
    }
}

pub fn extract_characteristics(fit: &TrajectoryFit, t0: f64, t1: f64) -> Result<SplineCharacteristics> {
    let (lo, hi) = (fit.basis.lo, fit.basis.hi);
    let tol = 1e-9 * (hi - lo).abs().max(1.0);
    if !(t1 > t0) || t0 < lo - tol || t1 > hi + tol {
        return Err(Error::Extrapolation { t0, t1, lo, hi });
    }
    let (t0, t1) = (t0.max(lo), t1.min(hi));
    let (g, m) = (fit.n_genotypes(), fit.n_factors());
    let mut out = SplineCharacteristics {
        interval: (t0, t1),
        auc: DMatrix::zeros(g, m),
        min: DMatrix::zeros(g, m),
        max: DMatrix::zeros(g, m),
        time_of_max: DMatrix::zeros(g, m),
        mean_slope: DMatrix::zeros(g, m),
    };
    for k in 0..m {
        for c in 0..g {
            let f = fit.curve(k, c);
            out.auc[(c, k)] = integrate(&f, &fit.basis, t0, t1);
            let (tmax, vmax) = maximize(&f, t0, t1);
            let (_, vmin) = maximize(&|t| -f(t), t0, t1);
            out.max[(c, k)] = vmax;
            out.time_of_max[(c, k)] = tmax;
            out.min[(c, k)] = -vmin;
            out.mean_slope[(c, k)] = (f(t1) - f(t0)) / (t1 - t0);
        }
    }
    Ok(out)
}
