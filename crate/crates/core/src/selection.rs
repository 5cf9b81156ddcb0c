//! BIC subset selection of factor-score columns for the focal trait.
//!
//! All fits are ordinary least squares with an intercept, evaluated from the
//! centered Gram matrix so each subset costs O(k³) regardless of g.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const RSS_FLOOR: f64 = 1e-12;
/// Squared residual norm (relative to the column's own) under which a column
/// counts as collinear with the columns kept before it.
const COLLINEAR_TOL: f64 = 1e-10;
const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMethod {
    Exhaustive,
    Forward,
}

impl std::fmt::Display for SearchMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SearchMethod::Exhaustive => "exhaustive",
            SearchMethod::Forward => "forward",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BicFit {
    pub bic: f64,
    pub rss: f64,
    /// Columns (indices into the supplied subset) that entered the fit.
    pub kept: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetResult {
    /// Sorted candidate indices.
    pub selected: Vec<usize>,
    pub bic: f64,
    /// Every evaluated subset with its BIC, in evaluation order.
    pub trace: Vec<(Vec<usize>, f64)>,
    pub method: SearchMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionOptions {
    /// Exhaustive search up to this many candidates, forward stepwise above.
    pub exhaustive_limit: usize,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        Self { exhaustive_limit: 15 }
    }
}

/// Centered cross-products of y and the candidate columns.
struct Moments {
    g: usize,
    gram: DMatrix<f64>,
    xty: DVector<f64>,
    tss: f64,
}

impl Moments {
    fn new(y: &DVector<f64>, x: &DMatrix<f64>) -> Result<Self> {
        let g = y.len();
        if x.nrows() != g {
            return Err(Error::shape(format!("{} candidate rows for {g} responses", x.nrows())));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("selection inputs".into()));
        }
        if g < 2 {
            return Err(Error::TooFewGenotypes(g));
        }
        let ym = y.mean();
        let yc = y.add_scalar(-ym);
        let mut xc = x.clone();
        for mut c in xc.column_iter_mut() {
            let m = c.mean();
            c.add_scalar_mut(-m);
        }
        Ok(Self { g, gram: xc.transpose() * &xc, xty: xc.transpose() * &yc, tss: yc.norm_squared() })
    }

    /// OLS of y on [1, X_subset], dropping columns collinear with earlier
    /// ones in `subset` order.
    fn fit(&self, subset: &[usize]) -> BicFit {
        let k = subset.len();
        // Incremental Cholesky of the Gram sub-block over kept columns.
        let mut l = DMatrix::<f64>::zeros(k, k);
        let mut kept: Vec<usize> = Vec::with_capacity(k);
        let mut kept_cols: Vec<usize> = Vec::with_capacity(k);
        for (pos, &c) in subset.iter().enumerate() {
            let diag = self.gram[(c, c)];
            let n = kept_cols.len();
            let mut row = vec![0.0; n];
            for a in 0..n {
                let mut v = self.gram[(c, kept_cols[a])];
                for b in 0..a {
                    v -= row[b] * l[(a, b)];
                }
                row[a] = v / l[(a, a)];
            }
            let resid = diag - row.iter().map(|v| v * v).sum::<f64>();
            if !(diag > 0.0) || resid <= COLLINEAR_TOL * diag {
                continue;
            }
            for (b, v) in row.into_iter().enumerate() {
                l[(n, b)] = v;
            }
            l[(n, n)] = resid.sqrt();
            kept.push(pos);
            kept_cols.push(c);
        }
        let n = kept_cols.len();
        // Forward-solve L z = Xᵀy; explained sum of squares is ‖z‖².
        let mut z = vec![0.0; n];
        for a in 0..n {
            let mut v = self.xty[kept_cols[a]];
            for b in 0..a {
                v -= l[(a, b)] * z[b];
            }
            z[a] = v / l[(a, a)];
        }
        let explained: f64 = z.iter().map(|v| v * v).sum();
        let rss = (self.tss - explained).max(RSS_FLOOR);
        let g = self.g as f64;
        let bic = if n + 1 >= self.g { f64::INFINITY } else { g * (rss / g).ln() + (n + 1) as f64 * g.ln() };
        BicFit { bic, rss, kept }
    }
}

/// BIC = g·ln(RSS/g) + (k+1)·ln g for the OLS fit of y on [1, X_sub].
/// Collinear columns are dropped (the earliest one is kept) and not counted.
pub fn bic_of_subset(y: &DVector<f64>, x_sub: &DMatrix<f64>) -> Result<BicFit> {
    let mom = Moments::new(y, x_sub)?;
    let all: Vec<usize> = (0..x_sub.ncols()).collect();
    let fit = mom.fit(&all);
    if fit.kept.len() < all.len() {
        warn!("dropped {} collinear column(s) from the regression", all.len() - fit.kept.len());
    }
    if fit.kept.len() + 1 >= mom.g {
        return Err(Error::shape(format!("{} columns for {} observations", fit.kept.len(), mom.g)));
    }
    Ok(fit)
}

/// (bic, subset) ordering with a relative tie tolerance on BIC and
/// lexicographic order on subsets.
fn better(a: (f64, &[usize]), b: (f64, &[usize])) -> bool {
    let scale = 1.0f64.max(a.0.abs()).max(b.0.abs());
    if a.0.is_finite() && b.0.is_finite() && (a.0 - b.0).abs() <= TIE_TOL * scale {
        a.1 < b.1
    } else {
        a.0 < b.0
    }
}

/// Minimum-BIC subset of the candidate columns.
pub fn best_subset(y: &DVector<f64>, candidates: &DMatrix<f64>, opts: SelectionOptions) -> Result<SubsetResult> {
    let mom = Moments::new(y, candidates)?;
    let p = candidates.ncols();
    let mut trace = Vec::new();
    let (mut best_set, mut best_bic, method);
    if p <= opts.exhaustive_limit {
        method = SearchMethod::Exhaustive;
        best_set = Vec::new();
        best_bic = f64::INFINITY;
        for mask in 0u64..(1u64 << p) {
            let subset: Vec<usize> = (0..p).filter(|&j| mask >> j & 1 == 1).collect();
            let fit = mom.fit(&subset);
            // Subsets with dropped columns duplicate a smaller subset.
            if fit.kept.len() == subset.len() && better((fit.bic, &subset), (best_bic, &best_set)) {
                best_bic = fit.bic;
                best_set = subset.clone();
            }
            trace.push((subset, fit.bic));
        }
    } else {
        method = SearchMethod::Forward;
        best_set = Vec::new();
        best_bic = mom.fit(&best_set).bic;
        trace.push((Vec::new(), best_bic));
        loop {
            let mut step: Option<(Vec<usize>, f64)> = None;
            for j in 0..p {
                if best_set.contains(&j) {
                    continue;
                }
                let mut subset = best_set.clone();
                subset.push(j);
                subset.sort_unstable();
                let fit = mom.fit(&subset);
                trace.push((subset.clone(), fit.bic));
                if fit.kept.len() < subset.len() {
                    continue;
                }
                let replace = match &step {
                    None => true,
                    Some((s, b)) => better((fit.bic, &subset), (*b, s)),
                };
                if replace {
                    step = Some((subset, fit.bic));
                }
            }
            match step {
                Some((s, b)) if b < best_bic && !better((best_bic, &best_set), (b, &s)) => {
                    best_set = s;
                    best_bic = b;
                }
                _ => break,
            }
        }
    }
    Ok(SubsetResult { selected: best_set, bic: best_bic, trace, method })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(n: usize, m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(rng))
    }

    /// Normal-equations oracle on [1, X].
    fn oracle_bic(y: &DVector<f64>, x: &DMatrix<f64>) -> f64 {
        let g = y.len();
        let mut d = DMatrix::from_element(g, x.ncols() + 1, 1.0);
        d.view_mut((0, 1), (g, x.ncols())).copy_from(x);
        let beta = (d.transpose() * &d).try_inverse().unwrap() * d.transpose() * y;
        let rss = (y - &d * beta).norm_squared().max(RSS_FLOOR);
        g as f64 * (rss / g as f64).ln() + (x.ncols() + 1) as f64 * (g as f64).ln()
    }

    #[test]
    fn empty_subset_uses_total_sum_of_squares() {
        let y = DVector::from_row_slice(&[1.0, 2.0, 4.0, 7.0]);
        let fit = bic_of_subset(&y, &DMatrix::zeros(4, 0)).unwrap();
        let tss = y.add_scalar(-y.mean()).norm_squared();
        assert!((fit.rss - tss).abs() < 1e-12);
        assert!((fit.bic - (4.0 * (tss / 4.0).ln() + 4f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn perfect_fit_floored_and_chosen() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = normal(30, 4, &mut rng);
        let y = x.column(2).clone_owned();
        let fit = bic_of_subset(&y, &x.columns(2, 1).clone_owned()).unwrap();
        assert_eq!(fit.rss, RSS_FLOOR);
        assert_eq!(best_subset(&y, &x, SelectionOptions::default()).unwrap().selected, vec![2]);
    }

    #[test]
    fn matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let x = normal(25, 2, &mut rng);
            let y = DVector::from_iterator(25, normal(25, 1, &mut rng).iter().copied());
            let fit = bic_of_subset(&y, &x).unwrap();
            assert!((fit.bic - oracle_bic(&y, &x)).abs() < 1e-8);
        }
    }

    #[test]
    fn duplicate_column_keeps_lowest_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = normal(60, 9, &mut rng);
        let noise = normal(60, 1, &mut rng);
        let signal = x.column(2).clone_owned();
        x.set_column(7, &signal);
        let y = DVector::from_fn(60, |i, _| 2.0 * signal[i] + 0.3 * noise[(i, 0)]);
        let res = best_subset(&y, &x, SelectionOptions::default()).unwrap();
        assert!(res.selected.contains(&2) && !res.selected.contains(&7), "{:?}", res.selected);
        let fit = bic_of_subset(&y, &x.select_columns(&[2, 7])).unwrap();
        assert_eq!(fit.kept, vec![0]);
    }

    #[test]
    fn informative_and_null_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = 300;
        let (mut hits, mut empties) = (0, 0);
        for _ in 0..20 {
            let x = normal(g, 10, &mut rng);
            let e = normal(g, 1, &mut rng);
            // SNR 5: signal variance five times the noise variance.
            let y = DVector::from_fn(g, |i, _| 5f64.sqrt() * x[(i, 3)] + e[(i, 0)]);
            hits += (best_subset(&y, &x, SelectionOptions::default()).unwrap().selected == vec![3]) as usize;
            let null = DVector::from_iterator(g, e.iter().copied());
            empties += best_subset(&null, &x, SelectionOptions::default()).unwrap().selected.is_empty() as usize;
        }
        assert!(hits >= 17, "hits {hits}");
        assert!(empties >= 15, "empties {empties}");
    }

    #[test]
    fn forward_agrees_with_exhaustive_on_separated_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x = normal(200, 10, &mut rng);
            let e = normal(200, 1, &mut rng);
            let y = DVector::from_fn(200, |i, _| 2.0 * x[(i, 1)] - 1.5 * x[(i, 6)] + e[(i, 0)]);
            let ex = best_subset(&y, &x, SelectionOptions::default()).unwrap();
            let fw = best_subset(&y, &x, SelectionOptions { exhaustive_limit: 0 }).unwrap();
            assert_eq!(ex.method, SearchMethod::Exhaustive);
            assert_eq!(fw.method, SearchMethod::Forward);
            assert_eq!(ex.selected, fw.selected);
        }
    }

    #[test]
    fn selected_bic_not_worse_than_intercept() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = normal(50, 6, &mut rng);
        let y = DVector::from_fn(50, |i, _| x[(i, 0)] + x[(i, 4)]);
        let res = best_subset(&y, &x, SelectionOptions::default()).unwrap();
        let intercept = bic_of_subset(&y, &DMatrix::zeros(50, 0)).unwrap().bic;
        assert!(res.bic <= intercept);
        assert!(res.selected.windows(2).all(|w| w[0] < w[1]));
    }

    proptest! {
        #[test]
        fn invariant_to_positive_column_scaling(seed in 0u64..200, scale in 0.01f64..100.0, col in 0usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = normal(80, 6, &mut rng);
            let e = normal(80, 1, &mut rng);
            let y = DVector::from_fn(80, |i, _| x[(i, 1)] + 0.8 * e[(i, 0)]);
            let mut xs = x.clone();
            xs.column_mut(col).scale_mut(scale);
            let a = best_subset(&y, &x, SelectionOptions::default()).unwrap();
            let b = best_subset(&y, &xs, SelectionOptions::default()).unwrap();
            prop_assert_eq!(a.selected, b.selected);
        }
    }
}
