//! Symmetric matrices tagged with what they represent, plus the two pieces of
//! matrix hygiene every estimator needs: covariance-to-correlation scaling and
//! eigenvalue-clipping repair of indefinite estimates.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{is_finite, sym_eigen_desc, symmetrize};

const SYM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixKind {
    Covariance,
    Correlation,
    Kinship,
}

/// Dense symmetric matrix with a kind flag.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    values: DMatrix<f64>,
    kind: MatrixKind,
}

impl SymMatrix {
    /// Validates symmetry and the diagonal constraints of `kind`.
    pub fn new(values: DMatrix<f64>, kind: MatrixKind) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::shape(format!(
                "symmetric matrix must be square, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if !is_finite(&values) {
            return Err(Error::NonFinite("symmetric matrix".into()));
        }
        let scale = values.amax().max(1.0);
        let asym = (&values - values.transpose()).amax();
        if asym > SYM_TOL * scale {
            return Err(Error::shape(format!("matrix not symmetric (max asymmetry {asym:e})")));
        }
        for (i, &d) in values.diagonal().iter().enumerate() {
            match kind {
                MatrixKind::Correlation if (d - 1.0).abs() > SYM_TOL => {
                    return Err(Error::DegenerateVariance { index: i, value: d })
                }
                MatrixKind::Covariance | MatrixKind::Kinship if d < -SYM_TOL * scale => {
                    return Err(Error::DegenerateVariance { index: i, value: d })
                }
                _ => {}
            }
        }
        Ok(Self { values, kind })
    }

    /// Averages `values` with its transpose before validation, which absorbs
    /// round-off asymmetry from file round trips or products.
    pub fn symmetrized(values: DMatrix<f64>, kind: MatrixKind) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::shape("symmetric matrix must be square"));
        }
        Self::new(symmetrize(&values), kind)
    }

    /// Skips validation; the caller guarantees a symmetric finite matrix.
    pub(crate) fn new_unchecked(values: DMatrix<f64>, kind: MatrixKind) -> Self {
        Self { values, kind }
    }

    pub fn identity(n: usize, kind: MatrixKind) -> Self {
        Self { values: DMatrix::identity(n, n), kind }
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn diagonal(&self) -> DVector<f64> {
        self.values.diagonal()
    }

    /// Descending eigenvalues.
    pub fn eigenvalues(&self) -> DVector<f64> {
        sym_eigen_desc(&self.values).0
    }
}

/// R = (S∘I)^(-1/2) S (S∘I)^(-1/2).
pub fn cov_to_cor(s: &SymMatrix) -> Result<SymMatrix> {
    let n = s.dim();
    let mut inv_sd = DVector::zeros(n);
    for i in 0..n {
        let d = s.values[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::DegenerateVariance { index: i, value: d });
        }
        inv_sd[i] = 1.0 / d.sqrt();
    }
    let mut r = DMatrix::from_fn(n, n, |i, j| s.values[(i, j)] * inv_sd[i] * inv_sd[j]);
    for i in 0..n {
        r[(i, i)] = 1.0;
        for j in 0..i {
            let v = 0.5 * (r[(i, j)] + r[(j, i)]);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    Ok(SymMatrix { values: r, kind: MatrixKind::Correlation })
}

/// Clip eigenvalues from below at `floor` and rebuild.
///
/// `floor` defaults to 1e-8 times the largest eigenvalue. Inputs whose
/// spectrum already clears the floor are returned unchanged. Correlation
/// inputs are re-standardized to unit diagonal after clipping.
pub fn nearest_psd(s: &SymMatrix, floor: Option<f64>) -> Result<SymMatrix> {
    if !is_finite(&s.values) {
        return Err(Error::NonFinite("nearest_psd input".into()));
    }
    let (vals, vecs) = sym_eigen_desc(&s.values);
    let n = vals.len();
    if n == 0 {
        return Ok(s.clone());
    }
    let top = vals[0];
    let floor = floor.unwrap_or(1e-8 * top.abs().max(f64::MIN_POSITIVE));
    if vals.iter().all(|&v| v >= floor) {
        return Ok(s.clone());
    }
    let clipped = vals.map(|v| v.max(floor));
    let rebuilt = symmetrize(&(&vecs * DMatrix::from_diagonal(&clipped) * vecs.transpose()));
    let out = SymMatrix { values: rebuilt, kind: s.kind };
    match s.kind {
        MatrixKind::Correlation => cov_to_cor(&SymMatrix { kind: MatrixKind::Covariance, ..out }),
        _ => Ok(out),
    }
}
