//! Marker-based genomic relationship matrix and its train/test blocks.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{condition_number, select_block};
use crate::symmat::{MatrixKind, SymMatrix};

#[derive(Debug, Clone, Copy)]
pub struct GrmOptions {
    /// Markers with minor allele frequency below this are dropped.
    pub maf_min: f64,
    /// Added to the diagonal so downstream inverses exist.
    pub ridge: f64,
}

impl Default for GrmOptions {
    fn default() -> Self {
        Self { maf_min: 0.01, ridge: 1e-6 }
    }
}

/// VanRaden (method 1) relationship matrix K = WWᵀ / (2 Σ p_k(1-p_k)),
/// W = codes centered by 2p_k, plus `ridge`·I.
pub fn genomic_relationship(markers: &DMatrix<f64>, opts: GrmOptions) -> Result<SymMatrix> {
    let g = markers.nrows();
    if g == 0 {
        return Err(Error::EmptyMarkers);
    }
    if markers.iter().any(|&v| v != 0.0 && v != 1.0 && v != 2.0) {
        return Err(Error::Design("marker codes must be 0, 1 or 2".into()));
    }
    let mut keep = Vec::new();
    let mut denom = 0.0;
    let mut freqs = Vec::new();
    for (k, col) in markers.column_iter().enumerate() {
        let p = col.sum() / (2.0 * g as f64);
        let maf = p.min(1.0 - p);
        let variable = col.iter().any(|&v| v != col[0]);
        if maf < opts.maf_min || !variable || maf <= 0.0 {
            continue;
        }
        keep.push(k);
        freqs.push(p);
        denom += 2.0 * p * (1.0 - p);
    }
    if keep.is_empty() {
        return Err(Error::EmptyMarkers);
    }
    let w = DMatrix::from_fn(g, keep.len(), |i, j| markers[(i, keep[j])] - 2.0 * freqs[j]);
    let mut k = &w * w.transpose() / denom;
    for i in 0..g {
        k[(i, i)] += opts.ridge;
    }
    SymMatrix::symmetrized(k, MatrixKind::Kinship)
}

/// Training, cross and test blocks of one kinship matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KinshipPartition {
    pub k_train: DMatrix<f64>,
    /// g_u × g_o.
    pub k_cross: DMatrix<f64>,
    pub k_test: DMatrix<f64>,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub train_condition: f64,
}

pub fn partition_kinship(k: &SymMatrix, train_ids: &[usize], test_ids: &[usize]) -> Result<KinshipPartition> {
    let g = k.dim();
    let mut seen = vec![false; g];
    for &i in train_ids.iter().chain(test_ids) {
        if i >= g {
            return Err(Error::Partition(format!("id {i} outside kinship of size {g}")));
        }
        if seen[i] {
            return Err(Error::Partition(format!("id {i} listed twice or in both sets")));
        }
        seen[i] = true;
    }
    let m = k.matrix();
    let k_train = select_block(m, train_ids, train_ids);
    let train_condition = condition_number(&k_train);
    Ok(KinshipPartition {
        k_cross: select_block(m, test_ids, train_ids),
        k_test: select_block(m, test_ids, test_ids),
        k_train,
        train_ids: train_ids.to_vec(),
        test_ids: test_ids.to_vec(),
        train_condition,
    })
}
