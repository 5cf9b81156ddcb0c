//! Cross-timepoint alignment of factor loadings.
//!
//! Each timepoint's loadings are rotated towards a target by orthogonal
//! Procrustes; the rotation is then rounded to the nearest signed
//! permutation, which is the only part ever applied to the loadings.

use log::warn;
use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Column reordering with sign flips. Column j of `Λ·P` is
/// `signs[j] · Λ[:, perm[j]]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SignedPermutation {
    perm: Vec<usize>,
    signs: Vec<i8>,
}

impl SignedPermutation {
    pub fn identity(m: usize) -> Self {
        Self { perm: (0..m).collect(), signs: vec![1; m] }
    }

    pub fn new(perm: Vec<usize>, signs: Vec<i8>) -> Result<Self> {
        let m = perm.len();
        if signs.len() != m {
            return Err(Error::shape("permutation and sign vectors differ in length"));
        }
        let mut seen = vec![false; m];
        for &p in &perm {
            if p >= m || seen[p] {
                return Err(Error::Alignment(format!("{perm:?} is not a permutation")));
            }
            seen[p] = true;
        }
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::Alignment("signs must be ±1".into()));
        }
        Ok(Self { perm, signs })
    }

    /// Reads a matrix with exactly one ±1 per row and column.
    pub fn from_matrix(p: &DMatrix<f64>) -> Result<Self> {
        let m = p.ncols();
        if p.nrows() != m {
            return Err(Error::shape("signed permutation must be square"));
        }
        let mut perm = Vec::with_capacity(m);
        let mut signs = Vec::with_capacity(m);
        for j in 0..m {
            let nz: Vec<usize> = (0..m).filter(|&i| p[(i, j)] != 0.0).collect();
            if nz.len() != 1 || p[(nz[0], j)].abs() != 1.0 {
                return Err(Error::Alignment(format!("column {j} is not a signed unit vector")));
            }
            perm.push(nz[0]);
            signs.push(p[(nz[0], j)] as i8);
        }
        Self::new(perm, signs)
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(j, &p)| p == j) && self.signs.iter().all(|&s| s == 1)
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let m = self.dim();
        let mut p = DMatrix::zeros(m, m);
        for j in 0..m {
            p[(self.perm[j], j)] = self.signs[j] as f64;
        }
        p
    }

    /// `x · P`, exact (no floating-point products).
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.ncols(), self.dim());
        DMatrix::from_fn(x.nrows(), self.dim(), |i, j| {
            let v = x[(i, self.perm[j])];
            if self.signs[j] < 0 {
                -v
            } else {
                v
            }
        })
    }

    /// Pᵀ, which is also P⁻¹.
    pub fn inverse(&self) -> Self {
        let m = self.dim();
        let mut perm = vec![0; m];
        let mut signs = vec![1; m];
        for j in 0..m {
            perm[self.perm[j]] = j;
            signs[self.perm[j]] = self.signs[j];
        }
        Self { perm, signs }
    }

    /// `self · other` as matrices.
    pub fn then(&self, other: &SignedPermutation) -> Self {
        let m = self.dim();
        let perm = (0..m).map(|j| self.perm[other.perm[j]]).collect();
        let signs = (0..m).map(|j| self.signs[other.perm[j]] * other.signs[j]).collect();
        Self { perm, signs }
    }
}

/// Space-separated signed 1-based source columns, e.g. `2 -1` for a swap
/// that flips the new second column.
impl std::fmt::Display for SignedPermutation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for j in 0..self.dim() {
            if j > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{}", i64::from(self.signs[j]) * (self.perm[j] as i64 + 1))?;
        }
        Ok(())
    }
}

impl std::str::FromStr for SignedPermutation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut perm = Vec::new();
        let mut signs = Vec::new();
        for tok in s.split_whitespace() {
            let v: i64 = tok.parse().map_err(|_| Error::Parse(format!("bad permutation entry {tok:?}")))?;
            if v == 0 {
                return Err(Error::Parse("permutation entries are 1-based".into()));
            }
            perm.push(v.unsigned_abs() as usize - 1);
            signs.push(if v < 0 { -1 } else { 1 });
        }
        Self::new(perm, signs).map_err(|e| Error::Parse(format!("{s:?}: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Procrustes {
    /// Orthogonal m × m.
    pub rotation: DMatrix<f64>,
    /// sourceᵀ·target had a (numerically) zero singular value, so the
    /// rotation is not unique.
    pub rank_deficient: bool,
}

/// argmin_T ‖source·T − target‖_F over orthogonal T.
pub fn orthogonal_procrustes(source: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<Procrustes> {
    if source.shape() != target.shape() {
        return Err(Error::shape(format!("procrustes: {:?} vs {:?}", source.shape(), target.shape())));
    }
    if source.ncols() == 0 {
        return Err(Error::shape("procrustes needs at least one column"));
    }
    let svd = (source.transpose() * target).svd(true, true);
    let sv = &svd.singular_values;
    let top = sv.max();
    let rank_deficient = top <= 0.0 || sv.min() <= 1e-10 * top;
    if rank_deficient {
        warn!("procrustes cross-product is rank deficient; rotation not unique");
    }
    Ok(Procrustes { rotation: svd.u.unwrap() * svd.v_t.unwrap(), rank_deficient })
}

/// Maximum-weight perfect matching on a square matrix (Hungarian method,
/// O(m³)). Returns `assign[row] = column`.
pub fn max_weight_assignment(w: &DMatrix<f64>) -> Vec<usize> {
    let n = w.nrows();
    assert_eq!(n, w.ncols());
    if n == 0 {
        return Vec::new();
    }
    let top = w.max();
    // Minimize cost = top − w with 1-based potentials.
    let cost = |i: usize, j: usize| top - w[(i - 1, j - 1)];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    assign
}

/// Signed permutation maximizing Σ|T_ij| over the chosen entries, each
/// entry keeping the sign of T_ij.
pub fn smooth_to_signed_permutation(t: &DMatrix<f64>) -> Result<SignedPermutation> {
    let m = t.nrows();
    if t.ncols() != m || m == 0 {
        return Err(Error::shape(format!("smoothing needs a non-empty square matrix, got {:?}", t.shape())));
    }
    let abs = t.abs();
    for i in 0..m {
        if abs.row(i).max() == 0.0 {
            return Err(Error::AmbiguousAssignment(i));
        }
        if abs.column(i).max() == 0.0 {
            return Err(Error::AmbiguousAssignment(i));
        }
    }
    signed_assignment(t, &abs)
}

fn signed_assignment(t: &DMatrix<f64>, abs: &DMatrix<f64>) -> Result<SignedPermutation> {
    let m = t.nrows();
    let assign = max_weight_assignment(abs);
    let mut perm = vec![0; m];
    let mut signs = vec![1; m];
    for (i, &j) in assign.iter().enumerate() {
        perm[j] = i;
        signs[j] = if t[(i, j)] < 0.0 { -1 } else { 1 };
    }
    SignedPermutation::new(perm, signs)
}

/// Signed permutation P minimizing ‖source·P − target‖_F.
pub fn nearest_signed_permutation(source: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<SignedPermutation> {
    let c = source.transpose() * target;
    signed_assignment(&c, &c.abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedLoadingsSeries {
    pub raw: Vec<DMatrix<f64>>,
    pub rotations: Vec<DMatrix<f64>>,
    pub permutations: Vec<SignedPermutation>,
    pub aligned: Vec<DMatrix<f64>>,
    pub target: usize,
    /// Timepoints where the smoothed rotation moved the loadings away from
    /// the target and the Frobenius-nearest signed permutation was used.
    pub fallback: Vec<bool>,
    pub rank_deficient: Vec<bool>,
}

impl AlignedLoadingsSeries {
    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// Timepoints whose permutation is not the identity.
    pub fn switches(&self) -> Vec<usize> {
        (0..self.len()).filter(|&l| !self.permutations[l].is_identity()).collect()
    }
}

/// Align every loadings matrix to `loadings[target]`.
pub fn align_series(loadings: &[DMatrix<f64>], target: usize) -> Result<AlignedLoadingsSeries> {
    if target >= loadings.len() {
        return Err(Error::Alignment(format!("target {target} outside {} timepoints", loadings.len())));
    }
    let tgt = &loadings[target];
    for (l, lam) in loadings.iter().enumerate() {
        if lam.shape() != tgt.shape() {
            return Err(Error::Alignment(format!(
                "timepoint {l} has loadings {:?} but the target has {:?}; refit all timepoints at a common dimension",
                lam.shape(),
                tgt.shape()
            )));
        }
    }
    let m = tgt.ncols();
    let mut out = AlignedLoadingsSeries {
        raw: loadings.to_vec(),
        rotations: Vec::new(),
        permutations: Vec::new(),
        aligned: Vec::new(),
        target,
        fallback: Vec::new(),
        rank_deficient: Vec::new(),
    };
    for (l, lam) in loadings.iter().enumerate() {
        if l == target {
            out.rotations.push(DMatrix::identity(m, m));
            out.permutations.push(SignedPermutation::identity(m));
            out.aligned.push(lam.clone());
            out.fallback.push(false);
            out.rank_deficient.push(false);
            continue;
        }
        let pr = orthogonal_procrustes(lam, tgt)?;
        let mut p = match smooth_to_signed_permutation(&pr.rotation) {
            Ok(p) => p,
            Err(Error::AmbiguousAssignment(_)) => nearest_signed_permutation(lam, tgt)?,
            Err(e) => return Err(e),
        };
        let mut aligned = p.apply(lam);
        let mut fell_back = false;
        if (&aligned - tgt).norm() > (lam - tgt).norm() * (1.0 + 1e-12) {
            warn!("timepoint {l}: smoothed rotation increased the distance to the target; using the nearest signed permutation");
            p = nearest_signed_permutation(lam, tgt)?;
            aligned = p.apply(lam);
            fell_back = true;
        }
        out.rotations.push(pr.rotation);
        out.permutations.push(p);
        out.aligned.push(aligned);
        out.fallback.push(fell_back);
        out.rank_deficient.push(pr.rank_deficient);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_orthogonal(m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(m, m, |_, _| rng.random::<f64>() - 0.5);
        a.qr().q()
    }

    fn random_signed_perm(m: usize, rng: &mut ChaCha8Rng) -> SignedPermutation {
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(rng);
        let signs = (0..m).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
        SignedPermutation::new(perm, signs).unwrap()
    }

    fn weight(t: &DMatrix<f64>, assign: &[usize]) -> f64 {
        assign.iter().enumerate().map(|(i, &j)| t[(i, j)].abs()).sum()
    }

    /// All permutations of 0..m (Heap's algorithm would do; m is tiny).
    fn permutations(m: usize) -> Vec<Vec<usize>> {
        if m == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for rest in permutations(m - 1) {
            for pos in 0..=rest.len() {
                let mut p = rest.clone();
                p.insert(pos, m - 1);
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn matrix_roundtrip_and_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p = random_signed_perm(5, &mut rng);
            let mat = p.matrix();
            assert_eq!(SignedPermutation::from_matrix(&mat).unwrap(), p);
            assert_eq!(mat.transpose() * &mat, DMatrix::identity(5, 5));
            assert_eq!(p.inverse().matrix(), mat.transpose());
            let q = random_signed_perm(5, &mut rng);
            assert_eq!(p.then(&q).matrix(), &mat * q.matrix());
            let x = DMatrix::from_fn(3, 5, |_, _| rng.random::<f64>());
            assert_eq!(p.apply(&x), &x * &mat);
        }
    }

    #[test]
    fn procrustes_identity_and_constructed_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let target = DMatrix::from_fn(8, 3, |_, _| rng.random::<f64>() - 0.5);
        let t = orthogonal_procrustes(&target, &target).unwrap();
        assert!((t.rotation - DMatrix::identity(3, 3)).amax() < 1e-10);
        let q = random_orthogonal(3, &mut rng);
        let source = &target * q.transpose();
        let t = orthogonal_procrustes(&source, &target).unwrap();
        assert!((t.rotation - q).amax() < 1e-8);
    }

    #[test]
    fn procrustes_sign_flip_and_global_optimum() {
        let target = DMatrix::from_column_slice(3, 1, &[0.5, 0.2, -0.1]);
        let t = orthogonal_procrustes(&(-&target), &target).unwrap();
        assert!((t.rotation[(0, 0)] + 1.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = DMatrix::from_fn(10, 3, |_, _| rng.random::<f64>() - 0.5);
        let b = DMatrix::from_fn(10, 3, |_, _| rng.random::<f64>() - 0.5);
        let best = (&a * orthogonal_procrustes(&a, &b).unwrap().rotation - &b).norm();
        for _ in 0..500 {
            let q = random_orthogonal(3, &mut rng);
            assert!(best <= (&a * q - &b).norm() + 1e-12);
        }
    }

    #[test]
    fn rank_deficiency_flagged() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        assert!(orthogonal_procrustes(&a, &a).unwrap().rank_deficient);
    }

    #[test]
    fn signed_permutation_returned_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let p = random_signed_perm(4, &mut rng);
            assert_eq!(smooth_to_signed_permutation(&p.matrix()).unwrap(), p);
        }
    }

    #[test]
    fn thirty_degree_rotation_rounds_to_identity() {
        let a = 30f64.to_radians();
        let t = DMatrix::from_row_slice(2, 2, &[a.cos(), -a.sin(), a.sin(), a.cos()]);
        // Exhaustive oracle over the 8 signed permutations of size 2.
        let mut best = (f64::NEG_INFINITY, DMatrix::zeros(2, 2));
        for perm in permutations(2) {
            for s0 in [-1i8, 1] {
                for s1 in [-1i8, 1] {
                    let p = SignedPermutation::new(perm.clone(), vec![s0, s1]).unwrap().matrix();
                    let score = p.component_mul(&t).sum();
                    if score > best.0 {
                        best = (score, p);
                    }
                }
            }
        }
        assert_eq!(best.1, DMatrix::identity(2, 2));
        assert!(smooth_to_signed_permutation(&t).unwrap().is_identity());
    }

    #[test]
    fn noisy_permutation_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut hits = 0;
        for _ in 0..100 {
            let p0 = random_signed_perm(4, &mut rng);
            let noisy = p0.matrix() + DMatrix::from_fn(4, 4, |_, _| rng.random_range(-0.1..0.1));
            hits += (smooth_to_signed_permutation(&noisy).unwrap() == p0) as usize;
        }
        assert!(hits >= 99);
    }

    #[test]
    fn zero_row_is_ambiguous() {
        let t = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(smooth_to_signed_permutation(&t), Err(Error::AmbiguousAssignment(1))));
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in 1..=6 {
            for _ in 0..30 {
                let w = DMatrix::from_fn(m, m, |_, _| rng.random::<f64>());
                let a = max_weight_assignment(&w);
                let best = permutations(m).iter().map(|p| weight(&w, p)).fold(f64::NEG_INFINITY, f64::max);
                assert!((weight(&w, &a) - best).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hungarian_dominates_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let t = random_orthogonal(4, &mut rng);
            let hung = weight(&t, &max_weight_assignment(&t.abs()));
            // Greedy: each row takes its largest remaining column.
            let mut used = [false; 4];
            let mut greedy = 0.0;
            for i in 0..4 {
                let j = (0..4).filter(|&j| !used[j]).max_by(|&a, &b| t[(i, a)].abs().total_cmp(&t[(i, b)].abs())).unwrap();
                used[j] = true;
                greedy += t[(i, j)].abs();
            }
            assert!(hung >= greedy - 1e-12);
        }
    }

    #[test]
    fn constant_series_gives_identities() {
        let lam = DMatrix::from_row_slice(4, 2, &[0.8, 0.1, 0.7, 0.2, 0.1, 0.9, 0.2, 0.6]);
        let s = align_series(&vec![lam.clone(); 4], 1).unwrap();
        assert!(s.permutations.iter().all(|p| p.is_identity()));
        assert!(s.switches().is_empty());
    }

    #[test]
    fn permuted_series_realigned_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let target = DMatrix::from_fn(12, 3, |i, k| if i / 4 == k { 0.7 + 0.02 * i as f64 } else { 0.05 });
        let planted: Vec<SignedPermutation> = (0..6).map(|_| random_signed_perm(3, &mut rng)).collect();
        let mut series: Vec<DMatrix<f64>> = planted.iter().map(|p| p.inverse().apply(&target)).collect();
        series[2] = target.clone();
        let s = align_series(&series, 2).unwrap();
        for l in 0..6 {
            assert_eq!(s.aligned[l], target);
            if l != 2 {
                assert_eq!(s.permutations[l], planted[l]);
            }
        }
    }

    #[test]
    fn alignment_preserves_communalities_and_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let series: Vec<DMatrix<f64>> =
            (0..5).map(|_| DMatrix::from_fn(9, 2, |_, _| rng.random_range(-1.0..1.0))).collect();
        let s = align_series(&series, 0).unwrap();
        for l in 0..5 {
            let before: Vec<f64> = series[l].row_iter().map(|r| r.norm_squared()).collect();
            let after: Vec<f64> = s.aligned[l].row_iter().map(|r| r.norm_squared()).collect();
            assert_eq!(before, after);
            assert!((&s.aligned[l] - &series[0]).norm() <= (&series[l] - &series[0]).norm() * (1.0 + 1e-12));
        }
        let again = align_series(&s.aligned, 0).unwrap();
        assert!(again.permutations.iter().all(|p| p.is_identity()));
    }

    #[test]
    fn mismatched_dimensions_rejected() {
        let a = DMatrix::zeros(4, 2);
        let b = DMatrix::zeros(4, 3);
        assert!(matches!(align_series(&[a, b], 0), Err(Error::Alignment(_))));
    }
}
