//! Brute-force oracles and random instances shared by integration tests.
#![allow(dead_code)]

use factorgp::design::{PlotAssignment, Stage, Timepoint, TrialDesign};
use factorgp::kinship::{partition_kinship, KinshipPartition};
use factorgp::symmat::{MatrixKind, SymMatrix};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn timepoints(tau: usize) -> Vec<Timepoint> {
    (0..tau)
        .map(|l| Timepoint { label: format!("t{l}"), day: l as f64, stage: Stage::Vegetative })
        .collect()
}

pub fn random_spd(n: usize, rng: &mut ChaCha8Rng, jitter: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
    &a * a.transpose() + DMatrix::identity(n, n) * jitter
}

/// Design with the given replicate count per genotype, plots genotype-major.
pub fn design_with_counts(counts: &[usize]) -> TrialDesign {
    let mut plots = Vec::new();
    let mut ids = Vec::new();
    for (c, &r) in counts.iter().enumerate() {
        for q in 0..r {
            plots.push(PlotAssignment { genotype: c, replicate: q });
            ids.push(format!("p{c}_{q}"));
        }
    }
    let geno = (0..counts.len()).map(|c| format!("g{c}")).collect();
    TrialDesign::new(geno, ids, plots, timepoints(2)).unwrap()
}

pub fn incidence(design: &TrialDesign) -> DMatrix<f64> {
    factorgp::design::build_incidence(design).unwrap()
}

/// Block matrix with block (a, b) = s[(a, b)] · m.
pub fn kron(s: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, q) = m.shape();
    DMatrix::from_fn(s.nrows() * p, s.ncols() * q, |i, j| s[(i / p, j / q)] * m[(i % p, j % q)])
}

pub fn vec_cols(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// A random BLUP instance: g genotypes split train/test, t traits, random
/// kinship, random covariances, unbalanced replication.
pub struct Instance {
    pub k: SymMatrix,
    pub part: KinshipPartition,
    pub design_o: TrialDesign,
    pub design_u: TrialDesign,
    pub y_o: DMatrix<f64>,
    pub y_u: DMatrix<f64>,
    pub sigma_g: DMatrix<f64>,
    pub sigma_e: DMatrix<f64>,
}

pub fn instance(seed: u64, g: usize, g_test: usize, t: usize) -> Instance {
    let mut r = rng(seed);
    let k = SymMatrix::symmetrized(random_spd(g, &mut r, 0.2), MatrixKind::Kinship).unwrap();
    let mut ids: Vec<usize> = (0..g).collect();
    for i in (1..g).rev() {
        let j = r.random_range(0..=i);
        ids.swap(i, j);
    }
    let (train, test) = ids.split_at(g - g_test);
    let part = partition_kinship(&k, train, test).unwrap();
    let counts_o: Vec<usize> = (0..train.len()).map(|_| r.random_range(1..=3)).collect();
    let counts_u: Vec<usize> = (0..test.len()).map(|_| r.random_range(1..=3)).collect();
    let design_o = design_with_counts(&counts_o);
    let design_u = design_with_counts(&counts_u);
    let y_o = DMatrix::from_fn(design_o.n_plots(), t, |_, j| r.random::<f64>() * 2.0 + j as f64);
    let y_u = DMatrix::from_fn(design_u.n_plots(), t, |_, j| r.random::<f64>() * 2.0 + j as f64);
    let sigma_g = random_spd(t, &mut r, 0.05);
    let sigma_e = random_spd(t, &mut r, 0.05);
    Instance { k, part, design_o, design_u, y_o, y_u, sigma_g, sigma_e }
}

/// Univariate mixed-model equations on plot data:
/// [XᵀX XᵀZ; ZᵀX ZᵀZ + (σ_E/σ_G)K⁻¹] [β; u] = [Xᵀy; Zᵀy].
pub fn mme_univariate(y: &DVector<f64>, z: &DMatrix<f64>, k: &DMatrix<f64>, sg: f64, se: f64) -> (f64, DVector<f64>) {
    let (n, g) = z.shape();
    let x = DMatrix::from_element(n, 1, 1.0);
    let kinv = k.clone().try_inverse().unwrap();
    let mut lhs = DMatrix::zeros(g + 1, g + 1);
    lhs.view_mut((0, 0), (1, 1)).copy_from(&(x.transpose() * &x));
    lhs.view_mut((0, 1), (1, g)).copy_from(&(x.transpose() * z));
    lhs.view_mut((1, 0), (g, 1)).copy_from(&(z.transpose() * &x));
    lhs.view_mut((1, 1), (g, g)).copy_from(&(z.transpose() * z + kinv * (se / sg)));
    let mut rhs = DVector::zeros(g + 1);
    rhs.rows_mut(0, 1).copy_from(&(x.transpose() * y));
    rhs.rows_mut(1, g).copy_from(&(z.transpose() * y));
    let sol = lhs.lu().solve(&rhs).unwrap();
    (sol[0], sol.rows(1, g).clone_owned())
}

pub struct DenseResult {
    pub beta: DVector<f64>,
    pub g_fo: DVector<f64>,
    pub g_fu_cv1: DVector<f64>,
    pub g_fu_cv2: DVector<f64>,
}

/// Joint-normal conditional expectations from explicitly inverted plot-level
/// covariances. The focal trait is the last column; CV2 conditions on the
/// test plots' non-focal columns as well, with β at its training GLS value.
pub fn dense_oracle(inst: &Instance) -> DenseResult {
    let t = inst.sigma_g.nrows();
    let f = t - 1;
    let zo = incidence(&inst.design_o);
    let zu = incidence(&inst.design_u);
    let (no, nu) = (zo.nrows(), zu.nrows());
    let (ko, kuo, ku) = (&inst.part.k_train, &inst.part.k_cross, &inst.part.k_test);

    let v = kron(&inst.sigma_g, &(&zo * ko * zo.transpose())) + kron(&inst.sigma_e, &DMatrix::identity(no, no));
    let vinv = v.clone().try_inverse().unwrap();
    let x = kron(&DMatrix::identity(t, t), &DMatrix::from_element(no, 1, 1.0));
    let y = vec_cols(&inst.y_o);
    let beta = (x.transpose() * &vinv * &x).try_inverse().unwrap() * x.transpose() * &vinv * &y;
    let resid = &y - &x * &beta;

    let sf = inst.sigma_g.rows(f, 1).clone_owned();
    let cov_fo = kron(&sf, &(ko * zo.transpose()));
    let g_fo = &cov_fo * &vinv * &resid;
    let cov_fu = kron(&sf, &(kuo * zo.transpose()));
    let g_fu_cv1 = &cov_fu * &vinv * &resid;

    // Append the test plots' secondary traits.
    let w = f;
    let sgw = inst.sigma_g.view((0, 0), (w, w)).clone_owned();
    let sew = inst.sigma_e.view((0, 0), (w, w)).clone_owned();
    let sg_ow = inst.sigma_g.view((0, 0), (t, w)).clone_owned();
    let v_uu = kron(&sgw, &(&zu * ku * zu.transpose())) + kron(&sew, &DMatrix::identity(nu, nu));
    let v_ou = kron(&sg_ow, &(&zo * kuo.transpose() * zu.transpose()));
    let nt = t * no + w * nu;
    let mut vj = DMatrix::zeros(nt, nt);
    vj.view_mut((0, 0), (t * no, t * no)).copy_from(&v);
    vj.view_mut((0, t * no), (t * no, w * nu)).copy_from(&v_ou);
    vj.view_mut((t * no, 0), (w * nu, t * no)).copy_from(&v_ou.transpose());
    vj.view_mut((t * no, t * no), (w * nu, w * nu)).copy_from(&v_uu);
    let yu = vec_cols(&inst.y_u.columns(0, w).clone_owned());
    let xu = kron(&DMatrix::identity(w, w), &DMatrix::from_element(nu, 1, 1.0));
    let ru = &yu - &xu * beta.rows(0, w);
    let mut rj = DVector::zeros(nt);
    rj.rows_mut(0, t * no).copy_from(&resid);
    rj.rows_mut(t * no, w * nu).copy_from(&ru);
    let sfw = inst.sigma_g.view((f, 0), (1, w)).clone_owned();
    let mut cj = DMatrix::zeros(kuo.nrows(), nt);
    cj.view_mut((0, 0), (kuo.nrows(), t * no)).copy_from(&cov_fu);
    cj.view_mut((0, t * no), (kuo.nrows(), w * nu)).copy_from(&kron(&sfw, &(ku * zu.transpose())));
    let g_fu_cv2 = cj * vj.try_inverse().unwrap() * rj;

    DenseResult { beta, g_fo, g_fu_cv1, g_fu_cv2 }
}
