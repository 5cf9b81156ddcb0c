//! Synthetic trials with a planted factor structure.
//!
//! Per timepoint l the secondary genetic values are Gˡ = ξˡΛˡᵀ + SˡΨ^{1/2},
//! with factor scores ξˡ = √π·F + √(1−π)·Uˡ. F, Uˡ and Sˡ are matrix-normal
//! with row covariance K and identity column covariance, so the genetic
//! covariance of the secondary traits is ΛˡΛˡᵀ + Ψ. The focal genetic value
//! is a combination of the persistent scores F plus an independent residual.
//!
//! Heritabilities here are plot-level: h² = σ_G / (σ_G + σ_E).

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::design::{Stage, Timepoint, TrialDataset, TrialDesign};
use crate::error::{Error, Result};
use crate::kinship::{genomic_relationship, GrmOptions};
use crate::linalg::sym_eigen_desc;
use crate::procrustes::SignedPermutation;
use crate::symmat::{MatrixKind, SymMatrix};

#[derive(Debug, Clone, PartialEq)]
pub enum LoadingSpec {
    /// Trait j loads only on the factor whose block contains it. `starts`
    /// holds the first trait index of each block (so `starts[0] == 0`);
    /// `strengths` holds one row of per-factor loadings per timepoint, or a
    /// single row reused for all timepoints.
    Blocks { starts: Vec<usize>, strengths: Vec<Vec<f64>> },
    /// One s × m matrix per timepoint.
    Explicit(Vec<DMatrix<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResidualSpec {
    /// Σ_E = D·C·D with D² = diag(Σ_G)(1 − h²)/h² and C_ij = ρ^|i−j|.
    Heritability { h2: f64, correlation: f64 },
    /// One s × s matrix per timepoint.
    Explicit(Vec<SymMatrix>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub g: usize,
    pub r: usize,
    pub trait_labels: Vec<String>,
    pub timepoints: Vec<Timepoint>,
    /// Marker count; 0 means independent genotypes (K = I) and no markers.
    pub n_markers: usize,
    pub loadings: LoadingSpec,
    /// Ψ₀, one value per secondary trait.
    pub uniqueness: Vec<f64>,
    pub residual: ResidualSpec,
    /// Fraction of factor-score variance shared across timepoints.
    pub persistence: f64,
    pub focal_h2: f64,
    /// Genetic correlation of the focal trait with each persistent factor.
    pub focal_correlation: Vec<f64>,
    pub focal_mean: f64,
    /// Timepoint index → signed permutation of the factor labels.
    pub switches: Vec<(usize, SignedPermutation)>,
    pub seed: u64,
}

/// Timepoints one week apart labelled T01, T02, …; the first 40% are
/// vegetative, the next 30% heading, the rest grain filling.
pub fn staged_timepoints(tau: usize) -> Vec<Timepoint> {
    let veg = (0.4 * tau as f64).round() as usize;
    let head = (0.3 * tau as f64).round() as usize;
    (0..tau)
        .map(|l| Timepoint {
            label: format!("T{:02}", l + 1),
            day: 7.0 * l as f64,
            stage: if l < veg {
                Stage::Vegetative
            } else if l < veg + head {
                Stage::Heading
            } else {
                Stage::GrainFilling
            },
        })
        .collect()
}

impl SimConfig {
    /// Two equal blocks, moderate loadings, no label switches.
    pub fn two_factor(g: usize, r: usize, s: usize, tau: usize, seed: u64) -> Self {
        Self {
            g,
            r,
            trait_labels: (0..s).map(|j| format!("W{:02}", j + 1)).collect(),
            timepoints: staged_timepoints(tau),
            n_markers: 0,
            loadings: LoadingSpec::Blocks { starts: vec![0, s / 2], strengths: vec![vec![0.8, 0.8]] },
            uniqueness: vec![0.36; s],
            residual: ResidualSpec::Heritability { h2: 0.8, correlation: 0.0 },
            persistence: 1.0,
            focal_h2: 0.3,
            focal_correlation: vec![0.8, 0.0],
            focal_mean: 0.0,
            switches: Vec::new(),
            seed,
        }
    }

    pub fn n_traits(&self) -> usize {
        self.trait_labels.len()
    }

    pub fn n_timepoints(&self) -> usize {
        self.timepoints.len()
    }

    pub fn n_factors(&self) -> usize {
        match &self.loadings {
            LoadingSpec::Blocks { starts, .. } => starts.len(),
            LoadingSpec::Explicit(l) => l.first().map_or(0, |x| x.ncols()),
        }
    }

    /// Planted loadings per timepoint before any label switch.
    pub fn base_loadings(&self) -> Result<Vec<DMatrix<f64>>> {
        let (s, tau) = (self.n_traits(), self.n_timepoints());
        match &self.loadings {
            LoadingSpec::Blocks { starts, strengths } => {
                let m = starts.len();
                if m == 0 || starts[0] != 0 || starts.windows(2).any(|w| w[1] <= w[0]) || starts[m - 1] >= s {
                    return Err(Error::Config("block starts must begin at 0 and increase within the trait range".into()));
                }
                if !(strengths.len() == 1 || strengths.len() == tau) || strengths.iter().any(|row| row.len() != m) {
                    return Err(Error::Config(format!("block strengths need 1 or {tau} rows of {m} values")));
                }
                Ok((0..tau)
                    .map(|l| {
                        let row = &strengths[if strengths.len() == 1 { 0 } else { l }];
                        DMatrix::from_fn(s, m, |j, k| {
                            let end = starts.get(k + 1).copied().unwrap_or(s);
                            if j >= starts[k] && j < end {
                                row[k]
                            } else {
                                0.0
                            }
                        })
                    })
                    .collect())
            }
            LoadingSpec::Explicit(ls) => {
                if ls.len() != tau || ls.iter().any(|l| l.nrows() != s || l.ncols() != ls[0].ncols()) {
                    return Err(Error::Config(format!("explicit loadings need {tau} matrices of {s} rows")));
                }
                Ok(ls.clone())
            }
        }
    }

    /// Σ_G of the secondary traits at each timepoint.
    pub fn genetic_covariances(&self) -> Result<Vec<SymMatrix>> {
        let psi = DMatrix::from_diagonal(&DVector::from_column_slice(&self.uniqueness));
        self.base_loadings()?
            .iter()
            .map(|l| SymMatrix::symmetrized(l * l.transpose() + &psi, MatrixKind::Covariance))
            .collect()
    }

    pub fn residual_covariances(&self, sigma_g: &[SymMatrix]) -> Result<Vec<SymMatrix>> {
        match &self.residual {
            ResidualSpec::Heritability { h2, correlation } => sigma_g
                .iter()
                .map(|sg| {
                    let d = sg.diagonal().map(|v| (v * (1.0 - h2) / h2).sqrt());
                    let s = d.len();
                    let m = DMatrix::from_fn(s, s, |i, j| {
                        d[i] * d[j] * correlation.powi((i as i32 - j as i32).abs())
                    });
                    SymMatrix::symmetrized(m, MatrixKind::Covariance)
                })
                .collect(),
            ResidualSpec::Explicit(v) => Ok(v.clone()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (s, tau, m) = (self.n_traits(), self.n_timepoints(), self.n_factors());
        let bad = |msg: String| Err(Error::Config(msg));
        if self.g < 3 {
            return bad(format!("need at least 3 genotypes, got {}", self.g));
        }
        if self.r == 0 {
            return bad("need at least one replicate".into());
        }
        if s < 2 {
            return bad(format!("need at least 2 secondary traits, got {s}"));
        }
        if tau < 2 {
            return bad(format!("need at least 2 timepoints, got {tau}"));
        }
        TrialDesign::balanced(1, 1, self.timepoints.clone()).map_err(|e| Error::Config(e.to_string()))?;
        if self.uniqueness.len() != s || self.uniqueness.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return bad(format!("uniqueness needs {s} non-negative values"));
        }
        if !(0.0..=1.0).contains(&self.persistence) {
            return bad(format!("persistence {} outside [0, 1]", self.persistence));
        }
        if !(0.0..=1.0).contains(&self.focal_h2) {
            return bad(format!("focal heritability {} outside [0, 1]", self.focal_h2));
        }
        if self.focal_correlation.len() != m {
            return bad(format!("{} focal correlations for {m} factors", self.focal_correlation.len()));
        }
        let explained: f64 = self.focal_correlation.iter().map(|c| c * c).sum();
        if explained > 1.0 + 1e-12 {
            return bad(format!("focal correlations explain {explained:.3} > 1 of the focal genetic variance"));
        }
        let sigma_g = self.genetic_covariances()?;
        for (l, sg) in sigma_g.iter().enumerate() {
            if sg.diagonal().iter().any(|&v| v <= 0.0) {
                return bad(format!("timepoint {l}: a secondary trait has zero genetic variance"));
            }
        }
        match &self.residual {
            ResidualSpec::Heritability { h2, correlation } => {
                if !(*h2 > 0.0 && *h2 <= 1.0) {
                    return bad(format!("secondary heritability {h2} outside (0, 1]"));
                }
                if !(correlation.abs() < 1.0) {
                    return bad(format!("residual correlation {correlation} outside (-1, 1)"));
                }
            }
            ResidualSpec::Explicit(v) => {
                if v.len() != tau || v.iter().any(|e| e.dim() != s) {
                    return bad(format!("explicit residuals need {tau} matrices of size {s}"));
                }
                for (l, e) in v.iter().enumerate() {
                    let min = e.eigenvalues().min();
                    if min < -1e-10 * e.matrix().amax().max(1.0) {
                        return bad(format!("timepoint {l}: residual covariance not PSD (λ_min = {min:.3e})"));
                    }
                }
            }
        }
        for (l, p) in &self.switches {
            if *l >= tau || p.dim() != m {
                return bad(format!("switch at timepoint {l} must be a {m}-factor permutation within 0..{tau}"));
            }
        }
        Ok(())
    }

    /// Permutation applied at timepoint l (identity when unscheduled).
    pub fn switch_at(&self, l: usize) -> SignedPermutation {
        self.switches
            .iter()
            .rev()
            .find(|(t, _)| *t == l)
            .map(|(_, p)| p.clone())
            .unwrap_or_else(|| SignedPermutation::identity(self.n_factors()))
    }
}

/// Dimensions and structure resembling a hyperspectral wheat trial: 1033
/// genotypes, three replicates, 62 wavebands from 385 nm in 7.5 nm steps,
/// ten weekly timepoints and 8519 markers. Wavebands below 700 nm load on
/// the first factor, the rest on the second; the last two timepoints carry
/// a swapped factor labelling.
pub fn preset_cimmyt_like(seed: u64) -> SimConfig {
    let s = 62;
    let tau = 10;
    let wavelengths: Vec<f64> = (0..s).map(|j| 385.0 + 7.5 * j as f64).collect();
    let split = wavelengths.iter().position(|&w| w >= 700.0).unwrap_or(s);
    let swap = SignedPermutation::new(vec![1, 0], vec![1, 1]).expect("valid permutation");
    SimConfig {
        g: 1033,
        r: 3,
        trait_labels: wavelengths.iter().map(|w| format!("nm{w}")).collect(),
        timepoints: staged_timepoints(tau),
        n_markers: 8519,
        loadings: LoadingSpec::Blocks {
            starts: vec![0, split],
            strengths: (0..tau).map(|l| if l < tau - 2 { vec![0.85, 0.7] } else { vec![0.7, 0.85] }).collect(),
        },
        uniqueness: vec![0.25; s],
        residual: ResidualSpec::Heritability { h2: 0.7, correlation: 0.9 },
        persistence: 0.8,
        focal_h2: 0.61,
        focal_correlation: vec![0.5, 0.4],
        focal_mean: 5.6,
        switches: vec![(tau - 2, swap.clone()), (tau - 1, swap)],
        seed,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub kinship: SymMatrix,
    /// Persistent factor scores F (g × m), unswitched.
    pub persistent_scores: DMatrix<f64>,
    /// ξˡ per timepoint in the switched labelling.
    pub factor_scores: Vec<DMatrix<f64>>,
    /// Λˡ per timepoint in the switched labelling.
    pub loadings: Vec<DMatrix<f64>>,
    pub permutations: Vec<SignedPermutation>,
    /// Secondary genetic values per timepoint (g × s).
    pub genetic: Vec<DMatrix<f64>>,
    pub focal_genetic: DVector<f64>,
    pub sigma_g: Vec<SymMatrix>,
    pub sigma_e: Vec<SymMatrix>,
    pub focal_sigma_g: f64,
    pub focal_sigma_e: f64,
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Symmetric square root of a PSD matrix (negative eigenvalues clipped).
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen_desc(m);
    let d = DMatrix::from_diagonal(&vals.map(|v| v.max(0.0).sqrt()));
    &vecs * d * vecs.transpose()
}

pub fn simulate_trial(config: &SimConfig) -> Result<(TrialDataset, SimTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (g, r, s, tau, m) = (config.g, config.r, config.n_traits(), config.n_timepoints(), config.n_factors());

    let (markers, kinship) = if config.n_markers == 0 {
        (DMatrix::zeros(g, 0), SymMatrix::identity(g, MatrixKind::Kinship))
    } else {
        let freq = Uniform::new_inclusive(0.05, 0.5).map_err(|e| Error::Config(e.to_string()))?;
        let p: Vec<f64> = (0..config.n_markers).map(|_| freq.sample(&mut rng)).collect();
        let mut markers = DMatrix::zeros(g, config.n_markers);
        for k in 0..config.n_markers {
            for c in 0..g {
                let a = (rand::Rng::random::<f64>(&mut rng) < p[k]) as u8;
                let b = (rand::Rng::random::<f64>(&mut rng) < p[k]) as u8;
                markers[(c, k)] = f64::from(a + b);
            }
        }
        let k = genomic_relationship(&markers, GrmOptions::default())?;
        (markers, k)
    };
    // Row-correlating factor L_K (None when K = I).
    let l_k = if config.n_markers == 0 {
        None
    } else {
        let chol = kinship.matrix().clone().cholesky();
        Some(chol.ok_or_else(|| Error::NotPositiveDefinite("simulated kinship".into()))?.l())
    };
    let correlate = |z: DMatrix<f64>| match &l_k {
        Some(l) => l * z,
        None => z,
    };

    let sigma_g = config.genetic_covariances()?;
    let sigma_e = config.residual_covariances(&sigma_g)?;
    let base = config.base_loadings()?;
    let sqrt_psi = DVector::from_iterator(s, config.uniqueness.iter().map(|v| v.sqrt()));

    let persistent = correlate(normal_matrix(&mut rng, g, m));
    let design = TrialDesign::balanced(g, r, config.timepoints.clone())?;
    let n = design.n_plots();

    let (a, b) = (config.persistence.sqrt(), (1.0 - config.persistence).sqrt());
    let mut truth_scores = Vec::with_capacity(tau);
    let mut truth_loadings = Vec::with_capacity(tau);
    let mut permutations = Vec::with_capacity(tau);
    let mut genetic = Vec::with_capacity(tau);
    let mut secondary = Vec::with_capacity(tau);
    for l in 0..tau {
        let xi = &persistent * a + correlate(normal_matrix(&mut rng, g, m)) * b;
        let specific = correlate(normal_matrix(&mut rng, g, s)) * DMatrix::from_diagonal(&sqrt_psi);
        let gl = &xi * base[l].transpose() + specific;
        let e_root = psd_sqrt(sigma_e[l].matrix());
        let noise = normal_matrix(&mut rng, n, s) * e_root;
        let y = DMatrix::from_fn(n, s, |i, j| gl[(design.genotype_of(i), j)] + noise[(i, j)]);
        let p = config.switch_at(l);
        truth_scores.push(p.apply(&xi));
        truth_loadings.push(p.apply(&base[l]));
        permutations.push(p);
        genetic.push(gl);
        secondary.push(y);
    }

    let explained: f64 = config.focal_correlation.iter().map(|c| c * c).sum();
    let resid = correlate(normal_matrix(&mut rng, g, 1));
    let rho = DVector::from_column_slice(&config.focal_correlation);
    let focal_genetic = (&persistent * rho + resid.column(0) * (1.0 - explained).max(0.0).sqrt()) * config.focal_h2.sqrt();
    let focal_noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let sd_e = (1.0 - config.focal_h2).sqrt();
    let focal = DVector::from_fn(n, |i, _| config.focal_mean + focal_genetic[design.genotype_of(i)] + sd_e * focal_noise[i]);

    let dataset = TrialDataset {
        design,
        secondary,
        focal,
        trait_labels: config.trait_labels.clone(),
        markers,
        kinship: if config.n_markers == 0 { Some(kinship.clone()) } else { None },
    };
    dataset.validate()?;
    let truth = SimTruth {
        kinship,
        persistent_scores: persistent,
        factor_scores: truth_scores,
        loadings: truth_loadings,
        permutations,
        genetic,
        focal_genetic,
        sigma_g,
        sigma_e,
        focal_sigma_g: config.focal_h2,
        focal_sigma_e: 1.0 - config.focal_h2,
    };
    Ok((dataset, truth))
}
