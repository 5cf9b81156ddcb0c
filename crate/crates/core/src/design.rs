//! Trial bookkeeping: which plot belongs to which genotype, when each
//! timepoint was recorded, and the per-genotype BLUE/residual split of plot
//! data.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::symmat::SymMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Vegetative,
    Heading,
    GrainFilling,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Vegetative => "vegetative",
            Stage::Heading => "heading",
            Stage::GrainFilling => "grain-filling",
        })
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "vegetative" => Ok(Stage::Vegetative),
            "heading" => Ok(Stage::Heading),
            "grain-filling" | "grainfilling" => Ok(Stage::GrainFilling),
            other => Err(Error::Parse(format!("unknown stage label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timepoint {
    pub label: String,
    /// Day offset (or any increasing numeric time coordinate).
    pub day: f64,
    pub stage: Stage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlotAssignment {
    pub genotype: usize,
    pub replicate: usize,
}

/// Resolved field design: plots, their genotypes and replicates, and the
/// measurement timepoints.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDesign {
    genotype_ids: Vec<String>,
    plot_ids: Vec<String>,
    plots: Vec<PlotAssignment>,
    timepoints: Vec<Timepoint>,
}

impl TrialDesign {
    pub fn new(
        genotype_ids: Vec<String>,
        plot_ids: Vec<String>,
        plots: Vec<PlotAssignment>,
        timepoints: Vec<Timepoint>,
    ) -> Result<Self> {
        if plot_ids.len() != plots.len() {
            return Err(Error::Design(format!(
                "{} plot ids for {} plot assignments",
                plot_ids.len(),
                plots.len()
            )));
        }
        for (i, p) in plots.iter().enumerate() {
            if p.genotype >= genotype_ids.len() {
                return Err(Error::Design(format!(
                    "plot {} maps to unknown genotype index {}",
                    plot_ids[i], p.genotype
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for p in &plots {
            if !seen.insert((p.genotype, p.replicate)) {
                return Err(Error::Design(format!(
                    "genotype {} replicate {} assigned to more than one plot",
                    genotype_ids[p.genotype], p.replicate
                )));
            }
        }
        for w in timepoints.windows(2) {
            if !(w[1].day > w[0].day) {
                return Err(Error::Design(format!(
                    "timepoints must be strictly increasing ({} then {})",
                    w[0].label, w[1].label
                )));
            }
        }
        Ok(Self { genotype_ids, plot_ids, plots, timepoints })
    }

    /// Balanced design with plots ordered genotype-major.
    pub fn balanced(g: usize, r: usize, timepoints: Vec<Timepoint>) -> Result<Self> {
        let genotype_ids = (0..g).map(|c| format!("G{:04}", c + 1)).collect();
        let mut plot_ids = Vec::with_capacity(g * r);
        let mut plots = Vec::with_capacity(g * r);
        for c in 0..g {
            for q in 0..r {
                plot_ids.push(format!("P{:05}", c * r + q + 1));
                plots.push(PlotAssignment { genotype: c, replicate: q });
            }
        }
        Self::new(genotype_ids, plot_ids, plots, timepoints)
    }

    pub fn n_genotypes(&self) -> usize {
        self.genotype_ids.len()
    }

    pub fn n_plots(&self) -> usize {
        self.plots.len()
    }

    pub fn n_timepoints(&self) -> usize {
        self.timepoints.len()
    }

    pub fn genotype_ids(&self) -> &[String] {
        &self.genotype_ids
    }

    pub fn plot_ids(&self) -> &[String] {
        &self.plot_ids
    }

    pub fn plots(&self) -> &[PlotAssignment] {
        &self.plots
    }

    pub fn timepoints(&self) -> &[Timepoint] {
        &self.timepoints
    }

    pub fn genotype_of(&self, plot: usize) -> usize {
        self.plots[plot].genotype
    }

    /// Number of plots per genotype (r_c).
    pub fn replicate_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_genotypes()];
        for p in &self.plots {
            counts[p.genotype] += 1;
        }
        counts
    }

    /// Common replicate count when the design is balanced.
    pub fn replicate_count(&self) -> Option<usize> {
        let counts = self.replicate_counts();
        let first = *counts.first()?;
        counts.iter().all(|&c| c == first).then_some(first)
    }

    /// Harmonic-mean replicate count, the r used in Σ_P = Σ_G + r⁻¹Σ_E for
    /// unbalanced designs. Equals r when balanced.
    pub fn effective_replicates(&self) -> f64 {
        if let Some(r) = self.replicate_count() {
            return r as f64;
        }
        let counts = self.replicate_counts();
        let inv: f64 = counts.iter().map(|&c| 1.0 / c.max(1) as f64).sum();
        counts.len() as f64 / inv
    }

    /// Plot indices grouped by genotype.
    pub fn plots_by_genotype(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.n_genotypes()];
        for (i, p) in self.plots.iter().enumerate() {
            groups[p.genotype].push(i);
        }
        groups
    }

    /// Timepoint indices carrying one of the given stage labels.
    pub fn timepoints_in(&self, stages: &[Stage]) -> Vec<usize> {
        (0..self.timepoints.len()).filter(|&l| stages.contains(&self.timepoints[l].stage)).collect()
    }

    /// Restrict to a genotype subset (new genotype order = `genotypes`).
    /// Returns the sub-design and the original indices of its plots.
    pub fn restrict(&self, genotypes: &[usize]) -> Result<(TrialDesign, Vec<usize>)> {
        let mut remap = vec![usize::MAX; self.n_genotypes()];
        for (new, &old) in genotypes.iter().enumerate() {
            if old >= self.n_genotypes() {
                return Err(Error::Design(format!("genotype index {old} out of range")));
            }
            if remap[old] != usize::MAX {
                return Err(Error::Design(format!("genotype index {old} listed twice")));
            }
            remap[old] = new;
        }
        let groups = self.plots_by_genotype();
        let mut rows = Vec::new();
        let mut plots = Vec::new();
        let mut plot_ids = Vec::new();
        for &old in genotypes {
            for &i in &groups[old] {
                rows.push(i);
                plots.push(PlotAssignment { genotype: remap[old], replicate: self.plots[i].replicate });
                plot_ids.push(self.plot_ids[i].clone());
            }
        }
        let ids = genotypes.iter().map(|&c| self.genotype_ids[c].clone()).collect();
        Ok((TrialDesign::new(ids, plot_ids, plots, self.timepoints.clone())?, rows))
    }

    pub fn with_timepoints(&self, keep: &[usize]) -> TrialDesign {
        TrialDesign {
            timepoints: keep.iter().map(|&l| self.timepoints[l].clone()).collect(),
            ..self.clone()
        }
    }
}

/// Plot-level secondary traits per timepoint, the focal trait and markers.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    pub design: TrialDesign,
    /// One n × s matrix per timepoint.
    pub secondary: Vec<DMatrix<f64>>,
    /// Focal trait per plot.
    pub focal: DVector<f64>,
    pub trait_labels: Vec<String>,
    /// g × p marker codes in {0, 1, 2}; may have zero columns when a
    /// precomputed kinship is supplied instead.
    pub markers: DMatrix<f64>,
    pub kinship: Option<SymMatrix>,
}

impl TrialDataset {
    pub fn validate(&self) -> Result<()> {
        let n = self.design.n_plots();
        let s = self.trait_labels.len();
        let tau = self.design.n_timepoints();
        if s < 2 {
            return Err(Error::Design(format!("need at least 2 secondary traits, got {s}")));
        }
        if tau < 2 {
            return Err(Error::Design(format!("need at least 2 timepoints, got {tau}")));
        }
        if self.secondary.len() != tau {
            return Err(Error::shape(format!("{} secondary slices for {tau} timepoints", self.secondary.len())));
        }
        for (l, y) in self.secondary.iter().enumerate() {
            if y.nrows() != n || y.ncols() != s {
                return Err(Error::shape(format!(
                    "timepoint {l}: secondary slice is {}x{}, expected {n}x{s}",
                    y.nrows(),
                    y.ncols()
                )));
            }
            if !crate::linalg::is_finite(y) {
                return Err(Error::NonFinite(format!("secondary traits at timepoint {l}")));
            }
        }
        if self.focal.len() != n {
            return Err(Error::shape(format!("focal has {} rows for {n} plots", self.focal.len())));
        }
        if self.focal.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("focal trait".into()));
        }
        let g = self.design.n_genotypes();
        match &self.kinship {
            Some(k) if k.dim() != g => {
                return Err(Error::shape(format!("kinship is {}x{0}, expected {g}x{g}", k.dim())))
            }
            Some(_) => {}
            None => {
                if self.markers.nrows() != g || self.markers.ncols() == 0 {
                    return Err(Error::shape(format!(
                        "markers are {}x{}, expected {g} rows and at least one column",
                        self.markers.nrows(),
                        self.markers.ncols()
                    )));
                }
                if self.markers.iter().any(|&v| v != 0.0 && v != 1.0 && v != 2.0) {
                    return Err(Error::Design("marker codes must be 0, 1 or 2".into()));
                }
            }
        }
        if self.design.replicate_counts().iter().any(|&c| c == 0) {
            return Err(Error::Design("every genotype needs at least one plot".into()));
        }
        Ok(())
    }

    pub fn n_traits(&self) -> usize {
        self.trait_labels.len()
    }
}

/// Zero/one incidence matrix Z (n × g).
pub fn build_incidence(design: &TrialDesign) -> Result<DMatrix<f64>> {
    let g = design.n_genotypes();
    let mut z = DMatrix::zeros(design.n_plots(), g);
    for (i, p) in design.plots().iter().enumerate() {
        if p.genotype >= g {
            return Err(Error::Design(format!("plot {i} maps to unknown genotype {}", p.genotype)));
        }
        z[(i, p.genotype)] = 1.0;
    }
    Ok(z)
}

/// Genotype means (BLUEs under a resolved design), g × s.
pub fn genotype_blues(y: &DMatrix<f64>, design: &TrialDesign) -> Result<DMatrix<f64>> {
    if y.nrows() != design.n_plots() {
        return Err(Error::shape(format!("{} data rows for {} plots", y.nrows(), design.n_plots())));
    }
    let g = design.n_genotypes();
    let mut sums = DMatrix::zeros(g, y.ncols());
    let mut counts = vec![0usize; g];
    for (i, p) in design.plots().iter().enumerate() {
        counts[p.genotype] += 1;
        let mut row = sums.row_mut(p.genotype);
        row += y.row(i);
    }
    for (c, &k) in counts.iter().enumerate() {
        if k == 0 {
            return Err(Error::MissingGenotype(design.genotype_ids()[c].clone()));
        }
        let mut row = sums.row_mut(c);
        row /= k as f64;
    }
    Ok(sums)
}

/// Plot value minus its genotype's BLUE.
pub fn plot_residuals(y: &DMatrix<f64>, blues: &DMatrix<f64>, design: &TrialDesign) -> Result<DMatrix<f64>> {
    if y.nrows() != design.n_plots() || blues.nrows() != design.n_genotypes() || y.ncols() != blues.ncols() {
        return Err(Error::shape(format!(
            "residuals: data {}x{}, blues {}x{}, design {} plots / {} genotypes",
            y.nrows(),
            y.ncols(),
            blues.nrows(),
            blues.ncols(),
            design.n_plots(),
            design.n_genotypes()
        )));
    }
    let mut out = y.clone();
    for (i, p) in design.plots().iter().enumerate() {
        let mut row = out.row_mut(i);
        row -= blues.row(p.genotype);
    }
    Ok(out)
}

/// Expand genotype rows back to plots (Z · blues).
pub fn expand_to_plots(blues: &DMatrix<f64>, design: &TrialDesign) -> DMatrix<f64> {
    DMatrix::from_fn(design.n_plots(), blues.ncols(), |i, j| blues[(design.genotype_of(i), j)])
}

#[cfg(test)]
pub(crate) fn test_timepoints(tau: usize) -> Vec<Timepoint> {
    (0..tau)
        .map(|l| Timepoint {
            label: format!("t{l}"),
            day: (10 * l) as f64,
            stage: if l < tau / 3 {
                Stage::Vegetative
            } else if l < 2 * tau / 3 {
                Stage::Heading
            } else {
                Stage::GrainFilling
            },
        })
        .collect()
}
