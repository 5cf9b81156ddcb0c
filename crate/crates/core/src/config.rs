//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored; lists are comma
//! separated. Unknown keys are an error.
//!
//! Simulation keys (`simulate --config`):
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `preset` | `two-factor` or `cimmyt` | `two-factor` |
//! | `g`, `r` | genotypes, replicates | 500, 3 |
//! | `traits`, `timepoints` | s and τ (two-factor only) | 20, 6 |
//! | `factors` | equal trait blocks (two-factor only) | 2 |
//! | `block_starts` | first trait index of each block (two-factor only) | equal blocks |
//! | `loadings` | block loading, one value or one per factor | 0.8 |
//! | `uniqueness` | Ψ₀ for every trait | 0.36 |
//! | `markers` | marker count, 0 for K = I | 0 |
//! | `h2_secondary` | plot-level heritability of the secondary traits | 0.8 |
//! | `residual_correlation` | AR(1) correlation of adjacent traits' residuals | 0 |
//! | `persistence` | shared fraction of factor-score variance across time | 1 |
//! | `h2_focal` | plot-level heritability of the focal trait | 0.3 |
//! | `focal_correlation` | genetic correlation with each factor | 0.8, 0, … |
//! | `focal_mean` | focal intercept | 0 |
//! | `seed` | RNG seed | 1 |
//! | `switch.<timepoint>` | signed permutation at a timepoint label or 1-based index, e.g. `switch.T09 = 2 1` | none |
//!
//! Plan keys (`cv --plan`): `replicates`, `train_fraction`, `scenarios`
//! (CV1, CV2), `stages` (vegetative, vegetative+heading, all), `models`
//! (gblup, concat, varimax, procrustes), `seed`, `exhaustive_limit`,
//! `cv2_method` (exact, verbatim).

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gblup::Cv2Method;
use crate::pipeline::CvPlan;
use crate::procrustes::SignedPermutation;
use crate::simulate::{preset_cimmyt_like, staged_timepoints, LoadingSpec, ResidualSpec, SimConfig};

/// Keys and values in file order; duplicate keys are an error.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, found {line:?}", i + 1)))?;
        let key = k.trim().to_string();
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {key:?}", i + 1)));
        }
    }
    Ok(out)
}

struct Keys(BTreeMap<String, String>);

impl Keys {
    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.0.remove(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}"))),
        }
    }

    fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        match self.0.remove(key) {
            None => Ok(None),
            Some(v) => v
                .split([',', ';'])
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {s:?}"))))
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    fn finish(self) -> Result<()> {
        match self.0.keys().next() {
            Some(k) => Err(Error::Config(format!("unknown key {k:?}"))),
            None => Ok(()),
        }
    }
}

pub fn sim_config_from_str(text: &str) -> Result<SimConfig> {
    let mut keys = Keys(parse_key_values(text)?);
    let switch_keys: Vec<String> = keys.0.keys().filter(|k| k.starts_with("switch.")).cloned().collect();
    let switches: Vec<(String, String)> =
        switch_keys.iter().map(|k| (k["switch.".len()..].to_string(), keys.0.remove(k).unwrap_or_default())).collect();
    let preset: String = keys.take("preset")?.unwrap_or_else(|| "two-factor".into());
    let seed = keys.take("seed")?.unwrap_or(1);
    let mut cfg = match preset.as_str() {
        "two-factor" => {
            let g = keys.take("g")?.unwrap_or(500);
            let r = keys.take("r")?.unwrap_or(3);
            let s: usize = keys.take("traits")?.unwrap_or(20);
            let tau = keys.take("timepoints")?.unwrap_or(6);
            let m: usize = keys.take("factors")?.unwrap_or(2);
            if m == 0 || m >= s {
                return Err(Error::Config(format!("factors must be in 1..{s}")));
            }
            let mut cfg = SimConfig::two_factor(g, r, s, tau, seed);
            let starts = keys.take_list("block_starts")?.unwrap_or_else(|| (0..m).map(|k| k * s / m).collect());
            cfg.focal_correlation = (0..starts.len()).map(|k| if k == 0 { 0.8 } else { 0.0 }).collect();
            cfg.loadings = LoadingSpec::Blocks { strengths: vec![vec![0.8; starts.len()]], starts };
            cfg.timepoints = staged_timepoints(tau);
            cfg
        }
        "cimmyt" => {
            let mut cfg = preset_cimmyt_like(seed);
            for fixed in ["traits", "timepoints", "factors", "block_starts"] {
                if keys.0.contains_key(fixed) {
                    return Err(Error::Config(format!("{fixed} cannot be changed for the cimmyt preset")));
                }
            }
            if let Some(g) = keys.take("g")? {
                cfg.g = g;
            }
            if let Some(r) = keys.take("r")? {
                cfg.r = r;
            }
            cfg
        }
        other => return Err(Error::Config(format!("unknown preset {other:?}"))),
    };
    let m = cfg.n_factors();
    if let Some(v) = keys.take_list::<f64>("loadings")? {
        let row = match v.len() {
            1 => vec![v[0]; m],
            n if n == m => v,
            n => return Err(Error::Config(format!("loadings: {n} values for {m} factors"))),
        };
        if let LoadingSpec::Blocks { strengths, .. } = &mut cfg.loadings {
            *strengths = vec![row];
        }
    }
    if let Some(u) = keys.take::<f64>("uniqueness")? {
        cfg.uniqueness = vec![u; cfg.n_traits()];
    }
    if let Some(p) = keys.take("markers")? {
        cfg.n_markers = p;
    }
    let (mut h2, mut rho) = match cfg.residual {
        ResidualSpec::Heritability { h2, correlation } => (h2, correlation),
        ResidualSpec::Explicit(_) => (0.8, 0.0),
    };
    h2 = keys.take("h2_secondary")?.unwrap_or(h2);
    rho = keys.take("residual_correlation")?.unwrap_or(rho);
    cfg.residual = ResidualSpec::Heritability { h2, correlation: rho };
    if let Some(p) = keys.take("persistence")? {
        cfg.persistence = p;
    }
    if let Some(h) = keys.take("h2_focal")? {
        cfg.focal_h2 = h;
    }
    if let Some(c) = keys.take_list("focal_correlation")? {
        cfg.focal_correlation = c;
    }
    if let Some(mu) = keys.take("focal_mean")? {
        cfg.focal_mean = mu;
    }
    keys.finish()?;
    for (tp, perm) in switches {
        let l = cfg
            .timepoints
            .iter()
            .position(|t| t.label == tp)
            .or_else(|| tp.parse::<usize>().ok().filter(|&i| i >= 1).map(|i| i - 1))
            .ok_or_else(|| Error::Config(format!("switch.{tp}: unknown timepoint")))?;
        let p: SignedPermutation = perm.parse().map_err(|e| Error::Config(format!("switch.{tp}: {e}")))?;
        cfg.switches.retain(|(t, _)| *t != l);
        cfg.switches.push((l, p));
    }
    cfg.switches.sort_by_key(|(t, _)| *t);
    cfg.validate()?;
    Ok(cfg)
}

pub fn plan_from_str(text: &str) -> Result<CvPlan> {
    let mut keys = Keys(parse_key_values(text)?);
    let mut plan = CvPlan::default();
    if let Some(v) = keys.take("replicates")? {
        plan.replicates = v;
    }
    if let Some(v) = keys.take("train_fraction")? {
        plan.train_fraction = v;
    }
    if let Some(v) = keys.take_list("scenarios")? {
        plan.scenarios = v;
    }
    if let Some(v) = keys.take_list("stages")? {
        plan.stages = v;
    }
    if let Some(v) = keys.take_list("models")? {
        plan.models = v;
    }
    if let Some(v) = keys.take("seed")? {
        plan.seed = v;
    }
    if let Some(v) = keys.take("exhaustive_limit")? {
        plan.selection.exhaustive_limit = v;
    }
    if let Some(v) = keys.take::<String>("cv2_method")? {
        plan.cv2_method = match v.to_ascii_lowercase().as_str() {
            "exact" => Cv2Method::Exact,
            "verbatim" => Cv2Method::Verbatim,
            other => return Err(Error::Config(format!("cv2_method: unknown value {other:?}"))),
        };
    }
    keys.finish()?;
    plan.validate()?;
    Ok(plan)
}

fn join<T: ToString>(v: &[T], sep: &str) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(sep)
}

/// Inverse of [`plan_from_str`].
pub fn plan_to_string(plan: &CvPlan) -> String {
    format!(
        "replicates = {}\ntrain_fraction = {}\nscenarios = {}\nstages = {}\nmodels = {}\nseed = {}\nexhaustive_limit = {}\ncv2_method = {}\n",
        plan.replicates,
        plan.train_fraction,
        join(&plan.scenarios, ", "),
        join(&plan.stages, "; "),
        join(&plan.models, ", "),
        plan.seed,
        plan.selection.exhaustive_limit,
        match plan.cv2_method {
            Cv2Method::Exact => "exact",
            Cv2Method::Verbatim => "verbatim",
        }
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gblup::Scenario;
    use crate::pipeline::{Model, StageSubset};

    #[test]
    fn plan_round_trip() {
        let mut plan = CvPlan::default();
        plan.replicates = 7;
        plan.seed = 99;
        plan.models = vec![Model::Univariate, Model::Procrustes];
        plan.stages = vec![StageSubset::VegetativeHeading];
        plan.scenarios = vec![Scenario::Cv2];
        plan.cv2_method = Cv2Method::Verbatim;
        assert_eq!(plan_from_str(&plan_to_string(&plan)).unwrap(), plan);
        assert_eq!(plan_from_str("").unwrap(), CvPlan::default());
    }

    #[test]
    fn plan_errors() {
        assert!(matches!(plan_from_str("replicates = many"), Err(Error::Config(_))));
        assert!(matches!(plan_from_str("colour = blue"), Err(Error::Config(_))));
        assert!(matches!(plan_from_str("seed = 1\nseed = 2"), Err(Error::Config(_))));
        assert!(plan_from_str("train_fraction = 1.5").is_err());
    }

    #[test]
    fn sim_config_keys() {
        let cfg = sim_config_from_str(
            "# small\ng = 40\nr = 2\ntraits = 9\ntimepoints = 5\nfactors = 3\nloadings = 0.7\nh2_focal = 0.5\n\
             focal_correlation = 0.5, 0.2, 0\nswitch.T04 = 2 -1 3\nmarkers = 100\nseed = 4\n",
        )
        .unwrap();
        assert_eq!((cfg.g, cfg.r, cfg.n_traits(), cfg.n_timepoints(), cfg.n_factors()), (40, 2, 9, 5, 3));
        assert_eq!(cfg.switches.len(), 1);
        assert_eq!(cfg.switches[0].0, 3);
        assert_eq!(cfg.switches[0].1.to_string(), "2 -1 3");
        assert_eq!(cfg.seed, 4);
        let preset = sim_config_from_str("preset = cimmyt\ng = 50").unwrap();
        assert_eq!((preset.g, preset.n_traits()), (50, 62));
        assert!(sim_config_from_str("preset = cimmyt\ntraits = 4").is_err());
        assert!(sim_config_from_str("h2_focal = 2").is_err());
        assert!(sim_config_from_str("switch.T99 = 2 1").is_err());
    }
}
