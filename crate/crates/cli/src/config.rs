//! Flat `key = value` experiment configuration.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use stlod_core::coefficient::{generate_random, Coefficient};
use stlod_core::grid::{build_mesh_pair, build_temporal_grid, saturating_radius, TemporalGrid};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Radius {
    /// `k = |log₂ H|`
    Auto,
    /// Smallest `k` whose patches cover the domain.
    Saturate,
    Fixed(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    Trial,
    L2H1,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub coarse_exponent: u32,
    pub fine_exponent: u32,
    pub t_final: f64,
    pub coarse_steps: usize,
    pub fine_per_coarse: usize,

    pub seed: u64,
    pub eps_x: f64,
    pub eps_t: f64,
    pub coef_low: f64,
    pub coef_high: f64,
    pub periodic: bool,
    /// `None` means one coarse time step.
    pub period: Option<f64>,
    pub coefficient_file: Option<PathBuf>,

    pub k: Radius,
    pub ell: usize,
    pub reuse_periodic: bool,

    pub forcing: f64,
    pub decay_ks: Vec<usize>,
    pub decay_ells: Vec<usize>,
    pub sweep_exponents: Vec<u32>,
    pub rhs_count: usize,
    pub rhs_seed: u64,
    pub histogram_bins: usize,
    pub norm: NormKind,
    pub zero_corrector: bool,
}

impl Default for Config {
    /// Desk-scale version of the paper's setting: `H = 𝒯 = 2⁻³`,
    /// `h = τ = 2⁻⁶`, `ε_x = ε_t = 2⁻⁴`, `T = 1.25`.
    fn default() -> Self {
        Self {
            coarse_exponent: 3,
            fine_exponent: 6,
            t_final: 1.25,
            coarse_steps: 10,
            fine_per_coarse: 8,
            seed: 1,
            eps_x: 0.0625,
            eps_t: 0.0625,
            coef_low: 0.01,
            coef_high: 0.1,
            periodic: true,
            period: None,
            coefficient_file: None,
            k: Radius::Auto,
            ell: 4,
            reuse_periodic: true,
            forcing: 1.0,
            decay_ks: vec![1, 2, 3, 4, 5],
            decay_ells: vec![1, 2, 3, 4, 5, 6, 7],
            sweep_exponents: vec![2, 3, 4, 5],
            rhs_count: 50,
            rhs_seed: 7,
            histogram_bins: 10,
            norm: NormKind::Trial,
            zero_corrector: false,
        }
    }
}

const KEYS: &[&str] = &[
    "coarse_exponent",
    "fine_exponent",
    "t_final",
    "coarse_steps",
    "fine_per_coarse",
    "seed",
    "eps_x",
    "eps_t",
    "coef_low",
    "coef_high",
    "periodic",
    "period",
    "coefficient_file",
    "k",
    "ell",
    "reuse_periodic",
    "forcing",
    "decay_ks",
    "decay_ells",
    "sweep_exponents",
    "rhs_count",
    "rhs_seed",
    "histogram_bins",
    "norm",
    "zero_corrector",
];

fn bad(line: usize, msg: impl fmt::Display) -> CliError {
    CliError::Config(format!("line {line}: {msg}"))
}

fn number<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T, CliError> {
    value.parse().map_err(|_| bad(line, format!("cannot parse {key} = {value:?}")))
}

fn list<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<Vec<T>, CliError> {
    value.split(',').map(|v| number(line, key, v.trim())).collect()
}

fn flag(line: usize, key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(line, format!("{key} must be true or false, got {value:?}"))),
    }
}

fn join<T: fmt::Display>(values: &[T]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl Config {
    /// Parses and validates a configuration. Missing keys keep their
    /// defaults.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Config::default();
        let mut seen = BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) =
                content.split_once('=').ok_or_else(|| bad(line, format!("expected `key = value`, got {content:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(bad(line, format!("unknown key {key:?}")));
            }
            if !seen.insert(key.to_string()) {
                return Err(bad(line, format!("duplicate key {key:?}")));
            }
            match key {
                "coarse_exponent" => cfg.coarse_exponent = number(line, key, value)?,
                "fine_exponent" => cfg.fine_exponent = number(line, key, value)?,
                "t_final" => cfg.t_final = number(line, key, value)?,
                "coarse_steps" => cfg.coarse_steps = number(line, key, value)?,
                "fine_per_coarse" => cfg.fine_per_coarse = number(line, key, value)?,
                "seed" => cfg.seed = number(line, key, value)?,
                "eps_x" => cfg.eps_x = number(line, key, value)?,
                "eps_t" => cfg.eps_t = number(line, key, value)?,
                "coef_low" => cfg.coef_low = number(line, key, value)?,
                "coef_high" => cfg.coef_high = number(line, key, value)?,
                "periodic" => cfg.periodic = flag(line, key, value)?,
                "period" => cfg.period = if value == "auto" { None } else { Some(number(line, key, value)?) },
                "coefficient_file" => {
                    cfg.coefficient_file = if value.is_empty() { None } else { Some(PathBuf::from(value)) }
                }
                "k" => {
                    cfg.k = match value {
                        "auto" => Radius::Auto,
                        "saturate" => Radius::Saturate,
                        v => Radius::Fixed(number(line, key, v)?),
                    }
                }
                "ell" => cfg.ell = number(line, key, value)?,
                "reuse_periodic" => cfg.reuse_periodic = flag(line, key, value)?,
                "forcing" => cfg.forcing = number(line, key, value)?,
                "decay_ks" => cfg.decay_ks = list(line, key, value)?,
                "decay_ells" => cfg.decay_ells = list(line, key, value)?,
                "sweep_exponents" => cfg.sweep_exponents = list(line, key, value)?,
                "rhs_count" => cfg.rhs_count = number(line, key, value)?,
                "rhs_seed" => cfg.rhs_seed = number(line, key, value)?,
                "histogram_bins" => cfg.histogram_bins = number(line, key, value)?,
                "norm" => {
                    cfg.norm = match value {
                        "trial" => NormKind::Trial,
                        "l2h1" => NormKind::L2H1,
                        _ => return Err(bad(line, format!("norm must be trial or l2h1, got {value:?}"))),
                    }
                }
                "zero_corrector" => cfg.zero_corrector = flag(line, key, value)?,
                _ => unreachable!(),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn grid(&self) -> Result<TemporalGrid, CliError> {
        Ok(build_temporal_grid(self.t_final, self.coarse_steps, self.fine_per_coarse)?)
    }

    pub fn coarse_step(&self) -> f64 {
        self.t_final / self.coarse_steps as f64
    }

    pub fn fine_step(&self) -> f64 {
        self.coarse_step() / self.fine_per_coarse as f64
    }

    /// The coefficient of this configuration, from file or generated.
    pub fn coefficient(&self) -> Result<Coefficient, CliError> {
        if let Some(path) = &self.coefficient_file {
            return Coefficient::load(path).map_err(CliError::from);
        }
        let period = self.period.unwrap_or_else(|| self.coarse_step());
        Ok(generate_random(
            self.seed,
            self.eps_x,
            self.eps_t,
            self.coef_low,
            self.coef_high,
            self.periodic,
            period,
            self.t_final,
        )?)
    }

    /// Spatial patch radius for a coarse mesh exponent.
    pub fn radius_for(&self, coarse_exponent: u32) -> Result<usize, CliError> {
        Ok(match self.k {
            Radius::Auto => coarse_exponent as usize,
            Radius::Saturate => saturating_radius(&stlod_core::grid::build_uniform_mesh(coarse_exponent)?),
            Radius::Fixed(k) => k,
        })
    }

    /// The same configuration with `H = 𝒯 = 2^-n`, keeping `h`, `τ` and `T`.
    pub fn with_coarse_exponent(&self, n: u32) -> Result<Self, CliError> {
        let big = 0.5f64.powi(n as i32);
        let steps = self.t_final / big;
        let per = big / self.fine_step();
        let whole = |v: f64| (v - v.round()).abs() < 1e-9 * v.max(1.0) && v.round() >= 1.0;
        if !whole(steps) || !whole(per) {
            return Err(CliError::Config(format!(
                "sweep exponent {n}: T/𝒯 = {steps} and 𝒯/τ = {per} must be positive integers"
            )));
        }
        let mut cfg = self.clone();
        cfg.coarse_exponent = n;
        cfg.coarse_steps = steps.round() as usize;
        cfg.fine_per_coarse = per.round() as usize;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Re-checks every constraint between meshes, time grid and coefficient.
    pub fn validate(&self) -> Result<(), CliError> {
        let pair = build_mesh_pair(self.coarse_exponent, self.fine_exponent)?;
        let grid = self.grid()?;
        if !(self.coef_low > 0.0 && self.coef_high > self.coef_low) {
            return Err(CliError::Config(format!(
                "coefficient range must satisfy 0 < coef_low < coef_high, got [{}, {}]",
                self.coef_low, self.coef_high
            )));
        }
        if self.ell < 1 {
            return Err(CliError::Config("ell must be at least 1".into()));
        }
        if self.k == Radius::Fixed(0) {
            return Err(CliError::Config("k must be at least 1".into()));
        }
        if self.decay_ks.iter().chain(&self.decay_ells).any(|&v| v == 0) {
            return Err(CliError::Config("decay parameters must be at least 1".into()));
        }
        if self.histogram_bins == 0 {
            return Err(CliError::Config("histogram_bins must be at least 1".into()));
        }
        if !self.forcing.is_finite() {
            return Err(CliError::Config("forcing must be finite".into()));
        }
        self.coefficient()?.check_compatibility(&pair.fine, &grid)?;
        Ok(())
    }

    /// Serializes every key; `parse(cfg.to_text())` gives back `cfg`.
    pub fn to_text(&self) -> String {
        let radius = match self.k {
            Radius::Auto => "auto".to_string(),
            Radius::Saturate => "saturate".to_string(),
            Radius::Fixed(k) => k.to_string(),
        };
        let lines = [
            ("coarse_exponent", self.coarse_exponent.to_string()),
            ("fine_exponent", self.fine_exponent.to_string()),
            ("t_final", self.t_final.to_string()),
            ("coarse_steps", self.coarse_steps.to_string()),
            ("fine_per_coarse", self.fine_per_coarse.to_string()),
            ("seed", self.seed.to_string()),
            ("eps_x", self.eps_x.to_string()),
            ("eps_t", self.eps_t.to_string()),
            ("coef_low", self.coef_low.to_string()),
            ("coef_high", self.coef_high.to_string()),
            ("periodic", self.periodic.to_string()),
            ("period", self.period.map_or("auto".to_string(), |p| p.to_string())),
            ("coefficient_file", self.coefficient_file.as_ref().map_or(String::new(), |p| p.display().to_string())),
            ("k", radius),
            ("ell", self.ell.to_string()),
            ("reuse_periodic", self.reuse_periodic.to_string()),
            ("forcing", self.forcing.to_string()),
            ("decay_ks", join(&self.decay_ks)),
            ("decay_ells", join(&self.decay_ells)),
            ("sweep_exponents", join(&self.sweep_exponents)),
            ("rhs_count", self.rhs_count.to_string()),
            ("rhs_seed", self.rhs_seed.to_string()),
            ("histogram_bins", self.histogram_bins.to_string()),
            ("norm", if self.norm == NormKind::Trial { "trial" } else { "l2h1" }.to_string()),
            ("zero_corrector", self.zero_corrector.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use stlod_core::grid::build_uniform_mesh;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = Config::default();
        cfg.validate().unwrap();
        assert_eq!(Config::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn comments_and_overrides() {
        let cfg = Config::parse("# desk\nk = saturate # all of it\nell=2\ndecay_ks = 1, 3\n").unwrap();
        assert_eq!((cfg.k, cfg.ell, cfg.decay_ks.clone()), (Radius::Saturate, 2, vec![1, 3]));
        assert_eq!(cfg.radius_for(3).unwrap(), saturating_radius(&build_uniform_mesh(3).unwrap()));
        assert_eq!(cfg.radius_for(2).unwrap(), saturating_radius(&build_uniform_mesh(2).unwrap()));
    }

    #[test]
    fn rejects_bad_input() {
        for text in ["ell = 0", "nope = 1", "k = 2\nk = 3", "periodic = yes", "eps_x = 0.3", "coarse_steps = 3"] {
            assert!(matches!(Config::parse(text), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn sweep_rows_keep_fine_scales() {
        let cfg = Config::default();
        let row = cfg.with_coarse_exponent(5).unwrap();
        assert_eq!((row.coarse_steps, row.fine_per_coarse), (40, 2));
        assert_eq!(row.fine_step(), cfg.fine_step());
        assert!(cfg.with_coarse_exponent(7).is_err());
    }
}
