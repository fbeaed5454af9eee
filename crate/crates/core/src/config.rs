//! Run configuration in TOML.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::evolution::{make_initial, InitialData, InitialReport, InitialShape, Population, RunControls, Scheme};
use crate::functionals::hydrodynamics;
use crate::grid::{integrate, make_grid, Density, VelocityGrid};
use crate::linalg::norm2;
use crate::kernel::{CutoffMode, KernelSpec};
use crate::operator::FluxForm;

/// Parse or validation failure, located at a line of the source when possible.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "config error at line {l}: {}", self.message),
            None => write!(f, "config error: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory.
    #[serde(default = "default_out")]
    pub out: String,
    pub grid: GridConfig,
    pub kernel: KernelConfig,
    pub initial: InitialConfig,
    pub time: TimeConfig,
    #[serde(default)]
    pub checks: ChecksConfig,
}

fn default_out() -> String {
    "out".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    /// Box half-width `L`.
    pub extent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffName {
    #[default]
    Raw,
    Cutoff,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub gamma: f64,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub cutoff: CutoffName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    Maxwellian,
    Bimaxwellian,
    Bump,
    PerturbedMaxwellian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub mass: f64,
    #[serde(default)]
    pub mean: [f64; 3],
    pub temperature: f64,
}

/// Initial datum; which fields are required depends on `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub kind: InitialKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub populations: Option<Vec<PopulationConfig>>,
    /// Rescale the sampled datum to this mass.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_mass: Option<f64>,
    /// Relative amplitude of seeded multiplicative noise, in `[0, 1)`.
    #[serde(default)]
    pub noise: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    #[default]
    Explicit,
    SemiImplicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxName {
    #[default]
    LogGradient,
    Divergence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub t_end: f64,
    /// Fixed step; absent means automatic CFL stepping.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "default_cfl_safety")]
    pub cfl_safety: f64,
    /// Pairwise report every `k` steps; 0 disables it.
    #[serde(default)]
    pub dissipation_stride: usize,
    #[serde(default)]
    pub scheme: SchemeName,
    #[serde(default)]
    pub flux: FluxName,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
}

fn default_cfl_safety() -> f64 {
    0.5
}

/// Checks to evaluate after a run, with their tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksConfig {
    pub conservation: bool,
    pub mass_tolerance: f64,
    pub energy_tolerance: f64,
    pub entropy_monotone: bool,
    pub fisher_monotone: bool,
    pub monotone_tolerance: f64,
    pub fisher_decay: bool,
    pub decay_tolerance: f64,
    pub dissipation_consistency: bool,
    pub consistency_tolerance: f64,
    pub inequalities: bool,
    pub inequality_tolerance: f64,
    pub theorem_tolerance: f64,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        Self {
            conservation: true,
            mass_tolerance: 1e-10,
            energy_tolerance: 1e-3,
            entropy_monotone: true,
            fisher_monotone: true,
            monotone_tolerance: 1e-3,
            fisher_decay: false,
            decay_tolerance: 0.05,
            dissipation_consistency: false,
            consistency_tolerance: 0.1,
            inequalities: false,
            inequality_tolerance: 1e-10,
            theorem_tolerance: 0.1,
        }
    }
}

/// 1-based line of `key = ...` inside `[section]` (or at top level when `section` is empty).
pub fn key_line(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            current = rest.trim_start_matches('[').split(']').next().unwrap_or("").trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(no + 1);
                }
            }
        }
    }
    None
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

impl RunConfig {
    /// Parse and validate.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError {
            line: e.span().map(|s| line_of_offset(text, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.validate().map_err(|(section, key, message)| ConfigError { line: key_line(text, section, key), message })?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    /// Range checks; errors name the offending `(section, key)`.
    pub fn validate(&self) -> Result<(), (&'static str, &'static str, String)> {
        let g = self.kernel.gamma;
        if !(-3.0..-2.0).contains(&g) {
            return Err(("kernel", "gamma", format!("gamma = {g} outside the supported range [-3, -2)")));
        }
        if !(self.kernel.epsilon >= 0.0 && self.kernel.epsilon.is_finite()) {
            return Err(("kernel", "epsilon", format!("epsilon must be nonnegative, got {}", self.kernel.epsilon)));
        }
        if self.grid.n < 4 || !self.grid.n.is_multiple_of(2) {
            return Err(("grid", "n", format!("n must be even and at least 4, got {}", self.grid.n)));
        }
        if !(self.grid.extent > 0.0 && self.grid.extent.is_finite()) {
            return Err(("grid", "extent", format!("extent must be positive, got {}", self.grid.extent)));
        }
        let t = &self.time;
        if !(t.t_end > 0.0 && t.t_end.is_finite()) {
            return Err(("time", "t_end", format!("t_end must be positive, got {}", t.t_end)));
        }
        if let Some(dt) = t.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(("time", "dt", format!("dt must be positive, got {dt}")));
            }
        }
        if !(t.cfl_safety > 0.0 && t.cfl_safety <= 1.0) {
            return Err(("time", "cfl_safety", format!("cfl_safety must lie in (0, 1], got {}", t.cfl_safety)));
        }
        if let Some(bad) = t.snapshot_times.iter().find(|&&s| !(0.0..=t.t_end).contains(&s)) {
            return Err(("time", "snapshot_times", format!("snapshot time {bad} outside [0, t_end]")));
        }
        let c = &self.checks;
        let tolerances = [
            ("mass_tolerance", c.mass_tolerance),
            ("energy_tolerance", c.energy_tolerance),
            ("monotone_tolerance", c.monotone_tolerance),
            ("decay_tolerance", c.decay_tolerance),
            ("consistency_tolerance", c.consistency_tolerance),
            ("inequality_tolerance", c.inequality_tolerance),
            ("theorem_tolerance", c.theorem_tolerance),
        ];
        if let Some((k, v)) = tolerances.iter().find(|(_, v)| !(*v >= 0.0 && v.is_finite())) {
            return Err(("checks", k, format!("{k} must be nonnegative, got {v}")));
        }
        if (c.dissipation_consistency || c.inequalities) && t.dissipation_stride == 0 {
            return Err(("time", "dissipation_stride", "pairwise checks need dissipation_stride > 0".into()));
        }
        let i = &self.initial;
        if !(0.0..1.0).contains(&i.noise) {
            return Err(("initial", "noise", format!("noise must lie in [0, 1), got {}", i.noise)));
        }
        let require = |v: Option<f64>, key: &'static str| v.ok_or(("initial", key, format!("{key} is required for this initial kind")));
        match i.kind {
            InitialKind::Maxwellian => {
                require(i.temperature, "temperature")?;
            }
            InitialKind::Bimaxwellian => {
                if i.populations.as_ref().is_none_or(|p| p.is_empty()) {
                    return Err(("initial", "kind", "bimaxwellian needs at least one [[initial.populations]] entry".into()));
                }
            }
            InitialKind::Bump => {
                require(i.radius, "radius")?;
            }
            InitialKind::PerturbedMaxwellian => {
                require(i.temperature, "temperature")?;
                require(i.amplitude, "amplitude")?;
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> crate::Result<VelocityGrid> {
        make_grid(self.grid.n, self.grid.extent)
    }

    pub fn kernel_spec(&self) -> crate::Result<KernelSpec> {
        let mode = match self.kernel.cutoff {
            CutoffName::Raw => CutoffMode::Raw,
            CutoffName::Cutoff => CutoffMode::Cutoff,
        };
        Ok(KernelSpec::new(self.kernel.gamma)?.with_epsilon(self.kernel.epsilon)?.with_mode(mode))
    }

    pub fn initial_data(&self) -> InitialData {
        let i = &self.initial;
        let mass = i.mass.unwrap_or(1.0);
        let shape = match i.kind {
            InitialKind::Maxwellian => InitialShape::Maxwellian(Population {
                mass,
                mean: i.mean.unwrap_or([0.0; 3]),
                temperature: i.temperature.unwrap_or(1.0),
            }),
            InitialKind::Bimaxwellian => InitialShape::BiMaxwellian(
                i.populations
                    .iter()
                    .flatten()
                    .map(|p| Population { mass: p.mass, mean: p.mean, temperature: p.temperature })
                    .collect(),
            ),
            InitialKind::Bump => InitialShape::Bump {
                amplitude: i.amplitude.unwrap_or(1.0),
                center: i.center.unwrap_or([0.0; 3]),
                radius: i.radius.unwrap_or(1.0),
                background: i.background.unwrap_or(0.0),
            },
            InitialKind::PerturbedMaxwellian => InitialShape::PerturbedMaxwellian {
                mass,
                temperature: i.temperature.unwrap_or(1.0),
                amplitude: i.amplitude.unwrap_or(0.0),
            },
        };
        InitialData { target_mass: i.target_mass, gamma: self.kernel.gamma, ..InitialData::new(shape) }
    }

    /// Sample the datum and apply the seeded noise.
    pub fn initial_density(&self) -> crate::Result<(Density, InitialReport)> {
        let (f, report) = make_initial(&self.initial_data(), self.grid()?)?;
        if self.initial.noise == 0.0 {
            return Ok((f, report));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let eps = self.initial.noise;
        let grid = *f.grid();
        let values = f.values().iter().map(|x| x * (1.0 + eps * rng.random_range(-1.0..1.0))).collect();
        let noisy = Density::new(grid, values)?;
        let state = hydrodynamics(&noisy);
        let p = 2.0 - self.kernel.gamma;
        let w: Vec<f64> = noisy.values().iter().enumerate().map(|(c, x)| x * norm2(&grid.center(c)).powf(p / 2.0)).collect();
        let report = InitialReport {
            mass: state.mass,
            energy: state.energy,
            entropy: state.entropy,
            moment: integrate(&grid, &w)?,
        };
        Ok((noisy, report))
    }

    pub fn controls(&self) -> RunControls {
        let t = &self.time;
        RunControls {
            dt: t.dt,
            cfl_safety: t.cfl_safety,
            scheme: match t.scheme {
                SchemeName::Explicit => Scheme::Explicit,
                SchemeName::SemiImplicit => Scheme::SemiImplicit,
            },
            form: match t.flux {
                FluxName::LogGradient => FluxForm::LogGradient,
                FluxName::Divergence => FluxForm::Divergence,
            },
            dissipation_stride: t.dissipation_stride,
            monotone_tolerance: self.checks.monotone_tolerance,
            snapshot_times: t.snapshot_times.clone(),
            ..RunControls::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
seed = 7
out = "runs/a"

[grid]
n = 8
extent = 4.0

[kernel]
gamma = -3.0

[initial]
kind = "perturbed_maxwellian"
mass = 1.0
temperature = 1.0
amplitude = 0.5

[time]
t_end = 0.5
snapshot_times = [0.0, 0.25]
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = RunConfig::parse(BASIC).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.checks, ChecksConfig::default());
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn gamma_out_of_range_names_its_line() {
        let text = BASIC.replace("gamma = -3.0", "gamma = -1.0");
        let err = RunConfig::parse(&text).unwrap_err();
        assert_eq!(err.line, key_line(&text, "kernel", "gamma"));
        assert_eq!(err.line, Some(10));
        assert!(err.message.contains("gamma"));
    }

    #[test]
    fn syntax_errors_carry_lines() {
        let text = BASIC.replace("n = 8", "n = = 8");
        let err = RunConfig::parse(&text).unwrap_err();
        assert_eq!(err.line, Some(6));
        let text = BASIC.replace("n = 8", "n = 8\nsize = 3");
        assert!(RunConfig::parse(&text).unwrap_err().message.contains("size"));
    }

    #[test]
    fn validation_rules() {
        for (from, to) in [("n = 8", "n = 7"), ("t_end = 0.5", "t_end = 0.0"), ("amplitude = 0.5", "")] {
            assert!(RunConfig::parse(&BASIC.replace(from, to)).is_err(), "{to}");
        }
    }

    #[test]
    fn noise_is_seeded() {
        let text = BASIC.replace("amplitude = 0.5", "amplitude = 0.5\nnoise = 0.1");
        let a = RunConfig::parse(&text).unwrap();
        let (fa, _) = a.initial_density().unwrap();
        let (fb, _) = a.initial_density().unwrap();
        assert_eq!(fa, fb);
        let b = RunConfig { seed: 8, ..a.clone() };
        assert_ne!(b.initial_density().unwrap().0, fa);
    }
}
