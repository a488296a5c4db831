//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;

use superatom::master::Method;
use superatom::analysis::linewidth_w;
use superatom::model::{BLOCKADE_FACTOR, DEFAULT_DEPHASING, DEFAULT_OMEGA0};
use superatom::{InteractionSpec, IntegratorSettings, ModelConfig, PulseParams, RateSet, TrajectorySettings, MAX_ATOMS};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self {
            line: Some(line),
            message: message.into(),
        }
    }

    fn global(message: impl Into<String>) -> Self {
        Self {
            line: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Fig1c,
    Fig2,
    Custom,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Fig1c => "fig1c",
            Experiment::Fig2 => "fig2",
            Experiment::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Me,
    Mcwf,
    Both,
}

impl Engine {
    pub fn name(self) -> &'static str {
        match self {
            Engine::Me => "me",
            Engine::Mcwf => "mcwf",
            Engine::Both => "both",
        }
    }

    pub fn runs_me(self) -> bool {
        self != Engine::Mcwf
    }

    pub fn runs_mcwf(self) -> bool {
        self != Engine::Me
    }
}

/// Physical and numerical overrides; `None` keeps the default.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub omega0: Option<f64>,
    pub sigma_t: Option<f64>,
    pub t_end: Option<f64>,
    pub gamma_eg: Option<f64>,
    pub gamma_re: Option<f64>,
    pub gamma_r: Option<f64>,
    pub delta: Option<f64>,
    pub perfect_blockade: Option<bool>,
    pub pulse_shape: Option<PulseShapeKind>,
    pub omega_ge: Option<f64>,
    pub omega_er: Option<f64>,
    pub method: Option<Method>,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub fixed_dt: Option<f64>,
    pub samples: Option<usize>,
    pub check_positivity: Option<bool>,
    pub traj_rtol: Option<f64>,
    pub traj_atol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PulseShapeKind {
    Gaussian,
    Constant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub n_atoms_list: Vec<usize>,
    pub coherent: bool,
    pub engine: Engine,
    pub n_traj: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub overrides: Overrides,
    /// Keys and raw values in file order.
    pub echo: Vec<(String, String)>,
}

/// Keys accepted in a config file.
pub const KEYS: &[&str] = &[
    "experiment",
    "n_atoms_list",
    "coherent",
    "engine",
    "n_traj",
    "seed",
    "output_dir",
    "omega0",
    "sigma_t",
    "t_end",
    "gamma_eg",
    "gamma_re",
    "gamma_r",
    "delta",
    "perfect_blockade",
    "pulse_shape",
    "omega_ge",
    "omega_er",
    "method",
    "rtol",
    "atol",
    "fixed_dt",
    "samples",
    "check_positivity",
    "traj_rtol",
    "traj_atol",
];

/// Real number, optionally written `2pi*x`.
pub fn parse_real(raw: &str) -> Result<f64, String> {
    let (scale, body) = match raw.strip_prefix("2pi*") {
        Some(rest) => (2.0 * PI, rest.trim()),
        None => (1.0, raw),
    };
    let x: f64 = body.parse().map_err(|_| format!("`{raw}` is not a real number"))?;
    let v = scale * x;
    if !v.is_finite() {
        return Err(format!("`{raw}` is not finite"));
    }
    Ok(v)
}

fn parse_bool(raw: &str) -> Result<bool, String> {
    match raw {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("`{raw}` is not true or false")),
    }
}

fn parse_uint<T: std::str::FromStr>(raw: &str) -> Result<T, String> {
    raw.parse().map_err(|_| format!("`{raw}` is not a non-negative integer"))
}

/// `1,2,3`, `[1, 2, 3]` or an inclusive range `1..6`, mixed freely.
pub fn parse_atom_list(raw: &str) -> Result<Vec<usize>, String> {
    let body = raw.trim();
    let body = body.strip_prefix('[').and_then(|b| b.strip_suffix(']')).unwrap_or(body);
    let mut out = Vec::new();
    for item in body.split(',').map(str::trim) {
        if item.is_empty() {
            return Err(format!("empty entry in `{raw}`"));
        }
        if let Some((a, b)) = item.split_once("..") {
            let (a, b): (usize, usize) = (parse_uint(a.trim())?, parse_uint(b.trim())?);
            if a > b {
                return Err(format!("empty range `{item}`"));
            }
            out.extend(a..=b);
        } else {
            out.push(parse_uint(item)?);
        }
    }
    Ok(out)
}

pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    let mut echo = Vec::new();
    let mut experiment = None;
    let mut n_atoms_list = None;
    let mut coherent = None;
    let mut engine = Engine::Me;
    let mut n_traj = None;
    let mut seed = 0u64;
    let mut output_dir = PathBuf::from("out");
    let mut o = Overrides::default();

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::at(line_no, format!("expected `key = value`, got `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        let known = KEYS
            .iter()
            .copied()
            .find(|k| *k == key)
            .ok_or_else(|| ConfigError::at(line_no, format!("unknown key `{key}`")))?;
        if let Some(first) = seen.insert(known, line_no) {
            return Err(ConfigError::at(line_no, format!("key `{key}` already set on line {first}")));
        }
        if value.is_empty() {
            return Err(ConfigError::at(line_no, format!("key `{key}` has no value")));
        }
        let err = |m: String| ConfigError::at(line_no, format!("{key}: {m}"));
        let real = || parse_real(value).map_err(err);
        match known {
            "experiment" => {
                experiment = Some(match value {
                    "fig1c" => Experiment::Fig1c,
                    "fig2" => Experiment::Fig2,
                    "custom" => Experiment::Custom,
                    _ => return Err(err(format!("`{value}` is not fig1c, fig2 or custom"))),
                })
            }
            "n_atoms_list" => n_atoms_list = Some(parse_atom_list(value).map_err(err)?),
            "coherent" => coherent = Some(parse_bool(value).map_err(err)?),
            "engine" => {
                engine = match value {
                    "me" => Engine::Me,
                    "mcwf" => Engine::Mcwf,
                    "both" => Engine::Both,
                    _ => return Err(err(format!("`{value}` is not me, mcwf or both"))),
                }
            }
            "n_traj" => n_traj = Some(parse_uint(value).map_err(err)?),
            "seed" => seed = parse_uint(value).map_err(err)?,
            "output_dir" => output_dir = PathBuf::from(value),
            "omega0" => o.omega0 = Some(real()?),
            "sigma_t" => o.sigma_t = Some(real()?),
            "t_end" => o.t_end = Some(real()?),
            "gamma_eg" => o.gamma_eg = Some(real()?),
            "gamma_re" => o.gamma_re = Some(real()?),
            "gamma_r" => o.gamma_r = Some(real()?),
            "delta" => o.delta = Some(real()?),
            "perfect_blockade" => o.perfect_blockade = Some(parse_bool(value).map_err(err)?),
            "pulse_shape" => {
                o.pulse_shape = Some(match value {
                    "gaussian" => PulseShapeKind::Gaussian,
                    "constant" => PulseShapeKind::Constant,
                    _ => return Err(err(format!("`{value}` is not gaussian or constant"))),
                })
            }
            "omega_ge" => o.omega_ge = Some(real()?),
            "omega_er" => o.omega_er = Some(real()?),
            "method" => {
                o.method = Some(match value {
                    "adaptive" => Method::Adaptive,
                    "rk4" => Method::FixedRk4,
                    _ => return Err(err(format!("`{value}` is not adaptive or rk4"))),
                })
            }
            "rtol" => o.rtol = Some(real()?),
            "atol" => o.atol = Some(real()?),
            "fixed_dt" => o.fixed_dt = Some(real()?),
            "samples" => o.samples = Some(parse_uint(value).map_err(err)?),
            "check_positivity" => o.check_positivity = Some(parse_bool(value).map_err(err)?),
            "traj_rtol" => o.traj_rtol = Some(real()?),
            "traj_atol" => o.traj_atol = Some(real()?),
            _ => unreachable!("key table and match arms disagree"),
        }
        echo.push((key.to_string(), value.to_string()));
    }

    let line_of = |k: &str| seen.get(k).copied();
    let fail = |k: &str, m: String| match line_of(k) {
        Some(l) => ConfigError::at(l, m),
        None => ConfigError::global(m),
    };
    let experiment = experiment.ok_or_else(|| ConfigError::global("missing required key `experiment`"))?;
    let n_atoms_list = n_atoms_list.ok_or_else(|| ConfigError::global("missing required key `n_atoms_list`"))?;
    if n_atoms_list.is_empty() {
        return Err(fail("n_atoms_list", "n_atoms_list is empty".into()));
    }
    if n_atoms_list.contains(&0) {
        return Err(fail("n_atoms_list", "atom counts must be at least 1".into()));
    }
    if coherent.is_some() && experiment != Experiment::Custom {
        return Err(fail(
            "coherent",
            format!("coherent applies to custom runs only; {} fixes its own rates", experiment.name()),
        ));
    }
    let n_traj = n_traj.unwrap_or(1000);
    if engine.runs_mcwf() && n_traj == 0 {
        return Err(fail("n_traj", "n_traj must be at least 1 for the mcwf engine".into()));
    }
    if let Some(s) = o.samples {
        if s < 2 {
            return Err(fail("samples", "samples must be at least 2".into()));
        }
    }
    let constant = o.pulse_shape == Some(PulseShapeKind::Constant);
    for k in ["omega_ge", "omega_er"] {
        if line_of(k).is_some() && !constant {
            return Err(fail(k, format!("{k} requires pulse_shape = constant")));
        }
    }
    if o.perfect_blockade == Some(true) && o.delta.is_some() {
        return Err(fail("delta", "delta conflicts with perfect_blockade = true".into()));
    }
    Ok(ExperimentConfig {
        experiment,
        n_atoms_list,
        coherent: coherent.unwrap_or(false),
        engine,
        n_traj,
        seed,
        output_dir,
        overrides: o,
        echo,
    })
}

/// Rates of a run before experiment-specific choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateProfile {
    Dissipative,
    Coherent,
    Dephasing,
}

impl RateProfile {
    pub fn label(self) -> &'static str {
        match self {
            RateProfile::Dissipative => "dissipative",
            RateProfile::Coherent => "coherent",
            RateProfile::Dephasing => "dephasing",
        }
    }
}

impl ExperimentConfig {
    /// Largest requested atom count above the supported limit.
    pub fn capacity_violation(&self) -> Option<usize> {
        self.n_atoms_list.iter().copied().filter(|&n| n > MAX_ATOMS).max()
    }

    fn pulses(&self) -> PulseParams {
        let o = &self.overrides;
        let base = PulseParams::default();
        let t_end = o.t_end.unwrap_or(base.t_end);
        match o.pulse_shape {
            Some(PulseShapeKind::Constant) => PulseParams::constant(o.omega_ge.unwrap_or(0.0), o.omega_er.unwrap_or(0.0), t_end),
            _ => {
                let sigma_t = o.sigma_t.unwrap_or(if o.t_end.is_some() { t_end / 8.0 } else { base.sigma_t });
                PulseParams::gaussian(o.omega0.unwrap_or(base.omega0), sigma_t, t_end)
            }
        }
    }

    /// Decay and dephasing rates; coherent runs have all three equal to zero.
    fn rates(&self, profile: RateProfile) -> RateSet {
        let o = &self.overrides;
        let base = RateSet::rb87();
        let physical = RateSet {
            gamma_eg: o.gamma_eg.unwrap_or(base.gamma_eg),
            gamma_re: o.gamma_re.unwrap_or(base.gamma_re),
            gamma_r_deph: o.gamma_r.unwrap_or(match profile {
                RateProfile::Dephasing => DEFAULT_DEPHASING,
                _ => 0.0,
            }),
        };
        match profile {
            RateProfile::Coherent => RateSet::ZERO,
            _ => physical,
        }
    }

    /// Model configuration for one run. The default shift is `10 w_0` at the
    /// Gaussian peak `omega0` and the dissipative rates, also for coherent
    /// runs and constant pulses.
    pub fn model_config(&self, n_atoms: usize, profile: RateProfile) -> superatom::Result<ModelConfig> {
        let pulses = self.pulses();
        let physical = self.rates(RateProfile::Dissipative);
        let interaction = if self.overrides.perfect_blockade == Some(true) {
            InteractionSpec::PerfectBlockade
        } else {
            let shift = match self.overrides.delta {
                Some(d) => d,
                None => {
                    let omega0 = self.overrides.omega0.unwrap_or(DEFAULT_OMEGA0);
                    BLOCKADE_FACTOR * linewidth_w(omega0, omega0, physical.gamma_eg)?
                }
            };
            InteractionSpec::Uniform { shift }
        };
        Ok(ModelConfig {
            n_atoms,
            rates: self.rates(profile),
            pulses,
            interaction,
        })
    }

    pub fn integrator_settings(&self) -> IntegratorSettings {
        let o = &self.overrides;
        let d = IntegratorSettings::default();
        IntegratorSettings {
            method: o.method.unwrap_or(d.method),
            rtol: o.rtol.unwrap_or(d.rtol),
            atol: o.atol.unwrap_or(d.atol),
            fixed_dt: o.fixed_dt.unwrap_or(d.fixed_dt),
            sample_count: o.samples.unwrap_or(d.sample_count),
            check_positivity: o.check_positivity.unwrap_or(d.check_positivity),
            snapshot_times: Vec::new(),
        }
    }

    pub fn trajectory_settings(&self) -> TrajectorySettings {
        let o = &self.overrides;
        let d = TrajectorySettings::default();
        TrajectorySettings {
            n_traj: self.n_traj,
            seed_base: self.seed,
            rtol: o.traj_rtol.unwrap_or(d.rtol),
            atol: o.traj_atol.unwrap_or(d.atol),
            sample_count: o.samples.unwrap_or(d.sample_count),
            ..d
        }
    }

    /// Rate profiles run for every atom count.
    pub fn profiles(&self) -> Vec<RateProfile> {
        match self.experiment {
            Experiment::Fig1c => vec![RateProfile::Dissipative, RateProfile::Coherent],
            Experiment::Fig2 => vec![RateProfile::Dephasing],
            Experiment::Custom if self.coherent => vec![RateProfile::Coherent],
            Experiment::Custom => vec![RateProfile::Dissipative],
        }
    }
}
