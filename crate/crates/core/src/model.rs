//! Physical configuration of the driven ensemble and the operators it induces.
//!
//! Units: angular frequencies and rates in rad/us, times in us, hbar = 1.
//! A rate quoted as "2pi x X MHz" is `2.0 * PI * X` here.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::DMatrix;

use crate::algebra::{
    hilbert_dim, kron_embed, level_of, Level, OperatorMatrix, C64, ONE,
};
use crate::analysis::linewidth_w;
use crate::error::{invalid, Error, Result};

/// Peak Rabi frequency of both pulses, 2pi x 3 MHz.
pub const DEFAULT_OMEGA0: f64 = 2.0 * PI * 3.0;
/// Duration of the pulse sequence.
pub const DEFAULT_T_END: f64 = 30.0;
/// 87Rb 5P3/2 population decay rate.
pub const RB87_GAMMA_EG: f64 = 38.0;
/// Rydberg nS decay rate, 1 kHz.
pub const RB87_GAMMA_RE: f64 = 1e-3;
/// Rydberg dephasing rate used for the robustness study, 2pi x 0.1 MHz.
pub const DEFAULT_DEPHASING: f64 = 2.0 * PI * 0.1;
/// Required ratio of the pair shift to the single-atom excitation linewidth.
pub const BLOCKADE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSet {
    /// `|e> -> |g>` population decay.
    pub gamma_eg: f64,
    /// `|r> -> |e>` population decay.
    pub gamma_re: f64,
    /// Rydberg dephasing.
    pub gamma_r_deph: f64,
}

impl RateSet {
    pub const ZERO: RateSet = RateSet {
        gamma_eg: 0.0,
        gamma_re: 0.0,
        gamma_r_deph: 0.0,
    };

    pub fn rb87() -> Self {
        Self {
            gamma_eg: RB87_GAMMA_EG,
            gamma_re: RB87_GAMMA_RE,
            gamma_r_deph: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma_eg", self.gamma_eg),
            ("gamma_re", self.gamma_re),
            ("gamma_r", self.gamma_r_deph),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(invalid(name, format!("rate must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Which of the two optical fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PulseKind {
    /// Lower transition `|g> <-> |e>`.
    Ge,
    /// Upper transition `|e> <-> |r>`.
    Er,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PulseShape {
    /// Delayed Gaussians in counterintuitive order (upper pulse first).
    Gaussian,
    /// Time-independent Rabi frequencies; `omega0` and `sigma_t` are ignored.
    Constant { omega_ge: f64, omega_er: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseParams {
    pub omega0: f64,
    pub sigma_t: f64,
    pub t_end: f64,
    pub shape: PulseShape,
}

impl PulseParams {
    pub fn gaussian(omega0: f64, sigma_t: f64, t_end: f64) -> Self {
        Self {
            omega0,
            sigma_t,
            t_end,
            shape: PulseShape::Gaussian,
        }
    }

    /// Gaussian pulses whose width and delay are both a quarter of the
    /// sequence, `2 sigma_t = t_end / 4`.
    pub fn with_quarter_width(omega0: f64, t_end: f64) -> Self {
        Self::gaussian(omega0, t_end / 8.0, t_end)
    }

    pub fn constant(omega_ge: f64, omega_er: f64, t_end: f64) -> Self {
        Self {
            omega0: omega_ge.abs().max(omega_er.abs()),
            sigma_t: t_end,
            t_end,
            shape: PulseShape::Constant { omega_ge, omega_er },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(invalid("t_end", "must be positive"));
        }
        match self.shape {
            PulseShape::Gaussian => {
                if !(self.omega0.is_finite() && self.omega0 > 0.0) {
                    return Err(invalid("omega0", "must be positive"));
                }
                if !(self.sigma_t.is_finite() && self.sigma_t > 0.0) {
                    return Err(invalid("sigma_t", "must be positive"));
                }
            }
            PulseShape::Constant { omega_ge, omega_er } => {
                if !(omega_ge.is_finite() && omega_er.is_finite()) {
                    return Err(invalid("omega_ge", "constant Rabi frequencies must be finite"));
                }
            }
        }
        Ok(())
    }

    /// Rabi frequency of one field at time `t`.
    pub fn amplitude(&self, t: f64, which: PulseKind) -> f64 {
        match self.shape {
            PulseShape::Gaussian => gaussian_pulse(t, which, self),
            PulseShape::Constant { omega_ge, omega_er } => match which {
                PulseKind::Ge => omega_ge,
                PulseKind::Er => omega_er,
            },
        }
    }
}

impl Default for PulseParams {
    fn default() -> Self {
        Self::with_quarter_width(DEFAULT_OMEGA0, DEFAULT_T_END)
    }
}

/// `Omega_0 exp[-(t - t_end/2 -+ sigma_t)^2 / (2 sigma_t^2)]`: the lower
/// pulse peaks late at `t_end/2 + sigma_t`, the upper one early.
pub fn gaussian_pulse(t: f64, which: PulseKind, p: &PulseParams) -> f64 {
    let center = match which {
        PulseKind::Ge => 0.5 * p.t_end + p.sigma_t,
        PulseKind::Er => 0.5 * p.t_end - p.sigma_t,
    };
    let x = t - center;
    p.omega0 * (-x * x / (2.0 * p.sigma_t * p.sigma_t)).exp()
}

/// Pairwise Rydberg-Rydberg level shifts.
#[derive(Debug, Clone, PartialEq)]
pub enum InteractionSpec {
    /// Same shift for every pair.
    Uniform { shift: f64 },
    /// `C_p / d^p` from atom positions in um.
    Geometry {
        positions: Vec<[f64; 3]>,
        c_p: f64,
        power: u32,
    },
    /// Infinite shift: states with two or more Rydberg atoms are removed from
    /// the dynamics.
    PerfectBlockade,
}

impl InteractionSpec {
    pub fn validate(&self, n_atoms: usize) -> Result<()> {
        match self {
            InteractionSpec::Uniform { shift } => {
                if !shift.is_finite() || *shift < 0.0 {
                    return Err(invalid("delta", format!("uniform shift must be finite and non-negative, got {shift}")));
                }
            }
            InteractionSpec::Geometry {
                positions,
                c_p,
                power,
            } => {
                if positions.len() != n_atoms {
                    return Err(Error::DimensionMismatch {
                        expected: n_atoms,
                        found: positions.len(),
                    });
                }
                if *power != 3 && *power != 6 {
                    return Err(invalid("power", format!("must be 3 or 6, got {power}")));
                }
                if !c_p.is_finite() {
                    return Err(invalid("c_p", "must be finite"));
                }
                for i in 0..n_atoms {
                    for j in (i + 1)..n_atoms {
                        if distance(&positions[i], &positions[j]) == 0.0 {
                            return Err(invalid(
                                "positions",
                                format!("atoms {i} and {j} coincide"),
                            ));
                        }
                    }
                }
            }
            InteractionSpec::PerfectBlockade => {}
        }
        Ok(())
    }
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Symmetric matrix of pair shifts with zero diagonal. Perfect blockade
/// yields infinite off-diagonal entries.
pub fn interaction_matrix(spec: &InteractionSpec, n_atoms: usize) -> Result<DMatrix<f64>> {
    spec.validate(n_atoms)?;
    Ok(DMatrix::from_fn(n_atoms, n_atoms, |i, j| {
        if i == j {
            return 0.0;
        }
        match spec {
            InteractionSpec::Uniform { shift } => *shift,
            InteractionSpec::Geometry {
                positions,
                c_p,
                power,
            } => c_p / distance(&positions[i], &positions[j]).powi(*power as i32),
            InteractionSpec::PerfectBlockade => f64::INFINITY,
        }
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_atoms: usize,
    pub rates: RateSet,
    pub pulses: PulseParams,
    pub interaction: InteractionSpec,
}

/// Comparison of the weakest pair shift against `10 w_0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockadeDiagnostic {
    /// Single-atom excitation linewidth at equal peak Rabi frequencies.
    pub w0: f64,
    /// Smallest pair shift, `None` for a single atom.
    pub min_shift: Option<f64>,
    pub satisfied: bool,
}

impl BlockadeDiagnostic {
    pub fn ratio(&self) -> Option<f64> {
        self.min_shift.map(|d| d / self.w0)
    }
}

impl fmt::Display for BlockadeDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.ratio() {
            None => write!(f, "blockade not applicable: single atom"),
            Some(r) if self.satisfied => {
                write!(f, "blockade satisfied: Δ = {r:.1}·w_0")
            }
            Some(r) => write!(
                f,
                "blockade marginal: Δ = {r:.1}·w_0 < {BLOCKADE_FACTOR:.0}·w_0"
            ),
        }
    }
}

impl ModelConfig {
    /// Rb-87 parameters with Gaussian pulses and a uniform shift of `10 w_0`.
    pub fn dissipative(n_atoms: usize) -> Self {
        let pulses = PulseParams::default();
        let rates = RateSet::rb87();
        Self {
            n_atoms,
            rates,
            pulses,
            interaction: InteractionSpec::Uniform {
                shift: default_blockade_shift(&pulses, &rates),
            },
        }
    }

    /// As [`ModelConfig::dissipative`] with all decay rates zero. The shift
    /// keeps its dissipative value.
    pub fn coherent(n_atoms: usize) -> Self {
        Self {
            rates: RateSet::ZERO,
            ..Self::dissipative(n_atoms)
        }
    }

    /// As [`ModelConfig::dissipative`] plus Rydberg dephasing of 2pi x 0.1 MHz.
    pub fn with_dephasing(n_atoms: usize) -> Self {
        let mut cfg = Self::dissipative(n_atoms);
        cfg.rates.gamma_r_deph = DEFAULT_DEPHASING;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        hilbert_dim(self.n_atoms)?;
        self.rates.validate()?;
        self.pulses.validate()?;
        self.interaction.validate(self.n_atoms)
    }

    pub fn blockade_diagnostic(&self) -> Result<BlockadeDiagnostic> {
        let omega0 = match self.pulses.shape {
            PulseShape::Gaussian => self.pulses.omega0,
            PulseShape::Constant { omega_ge, omega_er } => omega_ge.abs().max(omega_er.abs()),
        };
        let w0 = linewidth_w(omega0, omega0, self.rates.gamma_eg)?;
        let shifts = interaction_matrix(&self.interaction, self.n_atoms)?;
        let mut min_shift: Option<f64> = None;
        for i in 0..self.n_atoms {
            for j in (i + 1)..self.n_atoms {
                let d = shifts[(i, j)].abs();
                min_shift = Some(min_shift.map_or(d, |m| m.min(d)));
            }
        }
        // A shift of exactly 10 w_0 counts as satisfied despite rounding.
        let satisfied = min_shift.map_or(true, |d| d >= BLOCKADE_FACTOR * w0 * (1.0 - 1e-12));
        Ok(BlockadeDiagnostic {
            w0,
            min_shift,
            satisfied,
        })
    }
}

/// `10 w_0` with `w_0` the linewidth at both Rabi frequencies equal to the peak.
pub fn default_blockade_shift(pulses: &PulseParams, rates: &RateSet) -> f64 {
    let w0 = linewidth_w(pulses.omega0, pulses.omega0, rates.gamma_eg)
        .expect("positive peak Rabi frequency");
    BLOCKADE_FACTOR * w0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelKind {
    /// `sqrt(Gamma_eg) |g><e|`
    DecayEg,
    /// `sqrt(Gamma_re) |e><r|`
    DecayRe,
    /// `sqrt(gamma_r / 2) (|r><r| - |e><e| - |g><g|)`
    Dephasing,
}

impl ChannelKind {
    pub fn label(self) -> &'static str {
        match self {
            ChannelKind::DecayEg => "eg",
            ChannelKind::DecayRe => "re",
            ChannelKind::Dephasing => "deph",
        }
    }
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Collapse operator on the full register, already scaled by the square
/// root of its rate.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpChannel {
    pub operator: OperatorMatrix,
    pub kind: ChannelKind,
    pub atom: usize,
}

/// One collapse operator per atom and non-zero rate, ordered by atom then
/// by kind.
pub fn build_jump_channels(cfg: &ModelConfig) -> Result<Vec<JumpChannel>> {
    cfg.validate()?;
    let n = cfg.n_atoms;
    let r = cfg.rates;
    let ge = OperatorMatrix::transition(Level::Ground, Level::Excited);
    let er = OperatorMatrix::transition(Level::Excited, Level::Rydberg);
    let deph = OperatorMatrix::diagonal(&[-ONE, -ONE, ONE]);
    let mut channels = Vec::new();
    for atom in 0..n {
        for (kind, rate, local) in [
            (ChannelKind::DecayEg, r.gamma_eg, &ge),
            (ChannelKind::DecayRe, r.gamma_re, &er),
            (ChannelKind::Dephasing, 0.5 * r.gamma_r_deph, &deph),
        ] {
            if rate == 0.0 {
                continue;
            }
            let operator = kron_embed(&local.scale(C64::new(rate.sqrt(), 0.0)), atom, n)?;
            channels.push(JumpChannel {
                operator,
                kind,
                atom,
            });
        }
    }
    Ok(channels)
}

/// Time-independent pieces of the Hamiltonian and the dissipator.
///
/// `H(t) = Omega_ge(t) X_ge + Omega_er(t) X_er + V`, with `X` the summed
/// single-atom couplings and `V` the diagonal pair interaction.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    dim: usize,
    drive_ge: OperatorMatrix,
    drive_er: OperatorMatrix,
    interaction: OperatorMatrix,
    channels: Vec<JumpChannel>,
    rydberg_counts: Vec<u8>,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let n = config.n_atoms;
        let dim = hilbert_dim(n)?;
        let rydberg_counts: Vec<u8> = (0..dim)
            .map(|k| (0..n).filter(|&j| level_of(k, j, n) == Level::Rydberg).count() as u8)
            .collect();

        let ge_local = OperatorMatrix::transition(Level::Excited, Level::Ground)
            .add(&OperatorMatrix::transition(Level::Ground, Level::Excited))?;
        let er_local = OperatorMatrix::transition(Level::Rydberg, Level::Excited)
            .add(&OperatorMatrix::transition(Level::Excited, Level::Rydberg))?;
        let mut drive_ge = OperatorMatrix::zeros(dim);
        let mut drive_er = OperatorMatrix::zeros(dim);
        for j in 0..n {
            drive_ge = drive_ge.add(&kron_embed(&ge_local, j, n)?)?;
            drive_er = drive_er.add(&kron_embed(&er_local, j, n)?)?;
        }

        let shifts = interaction_matrix(&config.interaction, n)?;
        let interaction = if config.interaction == InteractionSpec::PerfectBlockade {
            let allowed = |k: usize| rydberg_counts[k] <= 1;
            let project = |op: &OperatorMatrix| {
                OperatorMatrix::from_triplets(
                    dim,
                    op.triplets().filter(|&(r, c, _)| allowed(r) && allowed(c)),
                )
            };
            drive_ge = project(&drive_ge)?;
            drive_er = project(&drive_er)?;
            OperatorMatrix::zeros(dim)
        } else {
            let diag: Vec<C64> = (0..dim)
                .map(|k| {
                    let mut e = 0.0;
                    for i in 0..n {
                        if level_of(k, i, n) != Level::Rydberg {
                            continue;
                        }
                        for j in (i + 1)..n {
                            if level_of(k, j, n) == Level::Rydberg {
                                e += shifts[(i, j)];
                            }
                        }
                    }
                    C64::new(e, 0.0)
                })
                .collect();
            OperatorMatrix::diagonal(&diag)
        };

        let channels = build_jump_channels(&config)?;
        Ok(Self {
            config,
            dim,
            drive_ge,
            drive_er,
            interaction,
            channels,
            rydberg_counts,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_atoms(&self) -> usize {
        self.config.n_atoms
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn t_end(&self) -> f64 {
        self.config.pulses.t_end
    }

    pub fn drive_ge(&self) -> &OperatorMatrix {
        &self.drive_ge
    }

    pub fn drive_er(&self) -> &OperatorMatrix {
        &self.drive_er
    }

    pub fn interaction(&self) -> &OperatorMatrix {
        &self.interaction
    }

    pub fn channels(&self) -> &[JumpChannel] {
        &self.channels
    }

    /// Number of atoms in `|r>` for each basis state.
    pub fn rydberg_counts(&self) -> &[u8] {
        &self.rydberg_counts
    }

    /// `(Omega_ge(t), Omega_er(t))`.
    pub fn rabi(&self, t: f64) -> (f64, f64) {
        let p = &self.config.pulses;
        (p.amplitude(t, PulseKind::Ge), p.amplitude(t, PulseKind::Er))
    }

    pub fn hamiltonian(&self, t: f64) -> OperatorMatrix {
        let (ge, er) = self.rabi(t);
        self.drive_ge
            .scale(C64::new(ge, 0.0))
            .add(&self.drive_er.scale(C64::new(er, 0.0)))
            .and_then(|h| h.add(&self.interaction))
            .expect("model operators share one dimension")
    }

    /// Largest spread of the diagonal interaction energies; sets the fastest
    /// coherent time scale of the register.
    pub fn interaction_spread(&self) -> f64 {
        let diag: Vec<f64> = (0..self.dim).map(|k| self.interaction.get(k, k).re).collect();
        let max = diag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }
}

/// Full Hamiltonian at time `t`.
pub fn build_hamiltonian(t: f64, cfg: &ModelConfig) -> Result<OperatorMatrix> {
    Ok(Model::new(cfg.clone())?.hamiltonian(t))
}
