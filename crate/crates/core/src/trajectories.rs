//! Quantum-jump (Monte Carlo wavefunction) unraveling of the master equation.
//!
//! Each trajectory evolves under `K = H - (i/2) sum_k c_k^† c_k` until the
//! squared norm falls to a uniform random threshold, then applies one
//! collapse operator chosen with weight `||c_k psi||^2`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::algebra::{ComplexMatrix, OperatorMatrix, StateVector, C64, I, ZERO};
use crate::error::{invalid, Error, Result};
use crate::master::sample_grid;
use crate::model::{ChannelKind, Model};
use crate::observables::{BasisCensus, ObservableSeries, PR_COLUMNS};
use crate::ode::{ComplexOde, Dopri5};

/// `H(t) - (i/2) sum_k c_k^† c_k`.
pub fn effective_hamiltonian(t: f64, model: &Model) -> Result<OperatorMatrix> {
    let mut decay = OperatorMatrix::zeros(model.dim());
    for ch in model.channels() {
        decay = decay.add(&ch.operator.adjoint().matmul(&ch.operator)?)?;
    }
    model.hamiltonian(t).add(&decay.scale(C64::new(0.0, -0.5)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySettings {
    pub n_traj: usize,
    pub seed_base: u64,
    pub rtol: f64,
    pub atol: f64,
    pub sample_count: usize,
    /// Width of the bracket left around each jump time, in microseconds.
    pub jump_time_tol: f64,
    /// Times at which the normalized state is kept.
    pub snapshot_times: Vec<f64>,
}

impl Default for TrajectorySettings {
    fn default() -> Self {
        Self {
            n_traj: 1,
            seed_base: 0,
            rtol: 1e-7,
            atol: 1e-10,
            sample_count: 600,
            jump_time_tol: 1e-6,
            snapshot_times: Vec::new(),
        }
    }
}

impl TrajectorySettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_traj == 0 {
            return Err(invalid("n_traj", "at least one trajectory is required"));
        }
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(invalid("rtol", "tolerances must be positive"));
        }
        if self.sample_count < 2 {
            return Err(invalid("sample_count", "at least two samples are required"));
        }
        if !(self.jump_time_tol > 0.0) {
            return Err(invalid("jump_time_tol", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    /// Position in [`Model::channels`].
    pub channel: usize,
    pub kind: ChannelKind,
    pub atom: usize,
}

impl JumpEvent {
    pub fn channel_label(&self) -> &'static str {
        self.kind.label()
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub index: usize,
    pub seed: u64,
    pub jumps: Vec<JumpEvent>,
    pub series: ObservableSeries,
    pub final_state: StateVector,
    pub snapshots: Vec<(f64, StateVector)>,
}

/// Seed of trajectory `index`, a SplitMix64 hash of the pair.
pub fn trajectory_seed(seed_base: u64, index: usize) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    splitmix(seed_base ^ splitmix(index as u64))
}

/// `-i K(t) psi` with the real diagonal of `K` held in a rotating frame.
struct NoJumpEvolution<'m> {
    model: &'m Model,
    remainder: OperatorMatrix,
    // -i V_a
    k_diag: Vec<C64>,
}

impl<'m> NoJumpEvolution<'m> {
    fn new(model: &'m Model) -> Result<Self> {
        let k = effective_hamiltonian(0.0, model)?;
        let (ge, er) = model.rabi(0.0);
        let drives = model
            .drive_ge()
            .scale(C64::new(ge, 0.0))
            .add(&model.drive_er().scale(C64::new(er, 0.0)))?;
        let constant = k.sub(&drives)?;
        let mut k_diag = vec![ZERO; model.dim()];
        let mut rest = Vec::new();
        for (r, c, v) in constant.triplets() {
            if r == c {
                k_diag[r] = C64::new(0.0, -v.re);
                rest.push((r, c, C64::new(0.0, v.im)));
            } else {
                rest.push((r, c, v));
            }
        }
        Ok(Self {
            model,
            remainder: OperatorMatrix::from_triplets(model.dim(), rest)?,
            k_diag,
        })
    }

    fn factors(&self, s: f64) -> impl Iterator<Item = C64> + '_ {
        self.k_diag.iter().map(move |&k| (k * s).exp())
    }
}

impl ComplexOde for NoJumpEvolution<'_> {
    fn rhs(&mut self, t: f64, y: &[C64], dy: &mut [C64]) {
        let (ge, er) = self.model.rabi(t);
        for (r, out) in dy.iter_mut().enumerate() {
            let mut acc = ZERO;
            for (c, v) in self.remainder.row(r) {
                acc += v * y[c];
            }
            for (c, v) in self.model.drive_ge().row(r) {
                acc += v * ge * y[c];
            }
            for (c, v) in self.model.drive_er().row(r) {
                acc += v * er * y[c];
            }
            *out = -I * acc;
        }
    }

    fn propagate(&self, s: f64, y: &mut [C64]) {
        for (v, f) in y.iter_mut().zip(self.factors(s)) {
            *v *= f;
        }
    }

    fn rhs_in_frame(&mut self, t: f64, s: f64, u: &[C64], du: &mut [C64]) {
        let mut psi = u.to_vec();
        self.propagate(s, &mut psi);
        self.rhs(t + s, &psi, du);
        self.propagate(-s, du);
    }

    fn has_linear_part(&self) -> bool {
        true
    }
}

fn norm_sqr(psi: &[C64]) -> f64 {
    psi.iter().map(|a| a.norm_sqr()).sum()
}

fn normalized(psi: &[C64]) -> Result<StateVector> {
    let n = norm_sqr(psi).sqrt();
    StateVector::new(psi.iter().map(|a| a / n).collect())
}

/// One trajectory from `psi0`, fully determined by `seed` and `settings`.
pub fn evolve_trajectory(
    psi0: &StateVector,
    model: &Model,
    settings: &TrajectorySettings,
    seed: u64,
) -> Result<TrajectoryRecord> {
    settings.validate()?;
    if psi0.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: psi0.dim(),
        });
    }
    if (psi0.norm_sqr() - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidState(format!(
            "initial state has squared norm {}",
            psi0.norm_sqr()
        )));
    }
    let dim = model.dim();
    let t_end = model.t_end();
    let grid = sample_grid(t_end, settings.sample_count);
    let mut snaps: Vec<f64> = settings
        .snapshot_times
        .iter()
        .copied()
        .filter(|t| (0.0..=t_end).contains(t))
        .collect();
    snaps.sort_by(|a, b| a.total_cmp(b));
    let mut stops: Vec<(f64, bool)> = grid.iter().map(|&t| (t, true)).collect();
    stops.extend(snaps.iter().map(|&t| (t, false)));
    stops.sort_by(|a, b| a.0.total_cmp(&b.0));

    let census = BasisCensus::new(model.n_atoms(), dim);
    let channels = model.channels();
    let mut sys = NoJumpEvolution::new(model)?;
    let mut stepper = Dopri5::new(dim, settings.rtol, settings.atol, t_end / 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut threshold: f64 = rng.random();

    let mut psi = psi0.amplitudes().to_vec();
    let mut t = 0.0;
    let mut jumps = Vec::new();
    let mut series = ObservableSeries::with_capacity(grid.len());
    let mut snapshots = Vec::new();
    let mut saved = vec![ZERO; dim];
    let mut weights = vec![0.0; channels.len()];

    for (stop, is_sample) in stops {
        while t < stop {
            let t0 = t;
            saved.copy_from_slice(&psi);
            stepper.step(&mut sys, &mut t, &mut psi, stop)?;
            if channels.is_empty() || norm_sqr(&psi) > threshold {
                continue;
            }
            // the squared norm only decreases, so bisection brackets the crossing
            let (mut lo, mut hi) = (0.0, t - t0);
            while hi - lo > settings.jump_time_tol {
                let mid = 0.5 * (lo + hi);
                stepper.trial_step(&mut sys, t0, &saved, mid);
                if norm_sqr(stepper.trial_state()) > threshold {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            if hi < t - t0 {
                stepper.trial_step(&mut sys, t0, &saved, hi);
                psi.copy_from_slice(stepper.trial_state());
                t = t0 + hi;
            }
            for (w, ch) in weights.iter_mut().zip(channels) {
                *w = norm_sqr(&ch.operator.apply(&psi)?);
            }
            let total: f64 = weights.iter().sum();
            if total > 0.0 {
                let mut pick = rng.random::<f64>() * total;
                let mut k = weights.len() - 1;
                for (i, &w) in weights.iter().enumerate() {
                    if pick < w {
                        k = i;
                        break;
                    }
                    pick -= w;
                }
                while weights[k] == 0.0 {
                    k -= 1;
                }
                let jumped = channels[k].operator.apply(&psi)?;
                let n = norm_sqr(&jumped).sqrt();
                for (p, j) in psi.iter_mut().zip(&jumped) {
                    *p = j / n;
                }
                jumps.push(JumpEvent {
                    time: t,
                    channel: k,
                    kind: channels[k].kind,
                    atom: channels[k].atom,
                });
            } else {
                let n = norm_sqr(&psi).sqrt();
                psi.iter_mut().for_each(|p| *p /= n);
            }
            stepper.invalidate();
            threshold = rng.random();
        }
        if is_sample {
            let nsq = norm_sqr(&psi);
            let pops = census.summarize_amplitudes(&psi, nsq);
            series.push(t, &pops, 1.0, 0.0);
        } else {
            snapshots.push((t, normalized(&psi)?));
        }
    }
    Ok(TrajectoryRecord {
        index: 0,
        seed,
        jumps,
        series,
        final_state: normalized(&psi)?,
        snapshots,
    })
}

/// `settings.n_traj` independent trajectories, ordered by index.
pub fn run_trajectories(psi0: &StateVector, model: &Model, settings: &TrajectorySettings) -> Result<Vec<TrajectoryRecord>> {
    settings.validate()?;
    (0..settings.n_traj)
        .into_par_iter()
        .map(|index| {
            let mut rec = evolve_trajectory(psi0, model, settings, trajectory_seed(settings.seed_base, index))?;
            rec.index = index;
            Ok(rec)
        })
        .collect()
}

/// Trajectory mean with the standard error of each `P_r(n)` sample.
///
/// `mean.purity` is NaN and `mean.trace_error` zero: sampled states are
/// normalized and their ensemble purity is not tracked.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryAverage {
    pub n_traj: usize,
    pub mean: ObservableSeries,
    pub stderr_pr: Vec<[f64; PR_COLUMNS]>,
}

/// Ordered reduction of `records`; the standard error is zero for a single
/// trajectory.
pub fn average_records(records: &[TrajectoryRecord]) -> Result<TrajectoryAverage> {
    let first = records
        .first()
        .ok_or_else(|| invalid("records", "at least one trajectory is required"))?;
    let len = first.series.len();
    let n_atoms = first.series.n_atoms();
    if records.iter().any(|r| r.series.len() != len) {
        return Err(invalid("records", "trajectories use different sample grids"));
    }
    let m = records.len() as f64;
    let mut mean = ObservableSeries {
        times: first.series.times.clone(),
        pr_n: vec![[0.0; PR_COLUMNS]; len],
        pop_e_total: vec![0.0; len],
        per_atom_rr: vec![vec![0.0; n_atoms]; len],
        purity: vec![0.0; len],
        trace_error: vec![0.0; len],
    };
    let mut square = vec![[0.0; PR_COLUMNS]; len];
    for rec in records {
        let s = &rec.series;
        for k in 0..len {
            for n in 0..PR_COLUMNS {
                mean.pr_n[k][n] += s.pr_n[k][n];
                square[k][n] += s.pr_n[k][n] * s.pr_n[k][n];
            }
            mean.pop_e_total[k] += s.pop_e_total[k];
            for (acc, v) in mean.per_atom_rr[k].iter_mut().zip(&s.per_atom_rr[k]) {
                *acc += v;
            }
        }
    }
    let mut stderr_pr = vec![[0.0; PR_COLUMNS]; len];
    for k in 0..len {
        for n in 0..PR_COLUMNS {
            let mu = mean.pr_n[k][n] / m;
            mean.pr_n[k][n] = mu;
            if records.len() > 1 {
                let var = ((square[k][n] - m * mu * mu) / (m - 1.0)).max(0.0);
                stderr_pr[k][n] = (var / m).sqrt();
            }
        }
        mean.pop_e_total[k] /= m;
        mean.per_atom_rr[k].iter_mut().for_each(|v| *v /= m);
    }
    // the ensemble purity needs every sampled state; it is left undefined
    mean.purity.iter_mut().for_each(|p| *p = f64::NAN);
    Ok(TrajectoryAverage {
        n_traj: records.len(),
        mean,
        stderr_pr,
    })
}

/// Runs `settings.n_traj` trajectories from the all-ground state and averages.
pub fn average_trajectories(model: &Model, settings: &TrajectorySettings) -> Result<TrajectoryAverage> {
    let psi0 = StateVector::ground(model.n_atoms())?;
    average_records(&run_trajectories(&psi0, model, settings)?)
}

/// `(1/M) sum_m |psi_m><psi_m|` at the snapshot with position `snapshot`.
pub fn averaged_density(records: &[TrajectoryRecord], snapshot: usize) -> Result<ComplexMatrix> {
    let first = records
        .first()
        .ok_or_else(|| invalid("records", "at least one trajectory is required"))?;
    let dim = first.final_state.dim();
    let mut acc = ComplexMatrix::zeros(dim);
    for rec in records {
        let (_, psi) = rec
            .snapshots
            .get(snapshot)
            .ok_or_else(|| invalid("snapshot", format!("trajectory {} has no snapshot {snapshot}", rec.index)))?;
        let a = psi.amplitudes();
        for r in 0..dim {
            for c in 0..dim {
                acc[(r, c)] += a[r] * a[c].conj();
            }
        }
    }
    Ok(acc.scale(C64::new(1.0 / records.len() as f64, 0.0)))
}

pub const JUMP_LOG_HEADER: &str = "trajectory_index,time_us,channel,atom";

/// One line per jump, trajectories in index order.
pub fn write_jump_log<W: Write>(records: &[TrajectoryRecord], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{JUMP_LOG_HEADER}")?;
    for rec in records {
        for j in &rec.jumps {
            writeln!(out, "{},{:.8e},{},{}", rec.index, j.time, j.channel_label(), j.atom)?;
        }
    }
    Ok(())
}
