//! Closed-form quantities and the reduced symmetric-subspace model.

use nalgebra::DMatrix;

use crate::algebra::{hilbert_dim, level_of, Level, OperatorMatrix, StateVector, C64, I, ONE, ZERO};
use crate::error::{invalid, Error, Result};
use crate::model::{PulseKind, PulseParams};
use crate::observables::{ObservableSeries, PR_COLUMNS};
use crate::ode::{ComplexOde, Dopri5};

/// Projector onto basis states with exactly `n` atoms in `|r>`.
pub fn rydberg_projector(n: usize, n_atoms: usize) -> Result<OperatorMatrix> {
    let dim = hilbert_dim(n_atoms)?;
    if n > n_atoms {
        return Err(invalid("n", format!("{n} excitations exceed {n_atoms} atoms")));
    }
    let diag: Vec<C64> = (0..dim)
        .map(|k| {
            let count = (0..n_atoms).filter(|&j| level_of(k, j, n_atoms) == Level::Rydberg).count();
            if count == n {
                ONE
            } else {
                ZERO
            }
        })
        .collect();
    Ok(OperatorMatrix::diagonal(&diag))
}

/// Steady-state ground population of a driven two-level atom,
/// `(Omega^2 + Gamma^2/4) / (2 Omega^2 + Gamma^2/4)`.
pub fn kappa(omega_ge: f64, gamma_eg: f64) -> Result<f64> {
    let o2 = omega_ge * omega_ge;
    let g2 = 0.25 * gamma_eg * gamma_eg;
    if o2 + g2 == 0.0 {
        return Err(invalid("omega_ge", "kappa is undefined for zero drive and zero decay"));
    }
    Ok((o2 + g2) / (2.0 * o2 + g2))
}

/// Rydberg excitation linewidth of one three-level atom,
/// `(Omega_ge^2 + Omega_er^2) / sqrt(2 Omega_ge^2 + Gamma_eg^2/4)`.
pub fn linewidth_w(omega_ge: f64, omega_er: f64, gamma_eg: f64) -> Result<f64> {
    if gamma_eg < 0.0 {
        return Err(invalid("gamma_eg", "must be non-negative"));
    }
    let denom = (2.0 * omega_ge * omega_ge + 0.25 * gamma_eg * gamma_eg).sqrt();
    if denom == 0.0 {
        return Err(invalid("omega_ge", "linewidth is undefined without lower drive and decay"));
    }
    Ok((omega_ge * omega_ge + omega_er * omega_er) / denom)
}

/// Single-atom coupling `Omega_ge(|e><g| + h.c.) + Omega_er(|r><e| + h.c.)`.
pub fn single_atom_coupling(omega_ge: f64, omega_er: f64) -> OperatorMatrix {
    let (g, e, r) = (0, 1, 2);
    let ge = C64::new(omega_ge, 0.0);
    let er = C64::new(omega_er, 0.0);
    OperatorMatrix::from_triplets(3, [(e, g, ge), (g, e, ge), (r, e, er), (e, r, er)])
        .expect("3x3 entries")
}

#[derive(Debug, Clone, PartialEq)]
pub struct DarkStateDecomposition {
    /// Mixing angle, `tan(theta) = Omega_ge / Omega_er`.
    pub theta: f64,
    /// `cos(theta)|g> - sin(theta)|r>`, zero energy.
    pub dark: StateVector,
    /// `(sin(theta)|g> + |e> + cos(theta)|r>)/sqrt(2)`, energy `+gap`.
    pub bright_plus: StateVector,
    /// `(sin(theta)|g> - |e> + cos(theta)|r>)/sqrt(2)`, energy `-gap`.
    pub bright_minus: StateVector,
    /// `sqrt(Omega_ge^2 + Omega_er^2)`.
    pub gap: f64,
}

pub fn dark_state_decomposition(omega_ge: f64, omega_er: f64) -> Result<DarkStateDecomposition> {
    if omega_ge == 0.0 && omega_er == 0.0 {
        return Err(invalid("omega", "dark state is undefined with both fields off"));
    }
    let theta = omega_ge.atan2(omega_er);
    let (s, c) = theta.sin_cos();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let re = |v: [f64; 3]| StateVector::new(v.iter().map(|&x| C64::new(x, 0.0)).collect());
    Ok(DarkStateDecomposition {
        theta,
        dark: re([c, 0.0, -s])?,
        bright_plus: re([h * s, h, h * c])?,
        bright_minus: re([h * s, -h, h * c])?,
        gap: omega_ge.hypot(omega_er),
    })
}

fn mixing_angle(p: &PulseParams, t: f64) -> (f64, f64) {
    let ge = p.amplitude(t, PulseKind::Ge);
    let er = p.amplitude(t, PulseKind::Er);
    (ge.atan2(er), ge.hypot(er))
}

/// `|d theta/dt| / gap` on `t_grid`, with `theta` differentiated by central
/// differences (one-sided at the ends).
pub fn adiabaticity_margin(pulses: &PulseParams, t_grid: &[f64]) -> Vec<f64> {
    let n = t_grid.len();
    let samples: Vec<(f64, f64)> = t_grid.iter().map(|&t| mixing_angle(pulses, t)).collect();
    (0..n)
        .map(|k| {
            if n < 2 {
                return 0.0;
            }
            let (lo, hi) = (k.saturating_sub(1), (k + 1).min(n - 1));
            let rate = (samples[hi].0 - samples[lo].0) / (t_grid[hi] - t_grid[lo]);
            let gap = samples[k].1;
            if gap == 0.0 {
                f64::INFINITY
            } else {
                rate.abs() / gap
            }
        })
        .collect()
}

/// Largest margin over grid points where the gap exceeds `1e-3 Omega_0`.
pub fn max_adiabaticity_margin(pulses: &PulseParams, t_grid: &[f64]) -> f64 {
    let margins = adiabaticity_margin(pulses, t_grid);
    t_grid
        .iter()
        .zip(margins)
        .filter(|(&t, _)| mixing_angle(pulses, t).1 > 1e-3 * pulses.omega0)
        .map(|(_, m)| m)
        .fold(0.0, f64::max)
}

/// `N x / ((N - 1) x + 1)`: single-excitation probability of an N-atom
/// superatom from the single-atom Rydberg population `x`.
pub fn superatom_excitation_estimate(n_atoms: usize, sigma_rr_single: f64) -> Result<f64> {
    if n_atoms == 0 {
        return Err(invalid("n_atoms", "must be positive"));
    }
    if !(0.0..=1.0).contains(&sigma_rr_single) {
        return Err(invalid("sigma_rr", format!("{sigma_rr_single} is not a probability")));
    }
    let n = n_atoms as f64;
    Ok(n * sigma_rr_single / ((n - 1.0) * sigma_rr_single + 1.0))
}

/// Symmetric occupation-number states `|n_g, n_e, n_r>` with `n_r <= 1`.
///
/// Ordered with the `n_r = 0` sector first (`n_e = 0..=N`), then `n_r = 1`
/// (`n_e = 0..N`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollectiveBasis {
    pub n_atoms: usize,
    pub states: Vec<(usize, usize, usize)>,
}

impl CollectiveBasis {
    pub fn new(n_atoms: usize) -> Self {
        let mut states = Vec::with_capacity(2 * n_atoms + 1);
        for n_r in 0..=1usize.min(n_atoms) {
            let free = n_atoms - n_r;
            for n_e in 0..=free {
                states.push((free - n_e, n_e, n_r));
            }
        }
        Self { n_atoms, states }
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn index_of(&self, n_g: usize, n_e: usize, n_r: usize) -> Option<usize> {
        self.states.iter().position(|&s| s == (n_g, n_e, n_r))
    }

    /// `e^†g + g^†e` and `r^†e + e^†r` with bosonic `g`, `e` and hard-core `r`.
    fn couplings(&self) -> (Vec<(usize, usize, f64)>, Vec<(usize, usize, f64)>) {
        let mut ge = Vec::new();
        let mut er = Vec::new();
        for (from, &(n_g, n_e, n_r)) in self.states.iter().enumerate() {
            if n_g > 0 {
                if let Some(to) = self.index_of(n_g - 1, n_e + 1, n_r) {
                    let amp = ((n_g * (n_e + 1)) as f64).sqrt();
                    ge.push((to, from, amp));
                    ge.push((from, to, amp));
                }
            }
            if n_e > 0 && n_r == 0 {
                if let Some(to) = self.index_of(n_g, n_e - 1, 1) {
                    let amp = (n_e as f64).sqrt();
                    er.push((to, from, amp));
                    er.push((from, to, amp));
                }
            }
        }
        (ge, er)
    }
}

struct CollectiveSchrodinger {
    pulses: PulseParams,
    ge: Vec<(usize, usize, f64)>,
    er: Vec<(usize, usize, f64)>,
}

impl ComplexOde for CollectiveSchrodinger {
    fn rhs(&mut self, t: f64, y: &[C64], dy: &mut [C64]) {
        let a = self.pulses.amplitude(t, PulseKind::Ge);
        let b = self.pulses.amplitude(t, PulseKind::Er);
        dy.fill(ZERO);
        for &(r, c, v) in &self.ge {
            dy[r] += -I * (a * v) * y[c];
        }
        for &(r, c, v) in &self.er {
            dy[r] += -I * (b * v) * y[c];
        }
    }
}

#[derive(Debug, Clone)]
pub struct CollectiveEvolution {
    pub basis: CollectiveBasis,
    pub series: ObservableSeries,
    pub final_state: Vec<C64>,
}

const COLLECTIVE_MAX_ATOMS: usize = 30;

/// Coherent evolution of the fully blockaded ensemble in the symmetric
/// subspace, starting from all atoms in `|g>`.
pub fn collective_coherent_evolve(n_atoms: usize, pulses: &PulseParams, t_grid: &[f64]) -> Result<CollectiveEvolution> {
    if n_atoms == 0 || n_atoms > COLLECTIVE_MAX_ATOMS {
        return Err(invalid("n_atoms", format!("must be in 1..={COLLECTIVE_MAX_ATOMS}")));
    }
    pulses.validate()?;
    if t_grid.windows(2).any(|w| w[1] < w[0]) || t_grid.first().is_some_and(|&t| t < 0.0) {
        return Err(invalid("t_grid", "times must be non-negative and sorted"));
    }
    let basis = CollectiveBasis::new(n_atoms);
    let (ge, er) = basis.couplings();
    let mut sys = CollectiveSchrodinger {
        pulses: *pulses,
        ge,
        er,
    };
    let mut psi = vec![ZERO; basis.dim()];
    psi[basis.index_of(n_atoms, 0, 0).expect("ground state in basis")] = ONE;

    let mut stepper = Dopri5::new(basis.dim(), 1e-11, 1e-13, pulses.t_end / 20.0);
    let mut t = 0.0;
    let mut series = ObservableSeries::with_capacity(t_grid.len());
    for &stop in t_grid {
        stepper.advance_to(&mut sys, &mut t, &mut psi, stop)?;
        let mut pr = [0.0; PR_COLUMNS];
        let mut pop_e = 0.0;
        let mut norm = 0.0;
        for (amp, &(_, n_e, n_r)) in psi.iter().zip(&basis.states) {
            let p = amp.norm_sqr();
            pr[n_r] += p;
            pop_e += p * n_e as f64;
            norm += p;
        }
        series.times.push(t);
        series.pr_n.push(pr);
        series.pop_e_total.push(pop_e);
        series.per_atom_rr.push(vec![pr[1] / n_atoms as f64; n_atoms]);
        series.purity.push(1.0);
        series.trace_error.push(norm - 1.0);
    }
    Ok(CollectiveEvolution {
        basis,
        series,
        final_state: psi,
    })
}

/// `J_x = (e^†g + g^†e)/2` on the symmetric `{g, e}` states of `atoms` atoms,
/// indexed by `n_e`.
pub fn jx_matrix(atoms: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(atoms + 1, atoms + 1);
    for n_e in 0..atoms {
        let v = 0.5 * (((atoms - n_e) * (n_e + 1)) as f64).sqrt();
        m[(n_e + 1, n_e)] = v;
        m[(n_e, n_e + 1)] = v;
    }
    m
}

/// Orthonormal basis of the `J_x` null space (columns), empty for odd counts.
pub fn jx_null_space(atoms: usize) -> DMatrix<f64> {
    let eig = jx_matrix(atoms).symmetric_eigen();
    let cols: Vec<_> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &ev)| ev.abs() < 1e-9)
        .map(|(k, _)| eig.eigenvectors.column(k).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(atoms + 1, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Squared overlap of a collective state with `|J_x = 0> ⊗ |n_r>`.
pub fn jx_zero_overlap(state: &[C64], basis: &CollectiveBasis, n_r: usize) -> Result<f64> {
    if state.len() != basis.dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            found: state.len(),
        });
    }
    if n_r > 1 || n_r > basis.n_atoms {
        return Err(invalid("n_r", "sector must be 0 or 1 and not exceed the atom count"));
    }
    let atoms = basis.n_atoms - n_r;
    let null = jx_null_space(atoms);
    if null.ncols() == 0 {
        return Err(Error::NoNullSpace { atoms });
    }
    let sector: Vec<C64> = (0..=atoms)
        .map(|n_e| state[basis.index_of(atoms - n_e, n_e, n_r).expect("sector state")])
        .collect();
    let norm: f64 = state.iter().map(|a| a.norm_sqr()).sum();
    let overlap: f64 = null
        .column_iter()
        .map(|v| {
            v.iter()
                .zip(&sector)
                .map(|(&x, a)| a * x)
                .sum::<C64>()
                .norm_sqr()
        })
        .sum();
    Ok(overlap / norm)
}
