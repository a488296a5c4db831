//! Sampled populations shared by all engines.

use crate::algebra::{level_of, Level, C64};

/// Number of Rydberg-count columns: n = 0, 1, 2 and n >= 3.
pub const PR_COLUMNS: usize = 4;

/// Observables on a time grid.
///
/// `pr_n[k][n]` is the probability of `n` Rydberg excitations at `times[k]`,
/// with the last column aggregating `n >= 3`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservableSeries {
    pub times: Vec<f64>,
    pub pr_n: Vec<[f64; PR_COLUMNS]>,
    pub pop_e_total: Vec<f64>,
    pub per_atom_rr: Vec<Vec<f64>>,
    pub purity: Vec<f64>,
    pub trace_error: Vec<f64>,
}

impl ObservableSeries {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            times: Vec::with_capacity(n),
            pr_n: Vec::with_capacity(n),
            pop_e_total: Vec::with_capacity(n),
            per_atom_rr: Vec::with_capacity(n),
            purity: Vec::with_capacity(n),
            trace_error: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_atoms(&self) -> usize {
        self.per_atom_rr.first().map_or(0, Vec::len)
    }

    /// Time series of `P_r(n)`; `n >= 3` returns the aggregated column.
    pub fn pr(&self, n: usize) -> Vec<f64> {
        let col = n.min(PR_COLUMNS - 1);
        self.pr_n.iter().map(|row| row[col]).collect()
    }

    /// Value of `P_r(n)` at the last sample.
    pub fn final_pr(&self, n: usize) -> f64 {
        self.pr_n.last().map_or(f64::NAN, |row| row[n.min(PR_COLUMNS - 1)])
    }

    pub fn max_pr(&self, n: usize) -> f64 {
        self.pr(n).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    pub(crate) fn push(&mut self, t: f64, pops: &PopulationSummary, purity: f64, trace_error: f64) {
        self.times.push(t);
        self.pr_n.push(pops.pr_n);
        self.pop_e_total.push(pops.pop_e_total);
        self.per_atom_rr.push(pops.per_atom_rr.clone());
        self.purity.push(purity);
        self.trace_error.push(trace_error);
    }
}

/// Populations reduced to per-count and per-atom quantities.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct PopulationSummary {
    pub pr_n: [f64; PR_COLUMNS],
    pub pop_e_total: f64,
    pub per_atom_rr: Vec<f64>,
}

/// Precomputed level occupations of every product basis state.
#[derive(Debug, Clone)]
pub(crate) struct BasisCensus {
    n_atoms: usize,
    rydberg: Vec<u8>,
    excited: Vec<u8>,
    // bit j set if atom j is in |r>
    rydberg_mask: Vec<u16>,
}

impl BasisCensus {
    pub fn new(n_atoms: usize, dim: usize) -> Self {
        let mut rydberg = Vec::with_capacity(dim);
        let mut excited = Vec::with_capacity(dim);
        let mut rydberg_mask = Vec::with_capacity(dim);
        for k in 0..dim {
            let (mut nr, mut ne, mut mask) = (0u8, 0u8, 0u16);
            for j in 0..n_atoms {
                match level_of(k, j, n_atoms) {
                    Level::Rydberg => {
                        nr += 1;
                        mask |= 1 << j;
                    }
                    Level::Excited => ne += 1,
                    Level::Ground => {}
                }
            }
            rydberg.push(nr);
            excited.push(ne);
            rydberg_mask.push(mask);
        }
        Self {
            n_atoms,
            rydberg,
            excited,
            rydberg_mask,
        }
    }

    pub fn summarize(&self, populations: impl Iterator<Item = f64>) -> PopulationSummary {
        let mut pr_n = [0.0; PR_COLUMNS];
        let mut pop_e_total = 0.0;
        let mut per_atom_rr = vec![0.0; self.n_atoms];
        for (k, p) in populations.enumerate() {
            pr_n[(self.rydberg[k] as usize).min(PR_COLUMNS - 1)] += p;
            pop_e_total += p * self.excited[k] as f64;
            let mut mask = self.rydberg_mask[k];
            while mask != 0 {
                let j = mask.trailing_zeros() as usize;
                per_atom_rr[j] += p;
                mask &= mask - 1;
            }
        }
        PopulationSummary {
            pr_n,
            pop_e_total,
            per_atom_rr,
        }
    }

    pub fn summarize_amplitudes(&self, psi: &[C64], norm_sqr: f64) -> PopulationSummary {
        self.summarize(psi.iter().map(|a| a.norm_sqr() / norm_sqr))
    }
}
