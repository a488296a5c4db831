//! Time-dependent Lindblad master equation.
//!
//! The generator is applied as
//! `d rho/dt = -i K rho + (-i K rho)^† + sum_k c_k rho c_k^†` with the
//! effective Hamiltonian `K = H - (i/2) sum_k c_k^† c_k`, which needs one
//! sparse-dense product per evaluation. The integrated state is the upper
//! triangle of `rho`, so Hermiticity holds by construction.
//!
//! The interaction shifts are taken out exactly: in the frame of each step
//! `rho_ab` rotates with `exp(-i (V_a - V_b) s)` and the Runge-Kutta stages
//! only see the slow remainder.

use crate::algebra::{level_of, ComplexMatrix, DensityMatrix, Level, OperatorMatrix, C64, I, ZERO};
use crate::error::{invalid, Error, Result};
use crate::model::Model;
use crate::observables::{BasisCensus, ObservableSeries};
use crate::ode::{ComplexOde, Dopri5, Rk4, StepStats};

/// Largest tolerated `|tr(rho) - 1|` during integration.
pub const TRACE_DRIFT_LIMIT: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Dormand-Prince 5(4) with adaptive steps, interaction shifts
    /// integrated exactly.
    Adaptive,
    /// Classical RK4 with step `fixed_dt` on the full generator.
    FixedRk4,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorSettings {
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    pub fixed_dt: f64,
    /// Uniformly spaced output times over `[0, t_end]`, endpoints included.
    pub sample_count: usize,
    /// Cholesky positivity check of `rho + 1e-8 I` at every sample.
    pub check_positivity: bool,
    /// Extra times at which the full density matrix is kept.
    pub snapshot_times: Vec<f64>,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            method: Method::Adaptive,
            rtol: 1e-6,
            atol: 3e-10,
            fixed_dt: 1e-3,
            sample_count: 600,
            check_positivity: false,
            snapshot_times: Vec::new(),
        }
    }
}

impl IntegratorSettings {
    pub fn validate(&self, model: &Model) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(invalid("rtol", "tolerances must be positive"));
        }
        if self.sample_count < 2 {
            return Err(invalid("sample_count", "at least two samples are required"));
        }
        if self.method == Method::FixedRk4 {
            if !(self.fixed_dt > 0.0) {
                return Err(invalid("fixed_dt", "must be positive"));
            }
            let scale = fastest_rate(model);
            if self.fixed_dt * scale >= 0.5 {
                return Err(invalid(
                    "fixed_dt",
                    format!(
                        "dt * {scale:.1} rad/us = {:.3} must stay below 0.5",
                        self.fixed_dt * scale
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Fastest rate entering the fixed-step stability rule: the full spread of
/// interaction energies (the pair shift for two atoms), `Gamma_eg` and the
/// peak Rabi frequency.
pub fn fastest_rate(model: &Model) -> f64 {
    let cfg = model.config();
    model
        .interaction_spread()
        .max(cfg.rates.gamma_eg)
        .max(cfg.pulses.omega0)
}

/// Per-sample consistency figures of the density matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleDiagnostics {
    pub hermiticity_error: f64,
    /// `None` unless positivity checks were requested.
    pub positive: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct MasterEquationRun {
    pub series: ObservableSeries,
    pub diagnostics: Vec<SampleDiagnostics>,
    pub final_state: DensityMatrix,
    pub snapshots: Vec<(f64, DensityMatrix)>,
    pub stats: StepStats,
}

/// Upper triangle of a `d x d` Hermitian matrix, row by row.
pub(crate) mod packed {
    use crate::algebra::C64;

    pub fn len(d: usize) -> usize {
        d * (d + 1) / 2
    }

    pub fn row_start(a: usize, d: usize) -> usize {
        a * (2 * d - a + 1) / 2
    }

    pub fn pack(full: &[C64], d: usize) -> Vec<C64> {
        let mut out = Vec::with_capacity(len(d));
        for a in 0..d {
            out.push(C64::new(full[a * d + a].re, 0.0));
            out.extend_from_slice(&full[a * d + a + 1..(a + 1) * d]);
        }
        out
    }

    const TILE: usize = 32;

    /// `full_ab = f_a conj(f_b) u_ab` on both triangles, `f = 1` without a frame.
    pub fn unpack_into(u: &[C64], d: usize, full: &mut [C64], frame: Option<&[C64]>) {
        let mut scratch = [C64::new(0.0, 0.0); TILE];
        for a0 in (0..d).step_by(TILE) {
            let a1 = (a0 + TILE).min(d);
            for b0 in (a0..d).step_by(TILE) {
                let b1 = (b0 + TILE).min(d);
                for a in a0..a1 {
                    let lo = b0.max(a);
                    if lo >= b1 {
                        continue;
                    }
                    let src = &u[row_start(a, d) + lo - a..row_start(a, d) + b1 - a];
                    let vals = &mut scratch[..b1 - lo];
                    match frame {
                        Some(f) => {
                            let fa = f[a];
                            for ((v, x), fb) in vals.iter_mut().zip(src).zip(&f[lo..b1]) {
                                *v = x * (fa * fb.conj());
                            }
                        }
                        None => vals.copy_from_slice(src),
                    }
                    full[a * d + lo..a * d + b1].copy_from_slice(vals);
                    for (b, v) in (lo..b1).zip(vals.iter()) {
                        full[b * d + a] = v.conj();
                    }
                }
            }
        }
    }

    /// `out_ab = (y_ab + conj(y_ba)) conj(f_a) f_b + w_ab u_ab` for `b >= a`,
    /// with `w` and `u` packed and `|f| = 1`.
    pub fn hermitian_part_into(
        y: &[C64],
        d: usize,
        out: &mut [C64],
        frame: Option<&[C64]>,
        weighted: Option<(&[C64], &[C64])>,
    ) {
        for a0 in (0..d).step_by(TILE) {
            let a1 = (a0 + TILE).min(d);
            for b0 in (a0..d).step_by(TILE) {
                let b1 = (b0 + TILE).min(d);
                for a in a0..a1 {
                    let lo = b0.max(a);
                    if lo >= b1 {
                        continue;
                    }
                    let dst = &mut out[row_start(a, d) + lo - a..row_start(a, d) + b1 - a];
                    let row = &y[a * d + lo..a * d + b1];
                    for ((o, v), b) in dst.iter_mut().zip(row).zip(lo..b1) {
                        *o = v + y[b * d + a].conj();
                    }
                    if let Some(f) = frame {
                        let fa = f[a].conj();
                        for (o, fb) in dst.iter_mut().zip(&f[lo..b1]) {
                            *o *= fa * fb;
                        }
                    }
                    if let Some((w, u)) = weighted {
                        let range = row_start(a, d) + lo - a..row_start(a, d) + b1 - a;
                        for ((o, wi), x) in dst.iter_mut().zip(&w[range.clone()]).zip(&u[range]) {
                            *o += wi * x;
                        }
                    }
                }
            }
        }
    }

    pub fn unpack(u: &[C64], d: usize) -> Vec<C64> {
        let mut full = vec![C64::new(0.0, 0.0); d * d];
        unpack_into(u, d, &mut full, None);
        full
    }

    pub fn diagonal(u: &[C64], d: usize) -> impl Iterator<Item = f64> + '_ {
        (0..d).map(move |a| u[row_start(a, d)].re)
    }

    /// `tr(rho^2)` from the stored triangle.
    pub fn purity(u: &[C64], d: usize) -> f64 {
        let mut total = 0.0;
        for a in 0..d {
            let start = row_start(a, d);
            total += u[start].norm_sqr();
            total += 2.0 * u[start + 1..start + d - a].iter().map(|v| v.norm_sqr()).sum::<f64>();
        }
        total
    }
}

/// Lindblad generator with a fixed sparsity pattern for `-i K(t)`, acting
/// on packed Hermitian matrices.
pub(crate) struct Liouvillian<'m> {
    model: &'m Model,
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    coef_ge: Vec<f64>,
    coef_er: Vec<f64>,
    coef_const: Vec<C64>,
    k_vals: Vec<C64>,
    // -i V_a for the shifts held in the rotating frame (empty when unsplit)
    k_diag: Vec<C64>,
    transitions: Vec<Transition>,
    // (row, col, value) of collapse operators without transition structure
    jump_entries: Vec<Vec<(usize, usize, C64)>>,
    // sum over diagonal collapse operators of d(a) conj(d(b)), packed
    diag_weights: Option<Vec<C64>>,
    rho: Vec<C64>,
    product: Vec<C64>,
    simd: bool,
}

/// `sqrt(rate) |to><from|` on the atom whose digit has place value `stride`.
#[derive(Debug, Clone, Copy)]
struct Transition {
    stride: usize,
    from: usize,
    to: usize,
    rate: f64,
}

impl Transition {
    fn detect(op: &OperatorMatrix, atom: usize, n_atoms: usize) -> Option<Self> {
        let stride = 3usize.pow((n_atoms - 1 - atom) as u32);
        let (r0, c0, v0) = op.triplets().next()?;
        let to = level_of(r0, atom, n_atoms).index();
        let from = level_of(c0, atom, n_atoms).index();
        let shift = c0 as isize - r0 as isize;
        if from == to || v0.im != 0.0 || shift != (from as isize - to as isize) * stride as isize {
            return None;
        }
        let matches = op.nnz() * 3 == op.dim()
            && op.triplets().all(|(r, c, v)| {
                v == v0 && level_of(r, atom, n_atoms).index() == to && c as isize - r as isize == shift
            });
        matches.then_some(Self {
            stride,
            from,
            to,
            rate: v0.re * v0.re,
        })
    }

    /// `y[a, :] += (c rho c^†)[a, :] / 2` for one row `a`.
    #[inline]
    fn add_half_sandwich_row(&self, a: usize, rho: &[C64], y_row: &mut [C64], d: usize) {
        let s = self.stride;
        let col0 = self.to * s;
        if (a / s) % 3 != self.to {
            return;
        }
        let shift = (self.from as isize - self.to as isize) * s as isize;
        let w = 0.5 * self.rate;
        let src_row = (a as isize + shift) as usize;
        let src0 = (col0 as isize + shift) as usize;
        let x = &rho[src_row * d + src0..(src_row + 1) * d];
        let out = &mut y_row[col0..];
        if s == 1 {
            for (o, v) in out.iter_mut().step_by(3).zip(x.iter().step_by(3)) {
                *o += v * w;
            }
        } else {
            for (oc, xc) in out.chunks_mut(3 * s).zip(x.chunks(3 * s)) {
                for (o, v) in oc[..s].iter_mut().zip(&xc[..s]) {
                    *o += v * w;
                }
            }
        }
    }
}

/// `y += sum_k (c_k rho c_k^†) / 2`, one row of `y` at a time.
fn add_half_transitions(transitions: &[Transition], rho: &[C64], y: &mut [C64], d: usize) {
    if transitions.is_empty() {
        return;
    }
    for (a, y_row) in y.chunks_exact_mut(d).enumerate() {
        for tr in transitions {
            tr.add_half_sandwich_row(a, rho, y_row, d);
        }
    }
}

/// `product[r, :] = sum_p vals[p] rho[cols[p], :]`, in column panels that
/// stay cache resident.
#[inline(always)]
fn sparse_product_body(row_ptr: &[usize], cols: &[usize], vals: &[C64], rho: &[C64], product: &mut [C64], d: usize) {
    const PANEL: usize = 96;
    for c0 in (0..d).step_by(PANEL) {
        let c1 = (c0 + PANEL).min(d);
        for r in 0..d {
            let dst = &mut product[r * d + c0..r * d + c1];
            dst.fill(ZERO);
            for p in row_ptr[r]..row_ptr[r + 1] {
                let a = vals[p];
                let src = &rho[cols[p] * d + c0..cols[p] * d + c1];
                for (y, x) in dst.iter_mut().zip(src) {
                    *y += a * x;
                }
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
fn sparse_product_avx2(row_ptr: &[usize], cols: &[usize], vals: &[C64], rho: &[C64], product: &mut [C64], d: usize) {
    use std::arch::x86_64::*;
    assert!(rho.len() >= d * d && product.len() >= d * d && row_ptr.len() > d);
    assert!(cols.iter().all(|&c| c < d) && cols.len() == vals.len());
    const PANEL: usize = 96;
    let rp = rho.as_ptr() as *const f64;
    let pp = product.as_mut_ptr() as *mut f64;
    // two complex numbers per register, eight per block
    let wide = d - d % 2;
    for c0 in (0..wide).step_by(PANEL) {
        let c1 = (c0 + PANEL).min(wide);
        for r in 0..d {
            let (p0, p1) = (row_ptr[r], row_ptr[r + 1]);
            let mut c = c0;
            // SAFETY: every offset below is (row < d) * d + (col < d), checked above
            unsafe {
                while c + 8 <= c1 {
                    let mut acc = [_mm256_setzero_pd(); 4];
                    for p in p0..p1 {
                        let ar = _mm256_set1_pd(vals[p].re);
                        let ai = _mm256_set1_pd(vals[p].im);
                        let src = rp.add(2 * (cols[p] * d + c));
                        for (q, slot) in acc.iter_mut().enumerate() {
                            let x = _mm256_loadu_pd(src.add(4 * q));
                            let xs = _mm256_permute_pd(x, 0b0101);
                            *slot = _mm256_add_pd(*slot, _mm256_fmaddsub_pd(ar, x, _mm256_mul_pd(ai, xs)));
                        }
                    }
                    let dst = pp.add(2 * (r * d + c));
                    for (q, slot) in acc.iter().enumerate() {
                        _mm256_storeu_pd(dst.add(4 * q), *slot);
                    }
                    c += 8;
                }
                while c + 2 <= c1 {
                    let mut acc = _mm256_setzero_pd();
                    for p in p0..p1 {
                        let ar = _mm256_set1_pd(vals[p].re);
                        let ai = _mm256_set1_pd(vals[p].im);
                        let x = _mm256_loadu_pd(rp.add(2 * (cols[p] * d + c)));
                        let xs = _mm256_permute_pd(x, 0b0101);
                        acc = _mm256_add_pd(acc, _mm256_fmaddsub_pd(ar, x, _mm256_mul_pd(ai, xs)));
                    }
                    _mm256_storeu_pd(pp.add(2 * (r * d + c)), acc);
                    c += 2;
                }
            }
        }
    }
    for c in wide..d {
        for r in 0..d {
            let mut acc = ZERO;
            for p in row_ptr[r]..row_ptr[r + 1] {
                acc += vals[p] * rho[cols[p] * d + c];
            }
            product[r * d + c] = acc;
        }
    }
}

fn simd_available() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

impl<'m> Liouvillian<'m> {
    /// With `split`, the interaction shifts are left to [`ComplexOde::propagate`]
    /// and `rhs` returns the remainder only.
    pub fn new(model: &'m Model, split: bool) -> Result<Self> {
        let dim = model.dim();
        let n_atoms = model.n_atoms();
        let mut decay = OperatorMatrix::zeros(dim);
        let mut transitions = Vec::new();
        let mut jump_entries = Vec::new();
        let mut diag_weights: Option<Vec<C64>> = None;
        for ch in model.channels() {
            let c = &ch.operator;
            decay = decay.add(&c.adjoint().matmul(c)?)?;
            if c.is_diagonal() {
                let d: Vec<C64> = (0..dim).map(|k| c.get(k, k)).collect();
                let w = diag_weights.get_or_insert_with(|| vec![ZERO; packed::len(dim)]);
                let mut i = 0;
                for a in 0..dim {
                    for b in a..dim {
                        w[i] += d[a] * d[b].conj();
                        i += 1;
                    }
                }
            } else if let Some(tr) = Transition::detect(c, ch.atom, n_atoms) {
                transitions.push(tr);
            } else {
                jump_entries.push(c.triplets().collect());
            }
        }
        let constant = model
            .interaction()
            .add(&decay.scale(C64::new(0.0, -0.5)))?;

        let mut merged: Vec<(usize, usize, f64, f64, C64)> = Vec::new();
        merged.extend(model.drive_ge().triplets().map(|(r, c, v)| (r, c, v.re, 0.0, ZERO)));
        merged.extend(model.drive_er().triplets().map(|(r, c, v)| (r, c, 0.0, v.re, ZERO)));
        let mut k_diag = Vec::new();
        if split {
            k_diag = vec![ZERO; dim];
        }
        for (r, c, v) in constant.triplets() {
            if r == c && split {
                k_diag[r] = C64::new(0.0, -v.re);
                if v.im != 0.0 {
                    merged.push((r, c, 0.0, 0.0, C64::new(0.0, v.im)));
                }
            } else {
                merged.push((r, c, 0.0, 0.0, v));
            }
        }
        merged.sort_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0usize; dim + 1];
        let (mut cols, mut coef_ge, mut coef_er, mut coef_const) = (vec![], vec![], vec![], vec![]);
        let mut last: Option<(usize, usize)> = None;
        for (r, c, ge, er, k) in merged {
            if last == Some((r, c)) {
                *coef_ge.last_mut().unwrap() += ge;
                *coef_er.last_mut().unwrap() += er;
                *coef_const.last_mut().unwrap() += k;
                continue;
            }
            last = Some((r, c));
            row_ptr[r + 1] += 1;
            cols.push(c);
            coef_ge.push(ge);
            coef_er.push(er);
            coef_const.push(k);
        }
        for r in 0..dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        let nnz = cols.len();
        Ok(Self {
            model,
            dim,
            row_ptr,
            cols,
            coef_ge,
            coef_er,
            coef_const,
            k_vals: vec![ZERO; nnz],
            k_diag,
            transitions,
            jump_entries,
            diag_weights,
            rho: vec![ZERO; dim * dim],
            product: vec![ZERO; dim * dim],
            simd: simd_available(),
        })
    }

    fn frame_factors(&self, s: f64) -> Option<Vec<C64>> {
        if self.k_diag.is_empty() || s == 0.0 {
            return None;
        }
        Some(self.k_diag.iter().map(|&k| (k * s).exp()).collect())
    }

    /// Generator at time `t` applied to the packed state `u` seen from a
    /// frame rotated by `s`; the remaining terms are accumulated at half
    /// weight into `y`, the result is `y + y^†`, and the diagonal-channel
    /// sandwich is added on the packed state.
    fn evaluate(&mut self, t: f64, s: f64, u: &[C64], out: &mut [C64]) {
        let d = self.dim;
        let frame = self.frame_factors(s);
        packed::unpack_into(u, d, &mut self.rho, frame.as_deref());

        let (ge, er) = self.model.rabi(t);
        for (((kv, &a), &b), &c) in self
            .k_vals
            .iter_mut()
            .zip(&self.coef_ge)
            .zip(&self.coef_er)
            .zip(&self.coef_const)
        {
            *kv = -I * (C64::new(a * ge + b * er, 0.0) + c);
        }
        let rho = &self.rho;
        #[cfg(target_arch = "x86_64")]
        if self.simd {
            // SAFETY: avx2 and fma were detected at construction
            unsafe { sparse_product_avx2(&self.row_ptr, &self.cols, &self.k_vals, rho, &mut self.product, d) };
        } else {
            sparse_product_body(&self.row_ptr, &self.cols, &self.k_vals, rho, &mut self.product, d);
        }
        #[cfg(not(target_arch = "x86_64"))]
        sparse_product_body(&self.row_ptr, &self.cols, &self.k_vals, rho, &mut self.product, d);

        let y = &mut self.product;
        add_half_transitions(&self.transitions, rho, y, d);
        for entries in &self.jump_entries {
            for &(a, k, va) in entries {
                for &(b, l, vb) in entries {
                    y[a * d + b] += va * vb.conj() * rho[k * d + l] * 0.5;
                }
            }
        }
        let weighted = self.diag_weights.as_deref().map(|w| (w, u));
        packed::hermitian_part_into(&self.product, d, out, frame.as_deref(), weighted);
    }
}

impl ComplexOde for Liouvillian<'_> {
    fn rhs(&mut self, t: f64, y: &[C64], dy: &mut [C64]) {
        self.evaluate(t, 0.0, y, dy);
    }

    fn rhs_in_frame(&mut self, t: f64, s: f64, u: &[C64], du: &mut [C64]) {
        self.evaluate(t + s, s, u, du);
    }

    fn propagate(&self, s: f64, y: &mut [C64]) {
        let Some(f) = self.frame_factors(s) else {
            return;
        };
        let d = self.dim;
        for a in 0..d {
            let start = packed::row_start(a, d);
            let fa = f[a];
            for (v, fb) in y[start..start + d - a].iter_mut().zip(&f[a..]) {
                *v *= fa * fb.conj();
            }
        }
    }

    fn has_linear_part(&self) -> bool {
        !self.k_diag.is_empty()
    }
}

/// `-i[H(t), rho] + sum_k (c_k rho c_k^† - {c_k^† c_k, rho}/2)`.
pub fn lindblad_rhs(rho: &DensityMatrix, t: f64, model: &Model) -> Result<ComplexMatrix> {
    if rho.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: rho.dim(),
        });
    }
    let d = rho.dim();
    let mut gen = Liouvillian::new(model, false)?;
    let u = packed::pack(rho.matrix().as_slice(), d);
    let mut out = vec![ZERO; u.len()];
    gen.rhs(t, &u, &mut out);
    ComplexMatrix::from_vec(d, packed::unpack(&out, d))
}

/// Uniform grid of `count` points over `[0, t_end]`.
pub fn sample_grid(t_end: f64, count: usize) -> Vec<f64> {
    let last = (count - 1) as f64;
    (0..count)
        .map(|k| if k + 1 == count { t_end } else { t_end * k as f64 / last })
        .collect()
}

fn to_density(u: &[C64], d: usize) -> Result<DensityMatrix> {
    Ok(DensityMatrix::new_unchecked(ComplexMatrix::from_vec(d, packed::unpack(u, d))?))
}

/// Integrates the master equation from `rho0` over `[0, t_end]`.
pub fn integrate(rho0: &DensityMatrix, model: &Model, settings: &IntegratorSettings) -> Result<MasterEquationRun> {
    if rho0.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: rho0.dim(),
        });
    }
    settings.validate(model)?;
    let t_end = model.t_end();
    let dim = model.dim();
    let grid = sample_grid(t_end, settings.sample_count);
    let mut snaps: Vec<f64> = settings
        .snapshot_times
        .iter()
        .copied()
        .filter(|t| (0.0..=t_end).contains(t))
        .collect();
    snaps.sort_by(|a, b| a.total_cmp(b));

    let mut stops: Vec<(f64, bool, bool)> = grid.iter().map(|&t| (t, true, false)).collect();
    stops.extend(snaps.iter().map(|&t| (t, false, true)));
    stops.sort_by(|a, b| a.0.total_cmp(&b.0));

    let census = BasisCensus::new(model.n_atoms(), dim);
    let mut gen = Liouvillian::new(model, settings.method == Method::Adaptive)?;
    let mut rho = packed::pack(rho0.matrix().as_slice(), dim);
    let n = rho.len();
    let mut t = 0.0;
    let mut series = ObservableSeries::with_capacity(grid.len());
    let mut diagnostics = Vec::with_capacity(grid.len());
    let mut snapshots = Vec::new();
    let mut dopri = Dopri5::new(n, settings.rtol, settings.atol, t_end / 10.0);
    let mut rk4 = Rk4::new(n);

    for (stop, is_sample, is_snapshot) in stops {
        match settings.method {
            Method::Adaptive => dopri.advance_to(&mut gen, &mut t, &mut rho, stop)?,
            Method::FixedRk4 => {
                rk4.advance_to(&mut gen, &mut t, &mut rho, stop, settings.fixed_dt);
                if rho.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                    return Err(Error::NonFinite { t });
                }
            }
        }
        if is_sample {
            let tr: f64 = packed::diagonal(&rho, dim).sum();
            let drift = (tr - 1.0).abs();
            if drift > TRACE_DRIFT_LIMIT {
                return Err(Error::TraceDrift {
                    t,
                    drift,
                    limit: TRACE_DRIFT_LIMIT,
                });
            }
            let pops = census.summarize(packed::diagonal(&rho, dim));
            series.push(t, &pops, packed::purity(&rho, dim), tr - 1.0);
            let hermiticity_error = (0..dim)
                .map(|a| rho[packed::row_start(a, dim)].im.abs())
                .fold(0.0, f64::max);
            let positive = if settings.check_positivity {
                Some(to_density(&rho, dim)?.is_positive_within(DensityMatrix::POSITIVITY_TOL))
            } else {
                None
            };
            diagnostics.push(SampleDiagnostics {
                hermiticity_error,
                positive,
            });
        }
        if is_snapshot {
            snapshots.push((t, to_density(&rho, dim)?));
        }
    }
    let mut stats = dopri.stats();
    stats.rhs_evals += rk4.rhs_evals;
    Ok(MasterEquationRun {
        series,
        diagnostics,
        final_state: to_density(&rho, dim)?,
        snapshots,
        stats,
    })
}

/// Overlap of a final state with `(1/N) sum_j |r_j><r_j| prod_{i != j} |g_i><g_i|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixedStateOverlap {
    /// `tr(rho rho_mix) / tr(rho_mix^2)`.
    pub overlap: f64,
    /// `(tr sqrt(sqrt(rho_mix) rho sqrt(rho_mix)))^2`.
    pub uhlmann_fidelity: f64,
}

/// Basis indices of the N states with one atom in `|r>` and the rest in `|g>`.
pub fn single_rydberg_ground_indices(n_atoms: usize) -> Vec<usize> {
    (0..n_atoms)
        .map(|j| {
            let levels: Vec<Level> = (0..n_atoms)
                .map(|i| if i == j { Level::Rydberg } else { Level::Ground })
                .collect();
            crate::algebra::product_index(&levels)
        })
        .collect()
}

/// Both overlap measures against the incoherent single-excitation mixture.
///
/// The reference state is diagonal on the support `S` of the N states, so
/// `sqrt(rho_mix) rho sqrt(rho_mix) = rho_SS / N` and the fidelity reduces to
/// an N x N eigenproblem.
pub fn final_state_fidelity_mixed(rho: &DensityMatrix, n_atoms: usize) -> Result<MixedStateOverlap> {
    let dim = crate::algebra::hilbert_dim(n_atoms)?;
    if rho.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: rho.dim(),
        });
    }
    let support = single_rydberg_ground_indices(n_atoms);
    let m = rho.matrix();
    let overlap: f64 = support.iter().map(|&k| m[(k, k)].re).sum();
    let n = n_atoms as f64;
    let block = nalgebra::DMatrix::from_fn(n_atoms, n_atoms, |a, b| m[(support[a], support[b])] / n);
    let block = (&block + block.adjoint()).scale(0.5);
    let root_sum: f64 = block
        .symmetric_eigenvalues()
        .iter()
        .map(|&ev| ev.max(0.0).sqrt())
        .sum();
    Ok(MixedStateOverlap {
        overlap,
        uhlmann_fidelity: root_sum * root_sum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::StateVector;
    use crate::model::{ModelConfig, PulseParams};

    fn decay_only(gamma: f64) -> Model {
        let mut cfg = ModelConfig::coherent(1);
        cfg.rates.gamma_eg = gamma;
        cfg.pulses = PulseParams::constant(0.0, 0.0, 1.0);
        Model::new(cfg).unwrap()
    }

    #[test]
    fn pure_decay_rhs() {
        let model = decay_only(38.0);
        let rho = DensityMatrix::pure(&StateVector::basis(3, 1).unwrap()).unwrap();
        let out = lindblad_rhs(&rho, 0.3, &model).unwrap();
        let mut expected = ComplexMatrix::zeros(3);
        expected[(0, 0)] = C64::new(38.0, 0.0);
        expected[(1, 1)] = C64::new(-38.0, 0.0);
        assert!(out.max_abs_diff(&expected) < 1e-13);
    }

    #[test]
    fn rhs_dimension_checked() {
        let model = decay_only(1.0);
        let rho = DensityMatrix::ground(2).unwrap();
        assert!(matches!(lindblad_rhs(&rho, 0.0, &model), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn exponential_population_decay() {
        let model = decay_only(2.0);
        let rho0 = DensityMatrix::pure(&StateVector::basis(3, 1).unwrap()).unwrap();
        let settings = IntegratorSettings {
            sample_count: 11,
            rtol: 1e-10,
            atol: 1e-12,
            ..Default::default()
        };
        let run = integrate(&rho0, &model, &settings).unwrap();
        for (k, &t) in run.series.times.iter().enumerate() {
            let pe = run.series.pop_e_total[k];
            assert!((pe - (-2.0 * t).exp()).abs() < 1e-9, "t={t} pe={pe}");
        }
    }

    #[test]
    fn grid_is_uniform_with_exact_endpoint() {
        let g = sample_grid(30.0, 600);
        assert_eq!(g.len(), 600);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[599], 30.0);
        assert!((g[1] - 30.0 / 599.0).abs() < 1e-15);
    }

    #[test]
    fn fixed_step_stability_rule() {
        let model = Model::new(ModelConfig::dissipative(2)).unwrap();
        let mut settings = IntegratorSettings {
            method: Method::FixedRk4,
            fixed_dt: 1e-3,
            ..Default::default()
        };
        assert!(settings.validate(&model).is_ok());
        settings.fixed_dt = 3e-3;
        assert!(settings.validate(&model).is_err());
        // six atoms: the all-Rydberg state sits 15 pair shifts up
        let big = Model::new(ModelConfig::dissipative(6)).unwrap();
        settings.fixed_dt = 1e-3;
        assert!(settings.validate(&big).is_err());
    }

    #[test]
    fn mixed_state_overlap_extremes() {
        let n = 3;
        let dim = 27;
        let mut m = ComplexMatrix::zeros(dim);
        for k in single_rydberg_ground_indices(n) {
            m[(k, k)] = C64::new(1.0 / 3.0, 0.0);
        }
        let mix = DensityMatrix::new(m).unwrap();
        let o = final_state_fidelity_mixed(&mix, n).unwrap();
        assert!((o.overlap - 1.0).abs() < 1e-12);
        assert!((o.uhlmann_fidelity - 1.0).abs() < 1e-12);

        let ground = DensityMatrix::ground(n).unwrap();
        let o = final_state_fidelity_mixed(&ground, n).unwrap();
        assert_eq!(o.overlap, 0.0);
        assert_eq!(o.uhlmann_fidelity, 0.0);
    }

    fn hermitian_sample(d: usize) -> Vec<C64> {
        let mut full = vec![ZERO; d * d];
        for a in 0..d {
            for b in a..d {
                let x = ((a * 7 + b * 13) % 11) as f64 / 11.0 - 0.4;
                let y = if a == b { 0.0 } else { ((a * 5 + b * 3) % 9) as f64 / 9.0 - 0.5 };
                full[a * d + b] = C64::new(x, y);
                full[b * d + a] = C64::new(x, -y);
            }
        }
        packed::pack(&full, d)
    }

    #[test]
    fn split_generator_plus_frame_part_is_full_generator() {
        let model = Model::new(ModelConfig::dissipative(2)).unwrap();
        let d = model.dim();
        let u = hermitian_sample(d);
        let t = 14.2;
        let mut full = Liouvillian::new(&model, false).unwrap();
        let mut split = Liouvillian::new(&model, true).unwrap();
        assert!(split.has_linear_part());
        let mut a = vec![ZERO; u.len()];
        let mut b = vec![ZERO; u.len()];
        full.rhs(t, &u, &mut a);
        split.rhs(t, &u, &mut b);
        for i in 0..d {
            for j in i..d {
                let idx = packed::row_start(i, d) + j - i;
                b[idx] += (split.k_diag[i] + split.k_diag[j].conj()) * u[idx];
            }
        }
        let err = a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10, "err {err}");
    }

    #[test]
    fn framed_evaluation_conjugates_by_the_frame() {
        let model = Model::new(ModelConfig::dissipative(2)).unwrap();
        let u = hermitian_sample(model.dim());
        let (t, s) = (9.0, 0.37);
        let mut gen = Liouvillian::new(&model, true).unwrap();
        let mut framed = vec![ZERO; u.len()];
        gen.rhs_in_frame(t, s, &u, &mut framed);
        let mut lab = u.clone();
        gen.propagate(s, &mut lab);
        let mut expected = vec![ZERO; u.len()];
        gen.rhs(t + s, &lab, &mut expected);
        gen.propagate(-s, &mut expected);
        let err = framed.iter().zip(&expected).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10, "err {err}");
    }
}
