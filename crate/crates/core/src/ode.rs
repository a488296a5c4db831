//! Explicit Runge-Kutta steppers over flat complex state vectors.

use crate::algebra::C64;
use crate::error::{Error, Result};

/// A first-order system `dy/dt = L y + f(t, y)` where `L` is a constant
/// diagonal generator whose flow is known exactly.
///
/// Systems without such a part keep the default `propagate` and `rhs` is
/// the whole derivative.
pub(crate) trait ComplexOde {
    /// The non-stiff remainder `f(t, y)`.
    fn rhs(&mut self, t: f64, y: &[C64], dy: &mut [C64]);

    /// `y <- exp(L s) y`.
    fn propagate(&self, _s: f64, _y: &mut [C64]) {}

    /// `exp(-L s) f(t + s, exp(L s) u)`, the remainder seen from the frame
    /// of a step starting at `t`.
    fn rhs_in_frame(&mut self, t: f64, s: f64, u: &[C64], du: &mut [C64]) {
        debug_assert!(!self.has_linear_part());
        self.rhs(t + s, u, du);
    }

    fn has_linear_part(&self) -> bool {
        false
    }
}

// Dormand-Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const PI_ALPHA: f64 = 0.17;
const PI_BETA: f64 = 0.04;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

/// Adaptive Dormand-Prince 5(4) with PI step control and the max-norm error
/// measure `max_i |err_i| / (atol + rtol * max(|y_i|, |y_new_i|))`.
///
/// With a linear part the tableau is applied in the frame
/// `u(s) = exp(-L s) y(t + s)` of the current step (integrating-factor
/// Runge-Kutta), so the step size is not bound by the stiffness of `L`.
pub(crate) struct Dopri5 {
    k: [Vec<C64>; 7],
    stage: Vec<C64>,
    y_new: Vec<C64>,
    fsal_valid: bool,
    rtol: f64,
    atol: f64,
    h: f64,
    h_max: f64,
    err_old: f64,
    stats: StepStats,
}

impl Dopri5 {
    pub fn new(n: usize, rtol: f64, atol: f64, h_max: f64) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![C64::new(0.0, 0.0); n]),
            stage: vec![C64::new(0.0, 0.0); n],
            y_new: vec![C64::new(0.0, 0.0); n],
            fsal_valid: false,
            rtol,
            atol,
            h: 0.0,
            h_max,
            err_old: 1e-4,
            stats: StepStats::default(),
        }
    }

    pub fn stats(&self) -> StepStats {
        self.stats
    }

    /// Forget the cached derivative after the state was changed externally.
    pub fn invalidate(&mut self) {
        self.fsal_valid = false;
    }

    /// State produced by the last [`Dopri5::trial_step`].
    pub fn trial_state(&self) -> &[C64] {
        &self.y_new
    }

    fn eval<S: ComplexOde>(&mut self, sys: &mut S, idx: usize, t: f64) {
        let mut k = std::mem::take(&mut self.k[idx]);
        sys.rhs(t, &self.stage, &mut k);
        self.k[idx] = k;
        self.stats.rhs_evals += 1;
    }

    /// Stage derivative at offset `s` into the step, in the step frame.
    fn eval_framed<S: ComplexOde>(&mut self, sys: &mut S, idx: usize, t: f64, s: f64) {
        let mut k = std::mem::take(&mut self.k[idx]);
        sys.rhs_in_frame(t, s, &self.stage, &mut k);
        self.k[idx] = k;
        self.stats.rhs_evals += 1;
    }

    fn initial_step<S: ComplexOde>(&mut self, sys: &mut S, t: f64, y: &[C64], span: f64) -> f64 {
        self.ensure_k1(sys, t, y);
        let sc = |yi: &C64| self.atol + self.rtol * yi.norm();
        let d0 = y.iter().map(|v| v.norm() / sc(v)).fold(0.0, f64::max);
        let d1 = y
            .iter()
            .zip(&self.k[0])
            .map(|(v, f)| f.norm() / sc(v))
            .fold(0.0, f64::max);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0.min(span).min(self.h_max)
    }

    fn ensure_k1<S: ComplexOde>(&mut self, sys: &mut S, t: f64, y: &[C64]) {
        if !self.fsal_valid {
            self.stage.copy_from_slice(y);
            self.eval(sys, 0, t);
            self.fsal_valid = true;
        }
    }

    /// One step of size `h` from `(t, y)` into [`Dopri5::trial_state`],
    /// returning the scaled error. Requires `k1 = f(t, y)` to be current.
    fn attempt<S: ComplexOde>(&mut self, sys: &mut S, t: f64, y: &[C64], h: f64) -> f64 {
        let n = y.len();
        {
            let [k1, ..] = &self.k;
            let st = &mut self.stage[..n];
            for i in 0..n {
                st[i] = y[i] + k1[i] * (h * A21);
            }
        }
        self.eval_framed(sys, 1, t, C2 * h);
        {
            let [k1, k2, ..] = &self.k;
            let st = &mut self.stage[..n];
            for i in 0..n {
                st[i] = y[i] + (k1[i] * A31 + k2[i] * A32) * h;
            }
        }
        self.eval_framed(sys, 2, t, C3 * h);
        {
            let [k1, k2, k3, ..] = &self.k;
            let st = &mut self.stage[..n];
            for i in 0..n {
                st[i] = y[i] + (k1[i] * A41 + k2[i] * A42 + k3[i] * A43) * h;
            }
        }
        self.eval_framed(sys, 3, t, C4 * h);
        {
            let [k1, k2, k3, k4, ..] = &self.k;
            let st = &mut self.stage[..n];
            for i in 0..n {
                st[i] = y[i] + (k1[i] * A51 + k2[i] * A52 + k3[i] * A53 + k4[i] * A54) * h;
            }
        }
        self.eval_framed(sys, 4, t, C5 * h);
        {
            let [k1, k2, k3, k4, k5, ..] = &self.k;
            let st = &mut self.stage[..n];
            for i in 0..n {
                st[i] = y[i]
                    + (k1[i] * A61 + k2[i] * A62 + k3[i] * A63 + k4[i] * A64 + k5[i] * A65) * h;
            }
        }
        self.eval_framed(sys, 5, t, h);
        {
            let [k1, _, k3, k4, k5, k6, _] = &self.k;
            let st = &mut self.stage[..n];
            for i in 0..n {
                st[i] = y[i]
                    + (k1[i] * A71 + k3[i] * A73 + k4[i] * A74 + k5[i] * A75 + k6[i] * A76) * h;
            }
        }
        // k7 stays in the lab frame: it is the next step's k1
        let split = sys.has_linear_part();
        if split {
            sys.propagate(h, &mut self.stage);
        }
        self.eval(sys, 6, t + h);
        std::mem::swap(&mut self.y_new, &mut self.stage);

        let [k1, _, k3, k4, k5, k6, k7] = &self.k;
        let err_vec = &mut self.stage[..n];
        for i in 0..n {
            err_vec[i] = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6) * h;
        }
        if split {
            sys.propagate(h, err_vec);
        }
        let mut err2: f64 = 0.0;
        for i in 0..n {
            let e = err_vec[i] + k7[i] * (E7 * h);
            let sc = self.atol + self.rtol * y[i].norm_sqr().max(self.y_new[i].norm_sqr()).sqrt();
            let r2 = e.norm_sqr() / (sc * sc);
            if r2.is_nan() {
                return f64::INFINITY;
            }
            err2 = err2.max(r2);
        }
        err2.sqrt()
    }

    /// Single step of exactly `h` from `(t, y)`, without step control.
    /// Used to refine event times inside an accepted step.
    pub fn trial_step<S: ComplexOde>(&mut self, sys: &mut S, t: f64, y: &[C64], h: f64) {
        self.fsal_valid = false;
        self.ensure_k1(sys, t, y);
        self.attempt(sys, t, y, h);
        self.fsal_valid = false;
    }

    /// Takes one accepted step from `t` toward `t_max`, updating `t` and `y`.
    pub fn step<S: ComplexOde>(&mut self, sys: &mut S, t: &mut f64, y: &mut [C64], t_max: f64) -> Result<()> {
        let span = t_max - *t;
        if span <= 0.0 {
            return Ok(());
        }
        if self.h <= 0.0 {
            self.h = self.initial_step(sys, *t, y, span);
        }
        self.ensure_k1(sys, *t, y);
        let mut rejected_once = false;
        loop {
            let clipped = self.h >= span;
            let h = if clipped { span } else { self.h };
            let err = self.attempt(sys, *t, y, h);
            if err <= 1.0 {
                self.stats.accepted += 1;
                y.copy_from_slice(&self.y_new);
                self.k.swap(0, 6);
                if !self.y_new.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
                    return Err(Error::NonFinite { t: *t + h });
                }
                *t = if clipped { t_max } else { *t + h };
                let err = err.max(1e-10);
                let mut fac = SAFETY * err.powf(-PI_ALPHA) * self.err_old.powf(PI_BETA);
                fac = fac.clamp(FAC_MIN, FAC_MAX);
                if rejected_once {
                    fac = fac.min(1.0);
                }
                self.err_old = err;
                // a clipped step says nothing about the sustainable step size
                if !clipped || h * fac > self.h {
                    self.h = (h * fac).min(self.h_max);
                }
                return Ok(());
            }
            self.stats.rejected += 1;
            rejected_once = true;
            let fac = if err.is_finite() {
                (SAFETY * err.powf(-0.2)).max(FAC_MIN)
            } else {
                FAC_MIN
            };
            self.h = h * fac;
            let floor = 1e-14 * t.abs().max(1.0);
            if self.h < floor {
                return Err(Error::StepSizeUnderflow {
                    t: *t,
                    h: self.h,
                    error: err,
                });
            }
        }
    }

    /// Integrates until `t == t_end`.
    pub fn advance_to<S: ComplexOde>(&mut self, sys: &mut S, t: &mut f64, y: &mut [C64], t_end: f64) -> Result<()> {
        while *t < t_end {
            self.step(sys, t, y, t_end)?;
        }
        Ok(())
    }
}

/// Classical fixed-step RK4.
pub(crate) struct Rk4 {
    k: [Vec<C64>; 4],
    stage: Vec<C64>,
    pub rhs_evals: usize,
}

impl Rk4 {
    pub fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![C64::new(0.0, 0.0); n]),
            stage: vec![C64::new(0.0, 0.0); n],
            rhs_evals: 0,
        }
    }

    pub fn step<S: ComplexOde>(&mut self, sys: &mut S, t: f64, y: &mut [C64], h: f64) {
        let n = y.len();
        sys.rhs(t, y, &mut self.k[0]);
        for (s, (yi, ki)) in self.stage.iter_mut().zip(y.iter().zip(&self.k[0])) {
            *s = yi + ki * (0.5 * h);
        }
        sys.rhs(t + 0.5 * h, &self.stage, &mut self.k[1]);
        for (s, (yi, ki)) in self.stage.iter_mut().zip(y.iter().zip(&self.k[1])) {
            *s = yi + ki * (0.5 * h);
        }
        sys.rhs(t + 0.5 * h, &self.stage, &mut self.k[2]);
        for (s, (yi, ki)) in self.stage.iter_mut().zip(y.iter().zip(&self.k[2])) {
            *s = yi + ki * h;
        }
        sys.rhs(t + h, &self.stage, &mut self.k[3]);
        self.rhs_evals += 4;
        let [k1, k2, k3, k4] = &self.k;
        for i in 0..n {
            y[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0);
        }
    }

    /// Integrates from `t` to `t_end` in steps no longer than `dt`.
    pub fn advance_to<S: ComplexOde>(&mut self, sys: &mut S, t: &mut f64, y: &mut [C64], t_end: f64, dt: f64) {
        let span = t_end - *t;
        if span <= 0.0 {
            return;
        }
        let steps = (span / dt - 1e-9).ceil().max(1.0) as usize;
        let h = span / steps as f64;
        let t0 = *t;
        for s in 0..steps {
            self.step(sys, t0 + s as f64 * h, y, h);
        }
        *t = t_end;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ZERO_C: C64 = C64::new(0.0, 0.0);

    struct Rotation {
        omega: f64,
    }

    impl ComplexOde for Rotation {
        fn rhs(&mut self, _t: f64, y: &[C64], dy: &mut [C64]) {
            for (d, v) in dy.iter_mut().zip(y) {
                *d = C64::new(0.0, -self.omega) * v;
            }
        }
    }

    #[test]
    fn dopri_tracks_phase_rotation() {
        let mut sys = Rotation { omega: 3.0 };
        let mut y = vec![C64::new(1.0, 0.0), C64::new(0.0, 2.0)];
        let mut t = 0.0;
        let mut dp = Dopri5::new(2, 1e-10, 1e-12, 1.0);
        dp.advance_to(&mut sys, &mut t, &mut y, 5.0).unwrap();
        let exact = C64::from_polar(1.0, -15.0);
        assert_eq!(t, 5.0);
        assert!((y[0] - exact).norm() < 1e-8);
        assert!((y[1] - exact * C64::new(0.0, 2.0)).norm() < 2e-8);
        assert!(dp.stats().accepted > 10);
    }

    #[test]
    fn rk4_converges_at_fourth_order() {
        let run = |dt: f64| {
            let mut sys = Rotation { omega: 1.0 };
            let mut y = vec![C64::new(1.0, 0.0)];
            let mut t = 0.0;
            Rk4::new(1).advance_to(&mut sys, &mut t, &mut y, 2.0, dt);
            (y[0] - C64::from_polar(1.0, -2.0)).norm()
        };
        let ratio = run(0.1) / run(0.05);
        assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
    }

    // H = [[0, g], [g, delta]] with the detuning held in the frame
    struct Detuned {
        g: f64,
        delta: f64,
        split: bool,
    }

    impl ComplexOde for Detuned {
        fn rhs(&mut self, _t: f64, y: &[C64], dy: &mut [C64]) {
            let d = if self.split { 0.0 } else { self.delta };
            dy[0] = C64::new(0.0, -self.g) * y[1];
            dy[1] = C64::new(0.0, -self.g) * y[0] + C64::new(0.0, -d) * y[1];
        }

        fn propagate(&self, s: f64, y: &mut [C64]) {
            if self.split {
                y[1] *= C64::from_polar(1.0, -self.delta * s);
            }
        }

        fn rhs_in_frame(&mut self, t: f64, s: f64, u: &[C64], du: &mut [C64]) {
            let mut y = u.to_vec();
            self.propagate(s, &mut y);
            self.rhs(t + s, &y, du);
            self.propagate(-s, du);
        }

        fn has_linear_part(&self) -> bool {
            self.split
        }
    }

    fn detuned_exact(g: f64, delta: f64, t: f64) -> [C64; 2] {
        let w = (delta * delta / 4.0 + g * g).sqrt();
        let phase = C64::from_polar(1.0, -delta * t / 2.0);
        let (s, c) = (w * t).sin_cos();
        [
            phase * C64::new(c, delta / 2.0 / w * s),
            phase * C64::new(0.0, -g / w * s),
        ]
    }

    #[test]
    fn split_dopri_matches_exact_two_level_solution() {
        let (g, delta, t_end) = (1.0, 400.0, 3.0);
        let exact = detuned_exact(g, delta, t_end);
        let mut steps = [0; 2];
        for (i, split) in [false, true].into_iter().enumerate() {
            let mut sys = Detuned { g, delta, split };
            let mut y = vec![C64::new(1.0, 0.0), ZERO_C];
            let mut t = 0.0;
            let mut dp = Dopri5::new(2, 1e-9, 1e-12, 1.0);
            dp.advance_to(&mut sys, &mut t, &mut y, t_end).unwrap();
            for (a, b) in y.iter().zip(&exact) {
                assert!((a - b).norm() < 1e-6, "split {split}: {a} vs {b}");
            }
            steps[i] = dp.stats().accepted;
        }
        assert!(steps[1] * 2 < steps[0], "steps {steps:?}");
    }
}
