mod common;

use common::*;
use proptest::prelude::*;
use superatom::algebra::{levels_of, product_index};
use superatom::model::{gaussian_pulse, PulseKind};
use superatom::{build_hamiltonian, build_jump_channels, Level, ModelConfig, PulseParams, RateSet, C64};

fn sigma(to: Level, from: Level) -> Dense {
    let mut m = Dense::zeros(3, 3);
    m[(to.index(), from.index())] = C64::new(1.0, 0.0);
    m
}

/// The three Liouvillians written out term by term for every atom.
fn liouvillians_direct(rates: &RateSet, n: usize, rho: &Dense) -> Dense {
    use Level::*;
    let mut out = Dense::zeros(rho.nrows(), rho.ncols());
    for j in 0..n {
        let s = |to, from| kron_oracle(&sigma(to, from), j, n);
        let (s_ge, s_eg, s_ee) = (s(Ground, Excited), s(Excited, Ground), s(Excited, Excited));
        let (s_er, s_re, s_rr) = (s(Excited, Rydberg), s(Rydberg, Excited), s(Rydberg, Rydberg));
        let s_gg = s(Ground, Ground);
        let two = C64::new(2.0, 0.0);
        out += (&s_ge * rho * &s_eg * two - &s_ee * rho - rho * &s_ee) * C64::new(0.5 * rates.gamma_eg, 0.0);
        out += (&s_er * rho * &s_re * two - &s_rr * rho - rho * &s_rr) * C64::new(0.5 * rates.gamma_re, 0.0);
        let a = &s_rr - &s_ee - &s_gg;
        out += (&a * rho * &a - rho) * C64::new(0.5 * rates.gamma_r_deph, 0.0);
    }
    out
}

#[test]
fn dissipator_matches_direct_liouvillians() {
    let mut r = rng(7);
    for n in 1..=3 {
        let mut cfg = ModelConfig::with_dephasing(n);
        cfg.rates.gamma_re = 0.7;
        let channels: Vec<Dense> = build_jump_channels(&cfg)
            .unwrap()
            .iter()
            .map(|c| dense(&c.operator))
            .collect();
        assert_eq!(channels.len(), 3 * n);
        let rho = random_density(&mut r, 3usize.pow(n as u32)).matrix().to_nalgebra();
        let diff = dissipator_oracle(&channels, &rho) - liouvillians_direct(&cfg.rates, n, &rho);
        assert!(max_abs(&diff) < 1e-12, "n={n}: {}", max_abs(&diff));
    }
}

#[test]
fn hamiltonian_is_linear_in_the_rabi_frequencies() {
    let cfg_at = |ge: f64, er: f64| ModelConfig {
        pulses: PulseParams::constant(ge, er, 30.0),
        ..ModelConfig::dissipative(3)
    };
    let h = |ge, er| dense(&build_hamiltonian(0.0, &cfg_at(ge, er)).unwrap());
    let v = h(0.0, 0.0);
    let x_ge = h(1.0, 0.0) - &v;
    let x_er = h(0.0, 1.0) - &v;
    for (ge, er) in [(2.5, -1.0), (18.8, 0.3), (-4.0, 7.0)] {
        let c = |x: f64| C64::new(x, 0.0);
        let predicted = &v + &x_ge * c(ge) + &x_er * c(er);
        assert!(max_abs(&(h(ge, er) - predicted)) < 1e-12);
    }
}

fn permutation_matrix(perm: &[usize], n: usize) -> Dense {
    let d = 3usize.pow(n as u32);
    let mut p = Dense::zeros(d, d);
    for k in 0..d {
        let levels = levels_of(k, n);
        let mut moved = levels.clone();
        for (j, &target) in perm.iter().enumerate() {
            moved[target] = levels[j];
        }
        p[(product_index(&moved), k)] = C64::new(1.0, 0.0);
    }
    p
}

#[test]
fn atom_relabeling_is_a_symmetry() {
    let cfg = ModelConfig::with_dephasing(3);
    let h = dense(&build_hamiltonian(13.7, &cfg).unwrap());
    let channels: Vec<Dense> = build_jump_channels(&cfg)
        .unwrap()
        .iter()
        .map(|c| dense(&c.operator))
        .collect();
    for perm in [[1, 0, 2], [0, 2, 1], [1, 2, 0], [2, 0, 1]] {
        let p = permutation_matrix(&perm, 3);
        let conj = |m: &Dense| &p * m * p.adjoint();
        assert!(max_abs(&(conj(&h) - &h)) < 1e-12);
        for c in &channels {
            let image = conj(c);
            assert!(
                channels.iter().any(|other| max_abs(&(&image - other)) < 1e-12),
                "channel image missing for {perm:?}"
            );
        }
    }
}

#[test]
fn pulse_anchor_values() {
    let p = PulseParams::default();
    let peak = gaussian_pulse(p.t_end / 2.0 + p.sigma_t, PulseKind::Ge, &p);
    assert_eq!(peak, p.omega0);
    let early = gaussian_pulse(p.t_end / 2.0 - p.sigma_t, PulseKind::Ge, &p);
    assert!((early - p.omega0 * (-2.0f64).exp()).abs() < 1e-12);
}

proptest! {
    #[test]
    fn pulses_are_mirror_images(t in 0.0f64..30.0) {
        let p = PulseParams::default();
        let ge = gaussian_pulse(t, PulseKind::Ge, &p);
        let er = gaussian_pulse(p.t_end - t, PulseKind::Er, &p);
        prop_assert!((ge - er).abs() <= 4.0 * f64::EPSILON * p.omega0);
    }

    #[test]
    fn hamiltonian_is_hermitian(t in 0.0f64..30.0, n in 1usize..=4) {
        let h = build_hamiltonian(t, &ModelConfig::dissipative(n)).unwrap();
        prop_assert!(h.hermiticity_error() <= 1e-12);
    }
}
