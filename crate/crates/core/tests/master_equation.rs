mod common;

use common::*;
use superatom::algebra::product_index;
use superatom::analysis::kappa;
use superatom::master::{final_state_fidelity_mixed, single_rydberg_ground_indices};
use superatom::model::PulseKind;
use superatom::{
    integrate, lindblad_rhs, DensityMatrix, IntegratorSettings, Level, Method, Model, ModelConfig, PulseParams, RateSet,
    C64,
};

fn ground_run(cfg: ModelConfig, settings: &IntegratorSettings) -> superatom::MasterEquationRun {
    let n = cfg.n_atoms;
    let model = Model::new(cfg).unwrap();
    integrate(&DensityMatrix::ground(n).unwrap(), &model, settings).unwrap()
}

#[test]
fn coherent_generator_matches_dense_commutator() {
    let mut r = rng(11);
    let model = Model::new(ModelConfig::coherent(2)).unwrap();
    for t in [3.0, 14.2, 21.9] {
        let rho = random_density(&mut r, 9);
        let out = lindblad_rhs(&rho, t, &model).unwrap().to_nalgebra();
        let h = dense(&model.hamiltonian(t));
        let oracle = commutator(&h, &rho.matrix().to_nalgebra()) * C64::new(0.0, -1.0);
        assert!(max_abs(&(out - oracle)) < 1e-12);
    }
}

#[test]
fn dissipative_generator_matches_dense_oracle() {
    let mut r = rng(12);
    for n in 1..=3 {
        let mut cfg = ModelConfig::with_dephasing(n);
        cfg.rates.gamma_re = 0.4;
        let model = Model::new(cfg).unwrap();
        let channels: Vec<Dense> = model.channels().iter().map(|c| dense(&c.operator)).collect();
        let rho = random_density(&mut r, model.dim());
        let t = 16.0;
        let out = lindblad_rhs(&rho, t, &model).unwrap();
        let rho_d = rho.matrix().to_nalgebra();
        let oracle = commutator(&dense(&model.hamiltonian(t)), &rho_d) * C64::new(0.0, -1.0)
            + dissipator_oracle(&channels, &rho_d);
        assert!(max_abs(&(out.to_nalgebra() - oracle)) < 1e-11, "n={n}");
        assert!(out.trace().norm() < 1e-10);
        assert!(out.hermiticity_error() < 1e-12);
    }
}

#[test]
fn two_level_rabi_oscillation() {
    let omega = 2.0;
    let mut cfg = ModelConfig::coherent(1);
    cfg.pulses = PulseParams::constant(omega, 0.0, 5.0);
    for method in [Method::Adaptive, Method::FixedRk4] {
        let settings = IntegratorSettings {
            method,
            rtol: 1e-10,
            atol: 1e-12,
            sample_count: 101,
            ..Default::default()
        };
        let run = ground_run(cfg.clone(), &settings);
        for (&t, &pe) in run.series.times.iter().zip(&run.series.pop_e_total) {
            let exact = (omega * t).sin().powi(2);
            assert!((pe - exact).abs() < 1e-6, "{method:?} t={t}: {pe} vs {exact}");
        }
    }
}

#[test]
fn single_atom_transfer_and_even_parity_dark_outcome() {
    let fast = IntegratorSettings {
        sample_count: 121,
        ..Default::default()
    };
    let one = ground_run(ModelConfig::dissipative(1), &fast);
    assert!(one.series.max_pr(1) >= 0.98);
    let two = ground_run(ModelConfig::coherent(2), &fast);
    assert!(two.series.final_pr(1) < 0.05);
    assert!(two.series.final_pr(0) > 0.95);
}

#[test]
fn refinement_changes_final_population_little() {
    let final_pr1 = |settings: IntegratorSettings| ground_run(ModelConfig::dissipative(2), &settings).series.final_pr(1);
    let adaptive = |rtol: f64| IntegratorSettings {
        rtol,
        atol: rtol * 1e-3,
        sample_count: 31,
        ..Default::default()
    };
    let a = final_pr1(adaptive(1e-6));
    let b = final_pr1(adaptive(5e-7));
    assert!((a - b).abs() < 1e-5, "adaptive {a} vs {b}");

    let fixed = |dt: f64| IntegratorSettings {
        method: Method::FixedRk4,
        fixed_dt: dt,
        sample_count: 31,
        ..Default::default()
    };
    let c = final_pr1(fixed(1e-3));
    let d = final_pr1(fixed(5e-4));
    assert!((c - d).abs() < 1e-5, "fixed {c} vs {d}");
    assert!((a - d).abs() < 1e-5, "adaptive {a} vs fixed {d}");
}

#[test]
fn three_atom_dissipative_run_invariants() {
    let settings = IntegratorSettings {
        sample_count: 60,
        check_positivity: true,
        snapshot_times: vec![30.0],
        ..Default::default()
    };
    let run = ground_run(ModelConfig::dissipative(3), &settings);
    let s = &run.series;
    for k in 0..s.len() {
        let total: f64 = s.pr_n[k].iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
        assert!(s.pr_n[k][2] + s.pr_n[k][3] <= 1e-3, "double excitation at t={}", s.times[k]);
        assert!(s.trace_error[k].abs() < 1e-8);
        let rr = &s.per_atom_rr[k];
        let spread = rr.iter().cloned().fold(f64::MIN, f64::max) - rr.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 1e-6, "per-atom spread {spread}");
    }
    for d in &run.diagnostics {
        assert!(d.hermiticity_error < 1e-10);
        assert_eq!(d.positive, Some(true));
    }
    assert!(run.final_state.min_eigenvalue() > -1e-8);
    let overlap = final_state_fidelity_mixed(&run.final_state, 3).unwrap();
    assert!(overlap.overlap >= 0.9, "{overlap:?}");
}

#[test]
fn coherent_runs_stay_pure() {
    let settings = IntegratorSettings {
        sample_count: 60,
        ..Default::default()
    };
    let mut cfg = ModelConfig::coherent(3);
    cfg.rates = RateSet::ZERO;
    let run = ground_run(cfg, &settings);
    for &p in &run.series.purity {
        assert!((p - 1.0).abs() < 1e-6, "purity {p}");
    }
}

#[test]
fn blocked_atoms_follow_steady_state_ground_population() {
    for n in 2..=3 {
        let times: Vec<f64> = (0..16).map(|k| 15.0 + k as f64).collect();
        let settings = IntegratorSettings {
            sample_count: 31,
            snapshot_times: times,
            ..Default::default()
        };
        let cfg = ModelConfig::dissipative(n);
        let pulses = cfg.pulses;
        let run = ground_run(cfg, &settings);
        let support = single_rydberg_ground_indices(n);
        let mut checked = 0;
        for (t, rho) in &run.snapshots {
            let k = run.series.times.iter().position(|s| (s - t).abs() < 1e-9).unwrap();
            let pr1 = run.series.pr_n[k][1];
            if pr1 <= 0.5 {
                continue;
            }
            let conditional: f64 = support.iter().map(|&i| rho.population(i)).sum();
            let kap = kappa(pulses.amplitude(*t, PulseKind::Ge), superatom::model::RB87_GAMMA_EG).unwrap();
            let predicted = kap.powi(n as i32 - 1) * pr1;
            assert!((conditional - predicted).abs() < 0.1, "n={n} t={t}: {conditional} vs {predicted}");
            checked += 1;
        }
        assert!(checked >= 8, "only {checked} late samples checked");
    }
}

#[test]
fn initial_state_override_is_respected() {
    let mut cfg = ModelConfig::coherent(1);
    cfg.pulses = PulseParams::constant(0.0, 0.0, 1.0);
    let model = Model::new(cfg).unwrap();
    let psi = superatom::StateVector::product(&[Level::Rydberg]).unwrap();
    let run = integrate(&DensityMatrix::pure(&psi).unwrap(), &model, &IntegratorSettings::default()).unwrap();
    assert_eq!(run.series.final_pr(1), 1.0);
    assert_eq!(run.final_state.population(product_index(&[Level::Rydberg])), 1.0);
}

#[test]
fn doubling_the_pair_shift_changes_little() {
    let settings = IntegratorSettings {
        sample_count: 61,
        ..Default::default()
    };
    for n in 2..=3 {
        let base = ModelConfig::dissipative(n);
        let mut doubled = base.clone();
        if let superatom::InteractionSpec::Uniform { shift } = &mut doubled.interaction {
            *shift *= 2.0;
        }
        let (a, b) = (ground_run(base, &settings), ground_run(doubled, &settings));
        let (pa, pb) = (a.series.final_pr(1), b.series.final_pr(1));
        assert!((pa - pb).abs() < 0.01, "n={n}: {pa} vs {pb}");
        assert!(b.series.max_pr(2) <= a.series.max_pr(2));
    }
}
