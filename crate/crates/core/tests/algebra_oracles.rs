mod common;

use common::*;
use proptest::prelude::*;
use superatom::{
    expectation, integrate, kron_embed, op_apply, DensityMatrix, IntegratorSettings, Level, Model, ModelConfig,
    OperatorMatrix, PulseParams, RateSet, Side, StateVector, C64,
};

#[test]
fn embedding_matches_dense_kronecker_product() {
    let mut r = rng(1);
    for n in 1..=3 {
        for atom in 0..n {
            let local = random_dense(&mut r, 3);
            let sparse = kron_embed(&to_operator(&local), atom, n).unwrap();
            let oracle = kron_oracle(&local, atom, n);
            assert!(max_abs(&(dense(&sparse) - &oracle)) < 1e-14, "n={n} atom={atom}");
        }
    }
}

#[test]
fn embedded_trace_scales_with_spectator_dimension() {
    let mut r = rng(2);
    for n in 1..=3 {
        let local = random_dense(&mut r, 3);
        let op = kron_embed(&to_operator(&local), n - 1, n).unwrap();
        let expected = local.trace() * 3f64.powi(n as i32 - 1);
        assert!((op.trace() - expected).norm() < 1e-12);
    }
}

#[test]
fn energy_is_conserved_with_frozen_pulses() {
    let mut cfg = ModelConfig::coherent(2);
    cfg.rates = RateSet::ZERO;
    cfg.pulses = PulseParams::constant(2.0, 3.0, 4.0);
    let model = Model::new(cfg).unwrap();
    let times: Vec<f64> = (0..=8).map(|k| 0.5 * k as f64).collect();
    let settings = IntegratorSettings {
        rtol: 1e-10,
        atol: 1e-12,
        sample_count: 9,
        snapshot_times: times,
        ..Default::default()
    };
    let psi = StateVector::product(&[Level::Ground, Level::Excited]).unwrap();
    let rho0 = DensityMatrix::pure(&psi).unwrap();
    let run = integrate(&rho0, &model, &settings).unwrap();
    let h = model.hamiltonian(0.0);
    let e0 = expectation(&h, &rho0).unwrap();
    for (t, rho) in &run.snapshots {
        let e = expectation(&h, rho).unwrap();
        assert!((e - e0).abs() < 1e-7, "t={t}: {e} vs {e0}");
    }
}

fn local_op() -> impl Strategy<Value = Dense> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 9)
        .prop_map(|v| Dense::from_fn(3, 3, |r, c| C64::new(v[3 * r + c].0, v[3 * r + c].1)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn embeddings_on_distinct_atoms_commute(a in local_op(), b in local_op(), i in 0usize..3, j in 0usize..3) {
        prop_assume!(i != j);
        let ea = kron_embed(&to_operator(&a), i, 3).unwrap();
        let eb = kron_embed(&to_operator(&b), j, 3).unwrap();
        prop_assert!(ea.commutator(&eb).unwrap().max_abs() <= 1e-12);
    }

    #[test]
    fn embedding_commutes_with_adjoint(a in local_op(), atom in 0usize..3) {
        let op = to_operator(&a);
        let lhs = kron_embed(&op.adjoint(), atom, 3).unwrap();
        let rhs = kron_embed(&op, atom, 3).unwrap().adjoint();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn sparse_products_match_dense(seed in any::<u64>(), dim in prop::sample::select(vec![3usize, 9, 27, 81])) {
        let mut r = rng(seed);
        let a = random_sparse(&mut r, dim, 0.2);
        let rho = random_dense(&mut r, dim);
        let op = to_operator(&a);
        let rho_c = from_dense(&rho);
        let left = op_apply(&op, &rho_c, Side::Left).unwrap().to_nalgebra();
        let right = op_apply(&op, &rho_c, Side::Right).unwrap().to_nalgebra();
        let sandwich = op_apply(&op, &rho_c, Side::Sandwich).unwrap().to_nalgebra();
        prop_assert!(max_abs(&(left - &a * &rho)) <= 1e-12);
        prop_assert!(max_abs(&(right - &rho * &a)) <= 1e-12);
        prop_assert!(max_abs(&(sandwich - &a * &rho * a.adjoint())) <= 1e-12);
        let v: Vec<C64> = rho.column(0).iter().copied().collect();
        let av = op.apply(&v).unwrap();
        let oracle = &a * rho.column(0);
        prop_assert!(av.iter().zip(oracle.iter()).all(|(x, y)| (x - y).norm() <= 1e-12));
    }

    #[test]
    fn sparse_round_trip_is_canonical(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = random_sparse(&mut r, 9, 0.3);
        let op = to_operator(&a);
        prop_assert_eq!(max_abs(&(dense(&op) - &a)), 0.0);
        let rebuilt = OperatorMatrix::from_triplets(9, op.triplets().collect::<Vec<_>>()).unwrap();
        prop_assert_eq!(rebuilt, op);
    }

    #[test]
    fn expectation_matches_trace_formula(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = random_dense(&mut r, 9);
        let h = (&a + a.adjoint()) * C64::new(0.5, 0.0);
        let rho = random_density(&mut r, 9);
        let value = expectation(&to_operator(&h), &rho).unwrap();
        let oracle = (&h * rho.matrix().to_nalgebra()).trace();
        prop_assert!((value - oracle.re).abs() <= 1e-12);
    }
}
