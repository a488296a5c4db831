#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use superatom::{ComplexMatrix, DensityMatrix, OperatorMatrix, C64};

pub type Dense = DMatrix<C64>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_dense(rng: &mut impl Rng, dim: usize) -> Dense {
    DMatrix::from_fn(dim, dim, |_, _| {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    })
}

/// Random sparse matrix keeping roughly `fill` of the entries.
pub fn random_sparse(rng: &mut impl Rng, dim: usize, fill: f64) -> Dense {
    DMatrix::from_fn(dim, dim, |_, _| {
        if rng.random::<f64>() < fill {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// `A A^† / tr(A A^†)`.
pub fn random_density(rng: &mut impl Rng, dim: usize) -> DensityMatrix {
    let a = random_dense(rng, dim);
    let m = &a * a.adjoint();
    let tr = m.trace();
    DensityMatrix::new(from_dense(&(m / tr))).unwrap()
}

pub fn dense(op: &OperatorMatrix) -> Dense {
    op.to_dense().to_nalgebra()
}

pub fn from_dense(m: &Dense) -> ComplexMatrix {
    ComplexMatrix::from_fn(m.nrows(), |r, c| m[(r, c)])
}

pub fn to_operator(m: &Dense) -> OperatorMatrix {
    OperatorMatrix::from_dense(&from_dense(m))
}

/// `I ⊗ ... ⊗ local ⊗ ... ⊗ I` by repeated dense Kronecker products.
pub fn kron_oracle(local: &Dense, atom: usize, n_atoms: usize) -> Dense {
    let id = Dense::identity(3, 3);
    let mut out = Dense::identity(1, 1);
    for j in 0..n_atoms {
        out = out.kronecker(if j == atom { local } else { &id });
    }
    out
}

pub fn max_abs(m: &Dense) -> f64 {
    m.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// `sum_k (c rho c^† - {c^† c, rho}/2)` with dense products.
pub fn dissipator_oracle(channels: &[Dense], rho: &Dense) -> Dense {
    let mut out = Dense::zeros(rho.nrows(), rho.ncols());
    for c in channels {
        let cd = c.adjoint();
        let cdc = &cd * c;
        out += c * rho * &cd - (&cdc * rho + rho * &cdc) * C64::new(0.5, 0.0);
    }
    out
}

pub fn commutator(a: &Dense, b: &Dense) -> Dense {
    a * b - b * a
}

/// Trace norm distance `||a - b||_1 / 2` of Hermitian matrices.
pub fn trace_distance(a: &Dense, b: &Dense) -> f64 {
    let diff = a - b;
    let herm = (&diff + diff.adjoint()) * C64::new(0.5, 0.0);
    herm.symmetric_eigenvalues().iter().map(|v| v.abs()).sum::<f64>() / 2.0
}

/// One-sample Kolmogorov-Smirnov test against a continuous CDF. Returns the
/// statistic D and the asymptotic p-value with Stephens' small-sample
/// correction.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut x = samples.to_vec();
    x.sort_by(|a, b| a.total_cmp(b));
    let n = x.len() as f64;
    let d = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let sqrt_n = n.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    (d, kolmogorov_survival(lambda))
}

/// `Q(l) = 2 sum_{k>=1} (-1)^(k-1) exp(-2 k^2 l^2)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Decay-only single atom prepared in `|e>`: `(model, psi0)`.
pub fn excited_decay_model(gamma: f64, t_end: f64) -> (superatom::Model, superatom::StateVector) {
    let mut cfg = superatom::ModelConfig::coherent(1);
    cfg.rates.gamma_eg = gamma;
    cfg.pulses = superatom::PulseParams::constant(0.0, 0.0, t_end);
    let psi0 = superatom::StateVector::product(&[superatom::Level::Excited]).unwrap();
    (superatom::Model::new(cfg).unwrap(), psi0)
}
