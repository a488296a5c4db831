//! Complex linear algebra for N-atom three-level systems.
//!
//! Every atom carries the local basis `|g> = 0`, `|e> = 1`, `|r> = 2`. The
//! composite index of a product state is `sum_j s_j * 3^(N-1-j)`, i.e. atom 0
//! is the slowest-varying digit. Operators are stored as canonical sparse row
//! lists; only density matrices are dense.

use std::ops::{Index, IndexMut};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Number of levels per atom.
pub const LEVELS: usize = 3;

/// Largest ensemble the library will build operators for.
pub const MAX_ATOMS: usize = 12;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);
pub(crate) const I: C64 = C64::new(0.0, 1.0);

/// Single-atom basis level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    Ground = 0,
    Excited = 1,
    Rydberg = 2,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Ground, Level::Excited, Level::Rydberg];

    pub fn index(self) -> usize {
        self as usize
    }

    fn from_digit(d: usize) -> Level {
        Self::ALL[d]
    }
}

/// Hilbert-space dimension `3^n_atoms`, enforcing the atom cap.
pub fn hilbert_dim(n_atoms: usize) -> Result<usize> {
    if n_atoms == 0 {
        return Err(Error::InvalidParameter {
            name: "n_atoms",
            reason: "at least one atom is required".into(),
        });
    }
    if n_atoms > MAX_ATOMS {
        return Err(Error::TooManyAtoms {
            n_atoms,
            max: MAX_ATOMS,
        });
    }
    Ok(LEVELS.pow(n_atoms as u32))
}

/// Level of `atom` in the product basis state `index`.
pub fn level_of(index: usize, atom: usize, n_atoms: usize) -> Level {
    let stride = LEVELS.pow((n_atoms - 1 - atom) as u32);
    Level::from_digit((index / stride) % LEVELS)
}

/// Decomposes a composite index into per-atom levels (atom 0 first).
pub fn levels_of(index: usize, n_atoms: usize) -> Vec<Level> {
    (0..n_atoms).map(|j| level_of(index, j, n_atoms)).collect()
}

/// Composite index of a product state.
pub fn product_index(levels: &[Level]) -> usize {
    levels.iter().fold(0, |acc, l| acc * LEVELS + l.index())
}

/// Sparse complex square matrix in canonical compressed-row form.
///
/// Rows are sorted by column, duplicates are summed and exact zeros dropped,
/// so two operators with equal entries have equal representations.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl OperatorMatrix {
    /// Builds a canonical operator from (row, col, value) triplets.
    pub fn from_triplets<T>(dim: usize, triplets: T) -> Result<Self>
    where
        T: IntoIterator<Item = (usize, usize, C64)>,
    {
        if dim == 0 {
            return Err(Error::InvalidParameter {
                name: "dim",
                reason: "operator dimension must be positive".into(),
            });
        }
        let mut entries: Vec<(usize, usize, C64)> = Vec::new();
        for (r, c, v) in triplets {
            if r >= dim || c >= dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.max(c) + 1,
                });
            }
            entries.push((r, c, v));
        }
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));

        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols = Vec::with_capacity(entries.len());
        let mut vals: Vec<C64> = Vec::with_capacity(entries.len());
        let mut rows = Vec::with_capacity(entries.len());
        for (r, c, v) in entries {
            if let (Some(&lr), Some(&lc)) = (rows.last(), cols.last()) {
                if lr == r && lc == c {
                    *vals.last_mut().unwrap() += v;
                    continue;
                }
            }
            rows.push(r);
            cols.push(c);
            vals.push(v);
        }
        let mut keep_cols = Vec::with_capacity(cols.len());
        let mut keep_vals = Vec::with_capacity(vals.len());
        for ((r, c), v) in rows.into_iter().zip(cols).zip(vals) {
            if v != ZERO {
                row_ptr[r + 1] += 1;
                keep_cols.push(c);
                keep_vals.push(v);
            }
        }
        for r in 0..dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            dim,
            row_ptr,
            cols: keep_cols,
            vals: keep_vals,
        })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            row_ptr: vec![0; dim + 1],
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![ONE; dim])
    }

    pub fn diagonal(values: &[C64]) -> Self {
        Self::from_triplets(
            values.len(),
            values.iter().enumerate().map(|(i, &v)| (i, i, v)),
        )
        .expect("diagonal entries are always in range")
    }

    pub fn from_dense(m: &ComplexMatrix) -> Self {
        let d = m.dim();
        Self::from_triplets(
            d,
            (0..d).flat_map(|r| (0..d).map(move |c| (r, c))).map(|(r, c)| (r, c, m[(r, c)])),
        )
        .expect("dense entries are always in range")
    }

    /// Single-atom transition operator `|to><from|`.
    pub fn transition(to: Level, from: Level) -> Self {
        Self::from_triplets(LEVELS, [(to.index(), from.index(), ONE)])
            .expect("levels index a 3x3 matrix")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Iterates `(col, value)` over the stored entries of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.cols[span.clone()].binary_search(&c) {
            Ok(k) => self.vals[span.start + k],
            Err(_) => ZERO,
        }
    }

    pub fn to_dense(&self) -> ComplexMatrix {
        let mut m = ComplexMatrix::zeros(self.dim);
        for (r, c, v) in self.triplets() {
            m[(r, c)] = v;
        }
        m
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(self.dim, self.triplets().map(|(r, c, v)| (c, r, v.conj())))
            .expect("adjoint keeps the dimension")
    }

    pub fn scale(&self, s: C64) -> Self {
        Self::from_triplets(self.dim, self.triplets().map(|(r, c, v)| (r, c, v * s)))
            .expect("scaling keeps the dimension")
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_dim(other.dim)?;
        Self::from_triplets(self.dim, self.triplets().chain(other.triplets()))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(-ONE))
    }

    /// Sparse product `self * other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.check_dim(other.dim)?;
        let mut out = Vec::new();
        for r in 0..self.dim {
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    out.push((r, c, a * b));
                }
            }
        }
        Self::from_triplets(self.dim, out)
    }

    pub fn commutator(&self, other: &Self) -> Result<Self> {
        self.matmul(other)?.sub(&other.matmul(self)?)
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        self.vals.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `max |A_ij - conj(A_ji)|`.
    pub fn hermiticity_error(&self) -> f64 {
        self.sub(&self.adjoint()).map(|d| d.max_abs()).unwrap_or(f64::INFINITY)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    /// True if every stored entry lies on the diagonal.
    pub fn is_diagonal(&self) -> bool {
        self.triplets().all(|(r, c, _)| r == c)
    }

    /// Matrix-vector product.
    pub fn apply(&self, v: &[C64]) -> Result<Vec<C64>> {
        self.check_dim(v.len())?;
        Ok((0..self.dim)
            .map(|r| self.row(r).map(|(c, a)| a * v[c]).sum())
            .collect())
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found,
            });
        }
        Ok(())
    }
}

/// Embeds a single-atom operator at `atom_index` of an `n_atoms` register.
///
/// Returns `I ⊗ … ⊗ local ⊗ … ⊗ I` with atom 0 as the slowest-varying index.
pub fn kron_embed(local: &OperatorMatrix, atom_index: usize, n_atoms: usize) -> Result<OperatorMatrix> {
    if local.dim() != LEVELS {
        return Err(Error::DimensionMismatch {
            expected: LEVELS,
            found: local.dim(),
        });
    }
    let dim = hilbert_dim(n_atoms)?;
    if atom_index >= n_atoms {
        return Err(Error::AtomIndexOutOfRange {
            index: atom_index,
            n_atoms,
        });
    }
    let stride = LEVELS.pow((n_atoms - 1 - atom_index) as u32);
    let block = stride * LEVELS;
    let local: Vec<_> = local.triplets().collect();
    let mut out = Vec::with_capacity(local.len() * dim / LEVELS);
    for high in (0..dim).step_by(block) {
        for low in 0..stride {
            let base = high + low;
            for &(a, b, v) in &local {
                out.push((base + a * stride, base + b * stride, v));
            }
        }
    }
    OperatorMatrix::from_triplets(dim, out)
}

/// Dense square complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_vec(dim: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: data.len(),
            });
        }
        Ok(Self { dim, data })
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for r in 0..dim {
            for c in 0..dim {
                data.push(f(r, c));
            }
        }
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[C64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.dim, |r, c| self[(c, r)].conj())
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "matrix dimensions differ");
        Self {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "matrix dimensions differ");
        Self {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim, "matrix dimensions differ");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// `max |A_ij - conj(A_ji)|`.
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for r in 0..d {
            for c in r..d {
                worst = worst.max((self[(r, c)] - self[(c, r)].conj()).norm());
            }
        }
        worst
    }

    /// Frobenius inner product `tr(self^† other)`.
    pub fn inner(&self, other: &Self) -> C64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn to_nalgebra(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.dim, self.dim, |r, c| self[(r, c)])
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        let mut h = self.to_nalgebra();
        let adj = h.adjoint();
        h = (h + adj).scale(0.5);
        let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;

    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[r * self.dim + c]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.dim + c]
    }
}

/// Pure state amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<C64>,
}

impl StateVector {
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::InvalidState("empty state vector".into()));
        }
        if amplitudes.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(Error::InvalidState("non-finite amplitude".into()));
        }
        Ok(Self { amplitudes })
    }

    pub fn basis(dim: usize, k: usize) -> Result<Self> {
        if k >= dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: k + 1,
            });
        }
        let mut amps = vec![ZERO; dim];
        amps[k] = ONE;
        Self::new(amps)
    }

    /// Product state with the given level for each atom.
    pub fn product(levels: &[Level]) -> Result<Self> {
        let dim = hilbert_dim(levels.len())?;
        Self::basis(dim, product_index(levels))
    }

    /// All atoms in `|g>`.
    pub fn ground(n_atoms: usize) -> Result<Self> {
        Self::product(&vec![Level::Ground; n_atoms])
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm_sqr().sqrt();
        if n == 0.0 {
            return Err(Error::InvalidState("cannot normalize a zero vector".into()));
        }
        Self::new(self.amplitudes.iter().map(|a| a / n).collect())
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &Self) -> C64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// `|psi><psi|` (not normalized).
    pub fn outer(&self) -> ComplexMatrix {
        let a = &self.amplitudes;
        ComplexMatrix::from_fn(a.len(), |r, c| a[r] * a[c].conj())
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.amplitudes
    }
}

/// Density operator: Hermitian and unit trace.
///
/// Positivity is not checked on construction (it needs an eigendecomposition);
/// see [`DensityMatrix::min_eigenvalue`] and [`DensityMatrix::is_positive_within`].
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
}

impl DensityMatrix {
    pub const TRACE_TOL: f64 = 1e-8;
    pub const HERMITIAN_TOL: f64 = 1e-10;
    pub const POSITIVITY_TOL: f64 = 1e-8;

    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > Self::TRACE_TOL || tr.im.abs() > Self::TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} is not 1")));
        }
        let herm = matrix.hermiticity_error();
        if herm > Self::HERMITIAN_TOL {
            return Err(Error::NonHermitian { deviation: herm });
        }
        if matrix.as_slice().iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(Error::InvalidState("non-finite element".into()));
        }
        Ok(Self { matrix })
    }

    /// Wraps a matrix without validation; used for integrator output whose
    /// invariants are reported separately.
    pub(crate) fn new_unchecked(matrix: ComplexMatrix) -> Self {
        Self { matrix }
    }

    pub fn pure(psi: &StateVector) -> Result<Self> {
        let n = psi.normalized()?;
        Self::new(n.outer())
    }

    pub fn ground(n_atoms: usize) -> Result<Self> {
        Self::pure(&StateVector::ground(n_atoms)?)
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            matrix: ComplexMatrix::identity(dim).scale(C64::new(1.0 / dim as f64, 0.0)),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn purity(&self) -> f64 {
        self.matrix.as_slice().iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn population(&self, k: usize) -> f64 {
        self.matrix[(k, k)].re
    }

    pub fn hermiticity_error(&self) -> f64 {
        self.matrix.hermiticity_error()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.matrix.hermitian_eigenvalues()[0]
    }

    /// Checks `rho + tol * I` for positive definiteness by Cholesky
    /// factorization, i.e. that the smallest eigenvalue exceeds `-tol`.
    pub fn is_positive_within(&self, tol: f64) -> bool {
        cholesky_succeeds(&self.matrix, tol)
    }
}

// Row-oriented Cholesky of `m + shift * I` into `L L^†`; row i of L only
// reads rows 0..i.
fn cholesky_succeeds(m: &ComplexMatrix, shift: f64) -> bool {
    let d = m.dim();
    let mut l = vec![ZERO; d * d];
    for i in 0..d {
        for j in 0..=i {
            let (done, cur) = l.split_at_mut(i * d);
            let row_i = &mut cur[..d];
            let row_j: &[C64] = if j == i { &[] } else { &done[j * d..j * d + j] };
            let mut s = m[(i, j)];
            if j == i {
                let mut diag = s.re + shift;
                for v in &row_i[..i] {
                    diag -= v.norm_sqr();
                }
                if !(diag > 0.0) {
                    return false;
                }
                row_i[i] = C64::new(diag.sqrt(), 0.0);
            } else {
                for (a, b) in row_i[..j].iter().zip(row_j) {
                    s -= a * b.conj();
                }
                row_i[j] = s / done[j * d + j].re;
            }
        }
    }
    true
}

/// Side on which a sparse operator multiplies a dense matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `A rho`
    Left,
    /// `rho A`
    Right,
    /// `A rho A^†`
    Sandwich,
}

/// Exact product of a sparse operator with a dense matrix, `O(nnz * dim)`.
pub fn op_apply(op: &OperatorMatrix, rho: &ComplexMatrix, side: Side) -> Result<ComplexMatrix> {
    if op.dim() != rho.dim() {
        return Err(Error::DimensionMismatch {
            expected: op.dim(),
            found: rho.dim(),
        });
    }
    let d = rho.dim();
    let mut out = ComplexMatrix::zeros(d);
    match side {
        Side::Left => {
            for r in 0..d {
                let dst = &mut out.as_mut_slice()[r * d..(r + 1) * d];
                for (k, a) in op.row(r) {
                    axpy(a, rho.row(k), dst);
                }
            }
        }
        Side::Right => {
            // (rho A)_{r c} = sum_k rho_{r k} A_{k c}
            for r in 0..d {
                let src = rho.row(r);
                let dst = &mut out.as_mut_slice()[r * d..(r + 1) * d];
                for (k, &x) in src.iter().enumerate() {
                    if x == ZERO {
                        continue;
                    }
                    for (c, a) in op.row(k) {
                        dst[c] += x * a;
                    }
                }
            }
        }
        Side::Sandwich => {
            for a in 0..d {
                for (k, va) in op.row(a) {
                    for b in 0..d {
                        for (l, vb) in op.row(b) {
                            out[(a, b)] += va * rho[(k, l)] * vb.conj();
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[inline]
pub(crate) fn axpy(a: C64, x: &[C64], y: &mut [C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Either kind of quantum state, for [`expectation`].
#[derive(Debug, Clone, Copy)]
pub enum StateRef<'a> {
    Density(&'a DensityMatrix),
    Vector(&'a StateVector),
}

impl<'a> From<&'a DensityMatrix> for StateRef<'a> {
    fn from(rho: &'a DensityMatrix) -> Self {
        StateRef::Density(rho)
    }
}

impl<'a> From<&'a StateVector> for StateRef<'a> {
    fn from(psi: &'a StateVector) -> Self {
        StateRef::Vector(psi)
    }
}

/// Real expectation value of a Hermitian operator.
///
/// Uses `tr(A rho)` for density matrices and `<psi|A|psi>/<psi|psi>` for
/// vectors. Fails if `op` is not Hermitian within 1e-10 or the result has an
/// imaginary residual above 1e-9.
pub fn expectation<'a>(op: &OperatorMatrix, state: impl Into<StateRef<'a>>) -> Result<f64> {
    let herm = op.hermiticity_error();
    if herm > 1e-10 {
        return Err(Error::NonHermitian { deviation: herm });
    }
    let value = match state.into() {
        StateRef::Density(rho) => {
            if rho.dim() != op.dim() {
                return Err(Error::DimensionMismatch {
                    expected: op.dim(),
                    found: rho.dim(),
                });
            }
            let m = rho.matrix();
            op.triplets().map(|(r, c, v)| v * m[(c, r)]).sum::<C64>()
        }
        StateRef::Vector(psi) => {
            let a = psi.amplitudes();
            let ax = op.apply(a)?;
            let num: C64 = a.iter().zip(&ax).map(|(x, y)| x.conj() * y).sum();
            num / psi.norm_sqr()
        }
    };
    if value.im.abs() > 1e-9 {
        return Err(Error::ComplexExpectation {
            residual: value.im.abs(),
        });
    }
    Ok(value.re)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn identity_embeds_to_identity() {
        let id = OperatorMatrix::identity(3);
        assert_eq!(kron_embed(&id, 0, 2).unwrap(), OperatorMatrix::identity(9));
    }

    #[test]
    fn rydberg_projector_on_second_atom() {
        let rr = OperatorMatrix::transition(Level::Rydberg, Level::Rydberg);
        let emb = kron_embed(&rr, 1, 2).unwrap();
        let diag: Vec<f64> = (0..9).map(|i| emb.get(i, i).re).collect();
        assert_eq!(diag, vec![0., 0., 1., 0., 0., 1., 0., 0., 1.]);
        assert_eq!(emb.nnz(), 3);
    }

    #[test]
    fn embed_rejects_bad_input() {
        let id = OperatorMatrix::identity(3);
        assert!(matches!(
            kron_embed(&id, 2, 2),
            Err(Error::AtomIndexOutOfRange { .. })
        ));
        assert!(matches!(
            kron_embed(&OperatorMatrix::identity(2), 0, 2),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(kron_embed(&id, 0, 13), Err(Error::TooManyAtoms { .. })));
    }

    #[test]
    fn triplets_are_canonicalized() {
        let m = OperatorMatrix::from_triplets(
            2,
            [(1, 0, c(1.0, 0.0)), (0, 1, c(2.0, 0.0)), (1, 0, c(0.5, 1.0)), (0, 0, c(1.0, 0.0)), (0, 0, c(-1.0, 0.0))],
        )
        .unwrap();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(1, 0), c(1.5, 1.0));
        assert!(OperatorMatrix::from_triplets(2, [(2, 0, ONE)]).is_err());
    }

    #[test]
    fn level_indexing_round_trips() {
        let levels = [Level::Rydberg, Level::Ground, Level::Excited];
        let idx = product_index(&levels);
        assert_eq!(idx, 2 * 9 + 1);
        assert_eq!(levels_of(idx, 3), levels.to_vec());
    }

    #[test]
    fn apply_identity_left_is_noop() {
        let rho = DensityMatrix::maximally_mixed(9);
        let out = op_apply(&OperatorMatrix::identity(9), rho.matrix(), Side::Left).unwrap();
        assert_eq!(&out, rho.matrix());
    }

    #[test]
    fn sandwich_of_mixed_state() {
        let a = OperatorMatrix::from_triplets(3, [(0, 1, c(1.0, 2.0)), (2, 2, c(0.0, -1.0)), (1, 0, c(3.0, 0.0))]).unwrap();
        let rho = DensityMatrix::maximally_mixed(3);
        let out = op_apply(&a, rho.matrix(), Side::Sandwich).unwrap();
        let expected = a.matmul(&a.adjoint()).unwrap().to_dense().scale(c(1.0 / 3.0, 0.0));
        assert!(out.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn op_apply_dimension_mismatch() {
        let rho = DensityMatrix::maximally_mixed(3);
        assert!(op_apply(&OperatorMatrix::identity(9), rho.matrix(), Side::Left).is_err());
    }

    #[test]
    fn ground_expectation() {
        let gg = OperatorMatrix::transition(Level::Ground, Level::Ground);
        let g = StateVector::ground(1).unwrap();
        assert_eq!(expectation(&gg, &g).unwrap(), 1.0);
        let rho = DensityMatrix::ground(1).unwrap();
        assert_eq!(expectation(&gg, &rho).unwrap(), 1.0);
    }

    #[test]
    fn expectation_rejects_non_hermitian() {
        let eg = OperatorMatrix::transition(Level::Excited, Level::Ground);
        let g = StateVector::ground(1).unwrap();
        assert!(matches!(expectation(&eg, &g), Err(Error::NonHermitian { .. })));
        let rho = DensityMatrix::ground(2).unwrap();
        assert!(matches!(
            expectation(&OperatorMatrix::identity(3), &rho),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn expectation_normalizes_vectors() {
        let z = OperatorMatrix::diagonal(&[ONE, -ONE, ZERO]);
        let psi = StateVector::new(vec![c(2.0, 0.0), ZERO, ZERO]).unwrap();
        assert_eq!(expectation(&z, &psi).unwrap(), 1.0);
    }

    #[test]
    fn density_matrix_validation() {
        let bad_trace = ComplexMatrix::identity(2);
        assert!(DensityMatrix::new(bad_trace).is_err());
        let mut m = ComplexMatrix::identity(2).scale(c(0.5, 0.0));
        m[(0, 1)] = c(0.1, 0.1);
        assert!(matches!(DensityMatrix::new(m.clone()), Err(Error::NonHermitian { .. })));
        m[(1, 0)] = c(0.1, -0.1);
        assert!(DensityMatrix::new(m).is_ok());
    }

    #[test]
    fn positivity_checks_agree() {
        let rho = DensityMatrix::maximally_mixed(4);
        assert!(rho.is_positive_within(1e-8));
        assert!((rho.min_eigenvalue() - 0.25).abs() < 1e-12);
        let mut m = ComplexMatrix::zeros(2);
        m[(0, 0)] = c(1.1, 0.0);
        m[(1, 1)] = c(-0.1, 0.0);
        let bad = DensityMatrix::new(m).unwrap();
        assert!(!bad.is_positive_within(1e-8));
        assert!((bad.min_eigenvalue() + 0.1).abs() < 1e-12);
        let pure = DensityMatrix::pure(
            &StateVector::new(vec![c(1.0, 0.0), c(0.0, 1.0), c(0.5, -0.5)]).unwrap(),
        )
        .unwrap();
        assert!(pure.is_positive_within(1e-8));
        assert!((pure.purity() - 1.0).abs() < 1e-12);
    }
}
