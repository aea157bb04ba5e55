//! Exterior algebra of double-forms, Pfaffians and Gaussian determinant
//! expectations.
//!
//! A double-form of bidegree `(p, q)` over an `m`-dimensional space is an
//! element of `Λ^p V* ⊗ Λ^q V*`, stored sparsely as coefficients indexed by
//! pairs of strictly increasing multi-indices. The componentwise wedge
//! product turns the space of double-forms into an associative algebra, and
//! the diagonal trace on square bidegrees recovers determinants and
//! Pfaffians:
//!
//! - `det T = (1/r!) tr ω_T^{∧r}` for the `(1,1)`-form `ω_T` of a matrix `T`,
//! - `pf(F) = (1/h!) tr Ω_F^{∧h}` for the `(2,2)`-form `Ω_F` of a skew matrix
//!   of 2-forms (`r = 2h`),
//! - `E[det(μ + S)] = Σ_j tr(ω_μ^{∧(2h−2j)} ∧ Ξ^{∧j}) / ((2h−2j)! j!)` for a
//!   Gaussian random matrix `S` with covariance `K`, where
//!   `Ξ_{αβ|ij} = K_{αi|βj} − K_{αj|βi}`.
//!
//! Sign convention: `pfaffian_scalar` carries the `(−1)^h` prefactor, so the
//! Pfaffian of the standard 2×2 block `[[0, a], [−a, 0]]` is `−a`. Euler
//! forms are built downstream from `pf(−F)`, which makes the end results
//! independent of this convention.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use thiserror::Error;

/// Absolute tolerance for accepting a matrix as skew-symmetric.
pub const SKEW_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AlgebraError {
    #[error("base dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("operation requires square bidegree, got ({0}, {1})")]
    NonSquareBidegree(usize, usize),
    #[error("operation requires even rank, got {0}")]
    OddRank(usize),
    #[error("matrix is not skew-symmetric: max |F + Fᵀ|/2 = {0:.3e}")]
    NotSkew(f64),
    #[error("matrix is not square: {0}x{1}")]
    NotSquare(usize, usize),
    #[error("law is not centered: max |μ| = {0:.3e}")]
    NotCentered(f64),
    #[error("covariance is not symmetric under (α,i)↔(β,j): max asymmetry {0:.3e}")]
    CovarianceAsymmetric(f64),
    #[error("covariance is not positive semidefinite: min eigenvalue {0:.3e}")]
    CovarianceNotPsd(f64),
    #[error("multi-index {0:?} is not strictly increasing in 1..={1}")]
    BadMultiIndex(Vec<usize>, usize),
}

pub(crate) fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

// ---------------------------------------------------------------------------
// Multi-indices
// ---------------------------------------------------------------------------

/// A strictly increasing list of 1-based indices. Ordered lexicographically;
/// this order is part of the public contract for component extraction.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MultiIndex(Vec<usize>);

impl MultiIndex {
    /// Builds a multi-index, checking strict monotonicity and the range
    /// `1..=dim`.
    pub fn new(indices: &[usize], dim: usize) -> Result<Self, AlgebraError> {
        let ok = indices.windows(2).all(|w| w[0] < w[1])
            && indices.iter().all(|&i| i >= 1 && i <= dim);
        if ok {
            Ok(MultiIndex(indices.to_vec()))
        } else {
            Err(AlgebraError::BadMultiIndex(indices.to_vec(), dim))
        }
    }

    /// The empty multi-index (degree 0).
    pub fn empty() -> Self {
        MultiIndex(Vec::new())
    }

    /// The full index `(1, …, k)`.
    pub fn full(k: usize) -> Self {
        MultiIndex((1..=k).collect())
    }

    pub fn degree(&self) -> usize {
        self.0.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    /// Merges two strictly increasing index lists, returning the merged
    /// index and the shuffle sign, or `None` if they overlap.
    pub fn merge(&self, other: &MultiIndex) -> Option<(MultiIndex, f64)> {
        let (a, b) = (&self.0, &other.0);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let mut inversions = 0usize;
        let (mut i, mut j) = (0usize, 0usize);
        while i < a.len() && j < b.len() {
            if a[i] == b[j] {
                return None;
            }
            if a[i] < b[j] {
                out.push(a[i]);
                i += 1;
            } else {
                // b[j] jumps over the remaining entries of a
                inversions += a.len() - i;
                out.push(b[j]);
                j += 1;
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        let sign = if inversions % 2 == 0 { 1.0 } else { -1.0 };
        Some((MultiIndex(out), sign))
    }

    /// All degree-`k` multi-indices over `1..=dim`, in lexicographic order.
    pub fn enumerate(dim: usize, k: usize) -> Vec<MultiIndex> {
        use itertools::Itertools;
        (1..=dim).combinations(k).map(MultiIndex).collect()
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, i) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, ")")
    }
}

// ---------------------------------------------------------------------------
// Double-forms
// ---------------------------------------------------------------------------

/// Sparse double-form of bidegree `(p, q)` over a base of dimension
/// `base_dim`. Coefficients on pairs of strictly increasing multi-indices;
/// zero coefficients are omitted.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubleForm {
    base_dim: usize,
    p: usize,
    q: usize,
    coeffs: BTreeMap<(MultiIndex, MultiIndex), f64>,
}

impl DoubleForm {
    pub fn zero(base_dim: usize, p: usize, q: usize) -> Self {
        DoubleForm { base_dim, p, q, coeffs: BTreeMap::new() }
    }

    /// The multiplicative unit: the (0,0)-form with coefficient 1.
    pub fn one(base_dim: usize) -> Self {
        let mut f = DoubleForm::zero(base_dim, 0, 0);
        f.coeffs.insert((MultiIndex::empty(), MultiIndex::empty()), 1.0);
        f
    }

    /// Single monomial `c · v^I ⊗ v^J`.
    pub fn monomial(
        base_dim: usize,
        i: &[usize],
        j: &[usize],
        c: f64,
    ) -> Result<Self, AlgebraError> {
        let mi = MultiIndex::new(i, base_dim)?;
        let mj = MultiIndex::new(j, base_dim)?;
        let mut f = DoubleForm::zero(base_dim, mi.degree(), mj.degree());
        f.add_coeff(mi, mj, c);
        Ok(f)
    }

    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    pub fn bidegree(&self) -> (usize, usize) {
        (self.p, self.q)
    }

    pub fn coeff(&self, i: &MultiIndex, j: &MultiIndex) -> f64 {
        self.coeffs.get(&(i.clone(), j.clone())).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(MultiIndex, MultiIndex), &f64)> {
        self.coeffs.iter()
    }

    pub fn add_coeff(&mut self, i: MultiIndex, j: MultiIndex, c: f64) {
        debug_assert_eq!(i.degree(), self.p);
        debug_assert_eq!(j.degree(), self.q);
        if c == 0.0 && !self.coeffs.contains_key(&(i.clone(), j.clone())) {
            return;
        }
        let key = (i, j);
        let entry = self.coeffs.entry(key.clone()).or_insert(0.0);
        *entry += c;
        if *entry == 0.0 {
            self.coeffs.remove(&key);
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        for v in out.coeffs.values_mut() {
            *v *= s;
        }
        if s == 0.0 {
            out.coeffs.clear();
        }
        out
    }

    /// Componentwise wedge: bidegrees add, sign from shuffling both index
    /// groups independently.
    pub fn wedge(&self, other: &DoubleForm) -> Result<DoubleForm, AlgebraError> {
        if self.base_dim != other.base_dim {
            return Err(AlgebraError::DimensionMismatch(self.base_dim, other.base_dim));
        }
        let mut out = DoubleForm::zero(self.base_dim, self.p + other.p, self.q + other.q);
        for ((i1, j1), &c1) in &self.coeffs {
            for ((i2, j2), &c2) in &other.coeffs {
                if let Some((im, si)) = i1.merge(i2) {
                    if let Some((jm, sj)) = j1.merge(j2) {
                        out.add_coeff(im, jm, si * sj * c1 * c2);
                    }
                }
            }
        }
        Ok(out)
    }

    /// The `k`-fold wedge power; the 0-th power is the unit.
    pub fn wedge_pow(&self, k: usize) -> Result<DoubleForm, AlgebraError> {
        let mut out = DoubleForm::one(self.base_dim);
        for _ in 0..k {
            out = out.wedge(self)?;
        }
        Ok(out)
    }

    /// Diagonal trace of a `(j, j)`-form: sum of coefficients with equal
    /// first and second multi-index.
    pub fn trace_diag(&self) -> Result<f64, AlgebraError> {
        if self.p != self.q {
            return Err(AlgebraError::NonSquareBidegree(self.p, self.q));
        }
        Ok(self
            .coeffs
            .iter()
            .filter(|((i, j), _)| i == j)
            .map(|(_, &c)| c)
            .sum())
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.values().fold(0.0, |a, &c| a.max(c.abs()))
    }

    pub fn approx_eq(&self, other: &DoubleForm, tol: f64) -> bool {
        if (self.base_dim, self.p, self.q) != (other.base_dim, other.p, other.q) {
            return false;
        }
        let mut keys: Vec<_> = self.coeffs.keys().collect();
        keys.extend(other.coeffs.keys());
        keys.iter().all(|k| (self.coeff(&k.0, &k.1) - other.coeff(&k.0, &k.1)).abs() <= tol)
    }
}

impl Add for &DoubleForm {
    type Output = DoubleForm;
    fn add(self, rhs: &DoubleForm) -> DoubleForm {
        assert_eq!((self.p, self.q), (rhs.p, rhs.q), "bidegree mismatch in +");
        assert_eq!(self.base_dim, rhs.base_dim, "base dimension mismatch in +");
        let mut out = self.clone();
        for ((i, j), &c) in &rhs.coeffs {
            out.add_coeff(i.clone(), j.clone(), c);
        }
        out
    }
}

impl Sub for &DoubleForm {
    type Output = DoubleForm;
    fn sub(self, rhs: &DoubleForm) -> DoubleForm {
        self + &rhs.scale(-1.0)
    }
}

impl Neg for &DoubleForm {
    type Output = DoubleForm;
    fn neg(self) -> DoubleForm {
        self.scale(-1.0)
    }
}

impl Mul<f64> for &DoubleForm {
    type Output = DoubleForm;
    fn mul(self, s: f64) -> DoubleForm {
        self.scale(s)
    }
}

/// The `(1,1)`-form `ω_T = Σ T_{αi} v^α ⊗ v^i` of a square matrix.
pub fn matrix_to_form(t: &DMatrix<f64>) -> DoubleForm {
    let r = t.nrows();
    let mut out = DoubleForm::zero(r, 1, 1);
    for a in 0..r {
        for i in 0..r {
            if t[(a, i)] != 0.0 {
                out.add_coeff(
                    MultiIndex(vec![a + 1]),
                    MultiIndex(vec![i + 1]),
                    t[(a, i)],
                );
            }
        }
    }
    out
}

/// `det T` computed as `(1/r!) tr ω_T^{∧r}`. Self-test route against a
/// standard LU determinant.
pub fn det_via_power(t: &DMatrix<f64>) -> Result<f64, AlgebraError> {
    if t.nrows() != t.ncols() {
        return Err(AlgebraError::NotSquare(t.nrows(), t.ncols()));
    }
    let r = t.nrows();
    if r == 0 {
        return Ok(1.0);
    }
    let w = matrix_to_form(t);
    Ok(w.wedge_pow(r)?.trace_diag()? / factorial(r))
}

// ---------------------------------------------------------------------------
// Pfaffians
// ---------------------------------------------------------------------------

fn check_skew_scalar(f: &DMatrix<f64>) -> Result<DMatrix<f64>, AlgebraError> {
    if f.nrows() != f.ncols() {
        return Err(AlgebraError::NotSquare(f.nrows(), f.ncols()));
    }
    let sym = 0.5 * (f + f.transpose());
    let asym = sym.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if asym > SKEW_TOL {
        return Err(AlgebraError::NotSkew(asym));
    }
    Ok(0.5 * (f - f.transpose()))
}

/// Standard Pfaffian by expansion along the first remaining row.
fn pf_std(f: &DMatrix<f64>, active: &[usize]) -> f64 {
    if active.is_empty() {
        return 1.0;
    }
    let first = active[0];
    let mut acc = 0.0;
    for (pos, &j) in active.iter().enumerate().skip(1) {
        let c = f[(first, j)];
        if c != 0.0 {
            let rest: Vec<usize> = active[1..]
                .iter()
                .copied()
                .filter(|&k| k != j)
                .collect();
            let sign = if pos % 2 == 1 { 1.0 } else { -1.0 };
            acc += sign * c * pf_std(f, &rest);
        }
    }
    acc
}

/// Pfaffian of an even-rank skew-symmetric scalar matrix, with the `(−1)^h`
/// prefactor convention (`pf([[0,a],[−a,0]]) = −a`). Satisfies
/// `pfaffian_scalar(F)² = det F`.
pub fn pfaffian_scalar(f: &DMatrix<f64>) -> Result<f64, AlgebraError> {
    let r = f.nrows();
    if r % 2 != 0 {
        return Err(AlgebraError::OddRank(r));
    }
    let f = check_skew_scalar(f)?;
    let h = r / 2;
    let active: Vec<usize> = (0..r).collect();
    let sign = if h % 2 == 0 { 1.0 } else { -1.0 };
    Ok(sign * pf_std(&f, &active))
}

/// Skew-symmetric matrix of `(2,0)` double-forms over a common base.
#[derive(Debug, Clone)]
pub struct SkewFormMatrix {
    rank: usize,
    base_dim: usize,
    entries: Vec<DoubleForm>,
}

impl SkewFormMatrix {
    /// Builds from the strictly upper triangle; the lower triangle and the
    /// zero diagonal are filled by skewness.
    pub fn from_upper(
        rank: usize,
        base_dim: usize,
        upper: impl Fn(usize, usize) -> DoubleForm,
    ) -> Result<Self, AlgebraError> {
        let mut entries = vec![DoubleForm::zero(base_dim, 2, 0); rank * rank];
        for a in 0..rank {
            for b in (a + 1)..rank {
                let e = upper(a, b);
                if e.base_dim() != base_dim {
                    return Err(AlgebraError::DimensionMismatch(e.base_dim(), base_dim));
                }
                entries[b * rank + a] = e.scale(-1.0);
                entries[a * rank + b] = e;
            }
        }
        Ok(SkewFormMatrix { rank, base_dim, entries })
    }

    /// Builds from curvature coefficients `F[α][β][i][j]`, skew in both
    /// pairs: entry `(α,β)` is the 2-form `Σ_{i<j} F_{αβ|ij} dx^i ∧ dx^j`.
    pub fn from_components(
        rank: usize,
        base_dim: usize,
        comp: impl Fn(usize, usize, usize, usize) -> f64,
    ) -> Result<Self, AlgebraError> {
        SkewFormMatrix::from_upper(rank, base_dim, |a, b| {
            let mut e = DoubleForm::zero(base_dim, 2, 0);
            for i in 0..base_dim {
                for j in (i + 1)..base_dim {
                    let c = comp(a, b, i, j);
                    if c != 0.0 {
                        e.add_coeff(
                            MultiIndex(vec![i + 1, j + 1]),
                            MultiIndex::empty(),
                            c,
                        );
                    }
                }
            }
            e
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    pub fn entry(&self, a: usize, b: usize) -> &DoubleForm {
        &self.entries[a * self.rank + b]
    }

    pub fn neg(&self) -> Self {
        SkewFormMatrix {
            rank: self.rank,
            base_dim: self.base_dim,
            entries: self.entries.iter().map(|e| e.scale(-1.0)).collect(),
        }
    }
}

/// Pfaffian of a skew matrix of 2-forms, as an `(r, 0)` double-form over the
/// base, via the Berezin route: `Ω_F = −Σ_{α<β} F_{αβ} ⊗ v^α∧v^β`, then the
/// coefficient of the top bundle monomial in `(1/h!) Ω_F^{∧h}`. The
/// component on a multi-index `I` equals the Pfaffian of the restriction
/// `F^I`.
pub fn pfaffian_form(f: &SkewFormMatrix) -> Result<DoubleForm, AlgebraError> {
    let r = f.rank();
    if r % 2 != 0 {
        return Err(AlgebraError::OddRank(r));
    }
    let h = r / 2;
    let dim = f.base_dim().max(r);
    // Mixed double-form: first slot base 2-forms, second slot bundle pairs.
    let mut omega = DoubleForm::zero(dim, 2, 2);
    for a in 0..r {
        for b in (a + 1)..r {
            let bundle = MultiIndex(vec![a + 1, b + 1]);
            for ((i, _), &c) in f.entry(a, b).iter() {
                omega.add_coeff(MultiIndex(i.indices().to_vec()), bundle.clone(), -c);
            }
        }
    }
    let pow = omega.wedge_pow(h)?;
    let top = MultiIndex::full(r);
    let mut out = DoubleForm::zero(f.base_dim(), r, 0);
    for ((i, j), &c) in pow.iter() {
        if *j == top {
            out.add_coeff(i.clone(), MultiIndex::empty(), c / factorial(h));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Gaussian matrix laws and determinant expectations
// ---------------------------------------------------------------------------

/// Covariance kernel `K[α][i][β][j]` of an `r×cols` Gaussian random matrix,
/// symmetric under the simultaneous swap `(α,i) ↔ (β,j)`.
#[derive(Debug, Clone)]
pub struct CovKernel {
    r: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CovKernel {
    pub fn zeros(r: usize, cols: usize) -> Self {
        CovKernel { r, cols, data: vec![0.0; r * cols * r * cols] }
    }

    pub fn from_fn(r: usize, cols: usize, k: impl Fn(usize, usize, usize, usize) -> f64) -> Self {
        let mut out = CovKernel::zeros(r, cols);
        for a in 0..r {
            for i in 0..cols {
                for b in 0..r {
                    for j in 0..cols {
                        out.set(a, i, b, j, k(a, i, b, j));
                    }
                }
            }
        }
        out
    }

    #[inline]
    fn idx(&self, a: usize, i: usize, b: usize, j: usize) -> usize {
        ((a * self.cols + i) * self.r + b) * self.cols + j
    }

    #[inline]
    pub fn get(&self, a: usize, i: usize, b: usize, j: usize) -> f64 {
        self.data[self.idx(a, i, b, j)]
    }

    #[inline]
    pub fn set(&mut self, a: usize, i: usize, b: usize, j: usize, v: f64) {
        let k = self.idx(a, i, b, j);
        self.data[k] = v;
    }

    pub fn rank(&self) -> usize {
        self.r
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Flattens to an `(r·cols) × (r·cols)` matrix with flat index
    /// `α·cols + i`.
    pub fn flatten(&self) -> DMatrix<f64> {
        let n = self.r * self.cols;
        DMatrix::from_fn(n, n, |p, q| {
            self.get(p / self.cols, p % self.cols, q / self.cols, q % self.cols)
        })
    }

    pub fn max_asymmetry(&self) -> f64 {
        let m = self.flatten();
        (&m - m.transpose()).iter().fold(0.0f64, |a, &v| a.max(v.abs()))
    }

    /// Restriction to a subset of column indices (0-based).
    pub fn restrict_cols(&self, cols: &[usize]) -> CovKernel {
        let mut out = CovKernel::zeros(self.r, cols.len());
        for a in 0..self.r {
            for (ii, &i) in cols.iter().enumerate() {
                for b in 0..self.r {
                    for (jj, &j) in cols.iter().enumerate() {
                        out.set(a, ii, b, jj, self.get(a, i, b, j));
                    }
                }
            }
        }
        out
    }
}

/// Law of an `r×r` Gaussian random matrix `μ + S` with centered part `S` of
/// covariance `K[α][i][β][j]`.
#[derive(Debug, Clone)]
pub struct GaussianMatrixLaw {
    rank: usize,
    mean: DMatrix<f64>,
    cov: CovKernel,
}

impl GaussianMatrixLaw {
    pub fn new(mean: DMatrix<f64>, cov: CovKernel) -> Result<Self, AlgebraError> {
        let r = mean.nrows();
        if mean.ncols() != r {
            return Err(AlgebraError::NotSquare(mean.nrows(), mean.ncols()));
        }
        if cov.rank() != r || cov.cols() != r {
            return Err(AlgebraError::DimensionMismatch(cov.rank() * cov.cols(), r * r));
        }
        let asym = cov.max_asymmetry();
        if asym > 1e-8 {
            return Err(AlgebraError::CovarianceAsymmetric(asym));
        }
        Ok(GaussianMatrixLaw { rank: r, mean, cov })
    }

    pub fn centered(cov: CovKernel) -> Result<Self, AlgebraError> {
        let r = cov.rank();
        GaussianMatrixLaw::new(DMatrix::zeros(r, r), cov)
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn mean(&self) -> &DMatrix<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &CovKernel {
        &self.cov
    }

    /// Verifies positive semidefiniteness of the flattened covariance.
    pub fn check_psd(&self, tol: f64) -> Result<(), AlgebraError> {
        let eig = self.cov.flatten().symmetric_eigen();
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -tol {
            return Err(AlgebraError::CovarianceNotPsd(min));
        }
        Ok(())
    }

    /// Square root factor of the flattened covariance (symmetric PSD root).
    pub fn cov_sqrt(&self) -> DMatrix<f64> {
        let eig = self.cov.flatten().symmetric_eigen();
        let vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
    }

    /// Draws one matrix `μ + S` using a precomputed `cov_sqrt` factor.
    pub fn sample_with(&self, sqrt: &DMatrix<f64>, rng: &mut impl Rng) -> DMatrix<f64> {
        let n = self.rank * self.rank;
        let z = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let s = sqrt * z;
        let mut out = self.mean.clone();
        for a in 0..self.rank {
            for i in 0..self.rank {
                out[(a, i)] += s[(a * self.rank + i, 0)];
            }
        }
        out
    }
}

/// The `(2,2)` double-form `Ξ` with `Ξ_{αβ|ij} = K_{αi|βj} − K_{αj|βi}`,
/// antisymmetric in `(α,β)` and `(i,j)` by construction. First slot carries
/// the row pair, second slot the column pair.
pub fn xi_from_covariance(law: &GaussianMatrixLaw) -> DoubleForm {
    xi_from_kernel(law.cov())
}

pub(crate) fn xi_from_kernel(k: &CovKernel) -> DoubleForm {
    let r = k.rank();
    let cols = k.cols();
    let dim = r.max(cols);
    let mut xi = DoubleForm::zero(dim, 2, 2);
    for a in 0..r {
        for b in (a + 1)..r {
            for i in 0..cols {
                for j in (i + 1)..cols {
                    let v = k.get(a, i, b, j) - k.get(a, j, b, i);
                    if v != 0.0 {
                        xi.add_coeff(
                            MultiIndex(vec![a + 1, b + 1]),
                            MultiIndex(vec![i + 1, j + 1]),
                            v,
                        );
                    }
                }
            }
        }
    }
    xi
}

/// `E[det S]` for a centered law: `(1/h!) tr Ξ^{∧h}`, exact closed form.
pub fn expected_det(law: &GaussianMatrixLaw) -> Result<f64, AlgebraError> {
    let max_mu = law.mean().iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if max_mu > 0.0 {
        return Err(AlgebraError::NotCentered(max_mu));
    }
    let r = law.rank();
    if r % 2 != 0 {
        return Err(AlgebraError::OddRank(r));
    }
    let h = r / 2;
    let xi = xi_from_covariance(law);
    Ok(xi.wedge_pow(h)?.trace_diag()? / factorial(h))
}

/// `E[det(μ + S)] = Σ_{j=0}^{h} tr(ω_μ^{∧(2h−2j)} ∧ Ξ^{∧j}) / ((2h−2j)! j!)`.
/// Reduces to `expected_det` at `μ = 0` and to `det μ` at zero covariance.
pub fn expected_det_shifted(law: &GaussianMatrixLaw) -> Result<f64, AlgebraError> {
    let r = law.rank();
    if r % 2 != 0 {
        return Err(AlgebraError::OddRank(r));
    }
    let h = r / 2;
    let xi = xi_from_covariance(law);
    let mu = matrix_to_form(law.mean());
    let mut acc = 0.0;
    for j in 0..=h {
        let term = mu.wedge_pow(2 * h - 2 * j)?.wedge(&xi.wedge_pow(j)?)?;
        acc += term.trace_diag()? / (factorial(2 * h - 2 * j) * factorial(j));
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use itertools::Itertools;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(idx: &[usize]) -> MultiIndex {
        MultiIndex(idx.to_vec())
    }

    /// Brute-force Pfaffian: the defining permutation sum with the (−1)^h
    /// prefactor, over all r! permutations.
    fn pfaffian_bruteforce(f: &DMatrix<f64>) -> f64 {
        let r = f.nrows();
        let h = r / 2;
        let mut acc = 0.0;
        for perm in (0..r).permutations(r) {
            let sign = perm_signature(&perm);
            let mut prod = 1.0;
            for t in 0..h {
                prod *= f[(perm[2 * t], perm[2 * t + 1])];
            }
            acc += sign * prod;
        }
        let pref = if h % 2 == 0 { 1.0 } else { -1.0 };
        pref * acc / (2f64.powi(h as i32) * factorial(h))
    }

    fn perm_signature(p: &[usize]) -> f64 {
        let mut inv = 0;
        for i in 0..p.len() {
            for j in (i + 1)..p.len() {
                if p[i] > p[j] {
                    inv += 1;
                }
            }
        }
        if inv % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Double-shuffle expansion of the Pfaffian component on (v_1,…,v_r):
    /// ((−1)^h / h!) Σ_{σ,φ} ε(σ)ε(φ) Π_t F_{σ(2t-1)σ(2t)|φ(2t-1)φ(2t)},
    /// σ and φ increasing within each consecutive pair.
    fn pfaffian_pairsum_component(
        comp: &dyn Fn(usize, usize, usize, usize) -> f64,
        r: usize,
    ) -> f64 {
        let h = r / 2;
        let pairs: Vec<Vec<usize>> = (0..r)
            .permutations(r)
            .filter(|p| (0..h).all(|t| p[2 * t] < p[2 * t + 1]))
            .collect();
        let mut acc = 0.0;
        for sigma in &pairs {
            for phi in &pairs {
                let sign = perm_signature(sigma) * perm_signature(phi);
                let mut prod = 1.0;
                for t in 0..h {
                    prod *= comp(sigma[2 * t], sigma[2 * t + 1], phi[2 * t], phi[2 * t + 1]);
                }
                acc += sign * prod;
            }
        }
        let pref = if h % 2 == 0 { 1.0 } else { -1.0 };
        pref * acc / factorial(h)
    }

    fn random_skew(r: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(r, r, |_, _| rng.gen_range(-1.0..1.0));
        0.5 * (&a - a.transpose())
    }

    #[test]
    fn wedge_single_shuffle() {
        let a = DoubleForm::monomial(3, &[1], &[1], 1.0).unwrap();
        let b = DoubleForm::monomial(3, &[2], &[2], 1.0).unwrap();
        let w = a.wedge(&b).unwrap();
        assert_eq!(w.coeff(&v(&[1, 2]), &v(&[1, 2])), 1.0);
        assert_eq!(w.iter().count(), 1);
    }

    #[test]
    fn wedge_repeated_index_annihilates() {
        let a = DoubleForm::monomial(3, &[1], &[2], 1.0).unwrap();
        let w = a.wedge(&a).unwrap();
        assert_eq!(w.iter().count(), 0);
    }

    #[test]
    fn wedge_square_of_diagonal_sum() {
        // ω = v¹⊗v¹ + v²⊗v², expanded by bilinearity: ω∧ω = 2 v¹∧v²⊗v¹∧v²
        let a = DoubleForm::monomial(2, &[1], &[1], 1.0).unwrap();
        let b = DoubleForm::monomial(2, &[2], &[2], 1.0).unwrap();
        let w = (&a + &b).wedge(&(&a + &b)).unwrap();
        assert_eq!(w.coeff(&v(&[1, 2]), &v(&[1, 2])), 2.0);
        assert_eq!(w.iter().count(), 1);
    }

    #[test]
    fn wedge_dimension_mismatch() {
        let a = DoubleForm::monomial(3, &[1], &[1], 1.0).unwrap();
        let b = DoubleForm::monomial(4, &[2], &[2], 1.0).unwrap();
        assert!(matches!(a.wedge(&b), Err(AlgebraError::DimensionMismatch(3, 4))));
    }

    #[test]
    fn trace_examples() {
        let mut id = DoubleForm::zero(3, 1, 1);
        for i in 1..=3 {
            id.add_coeff(v(&[i]), v(&[i]), 1.0);
        }
        assert_eq!(id.trace_diag().unwrap(), 3.0);
        let m = DoubleForm::monomial(3, &[1, 2], &[1, 2], 1.0).unwrap();
        assert_eq!(m.trace_diag().unwrap(), 1.0);
        let off = DoubleForm::monomial(3, &[1, 2], &[1, 3], 1.0).unwrap();
        assert_eq!(off.trace_diag().unwrap(), 0.0);
        let ns = DoubleForm::monomial(3, &[1, 2], &[1], 1.0).unwrap();
        assert!(matches!(ns.trace_diag(), Err(AlgebraError::NonSquareBidegree(2, 1))));
    }

    #[test]
    fn det_via_power_examples() {
        assert!((det_via_power(&DMatrix::identity(2, 2)).unwrap() - 1.0).abs() < 1e-15);
        let d = DMatrix::from_diagonal(&nalgebra::dvector![2.0, 3.0]);
        assert!((det_via_power(&d).unwrap() - 6.0).abs() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let m = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
            let lu = m.clone().lu().determinant();
            let dp = det_via_power(&m).unwrap();
            assert!((dp - lu).abs() <= 1e-12 * lu.abs().max(1.0), "dp={dp} lu={lu}");
        }
    }

    #[test]
    fn pfaffian_standard_block_is_minus_a() {
        let a = 0.8;
        let f = DMatrix::from_row_slice(2, 2, &[0.0, a, -a, 0.0]);
        assert!((pfaffian_scalar(&f).unwrap() + a).abs() < 1e-15);
        assert!((pfaffian_bruteforce(&f) + a).abs() < 1e-15);
    }

    #[test]
    fn pfaffian_block_diag_r4() {
        let (a, b) = (1.3, -0.4);
        let mut f = DMatrix::zeros(4, 4);
        f[(0, 1)] = a;
        f[(1, 0)] = -a;
        f[(2, 3)] = b;
        f[(3, 2)] = -b;
        // Frozen from the brute-force permutation sum: a·b.
        assert!((pfaffian_bruteforce(&f) - a * b).abs() < 1e-14);
        assert!((pfaffian_scalar(&f).unwrap() - a * b).abs() < 1e-14);
    }

    #[test]
    fn pfaffian_matches_bruteforce_and_squares_to_det() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &r in &[2usize, 4, 6] {
            for _ in 0..30 {
                let f = random_skew(r, &mut rng);
                let pf = pfaffian_scalar(&f).unwrap();
                let bf = pfaffian_bruteforce(&f);
                assert!((pf - bf).abs() <= 1e-12 * bf.abs().max(1.0));
                let det = f.clone().lu().determinant();
                assert!((pf * pf - det).abs() <= 1e-10 * det.abs().max(1.0));
            }
        }
    }

    #[test]
    fn pfaffian_congruence_covariance() {
        // pf(GᵀFG) = det(G)·pf(F)
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for &r in &[2usize, 4] {
            for _ in 0..50 {
                let f = random_skew(r, &mut rng);
                let g = DMatrix::from_fn(r, r, |_, _| rng.gen_range(-1.0..1.0));
                let c = g.transpose() * &f * &g;
                let lhs = pfaffian_scalar(&c).unwrap();
                let rhs = g.clone().lu().determinant() * pfaffian_scalar(&f).unwrap();
                assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1.0));
            }
        }
    }

    #[test]
    fn pfaffian_rejects_odd_and_nonskew() {
        assert!(matches!(
            pfaffian_scalar(&DMatrix::zeros(3, 3)),
            Err(AlgebraError::OddRank(3))
        ));
        let mut f = DMatrix::zeros(2, 2);
        f[(0, 1)] = 1.0;
        f[(1, 0)] = -1.0 + 1e-6;
        assert!(matches!(pfaffian_scalar(&f), Err(AlgebraError::NotSkew(_))));
    }

    #[test]
    fn pfaffian_form_r2_m2() {
        let c = 0.7;
        let f = SkewFormMatrix::from_components(2, 2, |a, b, i, j| {
            if (a, b, i, j) == (0, 1, 0, 1) {
                c
            } else {
                0.0
            }
        })
        .unwrap();
        let pf = pfaffian_form(&f).unwrap();
        // Hand expansion with the (−1)^h convention: pf(F) = −c·v¹∧v².
        assert!((pf.coeff(&v(&[1, 2]), &MultiIndex::empty()) + c).abs() < 1e-15);
        assert_eq!(pf.iter().count(), 1);
    }

    #[test]
    fn pfaffian_form_zero() {
        let f = SkewFormMatrix::from_components(4, 3, |_, _, _, _| 0.0).unwrap();
        let pf = pfaffian_form(&f).unwrap();
        assert_eq!(pf.iter().count(), 0);
    }

    #[test]
    fn pfaffian_form_routes_agree() {
        // Berezin route vs the double-shuffle pair sum, per component.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for &(r, m) in &[(2usize, 4usize), (2, 3), (4, 4), (4, 5)] {
            let mut comp = vec![0.0; r * r * m * m];
            let at = |a: usize, b: usize, i: usize, j: usize| ((a * r + b) * m + i) * m + j;
            for a in 0..r {
                for b in (a + 1)..r {
                    for i in 0..m {
                        for j in (i + 1)..m {
                            let c = rng.gen_range(-1.0..1.0);
                            comp[at(a, b, i, j)] = c;
                            comp[at(b, a, i, j)] = -c;
                            comp[at(a, b, j, i)] = -c;
                            comp[at(b, a, j, i)] = c;
                        }
                    }
                }
            }
            let getc = |a: usize, b: usize, i: usize, j: usize| comp[at(a, b, i, j)];
            let f = SkewFormMatrix::from_components(r, m, getc).unwrap();
            let pf = pfaffian_form(&f).unwrap();
            for idx in MultiIndex::enumerate(m, r) {
                let berezin = pf.coeff(&idx, &MultiIndex::empty());
                let sub = idx.indices();
                let restricted = |a: usize, b: usize, ii: usize, jj: usize| {
                    getc(a, b, sub[ii] - 1, sub[jj] - 1)
                };
                let pairsum = pfaffian_pairsum_component(&restricted, r);
                assert!(
                    (berezin - pairsum).abs() <= 1e-12 * pairsum.abs().max(1.0),
                    "r={r} m={m} I={idx}: berezin={berezin} pairsum={pairsum}"
                );
            }
        }
    }

    #[test]
    fn pfaffian_form_component_equals_scalar_pfaffian() {
        // ppf(F)_I extracted from pfaffian_form equals pfaffian_scalar of
        // the (i,j)-restricted scalar matrix, for r=2 instances.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (r, m) = (2usize, 4usize);
        let coef: Vec<f64> = (0..m * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = SkewFormMatrix::from_components(r, m, |a, b, i, j| {
            let s = if i < j { coef[i * m + j] } else { -coef[j * m + i] };
            if a == 0 && b == 1 {
                s
            } else if a == 1 && b == 0 {
                -s
            } else {
                0.0
            }
        })
        .unwrap();
        let pf = pfaffian_form(&f).unwrap();
        for idx in MultiIndex::enumerate(m, r) {
            let ii = idx.indices();
            let c = coef[(ii[0] - 1) * m + (ii[1] - 1)];
            let scalar = DMatrix::from_row_slice(2, 2, &[0.0, c, -c, 0.0]);
            let expect = pfaffian_scalar(&scalar).unwrap();
            let got = pf.coeff(&idx, &MultiIndex::empty());
            assert!((got - expect).abs() < 1e-13, "I={idx} got={got} expect={expect}");
        }
    }

    #[test]
    fn xi_iid_vanishes() {
        let k = CovKernel::from_fn(2, 2, |a, i, b, j| {
            if a == b && i == j {
                1.0
            } else {
                0.0
            }
        });
        let law = GaussianMatrixLaw::centered(k).unwrap();
        assert_eq!(xi_from_covariance(&law).iter().count(), 0);
        assert_eq!(expected_det(&law).unwrap(), 0.0);
    }

    #[test]
    fn xi_cross_term() {
        let c = 0.6;
        let k = CovKernel::from_fn(2, 2, |a, i, b, j| {
            let mut v = if a == b && i == j { 1.0 } else { 0.0 };
            if (a, i, b, j) == (0, 0, 1, 1) || (a, i, b, j) == (1, 1, 0, 0) {
                v += c;
            }
            v
        });
        let law = GaussianMatrixLaw::centered(k).unwrap();
        law.check_psd(1e-12).unwrap();
        let xi = xi_from_covariance(&law);
        assert!((xi.coeff(&v(&[1, 2]), &v(&[1, 2])) - c).abs() < 1e-15);
        assert!((expected_det(&law).unwrap() - c).abs() < 1e-15);
    }

    #[test]
    fn xi_matches_empirical_covariance() {
        // Ξ built from an empirical covariance of a known law approaches
        // the analytic Ξ.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let r = 2;
        let n = r * r;
        let half = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.7..0.7));
        let flat = &half * half.transpose();
        let k = CovKernel::from_fn(r, r, |a, i, b, j| flat[(a * r + i, b * r + j)]);
        let law = GaussianMatrixLaw::centered(k).unwrap();
        let sqrt = law.cov_sqrt();
        let nsamp = 400_000usize;
        let mut emp = CovKernel::zeros(r, r);
        for _ in 0..nsamp {
            let s = law.sample_with(&sqrt, &mut rng);
            for a in 0..r {
                for i in 0..r {
                    for b in 0..r {
                        for j in 0..r {
                            let v = emp.get(a, i, b, j) + s[(a, i)] * s[(b, j)];
                            emp.set(a, i, b, j, v);
                        }
                    }
                }
            }
        }
        for x in emp.data.iter_mut() {
            *x /= nsamp as f64;
        }
        let xi_analytic = xi_from_covariance(&law);
        let xi_emp = xi_from_kernel(&emp);
        // entries are means of products of Gaussians; 4 standard errors with
        // a generous variance bound
        let tol = 4.0 * 4.0 * flat.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
            / (nsamp as f64).sqrt();
        assert!(xi_emp.approx_eq(&xi_analytic, tol));
    }

    #[test]
    fn expected_det_matches_monte_carlo_r4() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let r = 4;
        let n = r * r;
        let half = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.5..0.5));
        let flat = &half * half.transpose();
        let k = CovKernel::from_fn(r, r, |a, i, b, j| flat[(a * r + i, b * r + j)]);
        let law = GaussianMatrixLaw::centered(k).unwrap();
        law.check_psd(1e-10).unwrap();
        let closed = expected_det(&law).unwrap();
        let sqrt = law.cov_sqrt();
        let nsamp = 200_000;
        let (mut acc, mut acc2) = (0.0, 0.0);
        for _ in 0..nsamp {
            let d = law.sample_with(&sqrt, &mut rng).lu().determinant();
            acc += d;
            acc2 += d * d;
        }
        let mean = acc / nsamp as f64;
        let var = (acc2 / nsamp as f64 - mean * mean).max(0.0);
        let se = (var / nsamp as f64).sqrt();
        assert!(
            (mean - closed).abs() <= 5.0 * se,
            "closed={closed} mc={mean} se={se}"
        );
    }

    #[test]
    fn expected_det_shifted_degenerate_cases() {
        let r = 2;
        let mu = DMatrix::from_diagonal(&nalgebra::dvector![2.0, 3.0]);
        let law = GaussianMatrixLaw::new(mu.clone(), CovKernel::zeros(r, r)).unwrap();
        assert!((expected_det_shifted(&law).unwrap() - 6.0).abs() < 1e-14);

        let c = 0.4;
        let k = CovKernel::from_fn(2, 2, |a, i, b, j| {
            let mut v = if a == b && i == j { 1.0 } else { 0.0 };
            if (a, i, b, j) == (0, 0, 1, 1) || (a, i, b, j) == (1, 1, 0, 0) {
                v += c;
            }
            v
        });
        let centered = GaussianMatrixLaw::centered(k.clone()).unwrap();
        assert!(
            (expected_det_shifted(&centered).unwrap() - expected_det(&centered).unwrap()).abs()
                < 1e-14
        );

        // r = 2, arbitrary μ, Ξ_{12|12} = c: hand expansion of the two
        // terms (j = 0, 1) gives det μ + c.
        let mu = DMatrix::from_row_slice(2, 2, &[1.2, -0.3, 0.5, 0.9]);
        let law = GaussianMatrixLaw::new(mu.clone(), k).unwrap();
        let expect = mu.clone().lu().determinant() + c;
        assert!((expected_det_shifted(&law).unwrap() - expect).abs() < 1e-13);
    }

    proptest! {
        #[test]
        fn wedge_graded_commutativity(
            seed in 0u64..1000,
            p in 0usize..3, q in 0usize..3, p2 in 0usize..3, q2 in 0usize..3
        ) {
            let m = 4;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rand_form = |p: usize, q: usize| {
                let mut f = DoubleForm::zero(m, p, q);
                for i in MultiIndex::enumerate(m, p) {
                    for j in MultiIndex::enumerate(m, q) {
                        f.add_coeff(i.clone(), j.clone(), rng.gen_range(-1.0..1.0));
                    }
                }
                f
            };
            let a = rand_form(p, q);
            let b = rand_form(p2, q2);
            let ab = a.wedge(&b).unwrap();
            let ba = b.wedge(&a).unwrap();
            let sign = if (p * p2 + q * q2) % 2 == 0 { 1.0 } else { -1.0 };
            prop_assert!(ab.approx_eq(&ba.scale(sign), 1e-12));
        }

        #[test]
        fn wedge_associativity(seed in 0u64..500) {
            let m = 3;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rand_form = |p: usize, q: usize| {
                let mut f = DoubleForm::zero(m, p, q);
                for i in MultiIndex::enumerate(m, p) {
                    for j in MultiIndex::enumerate(m, q) {
                        f.add_coeff(i.clone(), j.clone(), rng.gen_range(-1.0..1.0));
                    }
                }
                f
            };
            let a = rand_form(1, 0);
            let b = rand_form(1, 1);
            let c = rand_form(0, 1);
            let l = a.wedge(&b).unwrap().wedge(&c).unwrap();
            let r = a.wedge(&b.wedge(&c).unwrap()).unwrap();
            prop_assert!(l.approx_eq(&r, 1e-12));
        }
    }
}
