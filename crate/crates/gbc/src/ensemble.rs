//! Finite-type Gaussian ensembles of sections.
//!
//! An ensemble is an ample finite family of global sections together with an
//! L² inner product (chart quadrature against a builder-supplied fiber
//! metric). After orthonormalization the Gaussian measure is represented by
//! iid standard normal coefficients, which makes every covariance quantity
//! an exact finite sum of products of section derivatives — no finite
//! differences enter the connection or curvature.
//!
//! Builders supply sections with exact first and second partial derivatives
//! in a fixed reference trivialization of the bundle over the chart.

use crate::manifold::{builtin_manifold, ManifoldModel};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("basis is not orthonormalized; call orthonormalize first")]
    NotOrthonormalized,
    #[error("sections are numerically dependent: Gram condition {0:.3e}")]
    DependentBasis(f64),
    #[error("section rank/dim mismatch")]
    ShapeMismatch,
    #[error("ensemble needs at least rank many sections: n={0}, r={1}")]
    TooFewSections(usize, usize),
    #[error("unknown ensemble '{0}'")]
    UnknownEnsemble(String),
    #[error(transparent)]
    Manifold(#[from] crate::manifold::ManifoldError),
}

/// Values and exact partial derivatives of one section at a point, in the
/// reference trivialization.
#[derive(Debug, Clone)]
pub struct SectionJet {
    pub value: DVector<f64>,
    /// `d1[i] = ∂_i s`
    pub d1: Vec<DVector<f64>>,
    /// `d2[i][j] = ∂²_{ij} s`, symmetric in `(i, j)`
    pub d2: Vec<Vec<DVector<f64>>>,
}

/// A global section with analytically supplied jets.
pub trait SectionFn: Send + Sync {
    fn rank(&self) -> usize;
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> DVector<f64>;
    fn jet(&self, x: &[f64]) -> SectionJet;
}

/// Scalar field with exact jets; used to modulate sections and to build
/// gauge rotation fields in tests.
pub trait ScalarField: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    /// `(value, gradient, hessian)`
    fn jet(&self, x: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>);
}

/// Product of per-axis factors, each `1`, `cos`, `sin`, or an affine-argument
/// variant `cos/sin(x_k + c)`.
#[derive(Debug, Clone, Copy)]
pub enum AxisFactor {
    One,
    Cos(f64),
    Sin(f64),
}

impl AxisFactor {
    fn eval(self, t: f64) -> (f64, f64, f64) {
        match self {
            AxisFactor::One => (1.0, 0.0, 0.0),
            AxisFactor::Cos(c) => {
                let u = t + c;
                (u.cos(), -u.sin(), -u.cos())
            }
            AxisFactor::Sin(c) => {
                let u = t + c;
                (u.sin(), u.cos(), -u.sin())
            }
        }
    }
}

/// Separable trigonometric scalar field `a · Π_k f_k(x_k)`.
#[derive(Debug, Clone)]
pub struct SeparableTrig {
    pub amplitude: f64,
    pub factors: Vec<AxisFactor>,
}

impl ScalarField for SeparableTrig {
    fn value(&self, x: &[f64]) -> f64 {
        self.amplitude * self.factors.iter().zip(x).map(|(f, &t)| f.eval(t).0).product::<f64>()
    }

    fn jet(&self, x: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let m = self.factors.len();
        let evals: Vec<(f64, f64, f64)> =
            self.factors.iter().zip(x).map(|(f, &t)| f.eval(t)).collect();
        let prod_except = |skip: &[usize]| -> f64 {
            evals
                .iter()
                .enumerate()
                .filter(|(k, _)| !skip.contains(k))
                .map(|(_, e)| e.0)
                .product()
        };
        let v = self.amplitude * prod_except(&[]);
        let g = DVector::from_fn(m, |i, _| self.amplitude * evals[i].1 * prod_except(&[i]));
        let h = DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                self.amplitude * evals[i].2 * prod_except(&[i])
            } else {
                self.amplitude * evals[i].1 * evals[j].1 * prod_except(&[i, j])
            }
        });
        (v, g, h)
    }
}

/// Section whose components are separable trig fields.
pub struct TrigSection {
    rank: usize,
    dim: usize,
    comps: Vec<Vec<SeparableTrig>>,
}

impl TrigSection {
    /// `comps[α]` is a sum of separable trig terms for component `α`.
    pub fn new(rank: usize, dim: usize, comps: Vec<Vec<SeparableTrig>>) -> Self {
        assert_eq!(comps.len(), rank);
        TrigSection { rank, dim, comps }
    }
}

impl SectionFn for TrigSection {
    fn rank(&self) -> usize {
        self.rank
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_fn(self.rank, |a, _| {
            self.comps[a].iter().map(|t| t.value(x)).sum()
        })
    }

    fn jet(&self, x: &[f64]) -> SectionJet {
        let (r, m) = (self.rank, self.dim);
        let mut value = DVector::zeros(r);
        let mut d1 = vec![DVector::zeros(r); m];
        let mut d2 = vec![vec![DVector::zeros(r); m]; m];
        for a in 0..r {
            for term in &self.comps[a] {
                let (v, g, h) = term.jet(x);
                value[a] += v;
                for i in 0..m {
                    d1[i][a] += g[i];
                    for j in 0..m {
                        d2[i][j][a] += h[(i, j)];
                    }
                }
            }
        }
        SectionJet { value, d1, d2 }
    }
}

/// A section multiplied by a scalar field, with jets by the Leibniz rule.
pub struct ProductSection {
    pub scalar: Arc<dyn ScalarField>,
    pub inner: Arc<dyn SectionFn>,
}

impl SectionFn for ProductSection {
    fn rank(&self) -> usize {
        self.inner.rank()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, x: &[f64]) -> DVector<f64> {
        self.inner.value(x) * self.scalar.value(x)
    }

    fn jet(&self, x: &[f64]) -> SectionJet {
        let s = self.inner.jet(x);
        let (f, g, h) = self.scalar.jet(x);
        let m = self.inner.dim();
        let value = &s.value * f;
        let d1: Vec<DVector<f64>> =
            (0..m).map(|i| &s.d1[i] * f + &s.value * g[i]).collect();
        let d2: Vec<Vec<DVector<f64>>> = (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| {
                        &s.d2[i][j] * f
                            + &s.d1[i] * g[j]
                            + &s.d1[j] * g[i]
                            + &s.value * h[(i, j)]
                    })
                    .collect()
            })
            .collect();
        SectionJet { value, d1, d2 }
    }
}

type FiberMetricFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;

/// An ample finite family of sections; the Gaussian measure is iid standard
/// coefficients once `orthonormalize` has fixed the basis.
#[derive(Clone)]
pub struct SectionBasis {
    pub name: String,
    manifold: Arc<ManifoldModel>,
    rank: usize,
    raw: Vec<Arc<dyn SectionFn>>,
    fiber_metric: Arc<FiberMetricFn>,
    /// Effective sections are rows of `mix` applied to the raw family.
    mix: DMatrix<f64>,
    orthonormalized: bool,
}

/// All raw evaluation matrices of a basis at one point (rows = sections).
pub struct BasisJet {
    pub v: DMatrix<f64>,
    pub d1: Vec<DMatrix<f64>>,
    pub d2: Vec<Vec<DMatrix<f64>>>,
}

/// Exact covariance data at a point, in the reference trivialization.
///
/// `d1[i] = E[∂_i ũ · ũᵀ]`, `d11[i][j] = E[∂_i ũ · ∂_j ũᵀ]`,
/// `d2[i][j] = E[∂²_{ij} ũ · ũᵀ]`.
#[derive(Debug, Clone)]
pub struct CovarianceJet {
    pub c: DMatrix<f64>,
    pub d1: Vec<DMatrix<f64>>,
    pub d11: Vec<Vec<DMatrix<f64>>>,
    pub d2: Vec<Vec<DMatrix<f64>>>,
}

impl CovarianceJet {
    /// `∂_i C(x,x) = D1[i] + D1[i]ᵀ`
    pub fn dc(&self, i: usize) -> DMatrix<f64> {
        &self.d1[i] + self.d1[i].transpose()
    }

    /// `∂²_{ij} C(x,x) = D2[i][j] + D2[i][j]ᵀ + D11[i][j] + D11[j][i]`
    pub fn d2c(&self, i: usize, j: usize) -> DMatrix<f64> {
        &self.d2[i][j] + self.d2[i][j].transpose() + &self.d11[i][j] + &self.d11[j][i]
    }
}

impl SectionBasis {
    pub fn new(
        name: &str,
        manifold: Arc<ManifoldModel>,
        rank: usize,
        sections: Vec<Arc<dyn SectionFn>>,
        fiber_metric: Arc<FiberMetricFn>,
    ) -> Result<Self, EnsembleError> {
        let n = sections.len();
        if n < rank {
            return Err(EnsembleError::TooFewSections(n, rank));
        }
        for s in &sections {
            if s.rank() != rank || s.dim() != manifold.dim() {
                return Err(EnsembleError::ShapeMismatch);
            }
        }
        Ok(SectionBasis {
            name: name.to_string(),
            manifold,
            rank,
            raw: sections,
            fiber_metric,
            mix: DMatrix::identity(n, n),
            orthonormalized: false,
        })
    }

    pub fn manifold(&self) -> &Arc<ManifoldModel> {
        &self.manifold
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.manifold.dim()
    }

    pub fn n_sections(&self) -> usize {
        self.mix.nrows()
    }

    pub fn is_orthonormalized(&self) -> bool {
        self.orthonormalized
    }

    pub fn fiber_metric_at(&self, x: &[f64]) -> DMatrix<f64> {
        (self.fiber_metric)(x)
    }

    /// Values of the effective sections, rows = sections (n×r).
    pub fn values_at(&self, x: &[f64]) -> DMatrix<f64> {
        let n_raw = self.raw.len();
        let mut v = DMatrix::zeros(n_raw, self.rank);
        for (k, s) in self.raw.iter().enumerate() {
            v.row_mut(k).copy_from(&s.value(x).transpose());
        }
        &self.mix * v
    }

    /// Values and first derivatives (each n×r).
    pub fn jet1_at(&self, x: &[f64]) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let j = self.jet_at(x);
        (j.v, j.d1)
    }

    /// Full second-order jet of the effective family.
    pub fn jet_at(&self, x: &[f64]) -> BasisJet {
        let (n_raw, r, m) = (self.raw.len(), self.rank, self.dim());
        let mut v = DMatrix::zeros(n_raw, r);
        let mut d1 = vec![DMatrix::zeros(n_raw, r); m];
        let mut d2 = vec![vec![DMatrix::zeros(n_raw, r); m]; m];
        for (k, s) in self.raw.iter().enumerate() {
            let jet = s.jet(x);
            v.row_mut(k).copy_from(&jet.value.transpose());
            for i in 0..m {
                d1[i].row_mut(k).copy_from(&jet.d1[i].transpose());
                for j in 0..m {
                    d2[i][j].row_mut(k).copy_from(&jet.d2[i][j].transpose());
                }
            }
        }
        BasisJet {
            v: &self.mix * &v,
            d1: d1.iter().map(|a| &self.mix * a).collect(),
            d2: d2
                .iter()
                .map(|row| row.iter().map(|a| &self.mix * a).collect())
                .collect(),
        }
    }

    /// Covariance density `C(x,y) = Σ_k ŝ_k(x) ŝ_k(y)ᵀ` (r×r).
    pub fn covariance_at(&self, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        self.values_at(x).transpose() * self.values_at(y)
    }

    /// All coincident-point covariance blocks, as exact sums.
    pub fn covariance_jet_at(&self, x: &[f64]) -> CovarianceJet {
        let m = self.dim();
        let jet = self.jet_at(x);
        let c = jet.v.transpose() * &jet.v;
        let d1: Vec<DMatrix<f64>> =
            (0..m).map(|i| jet.d1[i].transpose() * &jet.v).collect();
        let d11: Vec<Vec<DMatrix<f64>>> = (0..m)
            .map(|i| (0..m).map(|j| jet.d1[i].transpose() * &jet.d1[j]).collect())
            .collect();
        let d2: Vec<Vec<DMatrix<f64>>> = (0..m)
            .map(|i| (0..m).map(|j| jet.d2[i][j].transpose() * &jet.v).collect())
            .collect();
        CovarianceJet { c, d1, d11, d2 }
    }

    /// L² Gram matrix of the effective family, by manifold quadrature
    /// against the fiber metric.
    pub fn gram(&self) -> DMatrix<f64> {
        let n = self.n_sections();
        let mut g = DMatrix::zeros(n, n);
        for (x, w) in self.manifold.quad_points() {
            let v = self.values_at(&x);
            let metric = self.fiber_metric_at(&x);
            let weighted = &v * metric * v.transpose();
            g += weighted * (w * self.manifold.volume_density(&x));
        }
        0.5 * (&g + g.transpose())
    }

    /// Replaces the family by `G^{-1/2}`-combinations so the L² Gram becomes
    /// the identity; the span is unchanged.
    pub fn orthonormalize(&self) -> Result<SectionBasis, EnsembleError> {
        let g = self.gram();
        let eig = g.symmetric_eigen();
        let max = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min > 1e-10 * max) {
            return Err(EnsembleError::DependentBasis(max / min.max(f64::MIN_POSITIVE)));
        }
        let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
        let w = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
        let mut out = self.clone();
        out.mix = w * &self.mix;
        out.orthonormalized = true;
        Ok(out)
    }

    /// Minimum singular value of the evaluation matrix over the grid.
    pub fn ampleness_check(&self, threshold: f64) -> AmplenessReport {
        let mut min_sigma = f64::INFINITY;
        let mut argmin = vec![0.0; self.dim()];
        for x in self.manifold.grid_points() {
            let c = self.covariance_at(&x, &x);
            let eig = c.symmetric_eigen();
            let lmin = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
            let sigma = lmin.max(0.0).sqrt();
            if sigma < min_sigma {
                min_sigma = sigma;
                argmin = x;
            }
        }
        AmplenessReport { min_sigma, argmin, threshold, pass: min_sigma > threshold }
    }
}

impl std::fmt::Debug for SectionBasis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SectionBasis")
            .field("name", &self.name)
            .field("manifold", &self.manifold.name)
            .field("rank", &self.rank)
            .field("n", &self.n_sections())
            .field("orthonormalized", &self.orthonormalized)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub struct AmplenessReport {
    pub min_sigma: f64,
    pub argmin: Vec<f64>,
    pub threshold: f64,
    pub pass: bool,
}

/// Default ampleness threshold on the minimum singular value.
pub const AMPLENESS_THRESHOLD: f64 = 1e-4;

/// One draw from the ensemble: coefficients of the orthonormal basis.
#[derive(Debug, Clone)]
pub struct SectionSample {
    pub basis: Arc<SectionBasis>,
    pub coeffs: DVector<f64>,
}

impl SectionSample {
    pub fn value_at(&self, x: &[f64]) -> DVector<f64> {
        self.basis.values_at(x).transpose() * &self.coeffs
    }

    /// Value and Jacobian (r×m) in the reference trivialization.
    pub fn jet1_at(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let (v, d1) = self.basis.jet1_at(x);
        let value = v.transpose() * &self.coeffs;
        let m = self.basis.dim();
        let mut jac = DMatrix::zeros(self.basis.rank(), m);
        for i in 0..m {
            jac.set_column(i, &(d1[i].transpose() * &self.coeffs));
        }
        (value, jac)
    }
}

/// Deterministic per-sample stream: one ChaCha stream per (seed, index).
pub fn sample_stream(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Draws iid standard normal coefficients from the given stream.
pub fn sample(basis: &Arc<SectionBasis>, rng: &mut impl Rng) -> Result<SectionSample, EnsembleError> {
    if !basis.orthonormalized {
        return Err(EnsembleError::NotOrthonormalized);
    }
    let coeffs =
        DVector::from_fn(basis.n_sections(), |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(SectionSample { basis: Arc::clone(basis), coeffs })
}

/// A deterministic section added to samples (non-centered ensembles).
pub trait DriftField: Send + Sync {
    fn value(&self, x: &[f64]) -> DVector<f64>;
    /// Jacobian, r×m.
    fn d1(&self, x: &[f64]) -> DMatrix<f64>;
}

/// `amplitude · (sin x¹, sin x²)` on a rank-2 torus bundle.
pub struct SinSinDrift {
    pub amplitude: f64,
}

impl DriftField for SinSinDrift {
    fn value(&self, x: &[f64]) -> DVector<f64> {
        nalgebra::dvector![self.amplitude * x[0].sin(), self.amplitude * x[1].sin()]
    }

    fn d1(&self, x: &[f64]) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(2, x.len());
        d[(0, 0)] = self.amplitude * x[0].cos();
        d[(1, 1)] = self.amplitude * x[1].cos();
        d
    }
}

pub fn builtin_drift(name: &str, amplitude: f64) -> Result<Arc<dyn DriftField>, EnsembleError> {
    match name {
        "sinsin" => Ok(Arc::new(SinSinDrift { amplitude })),
        other => Err(EnsembleError::UnknownEnsemble(format!("drift '{other}'"))),
    }
}

// ---------------------------------------------------------------------------
// Builtin ensembles
// ---------------------------------------------------------------------------

/// Tangential projection of one ambient coordinate field of R³ onto the unit
/// sphere, in contravariant `(θ, φ)` chart components.
struct SphereTangentSection {
    k: usize,
}

impl SphereTangentSection {
    /// Separable factors of the two chart components:
    /// `s_k = ( e_k·∂_θ x̂ , (e_k·∂_φ x̂)/sin²θ )`.
    fn comps(&self) -> [Option<(ThetaFactor, AxisFactor)>; 2] {
        use AxisFactor::*;
        use ThetaFactor::*;
        match self.k {
            0 => [
                Some((Trig(Cos(0.0)), Cos(0.0))),                  // cosθ·cosφ
                Some((InvSin, Sin(std::f64::consts::PI))),         // (1/sinθ)·(−sinφ)
            ],
            1 => [
                Some((Trig(Cos(0.0)), Sin(0.0))),                  // cosθ·sinφ
                Some((InvSin, Cos(0.0))),                          // (1/sinθ)·cosφ
            ],
            _ => [
                Some((Trig(Sin(std::f64::consts::PI)), One)),      // −sinθ
                None,
            ],
        }
    }
}

enum ThetaFactor {
    Trig(AxisFactor),
    InvSin,
}

impl ThetaFactor {
    fn eval(&self, t: f64) -> (f64, f64, f64) {
        match self {
            ThetaFactor::Trig(f) => f.eval(t),
            ThetaFactor::InvSin => {
                let (s, c) = (t.sin(), t.cos());
                let v = 1.0 / s;
                let d1 = -c / (s * s);
                let d2 = 1.0 / s + 2.0 * c * c / (s * s * s);
                (v, d1, d2)
            }
        }
    }
}

impl SectionFn for SphereTangentSection {
    fn rank(&self) -> usize {
        2
    }

    fn dim(&self) -> usize {
        2
    }

    fn value(&self, x: &[f64]) -> DVector<f64> {
        self.jet(x).value
    }

    fn jet(&self, x: &[f64]) -> SectionJet {
        let (theta, phi) = (x[0], x[1]);
        let mut value = DVector::zeros(2);
        let mut d1 = vec![DVector::zeros(2); 2];
        let mut d2 = vec![vec![DVector::zeros(2); 2]; 2];
        let comps = self.comps();
        for (a, comp) in comps.iter().enumerate() {
            let Some((tf, pf)) = comp else { continue };
            let (ft, dft, ddft) = tf.eval(theta);
            let (fp, dfp, ddfp) = pf.eval(phi);
            value[a] = ft * fp;
            d1[0][a] = dft * fp;
            d1[1][a] = ft * dfp;
            d2[0][0][a] = ddft * fp;
            d2[0][1][a] = dft * dfp;
            d2[1][0][a] = dft * dfp;
            d2[1][1][a] = ft * ddfp;
        }
        SectionJet { value, d1, d2 }
    }
}

/// Round metric of the unit sphere in the `(θ, φ)` chart; the fiber metric
/// of the tangent-bundle ensemble.
fn sphere_round_metric(x: &[f64]) -> DMatrix<f64> {
    let s2 = x[0].sin().powi(2);
    DMatrix::from_diagonal(&nalgebra::dvector![1.0, s2])
}

/// `T S²` sections `x ↦ P_x v` for the three ambient basis vectors.
pub fn sphere2_tangent() -> Result<SectionBasis, EnsembleError> {
    let manifold = Arc::new(builtin_manifold("sphere2")?);
    let sections: Vec<Arc<dyn SectionFn>> = (0..3)
        .map(|k| Arc::new(SphereTangentSection { k }) as Arc<dyn SectionFn>)
        .collect();
    SectionBasis::new(
        "sphere2_tangent",
        manifold,
        2,
        sections,
        Arc::new(sphere_round_metric),
    )
}

fn trig1(rank: usize, dim: usize, comp_terms: Vec<(usize, Vec<(usize, AxisFactor, f64)>)>) -> Arc<dyn SectionFn> {
    // comp_terms: (component, [(axis, factor, amplitude)])
    let mut comps: Vec<Vec<SeparableTrig>> = vec![Vec::new(); rank];
    for (a, terms) in comp_terms {
        for (axis, f, amp) in terms {
            let mut factors = vec![AxisFactor::One; dim];
            factors[axis] = f;
            comps[a].push(SeparableTrig { amplitude: amp, factors });
        }
    }
    Arc::new(TrigSection::new(rank, dim, comps))
}

/// Rank-2 trivial bundle over T³ with component-mixing trigonometric
/// sections. The mixing makes the induced connection non-flat, which the
/// curve-case experiments need; diagonal covariance blocks remain
/// translation-invariant.
pub fn torus3_trig() -> Result<SectionBasis, EnsembleError> {
    let manifold = Arc::new(builtin_manifold("torus3")?);
    let dim = 3;
    let mut sections: Vec<Arc<dyn SectionFn>> = vec![
        trig1(2, dim, vec![(0, vec![(0, AxisFactor::One, 1.0)])]),
        trig1(2, dim, vec![(1, vec![(0, AxisFactor::One, 1.0)])]),
    ];
    // pairs (cos x^a, sin x^b), (sin x^a, −cos x^b) for cyclic (a, b)
    for (a, b) in [(0usize, 1usize), (1, 2), (2, 0)] {
        sections.push(trig1(
            2,
            dim,
            vec![
                (0, vec![(a, AxisFactor::Cos(0.0), 1.0)]),
                (1, vec![(b, AxisFactor::Sin(0.0), 1.0)]),
            ],
        ));
        sections.push(trig1(
            2,
            dim,
            vec![
                (0, vec![(a, AxisFactor::Sin(0.0), 1.0)]),
                (1, vec![(b, AxisFactor::Cos(0.0), -1.0)]),
            ],
        ));
    }
    SectionBasis::new(
        "torus3_trig",
        manifold,
        2,
        sections,
        Arc::new(|_: &[f64]| DMatrix::identity(2, 2)),
    )
}

/// Rank-2 trivial bundle over T² with per-component trigonometric sections;
/// the two components are independent fields, so the induced connection is
/// flat. Used for the non-centered (drift) experiments.
pub fn torus2_flat_trig() -> Result<SectionBasis, EnsembleError> {
    let manifold = Arc::new(builtin_manifold("torus2")?);
    let dim = 2;
    let mut sections: Vec<Arc<dyn SectionFn>> = Vec::new();
    for comp in 0..2usize {
        sections.push(trig1(2, dim, vec![(comp, vec![(0, AxisFactor::One, 1.0)])]));
        for axis in 0..dim {
            sections.push(trig1(2, dim, vec![(comp, vec![(axis, AxisFactor::Cos(0.0), 1.0)])]));
            sections.push(trig1(2, dim, vec![(comp, vec![(axis, AxisFactor::Sin(0.0), 1.0)])]));
        }
    }
    SectionBasis::new(
        "torus2_flat_trig",
        manifold,
        2,
        sections,
        Arc::new(|_: &[f64]| DMatrix::identity(2, 2)),
    )
}

/// Looks an ensemble up by its harness name (raw, not yet orthonormalized).
pub fn builtin_ensemble(name: &str) -> Result<SectionBasis, EnsembleError> {
    match name {
        "sphere2_tangent" => sphere2_tangent(),
        "torus3_trig" => torus3_trig(),
        "torus2_flat_trig" => torus2_flat_trig(),
        other => Err(EnsembleError::UnknownEnsemble(other.to_string())),
    }
}
