//! The correlator-induced geometry: orthonormal frame fields, connection
//! coefficients, curvature by two independent routes, tunneling maps, and
//! the Euler form.
//!
//! The canonical frame is `e = ẽ · A` with `A(x)` the symmetric
//! positive-definite square root of `C(x, x)`; in it the section components
//! `u = A⁻¹ũ` have identity covariance at every point. Derivatives of `A`
//! come from derivatives of `C` through the Sylvester relation
//! `A·∂A + ∂A·A = ∂C`, so the whole chain below is exact (no finite
//! differences).
//!
//! Connection and curvature, in frame components:
//!
//! - `Γ_{αβ|i}(x) = −E[∂_i u_α u_β]`
//! - gauge route: `F_ij = ∂_iΓ_j − ∂_jΓ_i + [Γ_i, Γ_j]`, with `∂Γ` from
//!   second-order covariance jets;
//! - synchronous route: transform into the frame `e·g`,
//!   `g(y) = exp(−Σ_i Γ_i(x)(y^i − x^i))`, where
//!   `F_{αβ|ij} = E[∂_i u_α ∂_j u_β] − E[∂_j u_α ∂_i u_β]`.
//!
//! The two routes traverse different data (the gauge route needs second
//! covariance jets, the synchronous route does not) and agreeing results
//! are a genuine cross-check, exercised by the tests.

use crate::algebra::{pfaffian_form, DoubleForm, SkewFormMatrix};
use crate::ensemble::{sample, sample_stream, CovarianceJet, SectionBasis};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("covariance matrix is not positive definite at {0:?} (min eigenvalue {1:.3e})")]
    NotSpd(Vec<f64>, f64),
    #[error(transparent)]
    Algebra(#[from] crate::algebra::AlgebraError),
    #[error(transparent)]
    Ensemble(#[from] crate::ensemble::EnsembleError),
}

/// Value and derivatives of the map from reference components to frame
/// components, `u = B(x) ũ`.
#[derive(Debug, Clone)]
pub struct FrameJet {
    pub b: DMatrix<f64>,
    pub db: Vec<DMatrix<f64>>,
    pub ddb: Vec<Vec<DMatrix<f64>>>,
}

/// A smooth field of frames in which section components are whitened.
pub trait FrameField: Send + Sync {
    fn basis(&self) -> &Arc<SectionBasis>;
    fn jet(&self, x: &[f64]) -> Result<FrameJet, GeometryError>;
    /// Value-only fast path.
    fn b_at(&self, x: &[f64]) -> Result<DMatrix<f64>, GeometryError>;
}

/// Solves `A X + X A = R` for SPD `A` given its eigendecomposition.
fn sylvester_spd(q: &DMatrix<f64>, lambda: &DVector<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    let rt = q.transpose() * r * q;
    let n = lambda.len();
    let y = DMatrix::from_fn(n, n, |a, b| rt[(a, b)] / (lambda[a] + lambda[b]));
    q * y * q.transpose()
}

fn spd_eigen(
    c: &DMatrix<f64>,
    x: &[f64],
) -> Result<(DMatrix<f64>, DVector<f64>), GeometryError> {
    let eig = c.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(GeometryError::NotSpd(x.to_vec(), min));
    }
    Ok((eig.eigenvectors, eig.eigenvalues))
}

/// The canonical frame `A(x) = C(x,x)^{1/2}`.
pub struct CorrelatorFrame {
    basis: Arc<SectionBasis>,
}

/// Builds the correlator orthonormal frame of a basis.
pub fn ortho_frame(basis: Arc<SectionBasis>) -> CorrelatorFrame {
    CorrelatorFrame { basis }
}

impl FrameField for CorrelatorFrame {
    fn basis(&self) -> &Arc<SectionBasis> {
        &self.basis
    }

    fn jet(&self, x: &[f64]) -> Result<FrameJet, GeometryError> {
        let m = self.basis.dim();
        let jet = self.basis.covariance_jet_at(x);
        let (q, lambda) = spd_eigen(&jet.c, x)?;
        let sqrt_l = lambda.map(f64::sqrt);
        let b = &q * DMatrix::from_diagonal(&sqrt_l.map(|s| 1.0 / s)) * q.transpose();
        // ∂A from A·∂A + ∂A·A = ∂C, in the eigenbasis of A
        let da: Vec<DMatrix<f64>> =
            (0..m).map(|i| sylvester_spd(&q, &sqrt_l, &jet.dc(i))).collect();
        let dda: Vec<Vec<DMatrix<f64>>> = (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| {
                        let rhs = jet.d2c(i, j) - &da[i] * &da[j] - &da[j] * &da[i];
                        sylvester_spd(&q, &sqrt_l, &rhs)
                    })
                    .collect()
            })
            .collect();
        let db: Vec<DMatrix<f64>> = (0..m).map(|i| -(&b * &da[i] * &b)).collect();
        let ddb: Vec<Vec<DMatrix<f64>>> = (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| {
                        &b * &da[i] * &b * &da[j] * &b + &b * &da[j] * &b * &da[i] * &b
                            - &b * &dda[i][j] * &b
                    })
                    .collect()
            })
            .collect();
        Ok(FrameJet { b, db, ddb })
    }

    fn b_at(&self, x: &[f64]) -> Result<DMatrix<f64>, GeometryError> {
        let c = self.basis.covariance_at(x, x);
        let (q, lambda) = spd_eigen(&c, x)?;
        Ok(&q * DMatrix::from_diagonal(&lambda.map(|l| 1.0 / l.sqrt())) * q.transpose())
    }
}

/// Value and derivatives of a gauge transformation field `g(x)`.
#[derive(Debug, Clone)]
pub struct GaugeJet {
    pub g: DMatrix<f64>,
    pub dg: Vec<DMatrix<f64>>,
    pub ddg: Vec<Vec<DMatrix<f64>>>,
}

pub trait GaugeField: Send + Sync {
    fn jet(&self, x: &[f64]) -> GaugeJet;
}

/// Composes a frame jet with a gauge field: the new components are
/// `u' = g⁻¹ u`, so `B' = g⁻¹ B`.
pub fn compose_frame_jet(inner: &FrameJet, gauge: &GaugeJet) -> FrameJet {
    let m = inner.db.len();
    let h = gauge
        .g
        .clone()
        .lu()
        .try_inverse()
        .expect("gauge transformations are invertible");
    let dh: Vec<DMatrix<f64>> = (0..m).map(|i| -(&h * &gauge.dg[i] * &h)).collect();
    let ddh: Vec<Vec<DMatrix<f64>>> = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| {
                    &h * &gauge.dg[i] * &h * &gauge.dg[j] * &h
                        + &h * &gauge.dg[j] * &h * &gauge.dg[i] * &h
                        - &h * &gauge.ddg[i][j] * &h
                })
                .collect()
        })
        .collect();
    let b = &h * &inner.b;
    let db: Vec<DMatrix<f64>> = (0..m).map(|i| &dh[i] * &inner.b + &h * &inner.db[i]).collect();
    let ddb: Vec<Vec<DMatrix<f64>>> = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| {
                    &ddh[i][j] * &inner.b
                        + &dh[i] * &inner.db[j]
                        + &dh[j] * &inner.db[i]
                        + &h * &inner.ddb[i][j]
                })
                .collect()
        })
        .collect();
    FrameJet { b, db, ddb }
}

/// A frame rotated pointwise by a gauge field.
pub struct RotatedFrame {
    pub inner: Arc<dyn FrameField>,
    pub gauge: Arc<dyn GaugeField>,
}

impl FrameField for RotatedFrame {
    fn basis(&self) -> &Arc<SectionBasis> {
        self.inner.basis()
    }

    fn jet(&self, x: &[f64]) -> Result<FrameJet, GeometryError> {
        Ok(compose_frame_jet(&self.inner.jet(x)?, &self.gauge.jet(x)))
    }

    fn b_at(&self, x: &[f64]) -> Result<DMatrix<f64>, GeometryError> {
        let g = self.gauge.jet(x).g;
        let h = g.lu().try_inverse().expect("gauge transformations are invertible");
        Ok(h * self.inner.b_at(x)?)
    }
}

/// Planar rotation field `g = R(ψ(x))` for rank-2 bundles.
pub struct Rotation2Gauge {
    pub psi: Arc<dyn crate::ensemble::ScalarField>,
}

impl GaugeField for Rotation2Gauge {
    fn jet(&self, x: &[f64]) -> GaugeJet {
        let (p, grad, hess) = self.psi.jet(x);
        let m = grad.len();
        let (s, c) = p.sin_cos();
        let g = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        // d/dψ R = R·J, d²/dψ² R = −R
        let gj = DMatrix::from_row_slice(2, 2, &[-s, -c, c, -s]);
        let dg: Vec<DMatrix<f64>> = (0..m).map(|i| &gj * grad[i]).collect();
        let ddg: Vec<Vec<DMatrix<f64>>> = (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| -(&g) * (grad[i] * grad[j]) + &gj * hess[(i, j)])
                    .collect()
            })
            .collect();
        GaugeJet { g, dg, ddg }
    }
}

/// Frame-component covariance blocks at a point:
/// `m0 = E[u uᵀ]` (identity up to rounding), `d1[i] = E[∂_i u · uᵀ]`,
/// `d11[i][j] = E[∂_i u · ∂_j uᵀ]`, `d2[i][j] = E[∂²_{ij} u · uᵀ]`.
#[derive(Debug, Clone)]
pub struct FrameCov {
    pub m0: DMatrix<f64>,
    pub d1: Vec<DMatrix<f64>>,
    pub d11: Vec<Vec<DMatrix<f64>>>,
    pub d2: Vec<Vec<DMatrix<f64>>>,
}

/// Transforms a reference covariance jet through a frame jet.
pub fn frame_cov(jet: &CovarianceJet, f: &FrameJet) -> FrameCov {
    let m = jet.d1.len();
    let bt = f.b.transpose();
    let m0 = &f.b * &jet.c * &bt;
    let d1: Vec<DMatrix<f64>> = (0..m)
        .map(|i| &f.db[i] * &jet.c * &bt + &f.b * &jet.d1[i] * &bt)
        .collect();
    let d11: Vec<Vec<DMatrix<f64>>> = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| {
                    &f.db[i] * &jet.c * f.db[j].transpose()
                        + &f.db[i] * jet.d1[j].transpose() * &bt
                        + &f.b * &jet.d1[i] * f.db[j].transpose()
                        + &f.b * &jet.d11[i][j] * &bt
                })
                .collect()
        })
        .collect();
    let d2: Vec<Vec<DMatrix<f64>>> = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| {
                    &f.ddb[i][j] * &jet.c * &bt
                        + &f.db[i] * &jet.d1[j] * &bt
                        + &f.db[j] * &jet.d1[i] * &bt
                        + &f.b * &jet.d2[i][j] * &bt
                })
                .collect()
        })
        .collect();
    FrameCov { m0, d1, d11, d2 }
}

fn frame_cov_at(frame: &dyn FrameField, x: &[f64]) -> Result<FrameCov, GeometryError> {
    let jet = frame.basis().covariance_jet_at(x);
    Ok(frame_cov(&jet, &frame.jet(x)?))
}

/// Connection coefficient matrices `Γ_i(x) = −E[∂_i u · uᵀ]`, one skew
/// `r×r` matrix per coordinate direction.
pub fn connection_coeffs(
    frame: &dyn FrameField,
    x: &[f64],
) -> Result<Vec<DMatrix<f64>>, GeometryError> {
    Ok(frame_cov_at(frame, x)?.d1.iter().map(|d| -d).collect())
}

/// Tunneling matrix `T(x, y) = E[u(x) u(y)ᵀ]` in frame components;
/// `T(x,x) = I` and `T(y,x) = T(x,y)ᵀ`.
pub fn tunneling(
    frame: &dyn FrameField,
    x: &[f64],
    y: &[f64],
) -> Result<DMatrix<f64>, GeometryError> {
    let c = frame.basis().covariance_at(x, y);
    Ok(frame.b_at(x)? * c * frame.b_at(y)?.transpose())
}

/// Curvature coefficients `F[i][j]`, each a skew `r×r` matrix,
/// antisymmetric in `(i, j)`.
#[derive(Debug, Clone)]
pub struct Curvature {
    pub m: usize,
    pub r: usize,
    f: Vec<DMatrix<f64>>,
}

impl Curvature {
    fn from_fij(m: usize, r: usize, fij: Vec<DMatrix<f64>>) -> Self {
        Curvature { m, r, f: fij }
    }

    pub fn matrix(&self, i: usize, j: usize) -> &DMatrix<f64> {
        &self.f[i * self.m + j]
    }

    /// `F_{αβ|ij}`
    pub fn comp(&self, alpha: usize, beta: usize, i: usize, j: usize) -> f64 {
        self.f[i * self.m + j][(alpha, beta)]
    }

    pub fn to_skew_form(&self) -> Result<SkewFormMatrix, crate::algebra::AlgebraError> {
        SkewFormMatrix::from_components(self.r, self.m, |a, b, i, j| self.comp(a, b, i, j))
    }

    /// `pf(−F)` as an `(r,0)` double-form; the unnormalized Euler form.
    pub fn pfaffian_of_neg(&self) -> Result<DoubleForm, crate::algebra::AlgebraError> {
        pfaffian_form(&self.to_skew_form()?.neg())
    }

    pub fn max_abs(&self) -> f64 {
        self.f.iter().map(|m| m.amax()).fold(0.0, f64::max)
    }

    pub fn max_diff(&self, other: &Curvature) -> f64 {
        self.f
            .iter()
            .zip(&other.f)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }
}

/// Curvature via the gauge formula `F_ij = ∂_iΓ_j − ∂_jΓ_i + [Γ_i, Γ_j]`,
/// with `∂Γ` taken from exact second-order covariance jets.
pub fn curvature_gauge(frame: &dyn FrameField, x: &[f64]) -> Result<Curvature, GeometryError> {
    let cov = frame_cov_at(frame, x)?;
    let m = cov.d1.len();
    let r = cov.m0.nrows();
    let gamma: Vec<DMatrix<f64>> = cov.d1.iter().map(|d| -d).collect();
    // ∂_iΓ_j = −(E[∂²_{ij}u·uᵀ] + E[∂_j u · ∂_i uᵀ])
    let dgamma = |i: usize, j: usize| -(&cov.d2[i][j] + &cov.d11[j][i]);
    let mut f = vec![DMatrix::zeros(r, r); m * m];
    for i in 0..m {
        for j in (i + 1)..m {
            let fij = dgamma(i, j) - dgamma(j, i) + &gamma[i] * &gamma[j] - &gamma[j] * &gamma[i];
            f[j * m + i] = -&fij;
            f[i * m + j] = fij;
        }
    }
    Ok(Curvature::from_fij(m, r, f))
}

/// Curvature via the synchronous-frame formula: transform the covariance
/// jet into `e·g` with `g(y) = exp(−Σ_i Γ_i(x)(y^i − x^i))` and apply
/// `F_{αβ|ij} = E[∂_i u_α ∂_j u_β] − E[∂_j u_α ∂_i u_β]` there.
pub fn curvature_stochastic(
    frame: &dyn FrameField,
    x: &[f64],
) -> Result<Curvature, GeometryError> {
    let jet = frame.basis().covariance_jet_at(x);
    let fj = frame.jet(x)?;
    let cov = frame_cov(&jet, &fj);
    let m = cov.d1.len();
    let r = cov.m0.nrows();
    let gamma: Vec<DMatrix<f64>> = cov.d1.iter().map(|d| -d).collect();
    // jets of exp(−Σ Γ_i Δx^i) at the base point
    let gauge = GaugeJet {
        g: DMatrix::identity(r, r),
        dg: gamma.iter().map(|g| -g).collect(),
        ddg: (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| 0.5 * (&gamma[i] * &gamma[j] + &gamma[j] * &gamma[i]))
                    .collect()
            })
            .collect(),
    };
    let sync = compose_frame_jet(&fj, &gauge);
    let scov = frame_cov(&jet, &sync);
    debug_assert!(
        scov.d1.iter().map(|d| d.amax()).fold(0.0, f64::max) < 1e-8,
        "synchronous frame should kill Γ at the base point"
    );
    let mut f = vec![DMatrix::zeros(r, r); m * m];
    for i in 0..m {
        for j in (i + 1)..m {
            let fij = &scov.d11[i][j] - &scov.d11[j][i];
            f[j * m + i] = -&fij;
            f[i * m + j] = fij;
        }
    }
    Ok(Curvature::from_fij(m, r, f))
}

/// Number of 2π factors in the Euler form normalization.
fn half_rank(r: usize) -> usize {
    r / 2
}

/// The Euler form `(2π)^{−h} pf(−F)` as an `(r, 0)` double-form over the
/// chart. Independent of the positively oriented frame used to compute `F`.
pub fn euler_form(frame: &dyn FrameField, x: &[f64]) -> Result<DoubleForm, GeometryError> {
    let f = curvature_gauge(frame, x)?;
    let pf = pfaffian_form(&f.to_skew_form()?.neg())?;
    let h = half_rank(f.r);
    Ok(pf.scale((2.0 * std::f64::consts::PI).powi(-(h as i32))))
}

/// Chart density of the Euler form when `r = m`: the coefficient of
/// `dx¹∧…∧dx^m`.
pub fn euler_density_chart(frame: &dyn FrameField, x: &[f64]) -> Result<f64, GeometryError> {
    let ef = euler_form(frame, x)?;
    let m = frame.basis().dim();
    Ok(ef.coeff(&crate::algebra::MultiIndex::full(m), &crate::algebra::MultiIndex::empty()))
}

/// Report of the independence check between `u(x)` and `∇u(x)`.
#[derive(Debug, Clone)]
pub struct IndependenceReport {
    /// Analytic cross-covariance of `u` and `∇u` (zero by construction).
    pub analytic_max: f64,
    /// Largest empirical cross-covariance entry.
    pub empirical_max: f64,
    /// `4/√N` acceptance bound.
    pub bound: f64,
    /// Largest analytic cross-covariance of the raw `du` against `u`
    /// (nonzero wherever the connection is; the negative control).
    pub raw_max: f64,
    pub pass: bool,
}

/// Checks empirically that the frame components of `u(x)` and of the
/// covariant derivative `∇u(x) = du(x) + Γ(x)u(x)` are uncorrelated.
pub fn independence_check(
    frame: &dyn FrameField,
    x: &[f64],
    nsamples: usize,
    master_seed: u64,
) -> Result<IndependenceReport, GeometryError> {
    let basis = frame.basis();
    let m = basis.dim();
    let r = basis.rank();
    let cov = frame_cov_at(frame, x)?;
    let gamma: Vec<DMatrix<f64>> = cov.d1.iter().map(|d| -d).collect();
    // analytic: cov((∇_i u)_α, u_β) = E[∂_i u_α u_β] + (Γ_i E[u uᵀ])_{αβ}
    let analytic_max = (0..m)
        .map(|i| (&cov.d1[i] + &gamma[i] * &cov.m0).amax())
        .fold(0.0, f64::max);
    let raw_max = (0..m).map(|i| cov.d1[i].amax()).fold(0.0, f64::max);

    let fj = frame.jet(x)?;
    let (v, d1) = basis.jet1_at(x);
    let mut rng = sample_stream(master_seed, 0);
    let mut acc = vec![DMatrix::zeros(r, r); m];
    for _ in 0..nsamples {
        let s = sample(basis, &mut rng)?;
        let uref = v.transpose() * &s.coeffs;
        let u = &fj.b * &uref;
        for i in 0..m {
            let duref = d1[i].transpose() * &s.coeffs;
            let du = &fj.b * duref + &fj.db[i] * &uref;
            let nabla = du + &gamma[i] * &u;
            acc[i] += nabla * u.transpose();
        }
    }
    let empirical_max = acc
        .iter()
        .map(|a| (a / nsamples as f64).amax())
        .fold(0.0, f64::max);
    let bound = 4.0 / (nsamples as f64).sqrt();
    Ok(IndependenceReport {
        analytic_max,
        empirical_max,
        bound,
        raw_max,
        pass: empirical_max < bound,
    })
}
