//! Closed-form Kac-Rice densities.
//!
//! At a point `x`, in the correlator orthonormal frame, `u(x)` is standard
//! Gaussian, so conditioning on `u(x) = 0` needs no matrix inversion: by the
//! regression split the derivative matrix `du(x)` conditional on `u(x) = 0`
//! is Gaussian with mean zero (centered case) and covariance equal to that
//! of the covariant derivative `∇u(x)`. The density of the expected
//! zero-locus current is then
//!
//! `w(x) = E[Δ_{I₀}(dv) | v(x) = 0] · p_{v(x)}(0)`
//!
//! with `p_{v(x)}(0) = (2π)^{−h} exp(−|u₀(x)|²/2)` (drift `u₀`, `h = r/2`),
//! and the conditional expected determinant is evaluated in closed form by
//! `expected_det_shifted`. For a drifted section `v = u₀ + u`, the
//! conditional mean of `dv` is the covariant derivative `∇_{I₀}u₀(x)`.

use crate::algebra::{expected_det_shifted, CovKernel, GaussianMatrixLaw};
use crate::ensemble::DriftField;
use crate::geometry::{FrameField, GeometryError};
use itertools::Itertools;
use nalgebra::{DMatrix, DVector};

/// Rank tolerance below which a matrix counts as non-surjective in `G`.
pub const RANK_TOL: f64 = 1e-8;

/// Conditional law of the frame-component derivative matrix `dv(x)` given
/// `v(x) = 0`, together with the Gaussian density factor at zero.
#[derive(Debug, Clone)]
pub struct ConditionalJetLaw {
    /// Conditional mean (r×m); zero for centered ensembles, the transported
    /// drift derivative `∇u₀` otherwise.
    pub mean: DMatrix<f64>,
    /// Conditional covariance kernel over (row, column) index pairs.
    pub cov: CovKernel,
    /// `p_{v(x)}(0) = (2π)^{−h} e^{−|u₀(x)|²/2}`.
    pub density_at_zero: f64,
}

fn drift_frame_components(
    frame: &dyn FrameField,
    x: &[f64],
    drift: Option<&dyn DriftField>,
) -> Result<(DVector<f64>, DMatrix<f64>), GeometryError> {
    let basis = frame.basis();
    let (r, m) = (basis.rank(), basis.dim());
    match drift {
        None => Ok((DVector::zeros(r), DMatrix::zeros(r, m))),
        Some(d) => {
            let fj = frame.jet(x)?;
            let v_ref = d.value(x);
            let d_ref = d.d1(x);
            let v = &fj.b * &v_ref;
            let mut dv = &fj.b * d_ref;
            for i in 0..m {
                let col = &fj.db[i] * &v_ref;
                dv.set_column(i, &(dv.column(i) + col));
            }
            Ok((v, dv))
        }
    }
}

/// Regression split of `(dv(x), v(x))` in the orthonormal frame.
pub fn conditional_law(
    frame: &dyn FrameField,
    x: &[f64],
    drift: Option<&dyn DriftField>,
) -> Result<ConditionalJetLaw, GeometryError> {
    let basis = frame.basis();
    let (r, m) = (basis.rank(), basis.dim());
    let jet = basis.covariance_jet_at(x);
    let fj = frame.jet(x)?;
    let cov = crate::geometry::frame_cov(&jet, &fj);
    let (u0, du0) = drift_frame_components(frame, x, drift)?;

    // conditional mean of ∂_i v: ∂_i u₀ − cov(∂_i u, u)·u₀ = (∇_i u₀)
    let mut mean = du0.clone();
    for i in 0..m {
        let corr = &cov.d1[i] * &u0;
        mean.set_column(i, &(mean.column(i) - corr));
    }
    // conditional covariance: K_cond[αi|βj] = E[∂_iu_α ∂_ju_β]
    //   − Σ_γ E[∂_iu_α u_γ] E[∂_ju_β u_γ]
    let mut kernel = CovKernel::zeros(r, m);
    for i in 0..m {
        for j in 0..m {
            let reg = &cov.d1[i] * cov.d1[j].transpose();
            for a in 0..r {
                for b in 0..r {
                    kernel.set(a, i, b, j, cov.d11[i][j][(a, b)] - reg[(a, b)]);
                }
            }
        }
    }
    let h = r as f64 / 2.0;
    let density_at_zero =
        (2.0 * std::f64::consts::PI).powf(-h) * (-0.5 * u0.norm_squared()).exp();
    Ok(ConditionalJetLaw { mean, cov: kernel, density_at_zero })
}

impl ConditionalJetLaw {
    /// Restricts to the columns `i0` (0-based) as a square Gaussian matrix
    /// law, ready for the closed-form expected determinant.
    pub fn restrict(&self, i0: &[usize]) -> Result<GaussianMatrixLaw, crate::algebra::AlgebraError> {
        let r = self.mean.nrows();
        assert_eq!(i0.len(), r, "index set must have r columns");
        let mean = DMatrix::from_fn(r, r, |a, k| self.mean[(a, i0[k])]);
        GaussianMatrixLaw::new(mean, self.cov.restrict_cols(i0))
    }
}

/// The Kac-Rice conditional density `ρ_{I₀}(x) = E[Δ_{I₀}(dv) | v(x) = 0]`,
/// evaluated in closed form.
pub fn kacrice_density(
    frame: &dyn FrameField,
    x: &[f64],
    i0: &[usize],
    drift: Option<&dyn DriftField>,
) -> Result<f64, GeometryError> {
    let law = conditional_law(frame, x, drift)?.restrict(i0)?;
    Ok(expected_det_shifted(&law)?)
}

/// The full expected-current density against the chart Lebesgue measure:
/// `ρ_{I₀}(x) · p_{v(x)}(0)`. Its quadrature against a test function gives
/// the closed-form side of the expected-current identity.
pub fn expected_current_density(
    frame: &dyn FrameField,
    x: &[f64],
    i0: &[usize],
    drift: Option<&dyn DriftField>,
) -> Result<f64, GeometryError> {
    let law = conditional_law(frame, x, drift)?;
    let restricted = law.restrict(i0)?;
    Ok(expected_det_shifted(&restricted)? * law.density_at_zero)
}

/// Jacobian `√det(TTᵀ)` and the bounded ratio `G = Δ_{I₀}(T)/Jac_T` of an
/// `r×m` matrix (`G = 0` on the non-surjective set); `|G| ≤ 1` always.
pub fn jacobian_and_g(t: &DMatrix<f64>, i0: &[usize]) -> (f64, f64) {
    let r = t.nrows();
    let gram = t * t.transpose();
    let jac = gram.determinant().max(0.0).sqrt();
    let sigma_min = t
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if sigma_min < RANK_TOL {
        return (jac, 0.0);
    }
    let minor = DMatrix::from_fn(r, r, |a, k| t[(a, i0[k])]);
    (jac, minor.determinant() / jac)
}

/// Sum of squared maximal minors; equals `Jac_T²` by the Cauchy-Binet
/// identity. Exposed for tests.
pub fn sum_squared_minors(t: &DMatrix<f64>) -> f64 {
    let (r, m) = (t.nrows(), t.ncols());
    (0..m)
        .combinations(r)
        .map(|cols| {
            DMatrix::from_fn(r, r, |a, k| t[(a, cols[k])])
                .determinant()
                .powi(2)
        })
        .sum()
}
