//! Compact oriented manifolds as single-chart parameterizations with
//! tensor-product quadrature.
//!
//! Each model covers the manifold by one coordinate box up to a measure-zero
//! set (documented per model), carries a positive volume density relative to
//! the chart Lebesgue measure, and integrates smooth functions by composite
//! midpoint on periodic axes and composite Simpson on non-periodic ones.
//! Quadrature reductions use a pairwise tree sum so results are bit-stable
//! for a fixed resolution regardless of evaluation order.

use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifoldError {
    #[error("invalid chart: {0}")]
    InvalidChart(String),
    #[error("unsupported dimension {0}")]
    UnsupportedDim(usize),
    #[error("integrand returned a non-finite value at {0:?}")]
    NonFiniteDensity(Vec<f64>),
}

/// Inset used on non-periodic axes whose integrand may be singular at the
/// exact chart boundary (the sphere's poles). The excluded caps carry
/// O(inset²) of the integral, far below the quadrature tolerance.
const BOUNDARY_INSET: f64 = 1e-4;

/// A coordinate box with per-axis resolution and periodicity flags.
#[derive(Debug, Clone)]
pub struct ChartDomain {
    pub dim: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub resolution: Vec<usize>,
    pub periodic: Vec<bool>,
}

impl ChartDomain {
    pub fn new(
        lo: Vec<f64>,
        hi: Vec<f64>,
        resolution: Vec<usize>,
        periodic: Vec<bool>,
    ) -> Result<Self, ManifoldError> {
        let dim = lo.len();
        if hi.len() != dim || resolution.len() != dim || periodic.len() != dim {
            return Err(ManifoldError::InvalidChart("field length mismatch".into()));
        }
        for i in 0..dim {
            if !(hi[i] - lo[i] > 0.0) {
                return Err(ManifoldError::InvalidChart(format!(
                    "axis {i}: empty interval [{}, {}]",
                    lo[i], hi[i]
                )));
            }
            if resolution[i] < 2 {
                return Err(ManifoldError::InvalidChart(format!(
                    "axis {i}: resolution {} < 2",
                    resolution[i]
                )));
            }
        }
        Ok(ChartDomain { dim, lo, hi, resolution, periodic })
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn diameter(&self) -> f64 {
        (0..self.dim).map(|i| self.extent(i).powi(2)).sum::<f64>().sqrt()
    }

    fn with_resolution(&self, res: usize) -> ChartDomain {
        let mut c = self.clone();
        c.resolution = vec![res; self.dim];
        c
    }
}

/// 1D quadrature nodes and weights on one axis.
fn axis_rule(lo: f64, hi: f64, n: usize, periodic: bool) -> (Vec<f64>, Vec<f64>) {
    if periodic {
        // composite midpoint; spectrally accurate for smooth periodic
        // integrands
        let h = (hi - lo) / n as f64;
        let nodes = (0..n).map(|k| lo + (k as f64 + 0.5) * h).collect();
        let weights = vec![h; n];
        (nodes, weights)
    } else {
        // composite Simpson on an even number of intervals
        let n = if n % 2 == 0 { n } else { n + 1 };
        let h = (hi - lo) / n as f64;
        let nodes: Vec<f64> = (0..=n).map(|k| lo + k as f64 * h).collect();
        let weights: Vec<f64> = (0..=n)
            .map(|k| {
                let c = if k == 0 || k == n {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                c * h / 3.0
            })
            .collect();
        (nodes, weights)
    }
}

/// Deterministic pairwise tree sum.
pub fn tree_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => {
            let mid = n / 2;
            tree_sum(&values[..mid]) + tree_sum(&values[mid..])
        }
    }
}

type DensityFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// A manifold presented as one chart, its volume density relative to
/// `dx¹∧…∧dx^m`, and a note recording the measure-zero excluded set.
#[derive(Clone)]
pub struct ManifoldModel {
    pub name: String,
    pub chart: ChartDomain,
    volume_density: Arc<DensityFn>,
    pub excluded_set_note: String,
}

impl std::fmt::Debug for ManifoldModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ManifoldModel")
            .field("name", &self.name)
            .field("chart", &self.chart)
            .field("excluded_set_note", &self.excluded_set_note)
            .finish()
    }
}

impl ManifoldModel {
    pub fn dim(&self) -> usize {
        self.chart.dim
    }

    pub fn volume_density(&self, x: &[f64]) -> f64 {
        (self.volume_density)(x)
    }

    /// Quadrature nodes and weights of the full tensor grid, row-major over
    /// the axes.
    fn rules(&self, chart: &ChartDomain) -> Vec<(Vec<f64>, Vec<f64>)> {
        (0..chart.dim)
            .map(|i| axis_rule(chart.lo[i], chart.hi[i], chart.resolution[i], chart.periodic[i]))
            .collect()
    }

    /// Integrates `density` against the Riemannian volume: quadrature of
    /// `density × volume_density` over the chart grid.
    pub fn integrate_top_form(
        &self,
        density: &(dyn Fn(&[f64]) -> f64 + Sync),
    ) -> Result<f64, ManifoldError> {
        self.integrate_impl(density, true, None)
    }

    /// Same, at an explicit per-axis resolution.
    pub fn integrate_top_form_at(
        &self,
        density: &(dyn Fn(&[f64]) -> f64 + Sync),
        resolution: usize,
    ) -> Result<f64, ManifoldError> {
        self.integrate_impl(density, true, Some(resolution))
    }

    /// Integrates the chart coefficient of a top form against Lebesgue
    /// measure on the chart (no volume-density factor): `∫ f dx¹…dx^m`.
    pub fn integrate_chart_coefficient(
        &self,
        coeff: &(dyn Fn(&[f64]) -> f64 + Sync),
        resolution: Option<usize>,
    ) -> Result<f64, ManifoldError> {
        self.integrate_impl(coeff, false, resolution)
    }

    fn integrate_impl(
        &self,
        f: &(dyn Fn(&[f64]) -> f64 + Sync),
        with_volume: bool,
        resolution: Option<usize>,
    ) -> Result<f64, ManifoldError> {
        let chart = match resolution {
            Some(r) => self.chart.with_resolution(r),
            None => self.chart.clone(),
        };
        let rules = self.rules(&chart);
        let dims: Vec<usize> = rules.iter().map(|(n, _)| n.len()).collect();
        let total: usize = dims.iter().product();
        let mut terms = Vec::with_capacity(total);
        let mut x = vec![0.0; chart.dim];
        for flat in 0..total {
            let mut rem = flat;
            let mut w = 1.0;
            for i in (0..chart.dim).rev() {
                let k = rem % dims[i];
                rem /= dims[i];
                x[i] = rules[i].0[k];
                w *= rules[i].1[k];
            }
            let mut v = f(&x);
            if with_volume {
                v *= self.volume_density(&x);
            }
            if !v.is_finite() {
                return Err(ManifoldError::NonFiniteDensity(x.clone()));
            }
            terms.push(w * v);
        }
        Ok(tree_sum(&terms))
    }

    /// Quadrature nodes with their tensor-product weights (chart Lebesgue;
    /// callers multiply by `volume_density` for Riemannian integrals).
    pub fn quad_points(&self) -> Vec<(Vec<f64>, f64)> {
        let rules = self.rules(&self.chart);
        let dims: Vec<usize> = rules.iter().map(|(n, _)| n.len()).collect();
        let total: usize = dims.iter().product();
        let mut out = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut x = vec![0.0; self.chart.dim];
            let mut w = 1.0;
            for i in (0..self.chart.dim).rev() {
                let k = rem % dims[i];
                rem /= dims[i];
                x[i] = rules[i].0[k];
                w *= rules[i].1[k];
            }
            out.push((x, w));
        }
        out
    }

    /// The quadrature grid points (used for Gram matrices and ampleness
    /// scans).
    pub fn grid_points(&self) -> Vec<Vec<f64>> {
        let rules = self.rules(&self.chart);
        let dims: Vec<usize> = rules.iter().map(|(n, _)| n.len()).collect();
        let total: usize = dims.iter().product();
        let mut out = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut x = vec![0.0; self.chart.dim];
            for i in (0..self.chart.dim).rev() {
                let k = rem % dims[i];
                rem /= dims[i];
                x[i] = rules[i].0[k];
            }
            out.push(x);
        }
        out
    }

    /// Wraps a chart point into the fundamental domain on periodic axes.
    pub fn wrap(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        for i in 0..self.chart.dim {
            if self.chart.periodic[i] {
                let l = self.chart.extent(i);
                out[i] = (out[i] - self.chart.lo[i]).rem_euclid(l) + self.chart.lo[i];
            }
        }
        out
    }

    /// Squared distance with minimal images on periodic axes.
    pub fn dist2(&self, a: &[f64], b: &[f64]) -> f64 {
        (0..self.chart.dim)
            .map(|i| {
                let mut d = a[i] - b[i];
                if self.chart.periodic[i] {
                    let l = self.chart.extent(i);
                    d = d - l * (d / l).round();
                }
                d * d
            })
            .sum()
    }
}

/// Unit 2-sphere in spherical coordinates `(θ, φ)`, volume density `sin θ`.
/// The poles and one meridian are excluded; both are measure zero.
pub fn builtin_sphere2() -> ManifoldModel {
    let chart = ChartDomain::new(
        vec![BOUNDARY_INSET, 0.0],
        vec![std::f64::consts::PI - BOUNDARY_INSET, 2.0 * std::f64::consts::PI],
        vec![200, 200],
        vec![false, true],
    )
    .expect("static chart");
    ManifoldModel {
        name: "sphere2".into(),
        chart,
        volume_density: Arc::new(|x: &[f64]| x[0].sin()),
        excluded_set_note:
            "poles θ ∈ {0, π} (chart inset 1e-4) and the φ-seam; both measure zero".into(),
    }
}

/// Flat torus `(R/2πZ)^dim`, volume density 1, all axes periodic.
pub fn builtin_torus(dim: usize) -> Result<ManifoldModel, ManifoldError> {
    if dim != 2 && dim != 3 {
        return Err(ManifoldError::UnsupportedDim(dim));
    }
    let res = if dim == 2 { 200 } else { 64 };
    let tau = 2.0 * std::f64::consts::PI;
    let chart = ChartDomain::new(
        vec![0.0; dim],
        vec![tau; dim],
        vec![res; dim],
        vec![true; dim],
    )?;
    Ok(ManifoldModel {
        name: format!("torus{dim}"),
        chart,
        volume_density: Arc::new(|_: &[f64]| 1.0),
        excluded_set_note: "none (global periodic chart)".into(),
    })
}

/// Looks a builtin model up by its harness name.
pub fn builtin_manifold(name: &str) -> Result<ManifoldModel, ManifoldError> {
    match name {
        "sphere2" => Ok(builtin_sphere2()),
        "torus2" => builtin_torus(2),
        "torus3" => builtin_torus(3),
        other => Err(ManifoldError::InvalidChart(format!("unknown manifold '{other}'"))),
    }
}
