//! Oriented zero loci of sampled sections and their integration currents.
//!
//! For `m = r` the zero set is a finite signed point set; for `m = r + 1` it
//! is a union of closed oriented curves, traced by predictor-corrector
//! continuation along `ker du`. The orientation rule, in positively
//! oriented chart coordinates and a positively oriented orthonormal bundle
//! frame, is:
//!
//! - points: `sign = sign det(∂u_α/∂x^i)`;
//! - curves: the tangent `t` is chosen so that `det[a₁; …; a_r; t] > 0`,
//!   where `a_α` are the chart gradients of the frame components.
//!
//! On the zero set the frame Jacobian is `B(x)·dũ(x)` exactly (the
//! frame-derivative term carries a factor `ũ(x) = 0`), and `det B > 0`, so
//! signs may be computed from either and are invariant under positively
//! oriented frame rotations. For `r = 2`, `m = 3` the oriented tangent is
//! the cross product of the two gradient rows.

use crate::ensemble::{DriftField, SectionSample};
use crate::geometry::{FrameField, GeometryError};
use crate::manifold::ManifoldModel;
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ZeroLocError {
    #[error("Newton refinement failed near {0:?} (residual {1:.3e})")]
    NewtonFailure(Vec<f64>, f64),
    #[error("zero at {0:?} violates the transversality floor (|det du| = {1:.3e})")]
    NonTransversal(Vec<f64>, f64),
    #[error("curve continuation failed near {0:?}: {1}")]
    ContinuationFailure(Vec<f64>, String),
    #[error("test form degree does not match the zero locus dimension")]
    DegreeMismatch,
    #[error("operation requires m = r + 1, got m = {0}, r = {1}")]
    NotCurveCase(usize, usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Transversality floor on `|det du|` (points) and `σ_min(du)` (curves).
pub const TRANSVERSALITY_FLOOR: f64 = 1e-6;

/// A section sample plus an optional deterministic drift, evaluated in the
/// reference trivialization.
pub struct GaussianField {
    pub sample: SectionSample,
    pub drift: Option<Arc<dyn DriftField>>,
}

impl GaussianField {
    pub fn centered(sample: SectionSample) -> Self {
        GaussianField { sample, drift: None }
    }

    pub fn manifold(&self) -> &Arc<ManifoldModel> {
        self.sample.basis.manifold()
    }

    pub fn rank(&self) -> usize {
        self.sample.basis.rank()
    }

    pub fn dim(&self) -> usize {
        self.sample.basis.dim()
    }

    pub fn value(&self, x: &[f64]) -> DVector<f64> {
        let mut v = self.sample.value_at(x);
        if let Some(d) = &self.drift {
            v += d.value(x);
        }
        v
    }

    /// Value and Jacobian (r×m), reference components.
    pub fn jet1(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let (mut v, mut j) = self.sample.jet1_at(x);
        if let Some(d) = &self.drift {
            v += d.value(x);
            j += d.d1(x);
        }
        (v, j)
    }
}

/// One transversal zero of a sampled section (`m = r`).
#[derive(Debug, Clone)]
pub struct ZeroPoint {
    pub location: Vec<f64>,
    pub sign: i8,
    /// `det` of the frame-component Jacobian in chart coordinates.
    pub jacobian_det: f64,
    /// Frame-component residual `|u|` after refinement.
    pub newton_residual: f64,
}

/// One closed oriented zero curve (`m = r + 1`), stored as an unwrapped
/// polyline traversed in the oriented direction. For closed curves the last
/// vertex is the minimal-image return to the first, so winding around
/// periodic axes is carried by the vertex coordinates themselves.
#[derive(Debug, Clone)]
pub struct ZeroCurve {
    pub vertices: Vec<Vec<f64>>,
    pub closed: bool,
}

impl ZeroCurve {
    /// Consecutive polyline segments.
    fn segments(&self) -> impl Iterator<Item = (&[f64], Vec<f64>)> {
        let n = self.vertices.len();
        (0..n.saturating_sub(1))
            .map(move |k| (self.vertices[k].as_slice(), self.vertices[k + 1].clone()))
    }

    pub fn length(&self) -> f64 {
        self.segments()
            .map(|(a, b)| {
                a.iter()
                    .zip(&b)
                    .map(|(x, y)| (y - x).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum()
    }
}

/// The zero locus of one sample.
pub enum ZeroLocus {
    Points(Vec<ZeroPoint>),
    Curves(Vec<ZeroCurve>),
}

/// Test forms the currents are evaluated against.
pub enum TestForm {
    /// Degree 0 (point case): a scalar function.
    Function(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
    /// Degree 1 (curve case): covector components in chart coordinates.
    OneForm(Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>),
}

#[derive(Debug, Clone)]
pub struct ZeroFindOptions {
    /// Cells per axis in the seed scan.
    pub scan_res: usize,
    /// Frame-component residual target for accepted zeros.
    pub residual_tol: f64,
    pub max_newton: usize,
}

impl Default for ZeroFindOptions {
    fn default() -> Self {
        ZeroFindOptions { scan_res: 64, residual_tol: 1e-10, max_newton: 60 }
    }
}

#[derive(Debug, Clone)]
pub struct CurveTraceOptions {
    /// Cells per axis in the face-crossing scan.
    pub scan_res: usize,
    /// Continuation step in chart units.
    pub step: f64,
    pub residual_tol: f64,
    pub max_steps: usize,
}

impl Default for CurveTraceOptions {
    fn default() -> Self {
        CurveTraceOptions { scan_res: 24, step: 0.02, residual_tol: 1e-11, max_steps: 200_000 }
    }
}

fn axis_nodes(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect()
}

/// Newton on the reference components with step clamping; returns the
/// refined point if it converges inside the (slightly enlarged) box.
fn newton_refine(
    field: &GaussianField,
    start: &[f64],
    max_step: f64,
    max_iter: usize,
) -> Option<Vec<f64>> {
    let chart = &field.manifold().chart;
    let mut x = start.to_vec();
    for _ in 0..max_iter {
        let (v, j) = field.jet1(&x);
        if v.amax() < 1e-12 {
            return Some(x);
        }
        let delta = j.clone().lu().solve(&(-&v))?;
        let scale = delta.amax();
        let damp = if scale > max_step { max_step / scale } else { 1.0 };
        for i in 0..x.len() {
            x[i] += damp * delta[i];
            if chart.periodic[i] {
                let l = chart.hi[i] - chart.lo[i];
                x[i] = (x[i] - chart.lo[i]).rem_euclid(l) + chart.lo[i];
            } else if x[i] < chart.lo[i] - 0.05 * l_of(chart, i)
                || x[i] > chart.hi[i] + 0.05 * l_of(chart, i)
            {
                return None;
            }
        }
    }
    None
}

fn l_of(chart: &crate::manifold::ChartDomain, i: usize) -> f64 {
    chart.hi[i] - chart.lo[i]
}

/// Winding number of the 2-vector field around a rectangle boundary.
fn cell_degree(field: &GaussianField, lo: &[f64; 2], hi: &[f64; 2]) -> i32 {
    let samples_per_edge = 8;
    let mut pts = Vec::with_capacity(4 * samples_per_edge);
    for k in 0..samples_per_edge {
        let t = k as f64 / samples_per_edge as f64;
        pts.push([lo[0] + t * (hi[0] - lo[0]), lo[1]]);
    }
    for k in 0..samples_per_edge {
        let t = k as f64 / samples_per_edge as f64;
        pts.push([hi[0], lo[1] + t * (hi[1] - lo[1])]);
    }
    for k in 0..samples_per_edge {
        let t = k as f64 / samples_per_edge as f64;
        pts.push([hi[0] - t * (hi[0] - lo[0]), hi[1]]);
    }
    for k in 0..samples_per_edge {
        let t = k as f64 / samples_per_edge as f64;
        pts.push([lo[0], hi[1] - t * (hi[1] - lo[1])]);
    }
    let mut total = 0.0;
    let mut prev = {
        let v = field.value(&pts[0]);
        v[1].atan2(v[0])
    };
    let first = prev;
    for p in pts.iter().skip(1) {
        let v = field.value(p);
        let a = v[1].atan2(v[0]);
        let mut d = a - prev;
        while d > std::f64::consts::PI {
            d -= 2.0 * std::f64::consts::PI;
        }
        while d < -std::f64::consts::PI {
            d += 2.0 * std::f64::consts::PI;
        }
        total += d;
        prev = a;
    }
    let mut d = first - prev;
    while d > std::f64::consts::PI {
        d -= 2.0 * std::f64::consts::PI;
    }
    while d < -std::f64::consts::PI {
        d += 2.0 * std::f64::consts::PI;
    }
    total += d;
    (total / (2.0 * std::f64::consts::PI)).round() as i32
}

/// Finds the signed zeros of a sample on an `m = r = 2` chart: seed scan
/// over grid cells (sign patterns plus a degree fallback), Newton
/// refinement, minimal-image deduplication, transversality floor.
pub fn find_zero_points(
    field: &GaussianField,
    frame: &dyn FrameField,
    opts: &ZeroFindOptions,
) -> Result<Vec<ZeroPoint>, ZeroLocError> {
    assert_eq!(field.dim(), 2, "point extraction needs m = r = 2");
    assert_eq!(field.rank(), 2);
    let manifold = Arc::clone(field.manifold());
    let chart = &manifold.chart;
    let n = opts.scan_res;
    let xs = axis_nodes(chart.lo[0], chart.hi[0], n);
    let ys = axis_nodes(chart.lo[1], chart.hi[1], n);
    let mut values = vec![DVector::zeros(2); (n + 1) * (n + 1)];
    for (i, &x) in xs.iter().enumerate() {
        for (j, &y) in ys.iter().enumerate() {
            values[i * (n + 1) + j] = field.value(&[x, y]);
        }
    }
    let cell_diag = ((xs[1] - xs[0]).powi(2) + (ys[1] - ys[0]).powi(2)).sqrt();
    let mut raw = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let corners = [
                &values[i * (n + 1) + j],
                &values[(i + 1) * (n + 1) + j],
                &values[i * (n + 1) + j + 1],
                &values[(i + 1) * (n + 1) + j + 1],
            ];
            let change = |c: usize| {
                let lo = corners.iter().map(|v| v[c]).fold(f64::INFINITY, f64::min);
                let hi = corners.iter().map(|v| v[c]).fold(f64::NEG_INFINITY, f64::max);
                lo <= 0.0 && hi >= 0.0
            };
            let mut candidate = change(0) && change(1);
            if !candidate {
                // degree fallback where the field is suspiciously small
                let min_norm = corners.iter().map(|v| v.norm()).fold(f64::INFINITY, f64::min);
                let spread = corners
                    .iter()
                    .flat_map(|a| corners.iter().map(move |b| (*a - *b).norm()))
                    .fold(0.0f64, f64::max);
                if min_norm < 2.0 * spread {
                    let lo = [xs[i], ys[j]];
                    let hi = [xs[i + 1], ys[j + 1]];
                    candidate = cell_degree(field, &lo, &hi) != 0;
                }
            }
            if candidate {
                let center = [0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1])];
                if let Some(z) = newton_refine(field, &center, 3.0 * cell_diag, opts.max_newton) {
                    raw.push(z);
                }
            }
        }
    }
    // dedupe with minimal images
    let radius = 1e-6 * chart.diameter();
    raw.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut kept: Vec<Vec<f64>> = Vec::new();
    for z in raw {
        let z = manifold.wrap(&z);
        if kept.iter().all(|k| manifold.dist2(k, &z) > radius * radius) {
            kept.push(z);
        }
    }
    let mut out = Vec::new();
    for z in kept {
        let (v, jac) = field.jet1(&z);
        let b = frame.b_at(&z)?;
        let residual = (&b * &v).norm();
        if residual > opts.residual_tol {
            return Err(ZeroLocError::NewtonFailure(z, residual));
        }
        let det = (b * jac).determinant();
        if det.abs() < TRANSVERSALITY_FLOOR {
            return Err(ZeroLocError::NonTransversal(z, det.abs()));
        }
        out.push(ZeroPoint {
            location: z,
            sign: if det > 0.0 { 1 } else { -1 },
            jacobian_det: det,
            newton_residual: residual,
        });
    }
    Ok(out)
}

/// Frame-component Jacobian on (or near) the zero set: `B(x)·dũ(x)`.
fn frame_jacobian(
    field: &GaussianField,
    frame: &dyn FrameField,
    x: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>), ZeroLocError> {
    let (v, j) = field.jet1(x);
    let b = frame.b_at(x)?;
    Ok((&b * v, b * j))
}

/// Oriented unit tangent of a rank-2 zero curve in a 3-chart: the cross
/// product of the frame gradient rows, which satisfies
/// `det[a₁; a₂; t] = |a₁×a₂|² > 0`.
fn oriented_tangent(jac: &DMatrix<f64>) -> Option<DVector<f64>> {
    let a1 = jac.row(0);
    let a2 = jac.row(1);
    let t = DVector::from_column_slice(&[
        a1[1] * a2[2] - a1[2] * a2[1],
        a1[2] * a2[0] - a1[0] * a2[2],
        a1[0] * a2[1] - a1[1] * a2[0],
    ]);
    let n = t.norm();
    if n < TRANSVERSALITY_FLOOR {
        return None;
    }
    Some(t / n)
}

/// One corrector pass: Newton steps in the plane orthogonal to the tangent.
fn correct_onto_curve(
    field: &GaussianField,
    frame: &dyn FrameField,
    x: &mut Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<bool, ZeroLocError> {
    for _ in 0..max_iter {
        let (v, jac) = frame_jacobian(field, frame, x)?;
        if v.norm() <= tol {
            return Ok(true);
        }
        let t = match oriented_tangent(&jac) {
            Some(t) => t,
            None => return Ok(false),
        };
        // solve [jac; tᵀ] δ = [−v; 0]
        let mut a = DMatrix::zeros(3, 3);
        a.view_mut((0, 0), (2, 3)).copy_from(&jac);
        a.view_mut((2, 0), (1, 3)).copy_from(&t.transpose());
        let rhs = DVector::from_column_slice(&[-v[0], -v[1], 0.0]);
        let Some(delta) = a.lu().solve(&rhs) else {
            return Ok(false);
        };
        for i in 0..3 {
            x[i] += delta[i];
        }
    }
    let (v, _) = frame_jacobian(field, frame, x)?;
    Ok(v.norm() <= tol)
}

/// 2D Newton for a face crossing with one coordinate frozen.
fn face_newton(
    field: &GaussianField,
    axis: usize,
    start: &[f64],
    max_step: f64,
    max_iter: usize,
) -> Option<Vec<f64>> {
    let others: Vec<usize> = (0..3).filter(|&k| k != axis).collect();
    let mut x = start.to_vec();
    for _ in 0..max_iter {
        let (v, j) = field.jet1(&x);
        if v.amax() < 1e-12 {
            return Some(x);
        }
        let a = DMatrix::from_fn(2, 2, |r, c| j[(r, others[c])]);
        let delta = a.lu().solve(&DVector::from_column_slice(&[-v[0], -v[1]]))?;
        if delta.amax() > max_step {
            return None;
        }
        x[others[0]] += delta[0];
        x[others[1]] += delta[1];
    }
    None
}

/// Traces the closed oriented zero curves of a sample on an
/// `m = 3, r = 2` chart: face-crossing seeds, then predictor-corrector
/// continuation along the oriented kernel direction.
pub fn trace_zero_curves(
    field: &GaussianField,
    frame: &dyn FrameField,
    opts: &CurveTraceOptions,
) -> Result<Vec<ZeroCurve>, ZeroLocError> {
    assert_eq!(field.dim(), 3, "curve tracing needs m = 3, r = 2");
    assert_eq!(field.rank(), 2);
    let manifold = Arc::clone(field.manifold());
    let chart = &manifold.chart;
    let n = opts.scan_res;
    let nodes: Vec<Vec<f64>> =
        (0..3).map(|i| axis_nodes(chart.lo[i], chart.hi[i], n)).collect();
    let idx = |i: usize, j: usize, k: usize| (i * (n + 1) + j) * (n + 1) + k;
    let mut values = vec![DVector::zeros(2); (n + 1) * (n + 1) * (n + 1)];
    for i in 0..=n {
        for j in 0..=n {
            for k in 0..=n {
                values[idx(i, j, k)] =
                    field.value(&[nodes[0][i], nodes[1][j], nodes[2][k]]);
            }
        }
    }
    let cell = (chart.hi[0] - chart.lo[0]) / n as f64;

    // collect face crossings
    let mut seeds: Vec<Vec<f64>> = Vec::new();
    for axis in 0..3usize {
        let (u, w) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for plane in 0..n {
            for cu in 0..n {
                for cw in 0..n {
                    let mut grid = [0usize; 3];
                    grid[axis] = plane;
                    let corner = |du: usize, dw: usize| {
                        let mut g = grid;
                        g[u] = cu + du;
                        g[w] = cw + dw;
                        &values[idx(g[0], g[1], g[2])]
                    };
                    let corners = [corner(0, 0), corner(1, 0), corner(0, 1), corner(1, 1)];
                    let change = |c: usize| {
                        let lo = corners.iter().map(|v| v[c]).fold(f64::INFINITY, f64::min);
                        let hi =
                            corners.iter().map(|v| v[c]).fold(f64::NEG_INFINITY, f64::max);
                        lo <= 0.0 && hi >= 0.0
                    };
                    if change(0) && change(1) {
                        let mut start = [0.0; 3];
                        start[axis] = nodes[axis][plane];
                        start[u] = 0.5 * (nodes[u][cu] + nodes[u][cu + 1]);
                        start[w] = 0.5 * (nodes[w][cw] + nodes[w][cw + 1]);
                        if let Some(z) = face_newton(field, axis, &start, 3.0 * cell, 40) {
                            seeds.push(manifold.wrap(&z));
                        }
                    }
                }
            }
        }
    }

    let mut curves: Vec<ZeroCurve> = Vec::new();
    let mut used = vec![false; seeds.len()];
    let tube2 = (1.2 * opts.step).powi(2);
    for s in 0..seeds.len() {
        if used[s] {
            continue;
        }
        used[s] = true;
        let mut x = seeds[s].clone();
        if !correct_onto_curve(field, frame, &mut x, opts.residual_tol, 15)? {
            continue;
        }
        let start = x.clone();
        let mut vertices = vec![x.clone()];
        let closed;
        let mut steps = 0usize;
        loop {
            steps += 1;
            if steps > opts.max_steps {
                return Err(ZeroLocError::ContinuationFailure(
                    x.clone(),
                    "maximum step count exceeded without closing".into(),
                ));
            }
            let (_, jac) = frame_jacobian(field, frame, &x)?;
            let sigma_min = jac
                .clone()
                .svd(false, false)
                .singular_values
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            if sigma_min < TRANSVERSALITY_FLOOR {
                return Err(ZeroLocError::NonTransversal(x.clone(), sigma_min));
            }
            let t = oriented_tangent(&jac)
                .ok_or_else(|| ZeroLocError::NonTransversal(x.clone(), 0.0))?;
            let mut step = opts.step;
            let mut advanced = false;
            for _ in 0..5 {
                let mut xn: Vec<f64> = (0..3).map(|i| x[i] + step * t[i]).collect();
                if correct_onto_curve(field, frame, &mut xn, opts.residual_tol, 10)? {
                    x = xn;
                    advanced = true;
                    break;
                }
                step *= 0.5;
            }
            if !advanced {
                return Err(ZeroLocError::ContinuationFailure(
                    x.clone(),
                    "corrector failed to converge".into(),
                ));
            }
            if vertices.len() >= 4
                && manifold.dist2(&manifold.wrap(&x), &manifold.wrap(&start))
                    < (0.75 * opts.step).powi(2)
            {
                // close from the previous vertex straight onto the start
                // (the new point may already lie past it), through the
                // minimal image so winding around periodic axes is kept
                let prev = vertices.last().expect("nonempty polyline").clone();
                let wp = manifold.wrap(&prev);
                let ws = manifold.wrap(&start);
                let ret: Vec<f64> = (0..3)
                    .map(|i| {
                        let mut d = ws[i] - wp[i];
                        if chart.periodic[i] {
                            let l = chart.hi[i] - chart.lo[i];
                            d -= l * (d / l).round();
                        }
                        prev[i] + d
                    })
                    .collect();
                vertices.push(ret);
                closed = true;
                break;
            }
            vertices.push(x.clone());
        }
        // consume seeds lying on this curve
        for (k, seed) in seeds.iter().enumerate() {
            if !used[k]
                && vertices
                    .iter()
                    .any(|v| manifold.dist2(&manifold.wrap(v), seed) < tube2)
            {
                used[k] = true;
            }
        }
        curves.push(ZeroCurve { vertices, closed });
    }
    Ok(curves)
}

/// Evaluates `⟨η, [Z_u]⟩`: a signed sum over zeros for functions, an
/// oriented polyline integral (per-segment midpoint rule) for 1-forms.
pub fn evaluate_current(locus: &ZeroLocus, eta: &TestForm) -> Result<f64, ZeroLocError> {
    match (locus, eta) {
        (ZeroLocus::Points(pts), TestForm::Function(f)) => Ok(pts
            .iter()
            .map(|p| p.sign as f64 * f(&p.location))
            .sum()),
        (ZeroLocus::Curves(curves), TestForm::OneForm(f)) => {
            let mut acc = 0.0;
            for c in curves {
                for (a, b) in c.segments() {
                    let mid: Vec<f64> =
                        a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
                    let form = f(&mid);
                    for i in 0..a.len() {
                        acc += form[i] * (b[i] - a[i]);
                    }
                }
            }
            Ok(acc)
        }
        _ => Err(ZeroLocError::DegreeMismatch),
    }
}

/// Shuffle sign of the ordered split `(J₀, I₀)` of `{1..m}`.
fn split_sign(j0: usize, i0: &[usize]) -> f64 {
    let mut perm: Vec<usize> = vec![j0];
    perm.extend_from_slice(i0);
    let mut inversions = 0;
    for a in 0..perm.len() {
        for b in (a + 1)..perm.len() {
            if perm[a] > perm[b] {
                inversions += 1;
            }
        }
    }
    if inversions % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Evaluates `∫_{Z} η₀ dx^{J₀}` two ways on traced curves: (a) the oriented
/// line integral of the chart 1-form, (b) the arclength integral of
/// `η₀ · ε(J₀,I₀) · Δ_{I₀}(du)/J_u`. Both use per-segment midpoints
/// projected onto the zero set; agreement validates the orientation rule.
pub fn coarea_check(
    field: &GaussianField,
    frame: &dyn FrameField,
    curves: &[ZeroCurve],
    eta0: &(dyn Fn(&[f64]) -> f64 + Sync),
    j0_axis: usize,
) -> Result<(f64, f64), ZeroLocError> {
    let m = field.dim();
    let r = field.rank();
    if m != r + 1 {
        return Err(ZeroLocError::NotCurveCase(m, r));
    }
    let i0: Vec<usize> = (0..m).filter(|&i| i != j0_axis).collect();
    let eps = split_sign(j0_axis, &i0);
    let mut direct = 0.0;
    let mut coarea = 0.0;
    for c in curves {
        for (a, b) in c.segments() {
            let mut mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            if !correct_onto_curve(field, frame, &mut mid, 1e-10, 6)? {
                return Err(ZeroLocError::NewtonFailure(mid, f64::NAN));
            }
            let chord: Vec<f64> = a.iter().zip(&b).map(|(x, y)| y - x).collect();
            let norm = |v: &[f64]| v.iter().map(|d| d * d).sum::<f64>().sqrt();
            let half_a = norm(&a.iter().zip(&mid).map(|(x, y)| y - x).collect::<Vec<_>>());
            let half_b = norm(&mid.iter().zip(&b).map(|(x, y)| y - x).collect::<Vec<_>>());
            // Richardson arclength from the chord and the projected
            // midpoint: O(h⁴), removing the one-sided chord-length bias
            let ds = (4.0 * (half_a + half_b) - norm(&chord)) / 3.0;
            let e0 = eta0(&mid);
            direct += e0 * chord[j0_axis];
            let (_, jac) = frame_jacobian(field, frame, &mid)?;
            let minor = DMatrix::from_fn(r, r, |p, q| jac[(p, i0[q])]).determinant();
            let ju = (&jac * jac.transpose()).determinant().max(0.0).sqrt();
            if ju < TRANSVERSALITY_FLOOR {
                return Err(ZeroLocError::NonTransversal(mid, ju));
            }
            // the volume element follows the oriented traversal; a segment
            // traversed against the oriented tangent counts negatively
            let t = oriented_tangent(&jac)
                .ok_or_else(|| ZeroLocError::NonTransversal(mid.clone(), 0.0))?;
            let forward: f64 = chord.iter().zip(t.iter()).map(|(c, ti)| c * ti).sum();
            coarea += e0 * eps * minor / ju * ds * forward.signum();
        }
    }
    Ok((direct, coarea))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{
        builtin_ensemble, sample, sample_stream, AxisFactor, SectionBasis, SectionFn,
        SeparableTrig, TrigSection,
    };
    use crate::geometry::ortho_frame;
    use crate::manifold::builtin_manifold;
    use nalgebra::dvector;
    use rand::Rng;
    use std::sync::Arc;

    fn sphere_frame_and_basis() -> (Arc<SectionBasis>, crate::geometry::CorrelatorFrame) {
        let basis =
            Arc::new(builtin_ensemble("sphere2_tangent").unwrap().orthonormalize().unwrap());
        let frame = ortho_frame(Arc::clone(&basis));
        (basis, frame)
    }

    #[test]
    fn sphere_single_ambient_field_zeros() {
        // coefficients selecting the tangential projection of e₁: zeros at
        // (θ,φ) = (π/2, 0) and (π/2, π), both of sign +1
        let (basis, frame) = sphere_frame_and_basis();
        let field = GaussianField::centered(SectionSample {
            basis: Arc::clone(&basis),
            coeffs: dvector![1.0, 0.0, 0.0],
        });
        let zeros = find_zero_points(&field, &frame, &ZeroFindOptions::default()).unwrap();
        assert_eq!(zeros.len(), 2);
        let total: i32 = zeros.iter().map(|z| z.sign as i32).sum();
        assert_eq!(total, 2);
        let half_pi = std::f64::consts::FRAC_PI_2;
        let manifold = basis.manifold();
        for z in &zeros {
            assert!((z.location[0] - half_pi).abs() < 1e-8);
            let d0 = manifold.dist2(&z.location, &[half_pi, 0.0]).sqrt();
            let d1 = manifold.dist2(&z.location, &[half_pi, std::f64::consts::PI]).sqrt();
            assert!(d0.min(d1) < 1e-8, "zero at {:?}", z.location);
            assert!(z.newton_residual <= 1e-10);
        }
    }

    #[test]
    fn sphere_samples_have_signed_total_two() {
        // per-sample Poincaré-Hopf on a batch of random samples; also the
        // antipodal structure and the u ↔ −u orientation invariance
        let (basis, frame) = sphere_frame_and_basis();
        let opts = ZeroFindOptions::default();
        let mut discards = 0;
        for k in 0..30u64 {
            let s = sample(&basis, &mut sample_stream(101, k)).unwrap();
            let neg = SectionSample { basis: Arc::clone(&basis), coeffs: -&s.coeffs };
            let field = GaussianField::centered(s);
            match find_zero_points(&field, &frame, &opts) {
                Ok(zeros) => {
                    assert_eq!(zeros.len(), 2, "sample {k}");
                    assert_eq!(zeros.iter().map(|z| z.sign as i32).sum::<i32>(), 2);
                    // antipodal pair: (π−θ, φ+π)
                    let (a, b) = (&zeros[0].location, &zeros[1].location);
                    assert!((a[0] + b[0] - std::f64::consts::PI).abs() < 1e-7);
                    let dphi = (a[1] - b[1]).abs();
                    assert!((dphi - std::f64::consts::PI).abs() < 1e-7);

                    let nfield = GaussianField::centered(neg);
                    let nzeros = find_zero_points(&nfield, &frame, &opts).unwrap();
                    assert_eq!(nzeros.iter().map(|z| z.sign as i32).sum::<i32>(), 2);
                }
                Err(_) => discards += 1,
            }
        }
        assert!(discards == 0, "{discards} discards in 30 samples");
    }

    #[test]
    fn constant_section_has_no_zeros() {
        let basis =
            Arc::new(builtin_ensemble("torus2_flat_trig").unwrap().orthonormalize().unwrap());
        let frame = ortho_frame(Arc::clone(&basis));
        // the first section of each component block is the constant one
        let mut coeffs = DVector::zeros(basis.n_sections());
        coeffs[0] = 1.0;
        coeffs[5] = 1.0;
        let field = GaussianField::centered(SectionSample { basis: Arc::clone(&basis), coeffs });
        let zeros = find_zero_points(&field, &frame, &ZeroFindOptions::default()).unwrap();
        assert!(zeros.is_empty());
    }

    #[test]
    fn grid_refinement_preserves_counts() {
        let (basis, frame) = sphere_frame_and_basis();
        let coarse = ZeroFindOptions { scan_res: 48, ..Default::default() };
        let fine = ZeroFindOptions { scan_res: 96, ..Default::default() };
        for k in 0..20u64 {
            let s = sample(&basis, &mut sample_stream(7, k)).unwrap();
            let field = GaussianField::centered(s);
            let a = find_zero_points(&field, &frame, &coarse).unwrap();
            let b = find_zero_points(&field, &frame, &fine).unwrap();
            assert_eq!(a.len(), b.len(), "sample {k}");
            assert_eq!(
                a.iter().map(|z| z.sign as i32).sum::<i32>(),
                b.iter().map(|z| z.sign as i32).sum::<i32>()
            );
        }
    }

    /// Basis on T³ whose span contains (sin x¹, sin x²) while staying
    /// ample: constants plus the two sine sections.
    fn sine_basis() -> Arc<SectionBasis> {
        let manifold = Arc::new(builtin_manifold("torus3").unwrap());
        let mk = |comp: usize, axis: Option<usize>| -> Arc<dyn SectionFn> {
            let mut comps = vec![Vec::new(), Vec::new()];
            let factors = match axis {
                None => vec![AxisFactor::One; 3],
                Some(a) => {
                    let mut f = vec![AxisFactor::One; 3];
                    f[a] = AxisFactor::Sin(0.0);
                    f
                }
            };
            comps[comp].push(SeparableTrig { amplitude: 1.0, factors });
            Arc::new(TrigSection::new(2, 3, comps))
        };
        Arc::new(
            SectionBasis::new(
                "sine3",
                manifold,
                2,
                vec![mk(0, Some(0)), mk(1, Some(1)), mk(0, None), mk(1, None)],
                Arc::new(|_: &[f64]| DMatrix::identity(2, 2)),
            )
            .unwrap(),
        )
    }

    fn deterministic_field(basis: &Arc<SectionBasis>, coeffs: DVector<f64>) -> GaussianField {
        GaussianField::centered(SectionSample { basis: Arc::clone(basis), coeffs })
    }

    #[test]
    fn coordinate_circles_and_orientation() {
        // u = (sin x¹, sin x²): four x³-circles; the oriented tangent is
        // +e₃ where cos x¹ cos x² > 0 and −e₃ where it is negative
        let basis = sine_basis();
        let frame = ortho_frame(Arc::clone(&basis));
        let field = deterministic_field(&basis, dvector![1.0, 1.0, 0.0, 0.0]);
        let curves =
            trace_zero_curves(&field, &frame, &CurveTraceOptions::default()).unwrap();
        assert_eq!(curves.len(), 4, "expected 4 coordinate circles");
        let dx3 = TestForm::OneForm(Arc::new(|_: &[f64]| dvector![0.0, 0.0, 1.0]));
        let mut per_curve = Vec::new();
        let tau = 2.0 * std::f64::consts::PI;
        for c in &curves {
            assert!(c.closed);
            let v = evaluate_current(&ZeroLocus::Curves(vec![c.clone()]), &dx3).unwrap();
            // branch at (x¹, x²) ≈ (0,0), (0,π), (π,0), (π,π)
            let p = &c.vertices[0];
            let branch_sign = p[0].cos() * p[1].cos();
            let expect = tau * branch_sign.signum();
            assert!(
                (v - expect).abs() < 1e-3,
                "circle at ({:.2},{:.2}): ∮dx³ = {v}, expected {expect}",
                p[0],
                p[1]
            );
            per_curve.push(v);
        }
        let total: f64 = per_curve.iter().sum();
        assert!(total.abs() < 1e-3, "signed circle count should cancel: {total}");
    }

    #[test]
    fn nonvanishing_field_has_no_curves() {
        let basis = sine_basis();
        let frame = ortho_frame(Arc::clone(&basis));
        let field = deterministic_field(&basis, dvector![0.0, 0.0, 1.0, 1.0]);
        let curves =
            trace_zero_curves(&field, &frame, &CurveTraceOptions::default()).unwrap();
        assert!(curves.is_empty());
    }

    #[test]
    fn coarea_routes_agree_on_coordinate_circles() {
        let basis = sine_basis();
        let frame = ortho_frame(Arc::clone(&basis));
        let field = deterministic_field(&basis, dvector![1.0, 1.0, 0.0, 0.0]);
        let curves =
            trace_zero_curves(&field, &frame, &CurveTraceOptions::default()).unwrap();
        let (direct, coarea) =
            coarea_check(&field, &frame, &curves, &|x: &[f64]| 1.0 + 0.3 * x[2].cos(), 2)
                .unwrap();
        assert!(
            (direct - coarea).abs() < 1e-6,
            "coarea mismatch: direct {direct} vs {coarea}"
        );
        // η₀ = 0
        let (d0, c0) = coarea_check(&field, &frame, &curves, &|_: &[f64]| 0.0, 2).unwrap();
        assert_eq!((d0, c0), (0.0, 0.0));
    }

    #[test]
    fn coarea_middle_split_sign() {
        // u = (sin x¹, sin x³): circles along x², oriented along −e₂ at the
        // (0,·,0) branch; J₀ = {2} has shuffle sign −1
        let manifold = Arc::new(builtin_manifold("torus3").unwrap());
        let mk = |comp: usize, axis: Option<usize>| -> Arc<dyn SectionFn> {
            let mut comps = vec![Vec::new(), Vec::new()];
            let factors = match axis {
                None => vec![AxisFactor::One; 3],
                Some(a) => {
                    let mut f = vec![AxisFactor::One; 3];
                    f[a] = AxisFactor::Sin(0.0);
                    f
                }
            };
            comps[comp].push(SeparableTrig { amplitude: 1.0, factors });
            Arc::new(TrigSection::new(2, 3, comps))
        };
        let basis = Arc::new(
            SectionBasis::new(
                "sine13",
                manifold,
                2,
                vec![mk(0, Some(0)), mk(1, Some(2)), mk(0, None), mk(1, None)],
                Arc::new(|_: &[f64]| DMatrix::identity(2, 2)),
            )
            .unwrap(),
        );
        let frame = ortho_frame(Arc::clone(&basis));
        let field = deterministic_field(&basis, dvector![1.0, 1.0, 0.0, 0.0]);
        let curves =
            trace_zero_curves(&field, &frame, &CurveTraceOptions::default()).unwrap();
        assert_eq!(curves.len(), 4);
        // the branch through (0, ·, 0) must integrate dx² to −2π
        let dx2 = TestForm::OneForm(Arc::new(|_: &[f64]| dvector![0.0, 1.0, 0.0]));
        for c in &curves {
            let p = &c.vertices[0];
            if p[0].cos() > 0.0 && p[2].cos() > 0.0 {
                let v = evaluate_current(&ZeroLocus::Curves(vec![c.clone()]), &dx2).unwrap();
                assert!((v + 2.0 * std::f64::consts::PI).abs() < 1e-3, "∮dx² = {v}");
            }
        }
        let (direct, coarea) =
            coarea_check(&field, &frame, &curves, &|x: &[f64]| 1.0 + 0.2 * x[1].sin(), 1)
                .unwrap();
        assert!((direct - coarea).abs() < 1e-6, "direct {direct} vs coarea {coarea}");
    }

    #[test]
    fn random_torus_samples_curves_close_and_coarea_agrees() {
        let basis =
            Arc::new(builtin_ensemble("torus3_trig").unwrap().orthonormalize().unwrap());
        let frame = ortho_frame(Arc::clone(&basis));
        let opts = CurveTraceOptions::default();
        let mut rng = sample_stream(2024, 0);
        let mut checked = 0;
        for k in 0..6u64 {
            let s = sample(&basis, &mut sample_stream(2024, k)).unwrap();
            let field = GaussianField::centered(s);
            let curves = trace_zero_curves(&field, &frame, &opts).unwrap();
            for c in &curves {
                assert!(c.closed);
            }
            if curves.is_empty() {
                continue;
            }
            checked += 1;
            let j0 = rng.gen_range(0..3usize);
            let (direct, coarea) =
                coarea_check(&field, &frame, &curves, &|x: &[f64]| 1.0 + 0.5 * x[0].cos(), j0)
                    .unwrap();
            assert!(
                (direct - coarea).abs() < 1e-4,
                "sample {k}, J₀ = {{{j0}}}: direct {direct} vs coarea {coarea}"
            );
        }
        assert!(checked >= 3, "too few samples with nonempty zero sets");
    }

    #[test]
    fn curve_integral_refines_quadratically() {
        let basis =
            Arc::new(builtin_ensemble("torus3_trig").unwrap().orthonormalize().unwrap());
        let frame = ortho_frame(Arc::clone(&basis));
        let s = sample(&basis, &mut sample_stream(99, 1)).unwrap();
        let field = GaussianField::centered(s);
        let eta = TestForm::OneForm(Arc::new(|x: &[f64]| {
            dvector![0.0, x[0].cos(), 1.0]
        }));
        let run = |step: f64| {
            let opts = CurveTraceOptions { step, ..Default::default() };
            let curves = trace_zero_curves(&field, &frame, &opts).unwrap();
            evaluate_current(&ZeroLocus::Curves(curves), &eta).unwrap()
        };
        let (v1, v2, v4) = (run(0.04), run(0.02), run(0.01));
        let e1 = (v1 - v4).abs();
        let e2 = (v2 - v4).abs();
        assert!(
            e2 <= 0.4 * e1 + 1e-7,
            "no second-order refinement: {e1:.3e} -> {e2:.3e}"
        );
    }

    #[test]
    fn degree_mismatch_rejected() {
        let f = TestForm::Function(Arc::new(|_: &[f64]| 1.0));
        let r = evaluate_current(&ZeroLocus::Curves(vec![]), &f);
        assert!(matches!(r, Err(ZeroLocError::DegreeMismatch)));
    }
}
