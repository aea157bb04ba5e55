//! Experiment runner comparing the two sides of the expected-current
//! identity: the Monte Carlo mean of `⟨η, [Z_u]⟩` over sampled sections
//! against the quadrature of the closed-form Kac-Rice density (and, for
//! centered runs, of the Euler form).
//!
//! Reproducibility contract: every sample draws from its own counter-based
//! stream derived from `(master seed, sample index)`, per-sample results
//! are stored by index, and reductions are pairwise tree sums, so reports
//! are byte-identical across reruns and worker counts.

use crate::ensemble::{
    builtin_drift, builtin_ensemble, sample, sample_stream, DriftField, SectionBasis,
    AMPLENESS_THRESHOLD,
};
use crate::geometry::{euler_form, ortho_frame, FrameField, GeometryError};
use crate::kacrice::expected_current_density;
use crate::manifold::{tree_sum, ManifoldModel};
use crate::zeroloc::{
    evaluate_current, find_zero_points, trace_zero_curves, CurveTraceOptions, GaussianField,
    TestForm, ZeroFindOptions, ZeroLocus,
};
use nalgebra::dvector;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config parse error at line {0}: {1}")]
    Parse(usize, String),
    #[error("unknown test form '{0}' for manifold '{1}'")]
    UnknownForm(String, String),
    #[error("ensemble '{0}' lives on '{1}', config says '{2}'")]
    ManifoldMismatch(String, String, String),
    #[error("ampleness check failed: min singular value {0:.3e} at {1:?}")]
    AmplenessFailure(f64, Vec<f64>),
    #[error("{0} of {1} samples discarded (> 1%): transversality/extraction bug suspected")]
    ExcessiveDiscards(usize, u64),
    #[error("unsupported dimension pair m = {0}, r = {1}")]
    UnsupportedCase(usize, usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Ensemble(#[from] crate::ensemble::EnsembleError),
    #[error(transparent)]
    Manifold(#[from] crate::manifold::ManifoldError),
    #[error(transparent)]
    ZeroLoc(#[from] crate::zeroloc::ZeroLocError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Flat, text-serializable experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub manifold: String,
    pub ensemble: String,
    pub seed: u64,
    pub samples: u64,
    /// Quadrature resolution for the closed-form side (per axis);
    /// 0 keeps the manifold default.
    pub resolution: usize,
    /// Seed-scan resolution for the zero finder; 0 keeps the default.
    pub scan_res: usize,
    pub form: String,
    pub form_amplitude: f64,
    /// Empty string means no drift.
    pub drift: String,
    pub drift_amplitude: f64,
    pub abs_tol: f64,
    /// Standard-error multiplier in the acceptance rule.
    pub z: f64,
    /// 0 uses the process default thread count.
    pub workers: usize,
    /// Dump zero-locus CSVs for the first `dump_zeros` samples.
    pub dump_zeros: usize,
    pub dump_density: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            manifold: "sphere2".into(),
            ensemble: "sphere2_tangent".into(),
            seed: 1,
            samples: 100,
            resolution: 0,
            scan_res: 0,
            form: "const".into(),
            form_amplitude: 1.0,
            drift: String::new(),
            drift_amplitude: 0.0,
            abs_tol: 1e-3,
            z: 4.0,
            workers: 0,
            dump_zeros: 0,
            dump_density: false,
        }
    }
}

impl ExperimentConfig {
    /// Serializes as `key = value` lines; `parse` inverts this exactly.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "name = {}", self.name);
        let _ = writeln!(s, "manifold = {}", self.manifold);
        let _ = writeln!(s, "ensemble = {}", self.ensemble);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "samples = {}", self.samples);
        let _ = writeln!(s, "resolution = {}", self.resolution);
        let _ = writeln!(s, "scan_res = {}", self.scan_res);
        let _ = writeln!(s, "form = {}", self.form);
        let _ = writeln!(s, "form_amplitude = {:e}", self.form_amplitude);
        let _ = writeln!(s, "drift = {}", self.drift);
        let _ = writeln!(s, "drift_amplitude = {:e}", self.drift_amplitude);
        let _ = writeln!(s, "abs_tol = {:e}", self.abs_tol);
        let _ = writeln!(s, "z = {:e}", self.z);
        let _ = writeln!(s, "workers = {}", self.workers);
        let _ = writeln!(s, "dump_zeros = {}", self.dump_zeros);
        let _ = writeln!(s, "dump_density = {}", self.dump_density);
        s
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = ExperimentConfig::default();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Parse(ln + 1, "expected key = value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| HarnessError::Parse(ln + 1, format!("bad {what}: '{value}'"));
            match key {
                "name" => cfg.name = value.into(),
                "manifold" => cfg.manifold = value.into(),
                "ensemble" => cfg.ensemble = value.into(),
                "seed" => cfg.seed = value.parse().map_err(|_| bad("seed"))?,
                "samples" => cfg.samples = value.parse().map_err(|_| bad("samples"))?,
                "resolution" => cfg.resolution = value.parse().map_err(|_| bad("resolution"))?,
                "scan_res" => cfg.scan_res = value.parse().map_err(|_| bad("scan_res"))?,
                "form" => cfg.form = value.into(),
                "form_amplitude" => {
                    cfg.form_amplitude = value.parse().map_err(|_| bad("form_amplitude"))?
                }
                "drift" => cfg.drift = value.into(),
                "drift_amplitude" => {
                    cfg.drift_amplitude = value.parse().map_err(|_| bad("drift_amplitude"))?
                }
                "abs_tol" => cfg.abs_tol = value.parse().map_err(|_| bad("abs_tol"))?,
                "z" => cfg.z = value.parse().map_err(|_| bad("z"))?,
                "workers" => cfg.workers = value.parse().map_err(|_| bad("workers"))?,
                "dump_zeros" => cfg.dump_zeros = value.parse().map_err(|_| bad("dump_zeros"))?,
                "dump_density" => {
                    cfg.dump_density = value.parse().map_err(|_| bad("dump_density"))?
                }
                other => {
                    return Err(HarnessError::Parse(ln + 1, format!("unknown key '{other}'")))
                }
            }
        }
        if cfg.samples == 0 {
            return Err(HarnessError::Parse(0, "samples must be at least 1".into()));
        }
        Ok(cfg)
    }
}

/// The built-in test forms, named per manifold. Amplitude scales the whole
/// form. Functions pair with point loci, 1-forms with curve loci.
pub fn builtin_form(
    manifold: &str,
    name: &str,
    amplitude: f64,
) -> Result<TestForm, HarnessError> {
    let a = amplitude;
    let f: TestForm = match (manifold, name) {
        ("sphere2", "const") => TestForm::Function(Arc::new(move |_: &[f64]| a)),
        ("sphere2", "z") => TestForm::Function(Arc::new(move |x: &[f64]| a * x[0].cos())),
        ("sphere2", "zsq") => {
            TestForm::Function(Arc::new(move |x: &[f64]| a * x[0].cos().powi(2)))
        }
        ("torus2", "const") => TestForm::Function(Arc::new(move |_: &[f64]| a)),
        ("torus2", "cosx1") => TestForm::Function(Arc::new(move |x: &[f64]| a * x[0].cos())),
        ("torus2", "cosx1_cosx2") => {
            TestForm::Function(Arc::new(move |x: &[f64]| a * x[0].cos() * x[1].cos()))
        }
        ("torus3", "dx1") => TestForm::OneForm(Arc::new(move |_: &[f64]| dvector![a, 0.0, 0.0])),
        ("torus3", "dx2") => TestForm::OneForm(Arc::new(move |_: &[f64]| dvector![0.0, a, 0.0])),
        ("torus3", "dx3") => TestForm::OneForm(Arc::new(move |_: &[f64]| dvector![0.0, 0.0, a])),
        ("torus3", "cosx1_dx2") => {
            TestForm::OneForm(Arc::new(move |x: &[f64]| dvector![0.0, a * x[0].cos(), 0.0]))
        }
        ("torus3", "sin_x2x3_dx1") => TestForm::OneForm(Arc::new(move |x: &[f64]| {
            dvector![a * (x[1] - x[2]).sin(), 0.0, 0.0]
        })),
        // closed piece dx³ (expected contribution zero on the torus) plus
        // the non-closed piece sin(x²−x³) dx¹, which pairs strongly with
        // the curvature of the builtin torus ensemble
        ("torus3", "curvemix") => TestForm::OneForm(Arc::new(move |x: &[f64]| {
            dvector![a * (x[1] - x[2]).sin(), 0.0, a]
        })),
        _ => return Err(HarnessError::UnknownForm(name.into(), manifold.into())),
    };
    Ok(f)
}

/// Per-sample values and the summary statistics of one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    /// Value of `⟨η, [Z_u]⟩` per kept sample, ordered by sample index.
    pub per_sample: Vec<(u64, f64)>,
    pub discarded: Vec<u64>,
    pub mean: f64,
    pub stderr: f64,
    /// Batch-means standard error (32 contiguous batches).
    pub batch_stderr: f64,
    /// Quadrature of the Kac-Rice density (the closed-form side).
    pub rhs_kacrice: f64,
    /// Quadrature of the Euler form (centered ensembles only).
    pub rhs_euler: Option<f64>,
    pub pass: bool,
    pub runtime_secs: f64,
}

impl ExperimentReport {
    /// All numeric fields that must be byte-identical across reruns and
    /// worker counts (runtime excluded). Signed zeros are normalized.
    pub fn numeric_fingerprint(&self) -> String {
        let z = |v: f64| v + 0.0;
        let mut s = String::new();
        let _ = writeln!(s, "mean = {:.17e}", z(self.mean));
        let _ = writeln!(s, "stderr = {:.17e}", z(self.stderr));
        let _ = writeln!(s, "batch_stderr = {:.17e}", z(self.batch_stderr));
        let _ = writeln!(s, "rhs_kacrice = {:.17e}", z(self.rhs_kacrice));
        if let Some(e) = self.rhs_euler {
            let _ = writeln!(s, "rhs_euler = {:.17e}", z(e));
        }
        for (i, v) in &self.per_sample {
            let _ = writeln!(s, "sample {i} = {:.17e}", z(*v));
        }
        for i in &self.discarded {
            let _ = writeln!(s, "discarded {i}");
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "experiment: {}", self.config.name);
        let _ = writeln!(
            s,
            "samples: {} kept, {} discarded",
            self.per_sample.len(),
            self.discarded.len()
        );
        let _ = writeln!(s, "lhs mean  = {:.10e}", self.mean);
        let _ = writeln!(s, "stderr    = {:.10e} (batch-means {:.10e})", self.stderr, self.batch_stderr);
        let _ = writeln!(s, "rhs (kac-rice quadrature) = {:.10e}", self.rhs_kacrice);
        if let Some(e) = self.rhs_euler {
            let _ = writeln!(s, "rhs (euler-form quadrature) = {:.10e}", e);
        }
        let _ = writeln!(
            s,
            "|mean - rhs| = {:.3e} vs max(abs_tol = {:.1e}, z*stderr = {:.3e})",
            (self.mean - self.rhs_kacrice).abs(),
            self.config.abs_tol,
            self.config.z * self.stderr
        );
        let _ = writeln!(s, "verdict: {}", if self.pass { "PASS" } else { "FAIL" });
        let _ = writeln!(s, "runtime: {:.2}s", self.runtime_secs);
        s
    }
}

/// Shuffle sign of the ordered split `({k}, complement)` of the axes:
/// the sign of the permutation `(k, 0, 1, …, k̂, …, m−1)`, which is `(−1)^k`.
fn split_sign_axis(k: usize, _m: usize) -> f64 {
    if k % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

fn parallel_map<T: Send>(
    n: u64,
    workers: usize,
    f: impl Fn(u64) -> T + Sync + Send,
) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("thread pool");
        use rayon::prelude::*;
        pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        (0..n).map(f).collect()
    }
}

struct Prepared {
    manifold: Arc<ManifoldModel>,
    basis: Arc<SectionBasis>,
    frame: Arc<dyn FrameField>,
    form: TestForm,
    drift: Option<Arc<dyn DriftField>>,
}

fn prepare(config: &ExperimentConfig) -> Result<Prepared, HarnessError> {
    let basis = builtin_ensemble(&config.ensemble)?;
    let manifold = Arc::clone(basis.manifold());
    if manifold.name != config.manifold {
        return Err(HarnessError::ManifoldMismatch(
            config.ensemble.clone(),
            manifold.name.clone(),
            config.manifold.clone(),
        ));
    }
    let basis = Arc::new(basis.orthonormalize()?);
    let amp = basis.ampleness_check(AMPLENESS_THRESHOLD);
    if !amp.pass {
        return Err(HarnessError::AmplenessFailure(amp.min_sigma, amp.argmin));
    }
    let frame: Arc<dyn FrameField> = Arc::new(ortho_frame(Arc::clone(&basis)));
    let form = builtin_form(&config.manifold, &config.form, config.form_amplitude)?;
    let drift = if config.drift.is_empty() {
        None
    } else {
        Some(builtin_drift(&config.drift, config.drift_amplitude)?)
    };
    Ok(Prepared { manifold, basis, frame, form, drift })
}

/// Quadrature of the closed-form side. For `m = r` this is
/// `∫ η₀ · w dx` with `w` the expected-current density; for `m = r + 1` the
/// 1-form pairs against the per-split densities with shuffle signs.
fn quadrature_rhs(
    p: &Prepared,
    config: &ExperimentConfig,
    use_euler: bool,
) -> Result<f64, HarnessError> {
    let m = p.basis.dim();
    let r = p.basis.rank();
    let res = if config.resolution == 0 { None } else { Some(config.resolution) };
    let drift = p.drift.as_deref();
    let density_for_split = |x: &[f64], i0: &[usize]| -> Result<f64, HarnessError> {
        if use_euler {
            let ef = euler_form(p.frame.as_ref(), x)?;
            let idx: Vec<usize> = i0.iter().map(|&i| i + 1).collect();
            let mi = crate::algebra::MultiIndex::new(&idx, m).expect("valid split");
            Ok(ef.coeff(&mi, &crate::algebra::MultiIndex::empty()))
        } else {
            Ok(expected_current_density(p.frame.as_ref(), x, i0, drift)?)
        }
    };
    match (m, r, &p.form) {
        (m, r, TestForm::Function(f)) if m == r => {
            let i0: Vec<usize> = (0..m).collect();
            integrate_chart_parallel(p, config, res, &|x: &[f64]| {
                Ok(f(x) * density_for_split(x, &i0)?)
            })
        }
        (m, r, TestForm::OneForm(f)) if m == r + 1 => {
            integrate_chart_parallel(p, config, res, &|x: &[f64]| {
                let form = f(x);
                let mut acc = 0.0;
                for k in 0..m {
                    if form[k] == 0.0 {
                        continue;
                    }
                    let i0: Vec<usize> = (0..m).filter(|&i| i != k).collect();
                    acc += split_sign_axis(k, m) * form[k] * density_for_split(x, &i0)?;
                }
                Ok(acc)
            })
        }
        _ => Err(HarnessError::UnsupportedCase(m, r)),
    }
}

fn integrate_chart_parallel(
    p: &Prepared,
    config: &ExperimentConfig,
    resolution: Option<usize>,
    coeff: &(dyn Fn(&[f64]) -> Result<f64, HarnessError> + Sync),
) -> Result<f64, HarnessError> {
    let mfd = match resolution {
        None => (*p.manifold).clone(),
        Some(r) => {
            let mut m = (*p.manifold).clone();
            m.chart.resolution = vec![r; m.chart.dim];
            m
        }
    };
    let nodes = mfd.quad_points();
    let n = nodes.len() as u64;
    let values: Vec<Result<f64, HarnessError>> = parallel_map(n, config.workers, |i| {
        let (x, w) = &nodes[i as usize];
        coeff(x).map(|v| v * w)
    });
    let mut terms = Vec::with_capacity(values.len());
    for v in values {
        terms.push(v?);
    }
    Ok(tree_sum(&terms))
}

/// Runs one experiment end to end.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    let t0 = Instant::now();
    let p = prepare(config)?;
    let m = p.basis.dim();
    let r = p.basis.rank();

    let rhs_kacrice = quadrature_rhs(&p, config, false)?;
    let rhs_euler = if p.drift.is_none() {
        Some(quadrature_rhs(&p, config, true)?)
    } else {
        None
    };

    let point_opts = ZeroFindOptions {
        scan_res: if config.scan_res == 0 { 64 } else { config.scan_res },
        ..Default::default()
    };
    let curve_opts = CurveTraceOptions {
        scan_res: if config.scan_res == 0 { 24 } else { config.scan_res },
        ..Default::default()
    };

    let results: Vec<Result<f64, String>> =
        parallel_map(config.samples, config.workers, |idx| {
            let mut rng = sample_stream(config.seed, idx);
            let s = sample(&p.basis, &mut rng).map_err(|e| e.to_string())?;
            let field = GaussianField { sample: s, drift: p.drift.clone() };
            let locus = if m == r {
                find_zero_points(&field, p.frame.as_ref(), &point_opts).map(ZeroLocus::Points)
            } else {
                trace_zero_curves(&field, p.frame.as_ref(), &curve_opts).map(ZeroLocus::Curves)
            };
            match locus {
                Ok(l) => evaluate_current(&l, &p.form).map_err(|e| e.to_string()),
                Err(e) => Err(e.to_string()),
            }
        });

    let mut per_sample = Vec::new();
    let mut discarded = Vec::new();
    for (idx, res) in results.into_iter().enumerate() {
        match res {
            Ok(v) => per_sample.push((idx as u64, v)),
            Err(_) => discarded.push(idx as u64),
        }
    }
    if discarded.len() * 100 > config.samples as usize {
        return Err(HarnessError::ExcessiveDiscards(discarded.len(), config.samples));
    }

    let values: Vec<f64> = per_sample.iter().map(|(_, v)| *v).collect();
    let n = values.len() as f64;
    let mean = tree_sum(&values) / n;
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = tree_sum(&sq) / (n - 1.0).max(1.0);
    let stderr = (var / n).sqrt();
    let batch_stderr = batch_means_stderr(&values);
    let pass = (mean - rhs_kacrice).abs() <= config.abs_tol.max(config.z * stderr);

    Ok(ExperimentReport {
        config: config.clone(),
        per_sample,
        discarded,
        mean,
        stderr,
        batch_stderr,
        rhs_kacrice,
        rhs_euler,
        pass,
        runtime_secs: t0.elapsed().as_secs_f64(),
    })
}

fn batch_means_stderr(values: &[f64]) -> f64 {
    let b = 32.min(values.len().max(1));
    if values.len() < 2 * b {
        return f64::NAN;
    }
    let size = values.len() / b;
    let means: Vec<f64> = (0..b)
        .map(|k| {
            let chunk = &values[k * size..(k + 1) * size];
            tree_sum(chunk) / chunk.len() as f64
        })
        .collect();
    let grand = tree_sum(&means) / b as f64;
    let sq: Vec<f64> = means.iter().map(|m| (m - grand) * (m - grand)).collect();
    let var = tree_sum(&sq) / (b as f64 - 1.0);
    (var / b as f64).sqrt()
}

/// Writes `report.txt`, `samples.csv` and the optional dumps into `dir`.
pub fn write_outputs(
    report: &ExperimentReport,
    dir: &Path,
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    let mut txt = String::new();
    txt.push_str("== experiment report ==\n");
    txt.push_str(&report.summary());
    txt.push_str("\n== config ==\n");
    txt.push_str(&report.config.serialize());
    txt.push_str("\n== numeric fields ==\n");
    txt.push_str(&report.numeric_fingerprint());
    std::fs::write(dir.join("report.txt"), txt)?;

    let mut csv = String::from("sample,value,discarded\n");
    let mut iter = report.per_sample.iter().peekable();
    let total = report.config.samples;
    for idx in 0..total {
        if report.discarded.contains(&idx) {
            let _ = writeln!(csv, "{idx},,1");
        } else if let Some((_, v)) = iter.next_if(|(i, _)| *i == idx) {
            let _ = writeln!(csv, "{idx},{v:.17e},0");
        }
    }
    std::fs::write(dir.join("samples.csv"), csv)?;

    if report.config.dump_zeros > 0 || report.config.dump_density {
        write_extra_dumps(report, dir)?;
    }
    Ok(())
}

fn write_extra_dumps(report: &ExperimentReport, dir: &Path) -> Result<(), HarnessError> {
    let config = &report.config;
    let p = prepare(config)?;
    let m = p.basis.dim();
    let r = p.basis.rank();
    for idx in 0..config.dump_zeros.min(config.samples as usize) {
        let mut rng = sample_stream(config.seed, idx as u64);
        let s = sample(&p.basis, &mut rng)?;
        let field = GaussianField { sample: s, drift: p.drift.clone() };
        let mut csv = String::new();
        if m == r {
            csv.push_str("x1,x2,sign,jacobian_det,residual\n");
            if let Ok(zeros) = find_zero_points(&field, p.frame.as_ref(), &ZeroFindOptions::default())
            {
                for z in zeros {
                    let _ = writeln!(
                        csv,
                        "{:.12e},{:.12e},{},{:.12e},{:.3e}",
                        z.location[0], z.location[1], z.sign, z.jacobian_det, z.newton_residual
                    );
                }
            }
        } else {
            csv.push_str("curve,x1,x2,x3\n");
            if let Ok(curves) =
                trace_zero_curves(&field, p.frame.as_ref(), &CurveTraceOptions::default())
            {
                for (k, c) in curves.iter().enumerate() {
                    for v in &c.vertices {
                        let _ = writeln!(csv, "{k},{:.12e},{:.12e},{:.12e}", v[0], v[1], v[2]);
                    }
                }
            }
        }
        std::fs::write(dir.join(format!("zeros_{idx}.csv")), csv)?;
    }
    if config.dump_density {
        let mut csv = String::new();
        let header: Vec<String> = (1..=m).map(|i| format!("x{i}")).collect();
        if m == r {
            let _ = writeln!(csv, "{},volume_density,kacrice_density,euler_density", header.join(","));
        } else {
            let _ = writeln!(csv, "{},volume_density,kacrice_12,kacrice_13,kacrice_23", header.join(","));
        }
        let mfd = &p.manifold;
        let grid_res = 48usize;
        let mut coarse = (**mfd).clone();
        coarse.chart.resolution = vec![grid_res; m];
        for x in coarse.grid_points() {
            let coords: Vec<String> = x.iter().map(|v| format!("{v:.9e}")).collect();
            if m == r {
                let i0: Vec<usize> = (0..m).collect();
                let kr = expected_current_density(p.frame.as_ref(), &x, &i0, p.drift.as_deref())?;
                let eu = crate::geometry::euler_density_chart(p.frame.as_ref(), &x)?;
                let _ = writeln!(
                    csv,
                    "{},{:.9e},{:.9e},{:.9e}",
                    coords.join(","),
                    mfd.volume_density(&x),
                    kr,
                    eu
                );
            } else {
                let mut row = vec![coords.join(","), format!("{:.9e}", mfd.volume_density(&x))];
                for i0 in [[0usize, 1], [0, 2], [1, 2]] {
                    row.push(format!(
                        "{:.9e}",
                        expected_current_density(p.frame.as_ref(), &x, &i0, p.drift.as_deref())?
                    ));
                }
                let _ = writeln!(csv, "{}", row.join(","));
            }
        }
        std::fs::write(dir.join("density_grid.csv"), csv)?;
    }
    Ok(())
}

/// Aggregate result of a list of experiments.
#[derive(Debug)]
pub struct SuiteReport {
    pub reports: Vec<Result<ExperimentReport, (String, String)>>,
    pub all_pass: bool,
}

impl SuiteReport {
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("experiment,status,mean,stderr,rhs,runtime_secs\n");
        for r in &self.reports {
            match r {
                Ok(rep) => {
                    let _ = writeln!(
                        s,
                        "{},{},{:.10e},{:.10e},{:.10e},{:.2}",
                        rep.config.name,
                        if rep.pass { "PASS" } else { "FAIL" },
                        rep.mean,
                        rep.stderr,
                        rep.rhs_kacrice,
                        rep.runtime_secs
                    );
                }
                Err((name, e)) => {
                    let _ = writeln!(s, "{name},ERROR({e}),,,,");
                }
            }
        }
        s
    }
}

/// Runs every config; the suite passes only if every experiment passes.
pub fn run_suite(configs: &[ExperimentConfig]) -> SuiteReport {
    let mut reports = Vec::new();
    let mut all_pass = true;
    for c in configs {
        match run(c) {
            Ok(rep) => {
                all_pass &= rep.pass;
                reports.push(Ok(rep));
            }
            Err(e) => {
                all_pass = false;
                reports.push(Err((c.name.clone(), e.to_string())));
            }
        }
    }
    SuiteReport { reports, all_pass }
}

/// The named built-in experiments.
pub fn builtin_experiments() -> Vec<ExperimentConfig> {
    let mut v = Vec::new();
    v.push(ExperimentConfig {
        name: "euler-number".into(),
        manifold: "sphere2".into(),
        ensemble: "sphere2_tangent".into(),
        seed: 7,
        samples: 100,
        form: "const".into(),
        ..Default::default()
    });
    v.push(ExperimentConfig {
        name: "stochastic-gbc".into(),
        manifold: "sphere2".into(),
        ensemble: "sphere2_tangent".into(),
        seed: 11,
        samples: 10_000,
        form: "zsq".into(),
        ..Default::default()
    });
    v.push(ExperimentConfig {
        name: "curve-case".into(),
        manifold: "torus3".into(),
        ensemble: "torus3_trig".into(),
        seed: 13,
        samples: 2_000,
        form: "curvemix".into(),
        ..Default::default()
    });
    for amp in [0.0, 0.5, 1.0, 2.0] {
        v.push(ExperimentConfig {
            name: format!("drift-sweep-{amp}"),
            manifold: "torus2".into(),
            ensemble: "torus2_flat_trig".into(),
            seed: 17,
            samples: 4_000,
            form: "cosx1_cosx2".into(),
            drift: "sinsin".into(),
            drift_amplitude: amp,
            ..Default::default()
        });
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_roundtrip() {
        for cfg in builtin_experiments() {
            let text = cfg.serialize();
            let back = ExperimentConfig::parse(&text).unwrap();
            assert_eq!(cfg, back);
        }
    }

    #[test]
    fn config_parse_errors() {
        assert!(matches!(
            ExperimentConfig::parse("nonsense"),
            Err(HarnessError::Parse(1, _))
        ));
        assert!(matches!(
            ExperimentConfig::parse("unknown_key = 3"),
            Err(HarnessError::Parse(1, _))
        ));
        assert!(ExperimentConfig::parse("# only a comment\n\nseed = 5").is_ok());
    }

    #[test]
    fn split_sign_axis_values() {
        // (k, rest) as a permutation of (0..3): signs +, −, +
        assert_eq!(split_sign_axis(0, 3), 1.0);
        assert_eq!(split_sign_axis(1, 3), -1.0);
        assert_eq!(split_sign_axis(2, 3), 1.0);
    }

    #[test]
    fn unknown_form_rejected() {
        assert!(builtin_form("sphere2", "nope", 1.0).is_err());
        assert!(builtin_form("torus3", "zsq", 1.0).is_err());
    }

    #[test]
    fn euler_number_experiment_small() {
        let cfg = ExperimentConfig {
            name: "euler-number-small".into(),
            seed: 7,
            samples: 10,
            resolution: 100,
            ..Default::default()
        };
        let rep = run(&cfg).unwrap();
        assert!(rep.pass, "{}", rep.summary());
        for (_, v) in &rep.per_sample {
            assert_eq!(*v, 2.0);
        }
        assert!((rep.rhs_kacrice - 2.0).abs() < 1e-3);
        assert!((rep.rhs_euler.unwrap() - 2.0).abs() < 1e-3);
        assert!(rep.discarded.is_empty());
    }

    #[test]
    fn reports_are_deterministic_across_workers() {
        let base = ExperimentConfig {
            name: "det".into(),
            seed: 3,
            samples: 40,
            resolution: 60,
            form: "zsq".into(),
            ..Default::default()
        };
        let mut one = base.clone();
        one.workers = 1;
        let mut four = base.clone();
        four.workers = 4;
        let ra = run(&one).unwrap();
        let rb = run(&four).unwrap();
        assert_eq!(ra.numeric_fingerprint(), rb.numeric_fingerprint());
        let rc = run(&one).unwrap();
        assert_eq!(ra.numeric_fingerprint(), rc.numeric_fingerprint());
    }

    #[test]
    fn mistoleranced_config_fails_and_propagates() {
        let good = ExperimentConfig {
            name: "ok".into(),
            seed: 7,
            samples: 5,
            resolution: 80,
            ..Default::default()
        };
        let mut bad = good.clone();
        bad.name = "bad".into();
        // force an unattainable tolerance against a wrong target by using
        // the z form with a tiny sample count and zero tolerance
        bad.form = "z".into();
        bad.abs_tol = 0.0;
        bad.z = 0.0;
        let suite = run_suite(&[good, bad]);
        assert!(!suite.all_pass);
        assert!(suite.reports[0].as_ref().unwrap().pass);
        // empty suite passes
        assert!(run_suite(&[]).all_pass);
    }

    #[test]
    fn outputs_written(){
        let dir = std::env::temp_dir().join("gbc-harness-test");
        let _ = std::fs::remove_dir_all(&dir);
        let cfg = ExperimentConfig {
            name: "io".into(),
            seed: 7,
            samples: 3,
            resolution: 60,
            dump_zeros: 1,
            ..Default::default()
        };
        let rep = run(&cfg).unwrap();
        write_outputs(&rep, &dir).unwrap();
        assert!(dir.join("report.txt").exists());
        assert!(dir.join("samples.csv").exists());
        assert!(dir.join("zeros_0.csv").exists());
        let txt = std::fs::read_to_string(dir.join("report.txt")).unwrap();
        assert!(txt.contains("verdict: PASS"));
    }
}
