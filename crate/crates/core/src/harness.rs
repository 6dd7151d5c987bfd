//! Experiment runs, rate reports and the files they are persisted to.
//!
//! Every run is a pure function of its [`ExperimentConfig`]: replicas are
//! generated in parallel from their own substreams, collected in replica
//! order and reduced sequentially, so the worker count never changes a digit.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chaos::m4_of_rank_one_chaos;
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{Error, Result};
use crate::fractional::{rho, HurstParam};
use crate::metrics::{
    fit_power_law, mean_jackknife, w1_gaussian_ref_1d_grid, Estimate, SampleSet, SlicedReference,
};
use crate::rng::{Purpose, StreamId, GENERATOR};
use crate::rosenblatt::{
    build_grid_for_list, build_kernel_grid_with, literal_two_norm_sq, GridOptions,
};
use crate::wishart::{
    build_wishart, entries_from_paths, gen_correlated_paths, gen_independent_entries, half_vector, renormalize,
    sample_goe, sample_rosenblatt_diag, RenormMode,
};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// One line of `rates.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub experiment: String,
    pub d: usize,
    pub n: usize,
    pub metric: String,
    pub estimate: f64,
    pub stderr: f64,
    pub replicas: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub metric: String,
    pub ds: Vec<usize>,
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    /// Exponent the slope is compared with, if any.
    pub expected: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub pass: bool,
}

impl Check {
    pub fn within(name: impl Into<String>, value: f64, lower: f64, upper: f64) -> Self {
        Check { name: name.into(), value, lower, upper, pass: value >= lower && value <= upper }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub experiment: String,
    /// The configuration with run-local fields (output directory, workers)
    /// cleared.
    pub config: ExperimentConfig,
    pub config_fingerprint: String,
    pub rows: Vec<RateRow>,
    pub fits: Vec<SlopeFit>,
    pub checks: Vec<Check>,
}

pub const CSV_HEADER: &str = "experiment,d,n,metric,estimate,stderr,replicas,seed";

impl RateReport {
    fn new(cfg: &ExperimentConfig) -> Self {
        let mut config = cfg.clone();
        config.out = None;
        config.workers = 0;
        RateReport {
            experiment: cfg.kind.label().to_string(),
            config,
            config_fingerprint: cfg.fingerprint(),
            rows: Vec::new(),
            fits: Vec::new(),
            checks: Vec::new(),
        }
    }

    fn push(&mut self, d: usize, n: usize, metric: impl Into<String>, est: Estimate, replicas: usize) {
        self.rows.push(RateRow {
            experiment: self.experiment.clone(),
            d,
            n,
            metric: metric.into(),
            estimate: est.estimate,
            stderr: est.stderr,
            replicas,
            seed: self.config.seed,
        });
    }

    fn push_exact(&mut self, d: usize, n: usize, metric: impl Into<String>, value: f64) {
        self.push(d, n, metric, Estimate { estimate: value, stderr: 0.0 }, 0);
    }

    /// `(d, estimate, stderr)` of every row of `metric`, in insertion order.
    pub fn series(&self, metric: &str) -> Vec<(usize, f64, f64)> {
        self.rows.iter().filter(|r| r.metric == metric).map(|r| (r.d, r.estimate, r.stderr)).collect()
    }

    pub fn fit(&self, metric: &str) -> Option<&SlopeFit> {
        self.fits.iter().find(|f| f.metric == metric)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    fn fit_metric(&mut self, metric: &str, expected: Option<f64>) -> Result<()> {
        let s = self.series(metric);
        if s.len() < 3 {
            return Err(Error::Internal(format!("{metric}: {} rows, a fit needs 3", s.len())));
        }
        let ds: Vec<f64> = s.iter().map(|r| r.0 as f64).collect();
        let ys: Vec<f64> = s.iter().map(|r| r.1).collect();
        let se: Vec<f64> = s.iter().map(|r| r.2).collect();
        let f = fit_power_law(&ds, &ys, Some(&se))?;
        if !f.slope.is_finite() {
            return Err(Error::Internal(format!("{metric}: fitted slope is not finite")));
        }
        self.fits.push(SlopeFit {
            metric: metric.to_string(),
            ds: s.iter().map(|r| r.0).collect(),
            slope: f.slope,
            intercept: f.intercept,
            slope_stderr: f.slope_stderr,
            expected,
        });
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.experiment, r.d, r.n, r.metric, r.estimate, r.stderr, r.replicas, r.seed
            ));
        }
        out
    }

    /// SHA-256 over the CSV, the fits and the checks.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_csv().as_bytes());
        h.update(serde_json::to_string(&self.fits).expect("fits serialize").as_bytes());
        h.update(serde_json::to_string(&self.checks).expect("checks serialize").as_bytes());
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RateReport,
    pub stages: Vec<StageTiming>,
}

/// Everything needed to repeat a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub artifact_version: String,
    pub generator: String,
    pub timestamp_unix: u64,
    pub stages: Vec<StageTiming>,
    pub substreams: BTreeMap<String, String>,
    pub config_fingerprint: String,
    pub report_fingerprint: String,
}

#[derive(Default)]
struct Stages(Vec<StageTiming>);

impl Stages {
    fn time<T>(&mut self, stage: impl Into<String>, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.0.push(StageTiming { stage: stage.into(), seconds: start.elapsed().as_secs_f64() });
        out
    }
}

/// Validate `cfg` and run it on a pool of `cfg.workers` threads (0 = all cores).
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Resource(format!("thread pool: {e}")))?;
    pool.install(|| {
        let mut stages = Stages::default();
        let report = match cfg.kind {
            ExperimentKind::Theorem1 => theorem1(cfg, &mut stages)?,
            ExperimentKind::Theorem2 => theorem2(cfg, &mut stages)?,
            ExperimentKind::Moments => moments(cfg, &mut stages)?,
            ExperimentKind::KernelDiag => kernel_diag(cfg, &mut stages)?,
        };
        Ok(RunOutput { report, stages: stages.0 })
    })
}

fn require_kind(cfg: &ExperimentConfig, kind: ExperimentKind) -> Result<()> {
    if cfg.kind != kind {
        return Err(Error::Config(format!("expected a {} config, got {}", kind.label(), cfg.kind.label())));
    }
    Ok(())
}

pub fn run_theorem1(cfg: &ExperimentConfig) -> Result<RunOutput> {
    require_kind(cfg, ExperimentKind::Theorem1)?;
    run(cfg)
}

pub fn run_theorem2(cfg: &ExperimentConfig) -> Result<RunOutput> {
    require_kind(cfg, ExperimentKind::Theorem2)?;
    run(cfg)
}

pub fn run_moments(cfg: &ExperimentConfig) -> Result<RunOutput> {
    require_kind(cfg, ExperimentKind::Moments)?;
    run(cfg)
}

pub fn run_kernel_diag(cfg: &ExperimentConfig) -> Result<RunOutput> {
    require_kind(cfg, ExperimentKind::KernelDiag)?;
    run(cfg)
}

/// Positions of the diagonal and upper off-diagonal entries in a half-vector.
struct HalfLayout {
    n: usize,
}

impl HalfLayout {
    fn len(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    fn diag(&self, i: usize) -> usize {
        i * self.n - i * (i.saturating_sub(1)) / 2
    }

    fn off(&self) -> Vec<usize> {
        (0..self.n).flat_map(|i| (i + 1..self.n).map(move |j| (i, j))).map(|(i, j)| self.diag(i) + j - i).collect()
    }
}

fn order_groups(orders: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut g: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &q) in orders.iter().enumerate() {
        g.entry(q).or_default().push(i);
    }
    g
}

fn bootstrap_indices(seed: u64, b: usize, lane: usize, reps: usize) -> Vec<usize> {
    let mut rng = StreamId::new(seed, Purpose::Bootstrap, b as u64).with_lane(lane as u32).rng();
    (0..reps).map(|_| rng.random_range(0..reps)).collect()
}

fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Replica rows `idx` of a `reps x dims` array.
fn gather(data: &[f64], dims: usize, idx: &[usize]) -> Vec<f64> {
    idx.iter().flat_map(|&r| data[r * dims..(r + 1) * dims].iter().copied()).collect()
}

/// Sliced W1 of the half-vectors against `reference`; the error combines the
/// direction spread with a bootstrap over replicas.
fn sliced_with_error(
    reference: &SlicedReference,
    hv: &[f64],
    dims: usize,
    cfg: &ExperimentConfig,
    lane: usize,
) -> Result<Estimate> {
    let reps = hv.len() / dims;
    let point = reference.distance(&SampleSet::new(dims, hv.to_vec(), "half-vectors")?)?;
    let mut boot = Vec::with_capacity(cfg.bootstrap);
    for b in 0..cfg.bootstrap {
        let idx = bootstrap_indices(cfg.seed, b, lane, reps);
        boot.push(reference.distance(&SampleSet::new(dims, gather(hv, dims, &idx), "resample")?)?.mean());
    }
    let boot_sd = if boot.len() >= 2 { std_dev(&boot) } else { 0.0 };
    Ok(Estimate { estimate: point.mean(), stderr: (point.direction_stderr().powi(2) + boot_sd.powi(2)).sqrt() })
}

fn theorem1(cfg: &ExperimentConfig, stages: &mut Stages) -> Result<RateReport> {
    let n = cfg.n;
    let orders = cfg.row_orders();
    let m4: Vec<f64> = orders.iter().map(|&q| m4_of_rank_one_chaos(q)).collect::<Result<_>>()?;
    let groups = order_groups(&orders);
    let layout = HalfLayout { n };
    let dims = layout.len();
    let off = layout.off();

    let reference = stages.time("reference", || -> Result<SlicedReference> {
        let rows = (0..cfg.resolved_reference_reps() as u64)
            .into_par_iter()
            .map(|r| {
                let mut g = sample_goe(n, 2.0, StreamId::new(cfg.seed, Purpose::Goe, r))?;
                for (i, v) in m4.iter().enumerate() {
                    g[[i, i]] *= (v - 1.0).sqrt();
                }
                half_vector(&g)
            })
            .collect::<Result<Vec<_>>>()?;
        let set = SampleSet::new(dims, rows.concat(), "goe")?;
        SlicedReference::new(&set, cfg.directions, StreamId::new(cfg.seed, Purpose::Directions, 0))
    })?;

    let mut report = RateReport::new(cfg);
    for (lane, &d) in cfg.d_list.iter().enumerate() {
        let hv = stages.time(format!("generate d={d}"), || -> Result<Vec<f64>> {
            let rows = (0..cfg.reps as u64)
                .into_par_iter()
                .map(|r| {
                    let x = gen_independent_entries(&orders, d, StreamId::new(cfg.seed, Purpose::Entries, r))?;
                    half_vector(&renormalize(&build_wishart(&x), RenormMode::Clt)?.w)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(rows.concat())
        })?;
        stages.time(format!("metrics d={d}"), || -> Result<()> {
            // entry-wise W1 values for the replicas in `idx`: one per order
            // group on the diagonal, then the pooled off-diagonal
            let (hv, layout, off) = (&hv, &layout, &off);
            let entry_w1 = |idx: &[usize]| -> Result<Vec<f64>> {
                let mut out = Vec::new();
                for (q, rows) in &groups {
                    let vals: Vec<f64> =
                        idx.iter().flat_map(|&r| rows.iter().map(move |&i| hv[r * dims + layout.diag(i)])).collect();
                    let var = m4_of_rank_one_chaos(*q)? - 1.0;
                    out.push(w1_gaussian_ref_1d_grid(&SampleSet::scalars(vals, "diag")?, 0.0, var, cfg.quantile_grid)?);
                }
                if !off.is_empty() {
                    let vals: Vec<f64> = idx.iter().flat_map(|&r| off.iter().map(move |&k| hv[r * dims + k])).collect();
                    out.push(w1_gaussian_ref_1d_grid(&SampleSet::scalars(vals, "offdiag")?, 0.0, 1.0, cfg.quantile_grid)?);
                }
                Ok(out)
            };
            let all: Vec<usize> = (0..cfg.reps).collect();
            let point = entry_w1(&all)?;
            let boots = (0..cfg.bootstrap)
                .map(|b| entry_w1(&bootstrap_indices(cfg.seed, b, lane, cfg.reps)))
                .collect::<Result<Vec<_>>>()?;
            let names: Vec<String> = groups
                .keys()
                .map(|q| format!("w1_diag_q{q}"))
                .chain((!off.is_empty()).then(|| "w1_offdiag".to_string()))
                .collect();
            for (k, name) in names.iter().enumerate() {
                let column: Vec<f64> = boots.iter().map(|b| b[k]).collect();
                report.push(d, n, name.clone(), Estimate { estimate: point[k], stderr: std_dev(&column) }, cfg.reps);
            }
            let sliced = sliced_with_error(&reference, hv, dims, cfg, lane)?;
            report.push(d, n, "sliced_w1", sliced, cfg.reps);
            Ok(())
        })?;
    }

    for q in groups.keys() {
        let metric = format!("w1_diag_q{q}");
        report.fit_metric(&metric, Some(-0.5))?;
        let slope = report.fit(&metric).expect("just fitted").slope;
        report.checks.push(Check::within(format!("{metric}_slope"), slope, -0.7, -0.3));
    }
    if !off.is_empty() {
        report.fit_metric("w1_offdiag", Some(-0.5))?;
    }
    report.fit_metric("sliced_w1", Some(-0.5))?;
    let s = report.series("sliced_w1");
    let (first, last) = (s[0], s[s.len() - 1]);
    let bound = if last.0 >= 64 * first.0 { 0.5 } else { 1.0 };
    report.checks.push(Check::within("sliced_w1_ratio", last.1 / first.1, 0.0, bound));
    Ok(report)
}

/// Squared-distance exponent of the diagonal and off-diagonal terms.
pub fn theorem2_exponent(h: f64) -> f64 {
    if h < 0.75 {
        1.0 - 2.0 * h
    } else {
        2.0 * h - 2.0
    }
}

/// `E[W̃_ij^2] = c_{1,H}^{-2} d^{-2H} Σ_{k,l<d} ρ_H(k-l)^2` for independent rows.
pub fn offdiag_second_moment_exact(h: HurstParam, c1: f64, d: usize) -> f64 {
    let mut acc = d as f64;
    for k in 1..d {
        acc += 2.0 * (d - k) as f64 * rho(h, k as i64).powi(2);
    }
    acc * (d as f64).powf(-2.0 * h.value()) / (c1 * c1)
}

fn theorem2(cfg: &ExperimentConfig, stages: &mut Stages) -> Result<RateReport> {
    let h = cfg.single_hurst()?;
    let n = cfg.n;
    let d_max = *cfg.d_list.last().expect("validated");
    let options = GridOptions { backend: cfg.backend, memory_cap_bytes: cfg.memory_cap_bytes() };
    let grid = stages.time("grid", || build_grid_for_list(h, &cfg.d_list, cfg.grid_ratio, options))?;
    let c1 = grid.constants().c1_h;
    let layout = HalfLayout { n };
    let dims = layout.len();
    let nd = cfg.d_list.len();

    // per replica and d: (coupled diagonal error, mean squared off-diagonal, half-vector)
    type Replica = Vec<(f64, f64, Vec<f64>)>;
    let replicas: Vec<Replica> = stages.time("paths", || {
        (0..cfg.reps as u64)
            .into_par_iter()
            .map(|r| -> Result<Replica> {
                let stream = StreamId::new(cfg.seed, Purpose::Path, r);
                let paths = gen_correlated_paths(&grid, n, d_max, stream)?;
                let z1: Vec<f64> = paths.iter().map(|p| p.terminal()).collect();
                let mut out = Vec::with_capacity(nd);
                for &d in &cfg.d_list {
                    let x = entries_from_paths(&paths, d, grid.cells(), stream)?;
                    let w = renormalize(&build_wishart(&x), RenormMode::Rosenblatt(h))?.w;
                    let diag = (0..n).map(|i| (w[[i, i]] - z1[i]).powi(2)).sum::<f64>() / n as f64;
                    let pairs = n * (n - 1) / 2;
                    let off = if pairs == 0 {
                        0.0
                    } else {
                        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| w[[i, j]].powi(2)).sum::<f64>()
                            / pairs as f64
                    };
                    out.push((diag, off, half_vector(&w)?));
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let reference = stages.time("reference", || -> Result<SlicedReference> {
        let rows = (0..cfg.resolved_reference_reps() as u64)
            .into_par_iter()
            .map(|r| half_vector(&sample_rosenblatt_diag(n, h, &grid, StreamId::new(cfg.seed, Purpose::Reference, r))?))
            .collect::<Result<Vec<_>>>()?;
        let set = SampleSet::new(dims, rows.concat(), "rosenblatt-diagonal")?;
        SlicedReference::new(&set, cfg.directions, StreamId::new(cfg.seed, Purpose::Directions, 0))
    })?;

    let boundary = (h.value() - 0.75).abs() < 1e-12;
    let mut report = RateReport::new(cfg);
    stages.time("metrics", || -> Result<()> {
        for (k, &d) in cfg.d_list.iter().enumerate() {
            let diag: Vec<f64> = replicas.iter().map(|r| r[k].0).collect();
            report.push(d, n, "diag_coupled_l2", mean_jackknife(&diag)?, cfg.reps);
            if n >= 2 {
                let off: Vec<f64> = replicas.iter().map(|r| r[k].1).collect();
                report.push(d, n, "offdiag_second_moment", mean_jackknife(&off)?, cfg.reps);
                report.push_exact(d, n, "offdiag_second_moment_exact", offdiag_second_moment_exact(h, c1, d));
            }
            let hv: Vec<f64> = replicas.iter().flat_map(|r| r[k].2.iter().copied()).collect();
            report.push(d, n, "sliced_w1", sliced_with_error(&reference, &hv, dims, cfg, k)?, cfg.reps);
            if boundary {
                let df = d as f64;
                report.push_exact(d, n, "reference_curve", df.ln().sqrt() * df.powf(-0.25));
            }
        }
        Ok(())
    })?;

    if !boundary {
        let e = theorem2_exponent(h.value());
        let tol = cfg.slope_tolerance;
        let mut gated = vec!["diag_coupled_l2"];
        if n >= 2 {
            gated.push("offdiag_second_moment");
            report.fit_metric("offdiag_second_moment_exact", Some(e))?;
        }
        for metric in gated {
            report.fit_metric(metric, Some(e))?;
            let slope = report.fit(metric).expect("just fitted").slope;
            report.checks.push(Check::within(format!("{metric}_slope"), slope, e - tol, e + tol));
        }
        report.fit_metric("sliced_w1", None)?;
    }
    Ok(report)
}

fn moments(cfg: &ExperimentConfig, stages: &mut Stages) -> Result<RateReport> {
    let n = cfg.n;
    let orders = cfg.row_orders();
    let groups = order_groups(&orders);
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let mut report = RateReport::new(cfg);
    for &d in &cfg.d_list {
        // per replica: one mean squared diagonal per order group, then the off-diagonal
        let per_rep: Vec<Vec<f64>> = stages.time(format!("generate d={d}"), || {
            (0..cfg.reps as u64)
                .into_par_iter()
                .map(|r| -> Result<Vec<f64>> {
                    let x = gen_independent_entries(&orders, d, StreamId::new(cfg.seed, Purpose::Entries, r))?;
                    let w = renormalize(&build_wishart(&x), RenormMode::Clt)?.w;
                    let mut out: Vec<f64> = groups
                        .values()
                        .map(|rows| rows.iter().map(|&i| w[[i, i]].powi(2)).sum::<f64>() / rows.len() as f64)
                        .collect();
                    if !pairs.is_empty() {
                        out.push(pairs.iter().map(|&(i, j)| w[[i, j]].powi(2)).sum::<f64>() / pairs.len() as f64);
                    }
                    Ok(out)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        for (k, q) in groups.keys().enumerate() {
            let col: Vec<f64> = per_rep.iter().map(|v| v[k]).collect();
            let est = mean_jackknife(&col)?;
            let target = m4_of_rank_one_chaos(*q)? - 1.0;
            report.push(d, n, format!("diag_second_moment_q{q}"), est, cfg.reps);
            report.push_exact(d, n, format!("diag_second_moment_q{q}_target"), target);
            let tol = cfg.moment_tolerance;
            report.checks.push(Check::within(format!("diag_second_moment_q{q}_d{d}"), est.estimate / target, 1.0 - tol, 1.0 + tol));
        }
        if !pairs.is_empty() {
            let col: Vec<f64> = per_rep.iter().map(|v| v[groups.len()]).collect();
            let est = mean_jackknife(&col)?;
            report.push(d, n, "offdiag_second_moment", est, cfg.reps);
            let tol = cfg.moment_tolerance;
            report.checks.push(Check::within(format!("offdiag_second_moment_d{d}"), est.estimate, 1.0 - tol, 1.0 + tol));
        }
    }
    Ok(report)
}

const DIAG_T_POINTS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
const DIAG_ROW_POINTS: [(f64, f64); 4] = [(0.5, 0.25), (0.75, 0.25), (0.9, 0.5), (0.6, 0.1)];
const LITERAL_CELLS: usize = 256;

fn kernel_diag(cfg: &ExperimentConfig, stages: &mut Stages) -> Result<RateReport> {
    let m = cfg.cells;
    let options = GridOptions { backend: cfg.backend, memory_cap_bytes: cfg.memory_cap_bytes() };
    let mut report = RateReport::new(cfg);
    for &hv in &cfg.hurst {
        let h = HurstParam::new(hv)?;
        let tag = format!("h{hv}");
        stages.time(format!("kernel {tag}"), || -> Result<()> {
            let grid = build_kernel_grid_with(h, m, &DIAG_T_POINTS, options)?;
            for t in DIAG_T_POINTS {
                let closed = grid.two_norm_sq(t)?;
                report.push_exact(m, 0, format!("two_norm_sq_closed_{tag}_t{t}"), closed);
                report.checks.push(Check::within(
                    format!("two_norm_sq_closed_{tag}_t{t}"),
                    closed / t.powf(2.0 * hv),
                    0.985,
                    1.015,
                ));
            }
            let rows = grid.factor_rows()?;
            let a1 = grid.a_matrix_from(&rows, 1.0)?;
            let assembled = 2.0 * a1.iter().map(|v| v * v).sum::<f64>();
            let scale = a1.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
            let asym = (0..m)
                .flat_map(|i| (0..i).map(move |j| (i, j)))
                .fold(0.0_f64, |acc, (i, j)| acc.max((a1[[i, j]] - a1[[j, i]]).abs()));
            drop(a1);
            report.push_exact(m, 0, format!("two_norm_sq_{tag}"), assembled);
            report.checks.push(Check::within(format!("two_norm_sq_{tag}"), assembled, 0.99, 1.01));
            let closed = grid.two_norm_sq(1.0)?;
            report.checks.push(Check::within(format!("two_norm_sq_routes_{tag}"), (assembled / closed - 1.0).abs(), 0.0, 1e-9));
            report.checks.push(Check::within(format!("symmetry_{tag}"), asym / scale, 0.0, 1e-12));

            let half = grid.a_matrix_from(&rows, 0.5)?;
            let inside = m / 2;
            let outside = half
                .indexed_iter()
                .filter(|((i, j), _)| *i >= inside || *j >= inside)
                .fold(0.0_f64, |acc, (_, v)| acc.max(v.abs()));
            drop(half);
            report.push_exact(m, 0, format!("support_violation_{tag}"), outside);
            report.checks.push(Check::within(format!("support_{tag}"), outside, 0.0, 0.0));

            let dev = grid.kernel_row_deviation(&rows, &DIAG_ROW_POINTS)?;
            report.push_exact(m, 0, format!("factor_row_deviation_{tag}"), dev);
            report.checks.push(Check::within(format!("factor_row_deviation_{tag}"), dev, 0.0, 0.05));

            let lit_m = m.min(LITERAL_CELLS);
            report.push_exact(lit_m, 0, format!("literal_two_norm_sq_{tag}"), literal_two_norm_sq(h, lit_m)?);
            Ok(())
        })?;
    }
    Ok(report)
}

/// Which substreams a run draws from.
pub fn substream_map(kind: ExperimentKind) -> BTreeMap<String, String> {
    let entries: &[(&str, &str)] = match kind {
        ExperimentKind::Theorem1 => &[
            ("entries", "index = replica, lane = row"),
            ("goe", "index = reference replica"),
            ("directions", "index = direction"),
            ("bootstrap", "index = resample, lane = position in d-list"),
        ],
        ExperimentKind::Theorem2 => &[
            ("path", "index = replica, lane = row; shared by every d"),
            ("reference", "index = reference replica, lane = row"),
            ("directions", "index = direction"),
            ("bootstrap", "index = resample, lane = position in d-list"),
        ],
        ExperimentKind::Moments => &[("entries", "index = replica, lane = row")],
        ExperimentKind::KernelDiag => &[],
    };
    entries.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

pub fn manifest_for(cfg: &ExperimentConfig, output: &RunOutput) -> RunManifest {
    RunManifest {
        config: cfg.clone(),
        artifact_version: ARTIFACT_VERSION.to_string(),
        generator: GENERATOR.to_string(),
        timestamp_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        stages: output.stages.clone(),
        substreams: substream_map(cfg.kind),
        config_fingerprint: cfg.fingerprint(),
        report_fingerprint: output.report.fingerprint(),
    }
}

#[derive(Serialize)]
struct ReportFile<'a> {
    fingerprint: String,
    passed: bool,
    #[serde(flatten)]
    report: &'a RateReport,
}

/// Write `rates.csv`, `report.json` and `manifest.json` into `dir`.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, output: &RunOutput) -> Result<RunManifest> {
    std::fs::create_dir_all(dir)?;
    let report = &output.report;
    std::fs::write(dir.join("rates.csv"), report.to_csv())?;
    let file = ReportFile { fingerprint: report.fingerprint(), passed: report.passed(), report };
    let json = serde_json::to_string_pretty(&file).map_err(|e| Error::Internal(e.to_string()))?;
    std::fs::write(dir.join("report.json"), json + "\n")?;
    let manifest = manifest_for(cfg, output);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Internal(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), json + "\n")?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Re-run the configuration stored in a manifest. Returns the new output and
/// whether its report fingerprint matches the recorded one.
pub fn replay(manifest: &RunManifest) -> Result<(RunOutput, bool)> {
    let out = run(&manifest.config)?;
    let same = out.report.fingerprint() == manifest.report_fingerprint;
    Ok((out, same))
}
