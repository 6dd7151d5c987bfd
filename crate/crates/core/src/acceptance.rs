//! The ten acceptance checks, shared by `chaos-wishart selftest` and the
//! `acceptance` test target.

use std::fmt;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use rayon::prelude::*;

use crate::chaos::{
    contract, sample_i1, sample_i2, sample_rank_one_chaos, symmetrize, tensor_product, uz_independent, ChaosTensor,
    GaussianNoise,
};
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{Error, Result};
use crate::fractional::{fbm_cov, rho, HurstParam};
use crate::harness::{run, theorem2_exponent, write_outputs, RateReport};
use crate::metrics::mean_jackknife;
use crate::rng::{Purpose, StreamId};
use crate::rosenblatt::{
    build_grid_for, build_kernel_grid, decompose_v_at, simulate_path, t4_direct_at, v_statistic_at, GridOptions,
};
use crate::wishart::{gen_correlated_entries, independent_entry_kernel};

/// Master seed of every acceptance run.
pub const SEED: u64 = 42;

pub const TITLES: [&str; 10] = [
    "kernel normalization",
    "Rosenblatt covariance",
    "correlation structure",
    "independent-regime moments",
    "correlated diagonal rate",
    "correlated off-diagonal rate",
    "independent-regime trend",
    "chaos algebra",
    "decomposition identities",
    "determinism across worker counts",
];

#[derive(Debug, Clone)]
pub struct CriterionOutcome {
    pub id: usize,
    pub title: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CriterionOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2} {} {}: {} [{:.1}s]",
            self.id,
            if self.pass { "PASS" } else { "FAIL" },
            self.title,
            self.detail,
            self.seconds
        )
    }
}

/// Run criterion `id` (1..=10). Errors are reported as failures.
pub fn run_criterion(id: usize) -> CriterionOutcome {
    let start = Instant::now();
    let result = match id {
        1 => kernel_normalization(),
        2 => rosenblatt_covariance(),
        3 => correlation_structure(),
        4 => independent_moments(),
        5 => correlated_rate("diag_coupled_l2"),
        6 => correlated_rate("offdiag_second_moment"),
        7 => independent_trend(),
        8 => chaos_algebra(),
        9 => decomposition(),
        10 => determinism(),
        _ => Err(Error::Config(format!("no criterion {id}"))),
    };
    let (pass, detail) = result.unwrap_or_else(|e| (false, format!("error: {e}")));
    CriterionOutcome {
        id,
        title: TITLES.get(id.wrapping_sub(1)).copied().unwrap_or("unknown"),
        pass,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Run the given criteria (all when empty), calling `report` after each.
pub fn run_all(ids: &[usize], mut report: impl FnMut(&CriterionOutcome)) -> Vec<CriterionOutcome> {
    let ids: Vec<usize> = if ids.is_empty() { (1..=10).collect() } else { ids.to_vec() };
    ids.into_iter()
        .map(|id| {
            let o = run_criterion(id);
            report(&o);
            o
        })
        .collect()
}

type Outcome = Result<(bool, String)>;

fn kernel_normalization() -> Outcome {
    let mut cfg = ExperimentConfig::defaults(ExperimentKind::KernelDiag, SEED);
    cfg.cells = 4096;
    cfg.hurst = vec![0.6, 0.75, 0.9];
    let report = run(&cfg)?.report;
    let mut pass = true;
    let mut parts = Vec::new();
    for h in &cfg.hurst {
        let assembled = report.check(&format!("two_norm_sq_h{h}")).ok_or_else(missing)?;
        let closed = report.series(&format!("two_norm_sq_closed_h{h}_t1"))[0].1;
        pass &= assembled.pass && (closed - 1.0).abs() <= 0.01;
        parts.push(format!("H={h}: 2|A1|^2 = {:.6} (closed form {closed:.6})", assembled.value));
    }
    Ok((pass, parts.join("; ")))
}

fn rosenblatt_covariance() -> Outcome {
    const REPS: u64 = 100_000;
    let ts = [0.25, 0.5, 0.75, 1.0];
    let mut pass = true;
    let mut parts = Vec::new();
    for hv in [0.6, 0.9] {
        let h = HurstParam::new(hv)?;
        let grid = build_kernel_grid(h, 2048, &ts)?;
        let per_rep: Vec<[f64; 4]> = (0..REPS)
            .into_par_iter()
            .map(|r| -> Result<[f64; 4]> {
                let p = simulate_path(&grid, 4, StreamId::new(SEED, Purpose::Path, r))?;
                Ok([p.values[1], p.values[2], p.values[3], p.values[4]])
            })
            .collect::<Result<_>>()?;
        let n = REPS as f64;
        let mean: Vec<f64> = (0..4).map(|a| per_rep.iter().map(|z| z[a]).sum::<f64>() / n).collect();
        let mut worst: f64 = 0.0;
        for a in 0..4 {
            for b in a..4 {
                let cov = per_rep.iter().map(|z| (z[a] - mean[a]) * (z[b] - mean[b])).sum::<f64>() / (n - 1.0);
                let want = fbm_cov(h, ts[a], ts[b])?;
                worst = worst.max((cov / want - 1.0).abs());
            }
        }
        pass &= worst <= 0.03;
        parts.push(format!("H={hv}: worst relative error {worst:.4}"));
    }
    Ok((pass, parts.join("; ")))
}

fn correlation_structure() -> Outcome {
    const REPS: u64 = 2000;
    let (n, d, lags) = (4usize, 128usize, 5usize);
    let h = HurstParam::new(0.75)?;
    let grid = build_grid_for(h, d, 8, GridOptions::default())?;
    // per replica: same-row lag products for k = 0..=lags, then the cross-row product
    let per_rep: Vec<Vec<f64>> = (0..REPS)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let x = gen_correlated_entries(h, n, d, &grid, StreamId::new(SEED, Purpose::Path, r))?.entries;
            let mut out = Vec::with_capacity(lags + 2);
            for k in 0..=lags {
                let s: f64 = (0..n).flat_map(|i| (0..d - k).map(move |j| (i, j))).map(|(i, j)| x[[i, j]] * x[[i, j + k]]).sum();
                out.push(s / (n * (d - k)) as f64);
            }
            let cross: f64 = (0..n)
                .flat_map(|i| (i + 1..n).map(move |l| (i, l)))
                .flat_map(|(i, l)| (0..d).map(move |j| (i, l, j)))
                .map(|(i, l, j)| x[[i, j]] * x[[l, j]])
                .sum();
            out.push(cross / (n * (n - 1) / 2 * d) as f64);
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let col = |k: usize| per_rep.iter().map(|v| v[k]).collect::<Vec<f64>>();
    let var = mean_jackknife(&col(0))?.estimate;
    let mut worst: f64 = 0.0;
    for k in 1..=lags {
        let corr = mean_jackknife(&col(k))?.estimate / var;
        worst = worst.max((corr - rho(h, k as i64)).abs());
    }
    let cross = mean_jackknife(&col(lags + 1))?;
    let pass = worst <= 0.02 && cross.estimate.abs() <= 5.0 * cross.stderr;
    Ok((
        pass,
        format!(
            "max |lag corr - rho| = {worst:.4} over k<=5; cross-row {:.5} (stderr {:.5})",
            cross.estimate, cross.stderr
        ),
    ))
}

fn independent_moments() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for q in [1, 2] {
        let mut cfg = ExperimentConfig::defaults(ExperimentKind::Moments, SEED);
        cfg.n = 2;
        cfg.d_list = vec![256];
        cfg.orders = vec![q];
        cfg.reps = 50_000;
        cfg.workers = 0;
        let report = run(&cfg)?.report;
        pass &= report.passed();
        let diag = report.series(&format!("diag_second_moment_q{q}"))[0];
        let target = report.series(&format!("diag_second_moment_q{q}_target"))[0].1;
        let off = report.series("offdiag_second_moment")[0];
        parts.push(format!("q={q}: diag {:.4} (target {target:.4}), off-diag {:.4}", diag.1, off.1));
    }
    Ok((pass, parts.join("; ")))
}

fn theorem2_config(h: f64, workers: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::defaults(ExperimentKind::Theorem2, SEED);
    cfg.hurst = vec![h];
    cfg.n = 2;
    cfg.d_list = vec![16, 32, 64, 128, 256, 512];
    cfg.reps = 2000;
    cfg.workers = workers;
    cfg
}

struct Theorem2Runs {
    reports: Vec<(f64, RateReport)>,
    csv_h06: Vec<u8>,
}

fn scratch_dir(tag: &str) -> PathBuf {
    std::env::temp_dir().join(format!("chaos-wishart-acceptance-{}-{tag}", std::process::id()))
}

fn theorem2_runs() -> std::result::Result<&'static Theorem2Runs, String> {
    static RUNS: OnceLock<std::result::Result<Theorem2Runs, String>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let mut reports = Vec::new();
        let mut csv_h06 = Vec::new();
        for h in [0.6, 0.9] {
            let cfg = theorem2_config(h, 1);
            let out = run(&cfg).map_err(|e| e.to_string())?;
            if h == 0.6 {
                let dir = scratch_dir("workers1");
                write_outputs(&dir, &cfg, &out).map_err(|e| e.to_string())?;
                csv_h06 = std::fs::read(dir.join("rates.csv")).map_err(|e| e.to_string())?;
                let _ = std::fs::remove_dir_all(&dir);
            }
            reports.push((h, out.report));
        }
        Ok(Theorem2Runs { reports, csv_h06 })
    })
    .as_ref()
    .map_err(Clone::clone)
}

fn correlated_rate(metric: &str) -> Outcome {
    let runs = theorem2_runs().map_err(Error::Internal)?;
    let mut pass = true;
    let mut parts = Vec::new();
    for (h, report) in &runs.reports {
        let fit = report.fit(metric).ok_or_else(missing)?;
        let e = theorem2_exponent(*h);
        pass &= (fit.slope - e).abs() <= 0.15;
        parts.push(format!("H={h}: slope {:.3} ± {:.3} (target {e:.1} ± 0.15)", fit.slope, fit.slope_stderr));
    }
    Ok((pass, parts.join("; ")))
}

fn determinism() -> Outcome {
    let runs = theorem2_runs().map_err(Error::Internal)?;
    let cfg = theorem2_config(0.6, 8);
    let out = run(&cfg)?;
    let dir = scratch_dir("workers8");
    write_outputs(&dir, &cfg, &out)?;
    let csv = std::fs::read(dir.join("rates.csv"))?;
    let _ = std::fs::remove_dir_all(&dir);
    let same = csv == runs.csv_h06;
    Ok((same, format!("rates.csv with 1 and 8 workers: {} ({} bytes)", if same { "identical" } else { "DIFFERENT" }, csv.len())))
}

fn independent_trend() -> Outcome {
    let mut cfg = ExperimentConfig::defaults(ExperimentKind::Theorem1, SEED);
    cfg.n = 3;
    cfg.orders = vec![1];
    cfg.d_list = vec![64, 128, 256, 512, 1024, 2048, 4096];
    cfg.reps = 5000;
    cfg.directions = 128;
    cfg.workers = 0;
    let report = run(&cfg)?.report;
    let sliced = report.series("sliced_w1");
    let ratio = sliced[sliced.len() - 1].1 / sliced[0].1;
    let fit = report.fit("w1_diag_q1").ok_or_else(missing)?;
    let pass = ratio < 0.5 && (-0.7..=-0.3).contains(&fit.slope);
    Ok((
        pass,
        format!(
            "sliced W1 {:.4} -> {:.4} (ratio {ratio:.3}, need < 0.5); diagonal W1 slope {:.3} ± {:.3} (need [-0.7, -0.3])",
            sliced[0].1,
            sliced[sliced.len() - 1].1,
            fit.slope,
            fit.slope_stderr
        ),
    ))
}

fn missing() -> Error {
    Error::Internal("expected report entry is missing".into())
}

fn random_symmetric(dim: usize, order: usize, stream: StreamId) -> Result<ChaosTensor> {
    let raw = ChaosTensor::from_coeffs(order, dim, stream.normals(dim.pow(order as u32)))?;
    Ok(symmetrize(&raw))
}

fn unit(v: &ChaosTensor) -> Result<ChaosTensor> {
    let n = v.norm();
    ChaosTensor::vector(&v.coeffs().iter().map(|x| x / n).collect::<Vec<_>>())
}

fn chaos_algebra() -> Outcome {
    const REPS: u64 = 100_000;
    const DIM: usize = 6;
    let base = StreamId::new(SEED, Purpose::Test, 0);
    let h = random_symmetric(DIM, 1, base.with_lane(1))?;
    let g = random_symmetric(DIM, 1, base.with_lane(2))?;
    let a = random_symmetric(DIM, 2, base.with_lane(3))?;
    let b = random_symmetric(DIM, 2, base.with_lane(4))?;
    let (hu, gu) = (unit(&h)?, unit(&g)?);
    let hg = symmetrize(&tensor_product(&h, &g)?);
    let ip_hg = h.inner(&g);
    let ip_unit = hu.inner(&gu);

    // moments: (name, target, per-replica products)
    let names = ["E[I1 I1]", "E[I2 I2]", "E[I3 I3]", "E[I1 I2]", "E[I2 I3]", "E[I1 I3]"];
    let targets = [ip_hg, 2.0 * a.inner(&b), 6.0 * ip_unit.powi(3), 0.0, 0.0, 0.0];
    let per_rep: Vec<(Vec<f64>, f64)> = (0..REPS)
        .into_par_iter()
        .map(|r| -> Result<(Vec<f64>, f64)> {
            let noise = GaussianNoise::draw(DIM, base.with_index(r));
            let (i1h, i1g) = (sample_i1(&h, &noise)?, sample_i1(&g, &noise)?);
            let (i2a, i2b) = (sample_i2(&a, &noise)?, sample_i2(&b, &noise)?);
            let (i3h, i3g) = (sample_rank_one_chaos(3, &hu, &noise)?, sample_rank_one_chaos(3, &gu, &noise)?);
            // pathwise product formulas
            let mut worst = (i1h * i1g - (sample_i2(&hg, &noise)? + ip_hg)).abs();
            let x = sample_i1(&hu, &noise)?;
            let mut prev = 1.0;
            let mut cur = x;
            for q in 1..=6 {
                let next = sample_rank_one_chaos(q + 1, &hu, &noise)?;
                worst = worst.max((x * cur - (next + q as f64 * prev)).abs() / (1.0 + next.abs()));
                prev = cur;
                cur = next;
            }
            Ok((vec![i1h * i1g, i2a * i2b, i3h * i3g, i1h * i2a, i2a * i3h, i1h * i3h], worst))
        })
        .collect::<Result<_>>()?;
    let mut pass = true;
    let mut worst_z: f64 = 0.0;
    for (k, (name, target)) in names.iter().zip(targets).enumerate() {
        let col: Vec<f64> = per_rep.iter().map(|r| r.0[k]).collect();
        let est = mean_jackknife(&col)?;
        let z = (est.estimate - target).abs() / est.stderr;
        if z > 5.0 {
            pass = false;
            log::warn!("{name}: {} vs {target} ({z:.1} stderr)", est.estimate);
        }
        worst_z = worst_z.max(z);
    }
    let product_err = per_rep.iter().fold(0.0_f64, |m, r| m.max(r.1));
    pass &= product_err <= 1e-10;

    // contraction bound on random pairs
    let mut bound_ok = true;
    for k in 0..60u64 {
        let s = StreamId::new(SEED, Purpose::Test, 1_000 + k);
        let (p, q) = (1 + (k % 3) as usize, 1 + ((k / 3) % 3) as usize);
        let f = random_symmetric(4, p, s.with_lane(0))?;
        let g = random_symmetric(4, q, s.with_lane(1))?;
        for r in 0..=p.min(q) {
            bound_ok &= contract(&f, &g, r)?.norm() <= f.norm() * g.norm() * (1.0 + 1e-12);
        }
    }
    pass &= bound_ok;

    // disjoint blocks contract to exactly zero
    let orders = [2, 3];
    let (d, block) = (3, 2);
    let kernels: Vec<ChaosTensor> = (0..2)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| independent_entry_kernel(&orders, d, block, i, j))
        .collect::<Result<_>>()?;
    let mut uz_ok = true;
    for (x, f) in kernels.iter().enumerate() {
        for g in kernels.iter().skip(x + 1) {
            uz_ok &= uz_independent(f, g, 0.0)?;
        }
    }
    pass &= uz_ok;
    Ok((
        pass,
        format!(
            "isometry/orthogonality worst {worst_z:.2} stderr; product formula error {product_err:.1e}; contraction bound {}; disjoint-block contractions {}",
            if bound_ok { "holds" } else { "violated" },
            if uz_ok { "exactly zero" } else { "NONZERO" }
        ),
    ))
}

fn decomposition() -> Outcome {
    const REPS: u64 = 100_000;
    let d = 32;
    let mut pass = true;
    let mut parts = Vec::new();
    for hv in [0.6, 0.9] {
        let h = HurstParam::new(hv)?;
        let grid = build_grid_for(h, d, 8, GridOptions::default())?;
        let per_rep: Vec<(f64, f64)> = (0..REPS)
            .into_par_iter()
            .map(|r| -> Result<(f64, f64)> {
                let p = simulate_path(&grid, d, StreamId::new(SEED, Purpose::Path, r))?;
                let v = v_statistic_at(&p, d)?;
                let (t2, _) = decompose_v_at(&p, &grid, d)?;
                let t4 = t4_direct_at(&p, &grid, d)?;
                Ok(((t2 + t4 - v).abs(), t2 * t4))
            })
            .collect::<Result<_>>()?;
        let worst = per_rep.iter().fold(0.0_f64, |m, r| m.max(r.0));
        let prod: Vec<f64> = per_rep.iter().map(|r| r.1).collect();
        let cross = mean_jackknife(&prod)?;
        pass &= worst <= 1e-10 && cross.estimate.abs() <= 5.0 * cross.stderr;
        parts.push(format!(
            "H={hv}: max |T2+T4-V| {worst:.1e}, E[T2 T4] {:.5} (stderr {:.5})",
            cross.estimate, cross.stderr
        ));
    }
    Ok((pass, parts.join("; ")))
}
