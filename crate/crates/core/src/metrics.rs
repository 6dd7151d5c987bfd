//! Empirical distances, moment estimators and log-log rate fits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::rng::StreamId;

/// Replicas of a scalar or vector quantity, row-major `replicas x dims`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    dims: usize,
    data: Vec<f64>,
    pub label: String,
    pub seed: Option<u64>,
}

impl SampleSet {
    pub fn new(dims: usize, data: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if dims == 0 || data.len() % dims != 0 {
            return domain("data length must be a positive multiple of dims");
        }
        if data.len() / dims < 2 {
            return domain("a sample set needs at least two replicas");
        }
        if data.iter().any(|v| !v.is_finite()) {
            return domain("samples must be finite");
        }
        Ok(SampleSet { dims, data, label: label.into(), seed: None })
    }

    pub fn scalars(data: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        Self::new(1, data, label)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn replicas(&self) -> usize {
        self.data.len() / self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dims..(r + 1) * self.dims]
    }

    /// Projection of every replica on `dir`.
    pub fn project(&self, dir: &[f64]) -> Vec<f64> {
        self.data.chunks_exact(self.dims).map(|r| r.iter().zip(dir).map(|(a, b)| a * b).sum()).collect()
    }

    fn require_scalar(&self) -> Result<()> {
        if self.dims != 1 {
            return domain(format!("expected a one-dimensional sample set, got {} dims", self.dims));
        }
        Ok(())
    }
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// W1 between two sorted empirical laws.
pub fn w1_sorted(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return domain("W1 needs nonempty samples");
    }
    if a.len() == b.len() {
        return Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64);
    }
    // ∫ |F_a - F_b| dx over the merged support
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut x = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - x);
        x = next;
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
    }
    Ok(total)
}

/// Exact W1 between two empirical laws on the line.
pub fn w1_exact_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    w1_sorted(&sorted(a), &sorted(b))
}

pub fn w1_exact_1d(a: &SampleSet, b: &SampleSet) -> Result<f64> {
    a.require_scalar()?;
    b.require_scalar()?;
    w1_exact_slices(a.data(), b.data())
}

/// Default size of the quantile grid in [`w1_gaussian_ref_1d`].
pub const QUANTILE_GRID: usize = 4096;

/// Standard normal quantile: Acklam's rational approximation followed by one
/// Halley step against `erfc`.
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [7.784_695_709_041_462e-3, 3.224_671_290_700_398e-1, 2.445_134_137_142_996, 3.754_408_661_907_416];
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let low = 0.02425;
    let x = if p < low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5]) / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5]) / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    x - u / (1.0 + x * u / 2.0)
}

pub fn w1_gaussian_ref_1d(a: &SampleSet, mean: f64, var: f64) -> Result<f64> {
    w1_gaussian_ref_1d_grid(a, mean, var, QUANTILE_GRID)
}

/// Mean of `|Q_emp(p) - Q_N(p)|` over the grid `p_k = (k + 1/2)/grid`, with
/// `p` clipped to `[1/(2N), 1 - 1/(2N)]`.
pub fn w1_gaussian_ref_1d_grid(a: &SampleSet, mean: f64, var: f64, grid: usize) -> Result<f64> {
    a.require_scalar()?;
    if !(var > 0.0) {
        return domain("reference variance must be positive");
    }
    if grid == 0 {
        return domain("quantile grid must be nonempty");
    }
    let s = sorted(a.data());
    let n = s.len();
    let clip = 0.5 / n as f64;
    let sd = var.sqrt();
    let total: f64 = (0..grid)
        .map(|k| {
            let p = ((k as f64 + 0.5) / grid as f64).clamp(clip, 1.0 - clip);
            let emp = s[((p * n as f64) as usize).min(n - 1)];
            (emp - (mean + sd * normal_quantile(p))).abs()
        })
        .sum();
    Ok(total / grid as f64)
}

/// Uniform direction on the unit sphere in `dims` dimensions.
pub fn random_direction(dims: usize, stream: StreamId) -> Vec<f64> {
    loop {
        let v = stream.normals(dims);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

/// Per-direction results of a sliced W1 computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlicedW1 {
    pub per_direction: Vec<f64>,
}

impl SlicedW1 {
    pub fn mean(&self) -> f64 {
        self.per_direction.iter().sum::<f64>() / self.per_direction.len() as f64
    }

    /// Monte Carlo error from the finite number of directions.
    pub fn direction_stderr(&self) -> f64 {
        let n = self.per_direction.len() as f64;
        if n < 2.0 {
            return 0.0;
        }
        let m = self.mean();
        let var = self.per_direction.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    }
}

/// Directions `k = 0..n_dirs` come from index `k` of `stream`.
pub fn sliced_w1(a: &SampleSet, b: &SampleSet, n_dirs: usize, stream: StreamId) -> Result<f64> {
    Ok(sliced_w1_detailed(a, b, n_dirs, stream)?.mean())
}

pub fn sliced_w1_detailed(a: &SampleSet, b: &SampleSet, n_dirs: usize, stream: StreamId) -> Result<SlicedW1> {
    SlicedReference::new(b, n_dirs, stream)?.distance(a)
}

/// A reference sample with its projections pre-sorted along fixed directions,
/// so many samples can be compared against it cheaply.
#[derive(Debug, Clone)]
pub struct SlicedReference {
    dims: usize,
    directions: Vec<Vec<f64>>,
    projections: Vec<Vec<f64>>,
}

impl SlicedReference {
    pub fn new(reference: &SampleSet, n_dirs: usize, stream: StreamId) -> Result<Self> {
        if n_dirs == 0 {
            return domain("need at least one direction");
        }
        let dims = reference.dims();
        let directions: Vec<Vec<f64>> = (0..n_dirs as u64).map(|k| random_direction(dims, stream.with_index(k))).collect();
        let projections = directions.par_iter().map(|dir| sorted(&reference.project(dir))).collect();
        Ok(SlicedReference { dims, directions, projections })
    }

    pub fn directions(&self) -> &[Vec<f64>] {
        &self.directions
    }

    pub fn distance(&self, a: &SampleSet) -> Result<SlicedW1> {
        if a.dims() != self.dims {
            return domain(format!("dimension mismatch: {} vs {}", a.dims(), self.dims));
        }
        let per_direction = self
            .directions
            .par_iter()
            .zip(&self.projections)
            .map(|(dir, reference)| w1_sorted(&sorted(&a.project(dir)), reference))
            .collect::<Result<Vec<_>>>()?;
        Ok(SlicedW1 { per_direction })
    }
}

/// Point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub stderr: f64,
}

/// Mean with the jackknife standard error, computed around the first value so
/// constant input gives an exact answer.
pub fn mean_jackknife(x: &[f64]) -> Result<Estimate> {
    let n = x.len();
    if n < 2 {
        return domain("need at least two values");
    }
    let shift = x[0];
    let mean_dev = x.iter().map(|v| v - shift).sum::<f64>() / n as f64;
    let estimate = shift + mean_dev;
    // leave-one-out means deviate from their average by (mean - x_i)/(n-1)
    let nf = n as f64;
    let ss: f64 = x.iter().map(|v| ((v - shift) - mean_dev).powi(2)).sum::<f64>() / ((nf - 1.0) * (nf - 1.0));
    Ok(Estimate { estimate, stderr: ((nf - 1.0) / nf * ss).sqrt() })
}

/// `p`-th raw moment with jackknife standard error.
pub fn moment_hat(a: &SampleSet, p: u32) -> Result<Estimate> {
    a.require_scalar()?;
    if p == 0 {
        return domain("moment order must be positive");
    }
    let powers: Vec<f64> = a.data().iter().map(|v| v.powi(p as i32)).collect();
    mean_jackknife(&powers)
}

/// Result of a log-log fit `log y = intercept + slope log d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
}

/// Weighted least squares of `log y` on `log d` with weights `(y/se)^2`
/// (inverse relative variance). Without usable standard errors the fit is
/// unweighted. The slope is computed from `log(y_k/y_0)` so rescaling `ys` by
/// a power of two leaves it bit-identical.
pub fn fit_power_law(ds: &[f64], ys: &[f64], stderrs: Option<&[f64]>) -> Result<PowerLawFit> {
    let n = ds.len();
    if n < 3 || ys.len() != n {
        return domain("a rate fit needs at least three matching points");
    }
    if ds.iter().any(|&d| !(d > 0.0)) || ys.iter().any(|&y| !(y > 0.0 && y.is_finite())) {
        return domain("rate fit needs positive d and y");
    }
    let weights: Vec<f64> = match stderrs {
        Some(se) if se.len() == n && se.iter().all(|&s| s > 0.0 && s.is_finite()) => {
            ys.iter().zip(se).map(|(y, s)| (y / s).powi(2)).collect()
        }
        Some(se) if se.len() != n => return domain("one standard error per point expected"),
        _ => vec![1.0; n],
    };
    let x: Vec<f64> = ds.iter().map(|d| d.ln()).collect();
    let y: Vec<f64> = ys.iter().map(|v| (v / ys[0]).ln()).collect();
    let sw: f64 = weights.iter().sum();
    let xm = weights.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() / sw;
    let ym = weights.iter().zip(&y).map(|(w, v)| w * v).sum::<f64>() / sw;
    let sxx: f64 = weights.iter().zip(&x).map(|(w, v)| w * (v - xm).powi(2)).sum();
    let sxy: f64 = weights.iter().zip(x.iter().zip(&y)).map(|(w, (a, b))| w * (a - xm) * (b - ym)).sum();
    if !(sxx > 0.0) {
        return domain("rate fit needs at least two distinct d");
    }
    let slope = sxy / sxx;
    let intercept_rel = ym - slope * xm;
    let rss: f64 = weights
        .iter()
        .zip(x.iter().zip(&y))
        .map(|(w, (a, b))| w * (b - intercept_rel - slope * a).powi(2))
        .sum();
    let sigma2 = rss / (n as f64 - 2.0);
    Ok(PowerLawFit { slope, intercept: ys[0].ln() + intercept_rel, slope_stderr: (sigma2 / sxx).sqrt() })
}

/// Hilbert–Schmidt (Frobenius) norm.
pub fn hs_norm(w: &ndarray::Array2<f64>) -> f64 {
    w.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaos::unit_rank_one_value;
    use crate::rng::Purpose;
    use approx::assert_relative_eq;

    fn set(v: &[f64]) -> SampleSet {
        SampleSet::scalars(v.to_vec(), "t").unwrap()
    }

    fn normals(n: usize, i: u64) -> Vec<f64> {
        StreamId::new(23, Purpose::Test, i).normals(n)
    }

    #[test]
    fn w1_examples() {
        let a = set(&[0.3, -1.0, 2.5]);
        assert_eq!(w1_exact_1d(&a, &a).unwrap(), 0.0);
        let b = set(&[1.3, 0.0, 3.5]);
        assert_relative_eq!(w1_exact_1d(&a, &b).unwrap(), 1.0, max_relative = 1e-15);
        assert_eq!(w1_exact_1d(&set(&[0.0, 1.0]), &set(&[0.0, 3.0])).unwrap(), 1.0);
        assert!(w1_exact_slices(&[], &[1.0]).is_err());
    }

    #[test]
    fn w1_unequal_sizes_match_quantile_integral() {
        // {0, 1} vs {0, 0.5, 3}: integrate |Q_a - Q_b| over p piecewise.
        let a = [0.0, 1.0];
        let b = [0.0, 0.5, 3.0];
        // p in (0,1/3): 0; (1/3,1/2): |0-0.5|; (1/2,2/3): |1-0.5|; (2/3,1): |1-3|
        let expect = 0.5 / 6.0 + 0.5 / 6.0 + 2.0 / 3.0;
        assert_relative_eq!(w1_exact_slices(&a, &b).unwrap(), expect, max_relative = 1e-14);
        // duplicated sample is the same law
        let c = [0.0, 0.0, 1.0, 1.0];
        assert_relative_eq!(w1_exact_slices(&a, &c).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn normal_quantile_accuracy() {
        for p in [1e-10, 1e-4, 0.02, 0.3, 0.5, 0.77, 0.999] {
            let x = normal_quantile(p);
            let back = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
            assert_relative_eq!(back, p, max_relative = 1e-12);
        }
        assert_eq!(normal_quantile(0.5), 0.0);
    }

    #[test]
    fn gaussian_reference_examples() {
        let x = SampleSet::scalars(normals(1_000_000, 0), "z").unwrap();
        assert!(w1_gaussian_ref_1d(&x, 0.0, 1.0).unwrap() < 0.01);
        let shifted = SampleSet::scalars(x.data().iter().map(|v| v + 5.0).collect(), "z").unwrap();
        let w = w1_gaussian_ref_1d(&shifted, 0.0, 1.0).unwrap();
        assert!((w / 5.0 - 1.0).abs() < 0.02);
        assert!(w1_gaussian_ref_1d(&x, 0.0, 0.0).is_err());
        assert!(w1_gaussian_ref_1d_grid(&x, 0.0, 1.0, 0).is_err());
    }

    #[test]
    fn sliced_examples() {
        let data = normals(3 * 400, 1);
        let a = SampleSet::new(3, data.clone(), "a").unwrap();
        let stream = StreamId::new(1, Purpose::Directions, 0);
        assert_eq!(sliced_w1(&a, &a, 64, stream).unwrap(), 0.0);
        let shifted: Vec<f64> = data.chunks(3).flat_map(|r| [r[0] + 1.0, r[1], r[2]]).collect();
        let b = SampleSet::new(3, shifted, "b").unwrap();
        let s = sliced_w1(&a, &b, 4000, stream).unwrap();
        assert!((s / 0.5 - 1.0).abs() < 0.05, "sliced shift {s}");
        let c = SampleSet::new(2, vec![0.0; 8], "c").unwrap();
        assert!(sliced_w1(&a, &c, 4, stream).is_err());
    }

    #[test]
    fn moment_examples() {
        let c = set(&[0.1; 50]);
        let m = moment_hat(&c, 2).unwrap();
        assert_eq!(m.estimate, 0.1f64 * 0.1);
        assert_eq!(m.stderr, 0.0);
        let z = SampleSet::scalars(normals(1_000_000, 2), "z").unwrap();
        let m = moment_hat(&z, 4).unwrap();
        assert!((m.estimate - 3.0).abs() < 3.0 * m.stderr, "{m:?}");
        let q2 = SampleSet::scalars(normals(1_000_000, 3).iter().map(|&x| unit_rank_one_value(2, x)).collect(), "q2").unwrap();
        let m = moment_hat(&q2, 4).unwrap();
        assert!((m.estimate - 15.0).abs() < 3.0 * m.stderr, "{m:?}");
    }

    #[test]
    fn jackknife_matches_brute_force() {
        let x = normals(37, 4);
        let est = mean_jackknife(&x).unwrap();
        let n = x.len() as f64;
        let loo: Vec<f64> = (0..x.len())
            .map(|i| x.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v).sum::<f64>() / (n - 1.0))
            .collect();
        let bar = loo.iter().sum::<f64>() / n;
        let se = ((n - 1.0) / n * loo.iter().map(|v| (v - bar).powi(2)).sum::<f64>()).sqrt();
        assert_relative_eq!(est.stderr, se, max_relative = 1e-10);
    }

    #[test]
    fn power_law_examples() {
        let ds = [16.0, 32.0, 64.0, 128.0, 256.0];
        let ys: Vec<f64> = ds.iter().map(|d: &f64| 7.0 * d.powf(-0.3)).collect();
        let fit = fit_power_law(&ds, &ys, None).unwrap();
        assert!((fit.slope + 0.3).abs() < 1e-10);
        assert_relative_eq!(fit.intercept, 7f64.ln(), max_relative = 1e-10);
        let flat = fit_power_law(&ds, &[2.0; 5], None).unwrap();
        assert_eq!(flat.slope, 0.0);
        assert!(fit_power_law(&ds, &[1.0, 0.0, 1.0, 1.0, 1.0], None).is_err());
        assert!(fit_power_law(&ds[..2], &ys[..2], None).is_err());
    }

    #[test]
    fn noisy_power_law_recovers_exponent() {
        let ds: Vec<f64> = (4..=12).map(|k| 2f64.powi(k)).collect();
        let noise = normals(ds.len(), 5);
        let ys: Vec<f64> = ds.iter().zip(&noise).map(|(d, e)| 3.0 * d.powf(-0.5) * (1.0 + 0.05 * e)).collect();
        let se: Vec<f64> = ys.iter().map(|y| 0.05 * y).collect();
        let fit = fit_power_law(&ds, &ys, Some(&se)).unwrap();
        assert!((fit.slope + 0.5).abs() < 3.0 * fit.slope_stderr, "{fit:?}");
    }
}
