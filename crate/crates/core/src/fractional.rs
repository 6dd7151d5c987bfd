//! Fractional Gaussian noise: the correlation `rho_H`, the fBm covariance and
//! an exact sampler for stationary Gaussian sequences.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::linalg::cholesky_lower;
use crate::rng::StreamId;

/// Hurst index in `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct HurstParam(f64);

impl HurstParam {
    pub fn new(h: f64) -> Result<Self> {
        if h > 0.0 && h < 1.0 {
            Ok(HurstParam(h))
        } else {
            domain(format!("Hurst index {h} outside (0, 1)"))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Whether a Rosenblatt process with this index exists (`H > 1/2`).
    pub fn is_rosenblatt_valid(self) -> bool {
        self.0 > 0.5
    }

    pub fn require_rosenblatt(self) -> Result<Self> {
        if self.is_rosenblatt_valid() {
            Ok(self)
        } else {
            domain(format!("Hurst index {} must exceed 1/2", self.0))
        }
    }
}

impl TryFrom<f64> for HurstParam {
    type Error = Error;
    fn try_from(h: f64) -> Result<Self> {
        HurstParam::new(h)
    }
}

impl From<HurstParam> for f64 {
    fn from(h: HurstParam) -> f64 {
        h.0
    }
}

/// `rho_H(k) = (|k+1|^{2H} + |k-1|^{2H} - 2|k|^{2H}) / 2`.
pub fn rho(h: HurstParam, k: i64) -> f64 {
    let k = k.unsigned_abs();
    let two_h = 2.0 * h.0;
    if k == 0 {
        return 1.0;
    }
    if k < 64 {
        let kf = k as f64;
        return 0.5 * ((kf + 1.0).powf(two_h) + (kf - 1.0).powf(two_h) - 2.0 * kf.powf(two_h));
    }
    // k^{2H} sum_j binom(2H, 2j) k^{-2j}; avoids cancellation at large lags
    let kf = k as f64;
    let x2 = 1.0 / (kf * kf);
    let (mut coef, mut pow, mut sum) = (1.0, 1.0, 0.0);
    for j in 1..40 {
        let n = (2 * j) as f64;
        coef *= (two_h - n + 2.0) * (two_h - n + 1.0) / ((n - 1.0) * n);
        pow *= x2;
        let term = coef * pow;
        sum += term;
        if term.abs() <= 1e-18 * sum.abs() {
            break;
        }
    }
    kf.powf(two_h) * sum
}

/// `rho_H(0..=n)`.
pub fn rho_table(h: HurstParam, n: usize) -> Vec<f64> {
    (0..=n as i64).map(|k| rho(h, k)).collect()
}

/// Covariance of fractional Brownian motion.
pub fn fbm_cov(h: HurstParam, s: f64, t: f64) -> Result<f64> {
    if !(s >= 0.0 && t >= 0.0) {
        return domain("fBm covariance needs nonnegative times");
    }
    let two_h = 2.0 * h.0;
    Ok(0.5 * (t.powf(two_h) + s.powf(two_h) - (t - s).abs().powf(two_h)))
}

/// Eigenvalues below this are treated as a failed embedding.
const EMBEDDING_TOL: f64 = -1e-9;

enum Method {
    Circulant { sqrt_eig: Vec<f64>, fft: Arc<dyn Fft<f64>> },
    Cholesky { factor: Vec<f64> },
}

/// Exact sampler for a stationary Gaussian sequence of length `n` with a
/// given autocovariance. Uses circulant embedding of size `2n`; falls back to a
/// dense Cholesky factor when the embedding has a negative eigenvalue.
pub struct StationarySampler {
    len: usize,
    method: Method,
}

impl std::fmt::Debug for StationarySampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StationarySampler")
            .field("len", &self.len)
            .field("circulant", &self.is_circulant())
            .finish()
    }
}

impl StationarySampler {
    /// `autocov` holds `r(0), ..., r(n)`; the sampler produces `n` values.
    pub fn new(autocov: &[f64]) -> Result<Self> {
        if autocov.len() < 2 {
            return domain("need r(0..=n) with n >= 1");
        }
        let n = autocov.len() - 1;
        let big = 2 * n;
        let mut buf: Vec<Complex<f64>> = (0..big)
            .map(|j| Complex::new(autocov[if j <= n { j } else { big - j }], 0.0))
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(big);
        fft.process(&mut buf);
        let min = buf.iter().map(|c| c.re).fold(f64::INFINITY, f64::min);
        if min >= EMBEDDING_TOL {
            let sqrt_eig = buf.iter().map(|c| (c.re.max(0.0) / big as f64).sqrt()).collect();
            return Ok(StationarySampler { len: n, method: Method::Circulant { sqrt_eig, fft } });
        }
        log::warn!("circulant embedding has eigenvalue {min:e}; using Cholesky");
        Self::cholesky(&autocov[..n])
    }

    /// Dense Cholesky sampler for `r(0), ..., r(n-1)`.
    pub fn cholesky(autocov: &[f64]) -> Result<Self> {
        let n = autocov.len();
        if n == 0 {
            return domain("empty autocovariance");
        }
        let dense: Vec<f64> = (0..n * n).map(|ij| autocov[(ij / n).abs_diff(ij % n)]).collect();
        let factor = cholesky_lower(&dense, n)?;
        Ok(StationarySampler { len: n, method: Method::Cholesky { factor } })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_circulant(&self) -> bool {
        matches!(self.method, Method::Circulant { .. })
    }

    /// Number of standard normals consumed per sample.
    pub fn noise_len(&self) -> usize {
        match self.method {
            Method::Circulant { .. } => 2 * self.len,
            Method::Cholesky { .. } => self.len,
        }
    }

    /// Map standard normal `noise` (length [`noise_len`](Self::noise_len)) to
    /// one sample of the sequence.
    pub fn sample_from(&self, noise: &[f64]) -> Result<Vec<f64>> {
        if noise.len() != self.noise_len() {
            return domain(format!("expected {} normals, got {}", self.noise_len(), noise.len()));
        }
        let n = self.len;
        match &self.method {
            Method::Cholesky { factor } => Ok((0..n)
                .map(|i| factor[i * n..i * n + i + 1].iter().zip(noise).map(|(a, b)| a * b).sum())
                .collect()),
            Method::Circulant { sqrt_eig, fft } => {
                // Hermitian-symmetric spectrum so the transform is real with
                // covariance exactly the circulant.
                let big = 2 * n;
                let half = std::f64::consts::FRAC_1_SQRT_2;
                let mut buf = vec![Complex::new(0.0, 0.0); big];
                buf[0] = Complex::new(sqrt_eig[0] * noise[0], 0.0);
                buf[n] = Complex::new(sqrt_eig[n] * noise[n], 0.0);
                for k in 1..n {
                    let w = Complex::new(noise[k], noise[big - k]) * (sqrt_eig[k] * half);
                    buf[k] = w;
                    buf[big - k] = w.conj();
                }
                fft.process(&mut buf);
                Ok(buf[..n].iter().map(|c| c.re).collect())
            }
        }
    }

    pub fn sample(&self, stream: StreamId) -> Vec<f64> {
        self.sample_from(&stream.normals(self.noise_len())).expect("noise length matches by construction")
    }
}

/// `d` consecutive unit-spaced increments of fractional Brownian motion.
pub fn simulate_fgn(h: HurstParam, d: usize, stream: StreamId) -> Result<Vec<f64>> {
    if d == 0 {
        return domain("need at least one increment");
    }
    let sampler = StationarySampler::new(&rho_table(h, d))?;
    Ok(sampler.sample(stream))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Purpose;
    use approx::assert_relative_eq;

    fn hp(h: f64) -> HurstParam {
        HurstParam::new(h).unwrap()
    }

    #[test]
    fn hurst_bounds() {
        assert!(HurstParam::new(0.0).is_err());
        assert!(HurstParam::new(1.0).is_err());
        assert!(HurstParam::new(f64::NAN).is_err());
        assert!(!hp(0.5).is_rosenblatt_valid());
        assert!(hp(0.51).is_rosenblatt_valid());
    }

    #[test]
    fn rho_examples() {
        for h in [0.2, 0.5, 0.75, 0.9] {
            assert_eq!(rho(hp(h), 0), 1.0);
        }
        for k in 1..20 {
            assert!(rho(hp(0.5), k).abs() < 1e-15);
        }
        assert_relative_eq!(rho(hp(0.75), 1), 2f64.powf(1.5) / 2.0 - 1.0, max_relative = 1e-14);
        assert_relative_eq!(rho(hp(0.75), 1), 0.414_213_6, epsilon = 1e-7);
    }

    #[test]
    fn rho_series_matches_closed_form_at_switch() {
        for h in [0.55, 0.75, 0.95] {
            let k = 64.0_f64;
            let two_h = 2.0 * h;
            let direct = 0.5 * ((k + 1.0).powf(two_h) + (k - 1.0).powf(two_h) - 2.0 * k.powf(two_h));
            assert_relative_eq!(rho(hp(h), 64), direct, max_relative = 1e-9);
        }
    }

    #[test]
    fn rho_long_range_asymptotics() {
        for h in [0.6, 0.75, 0.9] {
            let k = 1e4_f64;
            let ratio = rho(hp(h), 10_000) / (h * (2.0 * h - 1.0) * k.powf(2.0 * h - 2.0));
            assert!((ratio - 1.0).abs() < 0.05, "H={h} ratio={ratio}");
        }
    }

    #[test]
    fn squared_correlation_partial_sums() {
        let partial = |h: f64, n: i64| -> f64 { (1..=n).map(|k| rho(hp(h), k).powi(2)).sum() };
        let short = partial(0.6, 10_000);
        let long = partial(0.6, 100_000);
        assert!(long / short < 1.01, "H=0.6 should plateau: {short} -> {long}");
        let short = partial(0.9, 10_000);
        let long = partial(0.9, 100_000);
        assert!(long / short > 2.0, "H=0.9 should keep growing: {short} -> {long}");
    }

    #[test]
    fn fbm_cov_examples() {
        let h = hp(0.75);
        assert_relative_eq!(fbm_cov(h, 0.3, 0.3).unwrap(), 0.3f64.powf(1.5));
        assert_eq!(fbm_cov(h, 0.7, 0.0).unwrap(), 0.0);
        assert_relative_eq!(fbm_cov(h, 1.0, 2.0).unwrap(), 2f64.sqrt(), max_relative = 1e-14);
        assert!(fbm_cov(h, -1.0, 1.0).is_err());
    }

    fn lag_corr(x: &[f64], lag: usize) -> f64 {
        let n = x.len() - lag;
        x[..n].iter().zip(&x[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64
    }

    #[test]
    fn fgn_lag_one_correlation() {
        for (h, expect, tol) in [(0.5, 0.0, 0.005), (0.75, 0.414_213_6, 0.01)] {
            let mut draws = Vec::with_capacity(1 << 20);
            for r in 0..16 {
                draws.extend(simulate_fgn(hp(h), 1 << 16, StreamId::new(5, Purpose::Test, r)).unwrap());
            }
            let var = lag_corr(&draws, 0);
            assert!((var - 1.0).abs() < 0.01, "variance {var}");
            let c = lag_corr(&draws, 1);
            assert!((c - expect).abs() < tol, "H={h} lag-1 {c}");
        }
    }

    #[test]
    fn circulant_covariance_is_exact() {
        // E[x x^T] is linear in the noise covariance, so it can be computed by
        // pushing basis vectors through the sampler.
        let h = hp(0.8);
        let n = 12;
        let s = StationarySampler::new(&rho_table(h, n)).unwrap();
        assert!(s.is_circulant());
        let mut cov = vec![0.0; n * n];
        for j in 0..s.noise_len() {
            let mut e = vec![0.0; s.noise_len()];
            e[j] = 1.0;
            let col = s.sample_from(&e).unwrap();
            for a in 0..n {
                for b in 0..n {
                    cov[a * n + b] += col[a] * col[b];
                }
            }
        }
        for a in 0..n {
            for b in 0..n {
                assert_relative_eq!(cov[a * n + b], rho(h, a as i64 - b as i64), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_fallback_covariance_is_exact() {
        let h = hp(0.7);
        let n = 9;
        let s = StationarySampler::cholesky(&rho_table(h, n - 1)).unwrap();
        assert!(!s.is_circulant());
        let mut cov = vec![0.0; n * n];
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = s.sample_from(&e).unwrap();
            for a in 0..n {
                for b in 0..n {
                    cov[a * n + b] += col[a] * col[b];
                }
            }
        }
        for a in 0..n {
            for b in 0..n {
                assert_relative_eq!(cov[a * n + b], rho(h, a as i64 - b as i64), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn cumulative_fgn_matches_fbm_covariance() {
        let h = hp(0.7);
        let d = 64;
        let reps = 40_000;
        let pts = [16usize, 32, 48, 64];
        let mut acc = [[0.0; 4]; 4];
        for r in 0..reps {
            let x = simulate_fgn(h, d, StreamId::new(11, Purpose::Test, r)).unwrap();
            let mut cum = vec![0.0; d + 1];
            for k in 0..d {
                cum[k + 1] = cum[k] + x[k];
            }
            for (a, &i) in pts.iter().enumerate() {
                for (b, &j) in pts.iter().enumerate() {
                    acc[a][b] += cum[i] * cum[j];
                }
            }
        }
        for (a, &i) in pts.iter().enumerate() {
            for (b, &j) in pts.iter().enumerate() {
                let est = acc[a][b] / reps as f64;
                let expect = fbm_cov(h, i as f64, j as f64).unwrap();
                assert!((est / expect - 1.0).abs() < 0.03, "({i},{j}) {est} vs {expect}");
            }
        }
    }
}
