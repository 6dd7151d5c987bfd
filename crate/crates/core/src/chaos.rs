//! Finite-basis Wiener chaos.
//!
//! Kernels live on an `M`-dimensional orthonormal basis, so an order-`q`
//! kernel is a dense `M^q` array and the isonormal process is a vector of `M`
//! independent standard normals. Hermite polynomials carry the `1/n!`
//! normalization throughout: `H_2(x) = (x^2 - 1)/2`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rng::StreamId;

/// Largest order accepted by [`hermite_eval`].
pub const MAX_HERMITE_ORDER: usize = 64;
/// Largest order accepted by [`m4_of_rank_one_chaos`].
pub const MAX_RANK_ONE_ORDER: usize = 12;
/// Dense tensors above this many coefficients are refused (1 GiB of `f64`).
pub const MAX_TENSOR_LEN: usize = 1 << 27;
/// Relative tolerance for the symmetry check.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Default relative tolerance for [`uz_independent`].
pub const UZ_TOL: f64 = 1e-10;

/// `H_n(x)` with leading coefficient `1/n!`, via
/// `(n+1) H_{n+1} = x H_n - H_{n-1}`.
pub fn hermite_eval(n: usize, x: f64) -> Result<f64> {
    if n > MAX_HERMITE_ORDER {
        return domain(format!("hermite order {n} exceeds {MAX_HERMITE_ORDER}"));
    }
    Ok(hermite_unchecked(n, x))
}

fn hermite_unchecked(n: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (0.0, 1.0);
    for k in 0..n {
        let next = (x * cur - prev) / (k as f64 + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Dense kernel of order `q` on an `M`-dimensional basis, row-major in the
/// multi-index. Order 0 only appears as the result of a full contraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosTensor {
    order: usize,
    basis_dim: usize,
    coeffs: Vec<f64>,
    symmetric: bool,
}

fn checked_len(order: usize, basis_dim: usize) -> Result<usize> {
    let mut len: usize = 1;
    for _ in 0..order {
        len = len
            .checked_mul(basis_dim)
            .filter(|&l| l <= MAX_TENSOR_LEN)
            .ok_or_else(|| {
                Error::Resource(format!("tensor of order {order} on {basis_dim} basis vectors is too large"))
            })?;
    }
    Ok(len)
}

impl ChaosTensor {
    pub fn zeros(order: usize, basis_dim: usize) -> Result<Self> {
        if basis_dim == 0 {
            return domain("basis dimension must be positive");
        }
        let len = checked_len(order, basis_dim)?;
        Ok(ChaosTensor { order, basis_dim, coeffs: vec![0.0; len], symmetric: true })
    }

    pub fn from_coeffs(order: usize, basis_dim: usize, coeffs: Vec<f64>) -> Result<Self> {
        if basis_dim == 0 {
            return domain("basis dimension must be positive");
        }
        let len = checked_len(order, basis_dim)?;
        if coeffs.len() != len {
            return domain(format!("expected {len} coefficients, got {}", coeffs.len()));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return domain("coefficients must be finite");
        }
        let mut t = ChaosTensor { order, basis_dim, coeffs, symmetric: false };
        t.symmetric = t.order <= 1 || t.is_symmetric_within(SYMMETRY_TOL);
        Ok(t)
    }

    /// Order-one kernel from a vector.
    pub fn vector(h: &[f64]) -> Result<Self> {
        Self::from_coeffs(1, h.len(), h.to_vec())
    }

    /// Basis vector `e_i`.
    pub fn basis(basis_dim: usize, i: usize) -> Result<Self> {
        if i >= basis_dim {
            return domain(format!("basis index {i} out of range {basis_dim}"));
        }
        let mut t = Self::zeros(1, basis_dim)?;
        t.coeffs[i] = 1.0;
        Ok(t)
    }

    /// `h ⊗ ... ⊗ h` (`q` factors); symmetric by construction.
    pub fn rank_one(h: &ChaosTensor, q: usize) -> Result<Self> {
        if h.order != 1 {
            return domain("rank-one kernels are built from order-one tensors");
        }
        let mut t = ChaosTensor { order: 0, basis_dim: h.basis_dim, coeffs: vec![1.0], symmetric: true };
        for _ in 0..q {
            t = tensor_product(&t, h)?;
        }
        t.symmetric = true;
        Ok(t)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn basis_dim(&self) -> usize {
        self.basis_dim
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Coefficient at a multi-index.
    pub fn get(&self, index: &[usize]) -> f64 {
        self.coeffs[self.flat(index)]
    }

    fn flat(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.order, "multi-index length");
        index.iter().fold(0, |acc, &i| {
            assert!(i < self.basis_dim, "index out of range");
            acc * self.basis_dim + i
        })
    }

    fn unflat(&self, mut flat: usize, out: &mut [usize]) {
        for slot in out.iter_mut().rev() {
            *slot = flat % self.basis_dim;
            flat /= self.basis_dim;
        }
    }

    /// Hilbert-space norm of the kernel.
    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn inner(&self, other: &ChaosTensor) -> f64 {
        assert_eq!(self.coeffs.len(), other.coeffs.len());
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum()
    }

    fn is_symmetric_within(&self, tol: f64) -> bool {
        let scale = self.coeffs.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
        let mut idx = vec![0; self.order];
        let mut swapped = vec![0; self.order];
        for flat in 0..self.coeffs.len() {
            self.unflat(flat, &mut idx);
            // adjacent transpositions generate the symmetric group
            for k in 0..self.order.saturating_sub(1) {
                swapped.copy_from_slice(&idx);
                swapped.swap(k, k + 1);
                let other = self.coeffs[self.flat(&swapped)];
                if (self.coeffs[flat] - other).abs() > tol * scale {
                    return false;
                }
            }
        }
        true
    }
}

fn permutations(q: usize) -> Vec<Vec<usize>> {
    if q == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(q - 1) {
        for pos in 0..q {
            let mut next = p.clone();
            next.insert(pos, q - 1);
            out.push(next);
        }
    }
    out
}

/// Average of `f` over all permutations of its arguments.
pub fn symmetrize(f: &ChaosTensor) -> ChaosTensor {
    if f.order <= 1 {
        return ChaosTensor { symmetric: true, ..f.clone() };
    }
    let perms = permutations(f.order);
    let weight = 1.0 / perms.len() as f64;
    let mut idx = vec![0; f.order];
    let mut permuted = vec![0; f.order];
    let coeffs = (0..f.coeffs.len())
        .map(|flat| {
            f.unflat(flat, &mut idx);
            let mut acc = 0.0;
            for p in &perms {
                for (k, &src) in p.iter().enumerate() {
                    permuted[k] = idx[src];
                }
                acc += f.coeffs[f.flat(&permuted)];
            }
            acc * weight
        })
        .collect();
    ChaosTensor { order: f.order, basis_dim: f.basis_dim, coeffs, symmetric: true }
}

/// Plain tensor product `f ⊗ g`.
pub fn tensor_product(f: &ChaosTensor, g: &ChaosTensor) -> Result<ChaosTensor> {
    contract(f, g, 0)
}

/// `r`-th contraction: the last `r` arguments of `f` are paired with the last
/// `r` arguments of `g` and summed over the basis.
pub fn contract(f: &ChaosTensor, g: &ChaosTensor, r: usize) -> Result<ChaosTensor> {
    if f.basis_dim != g.basis_dim {
        return domain(format!("basis dimensions differ: {} vs {}", f.basis_dim, g.basis_dim));
    }
    if r > f.order.min(g.order) {
        return domain(format!("contraction index {r} exceeds orders {} and {}", f.order, g.order));
    }
    let m = f.basis_dim;
    let order = f.order + g.order - 2 * r;
    let inner = checked_len(r, m)?;
    let rows = checked_len(f.order - r, m)?;
    let cols = checked_len(g.order - r, m)?;
    checked_len(order, m)?;
    let mut coeffs = vec![0.0; rows * cols];
    for a in 0..rows {
        let fa = &f.coeffs[a * inner..(a + 1) * inner];
        let out = &mut coeffs[a * cols..(a + 1) * cols];
        for (b, slot) in out.iter_mut().enumerate() {
            let gb = &g.coeffs[b * inner..(b + 1) * inner];
            *slot = fa.iter().zip(gb).map(|(x, y)| x * y).sum();
        }
    }
    let mut out = ChaosTensor { order, basis_dim: m, coeffs, symmetric: false };
    out.symmetric = order <= 1 || out.is_symmetric_within(SYMMETRY_TOL);
    Ok(out)
}

/// Independence test for `I_p(f)` and `I_q(g)`: true iff the first contraction
/// vanishes up to `tol * |f| * |g|`.
pub fn uz_independent(f: &ChaosTensor, g: &ChaosTensor, tol: f64) -> Result<bool> {
    if !(tol >= 0.0) {
        return domain("tolerance must be nonnegative");
    }
    let c = contract(f, g, 1)?;
    Ok(c.norm() <= tol * f.norm() * g.norm())
}

/// A realization of the isonormal process on the basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNoise {
    values: Vec<f64>,
    stream: Option<StreamId>,
}

impl GaussianNoise {
    pub fn draw(dim: usize, stream: StreamId) -> Self {
        GaussianNoise { values: stream.normals(dim), stream: Some(stream) }
    }

    /// Wrap externally supplied values (tests, replays).
    pub fn from_values(values: Vec<f64>) -> Self {
        GaussianNoise { values, stream: None }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn stream(&self) -> Option<StreamId> {
        self.stream
    }
}

fn check_dims(t: &ChaosTensor, noise: &GaussianNoise) -> Result<()> {
    if t.basis_dim != noise.dim() {
        return domain(format!("kernel basis {} vs noise dimension {}", t.basis_dim, noise.dim()));
    }
    Ok(())
}

/// `I_1(h) = W(h)`.
pub fn sample_i1(h: &ChaosTensor, noise: &GaussianNoise) -> Result<f64> {
    if h.order != 1 {
        return domain("sample_i1 needs an order-one kernel");
    }
    check_dims(h, noise)?;
    Ok(h.coeffs.iter().zip(&noise.values).map(|(a, b)| a * b).sum())
}

/// `I_2(A) = xi' A xi - tr A` for symmetric `A`.
pub fn sample_i2(a: &ChaosTensor, noise: &GaussianNoise) -> Result<f64> {
    if a.order != 2 {
        return domain("sample_i2 needs an order-two kernel");
    }
    check_dims(a, noise)?;
    if !a.is_symmetric_within(SYMMETRY_TOL) {
        return domain("kernel is not symmetric; symmetrize it first");
    }
    let m = a.basis_dim;
    let xi = &noise.values;
    let mut acc = 0.0;
    for i in 0..m {
        let row = &a.coeffs[i * m..(i + 1) * m];
        let dot: f64 = row.iter().zip(xi).map(|(x, y)| x * y).sum();
        acc += xi[i] * dot - row[i];
    }
    Ok(acc)
}

/// `I_q(h^{⊗q}) = q! |h|^q H_q(W(h)/|h|)`.
pub fn sample_rank_one_chaos(q: usize, h: &ChaosTensor, noise: &GaussianNoise) -> Result<f64> {
    if q == 0 {
        return domain("chaos order must be positive");
    }
    let w = sample_i1(h, noise)?;
    let norm = h.norm();
    if norm == 0.0 {
        return domain("rank-one kernel must be nonzero");
    }
    Ok(factorial(q) * norm.powi(q as i32) * hermite_eval(q, w / norm)?)
}

pub(crate) fn factorial(q: usize) -> f64 {
    (1..=q).map(|k| k as f64).product()
}

/// Unit-variance rank-one chaos of order `q` evaluated at a standard normal
/// `xi`: `sqrt(q!) H_q(xi)`.
pub fn unit_rank_one_value(q: usize, xi: f64) -> f64 {
    factorial(q).sqrt() * hermite_unchecked(q, xi)
}

/// Gauss–Hermite rule for the standard normal weight; weights sum to one.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    // Newton iteration on orthonormal physicists' polynomials, then rescaled.
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let mut z = 0.0;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (PIM4, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    let sqrt_pi = std::f64::consts::PI.sqrt();
    (
        x.iter().map(|v| v * std::f64::consts::SQRT_2).collect(),
        w.iter().map(|v| v / sqrt_pi).collect(),
    )
}

/// Fourth moment of the unit-variance rank-one chaos of order `q`.
pub fn m4_of_rank_one_chaos(q: usize) -> Result<f64> {
    if q == 0 || q > MAX_RANK_ONE_ORDER {
        return domain(format!("chaos order {q} outside 1..={MAX_RANK_ONE_ORDER}"));
    }
    // 64 nodes integrate polynomials of degree 127 exactly; we need 4q <= 48.
    let (x, w) = gauss_hermite(64);
    Ok(x.iter().zip(&w).map(|(&xi, &wi)| wi * unit_rank_one_value(q, xi).powi(4)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hermite_low_orders() {
        assert_eq!(hermite_eval(0, 7.3).unwrap(), 1.0);
        for x in [-2.0, 0.0, 5.0] {
            assert_eq!(hermite_eval(1, x).unwrap(), x);
        }
        assert_eq!(hermite_eval(2, 0.0).unwrap(), -0.5);
        assert!(hermite_eval(65, 0.0).is_err());
    }

    #[test]
    fn hermite_matches_derivative_definition() {
        // H_n(x) = (-1)^n/n! e^{x^2/2} d^n/dx^n e^{-x^2/2}; the derivative of
        // the Gaussian is computed here by repeated symbolic differentiation of
        // p(x) e^{-x^2/2}: p -> p' - x p.
        let mut p = vec![1.0_f64];
        for n in 1..=8usize {
            let mut next = vec![0.0; p.len() + 1];
            for (k, &c) in p.iter().enumerate() {
                if k > 0 {
                    next[k - 1] += c * k as f64;
                }
                next[k + 1] -= c;
            }
            p = next;
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            for &x in &[-1.7_f64, 0.3, 2.4] {
                let val: f64 = p.iter().enumerate().map(|(k, c)| c * x.powi(k as i32)).sum();
                let expect = sign * val / factorial(n);
                assert_relative_eq!(hermite_eval(n, x).unwrap(), expect, max_relative = 1e-12, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn symmetrize_examples() {
        let mut c = vec![0.0; 9];
        c[1 * 3 + 2] = 1.0;
        let f = ChaosTensor::from_coeffs(2, 3, c).unwrap();
        assert!(!f.is_symmetric());
        let s = symmetrize(&f);
        assert_eq!(s.get(&[1, 2]), 0.5);
        assert_eq!(s.get(&[2, 1]), 0.5);
        assert_eq!(symmetrize(&s), s);
    }

    #[test]
    fn contraction_examples() {
        let e1 = ChaosTensor::basis(3, 1).unwrap();
        let f = ChaosTensor::rank_one(&e1, 2).unwrap();
        let c1 = contract(&f, &f, 1).unwrap();
        assert_eq!(c1, f);
        let c2 = contract(&f, &f, 2).unwrap();
        assert_eq!(c2.order(), 0);
        assert_eq!(c2.coeffs(), &[1.0]);
        let g = ChaosTensor::rank_one(&ChaosTensor::basis(3, 2).unwrap(), 2).unwrap();
        assert!(contract(&f, &g, 1).unwrap().coeffs().iter().all(|&v| v == 0.0));
        assert!(contract(&f, &g, 3).is_err());
        let other = ChaosTensor::basis(4, 0).unwrap();
        assert!(contract(&e1, &other, 1).is_err());
    }

    #[test]
    fn uz_examples() {
        let e = |i| ChaosTensor::basis(4, i).unwrap();
        let f = ChaosTensor::rank_one(&e(1), 2).unwrap();
        assert!(!uz_independent(&f, &f, UZ_TOL).unwrap());
        let g = ChaosTensor::rank_one(&e(3), 2).unwrap();
        assert!(uz_independent(&f, &g, 0.0).unwrap());
        let mixed = symmetrize(&tensor_product(&e(0), &e(1)).unwrap());
        assert!(uz_independent(&mixed, &ChaosTensor::rank_one(&e(2), 2).unwrap(), UZ_TOL).unwrap());
    }

    #[test]
    fn samplers_small_cases() {
        let noise = GaussianNoise::from_values(vec![0.7, -1.3, 2.0]);
        let zero = ChaosTensor::zeros(1, 3).unwrap();
        assert_eq!(sample_i1(&zero, &noise).unwrap(), 0.0);
        assert_eq!(sample_i1(&ChaosTensor::basis(3, 1).unwrap(), &noise).unwrap(), -1.3);

        let mut c = vec![0.0; 9];
        c[1] = 0.5;
        c[3] = 0.5;
        let a = ChaosTensor::from_coeffs(2, 3, c).unwrap();
        assert_relative_eq!(sample_i2(&a, &noise).unwrap(), 0.7 * -1.3, epsilon = 1e-15);
        let e0 = ChaosTensor::rank_one(&ChaosTensor::basis(3, 0).unwrap(), 2).unwrap();
        assert_relative_eq!(sample_i2(&e0, &noise).unwrap(), 0.49 - 1.0, epsilon = 1e-15);
        assert_eq!(sample_i2(&ChaosTensor::zeros(2, 3).unwrap(), &noise).unwrap(), 0.0);

        let mut asym = vec![0.0; 9];
        asym[1] = 1.0;
        let asym = ChaosTensor::from_coeffs(2, 3, asym).unwrap();
        assert!(sample_i2(&asym, &noise).is_err());
    }

    #[test]
    fn rank_one_sampler_examples() {
        let noise = GaussianNoise::from_values(vec![0.4, 1.1]);
        let h = ChaosTensor::vector(&[0.6, 0.8]).unwrap();
        let xi = 0.6 * 0.4 + 0.8 * 1.1;
        assert_relative_eq!(sample_rank_one_chaos(1, &h, &noise).unwrap(), sample_i1(&h, &noise).unwrap());
        assert_relative_eq!(sample_rank_one_chaos(2, &h, &noise).unwrap(), xi * xi - 1.0, epsilon = 1e-14);
        // unscaled kernel: I_2(h ⊗ h) = W(h)^2 - |h|^2
        let h2 = ChaosTensor::vector(&[1.2, 1.6]).unwrap();
        let w = 1.2 * 0.4 + 1.6 * 1.1;
        assert_relative_eq!(sample_rank_one_chaos(2, &h2, &noise).unwrap(), w * w - 4.0, epsilon = 1e-13);
        assert!(sample_rank_one_chaos(2, &ChaosTensor::zeros(1, 2).unwrap(), &noise).is_err());
        // agrees with the quadratic form of the rank-one kernel
        let k = ChaosTensor::rank_one(&h2, 2).unwrap();
        assert_relative_eq!(sample_i2(&k, &noise).unwrap(), w * w - 4.0, epsilon = 1e-13);
    }

    /// E[xi^{2k}] = (2k-1)!!
    fn gaussian_moment(p: usize) -> f64 {
        if p % 2 == 1 {
            0.0
        } else {
            (1..p).step_by(2).map(|k| k as f64).product()
        }
    }

    /// E[P(xi)^4] for a polynomial P given by its monomial coefficients.
    fn fourth_moment_by_expansion(p: &[f64]) -> f64 {
        let mut sq = vec![0.0; 2 * p.len() - 1];
        for (i, a) in p.iter().enumerate() {
            for (j, b) in p.iter().enumerate() {
                sq[i + j] += a * b;
            }
        }
        let mut quad = vec![0.0; 2 * sq.len() - 1];
        for (i, a) in sq.iter().enumerate() {
            for (j, b) in sq.iter().enumerate() {
                quad[i + j] += a * b;
            }
        }
        quad.iter().enumerate().map(|(k, c)| c * gaussian_moment(k)).sum()
    }

    #[test]
    fn m4_oracles() {
        assert_relative_eq!(m4_of_rank_one_chaos(1).unwrap(), 3.0, max_relative = 1e-12);
        // (xi^2 - 1)/sqrt(2)
        let q2 = fourth_moment_by_expansion(&[-1.0, 0.0, 1.0]) / 4.0;
        assert_eq!(q2, 15.0);
        assert_relative_eq!(m4_of_rank_one_chaos(2).unwrap(), q2, max_relative = 1e-12);
        // (xi^3 - 3 xi)/sqrt(6)
        let q3 = fourth_moment_by_expansion(&[0.0, -3.0, 0.0, 1.0]) / 36.0;
        assert_eq!(q3, 93.0);
        assert_relative_eq!(m4_of_rank_one_chaos(3).unwrap(), q3, max_relative = 1e-12);
        assert!(m4_of_rank_one_chaos(0).is_err());
        assert!(m4_of_rank_one_chaos(13).is_err());
    }

    #[test]
    fn m4_matches_expansion_up_to_order_twelve() {
        for q in 1..=MAX_RANK_ONE_ORDER {
            // monomial coefficients of sqrt(q!) H_q from the recurrence
            let (mut prev, mut cur) = (vec![0.0], vec![1.0]);
            for k in 0..q {
                let mut next = vec![0.0; cur.len() + 1];
                for (i, c) in cur.iter().enumerate() {
                    next[i + 1] += c;
                }
                for (i, c) in prev.iter().enumerate() {
                    next[i] -= c;
                }
                for c in next.iter_mut() {
                    *c /= k as f64 + 1.0;
                }
                prev = cur;
                cur = next;
            }
            let s = factorial(q).sqrt();
            let poly: Vec<f64> = cur.iter().map(|c| c * s).collect();
            let oracle = fourth_moment_by_expansion(&poly);
            assert_relative_eq!(m4_of_rank_one_chaos(q).unwrap(), oracle, max_relative = 1e-9);
        }
    }

    #[test]
    fn gauss_hermite_integrates_moments() {
        let (x, w) = gauss_hermite(20);
        for p in 0..30 {
            let v: f64 = x.iter().zip(&w).map(|(a, b)| b * a.powi(p as i32)).sum();
            // odd moments vanish; their rounding error scales like the even neighbour
            let scale = gaussian_moment(p + p % 2);
            assert!((v - gaussian_moment(p)).abs() <= 1e-10 * scale, "p={p}: {v}");
        }
    }
}
