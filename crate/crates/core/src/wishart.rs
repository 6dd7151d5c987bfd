//! Entry matrices, centered Wishart matrices and the limiting laws.

use std::io::{Read, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::chaos::{unit_rank_one_value, ChaosTensor, MAX_RANK_ONE_ORDER};
use crate::error::{domain, Error, Result};
use crate::fractional::HurstParam;
use crate::rosenblatt::{make_constants, simulate_path, RosenblattKernelGrid, RosenblattPath};
use crate::rng::StreamId;

/// How the entries were produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Regime {
    /// Entry `(i, j)` is `I_{q_i}(h_{ij}^{⊗q_i})` with `h_{ij}` supported on its
    /// own block of `block_dim` basis vectors.
    IndependentChaos { orders: Vec<usize>, block_dim: usize },
    /// Row `i` holds the unit increments of the `i`-th Rosenblatt path.
    CorrelatedRosenblatt { h: HurstParam, cells: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationMeta {
    pub stream: StreamId,
    /// Size of the isonormal basis the entries are built on (`n*d*block_dim`
    /// in the independent regime, grid cells per row otherwise).
    pub basis_dim: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntryMatrix {
    pub n: usize,
    pub d: usize,
    pub entries: Array2<f64>,
    pub regime: Regime,
    pub meta: GenerationMeta,
}

/// Block dimension used when none is given.
pub const DEFAULT_BLOCK_DIM: usize = 1;

fn block_direction(block_dim: usize) -> Vec<f64> {
    let raw: Vec<f64> = (1..=block_dim).map(|k| k as f64).collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    raw.iter().map(|v| v / norm).collect()
}

fn check_orders(orders: &[usize]) -> Result<()> {
    if orders.is_empty() {
        return domain("need at least one row");
    }
    if let Some(&q) = orders.iter().find(|&&q| q == 0 || q > MAX_RANK_ONE_ORDER) {
        return domain(format!("chaos order {q} outside 1..={MAX_RANK_ONE_ORDER}"));
    }
    Ok(())
}

/// Kernel of entry `(i, j)` on the full basis of `n*d*block_dim` vectors, as a
/// dense tensor. Only meant for small sizes (checks of the independence
/// structure); sampling never materializes it.
pub fn independent_entry_kernel(orders: &[usize], d: usize, block_dim: usize, i: usize, j: usize) -> Result<ChaosTensor> {
    check_orders(orders)?;
    if i >= orders.len() || j >= d || block_dim == 0 {
        return domain("entry index out of range");
    }
    let q = orders[i];
    let total = orders.len() * d * block_dim;
    let offset = (i * d + j) * block_dim;
    // |h|^{2q} q! = 1
    let norm = crate::chaos::factorial(q).powf(-0.5 / q as f64);
    let mut h = vec![0.0; total];
    for (k, v) in block_direction(block_dim).into_iter().enumerate() {
        h[offset + k] = norm * v;
    }
    ChaosTensor::rank_one(&ChaosTensor::vector(&h)?, q)
}

pub fn gen_independent_entries(orders: &[usize], d: usize, stream: StreamId) -> Result<EntryMatrix> {
    gen_independent_entries_with(orders, d, DEFAULT_BLOCK_DIM, stream)
}

/// Independent-regime entries. Row `i` draws the isonormal coordinates of its
/// `d` blocks from lane `i` of `stream`.
pub fn gen_independent_entries_with(orders: &[usize], d: usize, block_dim: usize, stream: StreamId) -> Result<EntryMatrix> {
    check_orders(orders)?;
    if d == 0 || block_dim == 0 {
        return domain("d and block dimension must be positive");
    }
    let n = orders.len();
    let basis_dim = n
        .checked_mul(d)
        .and_then(|v| v.checked_mul(block_dim))
        .ok_or_else(|| Error::Resource("basis size overflow".into()))?;
    let mut warnings = Vec::new();
    if orders.iter().any(|&q| q != orders[0]) {
        let msg = format!("mixed chaos orders {orders:?}: entries do not share a common fourth moment");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let dir = block_direction(block_dim);
    let mut entries = Array2::zeros((n, d));
    for (i, &q) in orders.iter().enumerate() {
        let xi = stream.with_lane(i as u32).normals(d * block_dim);
        for (j, block) in xi.chunks_exact(block_dim).enumerate() {
            let w: f64 = block.iter().zip(&dir).map(|(a, b)| a * b).sum();
            entries[[i, j]] = unit_rank_one_value(q, w);
        }
    }
    Ok(EntryMatrix {
        n,
        d,
        entries,
        regime: Regime::IndependentChaos { orders: orders.to_vec(), block_dim },
        meta: GenerationMeta { stream, basis_dim, warnings },
    })
}

/// `n` independent paths on `grid`, row `i` from lane `i` of `stream`.
pub fn gen_correlated_paths(grid: &RosenblattKernelGrid, n: usize, d: usize, stream: StreamId) -> Result<Vec<RosenblattPath>> {
    (0..n).map(|i| simulate_path(grid, d, stream.with_lane(i as u32))).collect()
}

/// Entry matrix from paths resolved at a multiple of `d`.
pub fn entries_from_paths(paths: &[RosenblattPath], d: usize, cells: usize, stream: StreamId) -> Result<EntryMatrix> {
    let n = paths.len();
    if n == 0 {
        return domain("need at least one path");
    }
    let h = paths[0].h;
    let mut entries = Array2::zeros((n, d));
    for (i, p) in paths.iter().enumerate() {
        for (j, v) in p.integer_increments(d)?.into_iter().enumerate() {
            entries[[i, j]] = v;
        }
    }
    Ok(EntryMatrix {
        n,
        d,
        entries,
        regime: Regime::CorrelatedRosenblatt { h, cells },
        meta: GenerationMeta { stream, basis_dim: cells, warnings: Vec::new() },
    })
}

/// Correlated-regime entries `X_ij = Z^i_j - Z^i_{j-1}` at integer times.
pub fn gen_correlated_entries(
    h: HurstParam,
    n: usize,
    d: usize,
    grid: &RosenblattKernelGrid,
    stream: StreamId,
) -> Result<EntryMatrix> {
    h.require_rosenblatt()?;
    if grid.hurst() != h {
        return domain("grid was built for a different Hurst index");
    }
    let paths = gen_correlated_paths(grid, n, d, stream)?;
    entries_from_paths(&paths, d, grid.cells(), stream)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Renorm {
    None,
    /// Multiplied by `sqrt(d)`.
    Clt,
    /// Multiplied by `d^{1-H} / c_{1,H}`.
    Rosenblatt { h: HurstParam },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RenormMode {
    Clt,
    Rosenblatt(HurstParam),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WishartMatrix {
    pub n: usize,
    pub d: usize,
    pub w: Array2<f64>,
    pub renorm: Renorm,
}

/// `W = X X' / d - I`.
pub fn build_wishart(x: &EntryMatrix) -> WishartMatrix {
    let (n, d) = (x.n, x.d);
    let mut w = Array2::zeros((n, n));
    for i in 0..n {
        let ri = x.entries.row(i);
        for j in i..n {
            let dot = ri.dot(&x.entries.row(j)) / d as f64;
            let v = if i == j { dot - 1.0 } else { dot };
            w[[i, j]] = v;
            w[[j, i]] = v;
        }
    }
    WishartMatrix { n, d, w, renorm: Renorm::None }
}

pub fn renormalize(w: &WishartMatrix, mode: RenormMode) -> Result<WishartMatrix> {
    if w.renorm != Renorm::None {
        return domain("matrix is already renormalized");
    }
    let d = w.d as f64;
    let (factor, renorm) = match mode {
        RenormMode::Clt => (d.sqrt(), Renorm::Clt),
        RenormMode::Rosenblatt(h) => {
            let c = make_constants(h)?;
            (d.powf(1.0 - h.value()) / c.c1_h, Renorm::Rosenblatt { h })
        }
    };
    Ok(WishartMatrix { n: w.n, d: w.d, w: &w.w * factor, renorm })
}

/// Symmetric Gaussian matrix: diagonal `N(0, m4 - 1)`, off-diagonal `N(0, 1)`,
/// upper triangle independent.
pub fn sample_goe(n: usize, m4: f64, stream: StreamId) -> Result<Array2<f64>> {
    if !(m4 > 1.0) {
        return domain(format!("fourth moment {m4} must exceed 1"));
    }
    let z = stream.normals(n * (n + 1) / 2);
    let sd = (m4 - 1.0).sqrt();
    let mut out = Array2::zeros((n, n));
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            let v = if i == j { sd * z[k] } else { z[k] };
            out[[i, j]] = v;
            out[[j, i]] = v;
            k += 1;
        }
    }
    Ok(out)
}

/// Diagonal matrix of `n` independent copies of `Z_1`.
pub fn sample_rosenblatt_diag(n: usize, h: HurstParam, grid: &RosenblattKernelGrid, stream: StreamId) -> Result<Array2<f64>> {
    h.require_rosenblatt()?;
    if grid.hurst() != h {
        return domain("grid was built for a different Hurst index");
    }
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        out[[i, i]] = simulate_path(grid, 1, stream.with_lane(i as u32))?.terminal();
    }
    Ok(out)
}

const HALF_VECTOR_TOL: f64 = 1e-12;

/// `(w11, w12, ..., w1n, w22, ..., wnn)`.
pub fn half_vector(w: &Array2<f64>) -> Result<Vec<f64>> {
    let (n, m) = w.dim();
    if n != m {
        return domain("half-vector needs a square matrix");
    }
    let scale = w.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            if (w[[i, j]] - w[[j, i]]).abs() > HALF_VECTOR_TOL * scale {
                return domain(format!("matrix is not symmetric at ({i}, {j})"));
            }
            out.push(w[[i, j]]);
        }
    }
    Ok(out)
}

/// Inverse of [`half_vector`].
pub fn from_half_vector(v: &[f64]) -> Result<Array2<f64>> {
    let n = (((8 * v.len() + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
    if n * (n + 1) / 2 != v.len() {
        return domain(format!("length {} is not triangular", v.len()));
    }
    let mut out = Array2::zeros((n, n));
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            out[[i, j]] = v[k];
            out[[j, i]] = v[k];
            k += 1;
        }
    }
    Ok(out)
}

/// Binary replica dump.
///
/// Layout, little-endian:
///
/// | field | type |
/// |---|---|
/// | magic `CWMX` | 4 bytes |
/// | version (1) | u32 |
/// | kind: 0 entries, 1 Wishart | u8 |
/// | regime: 0 independent, 1 Rosenblatt | u8 |
/// | renorm: 0 none, 1 clt, 2 Rosenblatt | u8 |
/// | reserved | u8 |
/// | n, d, replicas | 3 x u64 |
/// | independent: n orders as u32; Rosenblatt: H as f64 | |
/// | replicas x rows x cols doubles, row-major | |
pub mod dump {
    use super::*;

    pub const MAGIC: &[u8; 4] = b"CWMX";
    pub const VERSION: u32 = 1;

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum Kind {
        Entries,
        Wishart,
    }

    #[derive(Debug, Clone, PartialEq)]
    pub enum RegimeTag {
        Independent { orders: Vec<u32> },
        Rosenblatt { h: f64 },
    }

    #[derive(Debug, Clone, PartialEq)]
    pub struct Header {
        pub kind: Kind,
        pub regime: RegimeTag,
        pub renorm: u8,
        pub n: u64,
        pub d: u64,
        pub replicas: u64,
    }

    impl Header {
        pub fn shape(&self) -> (usize, usize) {
            match self.kind {
                Kind::Entries => (self.n as usize, self.d as usize),
                Kind::Wishart => (self.n as usize, self.n as usize),
            }
        }
    }

    pub fn regime_tag(r: &Regime) -> RegimeTag {
        match r {
            Regime::IndependentChaos { orders, .. } => {
                RegimeTag::Independent { orders: orders.iter().map(|&q| q as u32).collect() }
            }
            Regime::CorrelatedRosenblatt { h, .. } => RegimeTag::Rosenblatt { h: h.value() },
        }
    }

    pub fn renorm_tag(r: &Renorm) -> u8 {
        match r {
            Renorm::None => 0,
            Renorm::Clt => 1,
            Renorm::Rosenblatt { .. } => 2,
        }
    }

    pub fn write<W: Write>(mut out: W, header: &Header, replicas: &[Array2<f64>]) -> Result<()> {
        if replicas.len() as u64 != header.replicas {
            return domain("replica count does not match the header");
        }
        let shape = header.shape();
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        let kind = match header.kind {
            Kind::Entries => 0u8,
            Kind::Wishart => 1,
        };
        let regime = match header.regime {
            RegimeTag::Independent { .. } => 0u8,
            RegimeTag::Rosenblatt { .. } => 1,
        };
        out.write_all(&[kind, regime, header.renorm, 0])?;
        for v in [header.n, header.d, header.replicas] {
            out.write_all(&v.to_le_bytes())?;
        }
        match &header.regime {
            RegimeTag::Independent { orders } => {
                if orders.len() as u64 != header.n {
                    return domain("one order per row expected");
                }
                for q in orders {
                    out.write_all(&q.to_le_bytes())?;
                }
            }
            RegimeTag::Rosenblatt { h } => out.write_all(&h.to_le_bytes())?,
        }
        for m in replicas {
            if m.dim() != shape {
                return domain("replica shape does not match the header");
            }
            for v in m.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    fn take<const N: usize, R: Read>(input: &mut R) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        input.read_exact(&mut buf)?;
        Ok(buf)
    }

    pub fn read<R: Read>(mut input: R) -> Result<(Header, Vec<Array2<f64>>)> {
        if &take::<4, _>(&mut input)? != MAGIC {
            return domain("not a replica dump");
        }
        let version = u32::from_le_bytes(take(&mut input)?);
        if version != VERSION {
            return domain(format!("unsupported dump version {version}"));
        }
        let [kind, regime, renorm, _] = take::<4, _>(&mut input)?;
        let n = u64::from_le_bytes(take(&mut input)?);
        let d = u64::from_le_bytes(take(&mut input)?);
        let replicas = u64::from_le_bytes(take(&mut input)?);
        let kind = match kind {
            0 => Kind::Entries,
            1 => Kind::Wishart,
            k => return domain(format!("unknown kind {k}")),
        };
        let regime = match regime {
            0 => RegimeTag::Independent {
                orders: (0..n).map(|_| take(&mut input).map(u32::from_le_bytes)).collect::<Result<_>>()?,
            },
            1 => RegimeTag::Rosenblatt { h: f64::from_le_bytes(take(&mut input)?) },
            r => return domain(format!("unknown regime {r}")),
        };
        let header = Header { kind, regime, renorm, n, d, replicas };
        let shape = header.shape();
        let mut out = Vec::with_capacity(replicas as usize);
        for _ in 0..replicas {
            let data = (0..shape.0 * shape.1)
                .map(|_| take(&mut input).map(f64::from_le_bytes))
                .collect::<Result<Vec<_>>>()?;
            out.push(Array2::from_shape_vec(shape, data).map_err(|e| Error::Internal(e.to_string()))?);
        }
        Ok((header, out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaos::{contract, sample_rank_one_chaos, GaussianNoise};
    use crate::rng::Purpose;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn stream(i: u64) -> StreamId {
        StreamId::new(17, Purpose::Test, i)
    }

    fn entry_matrix(x: Array2<f64>) -> EntryMatrix {
        let (n, d) = x.dim();
        EntryMatrix {
            n,
            d,
            entries: x,
            regime: Regime::IndependentChaos { orders: vec![1; n], block_dim: 1 },
            meta: GenerationMeta { stream: stream(0), basis_dim: n * d, warnings: vec![] },
        }
    }

    #[test]
    fn wishart_examples() {
        let w = build_wishart(&entry_matrix(array![[2.0]]));
        assert_eq!(w.w, array![[3.0]]);
        let s = 2f64.sqrt();
        let w = build_wishart(&entry_matrix(array![[s, 0.0], [0.0, s]]));
        for v in w.w.iter() {
            assert!(v.abs() < 1e-15);
        }
    }

    #[test]
    fn wishart_matches_dense_oracle() {
        let x = array![[3.0, -1.0, 0.0, 2.0, 5.0], [1.0, 1.0, -4.0, 0.0, 2.0], [0.0, -2.0, 7.0, 1.0, -3.0]];
        let w = build_wishart(&entry_matrix(x.clone()));
        let xxt = x.dot(&x.t());
        for i in 0..3 {
            for j in 0..3 {
                let expect = xxt[[i, j]] / 5.0 - if i == j { 1.0 } else { 0.0 };
                assert_eq!(w.w[[i, j]], expect);
            }
        }
    }

    #[test]
    fn renormalization_examples() {
        let mut x = Array2::zeros((2, 100));
        x[[0, 0]] = 3.0;
        x[[1, 0]] = 1.5;
        let w = build_wishart(&entry_matrix(x));
        let c = renormalize(&w, RenormMode::Clt).unwrap();
        for (a, b) in c.w.iter().zip(w.w.iter()) {
            assert_relative_eq!(*a, 10.0 * b, max_relative = 1e-15);
        }
        assert!(renormalize(&c, RenormMode::Clt).is_err());

        let mut w16 = build_wishart(&entry_matrix(Array2::zeros((1, 16))));
        w16.w[[0, 0]] = 1.0;
        let r = renormalize(&w16, RenormMode::Rosenblatt(HurstParam::new(0.75).unwrap())).unwrap();
        assert_relative_eq!(r.w[[0, 0]], 2.0 / (4.0 * (4.0f64 / 3.0).sqrt() / 1.75), max_relative = 1e-14);
        assert_relative_eq!(r.w[[0, 0]], 0.757_770, epsilon = 3e-6);
    }

    #[test]
    fn half_vector_examples() {
        assert_eq!(half_vector(&array![[1.0, 2.0], [2.0, 3.0]]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(half_vector(&Array2::eye(3)).unwrap(), vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        for n in 1..=8 {
            assert_eq!(half_vector(&Array2::zeros((n, n))).unwrap().len(), n * (n + 1) / 2);
        }
        assert!(half_vector(&array![[1.0, 2.0], [2.5, 3.0]]).is_err());
        assert!(from_half_vector(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn goe_shape() {
        let g = sample_goe(4, 3.0, stream(1)).unwrap();
        assert_eq!(g, g.t());
        assert!(sample_goe(3, 1.0, stream(1)).is_err());
    }

    #[test]
    fn entries_agree_with_the_chaos_sampler() {
        let orders = [1, 2, 3];
        let (d, b) = (4, 3);
        let x = gen_independent_entries_with(&orders, d, b, stream(2)).unwrap();
        let mut noise = Vec::new();
        for i in 0..orders.len() {
            noise.extend(stream(2).with_lane(i as u32).normals(d * b));
        }
        let noise = GaussianNoise::from_values(noise);
        for (i, _) in orders.iter().enumerate() {
            for j in 0..d {
                let k = independent_entry_kernel(&orders, d, b, i, j).unwrap();
                let h = {
                    // recover the order-one factor from the first row of the rank-one kernel
                    let total = orders.len() * d * b;
                    let norm = crate::chaos::factorial(orders[i]).powf(-0.5 / orders[i] as f64);
                    let mut h = vec![0.0; total];
                    for (t, v) in block_direction(b).into_iter().enumerate() {
                        h[(i * d + j) * b + t] = norm * v;
                    }
                    ChaosTensor::vector(&h).unwrap()
                };
                assert_relative_eq!(k.norm().powi(2) * crate::chaos::factorial(orders[i]), 1.0, max_relative = 1e-12);
                let v = sample_rank_one_chaos(orders[i], &h, &noise).unwrap();
                assert_relative_eq!(x.entries[[i, j]], v, max_relative = 1e-12, epsilon = 1e-12);
            }
        }
        assert_eq!(x.meta.warnings.len(), 1);
    }

    #[test]
    fn entry_kernels_contract_to_zero() {
        let orders = [2, 2];
        for (a, b) in [((0, 0), (0, 1)), ((0, 1), (1, 1)), ((1, 0), (0, 0))] {
            let f = independent_entry_kernel(&orders, 2, 2, a.0, a.1).unwrap();
            let g = independent_entry_kernel(&orders, 2, 2, b.0, b.1).unwrap();
            assert!(contract(&f, &g, 1).unwrap().coeffs().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn dump_round_trip() {
        let x = gen_independent_entries(&[1, 2], 3, stream(4)).unwrap();
        let header = dump::Header {
            kind: dump::Kind::Entries,
            regime: dump::regime_tag(&x.regime),
            renorm: 0,
            n: 2,
            d: 3,
            replicas: 2,
        };
        let mut buf = Vec::new();
        dump::write(&mut buf, &header, &[x.entries.clone(), x.entries.clone() * 2.0]).unwrap();
        assert_eq!(&buf[..4], b"CWMX");
        assert_eq!(buf.len(), 4 + 4 + 4 + 24 + 8 + 2 * 6 * 8);
        let (h2, reps) = dump::read(&buf[..]).unwrap();
        assert_eq!(h2, header);
        assert_eq!(reps[1], x.entries * 2.0);
        assert!(dump::read(&b"XXXX"[..]).is_err());
    }
}
