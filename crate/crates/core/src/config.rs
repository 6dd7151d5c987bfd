//! Experiment configuration and the flat `key = value` config format.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fractional::HurstParam;
use crate::rosenblatt::Backend;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Theorem1,
    Theorem2,
    Moments,
    KernelDiag,
}

impl ExperimentKind {
    pub fn label(self) -> &'static str {
        match self {
            ExperimentKind::Theorem1 => "theorem1",
            ExperimentKind::Theorem2 => "theorem2",
            ExperimentKind::Moments => "moments",
            ExperimentKind::KernelDiag => "kernel-diag",
        }
    }
}

/// Everything that determines the output of a run. Keys of the config file
/// and CLI flags use the kebab-case field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub n: usize,
    pub d_list: Vec<usize>,
    /// Chaos order of each row; a single value applies to every row.
    pub orders: Vec<usize>,
    pub hurst: Vec<f64>,
    pub reps: usize,
    /// Size of the target-law sample; 0 picks a default per experiment.
    pub reference_reps: usize,
    pub grid_ratio: usize,
    /// Grid cells for kernel diagnostics.
    pub cells: usize,
    pub directions: usize,
    pub quantile_grid: usize,
    pub bootstrap: usize,
    pub backend: Backend,
    pub slope_tolerance: f64,
    pub moment_tolerance: f64,
    pub memory_cap_mb: usize,
    pub seed: u64,
    pub workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Defaults for every field except the seed, which has none.
    pub fn defaults(kind: ExperimentKind, seed: u64) -> Self {
        ExperimentConfig {
            kind,
            n: 2,
            d_list: vec![16, 32, 64, 128, 256],
            orders: vec![1],
            hurst: vec![0.6],
            reps: 2000,
            reference_reps: 0,
            grid_ratio: 8,
            cells: 4096,
            directions: 128,
            quantile_grid: 4096,
            bootstrap: 20,
            backend: Backend::Circulant,
            slope_tolerance: 0.15,
            moment_tolerance: 0.05,
            memory_cap_mb: 1024,
            seed,
            workers: 1,
            out: None,
        }
    }

    pub fn memory_cap_bytes(&self) -> usize {
        self.memory_cap_mb.saturating_mul(1 << 20)
    }

    /// Per-row chaos orders.
    pub fn row_orders(&self) -> Vec<usize> {
        if self.orders.len() == 1 {
            vec![self.orders[0]; self.n]
        } else {
            self.orders.clone()
        }
    }

    pub fn single_hurst(&self) -> Result<HurstParam> {
        match self.hurst.as_slice() {
            [h] => HurstParam::new(*h).and_then(|h| h.require_rosenblatt()).map_err(|e| Error::Config(e.to_string())),
            _ => Err(Error::Config("this experiment takes exactly one Hurst index".into())),
        }
    }

    /// Size of the target-law sample after defaults.
    pub fn resolved_reference_reps(&self) -> usize {
        match (self.reference_reps, self.kind) {
            (0, ExperimentKind::Theorem1) => 40 * self.reps,
            (0, _) => self.reps,
            (r, _) => r,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.kind != ExperimentKind::KernelDiag {
            if self.reps < 100 {
                return fail(format!("reps = {} but at least 100 are required", self.reps));
            }
            if self.n == 0 {
                return fail("n must be positive".into());
            }
            if self.d_list.is_empty() || self.d_list.contains(&0) {
                return fail("d-list must hold positive integers".into());
            }
            if self.d_list.windows(2).any(|w| w[0] >= w[1]) {
                return fail("d-list must be strictly increasing".into());
            }
        }
        if matches!(self.kind, ExperimentKind::Theorem1 | ExperimentKind::Theorem2) && self.d_list.len() < 3 {
            return fail(format!("rate fits need at least 3 values of d, got {}", self.d_list.len()));
        }
        if self.directions == 0 || self.quantile_grid == 0 {
            return fail("directions and quantile-grid must be positive".into());
        }
        if !(self.slope_tolerance > 0.0 && self.moment_tolerance > 0.0) {
            return fail("tolerances must be positive".into());
        }
        match self.kind {
            ExperimentKind::Theorem1 | ExperimentKind::Moments => {
                if self.orders.len() != 1 && self.orders.len() != self.n {
                    return fail(format!("orders needs 1 or n = {} values", self.n));
                }
                if self.orders.iter().any(|&q| q == 0 || q > crate::chaos::MAX_RANK_ONE_ORDER) {
                    return fail("chaos orders must lie in 1..=12".into());
                }
                if self.kind == ExperimentKind::Theorem1 && self.bootstrap < 2 {
                    return fail("entry W1 errors need at least 2 bootstrap resamples".into());
                }
            }
            ExperimentKind::Theorem2 => {
                self.single_hurst()?;
                let d_max = *self.d_list.last().expect("nonempty");
                if self.d_list.iter().any(|d| d_max % d != 0) {
                    return fail("each d must divide the largest d (one shared grid)".into());
                }
                if self.grid_ratio == 0 || self.grid_ratio.saturating_mul(d_max) < 64 {
                    return fail("grid-ratio * max d must be at least 64".into());
                }
            }
            ExperimentKind::KernelDiag => {
                if self.hurst.is_empty() {
                    return fail("kernel-diag needs at least one Hurst index".into());
                }
                for &h in &self.hurst {
                    if !(h > 0.5 && h < 1.0) {
                        return fail(format!("Hurst index {h} must lie in (1/2, 1)"));
                    }
                }
                if self.cells < 64 || self.cells % 4 != 0 {
                    return fail("cells must be a multiple of 4 and at least 64".into());
                }
            }
        }
        Ok(())
    }

    /// Canonical JSON of the fields that determine the results (output
    /// directory and worker count excluded).
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        c.workers = 0;
        serde_json::to_string(&c).expect("config serializes")
    }

    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |e: &dyn std::fmt::Display| Error::Config(format!("{key} = {value}: {e}"));
        let int = |v: &str| v.trim().parse::<usize>().map_err(|e| bad(&e));
        let list = |v: &str| -> Result<Vec<usize>> { v.split(',').filter(|s| !s.trim().is_empty()).map(int).collect() };
        let float = |v: &str| v.trim().parse::<f64>().map_err(|e| bad(&e));
        match key {
            "n" => self.n = int(value)?,
            "d-list" => self.d_list = list(value)?,
            "orders" => self.orders = list(value)?,
            "hurst" => self.hurst = value.split(',').map(float).collect::<Result<_>>()?,
            "reps" => self.reps = int(value)?,
            "reference-reps" => self.reference_reps = int(value)?,
            "grid-ratio" => self.grid_ratio = int(value)?,
            "cells" => self.cells = int(value)?,
            "directions" => self.directions = int(value)?,
            "quantile-grid" => self.quantile_grid = int(value)?,
            "bootstrap" => self.bootstrap = int(value)?,
            "slope-tolerance" => self.slope_tolerance = float(value)?,
            "moment-tolerance" => self.moment_tolerance = float(value)?,
            "memory-cap-mb" => self.memory_cap_mb = int(value)?,
            "workers" => self.workers = int(value)?,
            "seed" => self.seed = value.trim().parse().map_err(|e| bad(&e))?,
            "out" => self.out = Some(PathBuf::from(value.trim())),
            "backend" => {
                self.backend = match value.trim() {
                    "circulant" => Backend::Circulant,
                    "causal" => Backend::Causal,
                    other => return Err(bad(&format!("unknown backend {other}"))),
                }
            }
            "theorem" => {
                self.kind = match value.trim() {
                    "1" => ExperimentKind::Theorem1,
                    "2" => ExperimentKind::Theorem2,
                    other => return Err(bad(&format!("theorem must be 1 or 2, got {other}"))),
                }
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }
}

/// Parse a flat config file: one `key = value` per line, `#` comments.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
        out.insert(k.trim().trim_start_matches("--").to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        for kind in [ExperimentKind::Theorem1, ExperimentKind::Theorem2, ExperimentKind::Moments, ExperimentKind::KernelDiag] {
            let mut c = ExperimentConfig::defaults(kind, 1);
            if kind == ExperimentKind::KernelDiag {
                c.hurst = vec![0.6, 0.9];
            }
            c.validate().unwrap();
        }
    }

    #[test]
    fn short_d_list_is_rejected() {
        let mut c = ExperimentConfig::defaults(ExperimentKind::Theorem1, 1);
        c.d_list = vec![64, 128];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.d_list = vec![64, 32, 128];
        assert!(c.validate().is_err());
    }

    #[test]
    fn theorem2_needs_nested_grid() {
        let mut c = ExperimentConfig::defaults(ExperimentKind::Theorem2, 1);
        c.d_list = vec![16, 24, 64];
        assert!(c.validate().is_err());
        c.d_list = vec![16, 32, 64];
        c.hurst = vec![0.4];
        assert!(c.validate().is_err());
    }

    #[test]
    fn flat_file_parsing() {
        let map = parse_config_text("# comment\nhurst = 0.9\n--reps=300 # trailing\n\n").unwrap();
        let mut c = ExperimentConfig::defaults(ExperimentKind::Theorem2, 3);
        for (k, v) in &map {
            c.set(k, v).unwrap();
        }
        assert_eq!(c.hurst, vec![0.9]);
        assert_eq!(c.reps, 300);
        assert!(parse_config_text("nonsense").is_err());
        assert!(c.set("bogus", "1").is_err());
        assert!(c.set("reps", "x").is_err());
    }

    #[test]
    fn fingerprint_ignores_workers_and_output() {
        let a = ExperimentConfig::defaults(ExperimentKind::Theorem2, 5);
        let mut b = a.clone();
        b.workers = 8;
        b.out = Some("elsewhere".into());
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.seed = 6;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
