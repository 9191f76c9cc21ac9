//! Reduced one-body distributions and the entanglement metrics.
//!
//! Snapshot file:
//!
//! ```text
//! t=<fs> nx=<int> nm=<int> dx=<nm> dp=<eV.fs/nm>
//! <x_index> <m_index> <value>
//! ...
//! ```
//!
//! with one row per cell in row-major order (`x_index` outer, `m_index`
//! inner). `x_index` counts spatial cells from zero; `m_index` is the signed
//! momentum index `M ∈ [−M_max, M_max]`. Values are written in shortest
//! round-trip form.
//!
//! Metric log: one line `t nu amplitude particles` per epoch.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::phase_space::Ensemble;

/// Which bodies contribute to the reduced distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BodySelection {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    Both,
}

/// Which partner states a body's contribution is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartnerFilter {
    /// Integrate over the partner completely.
    Any,
    /// Count a body only while its partner moves forward (`M > 0`).
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReduceOptions {
    pub body: BodySelection,
    pub partner: PartnerFilter,
}

impl Default for ReduceOptions {
    fn default() -> Self {
        ReduceOptions {
            body: BodySelection::Both,
            partner: PartnerFilter::Forward,
        }
    }
}

/// Signed one-body distribution on the `(x-cell, M)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedDistribution {
    pub t: f64,
    pub nx: usize,
    pub m_max: i32,
    /// Spatial cell width [nm].
    pub dx: f64,
    /// Momentum step [eV·fs/nm].
    pub dp: f64,
    /// Row-major values, `x` outer, `M` inner.
    pub values: Vec<f64>,
    /// Factor applied to the raw signed counts.
    pub scale: f64,
}

impl ReducedDistribution {
    pub fn nm(&self) -> usize {
        (2 * self.m_max + 1) as usize
    }

    pub fn get(&self, x_index: usize, m: i32) -> f64 {
        self.values[x_index * self.nm() + (m + self.m_max) as usize]
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx * self.dp
    }

    /// Rescales so that `Σ f · dx·dp = 1`.
    pub fn normalize(&mut self) -> Result<()> {
        let total: f64 = self.values.iter().sum::<f64>() * self.cell_volume();
        if total == 0.0 || !total.is_finite() {
            return Err(Error::ZeroDistribution);
        }
        for v in &mut self.values {
            *v /= total;
        }
        self.scale /= total;
        Ok(())
    }
}

/// Histograms the ensemble onto the one-body grid and normalizes to unit
/// signed integral.
///
/// For two bodies, every selected body contributes the particle's sign at its
/// own `(x, M)`; with [`PartnerFilter::Forward`] only while the other body
/// has `M > 0`. A one-body ensemble is histogrammed directly.
pub fn reduce(e: &Ensemble, cfg: &SimConfig, opts: &ReduceOptions) -> Result<ReducedDistribution> {
    if e.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let nx = cfg.cells_per_axis();
    let nm = cfg.momenta_per_axis();
    let bodies: &[usize] = match (cfg.n_dof(), opts.body) {
        (1, _) => &[0],
        (_, BodySelection::One) => &[0],
        (_, BodySelection::Two) => &[1],
        (_, BodySelection::Both) => &[0, 1],
    };
    let bin = |e_x: f64, m: i32| -> Result<usize> {
        let c = cfg
            .spatial_cell_of(e_x)
            .ok_or(Error::OutOfDomain { x: e_x, length: cfg.domain_length })?;
        if m.abs() > cfg.m_max {
            return Err(Error::MomentumOutOfRange { index: m, m_max: cfg.m_max });
        }
        Ok(c * nm + (m + cfg.m_max) as usize)
    };

    // Integer counts, so the merge order cannot change the result.
    let counts: Vec<i64> = e
        .particles
        .par_chunks(1 << 14)
        .map(|chunk| -> Result<Vec<i64>> {
            let mut h = vec![0i64; nx * nm];
            for p in chunk {
                for &b in bodies {
                    if cfg.n_dof() == 2 && opts.partner == PartnerFilter::Forward && p.m[1 - b] <= 0 {
                        continue;
                    }
                    h[bin(p.x[b], p.m[b])?] += p.sign.value();
                }
            }
            Ok(h)
        })
        .try_reduce(
            || vec![0i64; nx * nm],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;

    let mut r = ReducedDistribution {
        t: e.t,
        nx,
        m_max: cfg.m_max,
        dx: cfg.spatial_cell,
        dp: cfg.momentum_step(),
        values: counts.iter().map(|&c| c as f64).collect(),
        scale: 1.0,
    };
    r.normalize()?;
    Ok(r)
}

/// `ν = Σ max(−f, 0) / Σ |f|`.
pub fn negativity(r: &ReducedDistribution) -> Result<f64> {
    let (neg, abs) = r
        .values
        .iter()
        .fold((0.0, 0.0), |(n, a), &v| (n + (-v).max(0.0), a + v.abs()));
    if abs == 0.0 {
        return Err(Error::ZeroDistribution);
    }
    Ok(neg / abs)
}

/// `max − min` of `f` along `M` in the column containing `x_mid` [nm].
pub fn amplitude(r: &ReducedDistribution, x_mid: f64) -> Result<f64> {
    let c = (x_mid / r.dx).floor();
    if !(c >= 0.0) || c as usize >= r.nx {
        return Err(Error::OutOfDomain { x: x_mid, length: r.dx * r.nx as f64 });
    }
    let column = &r.values[c as usize * r.nm()..(c as usize + 1) * r.nm()];
    let max = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = column.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}

pub fn snapshot_write(r: &ReducedDistribution, path: &Path) -> Result<()> {
    let mut s = String::with_capacity(r.values.len() * 24 + 80);
    writeln!(s, "t={} nx={} nm={} dx={} dp={}", r.t, r.nx, r.nm(), r.dx, r.dp).unwrap();
    for i in 0..r.nx {
        for j in 0..r.nm() {
            let m = j as i32 - r.m_max;
            writeln!(s, "{i} {m} {:e}", r.values[i * r.nm() + j]).unwrap();
        }
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn snapshot_read(path: &Path) -> Result<ReducedDistribution> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::Format { what: "snapshot", path: path.to_path_buf(), reason };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let field = |key: &str| -> Result<&str> {
        header
            .split_whitespace()
            .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
            .ok_or_else(|| bad(format!("header lacks {key}")))
    };
    let num = |key: &str| -> Result<f64> {
        field(key)?.parse().map_err(|e| bad(format!("{key}: {e}")))
    };
    let t = num("t")?;
    let dx = num("dx")?;
    let dp = num("dp")?;
    let nx: usize = field("nx")?.parse().map_err(|e| bad(format!("nx: {e}")))?;
    let nm: usize = field("nm")?.parse().map_err(|e| bad(format!("nm: {e}")))?;
    if nm % 2 == 0 {
        return Err(bad(format!("nm = {nm} must be odd")));
    }
    let m_max = (nm / 2) as i32;
    let mut values = Vec::with_capacity(nx * nm);
    for (row, line) in lines.enumerate() {
        let mut cols = line.split_whitespace();
        let (Some(i), Some(m), Some(v), None) = (cols.next(), cols.next(), cols.next(), cols.next()) else {
            return Err(bad(format!("row {row}: expected 3 columns")));
        };
        let want = (row / nm, (row % nm) as i32 - m_max);
        if i.parse::<usize>().ok() != Some(want.0) || m.parse::<i32>().ok() != Some(want.1) {
            return Err(bad(format!("row {row}: expected indices {} {}", want.0, want.1)));
        }
        values.push(v.parse().map_err(|e| bad(format!("row {row}: {e}")))?);
    }
    if values.len() != nx * nm {
        return Err(bad(format!("{} rows, expected {}", values.len(), nx * nm)));
    }
    Ok(ReducedDistribution { t, nx, m_max, dx, dp, values, scale: 1.0 })
}

/// One line of the metric log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub t: f64,
    pub nu: f64,
    pub amplitude: f64,
    pub particles: usize,
}

impl MetricRow {
    pub fn measure(e: &Ensemble, cfg: &SimConfig, opts: &ReduceOptions, x_mid: f64) -> Result<(Self, ReducedDistribution)> {
        let r = reduce(e, cfg, opts)?;
        let row = MetricRow {
            t: e.t,
            nu: negativity(&r)?,
            amplitude: amplitude(&r, x_mid)?,
            particles: e.len(),
        };
        Ok((row, r))
    }

    pub fn to_line(&self) -> String {
        format!("{} {:e} {:e} {}", self.t, self.nu, self.amplitude, self.particles)
    }

    pub fn parse(line: &str) -> Option<Self> {
        let mut cols = line.split_whitespace();
        let row = MetricRow {
            t: cols.next()?.parse().ok()?,
            nu: cols.next()?.parse().ok()?,
            amplitude: cols.next()?.parse().ok()?,
            particles: cols.next()?.parse().ok()?,
        };
        cols.next().is_none().then_some(row)
    }
}

pub fn metric_log_write(rows: &[MetricRow], path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in rows {
        writeln!(f, "{}", r.to_line()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn metric_log_read(path: &Path) -> Result<Vec<MetricRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            MetricRow::parse(l).ok_or_else(|| Error::Format {
                what: "metric log",
                path: path.to_path_buf(),
                reason: format!("line {}: expected `t nu amplitude particles`", i + 1),
            })
        })
        .collect()
}
