//! Semi-discrete many-body Wigner kernel.
//!
//! For a potential `V` on the `n·d` configuration space the kernel at
//! position `x` and momentum offset `M'` (an integer vector) is
//!
//! ```text
//! V_W(x; M') = 1/(iħ) · L_C^{-n·d} ∫_{[-L_C/2, L_C/2]^{n·d}} e^{-2i(M'·Δp)·s/ħ} [V(x+s) − V(x−s)] ds
//! ```
//!
//! With `Δp = ħπ/L_C` the phase is `2π M'·s / L_C`. The bracket is odd in
//! `s`, so only the sine part survives and the kernel is real and odd in
//! `M'`. The creation rate is `γ(x) = Σ_{|M'_i| ≤ M_max} max(V_W(x; M'), 0)`
//! and creation offsets are drawn from `V_W⁺/γ`.
//!
//! Rows are integrated with composite trapezoid sums refined by Richardson
//! extrapolation (Romberg), starting from a fixed number of samples per
//! spatial cell along each axis.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use smallvec::SmallVec;

use crate::config::SimConfig;
use crate::error::{Error, KernelError, Result};

pub trait Potential: Send + Sync {
    /// Stable descriptive name; part of the kernel cache key.
    fn name(&self) -> String;

    /// Potential energy [eV] at the configuration `x` (one entry per degree of freedom).
    fn eval(&self, x: &[f64]) -> f64;

    /// Lets table construction skip quadrature entirely.
    fn is_zero(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPotential;

impl Potential for ZeroPotential {
    fn name(&self) -> String {
        "zero".into()
    }

    fn eval(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn is_zero(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantPotential(pub f64);

impl Potential for ConstantPotential {
    fn name(&self) -> String {
        format!("constant({:e})", self.0)
    }

    fn eval(&self, _x: &[f64]) -> f64 {
        self.0
    }
}

/// `height · exp(−(x − center)² / (2·width²))` acting on every body
/// separately, so `V(x₁, …, x_n) = Σ_i v(x_i)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBarrier {
    /// [eV]
    pub height: f64,
    /// [nm]
    pub center: f64,
    /// [nm]
    pub width: f64,
}

impl GaussianBarrier {
    pub fn single(&self, x: f64) -> f64 {
        let u = (x - self.center) / self.width;
        self.height * (-0.5 * u * u).exp()
    }
}

impl Potential for GaussianBarrier {
    fn name(&self) -> String {
        format!(
            "gaussian_barrier({:e},{:e},{:e})",
            self.height, self.center, self.width
        )
    }

    fn eval(&self, x: &[f64]) -> f64 {
        x.iter().map(|&xi| self.single(xi)).sum()
    }
}

/// Adapter for closures, mostly for tests.
pub struct FnPotential<F> {
    pub name: String,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> Potential for FnPotential<F> {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelOptions {
    /// Trapezoid samples per spatial cell along each `s`-axis at the first level.
    pub points_per_cell: usize,
    /// Largest accepted error estimate per entry [1/fs].
    pub abs_tol: f64,
    /// Refinement stops once the estimate drops below this fraction of the row maximum.
    pub rel_tol: f64,
    /// Number of interval halvings after the first level.
    pub max_refinements: usize,
    /// Eagerly built tables above this size fall back to on-demand rows [bytes].
    pub memory_budget: u64,
}

impl Default for KernelOptions {
    fn default() -> Self {
        KernelOptions {
            points_per_cell: 8,
            abs_tol: 1e-10,
            rel_tol: 1e-12,
            max_refinements: 10,
            memory_budget: 8 << 30,
        }
    }
}

/// Number of entries of a kernel row, `(2·M_max + 1)^{n·d}`.
pub fn row_len(cfg: &SimConfig) -> usize {
    cfg.momenta_per_axis().pow(cfg.n_dof() as u32)
}

/// Decodes a canonical row position into the offset vector `M'`.
///
/// Rows are ordered lexicographically in `(M'_1, …, M'_{n·d})`, each running
/// from `−M_max` to `+M_max`.
pub fn offset_of(index: usize, cfg: &SimConfig) -> SmallVec<[i32; 2]> {
    let nm = cfg.momenta_per_axis();
    let mut out: SmallVec<[i32; 2]> = SmallVec::from_elem(0, cfg.n_dof());
    let mut rest = index;
    for slot in out.iter_mut().rev() {
        *slot = (rest % nm) as i32 - cfg.m_max;
        rest /= nm;
    }
    out
}

pub fn index_of_offset(offset: &[i32], cfg: &SimConfig) -> usize {
    let nm = cfg.momenta_per_axis();
    offset
        .iter()
        .fold(0, |acc, &m| acc * nm + (m + cfg.m_max) as usize)
}

/// Composite spatial cell of a configuration, or `None` outside the domain.
pub fn spatial_index(x: &[f64], cfg: &SimConfig) -> Option<usize> {
    let ncell = cfg.cells_per_axis();
    x.iter().try_fold(0usize, |acc, &xi| {
        cfg.spatial_cell_of(xi).map(|c| acc * ncell + c)
    })
}

/// Configuration at the center of composite spatial cell `cell`.
pub fn cell_center(cell: usize, cfg: &SimConfig) -> SmallVec<[f64; 2]> {
    let ncell = cfg.cells_per_axis();
    let mut out: SmallVec<[f64; 2]> = SmallVec::from_elem(0.0, cfg.n_dof());
    let mut rest = cell;
    for slot in out.iter_mut().rev() {
        *slot = cfg.cell_center(rest % ncell);
        rest /= ncell;
    }
    out
}

/// Signed kernel values `V_W(x; M')` for every offset, in canonical order [1/fs].
pub fn kernel_row(
    potential: &dyn Potential,
    x: &[f64],
    cfg: &SimConfig,
    opts: &KernelOptions,
) -> Result<Vec<f64>, KernelError> {
    let cell = spatial_index(x, cfg).ok_or(KernelError::OutsideDomain)?;
    if potential.is_zero() {
        return Ok(vec![0.0; row_len(cfg)]);
    }
    match cfg.n_dof() {
        1 => row_1d(potential, x[0], cell, cfg, opts),
        2 => row_2d(potential, [x[0], x[1]], cell, cfg, opts),
        n => unimplemented!("kernel rows for {n} degrees of freedom"),
    }
}

fn base_intervals(span: f64, cfg: &SimConfig, opts: &KernelOptions) -> usize {
    ((opts.points_per_cell as f64 * span / cfg.spatial_cell).ceil() as usize).max(2)
}

/// Richardson step of a Romberg column: combines `prev` (coarser) into `cur`.
fn richardson(cur: &mut [f64], prev: &[f64], order: usize) {
    let factor = 4f64.powi(order as i32);
    for (c, p) in cur.iter_mut().zip(prev) {
        *c += (*c - p) / (factor - 1.0);
    }
}

/// Drives a Romberg table whose level-`l` trapezoid estimates are produced
/// by `trapezoid(l)`. Returns the converged extrapolated row.
fn romberg(
    cell: usize,
    opts: &KernelOptions,
    mut trapezoid: impl FnMut(usize) -> Vec<f64>,
) -> Result<Vec<f64>, KernelError> {
    let mut table: Vec<Vec<f64>> = vec![trapezoid(0)];
    let mut estimate = f64::INFINITY;
    for level in 1..=opts.max_refinements {
        let mut next = vec![trapezoid(level)];
        for order in 1..=level {
            let mut col = next[order - 1].clone();
            richardson(&mut col, &table[order - 1], order);
            next.push(col);
        }
        let best = &next[level];
        let prev_best = &table[level - 1];
        estimate = best
            .iter()
            .zip(prev_best)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = best.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        table = next;
        if level >= 2 && estimate <= (opts.rel_tol * scale).max(f64::MIN_POSITIVE) {
            return Ok(table.pop().unwrap());
        }
    }
    if estimate <= opts.abs_tol {
        Ok(table.pop().unwrap())
    } else {
        Err(KernelError::Quadrature {
            cell,
            estimate,
            tolerance: opts.abs_tol,
        })
    }
}

/// Fills `sin(j·θ)` for `j = 0..out.len()` by rotation.
fn sines(theta: f64, out: &mut [f64]) {
    let (s1, c1) = theta.sin_cos();
    let (mut s, mut c) = (0.0f64, 1.0f64);
    for slot in out.iter_mut() {
        *slot = s;
        let s_next = s * c1 + c * s1;
        c = c * c1 - s * s1;
        s = s_next;
    }
}

fn sincos_table(theta: f64, sin: &mut [f64], cos: &mut [f64]) {
    let (s1, c1) = theta.sin_cos();
    let (mut s, mut c) = (0.0f64, 1.0f64);
    for (ss, cc) in sin.iter_mut().zip(cos.iter_mut()) {
        *ss = s;
        *cc = c;
        let s_next = s * c1 + c * s1;
        c = c * c1 - s * s1;
        s = s_next;
    }
}

fn row_1d(
    potential: &dyn Potential,
    x: f64,
    cell: usize,
    cfg: &SimConfig,
    opts: &KernelOptions,
) -> Result<Vec<f64>, KernelError> {
    let lc = cfg.coherence_length;
    let half = 0.5 * lc;
    let m_max = cfg.m_max as usize;
    let k1 = 2.0 * PI / lc;
    let n0 = base_intervals(half, cfg, opts);
    // The integrand sin(k s)·[V(x+s) − V(x−s)] is even, so integrate [0, L_C/2] twice.
    let mut sums = vec![0.0; m_max + 1];
    let mut sin = vec![0.0; m_max + 1];
    let mut add = |s: f64, w: f64, sums: &mut [f64]| {
        let d = potential.eval(&[x + s]) - potential.eval(&[x - s]);
        if d == 0.0 {
            return;
        }
        sines(k1 * s, &mut sin);
        for (acc, sj) in sums.iter_mut().zip(&sin) {
            *acc += w * sj * d;
        }
    };
    let prefactor = -2.0 / (cfg.hbar * lc);
    let half_row = romberg(cell, opts, |level| {
        let n = n0 << level;
        let h = half / n as f64;
        if level == 0 {
            add(0.0, 0.5, &mut sums);
            add(half, 0.5, &mut sums);
            for i in 1..n {
                add(i as f64 * h, 1.0, &mut sums);
            }
        } else {
            for i in (1..n).step_by(2) {
                add(i as f64 * h, 1.0, &mut sums);
            }
        }
        sums.iter().map(|v| prefactor * v * h).collect()
    })?;

    let mut row = vec![0.0; 2 * m_max + 1];
    for j in 1..=m_max {
        row[m_max + j] = half_row[j];
        row[m_max - j] = -half_row[j];
    }
    Ok(row)
}

fn row_2d(
    potential: &dyn Potential,
    x: [f64; 2],
    cell: usize,
    cfg: &SimConfig,
    opts: &KernelOptions,
) -> Result<Vec<f64>, KernelError> {
    let lc = cfg.coherence_length;
    let half = 0.5 * lc;
    let m_max = cfg.m_max as usize;
    let nm = 2 * m_max + 1;
    let k1 = 2.0 * PI / lc;
    let n0 = base_intervals(half, cfg, opts);
    // sin(k·s) D(s) is even under s → −s: integrate s₁ ∈ [0, L_C/2] twice.
    let prefactor = -2.0 / (cfg.hbar * lc * lc);

    let half_row = romberg(cell, opts, |level| {
        let n = n0 << level;
        let h = half / n as f64;
        let mut sin1 = vec![0.0; m_max + 1];
        let mut cos1 = vec![0.0; m_max + 1];
        let mut sin2 = vec![0.0; m_max + 1];
        let mut cos2 = vec![0.0; m_max + 1];
        let mut row = vec![0.0; nm * nm];
        // Inner transforms along s₂ for each s₁ line.
        let mut c_part = vec![0.0; m_max + 1];
        let mut s_part = vec![0.0; m_max + 1];
        for i1 in 0..=n {
            let s1 = i1 as f64 * h;
            let w1 = if i1 == 0 || i1 == n { 0.5 } else { 1.0 };
            c_part.iter_mut().for_each(|v| *v = 0.0);
            s_part.iter_mut().for_each(|v| *v = 0.0);
            for i2 in 0..=2 * n {
                let s2 = -half + i2 as f64 * h;
                let w2 = if i2 == 0 || i2 == 2 * n { 0.5 } else { 1.0 };
                let d = potential.eval(&[x[0] + s1, x[1] + s2])
                    - potential.eval(&[x[0] - s1, x[1] - s2]);
                if d == 0.0 {
                    continue;
                }
                sincos_table(k1 * s2, &mut sin2, &mut cos2);
                let wd = w2 * d;
                for j2 in 0..=m_max {
                    c_part[j2] += wd * cos2[j2];
                    s_part[j2] += wd * sin2[j2];
                }
            }
            sincos_table(k1 * s1, &mut sin1, &mut cos1);
            // sin(a + b) = sin a cos b + cos a sin b, with negative indices by parity.
            for a in 0..nm {
                let j1 = a as i64 - m_max as i64;
                let (sa, ca) = (
                    j1.signum() as f64 * sin1[j1.unsigned_abs() as usize],
                    cos1[j1.unsigned_abs() as usize],
                );
                let base = a * nm;
                for b in 0..nm {
                    let j2 = b as i64 - m_max as i64;
                    let abs2 = j2.unsigned_abs() as usize;
                    let cb = c_part[abs2];
                    let sb = j2.signum() as f64 * s_part[abs2];
                    row[base + b] += w1 * (sa * cb + ca * sb);
                }
            }
        }
        row.iter().map(|v| prefactor * v * h * h).collect()
    })?;

    // Enforce exact oddness: V_W(−M') = −V_W(M').
    let mut row = half_row;
    let total = row.len();
    for i in 0..total / 2 {
        let v = 0.5 * (row[total - 1 - i] - row[i]);
        row[total - 1 - i] = v;
        row[i] = -v;
    }
    row[total / 2] = 0.0;
    Ok(row)
}

/// Positive part of one kernel row, stored sparsely with a running sum.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CellKernel {
    /// Canonical row positions of the strictly positive entries, ascending.
    pub offsets: Vec<u32>,
    /// `V_W⁺` at those positions [1/fs].
    pub values: Vec<f64>,
    /// Inclusive running sum of `values`; its last entry is `γ`.
    pub cumulative: Vec<f64>,
}

impl CellKernel {
    pub fn from_row(row: &[f64]) -> Self {
        let mut out = CellKernel::default();
        let mut acc = 0.0;
        for (i, &v) in row.iter().enumerate() {
            if v > 0.0 {
                acc += v;
                out.offsets.push(i as u32);
                out.values.push(v);
                out.cumulative.push(acc);
            }
        }
        out
    }

    pub fn gamma(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// Inverse-CDF lookup over the canonical offset order.
    pub fn sample(&self, u: f64) -> Option<u32> {
        let gamma = self.gamma();
        if gamma <= 0.0 {
            return None;
        }
        let target = u * gamma;
        let i = self.cumulative.partition_point(|&c| c <= target);
        Some(self.offsets[i.min(self.offsets.len() - 1)])
    }

    pub fn dense(&self, len: usize) -> Vec<f64> {
        let mut row = vec![0.0; len];
        for (&i, &v) in self.offsets.iter().zip(&self.values) {
            row[i as usize] = v;
        }
        row
    }
}

/// Per-cell positive kernel, creation rate and sampling table.
///
/// Built eagerly when it fits the memory budget; otherwise rows are computed
/// on first use and cached. Once filled, a cell never changes.
pub struct KernelTable {
    cfg: SimConfig,
    opts: KernelOptions,
    potential: Arc<dyn Potential>,
    cells: Vec<OnceLock<CellKernel>>,
    zero: bool,
    eager: bool,
}

impl std::fmt::Debug for KernelTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KernelTable")
            .field("potential", &self.potential.name())
            .field("cells", &self.cells.len())
            .field("zero", &self.zero)
            .field("eager", &self.eager)
            .finish()
    }
}

/// Estimated bytes of an eagerly built table (half of each row is positive).
pub fn estimated_table_bytes(cfg: &SimConfig) -> u64 {
    let cells = cfg.cells_per_axis().pow(cfg.n_dof() as u32) as u64;
    let per_entry = (4 + 8 + 8) as u64;
    cells * (row_len(cfg) as u64 / 2 + 1) * per_entry
}

/// Precomputes the kernel for every spatial cell.
pub fn build_table(
    potential: Arc<dyn Potential>,
    cfg: &SimConfig,
    opts: &KernelOptions,
) -> Result<KernelTable, KernelError> {
    let n_cells = cfg.cells_per_axis().pow(cfg.n_dof() as u32);
    if potential.is_zero() {
        return Ok(KernelTable {
            cfg: cfg.clone(),
            opts: *opts,
            potential,
            cells: Vec::new(),
            zero: true,
            eager: true,
        });
    }
    let eager = estimated_table_bytes(cfg) <= opts.memory_budget;
    let cells: Vec<OnceLock<CellKernel>> = if eager {
        (0..n_cells)
            .into_par_iter()
            .map(|cell| {
                let x = cell_center(cell, cfg);
                let row = kernel_row(potential.as_ref(), &x, cfg, opts)?;
                Ok(OnceLock::from(CellKernel::from_row(&row)))
            })
            .collect::<Result<Vec<_>, KernelError>>()?
    } else {
        (0..n_cells).map(|_| OnceLock::new()).collect()
    };
    Ok(KernelTable {
        cfg: cfg.clone(),
        opts: *opts,
        potential,
        cells,
        zero: false,
        eager,
    })
}

impl KernelTable {
    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn potential(&self) -> &dyn Potential {
        self.potential.as_ref()
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    pub fn is_eager(&self) -> bool {
        self.eager
    }

    pub fn n_cells(&self) -> usize {
        self.cfg.cells_per_axis().pow(self.cfg.n_dof() as u32)
    }

    /// Kernel of composite spatial cell `cell`, computing it on first use.
    pub fn cell(&self, cell: usize) -> Result<&CellKernel, KernelError> {
        static EMPTY: CellKernel = CellKernel {
            offsets: Vec::new(),
            values: Vec::new(),
            cumulative: Vec::new(),
        };
        if self.zero {
            return Ok(&EMPTY);
        }
        let slot = self.cells.get(cell).ok_or(KernelError::OutsideDomain)?;
        if let Some(k) = slot.get() {
            return Ok(k);
        }
        let x = cell_center(cell, &self.cfg);
        let row = kernel_row(self.potential.as_ref(), &x, &self.cfg, &self.opts)?;
        let _ = slot.set(CellKernel::from_row(&row));
        Ok(slot.get().expect("cell was just filled"))
    }

    /// Creation rate `γ` [1/fs] of the cell containing `x`.
    pub fn gamma(&self, x: &[f64]) -> Result<f64, KernelError> {
        let cell = spatial_index(x, &self.cfg).ok_or(KernelError::OutsideDomain)?;
        Ok(self.cell(cell)?.gamma())
    }

    /// Draws a momentum offset with probability `V_W⁺/γ` by inverse CDF.
    pub fn sample_offset(&self, x: &[f64], u: f64) -> Result<SmallVec<[i32; 2]>, KernelError> {
        let cell = spatial_index(x, &self.cfg).ok_or(KernelError::OutsideDomain)?;
        let index = self
            .cell(cell)?
            .sample(u)
            .ok_or(KernelError::NoCreation { cell })?;
        Ok(offset_of(index as usize, &self.cfg))
    }

    /// Dense `V_W⁺` row of a cell in canonical order.
    pub fn positive_row(&self, cell: usize) -> Result<Vec<f64>, KernelError> {
        Ok(self.cell(cell)?.dense(row_len(&self.cfg)))
    }

    /// Cache key of `(potential name, configuration, options)`.
    pub fn cache_key(potential: &dyn Potential, cfg: &SimConfig, opts: &KernelOptions) -> u64 {
        let mut h = Sha256::new();
        h.update(potential.name().as_bytes());
        h.update([0u8]);
        // Only the fields that enter the kernel.
        for v in [
            cfg.domain_length,
            cfg.spatial_cell,
            cfg.coherence_length,
            cfg.hbar,
            opts.abs_tol,
            opts.rel_tol,
        ] {
            h.update(v.to_le_bytes());
        }
        for v in [
            cfg.n_bodies as u64,
            cfg.dim as u64,
            cfg.m_max as u64,
            opts.points_per_cell as u64,
            opts.max_refinements as u64,
        ] {
            h.update(v.to_le_bytes());
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    /// Writes the table as `magic, version, key, cells, row length` followed
    /// by every dense `V_W⁺` row, all little-endian.
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let key = Self::cache_key(self.potential.as_ref(), &self.cfg, &self.opts);
        let len = row_len(&self.cfg);
        let n_cells = if self.zero { 0 } else { self.n_cells() };
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
        put(CACHE_MAGIC)?;
        put(&CACHE_VERSION.to_le_bytes())?;
        put(&key.to_le_bytes())?;
        put(&(n_cells as u64).to_le_bytes())?;
        put(&(len as u64).to_le_bytes())?;
        for cell in 0..n_cells {
            for v in self.positive_row(cell)? {
                put(&v.to_le_bytes())?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Loads a cache written by [`KernelTable::write_cache`], refusing files
    /// whose key does not match `(potential, cfg, opts)`.
    pub fn read_cache(
        path: &Path,
        potential: Arc<dyn Potential>,
        cfg: &SimConfig,
        opts: &KernelOptions,
    ) -> Result<KernelTable> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
        if &magic != CACHE_MAGIC {
            return Err(KernelError::Cache("bad magic".into()).into());
        }
        let mut word = [0u8; 8];
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
        if u32::from_le_bytes(u32buf) != CACHE_VERSION {
            return Err(KernelError::Cache("unsupported version".into()).into());
        }
        let mut next_u64 = |r: &mut BufReader<File>| -> Result<u64> {
            r.read_exact(&mut word).map_err(|e| Error::io(path, e))?;
            Ok(u64::from_le_bytes(word))
        };
        let key = next_u64(&mut r)?;
        if key != Self::cache_key(potential.as_ref(), cfg, opts) {
            return Err(KernelError::Cache("key does not match potential and configuration".into()).into());
        }
        let n_cells = next_u64(&mut r)? as usize;
        let len = next_u64(&mut r)? as usize;
        if len != row_len(cfg) {
            return Err(KernelError::Cache("row length mismatch".into()).into());
        }
        let zero = n_cells == 0;
        let expected = cfg.cells_per_axis().pow(cfg.n_dof() as u32);
        if !zero && n_cells != expected {
            return Err(KernelError::Cache("cell count mismatch".into()).into());
        }
        let mut cells = Vec::with_capacity(n_cells);
        let mut row = vec![0.0; len];
        let mut buf = vec![0u8; 8 * len];
        for _ in 0..n_cells {
            r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
            for (v, chunk) in row.iter_mut().zip(buf.chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().unwrap());
            }
            cells.push(OnceLock::from(CellKernel::from_row(&row)));
        }
        Ok(KernelTable {
            cfg: cfg.clone(),
            opts: *opts,
            potential,
            cells,
            zero,
            eager: true,
        })
    }
}

const CACHE_MAGIC: &[u8; 4] = b"SPWK";
const CACHE_VERSION: u32 = 1;

/// Loads the table from `dir` if a matching cache exists, otherwise builds
/// it and writes the cache (eager tables only).
pub fn load_or_build(
    potential: Arc<dyn Potential>,
    cfg: &SimConfig,
    opts: &KernelOptions,
    dir: &Path,
) -> Result<KernelTable> {
    let key = KernelTable::cache_key(potential.as_ref(), cfg, opts);
    let path = dir.join(format!("kernel-{key:016x}.bin"));
    if path.exists() {
        if let Ok(table) = KernelTable::read_cache(&path, potential.clone(), cfg, opts) {
            return Ok(table);
        }
    }
    let table = build_table(potential, cfg, opts)?;
    if table.is_eager() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        table.write_cache(&path)?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_body() -> SimConfig {
        SimConfig {
            n_bodies: 1,
            m_max: 16,
            ..SimConfig::default()
        }
    }

    fn barrier() -> GaussianBarrier {
        GaussianBarrier {
            height: 0.3,
            center: 25.0,
            width: 1.0,
        }
    }

    #[test]
    fn constant_potential_has_zero_kernel() {
        let cfg = one_body();
        let row = kernel_row(&ConstantPotential(1.7), &[12.3], &cfg, &KernelOptions::default()).unwrap();
        assert!(row.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_potential_has_zero_rate() {
        let cfg = SimConfig::default();
        let t = build_table(Arc::new(ZeroPotential), &cfg, &KernelOptions::default()).unwrap();
        assert!(t.is_zero());
        assert_eq!(t.gamma(&[3.0, 40.0]).unwrap(), 0.0);
        assert!(matches!(
            t.sample_offset(&[3.0, 40.0], 0.3),
            Err(KernelError::NoCreation { .. })
        ));
        assert!(matches!(t.gamma(&[-1.0, 40.0]), Err(KernelError::OutsideDomain)));
    }

    #[test]
    fn row_is_odd_in_offset() {
        let cfg = one_body();
        let row = kernel_row(&barrier(), &[24.0], &cfg, &KernelOptions::default()).unwrap();
        let n = row.len();
        for i in 0..n {
            assert_eq!(row[i], -row[n - 1 - i]);
        }
        assert!(row.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn even_potential_about_x_gives_zero_kernel() {
        let cfg = one_body();
        let row = kernel_row(&barrier(), &[25.0], &cfg, &KernelOptions::default()).unwrap();
        assert!(row.iter().all(|&v| v.abs() < 1e-15), "{row:?}");
    }

    #[test]
    fn gamma_sums_positive_part() {
        let cfg = one_body();
        let opts = KernelOptions::default();
        let table = build_table(Arc::new(barrier()), &cfg, &opts).unwrap();
        for cell in 0..table.n_cells() {
            let x = cell_center(cell, &cfg);
            let row = kernel_row(&barrier(), &x, &cfg, &opts).unwrap();
            let expected = row.iter().fold(0.0, |acc, &v| if v > 0.0 { acc + v } else { acc });
            assert_eq!(table.gamma(&x).unwrap(), expected);
            let k = table.cell(cell).unwrap();
            if k.gamma() > 0.0 {
                let total: f64 = k.values.iter().sum::<f64>() / k.gamma();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_distribution_always_returns_its_offset() {
        let mut row = vec![0.0; 5];
        row[3] = 0.7;
        let k = CellKernel::from_row(&row);
        for u in [0.0, 0.2, 0.5, 0.999_999] {
            assert_eq!(k.sample(u), Some(3));
        }
    }

    #[test]
    fn two_equal_entries_split_at_half() {
        let mut row = vec![0.0; 7];
        row[1] = 0.25;
        row[5] = 0.25;
        let k = CellKernel::from_row(&row);
        assert_eq!(k.sample(0.0), Some(1));
        assert_eq!(k.sample(0.4999), Some(1));
        assert_eq!(k.sample(0.5), Some(5));
        assert_eq!(k.sample(0.9999), Some(5));
    }

    #[test]
    fn builds_are_bit_identical() {
        let cfg = one_body();
        let opts = KernelOptions::default();
        let a = build_table(Arc::new(barrier()), &cfg, &opts).unwrap();
        let b = build_table(Arc::new(barrier()), &cfg, &opts).unwrap();
        for cell in 0..a.n_cells() {
            assert_eq!(a.cell(cell).unwrap(), b.cell(cell).unwrap());
        }
    }

    #[test]
    fn refinement_changes_rows_below_tolerance() {
        let cfg = one_body();
        let coarse = KernelOptions::default();
        let fine = KernelOptions {
            points_per_cell: 16,
            ..coarse
        };
        for x in [5.25, 14.75, 24.0, 31.25] {
            let a = kernel_row(&barrier(), &[x], &cfg, &coarse).unwrap();
            let b = kernel_row(&barrier(), &[x], &cfg, &fine).unwrap();
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < coarse.abs_tol, "{x}: {u} vs {v}");
            }
        }
    }

    #[test]
    fn quadrature_failure_reports_the_cell() {
        let cfg = one_body();
        let opts = KernelOptions {
            points_per_cell: 1,
            max_refinements: 1,
            abs_tol: 1e-30,
            ..KernelOptions::default()
        };
        let err = kernel_row(&barrier(), &[20.25], &cfg, &opts).unwrap_err();
        assert!(matches!(err, KernelError::Quadrature { cell: 40, .. }), "{err:?}");
    }

    #[test]
    fn over_budget_tables_fill_lazily() {
        let cfg = one_body();
        let opts = KernelOptions {
            memory_budget: 0,
            ..KernelOptions::default()
        };
        let lazy = build_table(Arc::new(barrier()), &cfg, &opts).unwrap();
        assert!(!lazy.is_eager());
        let eager = build_table(Arc::new(barrier()), &cfg, &KernelOptions::default()).unwrap();
        assert_eq!(lazy.gamma(&[23.2]).unwrap(), eager.gamma(&[23.2]).unwrap());
    }

    #[test]
    fn cache_round_trip() {
        let cfg = SimConfig {
            n_bodies: 1,
            m_max: 8,
            spatial_cell: 2.5,
            ..SimConfig::default()
        };
        let opts = KernelOptions::default();
        let pot: Arc<dyn Potential> = Arc::new(barrier());
        let dir = tempfile::tempdir().unwrap();
        let built = load_or_build(pot.clone(), &cfg, &opts, dir.path()).unwrap();
        let loaded = load_or_build(pot.clone(), &cfg, &opts, dir.path()).unwrap();
        for cell in 0..built.n_cells() {
            assert_eq!(built.cell(cell).unwrap(), loaded.cell(cell).unwrap());
        }
        // A different potential must not pick up the cached file.
        let path = std::fs::read_dir(dir.path()).unwrap().next().unwrap().unwrap().path();
        let other: Arc<dyn Potential> = Arc::new(GaussianBarrier { height: 0.2, ..barrier() });
        assert!(KernelTable::read_cache(&path, other, &cfg, &opts).is_err());
    }
}
