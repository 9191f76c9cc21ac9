//! Initial quasi-distributions and deterministic ensemble seeding.
//!
//! Densities are evaluated on positions [nm] and wavenumbers `k = p/ħ`
//! [nm⁻¹]; a particle with momentum index `M` has `k = M·π/L_C`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::phase_space::{Ensemble, Sign, SignedParticle};

/// Parameters of the entangled two-body quasi-distribution: a product of two
/// Gaussian packets plus a cross term oscillating in both momenta.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntangledParams {
    /// Packet centers [nm].
    pub x1_0: f64,
    pub x2_0: f64,
    /// Packet center wavenumbers [nm⁻¹].
    pub p1_0: f64,
    pub p2_0: f64,
    /// Spatial dispersions [nm].
    pub sigma1_x: f64,
    pub sigma2_x: f64,
    /// Wavenumber dispersions [nm⁻¹].
    pub sigma1_p: f64,
    pub sigma2_p: f64,
    /// Decay scale of the cross term in `|k − k₀|` [nm⁻¹].
    pub sigma0: f64,
    /// Spatial width of the cross term [nm].
    pub sigma_ent_x: f64,
    /// Oscillation scale of the cross term [nm⁻¹].
    pub sigma_ent_p: f64,
    /// Overall normalization constant.
    pub c: f64,
}

impl EntangledParams {
    /// Packets at 15 nm and 35 nm at rest, `σˣ = 3 nm`, `σᵖ = 1/3 nm⁻¹`,
    /// `σ₀ = 0.75 nm⁻¹`, with the given cross-term widths. `σ_entᵖ` is given in
    /// multiples of the wavenumber step of `cfg`. `C` is set so that the
    /// signed grid integral is one.
    pub fn experiment(sigma_ent_x: f64, sigma_ent_p_steps: f64, cfg: &SimConfig) -> Self {
        EntangledParams {
            x1_0: 15.0,
            x2_0: 35.0,
            p1_0: 0.0,
            p2_0: 0.0,
            sigma1_x: 3.0,
            sigma2_x: 3.0,
            sigma1_p: 1.0 / 3.0,
            sigma2_p: 1.0 / 3.0,
            sigma0: 0.75,
            sigma_ent_x,
            sigma_ent_p: sigma_ent_p_steps * cfg.wavenumber_step(),
            c: 1.0,
        }
        .normalized(cfg)
    }

    /// Copy with `C` chosen so that `Σ_grid f · (dx·Δp)² = 1`.
    pub fn normalized(mut self, cfg: &SimConfig) -> Self {
        self.c = 1.0;
        let grid = PhaseGrid::new(cfg);
        let gx = |x0: f64, s: f64| grid.x.iter().map(|&x| gauss(x, x0, s)).sum::<f64>();
        let gk = |k0: f64, s: f64| grid.k.iter().map(|&k| gauss(k, k0, s)).sum::<f64>();
        let product = gx(self.x1_0, self.sigma1_x)
            * gk(self.p1_0, self.sigma1_p)
            * gx(self.x2_0, self.sigma2_x)
            * gk(self.p2_0, self.sigma2_p);
        let cross_x = gx(self.x1_0, self.sigma_ent_x) * gx(self.x2_0, self.sigma_ent_x);
        let cross_k: f64 = grid
            .k
            .iter()
            .map(|&k1| grid.k.iter().map(|&k2| self.cross_momentum(k1, k2)).sum::<f64>())
            .sum();
        let vol = cfg.cell_volume().powi(2);
        self.c = 1.0 / ((product + cross_x * cross_k) * vol);
        self
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("sigma1_x", self.sigma1_x),
            ("sigma2_x", self.sigma2_x),
            ("sigma1_p", self.sigma1_p),
            ("sigma2_p", self.sigma2_p),
            ("sigma0", self.sigma0),
            ("sigma_ent_x", self.sigma_ent_x),
            ("sigma_ent_p", self.sigma_ent_p),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                out.push(format!("initial.{name} = {v} must be positive"));
            }
        }
        if !(self.c > 0.0) || !self.c.is_finite() {
            out.push(format!("initial.c = {} must be positive", self.c));
        }
        out
    }

    /// `e^{−|k−k₀|/σ₀} · 2 sin((k₁−k₁⁰)/σ_entᵖ) · 2 sin((k₂−k₂⁰)/σ_entᵖ)`.
    fn cross_momentum(&self, k1: f64, k2: f64) -> f64 {
        let d1 = k1 - self.p1_0;
        let d2 = k2 - self.p2_0;
        (-(d1 * d1 + d2 * d2).sqrt() / self.sigma0).exp()
            * 2.0
            * (d1 / self.sigma_ent_p).sin()
            * 2.0
            * (d2 / self.sigma_ent_p).sin()
    }
}

/// `exp(−((v − center)/σ)²)`.
fn gauss(v: f64, center: f64, sigma: f64) -> f64 {
    let u = (v - center) / sigma;
    (-u * u).exp()
}

/// Entangled two-body quasi-distribution at `(x₁, x₂; k₁, k₂)`. May be negative.
pub fn eval_entangled_f0(x1: f64, x2: f64, k1: f64, k2: f64, q: &EntangledParams) -> f64 {
    let product = q.c
        * gauss(x1, q.x1_0, q.sigma1_x)
        * gauss(k1, q.p1_0, q.sigma1_p)
        * gauss(x2, q.x2_0, q.sigma2_x)
        * gauss(k2, q.p2_0, q.sigma2_p);
    let cross = q.c
        * gauss(x1, q.x1_0, q.sigma_ent_x)
        * gauss(x2, q.x2_0, q.sigma_ent_x)
        * q.cross_momentum(k1, k2);
    product + cross
}

/// Two Gaussian packets at `±x₀` moving apart with wavenumbers `±p₀`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPacketParams {
    /// Half separation of the packets [nm].
    pub x0: f64,
    /// Packet wavenumber [nm⁻¹].
    pub p0: f64,
    /// Packet width [nm].
    pub sigma: f64,
    /// Where the origin of the pair sits inside the domain [nm].
    pub center: f64,
}

impl TwoPacketParams {
    pub fn violations(&self) -> Vec<String> {
        if self.sigma > 0.0 && self.sigma.is_finite() {
            Vec::new()
        } else {
            vec![format!("initial.sigma = {} must be positive", self.sigma)]
        }
    }
}

/// Two-packet Wigner function at `(x, k)` relative to the pair's origin:
///
/// ```text
/// (1/h) [ e^{−(x−x₀)²/2σ² − 2σ²(k−p₀)²} + e^{−(x+x₀)²/2σ² − 2σ²(k+p₀)²}
///         + 2 e^{−x²/2σ² − 2σ²k²} cos(x₀ k) ]
/// ```
///
/// with `h = 2π` in wavenumber units. The last term is the interference
/// between the packets and takes both signs.
pub fn eval_two_packet(x: f64, k: f64, q: &TwoPacketParams) -> f64 {
    let s2 = q.sigma * q.sigma;
    let packet = |xc: f64, kc: f64| {
        (-(x - xc) * (x - xc) / (2.0 * s2) - 2.0 * s2 * (k - kc) * (k - kc)).exp()
    };
    let interference = 2.0 * (-x * x / (2.0 * s2) - 2.0 * s2 * k * k).exp() * (q.x0 * k).cos();
    (packet(q.x0, q.p0) + packet(-q.x0, -q.p0) + interference) / (2.0 * PI)
}

/// Cell centers and wavenumbers of the semi-discrete grid along one axis.
#[derive(Debug, Clone)]
pub struct PhaseGrid {
    /// Spatial cell centers [nm].
    pub x: Vec<f64>,
    /// Wavenumbers `M·π/L_C` for `M = −M_max..=M_max` [nm⁻¹].
    pub k: Vec<f64>,
    pub m_max: i32,
}

impl PhaseGrid {
    pub fn new(cfg: &SimConfig) -> Self {
        PhaseGrid {
            x: (0..cfg.cells_per_axis()).map(|c| cfg.cell_center(c)).collect(),
            k: (-cfg.m_max..=cfg.m_max)
                .map(|m| f64::from(m) * cfg.wavenumber_step())
                .collect(),
            m_max: cfg.m_max,
        }
    }

    pub fn nx(&self) -> usize {
        self.x.len()
    }

    pub fn nk(&self) -> usize {
        self.k.len()
    }
}

/// A quasi-distribution that can be tabulated on the phase-space grid.
///
/// The grid is traversed in canonical cell order (all positions, then all
/// momenta, each lexicographic). A slab fixes the first spatial cell.
pub trait PhaseSpaceDensity: Sync {
    fn n_dof(&self) -> usize;

    /// Value at positions `x` [nm] and wavenumbers `k` [nm⁻¹].
    fn value(&self, x: &[f64], k: &[f64]) -> f64;

    /// Values of every cell whose first spatial cell is `c0`, in canonical
    /// order, written to `out` (cleared first).
    fn slab(&self, grid: &PhaseGrid, c0: usize, out: &mut Vec<f64>) {
        out.clear();
        match self.n_dof() {
            1 => out.extend(grid.k.iter().map(|&k| self.value(&[grid.x[c0]], &[k]))),
            2 => {
                for &x2 in &grid.x {
                    for &k1 in &grid.k {
                        for &k2 in &grid.k {
                            out.push(self.value(&[grid.x[c0], x2], &[k1, k2]));
                        }
                    }
                }
            }
            n => unimplemented!("grids with {n} degrees of freedom"),
        }
    }
}

/// [`eval_entangled_f0`] as a two-body density.
#[derive(Debug, Clone, Copy)]
pub struct EntangledDensity(pub EntangledParams);

impl PhaseSpaceDensity for EntangledDensity {
    fn n_dof(&self) -> usize {
        2
    }

    fn value(&self, x: &[f64], k: &[f64]) -> f64 {
        eval_entangled_f0(x[0], x[1], k[0], k[1], &self.0)
    }

    // Separable evaluation: the product and cross terms factor into
    // per-axis tables, which makes a full 4-D sweep cheap.
    fn slab(&self, grid: &PhaseGrid, c0: usize, out: &mut Vec<f64>) {
        let q = &self.0;
        let x1 = grid.x[c0];
        let g1 = q.c * gauss(x1, q.x1_0, q.sigma1_x);
        let e1 = q.c * gauss(x1, q.x1_0, q.sigma_ent_x);
        let gk1: Vec<f64> = grid.k.iter().map(|&k| gauss(k, q.p1_0, q.sigma1_p)).collect();
        let gk2: Vec<f64> = grid.k.iter().map(|&k| gauss(k, q.p2_0, q.sigma2_p)).collect();
        let nk = grid.nk();
        let mut cross = Vec::with_capacity(nk * nk);
        for &k1 in &grid.k {
            for &k2 in &grid.k {
                cross.push(q.cross_momentum(k1, k2));
            }
        }
        out.clear();
        out.reserve(grid.nx() * nk * nk);
        for &x2 in &grid.x {
            let g = g1 * gauss(x2, q.x2_0, q.sigma2_x);
            let e = e1 * gauss(x2, q.x2_0, q.sigma_ent_x);
            for a in 0..nk {
                let gp = g * gk1[a];
                let row = &cross[a * nk..(a + 1) * nk];
                for b in 0..nk {
                    out.push(gp * gk2[b] + e * row[b]);
                }
            }
        }
    }
}

/// [`eval_two_packet`] as a one-body density, shifted to `center`.
#[derive(Debug, Clone, Copy)]
pub struct TwoPacketDensity(pub TwoPacketParams);

impl PhaseSpaceDensity for TwoPacketDensity {
    fn n_dof(&self) -> usize {
        1
    }

    fn value(&self, x: &[f64], k: &[f64]) -> f64 {
        eval_two_packet(x[0] - self.0.center, k[0], &self.0)
    }
}

/// Places particles at cell centers in proportion to `|f|`.
///
/// Cell `j` receives `round(N·|f_j|/Σ|f|)` particles carrying `sign(f_j)`;
/// cells rounding to zero are skipped. The returned ensemble records
/// `A = Σ f_j · (cell volume)` as its normalization.
pub fn seed_ensemble(
    f0: &dyn PhaseSpaceDensity,
    n_target: usize,
    cfg: &SimConfig,
) -> Result<Ensemble> {
    assert_eq!(f0.n_dof(), cfg.n_dof(), "density and configuration disagree on n·d");
    let grid = PhaseGrid::new(cfg);
    let nx = grid.nx();

    let sums: Vec<(f64, f64)> = (0..nx)
        .into_par_iter()
        .map_init(Vec::new, |buf, c0| {
            f0.slab(&grid, c0, buf);
            buf.iter().fold((0.0, 0.0), |(a, s), &v| (a + v.abs(), s + v))
        })
        .collect();
    let (abs_total, signed_total) = sums
        .iter()
        .fold((0.0, 0.0), |(a, s), &(da, ds)| (a + da, s + ds));
    if !(abs_total > 0.0) {
        return Err(Error::EmptyInitialState);
    }
    let scale = n_target as f64 / abs_total;

    let slabs: Vec<Vec<SignedParticle>> = (0..nx)
        .into_par_iter()
        .map_init(Vec::new, |buf, c0| {
            f0.slab(&grid, c0, buf);
            place_slab(buf, c0, &grid, cfg, scale)
        })
        .collect();

    let mut ensemble = Ensemble::new(slabs.into_iter().flatten().collect());
    ensemble.normalization = signed_total * cfg.cell_volume().powi(cfg.n_dof() as i32);
    Ok(ensemble)
}

fn place_slab(
    values: &[f64],
    c0: usize,
    grid: &PhaseGrid,
    cfg: &SimConfig,
    scale: f64,
) -> Vec<SignedParticle> {
    let nk = grid.nk();
    let m_max = grid.m_max;
    let mut out = Vec::new();
    for (j, &v) in values.iter().enumerate() {
        let count = (v.abs() * scale).round() as usize;
        let Some(sign) = Sign::of(v) else { continue };
        if count == 0 {
            continue;
        }
        let particle = match cfg.n_dof() {
            1 => SignedParticle::new(sign, &[grid.x[c0]], &[j as i32 - m_max]),
            _ => {
                let c2 = j / (nk * nk);
                let a = (j / nk) % nk;
                let b = j % nk;
                SignedParticle::new(
                    sign,
                    &[grid.x[c0], grid.x[c2]],
                    &[a as i32 - m_max, b as i32 - m_max],
                )
            }
        };
        out.extend(std::iter::repeat_n(particle, count));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(sx: f64, sp: f64) -> EntangledParams {
        EntangledParams::experiment(sx, sp, &SimConfig::default())
    }

    #[test]
    fn center_value_is_c() {
        let q = state(2.5, 1.5);
        assert_eq!(eval_entangled_f0(15.0, 35.0, 0.0, 0.0, &q), q.c);
    }

    #[test]
    fn cross_term_vanishes_at_sine_zero() {
        let q = state(2.5, 1.5);
        let k1 = PI * q.sigma_ent_p;
        let product = q.c * gauss(k1, 0.0, q.sigma1_p) * gauss(0.3, 0.0, q.sigma2_p);
        let v = eval_entangled_f0(15.0, 35.0, k1, 0.3, &q);
        // sin(π) is not exactly zero in floating point.
        assert!((v - product).abs() < 1e-12 * q.c, "{v} vs {product}");
    }

    #[test]
    fn cross_term_is_odd_in_each_momentum() {
        let q = EntangledParams { c: 1.0, ..state(2.5, 1.5) };
        let product = |k1: f64, k2: f64| {
            gauss(16.0, 15.0, 3.0) * gauss(k1, 0.0, q.sigma1_p) * gauss(34.0, 35.0, 3.0) * gauss(k2, 0.0, q.sigma2_p)
        };
        let cross = |k1, k2| eval_entangled_f0(16.0, 34.0, k1, k2, &q) - product(k1, k2);
        let (k1, k2) = (0.21, 0.37);
        assert!((cross(k1, k2) + cross(-k1, k2)).abs() < 1e-14);
        assert!(cross(k1, k2).abs() > 1e-3);
    }

    #[test]
    fn cross_term_breaks_separability() {
        let q = state(2.5, 1.5);
        let f = |x1, x2, k1, k2, q: &EntangledParams| eval_entangled_f0(x1, x2, k1, k2, q);
        let a = (14.0, 36.0, 0.2, -0.3);
        let b = (16.5, 33.0, -0.4, 0.25);
        let lhs = |q: &EntangledParams| f(a.0, a.1, a.2, a.3, q) * f(b.0, b.1, b.2, b.3, q);
        let rhs = |q: &EntangledParams| f(a.0, b.1, a.2, b.3, q) * f(b.0, a.1, b.2, a.3, q);
        let uncorrelated = EntangledParams {
            sigma_ent_x: 1e-3,
            ..q
        };
        // With the cross term suppressed the state factorises.
        assert!((lhs(&uncorrelated) - rhs(&uncorrelated)).abs() < 1e-12 * lhs(&uncorrelated).abs());
        assert!((lhs(&q) - rhs(&q)).abs() > 1e-3 * lhs(&q).abs());
    }

    #[test]
    fn normalization_gives_unit_signed_integral() {
        let cfg = SimConfig::default();
        let q = state(3.5, 0.5);
        let grid = PhaseGrid::new(&cfg);
        let mut buf = Vec::new();
        let mut total = 0.0;
        for c0 in 0..grid.nx() {
            EntangledDensity(q).slab(&grid, c0, &mut buf);
            total += buf.iter().sum::<f64>();
        }
        assert!((total * cfg.cell_volume().powi(2) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn separable_slab_matches_pointwise_values() {
        let cfg = SimConfig {
            m_max: 6,
            spatial_cell: 2.5,
            ..SimConfig::default()
        };
        let d = EntangledDensity(EntangledParams::experiment(2.5, 1.5, &cfg));
        let grid = PhaseGrid::new(&cfg);
        let mut fast = Vec::new();
        for c0 in [3, 6, 7] {
            d.slab(&grid, c0, &mut fast);
            let mut slow = Vec::new();
            for &x2 in &grid.x {
                for &k1 in &grid.k {
                    for &k2 in &grid.k {
                        slow.push(d.value(&[grid.x[c0], x2], &[k1, k2]));
                    }
                }
            }
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-14 * (1.0 + b.abs()) * d.0.c);
            }
        }
    }

    #[test]
    fn two_packet_origin_value_is_dominated_by_interference() {
        let q = TwoPacketParams { x0: 20.0, p0: 0.0, sigma: 1.0, center: 0.0 };
        let v = eval_two_packet(0.0, 0.0, &q);
        assert!((v - 2.0 / (2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn two_packet_interference_changes_sign() {
        let q = TwoPacketParams { x0: 20.0, p0: 0.0, sigma: 1.0, center: 0.0 };
        let k = PI / q.x0;
        let expected = -2.0 / (2.0 * PI) * (-2.0 * k * k).exp();
        assert!((eval_two_packet(0.0, k, &q) - expected).abs() < 1e-12);
    }

    struct Delta;
    impl PhaseSpaceDensity for Delta {
        fn n_dof(&self) -> usize {
            1
        }
        fn value(&self, x: &[f64], k: &[f64]) -> f64 {
            if (x[0] - 10.25).abs() < 1e-9 && k[0] == 0.0 { 3.0 } else { 0.0 }
        }
    }

    #[test]
    fn delta_cell_receives_everything() {
        let cfg = SimConfig { n_bodies: 1, ..SimConfig::default() };
        let e = seed_ensemble(&Delta, 1000, &cfg).unwrap();
        assert_eq!(e.len(), 1000);
        assert!(e.particles.iter().all(|p| p.sign == Sign::Plus && p.x[0] == 10.25 && p.m[0] == 0));
        assert!((e.normalization - 3.0 * cfg.cell_volume()).abs() < 1e-15);
    }

    struct Dipole;
    impl PhaseSpaceDensity for Dipole {
        fn n_dof(&self) -> usize {
            1
        }
        fn value(&self, x: &[f64], k: &[f64]) -> f64 {
            if (x[0] - 10.25).abs() < 1e-9 && k[0] == 0.0 {
                1.0
            } else if (x[0] - 30.25).abs() < 1e-9 && k[0] == 0.0 {
                -1.0
            } else {
                0.0
            }
        }
    }

    #[test]
    fn symmetric_signs_get_equal_counts() {
        let cfg = SimConfig { n_bodies: 1, ..SimConfig::default() };
        let e = seed_ensemble(&Dipole, 1001, &cfg).unwrap();
        let plus = e.count(Sign::Plus) as i64;
        let minus = e.count(Sign::Minus) as i64;
        assert!((plus - minus).abs() <= 1);
    }

    struct Nothing;
    impl PhaseSpaceDensity for Nothing {
        fn n_dof(&self) -> usize {
            1
        }
        fn value(&self, _: &[f64], _: &[f64]) -> f64 {
            0.0
        }
    }

    #[test]
    fn empty_state_is_an_error() {
        let cfg = SimConfig { n_bodies: 1, ..SimConfig::default() };
        assert!(matches!(seed_ensemble(&Nothing, 10, &cfg), Err(Error::EmptyInitialState)));
    }

    #[test]
    fn seeding_is_deterministic_and_within_rounding_slack() {
        let cfg = SimConfig {
            spatial_cell: 1.0,
            m_max: 24,
            ..SimConfig::default()
        };
        let d = EntangledDensity(EntangledParams::experiment(2.5, 1.5, &cfg));
        let a = seed_ensemble(&d, 20_000, &cfg).unwrap();
        let b = seed_ensemble(&d, 20_000, &cfg).unwrap();
        assert_eq!(a, b);
        let cells = (cfg.cells_per_axis() * cfg.momenta_per_axis()).pow(2);
        assert!(a.len() + cells >= 20_000 && a.len() <= 20_000 + cells);
    }
}
