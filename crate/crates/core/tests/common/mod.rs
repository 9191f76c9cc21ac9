//! Reference computations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use signed_particles::initial::EntangledParams;
use signed_particles::SimConfig;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (1..=n)
        .map(|i| {
            let mut z = (PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
            loop {
                let (mut p0, mut p1) = (1.0, 0.0);
                for j in 1..=n {
                    let p2 = p1;
                    p1 = p0;
                    p0 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p2) / j as f64;
                }
                let dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
                let dz = p0 / dp;
                z -= dz;
                if dz.abs() < 1e-15 {
                    return (z, 2.0 / ((1.0 - z * z) * dp * dp));
                }
            }
        })
        .collect()
}

/// Kernel row of a one-body potential by composite Gauss–Legendre
/// quadrature of `−(1/(ħ L_C)) ∫ sin(2πM s/L_C) [V(x+s) − V(x−s)] ds` over
/// `[−L_C/2, L_C/2]`, written directly from the definition.
pub fn oracle_row(v: impl Fn(f64) -> f64, x: f64, cfg: &SimConfig, panels: usize) -> Vec<f64> {
    let lc = cfg.coherence_length;
    let rule = gauss_legendre(12);
    let h = lc / panels as f64;
    (-cfg.m_max..=cfg.m_max)
        .map(|m| {
            let mut acc = 0.0;
            for k in 0..panels {
                let a = -0.5 * lc + k as f64 * h;
                for &(z, w) in &rule {
                    let s = a + 0.5 * h * (z + 1.0);
                    acc += 0.5 * h * w * (2.0 * PI * f64::from(m) * s / lc).sin() * (v(x + s) - v(x - s));
                }
            }
            -acc / (cfg.hbar * lc)
        })
        .collect()
}

fn gauss(v: f64, c: f64, s: f64) -> f64 {
    let u = (v - c) / s;
    (-u * u).exp()
}

fn cross(q: &EntangledParams, k1: f64, k2: f64) -> f64 {
    let (d1, d2) = (k1 - q.p1_0, k2 - q.p2_0);
    (-(d1 * d1 + d2 * d2).sqrt() / q.sigma0).exp() * 4.0 * (d1 / q.sigma_ent_p).sin() * (d2 / q.sigma_ent_p).sin()
}

/// How the advected density is placed on the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shift {
    /// `f(x − v t)` at every cell center.
    Continuous,
    /// Histogram of cell-center samples drifted by `v t`: column `M` moves by
    /// the whole number of cells its seeds cross.
    Binned,
}

/// One-body distribution of the freely advected entangled state,
/// `f(x₁ − v₁t, x₂ − v₂t, k₁, k₂)` reduced over both bodies with the partner
/// restricted to `M > 0` (or unrestricted with `forward = false`),
/// normalized to unit signed integral. Row-major `(x, M)`.
pub fn advected_reduced(q: &EntangledParams, cfg: &SimConfig, t: f64, forward: bool) -> Vec<f64> {
    advected_reduced_with(q, cfg, t, forward, Shift::Continuous)
}

pub fn advected_reduced_with(q: &EntangledParams, cfg: &SimConfig, t: f64, forward: bool, shift: Shift) -> Vec<f64> {
    let nx = cfg.cells_per_axis();
    let nm = cfg.momenta_per_axis();
    let xs: Vec<f64> = (0..nx).map(|c| (c as f64 + 0.5) * cfg.spatial_cell).collect();
    let ms: Vec<i32> = (-cfg.m_max..=cfg.m_max).collect();
    let k = |m: i32| f64::from(m) * PI / cfg.coherence_length;
    let v = |m: i32| f64::from(m) * cfg.hbar * PI / cfg.coherence_length / cfg.mass;
    let partner_ok = |m: i32| !forward || m > 0;
    let dx = cfg.spatial_cell;
    let offset = |m: i32| match shift {
        Shift::Continuous => v(m) * t,
        Shift::Binned => dx * (0.5 + v(m) * t / dx).floor(),
    };

    let mut r = vec![0.0; nx * nm];
    // (own center, own σx, own σp, own p0, partner center, partner σx, partner σp, partner p0, own is body 1)
    let bodies = [
        (q.x1_0, q.sigma1_x, q.sigma1_p, q.p1_0, q.x2_0, q.sigma2_x, q.sigma2_p, q.p2_0, true),
        (q.x2_0, q.sigma2_x, q.sigma2_p, q.p2_0, q.x1_0, q.sigma1_x, q.sigma1_p, q.p1_0, false),
    ];
    for &(c0, sx, sp, p0, pc, psx, psp, pp0, first) in &bodies {
        // Partner sums over its cells and admissible momenta.
        let partner_x = |m: i32, s: f64| xs.iter().map(|&x| gauss(x - offset(m), pc, s)).sum::<f64>();
        let product_partner: f64 = ms
            .iter()
            .filter(|&&m| partner_ok(m))
            .map(|&m| gauss(k(m), pp0, psp) * partner_x(m, psx))
            .sum();
        let ent_partner: Vec<f64> = ms.iter().map(|&m| if partner_ok(m) { partner_x(m, q.sigma_ent_x) } else { 0.0 }).collect();
        for (a, &m) in ms.iter().enumerate() {
            let cross_partner: f64 = ms
                .iter()
                .enumerate()
                .map(|(b, &mp)| {
                    let c = if first { cross(q, k(m), k(mp)) } else { cross(q, k(mp), k(m)) };
                    c * ent_partner[b]
                })
                .sum();
            for (i, &x) in xs.iter().enumerate() {
                let xo = x - offset(m);
                r[i * nm + a] += q.c
                    * (gauss(xo, c0, sx) * gauss(k(m), p0, sp) * product_partner
                        + gauss(xo, c0, q.sigma_ent_x) * cross_partner);
            }
        }
    }
    let vol = cfg.spatial_cell * cfg.momentum_step();
    let total: f64 = r.iter().sum::<f64>() * vol;
    r.iter_mut().for_each(|x| *x /= total);
    r
}

/// `Σ |a − b| · vol`.
pub fn l1(a: &[f64], b: &[f64], vol: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() * vol
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}
