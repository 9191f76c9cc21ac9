//! Units, physical constants and the simulation geometry.
//!
//! Internal units are nm, fs and eV. Momentum is stored as an integer index
//! `M` on the lattice `p = M·Δp` with `Δp = ħπ/L_C` in eV·fs/nm; the
//! corresponding wavenumber step is `π/L_C` in nm⁻¹.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::noise::DissipationParams;

/// Reduced Planck constant in eV·fs.
pub const HBAR: f64 = 0.6582119;

/// Electron rest mass in eV·fs²/nm².
pub const ELECTRON_MASS: f64 = 5.685630;

/// Relative slack allowed when checking that the domain is an integer
/// number of cells, or that a time is a whole number of epochs.
const GRID_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Number of bodies `n`.
    pub n_bodies: usize,
    /// Spatial dimension `d`.
    pub dim: usize,
    /// Length of the domain along every axis [nm].
    pub domain_length: f64,
    /// Width of one spatial cell [nm].
    pub spatial_cell: f64,
    /// Coherence length `L_C` [nm].
    pub coherence_length: f64,
    /// Momentum cutoff: every index satisfies `|M| <= m_max`.
    pub m_max: i32,
    /// Shared body mass [eV·fs²/nm²].
    pub mass: f64,
    /// Epoch length for dissipation, annihilation and observation [fs].
    pub dt_obs: f64,
    /// Final simulation time [fs].
    pub t_final: f64,
    pub seed: u64,
    /// ħ [eV·fs].
    pub hbar: f64,
    pub dissipation: DissipationParams,
}

impl Default for SimConfig {
    /// Geometry used for the entangled two-body experiments.
    fn default() -> Self {
        SimConfig {
            n_bodies: 2,
            dim: 1,
            domain_length: 50.0,
            spatial_cell: 0.5,
            coherence_length: 30.0,
            m_max: 64,
            mass: ELECTRON_MASS,
            dt_obs: 0.05,
            t_final: 1.0,
            seed: 1,
            hbar: HBAR,
            dissipation: DissipationParams::disabled(),
        }
    }
}

impl SimConfig {
    /// `Δp = ħπ/L_C` in eV·fs/nm. Always derived, never stored.
    pub fn momentum_step(&self) -> f64 {
        self.hbar * PI / self.coherence_length
    }

    /// Wavenumber spacing `π/L_C` in nm⁻¹.
    pub fn wavenumber_step(&self) -> f64 {
        PI / self.coherence_length
    }

    /// Degrees of freedom per particle, `n·d`.
    pub fn n_dof(&self) -> usize {
        self.n_bodies * self.dim
    }

    pub fn cells_per_axis(&self) -> usize {
        (self.domain_length / self.spatial_cell).round().max(1.0) as usize
    }

    /// Number of momentum indices per axis, `2·M_max + 1`.
    pub fn momenta_per_axis(&self) -> usize {
        2 * self.m_max.max(0) as usize + 1
    }

    /// Velocity [nm/fs] of a coordinate with momentum index `m`.
    pub fn velocity(&self, m: i32) -> f64 {
        f64::from(m) * self.momentum_step() / self.mass
    }

    /// Phase-space volume of one single-body cell, `dx·Δp` [eV·fs].
    pub fn cell_volume(&self) -> f64 {
        self.spatial_cell * self.momentum_step()
    }

    /// Number of whole epochs needed to reach `t`.
    pub fn epochs_until(&self, t: f64) -> u64 {
        (t / self.dt_obs).round().max(0.0) as u64
    }

    /// Simulation time at the end of epoch `k`.
    pub fn epoch_time(&self, k: u64) -> f64 {
        k as f64 * self.dt_obs
    }

    pub fn contains(&self, x: f64) -> bool {
        (0.0..=self.domain_length).contains(&x)
    }

    /// Center of spatial cell `c` [nm].
    pub fn cell_center(&self, c: usize) -> f64 {
        (c as f64 + 0.5) * self.spatial_cell
    }

    /// Spatial cell containing `x`; the right wall belongs to the last cell.
    pub fn spatial_cell_of(&self, x: f64) -> Option<usize> {
        if !self.contains(x) {
            return None;
        }
        let c = (x / self.spatial_cell).floor() as usize;
        Some(c.min(self.cells_per_axis() - 1))
    }

    /// Lists every violated invariant. An empty list means the config is valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.dim != 1 {
            out.push(format!("dim = {} is not supported (only d = 1)", self.dim));
        }
        if !(1..=2).contains(&self.n_bodies) {
            out.push(format!("n_bodies = {} is not supported (1 or 2)", self.n_bodies));
        }
        if !(self.domain_length > 0.0) || !self.domain_length.is_finite() {
            out.push(format!("domain_length = {} must be positive", self.domain_length));
        }
        if !(self.spatial_cell > 0.0) || !self.spatial_cell.is_finite() {
            out.push(format!("spatial_cell = {} must be positive", self.spatial_cell));
        } else if self.domain_length > 0.0 {
            let ratio = self.domain_length / self.spatial_cell;
            if (ratio - ratio.round()).abs() > GRID_SLACK * ratio.max(1.0) || ratio.round() < 1.0 {
                out.push(format!(
                    "spatial_cell = {} does not divide domain_length = {} into whole cells",
                    self.spatial_cell, self.domain_length
                ));
            }
        }
        if !(self.coherence_length > 0.0) || !self.coherence_length.is_finite() {
            out.push(format!("coherence_length = {} must be positive", self.coherence_length));
        }
        if self.m_max < 1 {
            out.push(format!("m_max = {} must be at least 1", self.m_max));
        }
        if !(self.mass > 0.0) {
            out.push(format!("mass = {} must be positive", self.mass));
        }
        if !(self.hbar > 0.0) {
            out.push(format!("hbar = {} must be positive", self.hbar));
        }
        if !(self.dt_obs > 0.0) {
            out.push(format!("dt_obs = {} must be positive", self.dt_obs));
        }
        if !(self.t_final >= 0.0) {
            out.push(format!("t_final = {} must be non-negative", self.t_final));
        } else if self.dt_obs > 0.0 && !self.is_epoch_multiple(self.t_final) {
            out.push(format!(
                "t_final = {} is not a whole number of epochs of dt_obs = {}",
                self.t_final, self.dt_obs
            ));
        }
        out.extend(self.dissipation.violations());
        out
    }

    /// Whether `t` lies on an epoch boundary.
    pub fn is_epoch_multiple(&self, t: f64) -> bool {
        let k = t / self.dt_obs;
        (k - k.round()).abs() <= GRID_SLACK * k.abs().max(1.0)
    }

    /// Checks a user-supplied momentum step against `ħπ/L_C`.
    pub fn check_momentum_step(&self, declared: f64) -> Option<String> {
        let expected = self.momentum_step();
        if (declared - expected).abs() > 1e-12 * expected.abs() {
            Some(format!(
                "momentum_step = {declared} is inconsistent with hbar*pi/coherence_length = {expected}"
            ))
        } else {
            None
        }
    }
}
