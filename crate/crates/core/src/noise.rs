//! Controlled dissipative background.
//!
//! Once per epoch, every momentum component of every particle is scattered
//! with probability `r_prob`; a scattered component has its momentum scaled
//! by `1 − r_pct` and snapped back onto the momentum lattice.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::phase_space::Ensemble;
use crate::rng::{root_key, Purpose, RngStream};

/// Half-integer detection slack for lattice snapping.
const TIE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DissipationParams {
    /// Per-component, per-epoch scattering probability, in `[0, 1]`.
    pub r_prob: f64,
    /// Fractional momentum reduction of a scattered component, in `(0, 1]`.
    pub r_pct: f64,
    pub enabled: bool,
}

impl DissipationParams {
    pub fn new(r_prob: f64, r_pct: f64) -> Self {
        DissipationParams {
            r_prob,
            r_pct,
            enabled: true,
        }
    }

    pub fn disabled() -> Self {
        DissipationParams {
            r_prob: 0.0,
            r_pct: 1.0,
            enabled: false,
        }
    }

    /// 2% scattering probability, 15% momentum reduction.
    pub fn strong() -> Self {
        Self::new(0.02, 0.15)
    }

    /// 1% scattering probability, 5% momentum reduction.
    pub fn weak() -> Self {
        Self::new(0.01, 0.05)
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "noise_strong" => Some(Self::strong()),
            "noise_weak" => Some(Self::weak()),
            "none" | "ballistic" => Some(Self::disabled()),
            _ => None,
        }
    }

    /// True when applying the model cannot change anything.
    pub fn is_identity(&self) -> bool {
        !self.enabled || self.r_prob == 0.0
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(0.0..=1.0).contains(&self.r_prob) {
            out.push(format!("dissipation.r_prob = {} outside [0, 1]", self.r_prob));
        }
        if !(self.r_pct > 0.0 && self.r_pct <= 1.0) {
            out.push(format!("dissipation.r_pct = {} outside (0, 1]", self.r_pct));
        }
        out
    }
}

/// Scales momentum index `m` by `1 − r_pct` and snaps to the nearest lattice
/// point, breaking half-integer ties toward zero.
pub fn damp_index(m: i32, r_pct: f64) -> i32 {
    let y = (1.0 - r_pct) * f64::from(m);
    let mag = y.abs();
    let floor = mag.floor();
    let snapped = if mag - floor > 0.5 + TIE_SLACK {
        floor + 1.0
    } else {
        floor
    };
    let out = snapped as i32;
    if m < 0 {
        -out
    } else {
        out
    }
}

/// Applies one epoch of the dissipation model in place and returns the number
/// of scattered components.
///
/// Particle `i` draws from the stream keyed by its position in the ensemble,
/// the epoch and [`Purpose::Dissipation`], so the outcome does not depend on
/// the thread count.
pub fn apply_dissipation(
    ensemble: &mut Ensemble,
    params: &DissipationParams,
    seed: u64,
    epoch: u64,
) -> u64 {
    if params.is_identity() {
        return 0;
    }
    let hits: u64 = ensemble
        .particles
        .par_iter_mut()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = RngStream::new(seed, root_key(i), epoch, Purpose::Dissipation);
            let mut hits = 0;
            for m in p.m.iter_mut() {
                if rng.uniform() < params.r_prob {
                    *m = damp_index(*m, params.r_pct);
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    ensemble.counters.dissipation_hits += hits;
    hits
}
