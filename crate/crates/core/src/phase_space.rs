//! Signed particles on the semi-discrete phase-space.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::config::SimConfig;
use crate::error::{Error, Result};

/// Per-particle coordinate storage; inline for up to two degrees of freedom.
pub type Positions = SmallVec<[f64; 2]>;
pub type MomentumIndices = SmallVec<[i32; 2]>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sign {
    Minus,
    Plus,
}

impl Sign {
    pub fn value(self) -> i64 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }

    pub fn as_f64(self) -> f64 {
        self.value() as f64
    }

    /// Sign of a non-zero real; `None` for zero or NaN.
    pub fn of(v: f64) -> Option<Sign> {
        if v > 0.0 {
            Some(Sign::Plus)
        } else if v < 0.0 {
            Some(Sign::Minus)
        } else {
            None
        }
    }
}

impl std::ops::Neg for Sign {
    type Output = Sign;

    fn neg(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

/// One virtual particle: a sign, `n·d` positions and `n·d` momentum indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedParticle {
    pub sign: Sign,
    /// Positions [nm], one per degree of freedom.
    pub x: Positions,
    /// Momentum indices; the momentum of coordinate `i` is `m[i]·Δp`.
    pub m: MomentumIndices,
    /// Cleared once the particle has left the domain.
    pub alive: bool,
}

impl SignedParticle {
    pub fn new(sign: Sign, x: &[f64], m: &[i32]) -> Self {
        debug_assert_eq!(x.len(), m.len());
        SignedParticle {
            sign,
            x: SmallVec::from_slice(x),
            m: SmallVec::from_slice(m),
            alive: true,
        }
    }

    pub fn n_dof(&self) -> usize {
        self.x.len()
    }

    /// Free flight for `dt` femtoseconds: `x_i += (M_i·Δp/m)·dt`.
    ///
    /// Momenta and sign are untouched. A particle that ends outside
    /// `[0, domain_length]` on any axis is marked dead (absorbing walls); its
    /// coordinates are left unclipped.
    pub fn drift(&self, dt: f64, cfg: &SimConfig) -> SignedParticle {
        let mut out = self.clone();
        out.drift_in_place(dt, cfg);
        out
    }

    pub fn drift_in_place(&mut self, dt: f64, cfg: &SimConfig) {
        if dt != 0.0 {
            for (x, &m) in self.x.iter_mut().zip(&self.m) {
                *x += cfg.velocity(m) * dt;
            }
        }
        self.alive = self.alive && self.x.iter().all(|&x| cfg.contains(x));
    }

    pub fn in_domain(&self, cfg: &SimConfig) -> bool {
        self.x.iter().all(|&x| cfg.contains(x))
    }

    /// Composite phase-space cell of the particle.
    pub fn cell(&self, cfg: &SimConfig) -> Result<CellIndex> {
        cell_of(self, cfg)
    }
}

/// Packed phase-space cell: spatial cell per position coordinate followed by
/// the exact momentum index per momentum coordinate, in lexicographic order.
///
/// Numeric order of the packed value is the canonical cell order used by
/// every reduction in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellIndex(pub u64);

impl CellIndex {
    pub fn pack(spatial: &[usize], momenta: &[i32], cfg: &SimConfig) -> Result<CellIndex> {
        let ncell = cfg.cells_per_axis() as u64;
        let nm = cfg.momenta_per_axis() as u64;
        let mut key: u64 = 0;
        for &c in spatial {
            debug_assert!((c as u64) < ncell);
            key = key * ncell + c as u64;
        }
        for &m in momenta {
            if m.abs() > cfg.m_max {
                return Err(Error::MomentumOutOfRange {
                    index: m,
                    m_max: cfg.m_max,
                });
            }
            key = key * nm + (m + cfg.m_max) as u64;
        }
        Ok(CellIndex(key))
    }

    /// Splits the packed index back into spatial cells and momentum indices.
    pub fn unpack(self, cfg: &SimConfig) -> (Vec<usize>, Vec<i32>) {
        let n = cfg.n_dof();
        let ncell = cfg.cells_per_axis() as u64;
        let nm = cfg.momenta_per_axis() as u64;
        let mut key = self.0;
        let mut momenta = vec![0i32; n];
        for slot in momenta.iter_mut().rev() {
            *slot = (key % nm) as i32 - cfg.m_max;
            key /= nm;
        }
        let mut spatial = vec![0usize; n];
        for slot in spatial.iter_mut().rev() {
            *slot = (key % ncell) as usize;
            key /= ncell;
        }
        (spatial, momenta)
    }
}

/// Cell lookup for annihilation and histogramming.
///
/// Particles outside the domain must have been removed by the boundary
/// policy beforehand; a momentum index beyond `M_max` is an invariant breach.
pub fn cell_of(p: &SignedParticle, cfg: &SimConfig) -> Result<CellIndex> {
    let mut spatial: SmallVec<[usize; 2]> = SmallVec::new();
    for &x in &p.x {
        spatial.push(cfg.spatial_cell_of(x).ok_or(Error::OutOfDomain {
            x,
            length: cfg.domain_length,
        })?);
    }
    CellIndex::pack(&spatial, &p.m, cfg)
}

/// Event counters accumulated over the life of an ensemble.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub created_pairs: u64,
    pub annihilated_pairs: u64,
    pub dissipation_hits: u64,
    pub removed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub particles: Vec<SignedParticle>,
    /// Current time [fs].
    pub t: f64,
    pub counters: Counters,
    /// Signed integral `A = Σ f·(cell volume)` of the seeding density.
    pub normalization: f64,
}

impl Ensemble {
    pub fn new(particles: Vec<SignedParticle>) -> Self {
        Ensemble {
            particles,
            t: 0.0,
            counters: Counters::default(),
            normalization: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// `Σ sign` over the ensemble.
    pub fn net_sign(&self) -> i64 {
        net_sign(&self.particles)
    }

    pub fn count(&self, sign: Sign) -> usize {
        self.particles.iter().filter(|p| p.sign == sign).count()
    }
}

pub fn net_sign(particles: &[SignedParticle]) -> i64 {
    particles.iter().map(|p| p.sign.value()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> SimConfig {
        SimConfig::default()
    }

    #[test]
    fn zero_momentum_is_stationary() {
        let p = SignedParticle::new(Sign::Plus, &[0.0, 12.0], &[0, 0]);
        let q = p.drift(3.7, &cfg());
        assert_eq!(q.x.as_slice(), &[0.0, 12.0]);
        assert!(q.alive);
    }

    #[test]
    fn zero_time_is_identity() {
        let p = SignedParticle::new(Sign::Minus, &[10.0, 20.0], &[5, -3]);
        assert_eq!(p.drift(0.0, &cfg()), p);
    }

    #[test]
    fn drift_applies_velocity() {
        // Mass chosen so that one momentum step moves 2 nm/fs.
        let mut c = cfg();
        c.mass = c.momentum_step() / 2.0;
        let p = SignedParticle::new(Sign::Plus, &[10.0], &[1]);
        let q = p.drift(1.5, &SimConfig { n_bodies: 1, ..c });
        assert!((q.x[0] - 13.0).abs() < 1e-12);
        assert_eq!(q.m.as_slice(), &[1]);
    }

    #[test]
    fn leaving_the_domain_kills() {
        let p = SignedParticle::new(Sign::Plus, &[49.99, 25.0], &[64, 0]);
        let q = p.drift(1.0, &cfg());
        assert!(!q.alive);
        assert!(q.x[0] > 50.0);
    }

    #[test]
    fn same_cell_same_index() {
        let c = cfg();
        let a = SignedParticle::new(Sign::Plus, &[0.0, 10.1], &[3, -2]);
        let b = SignedParticle::new(Sign::Minus, &[c.spatial_cell - 1e-9, 10.4], &[3, -2]);
        assert_eq!(cell_of(&a, &c).unwrap(), cell_of(&b, &c).unwrap());
    }

    #[test]
    fn body_two_momentum_distinguishes() {
        let c = cfg();
        let a = SignedParticle::new(Sign::Plus, &[5.0, 10.0], &[3, -2]);
        let b = SignedParticle::new(Sign::Plus, &[5.0, 10.0], &[3, -1]);
        assert_ne!(cell_of(&a, &c).unwrap(), cell_of(&b, &c).unwrap());
    }

    #[test]
    fn cutoff_breach_is_an_error() {
        let c = cfg();
        let a = SignedParticle::new(Sign::Plus, &[5.0, 10.0], &[65, 0]);
        assert!(matches!(cell_of(&a, &c), Err(Error::MomentumOutOfRange { .. })));
        let b = SignedParticle::new(Sign::Plus, &[-0.1, 10.0], &[0, 0]);
        assert!(matches!(cell_of(&b, &c), Err(Error::OutOfDomain { .. })));
    }

    proptest! {
        #[test]
        fn drift_is_invertible(
            x1 in 0.0f64..50.0, x2 in 0.0f64..50.0,
            m1 in -64i32..=64, m2 in -64i32..=64,
            dt in 0.0f64..5.0,
        ) {
            let c = cfg();
            let p = SignedParticle::new(Sign::Plus, &[x1, x2], &[m1, m2]);
            let back = p.drift(dt, &c).drift(-dt, &c);
            for (a, b) in back.x.iter().zip(&p.x) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn drift_ignores_sign(x in 0.0f64..50.0, m in -64i32..=64, dt in 0.0f64..3.0) {
            let c = SimConfig { n_bodies: 1, ..cfg() };
            let p = SignedParticle::new(Sign::Plus, &[x], &[m]);
            let mut q = p.clone();
            q.sign = Sign::Minus;
            prop_assert_eq!(p.drift(dt, &c).x, q.drift(dt, &c).x);
        }

        #[test]
        fn cell_index_round_trips(
            c1 in 0usize..100, c2 in 0usize..100,
            m1 in -64i32..=64, m2 in -64i32..=64,
        ) {
            let c = cfg();
            let idx = CellIndex::pack(&[c1, c2], &[m1, m2], &c).unwrap();
            prop_assert_eq!(idx.unpack(&c), (vec![c1, c2], vec![m1, m2]));
        }
    }
}
