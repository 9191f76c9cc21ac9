//! Time evolution: free flight with pair creation, grid annihilation and the
//! epoch loop.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::kernel::KernelTable;
use crate::noise::apply_dissipation;
use crate::phase_space::{cell_of, CellIndex, Ensemble, Sign, SignedParticle};
use crate::rng::{child_key, root_key, Purpose, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineLimits {
    /// Largest number of particles one root may have pending or finished
    /// within a single epoch.
    pub max_descendants: usize,
    /// Ensemble size at which the run aborts.
    pub particle_cap: usize,
}

impl Default for EngineLimits {
    fn default() -> Self {
        EngineLimits {
            max_descendants: 1_000_000,
            particle_cap: 50_000_000,
        }
    }
}

/// Time to the next creation event at rate `gamma` [1/fs].
///
/// Returns `+∞` when `gamma` is zero. `u` must lie in `(0, 1]`.
pub fn free_flight_time(gamma: f64, u: f64) -> Result<f64> {
    if !(u > 0.0 && u <= 1.0) {
        return Err(Error::InvalidUniform(u));
    }
    if gamma == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-u.ln() / gamma)
}

/// Source of the uniform draws consumed by [`apply_s_with`].
pub trait UniformSource {
    /// Uniform in `(0, 1)`, used for flight times.
    fn uniform_open(&mut self) -> f64;
    /// Uniform in `[0, 1)`, used for offset sampling.
    fn uniform(&mut self) -> f64;
}

impl UniformSource for RngStream {
    fn uniform_open(&mut self) -> f64 {
        RngStream::uniform_open(self)
    }

    fn uniform(&mut self) -> f64 {
        RngStream::uniform(self)
    }
}

/// Result of evolving one particle and its descendants over an interval.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SOutcome {
    /// Surviving particles at the end of the interval, parent first.
    pub particles: Vec<SignedParticle>,
    /// Pairs created and kept.
    pub created_pairs: u64,
    /// Pairs dropped because a child exceeded the momentum cutoff.
    pub discarded_pairs: u64,
    /// Particles that left the domain.
    pub removed: u64,
    /// Summed sign of the particles that left the domain.
    pub removed_net: i64,
}

struct Pending {
    particle: SignedParticle,
    t: f64,
    key: u64,
}

/// Evolves `p` from `t_start` to `t_end` with streams from [`RngStream`].
pub fn apply_s(
    p: SignedParticle,
    t_start: f64,
    t_end: f64,
    table: &KernelTable,
    limits: &EngineLimits,
    key: u64,
    seed: u64,
    epoch: u64,
) -> Result<SOutcome> {
    apply_s_with(p, t_start, t_end, table, limits, key, |k| {
        RngStream::new(seed, k, epoch, Purpose::Evolution)
    })
}

/// Evolves `p` and every particle it creates up to `t_end`.
///
/// Each particle draws from `stream(key)`; the parent has key `key` and the
/// `j`-th child born from a particle with key `k` has `child_key(k, j)`. A
/// stream is only opened when the creation rate is non-zero.
pub fn apply_s_with<R: UniformSource>(
    p: SignedParticle,
    t_start: f64,
    t_end: f64,
    table: &KernelTable,
    limits: &EngineLimits,
    key: u64,
    mut stream: impl FnMut(u64) -> R,
) -> Result<SOutcome> {
    let cfg = table.config();
    let mut out = SOutcome::default();
    let mut queue = vec![Pending { particle: p, t: t_start, key }];

    while let Some(Pending { mut particle, mut t, key }) = queue.pop() {
        let mut rng: Option<R> = None;
        let mut ordinal = 0u64;
        loop {
            let gamma = if table.is_zero() { 0.0 } else { table.gamma(&particle.x)? };
            let dt = if gamma == 0.0 {
                f64::INFINITY
            } else {
                let u = rng.get_or_insert_with(|| stream(key)).uniform_open();
                free_flight_time(gamma, u)?
            };
            if t + dt > t_end {
                particle.drift_in_place(t_end - t, cfg);
                if particle.alive {
                    out.particles.push(particle);
                } else {
                    out.removed += 1;
                    out.removed_net += particle.sign.value();
                }
                break;
            }
            particle.drift_in_place(dt, cfg);
            t += dt;
            if !particle.alive {
                out.removed += 1;
                out.removed_net += particle.sign.value();
                break;
            }

            let u = rng.as_mut().expect("stream opened for a finite flight").uniform();
            let offset = table.sample_offset(&particle.x, u)?;
            let plus = particle.m.iter().zip(&offset).map(|(&m, &o)| m + o);
            let minus = particle.m.iter().zip(&offset).map(|(&m, &o)| m - o);
            let fits = plus.clone().chain(minus.clone()).all(|m| m.abs() <= cfg.m_max);
            if fits {
                let mut same = particle.clone();
                same.m = plus.collect();
                let mut opposite = particle.clone();
                opposite.m = minus.collect();
                opposite.sign = -particle.sign;
                queue.push(Pending { particle: opposite, t, key: child_key(key, ordinal + 1) });
                queue.push(Pending { particle: same, t, key: child_key(key, ordinal) });
                out.created_pairs += 1;
            } else {
                out.discarded_pairs += 1;
            }
            ordinal += 2;

            let live = queue.len() + out.particles.len() + 1;
            if live > limits.max_descendants {
                return Err(Error::RunawayCreation { count: live, limit: limits.max_descendants });
            }
        }
    }
    Ok(out)
}

/// Runs of equal cell with their net sign.
fn groups(keys: &[(CellIndex, usize, i8)]) -> impl Iterator<Item = (&[(CellIndex, usize, i8)], i64)> {
    keys.chunk_by(|a, b| a.0 == b.0).map(|g| (g, g.iter().map(|k| i64::from(k.2)).sum()))
}

/// Cancels opposite signs that share a phase-space cell.
///
/// A cell holding `n₊` positive and `n₋` negative particles with both
/// non-zero keeps `|n₊ − n₋|` particles of the majority sign, placed at the
/// cell center with the cell's momentum. Cells holding a single sign are not
/// touched. When any cell is mixed the result is ordered by cell, then by
/// previous position; otherwise the ensemble is left as it was.
/// Returns the number of annihilated pairs.
pub fn annihilate(e: &mut Ensemble, cfg: &SimConfig) -> Result<u64> {
    // The previous epoch left the ensemble in cell order, so the keys arrive
    // in long sorted runs that a stable merge sort exploits.
    let mut keys: Vec<(CellIndex, usize, i8)> = e
        .particles
        .par_iter()
        .enumerate()
        .map(|(i, p)| Ok((cell_of(p, cfg)?, i, p.sign.value() as i8)))
        .collect::<Result<_>>()?;
    keys.par_sort_by_key(|&(c, _, _)| c);

    if groups(&keys).all(|(g, net)| net.unsigned_abs() == g.len() as u64) {
        return Ok(0);
    }

    let mut out = Vec::with_capacity(keys.len());
    let mut pairs = 0u64;
    for (group, net) in groups(&keys) {
        let n = group.len() as i64;
        if net.abs() == n {
            out.extend(group.iter().map(|&(_, i, _)| e.particles[i].clone()));
            continue;
        }
        pairs += ((n - net.abs()) / 2) as u64;
        if net == 0 {
            continue;
        }
        let (spatial, momenta) = group[0].0.unpack(cfg);
        let x: Vec<f64> = spatial.iter().map(|&c| cfg.cell_center(c)).collect();
        let sign = if net > 0 { Sign::Plus } else { Sign::Minus };
        let survivor = SignedParticle::new(sign, &x, &momenta);
        out.extend(std::iter::repeat_n(survivor, net.unsigned_abs() as usize));
    }
    e.particles = out;
    e.counters.annihilated_pairs += pairs;
    Ok(pairs)
}

/// Bookkeeping for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: u64,
    /// Time at the end of the epoch [fs].
    pub t: f64,
    pub particles_before: usize,
    pub particles_after: usize,
    pub created_pairs: u64,
    pub annihilated_pairs: u64,
    pub removed: u64,
    /// Pairs dropped at the momentum cutoff; never enter the ensemble.
    pub discarded_pairs: u64,
    pub dissipation_hits: u64,
    /// Not serialized, so reports are reproducible byte for byte.
    #[serde(skip)]
    pub wall_time_ms: f64,
}

impl EpochReport {
    /// `after = before + 2·created − 2·annihilated − removed`.
    pub fn balances(&self) -> bool {
        self.particles_before as i128 + 2 * self.created_pairs as i128
            - 2 * self.annihilated_pairs as i128
            - self.removed as i128
            == self.particles_after as i128
    }
}

/// Called after every epoch with the updated ensemble.
pub type Hook<'a> = dyn FnMut(&Ensemble, &EpochReport) -> Result<()> + 'a;

/// Zero-rate epoch: what [`apply_s`] returns with no events, without the
/// per-particle bookkeeping.
fn drift_all(e: &mut Ensemble, dt: f64, cfg: &SimConfig) -> (u64, u64, u64) {
    e.particles.par_iter_mut().for_each(|p| p.drift_in_place(dt, cfg));
    let before = e.len();
    e.particles.retain(|p| p.alive);
    (0, 0, (before - e.len()) as u64)
}

fn evolve_all(
    e: &mut Ensemble,
    t0: f64,
    t1: f64,
    table: &KernelTable,
    limits: &EngineLimits,
    seed: u64,
    epoch: u64,
) -> Result<(u64, u64, u64)> {
    let outcomes: Vec<SOutcome> = std::mem::take(&mut e.particles)
        .into_par_iter()
        .enumerate()
        .map(|(i, p)| apply_s(p, t0, t1, table, limits, root_key(i), seed, epoch))
        .collect::<Result<_>>()?;
    let (mut created, mut discarded, mut removed) = (0, 0, 0);
    let mut particles = Vec::with_capacity(outcomes.iter().map(|o| o.particles.len()).sum());
    for o in outcomes {
        created += o.created_pairs;
        discarded += o.discarded_pairs;
        removed += o.removed;
        particles.extend(o.particles);
    }
    e.particles = particles;
    Ok((created, discarded, removed))
}

/// Advances `e` in epochs of `dt_obs` until `cfg.t_final`.
///
/// Each epoch evolves every particle with [`apply_s`], then applies the
/// dissipation model, then annihilates, then calls `hook`. Particle `i` of the
/// ensemble at the start of an epoch uses root key `root_key(i)`.
pub fn run(
    mut e: Ensemble,
    cfg: &SimConfig,
    table: &KernelTable,
    limits: &EngineLimits,
    hook: &mut Hook<'_>,
) -> Result<(Ensemble, Vec<EpochReport>)> {
    let first = cfg.epochs_until(e.t);
    let last = cfg.epochs_until(cfg.t_final);
    let mut reports = Vec::with_capacity(last.saturating_sub(first) as usize);

    for epoch in first..last {
        let started = Instant::now();
        let t0 = cfg.epoch_time(epoch);
        let t1 = cfg.epoch_time(epoch + 1);
        let before = e.len();

        let (created, discarded, removed) = if table.is_zero() {
            drift_all(&mut e, t1 - t0, cfg)
        } else {
            evolve_all(&mut e, t0, t1, table, limits, cfg.seed, epoch)?
        };
        e.counters.created_pairs += created;
        e.counters.removed += removed;
        if e.len() > limits.particle_cap {
            return Err(Error::ParticleCap { t: t1, count: e.len(), limit: limits.particle_cap });
        }

        let hits = apply_dissipation(&mut e, &cfg.dissipation, cfg.seed, epoch);
        let annihilated = annihilate(&mut e, cfg)?;
        e.t = t1;

        let report = EpochReport {
            epoch,
            t: t1,
            particles_before: before,
            particles_after: e.len(),
            created_pairs: created,
            annihilated_pairs: annihilated,
            removed,
            discarded_pairs: discarded,
            dissipation_hits: hits,
            wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        debug_assert!(report.balances());
        hook(&e, &report)?;
        reports.push(report);
    }
    Ok((e, reports))
}
