//! Many-body signed-particle simulation of the semi-discrete Wigner equation.
//!
//! A quantum state of `n` bodies in `d` dimensions is represented by an
//! ensemble of classical point particles in the `2·n·d` phase-space, each
//! carrying a sign of +1 or -1. Particles drift freely, create `±` pairs at a
//! rate set by the positive part of the Wigner kernel of the potential, and
//! annihilate in pairs of opposite sign that share a phase-space cell.
//!
//! The crate is organised along the simulation pipeline:
//!
//! * [`config`]: units, geometry and run parameters ([`SimConfig`]).
//! * [`phase_space`]: particles, ensembles, free drift and the cell lattice.
//! * [`kernel`]: semi-discrete Wigner kernel, creation rate and offset sampling.
//! * [`initial`]: the entangled two-body and two-packet initial conditions.
//! * [`engine`]: the three-particle creation operator, annihilation, time loop.
//! * [`noise`]: the stochastic momentum-damping background.
//! * [`observables`]: reduced distributions, negativity, snapshot files.
//! * [`experiment`]: named presets and the experiment driver used by the CLI.

pub mod config;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod initial;
pub mod kernel;
pub mod noise;
pub mod observables;
pub mod phase_space;
pub mod rng;

pub use config::{SimConfig, ELECTRON_MASS, HBAR};
pub use error::{Error, Result};
pub use phase_space::{CellIndex, Ensemble, Sign, SignedParticle};
