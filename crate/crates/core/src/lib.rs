//! Simulation toolkit for noise-assisted excitation transport on regular
//! lattices with irreversible exit sites.
//!
//! The crate models a single excitation hopping coherently on a chain, ring,
//! or 2D lattice while a tunable fraction p of the coupling acts through an
//! incoherent channel (classical hopping or pure dephasing). Exit sites
//! drain population irreversibly at rate Γ. The central quantity is the mean
//! dwelling time t̄ = ∫P(t)dt, which develops a minimum at an optimal noise
//! fraction p* — small amounts of noise speed up transport by breaking the
//! momentum conservation and destructive interference that otherwise trap
//! the excitation.
//!
//! Module map:
//! - [`lattice`]: graph construction and exit-site placement
//! - [`spectral`]: Hamiltonians, eigensystems, locked-state detection
//! - [`dynamics`]: master equation, Kraus map, quantum-jump trajectories
//! - [`observables`]: populations, dwelling times, momentum-space analysis
//! - [`optimizer`]: optimal-noise scans, scaling-law fits, the
//!   rejuvenation-based noise estimator
//! - [`drive`]: externally driven two-tier extension
//!
//! Units: the bare coupling J sets the energy scale and times are measured
//! in 1/J; ħ = 1 and the lattice constant is 1 throughout. Sites are labeled
//! 1..=S in all public interfaces.

pub mod error;
pub mod lattice;
pub mod linalg;
pub mod spectral;
pub mod dynamics;
pub mod observables;
pub mod optimizer;
pub mod drive;

mod integrate;
mod resolvent;

pub use error::{Error, Result};
pub use integrate::StepControl;
