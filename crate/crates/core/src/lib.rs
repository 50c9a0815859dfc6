//! Collisional (Boltzmann) part of Bloch–Boltzmann equations for a
//! nondegenerate multilevel atom in a thermal bath of structureless
//! perturbers.
//!
//! The crate builds the velocity-resolved collision kernel
//! `K_{mj,nk}(v <- v1)` from on-shell scattering amplitudes, derives the
//! relaxation rates, assembles the Lindblad-form and the standard
//! (rate + kernel) collisional generators on a velocity grid, and integrates
//! the density field in time while monitoring trace and positivity.

pub mod container;
pub mod error;
pub mod evolution;
pub mod generators;
pub mod kernel;
pub mod model;
pub mod presets;
pub mod quadrature;
pub mod scattering;
pub mod verification;

pub use error::{Error, Result};
pub use evolution::{evolve, make_initial_field, BreachPolicy, DensityField, EvolveOptions, InitialState, Trajectory};
pub use generators::{build_me_generator, build_standard_generator, Generator, Provenance, StandardVariant};
pub use kernel::{GridSpec, KernelQuadrature, KernelTensor, RateMode, RateTable, VelocityGrid};
pub use model::{AtomGasModel, BohrSpectrum, GasParams, Thermal};
pub use num_complex::Complex64;
pub use scattering::{AmplitudeModel, AmplitudeSpec, AmplitudeTable, PartialWaveSpec, WaveData, WaveTable};

/// Velocity or relative velocity in the lab frame.
pub type Vec3 = nalgebra::Vector3<f64>;
