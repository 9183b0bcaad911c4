//! Simulation core for a CMOS single-gamma-photon spectrometer.
//!
//! The crate models the full measurement chain of a decay-time (DT)
//! spectrometer chip: gamma emission from a radioisotope point source,
//! transport onto a mixed pixel array, Compton interaction and charge
//! generation, the analog diode/noise/threshold frontend, the asynchronous
//! column-sweep readout with its 26-bit event records, both on-chip
//! calibration procedures, and the lookup-table reconstruction from
//! deposited to incident energy.
//!
//! Everything here is pure computation over caller-provided state and a
//! caller-owned seeded generator, so the crate is `no_std` (with `alloc`);
//! file formats, scenario orchestration, and the CLI live in the companion
//! `dtsim` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod analog;
pub mod calib;
pub mod constants;
pub mod geometry;
pub mod physics;
pub mod readout;
pub mod recon;

pub use constants::PhysicsConstants;
