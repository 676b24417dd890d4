//! Simulation core for STT-MRAM in-memory-computing crossbars built from
//! cross-coupled STRIDe bitcells and their 1T-1MTJ / 2T-2MTJ baselines.
//!
//! The crate is `no_std` and only needs an allocator. File formats, the CLI
//! and parallel orchestration live in the `xbar-imc-sim` crate.

#![no_std]

extern crate alloc;

pub mod adc;
pub mod bitcell;
pub mod circuit;
pub mod crossbar;
pub mod device;
pub mod error;
pub mod imc;
pub mod inference;
pub mod linalg;
pub mod lut;
pub mod metrics;
pub mod units;
pub mod variation;
pub mod write;

pub use bitcell::{
    read_point, solve_bitcell_dc, sweep_vread, BranchCurrents, CellDevices, TerminalVoltages,
};
pub use device::{fet_current, mtj_resistance, BitcellKind, CellState, DeviceParams, MtjState};
pub use error::{Error, Result};
pub use units::{Amps, Joules, Ohms, Seconds, Volts};
