//! Windowed reconstruction of multiband signals from periodic nonuniform
//! samples taken on several interleaved uniform grids.

pub mod band_model;
pub mod blind_music;
pub mod error;
pub mod io;
pub mod primes;
pub mod reconstructor;
pub mod scenario;
pub mod siggen;
pub mod smrs_design;
pub mod solver;
pub mod special;
pub mod window;

pub use error::{Error, Result};
