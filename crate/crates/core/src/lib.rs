pub mod config;
pub mod domain;
pub mod dynamics;
pub mod energy;
pub mod error;
pub mod fourier;
pub mod interp;
pub mod io;
pub mod jko;
pub mod kernels;
pub mod measures;
pub mod par;
pub mod probe;
pub mod setup;

pub use domain::Domain;
pub use error::{Error, Result};
