pub mod error;
pub mod exec;
pub mod experiment;
pub mod lattice;
pub mod lindblad;
pub mod linalg;
pub mod observables;
pub mod rates;
pub mod reservoir;
pub mod special;
pub mod spectra;

pub use error::{Error, Result};
pub use exec::Parallelism;
