pub mod analysis;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod lie_decomp;
pub mod limit_cycle;
pub mod linalg;
pub mod models;
pub mod operator;
pub mod phase_equation;
pub mod prc;
