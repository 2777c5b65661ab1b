//! Numerical machinery for heat kernels, Brownian motion and chamber-flow
//! invariance on SL(2,R) and SL(3,R) symmetric spaces.

pub mod acceptance;
pub mod decomp;
pub mod diffusion;
pub mod error;
pub mod group;
pub mod heatkernel;
pub mod lamination;
pub mod parallel;
pub mod rng;
pub mod rootdata;

pub use error::{Error, Result};
pub use group::GroupElement;
pub use rootdata::{build_root_system, ChamberVector, GroupId, Root, RootSystem};
