#![no_std]
// `num_traits::Float` supplies float math on toolchains whose `core` lacks
// it; elsewhere the inherent methods win and the import is unused
#![allow(unused_imports)]
extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;

pub mod cf;
pub mod dist;
pub mod invert;
pub mod joint;
pub mod quad;
pub mod sim;
pub mod special;

pub use dist::{JobSizeModel, presets};
pub use cf::CfEstimate;
pub use error::{Error, Result};
pub use invert::{CdfEstimate, MidpointRule};
pub use sim::{simulate, SimConfig, WorkloadSample};
