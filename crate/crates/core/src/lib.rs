//! Hybrid stabilization toolkit.
//!
//! A practical backstepping controller drives the state near a compact
//! attractor, an LMI-certified linear controller takes over inside its basin,
//! and a hysteresis supervisor switches between them so that the origin of
//! the closed loop is globally asymptotically stable.
//!
//! ```no_run
//! use hystab::example::ExampleInstance;
//! use hystab::pipeline;
//!
//! let inst = ExampleInstance::reference();
//! let arc = pipeline::simulate_example(&inst, &[2.0, 0.0], "2,1".parse().unwrap(), 15.0).unwrap();
//! println!("{} jumps", arc.jumps.len());
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backstepping;
pub mod cli;
mod error;
pub mod example;
pub mod hybrid;
pub mod local;
pub mod numerics;
pub mod pipeline;
pub mod plant;

pub use error::{Error, Result};
pub use numerics::{Mat, Real};

pub type Mat64 = numerics::Mat<f64>;
pub type Mat32 = numerics::Mat<f32>;
pub type LmiCertificate64 = local::LmiCertificate<f64>;
pub type LmiCertificate32 = local::LmiCertificate<f32>;
pub type LmiSystem64 = local::LmiSystem<f64>;
pub type LmiSystem32 = local::LmiSystem<f32>;
pub type SymEig64 = numerics::SymEigResult<f64>;
