//! Geodesic flows on nonpositively curved surfaces containing a flat
//! cylinder: surface models, exact/ODE flow, periodic orbits, and invariant
//! measure estimates.

pub mod error;
pub mod flow;
pub mod hyperbolic;
pub mod maxflow;
pub mod measure;
pub mod ode;
pub mod periodic;
pub mod surface;

pub use error::{LabError, Result};
