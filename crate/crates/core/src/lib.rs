//! Synthesis of Gaussian operations by direct measurement-based computation.
//!
//! A set of input modes and p-squeezed ancillas is sent through a linear
//! optical network and all but the output modes are measured in p. The
//! modules here compute the resulting effective symplectic and excess noise,
//! parameterize the tunable part of the network, optimize it, and verify the
//! results with an independent Gaussian oracle.

pub mod error;
pub mod io;
pub mod linalg;
pub mod mbqc;
pub mod optimizer;
pub mod oracle;
pub mod parameterization;
pub mod random;
pub mod run;
pub mod scenario;
pub mod symplectic;

pub use error::{Error, Result};
