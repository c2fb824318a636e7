//! Dataset construction, metric fusion and evaluation for blind image
//! quality assessment.
//!
//! The crate simulates calibrated single and two-stage distortions on
//! reference images ([`distort`], [`calibrate`], [`builder`]), fuses several
//! full-reference metrics into one synthetic quality score by reciprocal
//! rank fusion and a fitted logistic ([`sqb`]), and evaluates predictors
//! with correlation statistics and residual F-tests ([`eval`]).
//!
//! With the default `parallel` feature, batch work runs on a rayon pool;
//! without it everything runs on the calling thread. Results are identical
//! either way.

pub mod error;
pub mod fsutil;
pub mod par;
pub mod pixels;
pub mod distort;
pub mod metrics;
pub mod sqb;
pub mod eval;
pub mod calibrate;
pub mod builder;
pub mod io;
pub mod simplex;
pub mod synthetic;

pub use error::{Error, Result};
pub use pixels::ImageBuffer;
