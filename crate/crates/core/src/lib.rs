//! Ring detection and procedural wood model fitting from single images of
//! planar wood cuts.

// `!(x >= 0.0)` style checks are deliberate: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod dendro;
pub mod error;
pub mod fit;
pub mod frequency;
pub mod gabor;
pub mod image;
pub mod kv;
pub mod locate;
pub mod model;
pub mod orientation;
pub mod phase;
pub mod pipeline;
pub mod pnm;
pub mod region;
pub mod synth;
pub mod tracer;

pub use error::{Error, Result};
