#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::too_many_arguments,
    clippy::needless_range_loop
)]

pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod func;
pub mod model;
pub mod optimize;
pub mod report;
pub mod tangent;
pub mod upwind;
pub mod wft;

pub use error::{Error, Result};
