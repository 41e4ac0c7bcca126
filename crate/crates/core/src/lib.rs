// NaN-rejecting checks are written as `!(x > 0.0)`; published coefficients keep their digits.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::inconsistent_digit_grouping, clippy::excessive_precision)]

pub mod config;
pub mod env;
pub mod exactsmall;
pub mod experiment;
pub mod io;
pub mod limitproc;
pub mod observe;
pub mod par;
pub mod path;
pub mod rngs;
pub mod scales;
pub mod special;
pub mod stats;
pub mod suite;
pub mod walk;
