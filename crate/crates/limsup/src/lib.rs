//! Measurable objects on compact Ahlfors-regular model spaces: regular
//! measures, generalized dyadic cubes, t-energies, net contents, and
//! simulation of limsup sets (random fractals, random covers, rectangles).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod covering;
pub mod cubes;
pub mod dimension;
pub mod energy;
pub mod error;
pub mod netcontent;
pub mod randfractal;
pub mod rectangles;
pub mod rng;
pub mod spaces;

pub use error::{Error, Result};
