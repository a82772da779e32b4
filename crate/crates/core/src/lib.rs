//! Patch-weighted intensity-based 2D/3D registration of CT volumes to
//! fluoroscopy, with a simulation study harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod formats;
pub mod geom;
pub mod image;
pub mod projector;
pub mod registration;
pub mod seed;
pub mod similarity;
pub mod simstudy;
pub mod weights;

pub use error::{Error, Result};
