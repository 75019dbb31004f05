//! Preprocessing steps (data cleaning, training-source selection, feature
//! selection) expressed as learnable mixtures and trained jointly with an MLP
//! regressor by gradient descent.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cleaning;
pub mod data;
pub mod error;
pub mod features;
pub mod harness;
pub mod matrix;
pub mod nn;
pub mod selection;

pub use error::{Error, Result};
pub use matrix::Matrix;
