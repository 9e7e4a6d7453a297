//! Telelocomotion stack: a hybrid-LIP walking reference generated from a
//! pilot's stepping, tracked by a single-rigid-body biped with a
//! force-distribution balance controller and swing-leg control.

// `!(x > 0.0)` guards are written to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod balance;
pub mod hlip;
pub mod hwr;
pub mod qp;
pub mod robot;
pub mod srbm;
pub mod swing;
pub mod telelocomotion;
