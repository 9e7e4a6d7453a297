//! Pilot sources for the telelocomotion loop: scripted surrogates, CSV
//! replay and the live browser bridge, plus episode configuration.

// `!(x > 0.0)` guards are written to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bridge;
pub mod config;
pub mod gait;
pub mod replay;
pub mod scripted;
pub mod ui;
