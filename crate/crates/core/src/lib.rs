// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod models;
pub mod quadrature;
pub mod resolvent;
pub mod pathsim;
pub mod penalization;
pub mod verify;
pub mod cli;
