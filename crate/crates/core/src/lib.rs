//! Determinantal point processes with integrable projection kernels.
//!
//! Finite (discrete or quadrature-discretized) realizations of projection
//! kernels, their Palm and hole conditionings, multiplicative functionals,
//! closed-form Radon–Nikodym derivatives, an exact sampler and an
//! enumeration oracle. Everything here is `no_std` with `alloc`.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)] // written so that NaN fails the test

extern crate alloc;

pub mod error;
pub mod functionals;
pub mod ground;
pub mod kernels;
pub mod linalg;
pub mod oracle;
pub mod orthopoly;
pub mod palm;
pub mod sampler;

pub use error::{Error, Result};
