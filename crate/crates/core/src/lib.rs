//! Numerical core of a desk-scale lab for manifold-aware adversarial
//! training.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO; file formats
//! are exposed as byte encoders/decoders ([`smm1`]) and everything else is
//! pure computation over [`linalg::Matrix`].

#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod attack;
pub mod data;
pub mod error;
pub mod id;
pub mod linalg;
pub mod manifold;
pub mod network;
pub mod smm1;
pub mod training;

pub use error::{Error, Result};
pub use linalg::Matrix;
