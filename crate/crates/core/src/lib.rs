#![cfg_attr(not(test), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod flowgen;
pub mod longtune;
pub mod nftcore;
pub mod rewardlab;
pub mod rng;
pub mod streamctx;
pub mod tensorgrad;
pub mod theoryx;

pub use error::{Error, Result};
