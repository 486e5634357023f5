//! Joint face spoofing and forgery detection from appearance and remote
//! photoplethysmography (rPPG) cues.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cwt;
pub mod data;
pub mod error;
pub mod mapfile;
pub mod metrics;
pub mod models;
pub mod protocol;
pub mod record;
pub mod rppg;
pub mod synthbench;
pub mod task;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
