#![no_std]
extern crate alloc;

pub mod algebra;
pub mod error;
pub mod feedback;
pub mod linalg;
pub mod models;
pub mod observation;
pub mod simulation;
pub mod tangent;
pub mod verdict;

pub use error::{Error, Result};
