//! Two-branch text recognition and character counting with reciprocal
//! feature adaptors, trained on procedurally rendered word images.

pub mod data;
pub mod error;
pub mod layers;
pub mod losses;
pub mod model;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
