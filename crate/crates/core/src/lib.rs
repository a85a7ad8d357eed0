pub mod cca;
pub mod cvr;
pub mod density;
pub mod error;
pub mod fpca;
pub mod numerics;
pub mod shape;
pub mod simgen;
pub mod sphere;

pub use error::{Error, Result};
