pub mod acquisition;
pub mod bench;
pub mod error;
pub mod gp;
pub mod linalg;
pub mod objective;
pub mod optimize;
pub mod sampling;
pub mod suggest;

pub use error::{Error, Result};
