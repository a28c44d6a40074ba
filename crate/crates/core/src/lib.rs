pub mod adam;
pub mod checkpoint;
pub mod cli;
pub mod env;
pub mod error;
pub mod flow;
pub mod mlp;
pub mod oracle;
pub mod tensor;
pub mod trainer;
pub mod value;

pub use error::{Error, Result};
