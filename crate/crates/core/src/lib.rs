pub mod answer;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod mc;
pub mod nn;
pub mod pipeline;
pub mod question;
pub mod tensor;
pub mod text;
pub mod toy;
pub mod trainer;
pub mod util;

pub use error::{CheckpointError, Error, Result};
