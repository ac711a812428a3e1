pub mod automata;
pub mod coordinator;
pub mod error;
pub mod machines;
pub mod metaclassify;
pub mod nn;
pub mod pipeline;
pub mod presets;
pub mod rng;

pub use error::{Error, Result};
pub mod traces;
pub mod trainer;
pub mod weightspace;
pub mod worker;
