pub mod audit;
pub mod dyadic;
pub mod generators;
pub mod measure;
pub mod pipeline;
pub mod quasi_product;
pub mod smoothing;
pub mod tubes;
pub mod error;

pub use error::{Error, Result};
