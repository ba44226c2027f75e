pub mod anomaly;
pub mod app;
pub mod embed;
pub mod error;
pub mod image;
pub mod model;
pub mod phantom;
pub mod plot;
pub mod rng;
pub mod roi;
pub mod segscore;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
