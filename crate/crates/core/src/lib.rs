pub mod bench;
pub mod demos;
pub mod error;
pub mod forward;
pub mod io;
pub mod kkt_baseline;
pub mod map_estimator;
pub mod mcmc;
pub mod model;
pub mod numerics;
pub mod problems;
pub mod tls_estimator;

pub use error::{Error, Result};
