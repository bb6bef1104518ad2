pub mod error;
pub mod fsutil;
pub mod clipset;
pub mod r2p1d;
pub mod explain;
pub mod perturb;
pub mod trainer;

pub use error::{CoreError, Result};
