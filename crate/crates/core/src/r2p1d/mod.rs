//! Factorized (2+1)D residual video classifier with explicit backpropagation.

mod checkpoint;
mod config;
mod layers;
mod network;
mod tensor;

pub use checkpoint::{load_checkpoint, load_pretrained, save_checkpoint, LoadReport, WeightSource};
pub use config::{midplanes_formula, BlockSpec, NetworkConfig, StageSpec};
pub use layers::{BatchNorm3d, Conv3d, Linear, Mode, Param};
pub use network::{sigmoid, Network, SUPPORTED_FRAMES};
pub use tensor::{Real, Tensor};

