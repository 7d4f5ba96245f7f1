//! Minimal CPU network layers with hand-written backward passes.

pub mod conv;
pub mod ops;
pub mod optim;
pub mod params;
pub mod train;
pub mod unet;

pub use conv::Conv2d;
pub use optim::{AdamW, StepLr};
pub use params::{ParamFile, Params};
pub use train::{fit, fit_select, TrainSettings};
pub use unet::{UNet, UNetTrace};
