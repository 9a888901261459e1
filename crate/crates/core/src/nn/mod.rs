//! Neural-network building blocks on top of `candle`: a deterministic
//! parameter store, checkpoints, layers, optimizers and schedules.

mod checkpoint;
pub mod conv;
pub mod layers;
mod optim;
mod schedule;
mod store;

pub use checkpoint::{average_tensors, Checkpoint, FORMAT_NAME, FORMAT_VERSION};
pub use optim::{clip_grad_norm, Adam, AdamConfig};
pub use schedule::{CosineWarmup, LrSchedule};
pub use store::{Init, ParamStore, Scope};

pub use candle_core::{DType, Device, Tensor, Var};
