//! miniseg-core: a self-contained segmentation-training engine.
//!
//! Dense f64 NCHW tensors, hand-written forward/backward kernels for a
//! miniature VGG-backbone U-Net, SGD with momentum under a warmup +
//! cosine-annealing schedule, and three interchangeable training
//! topologies (single worker, synchronous data-parallel, federated
//! averaging) with exact communication accounting.

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
