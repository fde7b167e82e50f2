//! Pyramid-based deep pansharpening.
//!
//! A panchromatic image is split into Laplacian-pyramid detail bands; a
//! small convolutional network (one parameter set shared across its
//! residual blocks and across pyramid levels) predicts a residual that is
//! added to the upsampled multispectral image, coarse to fine.
//!
//! Modules, bottom up:
//! - [`raster`]: the `MBR` raster container and PPM previews
//! - [`pyramid`]: reduce/expand/detail and pyramid stacks
//! - [`tensor`]: 4-axis tensors, convolutions and the reverse-mode tape
//! - [`fusenet`]: the fusion network and its checkpoint format
//! - [`pipeline`]: recursive coarse-to-fine fusion
//! - [`training`]: Wald-protocol sampling, multi-scale loss, ADAM, training loop
//! - [`metrics`]: SAM, ERGAS, QAVE, SCC, D_lambda, D_s, QNR
//! - [`cli`]: the `pansharp` command-line tool

pub mod cli;
pub mod error;
pub mod fusenet;
pub mod metrics;
pub mod pipeline;
pub mod pyramid;
pub mod raster;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use fusenet::FuseNetParams;
pub use raster::RasterImage;
pub use tensor::Tensor;
