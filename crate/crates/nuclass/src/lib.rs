//! NU-Class Net: residual-prediction networks that restore low-bitrate
//! compressed video frames toward their original quality.
//!
//! The crate covers the full workflow:
//!
//! * [`model`] — the encoder/decoder architecture and its checkpoint format;
//! * [`pipeline`] — applying trained models to frames and sequences (base,
//!   sequential, and three-stage diffusion variants);
//! * [`dataset`] — building aligned (compressed, raw) frame pairs from a
//!   source video via an external encoder;
//! * [`train`] — losses, the optimizer/scheduler pair, and the three training
//!   procedures;
//! * [`metrics`] — MAE/MSE/PSNR/SSIM measurement and quality gates;
//! * [`quant`] — post-training fixed-point quantization.
//!
//! A narrative guide with runnable examples lives in `book/`; its code blocks
//! are compiled as doc-tests.

pub mod dataset;
pub mod error;
pub mod frameio;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod quant;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{build_model, Model, ModelConfig};
pub use tensor::{FrameTensor, ResidualTensor, Tensor};

#[cfg(doctest)]
mod book {
    //! Compiles the guide's code blocks as doc-tests so the book stays in
    //! sync with the library.
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/architecture.md")]
    mod architecture {}
    #[doc = include_str!("../../../book/src/enhancement.md")]
    mod enhancement {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics_chapter {}
    #[doc = include_str!("../../../book/src/quantization.md")]
    mod quantization {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
