//! Dual-stream wavelet convolutional classifier.
//!
//! An input image is split by a level-1 Daubechies wavelet transform into an
//! approximation subband and three detail subbands. Two encoders with
//! disjoint parameters process the approximation (structural stream) and the
//! stacked details (detail stream); their pooled descriptors are
//! concatenated and classified by a small fused head. An auxiliary head on
//! the structural descriptor alone powers calibration-gated adaptive
//! inference and structure-only Grad-CAM.
//!
//! Every layer has a hand-written backward pass checked against central
//! finite differences; there is no general autodiff.

pub mod adaptive;
pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod explain;
pub mod model;
pub mod numerics;
pub mod training;
pub mod wavelet;

pub use error::{Error, Result};
pub use numerics::Tensor;
