//! Weight quantization in tight fusion frame coordinates.
//!
//! Layer weights `Theta` are moved into frame space (`D = P_out^T Theta P_in`),
//! clipped, and quantized to a few bits with a Hessian-guided column sweep whose
//! Hessian is built from frame-space calibration activations. The packed codes,
//! per-row grids and frame seeds go into the FQNT format; inference regenerates the
//! frames from their seeds.

pub mod container;
pub mod demo;
pub mod error;
pub mod eval;
pub mod frame_ops;
pub mod packfmt;
pub mod quantizer;
pub mod rng;
pub mod robustness;
pub mod runtime;
pub mod tff;

pub use error::{Error, FormatError, Result};
pub use frame_ops::{analysis, frame_operator_deviation, project_subspace, synthesis, FfCoefficients};
pub use tff::{build_fusion_frame, FrameParams, FusionFrame, Rotation};
