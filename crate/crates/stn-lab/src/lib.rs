//! Spatial transformer networks at desk scale.
//!
//! A small, deterministic lab for studying when spatially transforming
//! CNN feature maps can and cannot stand in for transforming the input
//! image: a minimal reverse-mode autodiff engine with exactly the layer
//! vocabulary the experiments need, differentiable affine warping, the
//! STN-C0 / STN-CX / STN-DLX / STN-SLX architecture families,
//! perturbed-digit dataset synthesis, closed-form pose extraction from
//! affine matrices, and a numerical equivariance auditor.
//!
//! Start with the runnable examples:
//!
//! ```text
//! cargo run --release --example gradient_check
//! cargo run --release --example warp_roundtrip
//! cargo run --release --example similarity_fit
//! cargo run --release --example mirrored_filters
//! cargo run --release --example equivariance_audit
//! cargo run --release --example param_counts
//! cargo run --release --example iterative_composition
//! cargo run --release --example synthesize_dataset
//! cargo run --release --example train_stn
//! ```
//!
//! The `stn-lab` binary wraps the same functionality as subcommands
//! (`synth`, `train`, `eval`, `params`, `audit`, `pose-report`).

pub mod audit;
pub mod check;
pub mod arch;
pub mod data;
pub mod error;
pub mod graph;
pub mod kernels;
pub mod network;
pub mod pose;
pub mod real;
pub mod rng;
pub mod sgd;
pub mod tensor;
pub mod train;
pub mod warp;

pub use error::{Error, Result};
pub use graph::{Graph, NodeId};
pub use real::Real;
pub use rng::StreamRng;
pub use tensor::Tensor;
pub use warp::{AffineTransform, BoundaryPolicy, Frame};
