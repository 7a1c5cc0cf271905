//! Visuomotor policies over a deterministic 2-D manipulation simulator,
//! with encoder stitching between policies trained under different
//! cameras.
//!
//! The crate is organized as a pipeline:
//!
//! * [`sim`]: world dynamics, scripted experts, cameras and corruptions,
//!   demonstration datasets, trajectory replay.
//! * [`anchors`]: k-means selection of anchor observations and their
//!   index-matched counterparts across camera pairs.
//! * [`policy`]: convolutional encoders, relative-representation layers,
//!   Gaussian-mixture action heads, encoder stitching, checkpoints.
//! * [`train`]: behavior cloning with optional latent regularizers.
//! * [`eval`]: closed-loop rollouts and the full transfer experiment.
//! * [`analysis`]: latent-space diagnostics (pairwise distances, PCA,
//!   orthogonal alignment, saliency maps).
//!
//! Everything stochastic draws from named streams derived in [`rng`], so
//! every artifact in the pipeline is reproducible from its seeds.

pub mod analysis;
pub mod anchors;
pub mod error;
pub mod eval;
pub mod io;
pub mod policy;
pub mod rng;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
