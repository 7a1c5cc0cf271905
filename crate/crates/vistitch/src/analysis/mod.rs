//! Tools for inspecting what trained policies learned: distances
//! between the latent codes two encoders assign to paired observations,
//! PCA projections of latent clouds, Procrustes alignment between them,
//! and gradient-based saliency maps, plus deterministic PGM/SVG export.
//!
//! Everything here is read-only over trained policies and datasets and
//! uses exact dense linear algebra sized for two-digit latent
//! dimensions.

pub mod distance;
pub mod export;
pub mod gradcam;
pub mod linalg;
pub mod pca;
pub mod procrustes;

pub use distance::{interface_distances, pairwise_distances, DistanceReport};
pub use export::{
    grayscale_plane, heat_overlay_svg, pgm_bytes, write_pgm, write_pgm_normalized,
};
pub use gradcam::{bilinear_upsample, grad_cam, Heatmap};
pub use linalg::{jacobi_eigh, jacobi_svd, random_orthogonal};
pub use pca::{pca_project, PcaProjection};
pub use procrustes::{procrustes_fit, ProcrustesFit};
