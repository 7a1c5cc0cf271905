//! Anchor observation selection and cross-camera matching.

pub mod kmeans;
pub mod select;

pub use kmeans::{kmeans, KmeansConfig, KmeansResult};
pub use select::{anchor_images, select_anchors, AnchorIndex, AnchorRef};
