//! Wideband RF power angular spectrum modeling with frequency-conditioned
//! 3D Gaussian splatting.
//!
//! The crate has two halves. A deterministic physics oracle (`em_physics`,
//! `pas_oracle`) ray-traces parametric scenes with the image-source method
//! and synthesizes ground-truth PAS images over a grid of TX positions and
//! frequencies. A trainable field (`gaussian_field`, `em_feature_net`,
//! `splat_renderer`, `training`) fits those images with 3D Gaussians whose
//! attenuation and emission are predicted per (TX, frequency) by a small
//! feature network, rendered through a tile-based differentiable
//! rasterizer with hand-written gradients.

pub mod dataset_io;
pub mod em_feature_net;
pub mod em_physics;
pub mod gaussian_field;
pub mod geom;
pub mod pas;
pub mod pas_oracle;
pub mod scene;
pub mod splat_renderer;
pub mod training;

pub use pas::PasImage;
pub use scene::Scene;
