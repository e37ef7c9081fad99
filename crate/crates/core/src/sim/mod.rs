//! Synthetic CT data: phantoms, projection and counts-domain noise.

pub mod noise;
pub mod phantom;
pub mod radon;

pub use noise::{add_noise, attenuation_to_counts, NoiseSpec};
pub use phantom::{generate_phantom, phantom_variant, Ellipse, Phantom};
pub use radon::{radon_forward, Geometry};
