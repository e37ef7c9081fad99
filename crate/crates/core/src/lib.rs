//! Counts-domain CT denoising under frequency-shaped training losses.
//!
//! The crate is organised as a pipeline:
//!
//! * [`sim`] builds ellipse phantoms, projects them to parallel-beam
//!   sinograms and synthesises Poisson + electronic noise in the counts domain.
//! * [`filters`] designs the lowpass / highpass FIR pair that shapes the loss.
//! * [`loss`] evaluates the composite filtered loss and its exact gradient.
//! * [`nn`] holds a small residual CNN, an Adam optimiser and the training loop.
//! * [`recon`] inverts counts and reconstructs images with filtered backprojection.
//! * [`nps`] estimates radially averaged noise power spectra and their entropy.
//! * [`harness`] ties everything into a seeded, file-based experiment.

pub mod error;
pub mod filters;
pub mod harness;
pub mod loss;
pub mod nn;
pub mod nps;
pub mod raster;
pub mod recon;
pub mod sim;

pub use error::{Error, Result};
pub use raster::{Domain, ImageGrid, Sinogram};
