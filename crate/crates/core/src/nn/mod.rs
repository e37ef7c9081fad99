//! Convolutional sinogram denoiser, its optimiser and training loop.

mod adam;
mod checkpoint;
mod conv;
mod infer;
mod model;
mod train;

pub use adam::Adam;
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use infer::{denoise_array, denoise_sinogram, Tiling};
pub use model::{backprop_gradient_check, ConvCache, Denoiser, DenoiserModel, FreeParameterModel, MIN_INPUT_SIDE};
pub use train::{batch_gradient, evaluate_loss, train, OptimizerSettings, Sample, TrainState, TrainingPair};
