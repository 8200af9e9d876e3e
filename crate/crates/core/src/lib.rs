//! Structure-aware convolutional decoding of quantum error-correcting codes.
//!
//! The crate is organised as a pipeline: [`codes`] builds stabilizer codes and
//! their convolution graphs, [`sim`] samples memory-experiment syndromes,
//! [`nn`] is the decoder network with exact gradients, [`train`] holds the
//! optimizers and training loop, [`decoders`] the reference decoders,
//! [`analysis`] the figures of merit and fits, and [`hardware`] the
//! inference cost models.

pub mod codes;
pub mod sim;
pub mod tensor;
pub mod nn;
pub mod train;
pub mod decoders;
pub mod analysis;
pub mod hardware;
