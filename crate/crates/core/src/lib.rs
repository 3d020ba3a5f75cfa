//! Hebbian learning for convolutional feature extraction.
//!
//! Layers are trained by local, unsupervised rules: a nonlinear Hebbian
//! PCA rule (a Sanger-style generalized Hebbian algorithm with the neuron
//! activation applied to the outputs) or winner-takes-all competition.
//! Convolutional layers learn a shared kernel by averaging the dense rule's
//! update over every patch position and every image in a mini-batch. Linear
//! softmax probes trained on the frozen features of each layer measure what
//! the layers learned.
//!
//! - [`nn`]: patch extraction, convolution, pooling, ReLU
//! - [`rules`]: dense Hebbian rules and the representation error
//! - [`conv_hebbian`]: convolutional Hebbian layers and input centering
//! - [`probe`]: linear softmax probe trained with SGD
//! - [`network`]: layer stacks, training loop, early stopping, retraining
//! - [`data`]: CIFAR-10 / MNIST readers and synthetic generators
//! - [`oracle`]: batch PCA and k-means references for verification
//! - [`checkpoint`], [`report`]: on-disk formats
//!
//! Data-parallel loops run on rayon when the `parallel` feature (on by
//! default) is enabled. Results do not depend on the execution mode.

pub mod checkpoint;
pub mod conv_hebbian;
pub mod data;
pub mod error;
pub mod exec;
pub mod network;
pub mod nn;
pub mod oracle;
pub mod probe;
pub mod report;
pub mod rules;
pub mod tensor;

pub use error::{Error, Result};
pub use exec::Exec;
pub use tensor::Tensor;
