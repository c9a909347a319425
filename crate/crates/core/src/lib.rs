//! Attribution for small feedforward networks under a modified chain rule.
//!
//! Gradient * Input, Integrated Gradients, ε-LRP and DeepLIFT (Rescale) are all
//! computed by one reverse-mode engine ([`modgrad`]) whose activation slope is
//! swapped per method. Occlusion methods and the Sensitivity-n evaluation
//! protocol sit on top.

pub mod attribution;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod modgrad;
pub mod tensor;
pub mod train;

pub use attribution::{attribute, AttributionMap, Baseline, Method};
pub use error::{Error, Result};
pub use graph::{forward, predict, ActivationKind, ForwardTrace, Graph, Layer, Node, NodeKind};
pub use modgrad::{modified_backprop, GradientRule, ModifiedGradient};
pub use tensor::Tensor;
