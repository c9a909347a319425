//! The small MLP and CNN architectures used as test fixtures, mirroring the
//! paper's MNIST networks at 8x8 scale.

use clap::ValueEnum;
use gradattr::data::Dataset;
use gradattr::graph::build_sequential;
use gradattr::tensor::Padding;
use gradattr::train::{accuracy, train_toy, TrainConfig};
use gradattr::{ActivationKind, Error, Graph, Layer, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Mlp,
    Cnn,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Mlp => "mlp",
            Arch::Cnn => "cnn",
        }
    }
}

pub const HIDDEN_UNITS: usize = 32;

/// Layer list for `arch` on inputs of `input_shape` with `classes` outputs.
///
/// MLP: Dense(32)+f, Dense(32)+f, Dense(classes), with a leading Flatten for
/// image inputs. CNN: Conv 3x3x8 +f, Conv 3x3x16 +f, MaxPool 2, Flatten,
/// Dense(32)+f, Dense(classes). The output layer is linear in both.
pub fn fixture_layers(
    arch: Arch,
    activation: ActivationKind,
    input_shape: &[usize],
    classes: usize,
) -> Result<Vec<Layer>> {
    let act = Some(activation);
    let mut layers = vec![Layer::Input {
        shape: input_shape.to_vec(),
    }];
    match arch {
        Arch::Mlp => {
            if input_shape.len() > 1 {
                layers.push(Layer::Flatten);
            }
            layers.push(Layer::dense(HIDDEN_UNITS, act));
            layers.push(Layer::dense(HIDDEN_UNITS, act));
        }
        Arch::Cnn => {
            if input_shape.len() != 3 {
                return Err(Error::InvalidArgument(format!(
                    "cnn fixture needs [channels, height, width] inputs, got {input_shape:?}"
                )));
            }
            for kernels in [8, 16] {
                layers.push(Layer::Conv2d {
                    kernels,
                    size: 3,
                    stride: 1,
                    padding: Padding::Valid,
                    activation: act,
                });
            }
            layers.push(Layer::MaxPool2d { k: 2 });
            layers.push(Layer::Flatten);
            layers.push(Layer::dense(HIDDEN_UNITS, act));
        }
    }
    layers.push(Layer::dense(classes, None));
    Ok(layers)
}

/// Training defaults per variant. Sigmoid units have small slopes, so plain SGD
/// needs a larger step, and the sigmoid CNN also needs more epochs to get past
/// its initial plateau.
pub fn default_train_config(arch: Arch, activation: ActivationKind, seed: u64) -> TrainConfig {
    let (learning_rate, epochs) = match (arch, activation) {
        (Arch::Cnn, ActivationKind::Sigmoid) => (1.0, 120),
        (Arch::Mlp, ActivationKind::Sigmoid) => (0.5, 40),
        (Arch::Cnn, _) => (0.05, 40),
        _ => (0.1, 40),
    };
    TrainConfig {
        epochs,
        learning_rate,
        batch_size: 16,
        seed,
    }
}

/// Builds and trains a fixture; returns the model and its training accuracy.
pub fn train_fixture(
    arch: Arch,
    activation: ActivationKind,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<(Graph, f64)> {
    let first = data
        .inputs
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty training set".into()))?;
    let layers = fixture_layers(arch, activation, first.shape(), data.num_classes())?;
    let graph = build_sequential(&layers, config.seed)?;
    let trained = train_toy(&graph, data, config)?;
    let acc = accuracy(&trained, data)?;
    Ok((trained, acc))
}
