//! Minimal mini-batch SGD trainer for fixture networks (softmax cross-entropy
//! on the class scores, standard gradients).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{forward, predict, Graph, NodeKind};
use crate::modgrad::{backward, GradientRule, ParamGrad};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            learning_rate: 0.1,
            batch_size: 16,
            seed: 0,
        }
    }
}

/// Softmax cross-entropy loss and its gradient with respect to the scores.
fn softmax_xent(scores: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    let loss = -(exp[label] / total).ln();
    let mut grad: Vec<f64> = exp.iter().map(|e| e / total).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

/// Trains a copy of `graph` and returns it. Per-sample gradients are computed in
/// parallel and summed in batch order, so results are bit-identical for a
/// fixed seed regardless of thread count.
pub fn train_toy(graph: &Graph, data: &Dataset, config: &TrainConfig) -> Result<Graph> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let classes = graph.num_classes();
    if let Some(&bad) = data.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {classes} outputs"
        )));
    }
    let mut graph = graph.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results: Vec<(f64, Vec<Option<ParamGrad>>)> = batch
                .par_iter()
                .map(|&i| sample_gradient(&graph, &data.inputs[i], data.labels[i]))
                .collect::<Result<_>>()?;
            let mut summed: Vec<Option<ParamGrad>> = vec![None; graph.nodes().len()];
            for (loss, grads) in results {
                epoch_loss += loss;
                for (acc, g) in summed.iter_mut().zip(grads) {
                    match (acc.as_mut(), g) {
                        (Some(a), Some(g)) => {
                            a.weights.iter_mut().zip(&g.weights).for_each(|(x, y)| *x += y);
                            a.bias.iter_mut().zip(&g.bias).for_each(|(x, y)| *x += y);
                        }
                        (None, g) => *acc = g,
                        (Some(_), None) => {}
                    }
                }
            }
            if !epoch_loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            let step = config.learning_rate / batch.len() as f64;
            apply_update(&mut graph, &summed, step);
            if !parameters_finite(&graph) {
                return Err(Error::Divergence { epoch });
            }
        }
        if !epoch_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
    }
    Ok(graph)
}

fn sample_gradient(graph: &Graph, x: &Tensor, label: usize) -> Result<(f64, Vec<Option<ParamGrad>>)> {
    let (scores, trace) = forward(graph, x)?;
    let (loss, grad) = softmax_xent(scores.data(), label);
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Ok((f64::NAN, vec![None; graph.nodes().len()]));
    }
    let seed = Tensor::vector(grad)?;
    let back = backward(graph, &trace, &GradientRule::Standard, &seed, true)?;
    Ok((loss, back.params))
}

fn apply_update(graph: &mut Graph, grads: &[Option<ParamGrad>], step: f64) {
    if step == 0.0 {
        return;
    }
    for (node, grad) in graph.nodes_mut().iter_mut().zip(grads) {
        let Some(grad) = grad else { continue };
        match &mut node.kind {
            NodeKind::Dense { weights, bias }
            | NodeKind::Conv2d {
                kernels: weights,
                bias,
                ..
            } => {
                weights
                    .data_mut()
                    .iter_mut()
                    .zip(&grad.weights)
                    .for_each(|(w, g)| *w -= step * g);
                bias.data_mut()
                    .iter_mut()
                    .zip(&grad.bias)
                    .for_each(|(b, g)| *b -= step * g);
            }
            _ => {}
        }
    }
}

fn parameters_finite(graph: &Graph) -> bool {
    graph.nodes().iter().all(|node| match &node.kind {
        NodeKind::Dense { weights, bias } | NodeKind::Conv2d { kernels: weights, bias, .. } => {
            weights.data().iter().chain(bias.data()).all(|v| v.is_finite())
        }
        _ => true,
    })
}

/// Fraction of samples whose arg-max score equals the label.
pub fn accuracy(graph: &Graph, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let hits = data
        .inputs
        .par_iter()
        .zip(data.labels.par_iter())
        .map(|(x, &y)| predict(graph, x).map(|s| usize::from(s.argmax() == y)))
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / data.len() as f64)
}
