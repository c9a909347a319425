//! Reverse-mode backpropagation with a pluggable local slope at every activation.
//!
//! Linear nodes (dense, conv) propagate through their transposed maps, max-pool
//! routes to the recorded argmax, and multiply uses the product rule with the
//! operand values of the original pass. Only activation nodes consult the
//! [`GradientRule`]: the standard rule gives the ordinary gradient, `LrpRatio`
//! gives ε-LRP's `f(z)/z` and `AverageSlope` gives DeepLIFT Rescale's
//! `(f(z) - f(z̄)) / (z - z̄)`.

use crate::error::{Error, Result};
use crate::graph::{forward, ActivationKind, ForwardTrace, Graph, NodeKind};
use crate::tensor::{self, ConvGeometry, Tensor};

pub const DEFAULT_EPSILON: f64 = 1e-4;
pub const DEFAULT_DELTA_THRESHOLD: f64 = 1e-6;

/// Which local slope replaces f'(z) at activation nodes.
#[derive(Debug, Clone, Copy)]
pub enum GradientRule<'a> {
    Standard,
    /// `f(z) / (z + ε·sign(z))`, `sign(0) = +1`.
    LrpRatio { epsilon: f64 },
    /// Average slope between the baseline pre-activation and `z`. Falls back to
    /// f'(z) when `|z - z̄| < delta_threshold`.
    AverageSlope {
        baseline: &'a ForwardTrace,
        delta_threshold: f64,
    },
}

impl GradientRule<'_> {
    fn check(&self) -> Result<()> {
        match *self {
            GradientRule::LrpRatio { epsilon } if !(epsilon > 0.0) => Err(Error::InvalidArgument(
                format!("epsilon must be positive, got {epsilon}"),
            )),
            GradientRule::AverageSlope {
                delta_threshold, ..
            } if !(delta_threshold > 0.0) => Err(Error::InvalidArgument(format!(
                "delta threshold must be positive, got {delta_threshold}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Local slope used in place of f'(z).
///
/// `z_bar` is the baseline pre-activation and is only read by `AverageSlope`;
/// when absent the rule degenerates to f'(z). Identity activations have slope
/// 1 under every rule since f(z)/z and the average slope are identically 1.
pub fn slope(kind: ActivationKind, rule: &GradientRule<'_>, z: f64, z_bar: Option<f64>) -> f64 {
    if kind == ActivationKind::Identity {
        return 1.0;
    }
    match *rule {
        GradientRule::Standard => kind.derivative(z),
        GradientRule::LrpRatio { epsilon } => {
            let sign = if z >= 0.0 { 1.0 } else { -1.0 };
            kind.apply(z) / (z + epsilon * sign)
        }
        GradientRule::AverageSlope {
            delta_threshold, ..
        } => match z_bar {
            Some(zb) if (z - zb).abs() >= delta_threshold => {
                (kind.apply(z) - kind.apply(zb)) / (z - zb)
            }
            _ => kind.derivative(z),
        },
    }
}

/// ∂^g S_c / ∂x for one target class.
#[derive(Debug, Clone, PartialEq)]
pub struct ModifiedGradient {
    pub values: Tensor,
    pub target: usize,
}

/// Backpropagates a one-hot adjoint at class `target` under `rule`.
pub fn modified_backprop(
    graph: &Graph,
    trace: &ForwardTrace,
    rule: &GradientRule<'_>,
    target: usize,
) -> Result<ModifiedGradient> {
    let classes = graph.num_classes();
    if target >= classes {
        return Err(Error::InvalidArgument(format!(
            "target class {target} out of range for {classes} outputs"
        )));
    }
    let mut seed = vec![0.0; classes];
    seed[target] = 1.0;
    let values = backprop_seeded(graph, trace, rule, &Tensor::vector(seed)?)?;
    Ok(ModifiedGradient { values, target })
}

/// Backpropagates an arbitrary output adjoint.
pub fn backprop_seeded(
    graph: &Graph,
    trace: &ForwardTrace,
    rule: &GradientRule<'_>,
    seed: &Tensor,
) -> Result<Tensor> {
    Ok(backward(graph, trace, rule, seed, false)?.input)
}

/// Gradients of one Dense/Conv node's parameters, in the node's own layout.
#[derive(Debug, Clone)]
pub(crate) struct ParamGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

pub(crate) struct Backward {
    pub input: Tensor,
    /// Indexed by node position; `None` for parameter-free nodes.
    pub params: Vec<Option<ParamGrad>>,
}

pub(crate) fn backward(
    graph: &Graph,
    trace: &ForwardTrace,
    rule: &GradientRule<'_>,
    seed: &Tensor,
    want_params: bool,
) -> Result<Backward> {
    rule.check()?;
    trace.check_matches(graph)?;
    if let GradientRule::AverageSlope { baseline, .. } = rule {
        baseline.check_matches(graph)?;
    }
    let out_pos = graph.output_pos();
    if seed.shape() != graph.shape_at(out_pos) {
        return Err(Error::Dimension(format!(
            "adjoint seed {:?} does not match output {:?}",
            seed.shape(),
            graph.shape_at(out_pos)
        )));
    }

    let n = graph.nodes().len();
    let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut params: Vec<Option<ParamGrad>> = vec![None; n];
    adjoints[out_pos] = Some(seed.data().to_vec());

    let accumulate = |slot: &mut Option<Vec<f64>>, grad: Vec<f64>| match slot {
        Some(acc) => acc.iter_mut().zip(grad).for_each(|(a, g)| *a += g),
        None => *slot = Some(grad),
    };

    for &pos in graph.order().iter().rev() {
        let Some(adj) = adjoints[pos].take() else {
            continue;
        };
        let node = &graph.nodes()[pos];
        let sources = graph.sources(pos);
        match &node.kind {
            NodeKind::Input { .. } => {
                adjoints[pos] = Some(adj);
                continue;
            }
            NodeKind::Dense { weights, .. } => {
                let x = trace.value_at(sources[0]).data();
                if want_params {
                    let mut dw = Vec::with_capacity(weights.len());
                    for &a in &adj {
                        dw.extend(x.iter().map(|v| a * v));
                    }
                    params[pos] = Some(ParamGrad {
                        weights: dw,
                        bias: adj.clone(),
                    });
                }
                accumulate(&mut adjoints[sources[0]], tensor::affine_transpose(weights, &adj));
            }
            NodeKind::Conv2d {
                kernels,
                stride,
                padding,
                ..
            } => {
                let x = trace.value_at(sources[0]);
                let geo = ConvGeometry::resolve(x.shape(), kernels.shape(), *stride, *padding)?;
                if want_params {
                    let (dk, db) = tensor::conv2d_backward_params(&geo, x.data(), &adj);
                    params[pos] = Some(ParamGrad {
                        weights: dk,
                        bias: db,
                    });
                }
                accumulate(
                    &mut adjoints[sources[0]],
                    tensor::conv2d_backward_input(&geo, kernels, &adj),
                );
            }
            NodeKind::MaxPool2d { .. } => {
                let argmax = trace
                    .argmax_at(pos)
                    .expect("max-pool nodes record their argmax");
                let mut grad = vec![0.0; trace.value_at(sources[0]).len()];
                for (&i, &a) in argmax.iter().zip(&adj) {
                    grad[i] += a;
                }
                accumulate(&mut adjoints[sources[0]], grad);
            }
            NodeKind::Flatten | NodeKind::AffineShift { .. } => {
                accumulate(&mut adjoints[sources[0]], adj);
            }
            NodeKind::Activation { activation } => {
                let z = trace.value_at(sources[0]).data();
                let z_bar = match rule {
                    GradientRule::AverageSlope { baseline, .. } => {
                        Some(baseline.value_at(sources[0]).data())
                    }
                    _ => None,
                };
                let grad = adj
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| a * slope(*activation, rule, z[i], z_bar.map(|zb| zb[i])))
                    .collect();
                accumulate(&mut adjoints[sources[0]], grad);
            }
            NodeKind::Multiply => {
                let lhs = trace.value_at(sources[0]).data();
                let rhs = trace.value_at(sources[1]).data();
                let d_lhs = adj.iter().zip(rhs).map(|(a, r)| a * r).collect();
                let d_rhs = adj.iter().zip(lhs).map(|(a, l)| a * l).collect();
                accumulate(&mut adjoints[sources[0]], d_lhs);
                accumulate(&mut adjoints[sources[1]], d_rhs);
            }
        }
    }

    let input_pos = graph.input_pos();
    let data = adjoints[input_pos]
        .take()
        .unwrap_or_else(|| vec![0.0; graph.input_len()]);
    Ok(Backward {
        input: Tensor::from_parts(graph.input_shape().to_vec(), data),
        params,
    })
}

/// Outcome of comparing the standard-rule gradient against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    /// `max_i |analytic_i - numeric_i| / max(max_j |numeric_j|, max_j |analytic_j|)`
    /// over the compared coordinates.
    pub max_relative_deviation: f64,
    /// Input coordinates skipped because a relu or max-pool switches branch
    /// (or sits exactly on its kink) within the difference stencil.
    pub excluded: Vec<usize>,
}

/// Compares [`modified_backprop`] under the standard rule with
/// `(S_c(x + h·e_i) - S_c(x - h·e_i)) / 2h`.
pub fn check_gradient_fd(graph: &Graph, x: &Tensor, target: usize, h: f64) -> Result<GradientCheck> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let (_, trace) = forward(graph, x)?;
    let analytic = modified_backprop(graph, &trace, &GradientRule::Standard, target)?.values;
    let pattern = |t: &ForwardTrace| branch_pattern(graph, t);
    let center = pattern(&trace);

    let mut numeric = vec![0.0; x.len()];
    let mut excluded = Vec::new();
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let (sp, tp) = forward(graph, &plus)?;
        let (sm, tm) = forward(graph, &minus)?;
        let on_kink = center.iter().any(|b| *b == Branch::Kink);
        let switched = pattern(&tp) != center || pattern(&tm) != center;
        if switched || (on_kink && kink_moves(graph, &trace, &tp, &tm)) {
            excluded.push(i);
            continue;
        }
        numeric[i] = (sp.data()[target] - sm.data()[target]) / (2.0 * h);
    }

    let kept = || (0..x.len()).filter(|i| !excluded.contains(i));
    let scale = kept()
        .map(|i| numeric[i].abs().max(analytic.data()[i].abs()))
        .fold(f64::MIN_POSITIVE, f64::max);
    let worst = kept()
        .map(|i| (analytic.data()[i] - numeric[i]).abs())
        .fold(0.0, f64::max);
    Ok(GradientCheck {
        max_relative_deviation: worst / scale,
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Branch {
    Off,
    Kink,
    On,
    Routed(usize),
}

/// Which side of every piecewise boundary the trace sits on.
fn branch_pattern(graph: &Graph, trace: &ForwardTrace) -> Vec<Branch> {
    let mut out = Vec::new();
    for (pos, node) in graph.nodes().iter().enumerate() {
        match node.kind {
            NodeKind::Activation {
                activation: ActivationKind::Relu,
            } => {
                let z = trace.value_at(graph.sources(pos)[0]);
                out.extend(z.data().iter().map(|&v| {
                    if v > 0.0 {
                        Branch::On
                    } else if v < 0.0 {
                        Branch::Off
                    } else {
                        Branch::Kink
                    }
                }));
            }
            NodeKind::MaxPool2d { .. } => {
                if let Some(arg) = trace.argmax_at(pos) {
                    out.extend(arg.iter().map(|&a| Branch::Routed(a)));
                }
            }
            _ => {}
        }
    }
    out
}

/// True if some relu input that sits exactly at zero is moved by the perturbation.
fn kink_moves(graph: &Graph, center: &ForwardTrace, plus: &ForwardTrace, minus: &ForwardTrace) -> bool {
    graph.nodes().iter().enumerate().any(|(pos, node)| {
        if !matches!(
            node.kind,
            NodeKind::Activation {
                activation: ActivationKind::Relu
            }
        ) {
            return false;
        }
        let src = graph.sources(pos)[0];
        let (c, p, m) = (center.value_at(src), plus.value_at(src), minus.value_at(src));
        c.data()
            .iter()
            .zip(p.data().iter().zip(m.data()))
            .any(|(&zc, (&zp, &zm))| zc == 0.0 && (zp != 0.0 || zm != 0.0))
    })
}
