//! Attribution methods. Every method returns a signed, input-shaped map for one
//! target class.
//!
//! The gradient-based methods share the backprop engine in [`crate::modgrad`]
//! and differ only in the rule applied at activations and the input factor:
//!
//! | method                 | rule           | factor    |
//! |------------------------|----------------|-----------|
//! | saliency               | standard (abs) | 1         |
//! | gradient * input       | standard       | x         |
//! | integrated gradients   | standard, path average | x - x̄ |
//! | ε-LRP                  | f(z)/z         | x         |
//! | DeepLIFT (Rescale)     | average slope  | x - x̄     |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{forward, predict, Graph};
use crate::modgrad::{modified_backprop, GradientRule, DEFAULT_DELTA_THRESHOLD, DEFAULT_EPSILON};
use crate::tensor::Tensor;

pub const DEFAULT_IG_STEPS: usize = 100;

/// Method identifier plus its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Saliency,
    GradientInput,
    IntegratedGradients { steps: usize },
    LrpEpsilon { epsilon: f64 },
    DeepLift { delta_threshold: f64 },
    Occlusion1 { replacement: f64 },
    OcclusionPatch { patch: usize, stride: usize, replacement: f64 },
}

impl Method {
    /// Short name used on the command line and in reports.
    pub fn id(&self) -> &'static str {
        match self {
            Method::Saliency => "saliency",
            Method::GradientInput => "gradinput",
            Method::IntegratedGradients { .. } => "intgrad",
            Method::LrpEpsilon { .. } => "lrp",
            Method::DeepLift { .. } => "deeplift",
            Method::Occlusion1 { .. } => "occlusion1",
            Method::OcclusionPatch { .. } => "occlusion_patch",
        }
    }

    /// Parses a method id with default parameters.
    pub fn from_id(id: &str) -> Result<Method> {
        Ok(match id {
            "saliency" => Method::Saliency,
            "gradinput" => Method::GradientInput,
            "intgrad" => Method::IntegratedGradients {
                steps: DEFAULT_IG_STEPS,
            },
            "lrp" => Method::LrpEpsilon {
                epsilon: DEFAULT_EPSILON,
            },
            "deeplift" => Method::DeepLift {
                delta_threshold: DEFAULT_DELTA_THRESHOLD,
            },
            "occlusion1" => Method::Occlusion1 { replacement: 0.0 },
            "occlusion_patch" => Method::OcclusionPatch {
                patch: 2,
                stride: 1,
                replacement: 0.0,
            },
            other => return Err(Error::InvalidArgument(format!("unknown method '{other}'"))),
        })
    }

    /// Whether the method reads a baseline input.
    pub fn uses_baseline(&self) -> bool {
        matches!(
            self,
            Method::IntegratedGradients { .. } | Method::DeepLift { .. }
        )
    }
}

/// Reference input standing for "feature absent".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    #[default]
    Zero,
    Custom(Tensor),
}

impl Baseline {
    pub fn resolve(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Baseline::Zero => Tensor::zeros(x.shape()),
            Baseline::Custom(b) => {
                b.expect_same_shape(x)?;
                Ok(b.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    pub values: Tensor,
    pub target: usize,
    pub method: Method,
    /// Baseline used, for methods that read one.
    pub baseline: Option<Baseline>,
}

impl AttributionMap {
    fn new(values: Tensor, target: usize, method: Method, baseline: Option<&Baseline>) -> Result<Self> {
        if !values.is_finite() {
            return Err(Error::InvalidTensor(format!(
                "{} produced non-finite attributions",
                method.id()
            )));
        }
        Ok(AttributionMap {
            values,
            target,
            method,
            baseline: baseline.cloned(),
        })
    }
}

/// Runs any method. `baseline` is ignored by methods that do not use one.
pub fn attribute(
    graph: &Graph,
    x: &Tensor,
    target: usize,
    method: &Method,
    baseline: &Baseline,
) -> Result<AttributionMap> {
    match *method {
        Method::Saliency => saliency(graph, x, target),
        Method::GradientInput => gradient_times_input(graph, x, target),
        Method::IntegratedGradients { steps } => integrated_gradients(graph, x, baseline, target, steps),
        Method::LrpEpsilon { epsilon } => lrp_epsilon(graph, x, target, epsilon),
        Method::DeepLift { delta_threshold } => deeplift_rescale(graph, x, baseline, target, delta_threshold),
        Method::Occlusion1 { replacement } => occlusion_1(graph, x, target, replacement),
        Method::OcclusionPatch {
            patch,
            stride,
            replacement,
        } => occlusion_patch(graph, x, target, patch, stride, replacement),
    }
}

fn gradient(graph: &Graph, x: &Tensor, target: usize, rule: &GradientRule<'_>) -> Result<Tensor> {
    let (_, trace) = forward(graph, x)?;
    Ok(modified_backprop(graph, &trace, rule, target)?.values)
}

pub fn gradient_times_input(graph: &Graph, x: &Tensor, target: usize) -> Result<AttributionMap> {
    let g = gradient(graph, x, target, &GradientRule::Standard)?;
    AttributionMap::new(x.mul(&g)?, target, Method::GradientInput, None)
}

pub fn saliency(graph: &Graph, x: &Tensor, target: usize) -> Result<AttributionMap> {
    let g = gradient(graph, x, target, &GradientRule::Standard)?;
    AttributionMap::new(g.map(f64::abs), target, Method::Saliency, None)
}

/// Midpoint-rule path integral of the gradient from the baseline to `x`.
pub fn integrated_gradients(
    graph: &Graph,
    x: &Tensor,
    baseline: &Baseline,
    target: usize,
    steps: usize,
) -> Result<AttributionMap> {
    if steps == 0 {
        return Err(Error::InvalidArgument("integrated gradients needs at least one step".into()));
    }
    let base = baseline.resolve(x)?;
    let delta = x.sub(&base)?;
    // Running mean: stays exact when the gradient is constant along the path.
    let mut mean = vec![0.0; x.len()];
    for k in 1..=steps {
        let alpha = (k as f64 - 0.5) / steps as f64;
        let point = base.zip_map(&delta, |b, d| b + alpha * d)?;
        let g = gradient(graph, &point, target, &GradientRule::Standard)?;
        let weight = 1.0 / k as f64;
        mean.iter_mut().zip(g.data()).for_each(|(m, v)| *m += (v - *m) * weight);
    }
    let values = Tensor::new(
        x.shape().to_vec(),
        mean.iter().zip(delta.data()).map(|(m, d)| d * m).collect(),
    )?;
    AttributionMap::new(values, target, Method::IntegratedGradients { steps }, Some(baseline))
}

pub fn lrp_epsilon(graph: &Graph, x: &Tensor, target: usize, epsilon: f64) -> Result<AttributionMap> {
    let g = gradient(graph, x, target, &GradientRule::LrpRatio { epsilon })?;
    AttributionMap::new(x.mul(&g)?, target, Method::LrpEpsilon { epsilon }, None)
}

pub fn deeplift_rescale(
    graph: &Graph,
    x: &Tensor,
    baseline: &Baseline,
    target: usize,
    delta_threshold: f64,
) -> Result<AttributionMap> {
    let base = baseline.resolve(x)?;
    let (_, base_trace) = forward(graph, &base)?;
    let rule = GradientRule::AverageSlope {
        baseline: &base_trace,
        delta_threshold,
    };
    let g = gradient(graph, x, target, &rule)?;
    AttributionMap::new(
        x.sub(&base)?.mul(&g)?,
        target,
        Method::DeepLift { delta_threshold },
        Some(baseline),
    )
}

/// `S_c(x)` minus the score with the listed flat indices set to `replacement`.
///
/// Shared by occlusion and the evaluation protocol so that both produce
/// bit-identical differences for the same subset.
pub(crate) fn occlusion_delta(
    graph: &Graph,
    x: &Tensor,
    reference_score: f64,
    indices: impl IntoIterator<Item = usize>,
    target: usize,
    replacement: f64,
) -> Result<f64> {
    let mut occluded = x.clone();
    let data = occluded.data_mut();
    for i in indices {
        data[i] = replacement;
    }
    Ok(reference_score - predict(graph, &occluded)?.data()[target])
}

pub(crate) fn target_score(graph: &Graph, x: &Tensor, target: usize) -> Result<f64> {
    let scores = predict(graph, x)?;
    scores.data().get(target).copied().ok_or_else(|| {
        Error::InvalidArgument(format!(
            "target class {target} out of range for {} outputs",
            scores.len()
        ))
    })
}

/// Replaces one feature at a time: `R_i = S_c(x) - S_c(x with x_i = replacement)`.
pub fn occlusion_1(graph: &Graph, x: &Tensor, target: usize, replacement: f64) -> Result<AttributionMap> {
    let reference = target_score(graph, x, target)?;
    let values = (0..x.len())
        .map(|i| occlusion_delta(graph, x, reference, [i], target, replacement))
        .collect::<Result<Vec<_>>>()?;
    AttributionMap::new(
        Tensor::new(x.shape().to_vec(), values)?,
        target,
        Method::Occlusion1 { replacement },
        None,
    )
}

/// Slides a `patch`x`patch` window over a `[C,H,W]` input, occluding every
/// channel at once. A pixel's score is the mean output drop over the windows
/// covering it (zero if none do); the score is split evenly across channels so
/// the channel sum equals that mean.
pub fn occlusion_patch(
    graph: &Graph,
    x: &Tensor,
    target: usize,
    patch: usize,
    stride: usize,
    replacement: f64,
) -> Result<AttributionMap> {
    let [channels, height, width] = *x.shape() else {
        return Err(Error::Dimension(format!(
            "patch occlusion needs a [C,H,W] input, got {:?}",
            x.shape()
        )));
    };
    if patch == 0 || stride == 0 {
        return Err(Error::InvalidArgument("patch and stride must be positive".into()));
    }
    if patch > height || patch > width {
        return Err(Error::Dimension(format!(
            "patch {patch} larger than image {height}x{width}"
        )));
    }
    let reference = target_score(graph, x, target)?;
    let mut sum = vec![0.0; height * width];
    let mut count = vec![0usize; height * width];
    for top in (0..=height - patch).step_by(stride) {
        for left in (0..=width - patch).step_by(stride) {
            let pixels: Vec<usize> = (top..top + patch)
                .flat_map(|y| (left..left + patch).map(move |xx| y * width + xx))
                .collect();
            let indices = (0..channels)
                .flat_map(|c| pixels.iter().map(move |p| c * height * width + p));
            let delta = occlusion_delta(graph, x, reference, indices, target, replacement)?;
            for &p in &pixels {
                sum[p] += delta;
                count[p] += 1;
            }
        }
    }
    let per_pixel: Vec<f64> = sum
        .iter()
        .zip(&count)
        .map(|(&s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect();
    let values = (0..channels)
        .flat_map(|_| per_pixel.iter().map(|v| v / channels as f64))
        .collect();
    AttributionMap::new(
        Tensor::new(x.shape().to_vec(), values)?,
        target,
        Method::OcclusionPatch {
            patch,
            stride,
            replacement,
        },
        None,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_sequential, ActivationKind, Layer, Node, NodeKind};
    use crate::tensor::Padding;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense(w: &[&[f64]], b: &[f64]) -> NodeKind {
        NodeKind::Dense {
            weights: Tensor::matrix(w).unwrap(),
            bias: Tensor::vector(b.to_vec()).unwrap(),
        }
    }

    fn linear_model() -> Graph {
        Graph::new(
            vec![
                Node::new(0, NodeKind::Input { shape: vec![2] }, vec![]),
                Node::new(1, dense(&[&[1.05, 10.0]], &[0.0]), vec![0]),
            ],
            0,
            1,
        )
        .unwrap()
    }

    fn interaction() -> Graph {
        Graph::new(
            vec![
                Node::new(0, NodeKind::Input { shape: vec![2] }, vec![]),
                Node::new(1, dense(&[&[1.0, 0.0]], &[0.0]), vec![0]),
                Node::new(2, NodeKind::AffineShift { shift: 1.0 }, vec![1]),
                Node::new(3, NodeKind::Activation { activation: ActivationKind::Relu }, vec![2]),
                Node::new(4, dense(&[&[0.0, 1.0]], &[0.0]), vec![0]),
                Node::new(5, NodeKind::Activation { activation: ActivationKind::Relu }, vec![4]),
                Node::new(6, NodeKind::Multiply, vec![3, 5]),
            ],
            0,
            6,
        )
        .unwrap()
    }

    fn relu_mlp(seed: u64) -> Graph {
        build_sequential(
            &[
                Layer::Input { shape: vec![5] },
                Layer::dense(6, Some(ActivationKind::Relu)),
                Layer::dense(3, None),
            ],
            seed,
        )
        .unwrap()
    }

    fn random_input(n: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::vector((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn x22() -> Tensor {
        Tensor::vector(vec![2.0, 2.0]).unwrap()
    }

    #[test]
    fn gradient_times_input_linear() {
        let x = Tensor::vector(vec![100_000.0, 1_000.0]).unwrap();
        let r = gradient_times_input(&linear_model(), &x, 0).unwrap();
        assert_eq!(r.values.data(), &[105_000.0, 10_000.0]);
        assert_eq!(r.values.sum(), 115_000.0);

        let z = gradient_times_input(&relu_mlp(0), &Tensor::zeros(&[5]).unwrap(), 1).unwrap();
        assert!(z.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_times_input_matches_lrp_on_relu() {
        for seed in 0..5 {
            let g = relu_mlp(seed);
            let x = random_input(5, seed + 100);
            let gi = gradient_times_input(&g, &x, 0).unwrap();
            let lrp = lrp_epsilon(&g, &x, 0, 1e-9).unwrap();
            let scale = gi.values.data().iter().fold(1e-12f64, |m, v| m.max(v.abs()));
            for (a, b) in gi.values.data().iter().zip(lrp.values.data()) {
                assert!((a - b).abs() <= 1e-6 * scale);
            }
        }
    }

    #[test]
    fn saliency_examples() {
        let g = linear_model();
        for x in [[3.0, -7.0], [100_000.0, 1_000.0]] {
            let s = saliency(&g, &Tensor::vector(x.to_vec()).unwrap(), 0).unwrap();
            assert_eq!(s.values.data(), &[1.05, 10.0]);
        }
        let g = build_sequential(
            &[Layer::Input { shape: vec![5] }, Layer::dense(4, Some(ActivationKind::Tanh)), Layer::dense(2, None)],
            3,
        )
        .unwrap();
        let x = random_input(5, 9);
        let s = saliency(&g, &x, 1).unwrap();
        let gi = gradient_times_input(&g, &x, 1).unwrap();
        for i in 0..5 {
            assert!(s.values.data()[i] >= 0.0);
            let expect = (gi.values.data()[i] / x.data()[i]).abs();
            assert!((s.values.data()[i] - expect).abs() <= 1e-12 * expect.max(1.0));
        }
    }

    #[test]
    fn integrated_gradients_interaction() {
        let g = interaction();
        let r = integrated_gradients(&g, &x22(), &Baseline::Zero, 0, 300).unwrap();
        // closed form: 2∫_{1/2}^{1} 2α dα = 1.5 and 2∫_{1/2}^{1} (2α-1) dα = 0.5
        assert!((r.values.data()[0] - 1.5).abs() < 1e-2);
        assert!((r.values.data()[1] - 0.5).abs() < 1e-2);
        assert!((r.values.sum() - 2.0).abs() < 1e-3);

        // independent fine quadrature of the analytic path gradient
        let n = 200_000;
        let (mut q1, mut q2) = (0.0, 0.0);
        for k in 0..n {
            let a = (k as f64 + 0.5) / n as f64;
            let (x1, x2) = (2.0 * a, 2.0 * a);
            let on = x1 - 1.0 > 0.0;
            q1 += if on { x2.max(0.0) } else { 0.0 };
            q2 += if x2 > 0.0 { (x1 - 1.0).max(0.0) } else { 0.0 };
        }
        let (q1, q2) = (2.0 * q1 / n as f64, 2.0 * q2 / n as f64);
        assert!((q1 - 1.5).abs() < 1e-6 && (q2 - 0.5).abs() < 1e-6);
        assert!((r.values.data()[0] - q1).abs() < 1e-2);
        assert!((r.values.data()[1] - q2).abs() < 1e-2);
    }

    #[test]
    fn integrated_gradients_linear_and_degenerate() {
        let x = Tensor::vector(vec![100_000.0, 1_000.0]).unwrap();
        for steps in [1, 7, 100] {
            let r = integrated_gradients(&linear_model(), &x, &Baseline::Zero, 0, steps).unwrap();
            assert_eq!(r.values.data(), &[105_000.0, 10_000.0]);
        }
        let x = random_input(5, 4);
        let r = integrated_gradients(&relu_mlp(1), &x, &Baseline::Custom(x.clone()), 2, 10).unwrap();
        assert!(r.values.data().iter().all(|&v| v == 0.0));
        assert!(integrated_gradients(&relu_mlp(1), &x, &Baseline::Zero, 0, 0).is_err());
        let wrong = Baseline::Custom(Tensor::zeros(&[3]).unwrap());
        assert!(integrated_gradients(&relu_mlp(1), &x, &wrong, 0, 10).is_err());
    }

    #[test]
    fn deeplift_interaction_violates_completeness() {
        let g = interaction();
        let r = deeplift_rescale(&g, &x22(), &Baseline::Zero, 0, DEFAULT_DELTA_THRESHOLD).unwrap();
        assert_eq!(r.values.data(), &[2.0, 2.0]);
        let gap = r.values.sum() - (2.0 - 0.0);
        assert_eq!(gap, 2.0);
        assert_eq!(r.baseline, Some(Baseline::Zero));
    }

    #[test]
    fn deeplift_completeness_on_dense_nets() {
        for (seed, act) in [ActivationKind::Tanh, ActivationKind::Sigmoid, ActivationKind::Softplus, ActivationKind::Relu]
            .into_iter()
            .enumerate()
        {
            let g = build_sequential(
                &[
                    Layer::Input { shape: vec![5] },
                    Layer::dense(6, Some(act)),
                    Layer::dense(4, Some(act)),
                    Layer::dense(3, None),
                ],
                seed as u64,
            )
            .unwrap();
            let x = random_input(5, 40 + seed as u64);
            let base = Baseline::Custom(random_input(5, 80 + seed as u64));
            let r = deeplift_rescale(&g, &x, &base, 1, DEFAULT_DELTA_THRESHOLD).unwrap();
            let delta = target_score(&g, &x, 1).unwrap()
                - target_score(&g, &base.resolve(&x).unwrap(), 1).unwrap();
            assert!((r.values.sum() - delta).abs() <= 1e-6 * delta.abs().max(1e-12), "{act:?}");
        }
        let x = random_input(5, 1);
        let r = deeplift_rescale(&relu_mlp(2), &x, &Baseline::Custom(x.clone()), 0, 1e-6).unwrap();
        assert!(r.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lrp_sigmoid_concentrates_mass() {
        // Hidden unit 0 sits near z = 0 where f(z)/z blows up for sigmoid.
        let g = Graph::new(
            vec![
                Node::new(0, NodeKind::Input { shape: vec![4] }, vec![]),
                Node::new(
                    1,
                    dense(
                        &[&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 1.0, 1.0]],
                        &[-0.999, 0.0],
                    ),
                    vec![0],
                ),
                Node::new(2, NodeKind::Activation { activation: ActivationKind::Sigmoid }, vec![1]),
                Node::new(3, dense(&[&[1.0, 1.0]], &[0.0]), vec![2]),
            ],
            0,
            3,
        )
        .unwrap();
        let x = Tensor::vector(vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let share = |m: &AttributionMap| {
            let abs: Vec<f64> = m.values.data().iter().map(|v| v.abs()).collect();
            abs.iter().cloned().fold(0.0, f64::max) / abs.iter().sum::<f64>()
        };
        let lrp = lrp_epsilon(&g, &x, 0, DEFAULT_EPSILON).unwrap();
        let gi = gradient_times_input(&g, &x, 0).unwrap();
        assert!(share(&lrp) > share(&gi), "{} vs {}", share(&lrp), share(&gi));
        assert!(share(&lrp) > 0.99);
    }

    #[test]
    fn occlusion_1_examples() {
        let x = Tensor::vector(vec![100_000.0, 1_000.0]).unwrap();
        let r = occlusion_1(&linear_model(), &x, 0, 0.0).unwrap();
        assert_eq!(r.values.data(), &[105_000.0, 10_000.0]);

        let x = Tensor::vector(vec![0.0, 0.7, -0.2, 0.0, 1.0]).unwrap();
        let r = occlusion_1(&relu_mlp(3), &x, 1, 0.0).unwrap();
        assert_eq!(r.values.data()[0], 0.0);
        assert_eq!(r.values.data()[3], 0.0);

        let r = occlusion_1(&interaction(), &x22(), 0, 0.0).unwrap();
        assert_eq!(r.values.data(), &[2.0, 2.0]);
    }

    fn image_net(seed: u64) -> Graph {
        build_sequential(
            &[
                Layer::Input { shape: vec![1, 4, 4] },
                Layer::Conv2d { kernels: 2, size: 3, stride: 1, padding: Padding::Same, activation: Some(ActivationKind::Tanh) },
                Layer::Flatten,
                Layer::dense(3, None),
            ],
            seed,
        )
        .unwrap()
    }

    fn random_image(seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![1, 4, 4], (0..16).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn occlusion_patch_of_one_is_occlusion_1() {
        let g = image_net(1);
        let x = random_image(2);
        let p = occlusion_patch(&g, &x, 2, 1, 1, 0.0).unwrap();
        let o = occlusion_1(&g, &x, 2, 0.0).unwrap();
        assert_eq!(p.values, o.values);
    }

    #[test]
    fn occlusion_patch_matches_window_enumeration() {
        let g = image_net(3);
        let x = random_image(4);
        let p = occlusion_patch(&g, &x, 0, 2, 2, 0.0).unwrap();
        let s = predict(&g, &x).unwrap().data()[0];
        for (top, left) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            let mut occ = x.clone();
            for y in top..top + 2 {
                for xx in left..left + 2 {
                    occ.data_mut()[y * 4 + xx] = 0.0;
                }
            }
            let delta = s - predict(&g, &occ).unwrap().data()[0];
            for y in top..top + 2 {
                for xx in left..left + 2 {
                    assert!((p.values.data()[y * 4 + xx] - delta).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn occlusion_patch_constant_model_and_errors() {
        let mut g = image_net(5);
        let mut pos = None;
        for (i, n) in g.nodes().iter().enumerate() {
            if matches!(n.kind, NodeKind::Dense { .. }) {
                pos = Some(i);
            }
        }
        if let NodeKind::Dense { weights, .. } = &mut g.nodes_mut()[pos.unwrap()].kind {
            weights.data_mut().fill(0.0);
        }
        let p = occlusion_patch(&g, &random_image(6), 1, 2, 1, 0.5).unwrap();
        assert!(p.values.data().iter().all(|&v| v == 0.0));
        assert!(occlusion_patch(&g, &random_image(6), 1, 5, 1, 0.0).is_err());
        assert!(occlusion_patch(&relu_mlp(0), &random_input(5, 0), 0, 1, 1, 0.0).is_err());
    }

    #[test]
    fn linear_model_all_methods_agree() {
        let g = build_sequential(
            &[Layer::Input { shape: vec![6] }, Layer::dense(4, Some(ActivationKind::Tanh)), Layer::dense(2, None)],
            12,
        )
        .unwrap()
        .map_activations(|_| ActivationKind::Identity);
        let x = random_input(6, 13);
        let methods = [
            Method::GradientInput,
            Method::IntegratedGradients { steps: 10 },
            Method::LrpEpsilon { epsilon: DEFAULT_EPSILON },
            Method::DeepLift { delta_threshold: DEFAULT_DELTA_THRESHOLD },
            Method::Occlusion1 { replacement: 0.0 },
        ];
        let reference = gradient_times_input(&g, &x, 1).unwrap();
        for m in methods {
            let r = attribute(&g, &x, 1, &m, &Baseline::Zero).unwrap();
            assert_eq!(r.method, m);
            for (a, b) in r.values.data().iter().zip(reference.values.data()) {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-9), "{m:?}");
            }
        }
    }

    #[test]
    fn method_ids_round_trip() {
        for id in ["saliency", "gradinput", "intgrad", "lrp", "deeplift", "occlusion1", "occlusion_patch"] {
            assert_eq!(Method::from_id(id).unwrap().id(), id);
        }
        assert!(Method::from_id("foo").is_err());
    }
}
