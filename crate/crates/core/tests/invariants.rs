//! Cross-module invariants checked through the public API on random networks.

use gradattr::evaluation::{sensitivity_n, SensitivityConfig};
use gradattr::graph::{build_sequential, load_model, save_model};
use gradattr::{attribute, predict, ActivationKind, Baseline, Graph, Layer, Method, NodeKind, Tensor};
use proptest::prelude::*;

fn activation() -> impl Strategy<Value = ActivationKind> {
    prop_oneof![
        Just(ActivationKind::Relu),
        Just(ActivationKind::Tanh),
        Just(ActivationKind::Sigmoid),
        Just(ActivationKind::Softplus),
    ]
}

/// Two hidden layers of `width` units, a linear 3-class output and biases set
/// from `bias` (cycled), so the zero baseline does not sit at a fixed point.
fn network(act: ActivationKind, inputs: usize, width: usize, seed: u64, bias: &[f64]) -> Graph {
    let layers = [
        Layer::Input { shape: vec![inputs] },
        Layer::dense(width, Some(act)),
        Layer::dense(width, Some(act)),
        Layer::dense(3, None),
    ];
    let g = build_sequential(&layers, seed).unwrap();
    let mut k = 0;
    let nodes = g
        .nodes()
        .iter()
        .map(|n| {
            let mut n = n.clone();
            if let NodeKind::Dense { bias: b, .. } = &mut n.kind {
                for v in b.data_mut() {
                    *v = bias[k % bias.len()];
                    k += 1;
                }
            }
            n
        })
        .collect();
    Graph::new(nodes, g.input_id(), g.output_id()).unwrap()
}

fn score(g: &Graph, x: &Tensor, c: usize) -> f64 {
    predict(g, x).unwrap().data()[c]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn deeplift_sums_to_output_difference(
        act in activation(),
        seed in 0u64..1000,
        width in 2usize..10,
        bias in prop::collection::vec(-0.5f64..0.5, 1..8),
        x in prop::collection::vec(-2.0f64..2.0, 5),
        c in 0usize..3,
    ) {
        let g = network(act, 5, width, seed, &bias);
        let x = Tensor::new(vec![5], x).unwrap();
        let map = attribute(&g, &x, c, &Method::DeepLift { delta_threshold: 1e-7 }, &Baseline::Zero).unwrap();
        let sum: f64 = map.values.data().iter().sum();
        let expected = score(&g, &x, c) - score(&g, &Tensor::zeros(&[5]).unwrap(), c);
        prop_assert!((sum - expected).abs() <= 1e-6 * expected.abs().max(1.0), "{} vs {}", sum, expected);
    }

    #[test]
    fn occlusion1_is_the_single_feature_output_drop(
        act in activation(),
        seed in 0u64..1000,
        x in prop::collection::vec(-2.0f64..2.0, 4),
        replacement in -1.0f64..1.0,
    ) {
        let g = network(act, 4, 6, seed, &[0.1, -0.2]);
        let x = Tensor::new(vec![4], x).unwrap();
        let map = attribute(&g, &x, 1, &Method::Occlusion1 { replacement }, &Baseline::Zero).unwrap();
        for i in 0..4 {
            let mut occluded = x.data().to_vec();
            occluded[i] = replacement;
            let drop = score(&g, &x, 1) - score(&g, &Tensor::new(vec![4], occluded).unwrap(), 1);
            prop_assert_eq!(map.values.data()[i], drop);
        }
    }

    #[test]
    fn saved_models_predict_identically(
        act in activation(),
        seed in 0u64..1000,
        x in prop::collection::vec(-2.0f64..2.0, 5),
    ) {
        let g = network(act, 5, 7, seed, &[0.3, -0.1, 0.05]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&g, &path).unwrap();
        let x = Tensor::new(vec![5], x).unwrap();
        prop_assert_eq!(predict(&load_model(&path).unwrap(), &x).unwrap(), predict(&g, &x).unwrap());
    }
}

#[test]
fn occlusion1_has_perfect_sensitivity_1() {
    let g = network(ActivationKind::Tanh, 6, 8, 11, &[0.2, -0.3]);
    let inputs: Vec<Tensor> = (0..10)
        .map(|i| Tensor::new(vec![6], (0..6).map(|j| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0).collect()).unwrap())
        .collect();
    let targets: Vec<usize> = inputs.iter().map(|x| predict(&g, x).unwrap().argmax()).collect();
    let config = SensitivityConfig {
        n_schedule: Some(vec![1, 3]),
        subsets_per_n: 30,
        seed: 4,
        replacement: 0.0,
        baseline: Baseline::Zero,
    };
    let report = sensitivity_n(&g, "tanh", &[Method::Occlusion1 { replacement: 0.0 }], &inputs, &targets, &config).unwrap();
    let cell = report.cell("occlusion1", 1).unwrap();
    assert_eq!(cell.undefined_count, 0);
    assert!((cell.pcc_mean.unwrap() - 1.0).abs() < 1e-12);
}
