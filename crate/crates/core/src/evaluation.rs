//! Sensitivity-n scoring and single-feature perturbation curves.
//!
//! For every input and every subset size `n`, random feature subsets are drawn
//! once and shared by all methods. Each subset yields a pair
//! (sum of attributions over the subset, output drop when the subset is
//! replaced); the Pearson correlation of those pairs is the per-input score.
//!
//! Features are the elements of a rank-1 input and the pixels of a `[C,H,W]`
//! image. Removing a pixel replaces all of its channels, and a pixel's
//! attribution is the sum over its channels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{attribute, occlusion_delta, target_score, AttributionMap, Baseline, Method};
use crate::error::{Error, Result};
use crate::graph::{predict, Graph};
use crate::tensor::Tensor;

/// Maps feature indices onto flat tensor indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    channels: usize,
    plane: usize,
}

impl FeatureLayout {
    pub fn for_shape(shape: &[usize]) -> Self {
        match *shape {
            [c, h, w] => FeatureLayout {
                channels: c,
                plane: h * w,
            },
            _ => FeatureLayout {
                channels: 1,
                plane: shape.iter().product(),
            },
        }
    }

    pub fn num_features(&self) -> usize {
        self.plane
    }

    pub fn flat_indices(&self, feature: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.channels).map(move |c| c * self.plane + feature)
    }

    /// Per-feature attribution, summing channels for images.
    pub fn feature_scores(&self, values: &Tensor) -> Vec<f64> {
        let d = values.data();
        (0..self.plane)
            .map(|f| self.flat_indices(f).map(|i| d[i]).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityConfig {
    /// Ascending subset sizes; `None` picks [`default_schedule`].
    pub n_schedule: Option<Vec<usize>>,
    pub subsets_per_n: usize,
    pub seed: u64,
    pub replacement: f64,
    pub baseline: Baseline,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig {
            n_schedule: None,
            subsets_per_n: 100,
            seed: 0,
            replacement: 0.0,
            baseline: Baseline::Zero,
        }
    }
}

pub const DEFAULT_SCHEDULE_POINTS: usize = 15;

/// About fifteen log-spaced sizes from 1 to `floor(0.8·N)`, deduplicated.
pub fn default_schedule(num_features: usize) -> Vec<usize> {
    let top = ((num_features as f64 * 0.8).floor() as usize).max(1);
    let points = DEFAULT_SCHEDULE_POINTS;
    let mut out: Vec<usize> = (0..points)
        .map(|i| {
            let t = i as f64 / (points - 1) as f64;
            ((top as f64).powf(t).round() as usize).clamp(1, top)
        })
        .collect();
    out.dedup();
    out
}

/// `count` subsets of `n` distinct indices from `0..num_features`, each drawn by
/// a partial Fisher-Yates shuffle from one seeded generator.
pub fn sample_subsets(num_features: usize, n: usize, count: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n > num_features {
        return Err(Error::InvalidArgument(format!(
            "subset size {n} exceeds feature count {num_features}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..num_features).collect();
    Ok((0..count)
        .map(|_| {
            perm.iter_mut().enumerate().for_each(|(i, p)| *p = i);
            for j in 0..n {
                let k = rng.gen_range(j..num_features);
                perm.swap(j, k);
            }
            perm[..n].to_vec()
        })
        .collect())
}

/// `S_c(x)` minus the score with every feature in `subset` replaced.
pub fn delta_output(
    graph: &Graph,
    x: &Tensor,
    subset: &[usize],
    target: usize,
    replacement: f64,
) -> Result<f64> {
    let layout = FeatureLayout::for_shape(x.shape());
    if let Some(&bad) = subset.iter().find(|&&f| f >= layout.num_features()) {
        return Err(Error::InvalidArgument(format!(
            "feature {bad} out of range for {} features",
            layout.num_features()
        )));
    }
    let reference = target_score(graph, x, target)?;
    occlusion_delta(
        graph,
        x,
        reference,
        subset.iter().flat_map(|&f| layout.flat_indices(f)),
        target,
        replacement,
    )
}

/// Sample Pearson correlation; `None` when either side has zero variance.
pub fn pearson(u: &[f64], v: &[f64]) -> Result<Option<f64>> {
    if u.len() != v.len() {
        return Err(Error::Dimension(format!(
            "pearson needs equal lengths, got {} and {}",
            u.len(),
            v.len()
        )));
    }
    if u.len() < 2 {
        return Err(Error::InvalidArgument("pearson needs at least two pairs".into()));
    }
    let n = u.len() as f64;
    let mu = u.iter().sum::<f64>() / n;
    let mv = v.iter().sum::<f64>() / n;
    let (mut cov, mut vu, mut vv) = (0.0, 0.0, 0.0);
    for (&a, &b) in u.iter().zip(v) {
        let (da, db) = (a - mu, b - mv);
        cov += da * db;
        vu += da * da;
        vv += db * db;
    }
    if vu == 0.0 || vv == 0.0 {
        return Ok(None);
    }
    // sqrt of the product (not product of sqrts) keeps r = 1 exact when u == v.
    Ok(Some((cov / (vu * vv).sqrt()).clamp(-1.0, 1.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCell {
    pub method: String,
    pub n: usize,
    /// Mean over inputs with a defined correlation.
    pub pcc_mean: Option<f64>,
    /// Sample standard deviation of the defined correlations (0 for a single one).
    pub pcc_std: Option<f64>,
    pub samples: usize,
    pub undefined_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub model_id: String,
    pub config: SensitivityConfig,
    pub n_schedule: Vec<usize>,
    /// Sorted by (method id, n).
    pub cells: Vec<SensitivityCell>,
}

impl SensitivityReport {
    pub fn cell(&self, method: &str, n: usize) -> Option<&SensitivityCell> {
        self.cells.iter().find(|c| c.method == method && c.n == n)
    }

    /// Mean PCC per n for one method, in schedule order.
    pub fn curve(&self, method: &str) -> Vec<(usize, Option<f64>)> {
        self.cells
            .iter()
            .filter(|c| c.method == method)
            .map(|c| (c.n, c.pcc_mean))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,n,pcc_mean,pcc_std,samples,undefined_count\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.method,
                c.n,
                format_opt(c.pcc_mean),
                format_opt(c.pcc_std),
                c.samples,
                c.undefined_count
            ));
        }
        out
    }
}

fn format_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |v| format_significant(v, 9))
}

/// Plain decimal notation with `digits` significant digits.
pub fn format_significant(v: f64, digits: usize) -> String {
    if v == 0.0 {
        return format!("{:.*}", digits.saturating_sub(1), 0.0);
    }
    let exponent = v.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - exponent).max(0) as usize;
    let s = format!("{v:.decimals$}");
    // rounding may carry into a new leading digit (9.99.. -> 10.0)
    let rounded: f64 = s.parse().unwrap_or(v);
    if rounded != 0.0 && (rounded.abs().log10().floor() as i64) > exponent && decimals > 0 {
        format!("{v:.*}", decimals - 1)
    } else {
        s
    }
}

/// Seed for the subsets of one (input, n) cell.
fn cell_seed(seed: u64, input: usize, n: usize) -> u64 {
    let mut z = seed
        ^ (input as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (n as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Scores every method on every input at every subset size.
///
/// Inputs are processed in parallel on the current rayon pool; results are
/// gathered and aggregated in input order, so the report does not depend on
/// the number of threads.
pub fn sensitivity_n(
    graph: &Graph,
    model_id: &str,
    methods: &[Method],
    inputs: &[Tensor],
    targets: &[usize],
    config: &SensitivityConfig,
) -> Result<SensitivityReport> {
    if methods.is_empty() {
        return Err(Error::InvalidArgument("no attribution methods given".into()));
    }
    if inputs.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} inputs but {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    if config.subsets_per_n < 2 {
        return Err(Error::InvalidArgument("need at least two subsets per n".into()));
    }
    let layout = FeatureLayout::for_shape(graph.input_shape());
    let features = layout.num_features();
    let schedule = config
        .n_schedule
        .clone()
        .unwrap_or_else(|| default_schedule(features));
    if schedule.is_empty() || schedule.iter().any(|&n| n == 0 || n > features) {
        return Err(Error::InvalidArgument(format!(
            "n schedule {schedule:?} must lie in 1..={features}"
        )));
    }
    if schedule.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(format!(
            "n schedule {schedule:?} must be strictly ascending"
        )));
    }

    // [input][method][n] -> pcc
    let per_input: Vec<Vec<Vec<Option<f64>>>> = inputs
        .par_iter()
        .zip(targets.par_iter())
        .enumerate()
        .map(|(idx, (x, &target))| {
            score_input(graph, methods, x, target, config, &layout, &schedule, idx)
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::with_capacity(methods.len() * schedule.len());
    for (m, method) in methods.iter().enumerate() {
        for (k, &n) in schedule.iter().enumerate() {
            let defined: Vec<f64> = per_input.iter().filter_map(|r| r[m][k]).collect();
            let undefined_count = per_input.len() - defined.len();
            let (mean, std) = mean_std(&defined);
            cells.push(SensitivityCell {
                method: method.id().to_string(),
                n,
                pcc_mean: mean,
                pcc_std: std,
                samples: defined.len(),
                undefined_count,
            });
        }
    }
    cells.sort_by(|a, b| a.method.cmp(&b.method).then(a.n.cmp(&b.n)));
    Ok(SensitivityReport {
        model_id: model_id.to_string(),
        config: config.clone(),
        n_schedule: schedule,
        cells,
    })
}

#[allow(clippy::too_many_arguments)]
fn score_input(
    graph: &Graph,
    methods: &[Method],
    x: &Tensor,
    target: usize,
    config: &SensitivityConfig,
    layout: &FeatureLayout,
    schedule: &[usize],
    input_index: usize,
) -> Result<Vec<Vec<Option<f64>>>> {
    let scores: Vec<Vec<f64>> = methods
        .iter()
        .map(|m| {
            attribute(graph, x, target, m, &config.baseline).map(|r| layout.feature_scores(&r.values))
        })
        .collect::<Result<_>>()?;
    let reference = target_score(graph, x, target)?;
    let mut out = vec![Vec::with_capacity(schedule.len()); methods.len()];
    for &n in schedule {
        let subsets = sample_subsets(
            layout.num_features(),
            n,
            config.subsets_per_n,
            cell_seed(config.seed, input_index, n),
        )?;
        let deltas: Vec<f64> = subsets
            .iter()
            .map(|s| {
                occlusion_delta(
                    graph,
                    x,
                    reference,
                    s.iter().flat_map(|&f| layout.flat_indices(f)),
                    target,
                    config.replacement,
                )
            })
            .collect::<Result<_>>()?;
        for (m, feature_scores) in scores.iter().enumerate() {
            let sums: Vec<f64> = subsets
                .iter()
                .map(|s| s.iter().map(|&f| feature_scores[f]).sum())
                .collect();
            out[m].push(pearson(&sums, &deltas)?);
        }
    }
    Ok(out)
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (Some(mean), Some(0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RemovalOrder {
    /// Highest attribution first.
    Desc,
    /// Lowest attribution first.
    Asc,
}

/// Removes features one at a time in attribution order and records the target
/// score. Entry `k` is the score after `k` removals; entry 0 is `S_c(x)`.
/// Ties keep ascending feature index.
pub fn perturbation_curve(
    graph: &Graph,
    attribution: &AttributionMap,
    x: &Tensor,
    target: usize,
    order: RemovalOrder,
    steps: usize,
) -> Result<Vec<(usize, f64)>> {
    attribution.values.expect_same_shape(x)?;
    let layout = FeatureLayout::for_shape(x.shape());
    if steps > layout.num_features() {
        return Err(Error::InvalidArgument(format!(
            "{steps} removal steps exceed {} features",
            layout.num_features()
        )));
    }
    let scores = layout.feature_scores(&attribution.values);
    let mut ranked: Vec<usize> = (0..scores.len()).collect();
    match order {
        RemovalOrder::Desc => ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a])),
        RemovalOrder::Asc => ranked.sort_by(|&a, &b| scores[a].total_cmp(&scores[b])),
    }
    let mut current = x.clone();
    let mut curve = Vec::with_capacity(steps + 1);
    curve.push((0, target_score(graph, &current, target)?));
    for (k, &f) in ranked.iter().take(steps).enumerate() {
        for i in layout.flat_indices(f) {
            current.data_mut()[i] = 0.0;
        }
        curve.push((k + 1, predict(graph, &current)?.data()[target]));
    }
    Ok(curve)
}
