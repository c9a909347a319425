use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use gradattr::attribution::DEFAULT_IG_STEPS;
use gradattr::data::{builtin, load_idx, Dataset};
use gradattr::evaluation::{format_significant, perturbation_curve, sensitivity_n, RemovalOrder, SensitivityConfig};
use gradattr::graph::{load_model, save_model};
use gradattr::modgrad::{DEFAULT_DELTA_THRESHOLD, DEFAULT_EPSILON};
use gradattr::train::TrainConfig;
use gradattr::{attribute, predict, ActivationKind, AttributionMap, Baseline, Error, Graph, Method, Result, Tensor};
use rayon::prelude::*;
use serde_json::json;

use crate::fixtures::{default_train_config, train_fixture, Arch};
use crate::manifest::RunManifest;
use crate::render::{heatmap, DEFAULT_PERCENTILE};

pub const THREADS_VAR: &str = "ATTRIB_THREADS";

const METHOD_IDS: [&str; 7] = [
    "saliency",
    "gradinput",
    "intgrad",
    "lrp",
    "deeplift",
    "occlusion1",
    "occlusion_patch",
];

#[derive(Debug, Parser)]
#[command(name = "gradattr", version, about = "Attribution maps and Sensitivity-n evaluation for small networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an MLP or CNN fixture.
    Train(TrainArgs),
    /// Compute one attribution map.
    Attribute(AttributeArgs),
    /// Sensitivity-n correlations for several methods, as CSV.
    Sensitivity(SensitivityArgs),
    /// Target score while removing features in attribution order, as CSV.
    Perturb(PerturbArgs),
    /// Render an attribution map as a PPM heatmap.
    Render(RenderArgs),
    /// Export a built-in dataset, or one of its inputs, as JSON.
    Dataset(DatasetArgs),
    /// Replay the command recorded in a run manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Built-in name (blobs, digits8x8), a dataset JSON file, or idx:<images>:<labels>.
    #[arg(long)]
    pub data: String,
    /// Sample count for built-in datasets.
    #[arg(long, default_value_t = 500)]
    pub data_size: usize,
    /// Generator seed for built-in datasets.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
}

#[derive(Debug, Args)]
pub struct MethodParams {
    /// ε-LRP stabilizer.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// DeepLIFT falls back to f'(z) below this |z - z̄|.
    #[arg(long, default_value_t = DEFAULT_DELTA_THRESHOLD)]
    pub delta_threshold: f64,
    /// Value written into occluded features.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub replacement: f64,
    /// Occlusion patch side.
    #[arg(long, default_value_t = 2)]
    pub patch: usize,
    /// Occlusion patch stride.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
}

impl MethodParams {
    fn method(&self, id: &str, ig_steps: usize) -> Result<Method> {
        Ok(match Method::from_id(id)? {
            Method::IntegratedGradients { .. } => Method::IntegratedGradients { steps: ig_steps },
            Method::LrpEpsilon { .. } => Method::LrpEpsilon {
                epsilon: self.epsilon,
            },
            Method::DeepLift { .. } => Method::DeepLift {
                delta_threshold: self.delta_threshold,
            },
            Method::Occlusion1 { .. } => Method::Occlusion1 {
                replacement: self.replacement,
            },
            Method::OcclusionPatch { .. } => Method::OcclusionPatch {
                patch: self.patch,
                stride: self.stride,
                replacement: self.replacement,
            },
            other => other,
        })
    }
}

fn method_id(s: &str) -> std::result::Result<String, String> {
    if METHOD_IDS.contains(&s) {
        Ok(s.to_string())
    } else {
        Err(format!("unknown method '{s}' (expected one of {})", METHOD_IDS.join(", ")))
    }
}

fn activation(s: &str) -> std::result::Result<ActivationKind, String> {
    match s.parse::<ActivationKind>() {
        Ok(ActivationKind::Identity) | Err(_) => Err(format!(
            "unknown activation '{s}' (expected relu, tanh, sigmoid or softplus)"
        )),
        Ok(kind) => Ok(kind),
    }
}

fn removal_order(s: &str) -> std::result::Result<RemovalOrder, String> {
    match s {
        "desc" => Ok(RemovalOrder::Desc),
        "asc" => Ok(RemovalOrder::Asc),
        other => Err(format!("unknown order '{other}' (expected desc or asc)")),
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub arch: Arch,
    #[arg(long, value_parser = activation)]
    pub act: ActivationKind,
    #[command(flatten)]
    pub data: DataArgs,
    /// Seeds weight initialization and batch order.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AttributeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Input tensor JSON ({"shape": [...], "data": [...]}).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_parser = method_id)]
    pub method: String,
    /// Integrated Gradients steps.
    #[arg(long, default_value_t = DEFAULT_IG_STEPS)]
    pub steps: usize,
    #[command(flatten)]
    pub params: MethodParams,
    /// Baseline tensor JSON; defaults to all zeros.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Target class; defaults to the predicted class.
    #[arg(long)]
    pub target: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also render the map to this PPM file.
    #[arg(long)]
    pub heatmap: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub heatmap_scale: usize,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_delimiter = ',', required = true, value_parser = method_id)]
    pub methods: Vec<String>,
    /// Random subsets per input and subset size.
    #[arg(long, default_value_t = 100)]
    pub subsets: usize,
    /// Use the first N inputs; defaults to all.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Subset sizes; defaults to a log-spaced schedule.
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// Integrated Gradients steps.
    #[arg(long, default_value_t = DEFAULT_IG_STEPS)]
    pub steps: usize,
    #[command(flatten)]
    pub params: MethodParams,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_delimiter = ',', default_value = "occlusion1,intgrad", value_parser = method_id)]
    pub methods: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "desc,asc", value_parser = removal_order)]
    pub orders: Vec<RemovalOrder>,
    /// Number of features removed.
    #[arg(long)]
    pub steps: usize,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Integrated Gradients steps.
    #[arg(long, default_value_t = DEFAULT_IG_STEPS)]
    pub ig_steps: usize,
    #[command(flatten)]
    pub params: MethodParams,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Attribution map JSON (as written by `attribute`) or a bare tensor.
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Integer upscaling factor.
    #[arg(long, default_value_t = 1)]
    pub scale: usize,
    #[arg(long, default_value_t = DEFAULT_PERCENTILE)]
    pub percentile: f64,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Export only this input as a tensor file.
    #[arg(long)]
    pub index: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write to this path instead of the recorded output.
    #[arg(long)]
    pub out: Option<String>,
}

/// Resolves a `--data` source.
pub fn load_data(args: &DataArgs) -> Result<Dataset> {
    if let Some(rest) = args.data.strip_prefix("idx:") {
        let (images, labels) = rest
            .split_once(':')
            .ok_or_else(|| Error::InvalidArgument("expected idx:<images>:<labels>".into()))?;
        return load_idx(images, labels);
    }
    match args.data.as_str() {
        "blobs" | "digits8x8" => builtin(&args.data, args.data_size, args.data_seed),
        path => Dataset::load(path),
    }
}

fn data_config(args: &DataArgs) -> serde_json::Value {
    json!({ "data": args.data, "data_size": args.data_size, "data_seed": args.data_seed })
}

/// Worker count from `ATTRIB_THREADS`; 0 or unset lets rayon decide.
pub fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("{THREADS_VAR} must be a non-negative integer, got '{v}'"))),
        Err(_) => Ok(0),
    }
}

fn in_pool<T: Send>(f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    pool.install(f)
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

fn predicted_targets(graph: &Graph, inputs: &[Tensor]) -> Result<Vec<usize>> {
    inputs
        .par_iter()
        .map(|x| predict(graph, x).map(|s| s.argmax()))
        .collect()
}

fn take_samples(data: Dataset, samples: Option<usize>) -> Result<Dataset> {
    let data = match samples {
        Some(n) => data.take(n),
        None => data,
    };
    if data.is_empty() {
        return Err(Error::InvalidArgument("no input samples".into()));
    }
    Ok(data)
}

pub fn run_command(command: Command, args: &[String]) -> Result<()> {
    match command {
        Command::Train(a) => train(a, args),
        Command::Attribute(a) => attribute_cmd(a, args),
        Command::Sensitivity(a) => sensitivity(a, args),
        Command::Perturb(a) => perturb(a, args),
        Command::Render(a) => render(a, args),
        Command::Dataset(a) => dataset(a, args),
        Command::Rerun(a) => rerun(a),
    }
}

fn train(a: TrainArgs, args: &[String]) -> Result<()> {
    let data = load_data(&a.data)?;
    let defaults = default_train_config(a.arch, a.act, a.seed);
    let config = TrainConfig {
        epochs: a.epochs.unwrap_or(defaults.epochs),
        learning_rate: a.lr.unwrap_or(defaults.learning_rate),
        batch_size: a.batch_size.unwrap_or(defaults.batch_size),
        seed: a.seed,
    };
    let (graph, acc) = in_pool(|| train_fixture(a.arch, a.act, &data, &config))?;
    save_model(&graph, &a.out)?;
    println!("training accuracy: {acc:.4}");

    let mut m = RunManifest::new("train", args);
    m.input = Some(a.data.data.clone());
    m.config = json!({
        "arch": a.arch.name(),
        "activation": a.act.name(),
        "train": config,
        "dataset": data_config(&a.data),
        "training_accuracy": acc,
    });
    m.seed = Some(a.seed);
    m.outputs = vec![display(&a.out)];
    m.write()?;
    Ok(())
}

fn attribute_cmd(a: AttributeArgs, args: &[String]) -> Result<()> {
    let graph = load_model(&a.model)?;
    let x: Tensor = serde_json::from_str(&std::fs::read_to_string(&a.input)?)
        .map_err(|e| Error::Format(format!("{}: {e}", a.input.display())))?;
    let baseline = match &a.baseline {
        Some(path) => Baseline::Custom(
            serde_json::from_str(&std::fs::read_to_string(path)?)
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?,
        ),
        None => Baseline::Zero,
    };
    let method = a.params.method(&a.method, a.steps)?;
    let target = match a.target {
        Some(t) => t,
        None => predict(&graph, &x)?.argmax(),
    };
    let map = in_pool(|| attribute(&graph, &x, target, &method, &baseline))?;
    std::fs::write(&a.out, serde_json::to_string_pretty(&map)? + "\n")?;
    let mut outputs = vec![display(&a.out)];
    if let Some(path) = &a.heatmap {
        let img = heatmap(&map.values, DEFAULT_PERCENTILE)?.upscale(a.heatmap_scale);
        std::fs::write(path, img.to_ppm())?;
        outputs.push(display(path));
    }
    println!("{} attribution for class {target} written to {}", method.id(), a.out.display());

    let mut m = RunManifest::new("attribute", args);
    m.model = Some(display(&a.model));
    m.input = Some(display(&a.input));
    m.methods = vec![method];
    m.config = json!({
        "target": target,
        "baseline": a.baseline.as_deref().map(display),
        "heatmap_scale": a.heatmap_scale,
    });
    m.outputs = outputs;
    m.write()?;
    Ok(())
}

fn sensitivity(a: SensitivityArgs, args: &[String]) -> Result<()> {
    let graph = load_model(&a.model)?;
    let data = take_samples(load_data(&a.data)?, a.samples)?;
    let methods = a
        .methods
        .iter()
        .map(|id| a.params.method(id, a.steps))
        .collect::<Result<Vec<_>>>()?;
    let config = SensitivityConfig {
        n_schedule: a.n.clone(),
        subsets_per_n: a.subsets,
        seed: a.seed,
        replacement: a.params.replacement,
        baseline: Baseline::Zero,
    };
    let model_id = a
        .model
        .file_stem()
        .map_or_else(|| display(&a.model), |s| s.to_string_lossy().into_owned());
    let report = in_pool(|| {
        let targets = predicted_targets(&graph, &data.inputs)?;
        sensitivity_n(&graph, &model_id, &methods, &data.inputs, &targets, &config)
    })?;
    std::fs::write(&a.out, report.to_csv())?;
    println!("{} rows written to {}", report.cells.len(), a.out.display());

    let mut m = RunManifest::new("sensitivity", args);
    m.model = Some(display(&a.model));
    m.input = Some(a.data.data.clone());
    m.methods = methods;
    m.config = json!({
        "dataset": data_config(&a.data),
        "samples": data.len(),
        "subsets_per_n": a.subsets,
        "replacement": a.params.replacement,
        "n_schedule": report.n_schedule,
    });
    m.seed = Some(a.seed);
    m.outputs = vec![display(&a.out)];
    m.write()?;
    Ok(())
}

fn perturb(a: PerturbArgs, args: &[String]) -> Result<()> {
    let graph = load_model(&a.model)?;
    let features = gradattr::evaluation::FeatureLayout::for_shape(graph.input_shape()).num_features();
    if a.steps > features {
        return Err(Error::InvalidArgument(format!(
            "{} removal steps exceed {features} features",
            a.steps
        )));
    }
    let data = take_samples(load_data(&a.data)?, a.samples)?;
    let methods = a
        .methods
        .iter()
        .map(|id| a.params.method(id, a.ig_steps))
        .collect::<Result<Vec<_>>>()?;
    let mut csv = String::from("method,order,k,score\n");
    in_pool(|| {
        let targets = predicted_targets(&graph, &data.inputs)?;
        for method in &methods {
            let maps: Vec<AttributionMap> = data
                .inputs
                .par_iter()
                .zip(&targets)
                .map(|(x, &t)| attribute(&graph, x, t, method, &Baseline::Zero))
                .collect::<Result<_>>()?;
            for &order in &a.orders {
                let curves: Vec<Vec<(usize, f64)>> = data
                    .inputs
                    .par_iter()
                    .zip(&maps)
                    .zip(&targets)
                    .map(|((x, map), &t)| perturbation_curve(&graph, map, x, t, order, a.steps))
                    .collect::<Result<_>>()?;
                for k in 0..=a.steps {
                    let mean = curves.iter().map(|c| c[k].1).sum::<f64>() / curves.len() as f64;
                    let order_name = match order {
                        RemovalOrder::Desc => "desc",
                        RemovalOrder::Asc => "asc",
                    };
                    csv.push_str(&format!(
                        "{},{order_name},{k},{}\n",
                        method.id(),
                        format_significant(mean, 9)
                    ));
                }
            }
        }
        Ok(())
    })?;
    std::fs::write(&a.out, &csv)?;
    println!("perturbation curves written to {}", a.out.display());

    let mut m = RunManifest::new("perturb", args);
    m.model = Some(display(&a.model));
    m.input = Some(a.data.data.clone());
    m.methods = methods;
    m.config = json!({
        "dataset": data_config(&a.data),
        "samples": data.len(),
        "steps": a.steps,
        "orders": a.orders,
    });
    m.outputs = vec![display(&a.out)];
    m.write()?;
    Ok(())
}

fn render(a: RenderArgs, args: &[String]) -> Result<()> {
    let text = std::fs::read_to_string(&a.map)?;
    let values = match serde_json::from_str::<AttributionMap>(&text) {
        Ok(map) => map.values,
        Err(_) => serde_json::from_str::<Tensor>(&text)
            .map_err(|e| Error::Format(format!("{}: not an attribution map or tensor: {e}", a.map.display())))?,
    };
    let img = heatmap(&values, a.percentile)?.upscale(a.scale);
    std::fs::write(&a.out, img.to_ppm())?;
    println!("{}x{} heatmap written to {}", img.width, img.height, a.out.display());

    let mut m = RunManifest::new("render", args);
    m.input = Some(display(&a.map));
    m.config = json!({ "scale": a.scale, "percentile": a.percentile });
    m.outputs = vec![display(&a.out)];
    m.write()?;
    Ok(())
}

fn dataset(a: DatasetArgs, args: &[String]) -> Result<()> {
    let data = load_data(&a.data)?;
    match a.index {
        Some(i) => {
            let x = data.inputs.get(i).ok_or_else(|| {
                Error::InvalidArgument(format!("index {i} out of range for {} samples", data.len()))
            })?;
            std::fs::write(&a.out, serde_json::to_string(x)? + "\n")?;
            println!("input {i} (label {}) written to {}", data.labels[i], a.out.display());
        }
        None => {
            data.save(&a.out)?;
            println!("{} samples written to {}", data.len(), a.out.display());
        }
    }
    let mut m = RunManifest::new("dataset", args);
    m.input = Some(a.data.data.clone());
    m.config = json!({ "dataset": data_config(&a.data), "index": a.index });
    m.seed = Some(a.data.data_seed);
    m.outputs = vec![display(&a.out)];
    m.write()?;
    Ok(())
}

fn rerun(a: RerunArgs) -> Result<()> {
    let manifest = RunManifest::load(&a.manifest)?;
    let args = manifest.replay_args(a.out.as_deref())?;
    if args.first().map(String::as_str) == Some("rerun") {
        return Err(Error::Format("a manifest cannot replay another rerun".into()));
    }
    let cli = Cli::try_parse_from(std::iter::once("gradattr".to_string()).chain(args.iter().cloned()))
        .map_err(|e| Error::Format(format!("manifest arguments no longer parse: {e}")))?;
    run_command(cli.command, &args)
}
