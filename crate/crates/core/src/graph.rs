//! Network graphs: node definitions, validation, traced forward evaluation,
//! a sequential builder and the JSON model file format.

use std::collections::{HashMap, VecDeque};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, ConvGeometry, Padding, Tensor};

pub const FORMAT_VERSION: u32 = 1;

/// Elementwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Relu,
    Tanh,
    Sigmoid,
    Softplus,
    Identity,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 5] = [
        ActivationKind::Relu,
        ActivationKind::Tanh,
        ActivationKind::Sigmoid,
        ActivationKind::Softplus,
        ActivationKind::Identity,
    ];

    pub fn apply(self, z: f64) -> f64 {
        match self {
            ActivationKind::Relu => z.max(0.0),
            ActivationKind::Tanh => z.tanh(),
            ActivationKind::Sigmoid => sigmoid(z),
            ActivationKind::Softplus => z.max(0.0) + (-z.abs()).exp().ln_1p(),
            ActivationKind::Identity => z,
        }
    }

    /// f'(z). The relu derivative at 0 is taken to be 0.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            ActivationKind::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            ActivationKind::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            ActivationKind::Softplus => sigmoid(z),
            ActivationKind::Identity => 1.0,
        }
    }

    /// True when f(0) = 0 exactly.
    pub fn crosses_origin(self) -> bool {
        matches!(
            self,
            ActivationKind::Relu | ActivationKind::Tanh | ActivationKind::Identity
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Softplus => "softplus",
            ActivationKind::Identity => "identity",
        }
    }
}

impl std::str::FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ActivationKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown activation '{s}'")))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeKind {
    Input {
        shape: Vec<usize>,
    },
    /// `weights [out, in]`, `bias [out]`.
    Dense {
        weights: Tensor,
        bias: Tensor,
    },
    Conv2d {
        kernels: Tensor,
        bias: Tensor,
        stride: usize,
        padding: Padding,
    },
    #[serde(rename = "maxpool2d")]
    MaxPool2d {
        k: usize,
    },
    Flatten,
    Activation {
        activation: ActivationKind,
    },
    /// Elementwise product of two inputs.
    Multiply,
    /// `x - shift`.
    AffineShift {
        shift: f64,
    },
}

impl NodeKind {
    fn arity(&self) -> usize {
        match self {
            NodeKind::Input { .. } => 0,
            NodeKind::Multiply => 2,
            _ => 1,
        }
    }

    fn label(&self) -> &'static str {
        match self {
            NodeKind::Input { .. } => "input",
            NodeKind::Dense { .. } => "dense",
            NodeKind::Conv2d { .. } => "conv2d",
            NodeKind::MaxPool2d { .. } => "maxpool2d",
            NodeKind::Flatten => "flatten",
            NodeKind::Activation { .. } => "activation",
            NodeKind::Multiply => "multiply",
            NodeKind::AffineShift { .. } => "affine_shift",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub inputs: Vec<usize>,
    #[serde(flatten)]
    pub kind: NodeKind,
}

impl Node {
    pub fn new(id: usize, kind: NodeKind, inputs: Vec<usize>) -> Self {
        Node { id, inputs, kind }
    }
}

/// A validated network DAG with a single input and a rank-1 output of class scores.
///
/// Construction validates; a `Graph` value is always acyclic, fully connected
/// between input and output, and shape-consistent.
#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    input_id: usize,
    output_id: usize,
    // Positions into `nodes`, resolved at validation.
    order: Vec<usize>,
    sources: Vec<Vec<usize>>,
    shapes: Vec<Vec<usize>>,
    input_pos: usize,
    output_pos: usize,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
            && self.input_id == other.input_id
            && self.output_id == other.output_id
    }
}

impl Graph {
    pub fn new(nodes: Vec<Node>, input_id: usize, output_id: usize) -> Result<Self> {
        let mut graph = Graph {
            nodes,
            input_id,
            output_id,
            order: Vec::new(),
            sources: Vec::new(),
            shapes: Vec::new(),
            input_pos: 0,
            output_pos: 0,
        };
        graph.validate_and_cache()?;
        Ok(graph)
    }

    /// Re-checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        Graph::new(self.nodes.clone(), self.input_id, self.output_id).map(|_| ())
    }

    fn validate_and_cache(&mut self) -> Result<()> {
        let mut position = HashMap::with_capacity(self.nodes.len());
        for (pos, node) in self.nodes.iter().enumerate() {
            if position.insert(node.id, pos).is_some() {
                return Err(Error::graph(node.id, "duplicate node id"));
            }
        }
        let lookup = |id: usize| {
            position
                .get(&id)
                .copied()
                .ok_or_else(|| Error::graph(id, "referenced as graph input/output but does not exist"))
        };
        let input_pos = lookup(self.input_id)?;
        let output_pos = lookup(self.output_id)?;

        let mut sources = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            if node.inputs.len() != node.kind.arity() {
                return Err(Error::graph(
                    node.id,
                    format!(
                        "{} takes {} input(s), got {}",
                        node.kind.label(),
                        node.kind.arity(),
                        node.inputs.len()
                    ),
                ));
            }
            let mut src = Vec::with_capacity(node.inputs.len());
            for &i in &node.inputs {
                let p = position.get(&i).copied().ok_or_else(|| {
                    Error::graph(node.id, format!("references missing node {i}"))
                })?;
                src.push(p);
            }
            sources.push(src);
        }

        let input_nodes: Vec<_> = self
            .nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Input { .. }))
            .map(|n| n.id)
            .collect();
        if input_nodes != [self.input_id] {
            return Err(Error::graph(
                self.input_id,
                format!("graph needs exactly one input node at this id, found {input_nodes:?}"),
            ));
        }

        // Kahn's algorithm, ties resolved by position for a stable order.
        let n = self.nodes.len();
        let mut consumers = vec![Vec::new(); n];
        let mut pending = vec![0usize; n];
        for (pos, src) in sources.iter().enumerate() {
            pending[pos] = src.len();
            for &s in src {
                consumers[s].push(pos);
            }
        }
        let mut ready: VecDeque<usize> = (0..n).filter(|&p| pending[p] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(p) = ready.pop_front() {
            order.push(p);
            for &c in &consumers[p] {
                pending[c] -= 1;
                if pending[c] == 0 {
                    ready.push_back(c);
                }
            }
        }
        if order.len() != n {
            let stuck = (0..n).find(|&p| pending[p] > 0).expect("some node is stuck");
            return Err(Error::graph(self.nodes[stuck].id, "node is part of a cycle"));
        }

        let mut from_input = vec![false; n];
        from_input[input_pos] = true;
        for &p in &order {
            if sources[p].iter().any(|&s| from_input[s]) {
                from_input[p] = true;
            }
        }
        let mut to_output = vec![false; n];
        to_output[output_pos] = true;
        for &p in order.iter().rev() {
            if to_output[p] {
                for &s in &sources[p] {
                    to_output[s] = true;
                }
            }
        }
        if let Some(p) = (0..n).find(|&p| !from_input[p] || !to_output[p]) {
            return Err(Error::graph(
                self.nodes[p].id,
                "node is not on a path from the input to the output",
            ));
        }

        let mut shapes = vec![Vec::new(); n];
        for &p in &order {
            let node = &self.nodes[p];
            let in_shapes: Vec<&[usize]> = sources[p].iter().map(|&s| shapes[s].as_slice()).collect();
            shapes[p] = infer_shape(node, &in_shapes)?;
        }
        if shapes[output_pos].len() != 1 {
            return Err(Error::graph(
                self.output_id,
                format!("output must be rank-1 class scores, got shape {:?}", shapes[output_pos]),
            ));
        }

        self.order = order;
        self.sources = sources;
        self.shapes = shapes;
        self.input_pos = input_pos;
        self.output_pos = output_pos;
        Ok(())
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn input_id(&self) -> usize {
        self.input_id
    }

    pub fn output_id(&self) -> usize {
        self.output_id
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[self.input_pos]
    }

    /// Number of class scores C.
    pub fn num_classes(&self) -> usize {
        self.shapes[self.output_pos][0]
    }

    pub fn input_len(&self) -> usize {
        self.input_shape().iter().product()
    }

    pub(crate) fn order(&self) -> &[usize] {
        &self.order
    }

    pub(crate) fn sources(&self, pos: usize) -> &[usize] {
        &self.sources[pos]
    }

    pub(crate) fn shape_at(&self, pos: usize) -> &[usize] {
        &self.shapes[pos]
    }

    pub(crate) fn input_pos(&self) -> usize {
        self.input_pos
    }

    pub(crate) fn output_pos(&self) -> usize {
        self.output_pos
    }

    pub(crate) fn nodes_mut(&mut self) -> &mut [Node] {
        &mut self.nodes
    }

    /// Copy of the graph with every activation replaced by `f(kind)`.
    pub fn map_activations(&self, f: impl Fn(ActivationKind) -> ActivationKind) -> Graph {
        let mut g = self.clone();
        for node in &mut g.nodes {
            if let NodeKind::Activation { activation } = &mut node.kind {
                *activation = f(*activation);
            }
        }
        g
    }

    /// Copy of the graph with all Dense/Conv biases set to zero.
    pub fn without_biases(&self) -> Graph {
        let mut g = self.clone();
        for node in &mut g.nodes {
            match &mut node.kind {
                NodeKind::Dense { bias, .. } | NodeKind::Conv2d { bias, .. } => {
                    bias.data_mut().fill(0.0);
                }
                _ => {}
            }
        }
        g
    }

    pub fn activations(&self) -> impl Iterator<Item = ActivationKind> + '_ {
        self.nodes.iter().filter_map(|n| match n.kind {
            NodeKind::Activation { activation } => Some(activation),
            _ => None,
        })
    }

    pub fn has_node(&self, pred: impl Fn(&NodeKind) -> bool) -> bool {
        self.nodes.iter().any(|n| pred(&n.kind))
    }
}

fn infer_shape(node: &Node, inputs: &[&[usize]]) -> Result<Vec<usize>> {
    let err = |msg: String| Error::graph(node.id, msg);
    match &node.kind {
        NodeKind::Input { shape } => {
            if shape.is_empty() || shape.contains(&0) {
                return Err(err(format!("invalid input shape {shape:?}")));
            }
            Ok(shape.clone())
        }
        NodeKind::Dense { weights, bias } => {
            let [out, fan_in] = *weights.shape() else {
                return Err(err(format!("dense weights must be rank-2, got {:?}", weights.shape())));
            };
            if bias.shape() != [out] {
                return Err(err(format!(
                    "dense bias {:?} does not match weights {:?}",
                    bias.shape(),
                    weights.shape()
                )));
            }
            if inputs[0] != [fan_in] {
                return Err(err(format!(
                    "dense expects input [{fan_in}], got {:?}",
                    inputs[0]
                )));
            }
            Ok(vec![out])
        }
        NodeKind::Conv2d {
            kernels,
            bias,
            stride,
            padding,
        } => {
            let geo = ConvGeometry::resolve(inputs[0], kernels.shape(), *stride, *padding)
                .map_err(|e| err(e.to_string()))?;
            if bias.shape() != [geo.kernels] {
                return Err(err(format!(
                    "conv2d bias {:?} does not match {} kernels",
                    bias.shape(),
                    geo.kernels
                )));
            }
            Ok(vec![geo.kernels, geo.out_h, geo.out_w])
        }
        NodeKind::MaxPool2d { k } => {
            tensor::maxpool_shape(inputs[0], *k).map_err(|e| err(e.to_string()))
        }
        NodeKind::Flatten => Ok(vec![inputs[0].iter().product()]),
        NodeKind::Activation { .. } => Ok(inputs[0].to_vec()),
        NodeKind::AffineShift { shift } => {
            if !shift.is_finite() {
                return Err(err("affine shift must be finite".into()));
            }
            Ok(inputs[0].to_vec())
        }
        NodeKind::Multiply => {
            if inputs[0] != inputs[1] {
                return Err(err(format!(
                    "multiply operands differ in shape: {:?} vs {:?}",
                    inputs[0], inputs[1]
                )));
            }
            Ok(inputs[0].to_vec())
        }
    }
}

/// Values recorded during one forward pass: every node's output, plus the
/// argmax routing of each max-pool node. The input of a node is the output of
/// its source node(s), so the pre-activation `z` of an activation node is the
/// recorded value of its source.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    values: Vec<Tensor>,
    argmax: Vec<Option<Vec<usize>>>,
    output_pos: usize,
}

impl ForwardTrace {
    /// Value produced at node position `pos`.
    pub(crate) fn value_at(&self, pos: usize) -> &Tensor {
        &self.values[pos]
    }

    pub(crate) fn argmax_at(&self, pos: usize) -> Option<&[usize]> {
        self.argmax[pos].as_deref()
    }

    /// Value produced by the node with this id.
    pub fn value(&self, graph: &Graph, id: usize) -> Option<&Tensor> {
        let pos = graph.nodes.iter().position(|n| n.id == id)?;
        self.values.get(pos)
    }

    /// The class scores.
    pub fn output(&self) -> &Tensor {
        &self.values[self.output_pos]
    }

    #[cfg(test)]
    pub(crate) fn len(&self) -> usize {
        self.values.len()
    }

    /// Confirms the trace was produced by a graph with this structure.
    pub(crate) fn check_matches(&self, graph: &Graph) -> Result<()> {
        let same = self.values.len() == graph.nodes.len()
            && self.output_pos == graph.output_pos
            && self
                .values
                .iter()
                .zip(&graph.shapes)
                .all(|(v, s)| v.shape() == s.as_slice());
        if same {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "forward trace was not produced by this graph".into(),
            ))
        }
    }
}

/// Evaluates the graph at `x`, returning the class scores and the full trace.
pub fn forward(graph: &Graph, x: &Tensor) -> Result<(Tensor, ForwardTrace)> {
    if x.shape() != graph.input_shape() {
        return Err(Error::graph(
            graph.input_id,
            format!(
                "input shape {:?} does not match expected {:?}",
                x.shape(),
                graph.input_shape()
            ),
        ));
    }
    let n = graph.nodes.len();
    let mut values: Vec<Option<Tensor>> = vec![None; n];
    let mut argmax = vec![None; n];
    for &pos in &graph.order {
        let node = &graph.nodes[pos];
        let src = |i: usize| values[graph.sources[pos][i]].as_ref().expect("topological order");
        let out = match &node.kind {
            NodeKind::Input { .. } => x.clone(),
            NodeKind::Dense { weights, bias } => {
                Tensor::from_parts(vec![bias.len()], tensor::affine(weights, bias, src(0).data()))
            }
            NodeKind::Conv2d {
                kernels,
                bias,
                stride,
                padding,
            } => {
                let geo = ConvGeometry::resolve(src(0).shape(), kernels.shape(), *stride, *padding)?;
                tensor::conv2d_resolved(&geo, src(0).data(), kernels, bias)
            }
            NodeKind::MaxPool2d { k } => {
                let (out, idx) = tensor::maxpool2d(src(0), *k)?;
                argmax[pos] = Some(idx);
                out
            }
            NodeKind::Flatten => {
                let v = src(0);
                Tensor::from_parts(vec![v.len()], v.data().to_vec())
            }
            NodeKind::Activation { activation } => src(0).map(|z| activation.apply(z)),
            NodeKind::AffineShift { shift } => src(0).map(|v| v - shift),
            NodeKind::Multiply => src(0).mul(src(1))?,
        };
        values[pos] = Some(out);
    }
    let values: Vec<Tensor> = values.into_iter().map(|v| v.expect("all nodes visited")).collect();
    let trace = ForwardTrace {
        values,
        argmax,
        output_pos: graph.output_pos,
    };
    Ok((trace.output().clone(), trace))
}

/// Class scores only.
pub fn predict(graph: &Graph, x: &Tensor) -> Result<Tensor> {
    forward(graph, x).map(|(scores, _)| scores)
}

/// One entry of a sequential architecture description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum Layer {
    Input {
        shape: Vec<usize>,
    },
    Dense {
        units: usize,
        #[serde(default)]
        activation: Option<ActivationKind>,
    },
    Conv2d {
        kernels: usize,
        size: usize,
        #[serde(default = "one")]
        stride: usize,
        padding: Padding,
        #[serde(default)]
        activation: Option<ActivationKind>,
    },
    #[serde(rename = "maxpool2d")]
    MaxPool2d {
        k: usize,
    },
    Flatten,
}

fn one() -> usize {
    1
}

impl Layer {
    pub fn dense(units: usize, activation: Option<ActivationKind>) -> Self {
        Layer::Dense { units, activation }
    }
}

/// Builds a chain graph, inserting an activation node after every layer that names one.
///
/// Weights are drawn Glorot-uniform from a seeded generator; biases start at zero.
pub fn build_sequential(layers: &[Layer], seed: u64) -> Result<Graph> {
    let Some((Layer::Input { shape }, rest)) = layers.split_first() else {
        return Err(Error::InvalidArgument(
            "layer list must start with an input layer".into(),
        ));
    };
    if rest.is_empty() {
        return Err(Error::InvalidArgument("layer list has no layers after the input".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = vec![Node::new(0, NodeKind::Input { shape: shape.clone() }, vec![])];
    let mut current = shape.clone();
    let mut glorot = |fan_in: usize, fan_out: usize, count: usize| -> Vec<f64> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        (0..count).map(|_| rng.gen_range(-limit..limit)).collect()
    };
    for (i, layer) in rest.iter().enumerate() {
        let id = nodes.len();
        let prev = id - 1;
        let (kind, activation) = match layer {
            Layer::Input { .. } => {
                return Err(Error::InvalidArgument(format!(
                    "layer {} is a second input layer",
                    i + 1
                )))
            }
            Layer::Dense { units, activation } => {
                let [fan_in] = *current.as_slice() else {
                    return Err(Error::Dimension(format!(
                        "layer {}: dense needs a rank-1 input, got {current:?}",
                        i + 1
                    )));
                };
                let weights = Tensor::new(vec![*units, fan_in], glorot(fan_in, *units, units * fan_in))?;
                (
                    NodeKind::Dense {
                        weights,
                        bias: Tensor::zeros(&[*units])?,
                    },
                    *activation,
                )
            }
            Layer::Conv2d {
                kernels,
                size,
                stride,
                padding,
                activation,
            } => {
                let channels = current.first().copied().unwrap_or(0);
                let count = kernels * channels * size * size;
                let fan_in = channels * size * size;
                let fan_out = kernels * size * size;
                let k = Tensor::new(vec![*kernels, channels, *size, *size], glorot(fan_in, fan_out, count))?;
                (
                    NodeKind::Conv2d {
                        kernels: k,
                        bias: Tensor::zeros(&[*kernels])?,
                        stride: *stride,
                        padding: *padding,
                    },
                    *activation,
                )
            }
            Layer::MaxPool2d { k } => (NodeKind::MaxPool2d { k: *k }, None),
            Layer::Flatten => (NodeKind::Flatten, None),
        };
        let node = Node::new(id, kind, vec![prev]);
        current = infer_shape(&node, &[current.as_slice()]).map_err(|e| {
            Error::Dimension(format!("layer {}: {e}", i + 1))
        })?;
        nodes.push(node);
        if let Some(activation) = activation {
            let id = nodes.len();
            nodes.push(Node::new(id, NodeKind::Activation { activation }, vec![id - 1]));
        }
    }
    let output = nodes.len() - 1;
    Graph::new(nodes, 0, output)
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    input_id: usize,
    output_id: usize,
    nodes: Vec<Node>,
}

pub fn model_to_json(graph: &Graph) -> Result<String> {
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        input_id: graph.input_id,
        output_id: graph.output_id,
        nodes: graph.nodes.clone(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn model_from_json(text: &str) -> Result<Graph> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    match value.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(FORMAT_VERSION) => {}
        Some(v) => return Err(Error::Format(format!("unsupported format_version {v}"))),
        None => return Err(Error::Format("missing format_version".into())),
    }
    // Parse from text rather than the Value so floats keep full precision.
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    Graph::new(file.nodes, file.input_id, file.output_id)
}

pub fn save_model(graph: &Graph, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, model_to_json(graph)? + "\n")?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Graph> {
    model_from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

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
                Node::new(2, NodeKind::Activation { activation: ActivationKind::Identity }, vec![1]),
            ],
            0,
            2,
        )
        .unwrap()
    }

    /// h = relu(x1 - 1) * relu(x2)
    fn interaction() -> Graph {
        let pick = |row: &[f64]| dense(&[row], &[0.0]);
        Graph::new(
            vec![
                Node::new(0, NodeKind::Input { shape: vec![2] }, vec![]),
                Node::new(1, pick(&[1.0, 0.0]), vec![0]),
                Node::new(2, NodeKind::AffineShift { shift: 1.0 }, vec![1]),
                Node::new(3, NodeKind::Activation { activation: ActivationKind::Relu }, vec![2]),
                Node::new(4, pick(&[0.0, 1.0]), vec![0]),
                Node::new(5, NodeKind::Activation { activation: ActivationKind::Relu }, vec![4]),
                Node::new(6, NodeKind::Multiply, vec![3, 5]),
            ],
            0,
            6,
        )
        .unwrap()
    }

    #[test]
    fn activation_values() {
        assert_eq!(ActivationKind::Relu.apply(-2.0), 0.0);
        assert_eq!(ActivationKind::Sigmoid.apply(0.0), 0.5);
        assert!((ActivationKind::Softplus.apply(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((ActivationKind::Softplus.apply(800.0) - 800.0).abs() < 1e-12);
        assert_eq!(ActivationKind::Relu.derivative(0.0), 0.0);
        for k in ActivationKind::ALL {
            assert_eq!(k.crosses_origin(), k.apply(0.0) == 0.0, "{k:?}");
        }
    }

    #[test]
    fn activation_derivatives_match_central_differences() {
        for k in [ActivationKind::Tanh, ActivationKind::Sigmoid, ActivationKind::Softplus] {
            for z in [-3.0, -0.4, 0.0, 0.7, 2.5] {
                let h = 1e-6;
                let fd = (k.apply(z + h) - k.apply(z - h)) / (2.0 * h);
                assert!((fd - k.derivative(z)).abs() < 1e-8, "{k:?} at {z}");
            }
        }
    }

    #[test]
    fn validate_examples() {
        assert!(build_sequential(
            &[Layer::Input { shape: vec![3] }, Layer::dense(2, Some(ActivationKind::Tanh))],
            0
        )
        .is_ok());

        let self_loop = Graph::new(
            vec![
                Node::new(0, NodeKind::Input { shape: vec![2] }, vec![]),
                Node::new(1, NodeKind::Activation { activation: ActivationKind::Relu }, vec![1]),
            ],
            0,
            1,
        );
        assert!(matches!(self_loop, Err(Error::Graph { node: 1, ref msg }) if msg.contains("cycle")));

        let unary_mul = Graph::new(
            vec![
                Node::new(0, NodeKind::Input { shape: vec![2] }, vec![]),
                Node::new(1, NodeKind::Multiply, vec![0]),
            ],
            0,
            1,
        );
        assert!(matches!(unary_mul, Err(Error::Graph { node: 1, ref msg }) if msg.contains("input")));
    }

    #[test]
    fn validate_rejects_dangling_and_unreachable() {
        let dangling = Graph::new(
            vec![
                Node::new(0, NodeKind::Input { shape: vec![2] }, vec![]),
                Node::new(1, NodeKind::Flatten, vec![7]),
            ],
            0,
            1,
        );
        assert!(matches!(dangling, Err(Error::Graph { node: 1, .. })));

        let side_branch = Graph::new(
            vec![
                Node::new(0, NodeKind::Input { shape: vec![2] }, vec![]),
                Node::new(1, NodeKind::Flatten, vec![0]),
                Node::new(2, NodeKind::Flatten, vec![0]),
            ],
            0,
            1,
        );
        assert!(matches!(side_branch, Err(Error::Graph { node: 2, .. })));

        let bad_shape = Graph::new(
            vec![
                Node::new(0, NodeKind::Input { shape: vec![3] }, vec![]),
                Node::new(1, dense(&[&[1.0, 2.0]], &[0.0]), vec![0]),
            ],
            0,
            1,
        );
        assert!(matches!(bad_shape, Err(Error::Graph { node: 1, .. })));
    }

    #[test]
    fn forward_examples() {
        let x = Tensor::vector(vec![100_000.0, 1_000.0]).unwrap();
        let (s, _) = forward(&linear_model(), &x).unwrap();
        assert_eq!(s.data(), &[115_000.0]);

        let (h, trace) = forward(&interaction(), &Tensor::vector(vec![2.0, 2.0]).unwrap()).unwrap();
        assert_eq!(h.data(), &[2.0]);
        assert_eq!(trace.len(), 7);
        assert_eq!(trace.output(), &h);

        let zeroed = build_sequential(
            &[
                Layer::Input { shape: vec![4] },
                Layer::dense(3, Some(ActivationKind::Sigmoid)),
                Layer::dense(2, None),
            ],
            3,
        )
        .unwrap();
        let mut zeroed = zeroed;
        for node in zeroed.nodes_mut() {
            if let NodeKind::Dense { weights, bias } = &mut node.kind {
                weights.data_mut().fill(0.0);
                bias.data_mut().fill(0.0);
            }
        }
        let s = predict(&zeroed, &Tensor::vector(vec![1.0, -2.0, 3.0, 0.5]).unwrap()).unwrap();
        assert_eq!(s.data(), &[0.0, 0.0]);
    }

    #[test]
    fn forward_rejects_wrong_input_shape() {
        let err = predict(&linear_model(), &Tensor::vector(vec![1.0; 3]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Graph { node: 0, .. }));
    }

    #[test]
    fn build_sequential_examples() {
        let g = build_sequential(
            &[
                Layer::Input { shape: vec![4] },
                Layer::dense(3, Some(ActivationKind::Relu)),
                Layer::dense(2, None),
            ],
            0,
        )
        .unwrap();
        assert_eq!(g.nodes().len(), 4);
        assert_eq!(g.num_classes(), 2);

        assert!(build_sequential(&[], 0).is_err());

        let mlp = build_sequential(
            &[
                Layer::Input { shape: vec![64] },
                Layer::dense(32, Some(ActivationKind::Tanh)),
                Layer::dense(32, Some(ActivationKind::Tanh)),
                Layer::dense(10, None),
            ],
            1,
        )
        .unwrap();
        assert!(mlp.validate().is_ok());
        assert_eq!(mlp.input_len(), 64);
        assert_eq!(mlp.num_classes(), 10);

        let mismatch = build_sequential(
            &[Layer::Input { shape: vec![1, 4, 4] }, Layer::dense(3, None)],
            0,
        );
        assert!(matches!(mismatch, Err(Error::Dimension(_))));
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let g = interaction();
        let back = model_from_json(&model_to_json(&g).unwrap()).unwrap();
        assert_eq!(back, g);

        let cnn = build_sequential(
            &[
                Layer::Input { shape: vec![1, 6, 6] },
                Layer::Conv2d {
                    kernels: 2,
                    size: 3,
                    stride: 1,
                    padding: Padding::Same,
                    activation: Some(ActivationKind::Softplus),
                },
                Layer::MaxPool2d { k: 2 },
                Layer::Flatten,
                Layer::dense(3, None),
            ],
            9,
        )
        .unwrap();
        let back = model_from_json(&model_to_json(&cnn).unwrap()).unwrap();
        assert_eq!(back, cnn);
    }

    #[test]
    fn loader_errors() {
        let bad_len = r#"{"format_version":1,"input_id":0,"output_id":1,"nodes":[
            {"id":0,"kind":"input","inputs":[],"shape":[2]},
            {"id":1,"kind":"dense","inputs":[0],
             "weights":{"shape":[1,2],"data":[1.0]},"bias":{"shape":[1],"data":[0]}}]}"#;
        assert!(matches!(model_from_json(bad_len), Err(Error::Format(_))));

        let unknown = r#"{"format_version":1,"input_id":0,"output_id":1,"nodes":[
            {"id":0,"kind":"input","inputs":[],"shape":[2]},
            {"id":1,"kind":"lstm","inputs":[0]}]}"#;
        assert!(matches!(model_from_json(unknown), Err(Error::Format(_))));

        let version = r#"{"format_version":2,"input_id":0,"output_id":0,"nodes":[]}"#;
        assert!(matches!(model_from_json(version), Err(Error::Format(m)) if m.contains("format_version")));

        assert!(model_from_json("not json").is_err());
    }

    #[test]
    fn hand_written_linear_model_file() {
        let text = r#"{
          "format_version": 1, "input_id": 0, "output_id": 1,
          "nodes": [
            {"id": 0, "kind": "input", "inputs": [], "shape": [2]},
            {"id": 1, "kind": "dense", "inputs": [0],
             "weights": {"shape": [1, 2], "data": [1.05, 10]},
             "bias": {"shape": [1], "data": [0]}}
          ]
        }"#;
        let g = model_from_json(text).unwrap();
        let s = predict(&g, &Tensor::vector(vec![100_000.0, 1_000.0]).unwrap()).unwrap();
        assert_eq!(s.data(), &[115_000.0]);
    }

    #[test]
    fn zero_input_gives_zero_output_without_biases() {
        let g = build_sequential(
            &[
                Layer::Input { shape: vec![5] },
                Layer::dense(4, Some(ActivationKind::Tanh)),
                Layer::dense(4, Some(ActivationKind::Relu)),
                Layer::dense(3, None),
            ],
            4,
        )
        .unwrap();
        let s = predict(&g, &Tensor::zeros(&[5]).unwrap()).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0));
    }

    proptest! {
        #[test]
        fn identity_activations_make_forward_linear(
            seed in any::<u64>(),
            a in -3.0f64..3.0,
            xs in proptest::collection::vec(-2.0f64..2.0, 12),
        ) {
            let g = build_sequential(
                &[
                    Layer::Input { shape: vec![6] },
                    Layer::dense(5, Some(ActivationKind::Sigmoid)),
                    Layer::dense(3, None),
                ],
                seed,
            )
            .unwrap()
            .map_activations(|_| ActivationKind::Identity);
            let x = Tensor::vector(xs[..6].to_vec()).unwrap();
            let y = Tensor::vector(xs[6..].to_vec()).unwrap();
            let fx = predict(&g, &x).unwrap();
            let fy = predict(&g, &y).unwrap();
            let fax = predict(&g, &x.scale(a)).unwrap();
            let fxy = predict(&g, &x.add(&y).unwrap()).unwrap();
            let tol = |v: f64| 1e-12 * v.abs().max(1.0);
            for i in 0..3 {
                let (p, q, r, s) = (fx.data()[i], fy.data()[i], fax.data()[i], fxy.data()[i]);
                prop_assert!((r - a * p).abs() <= tol(r));
                prop_assert!((s - (p + q)).abs() <= tol(s));
            }
        }

        #[test]
        fn forward_is_deterministic(seed in any::<u64>()) {
            let g = build_sequential(
                &[
                    Layer::Input { shape: vec![1, 4, 4] },
                    Layer::Conv2d { kernels: 2, size: 3, stride: 1, padding: Padding::Valid, activation: Some(ActivationKind::Tanh) },
                    Layer::Flatten,
                    Layer::dense(2, None),
                ],
                seed,
            ).unwrap();
            let x = Tensor::full(&[1, 4, 4], 0.3).unwrap();
            let (s1, t1) = forward(&g, &x).unwrap();
            let (s2, t2) = forward(&g, &x).unwrap();
            prop_assert_eq!(s1, s2);
            prop_assert_eq!(t1, t2);
        }
    }
}
