//! Dataflow graph of NN operators, validation, and the sequential reference
//! evaluator.
//!
//! Arithmetic is exact two's-complement: weights are `i8`, activations and
//! accumulators are `i32` with wrapping add/multiply, so a pipelined execution
//! can be compared bit-for-bit with [`reference_eval`].

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("graph has no nodes")]
    Empty,
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("unknown tensor `{tensor}` referenced by {by}")]
    UnknownTensor { tensor: String, by: String },
    #[error("tensor `{0}` has more than one producer")]
    DuplicateProducer(String),
    #[error("tensor `{0}` has no producer")]
    NoProducer(String),
    #[error("cycle detected through nodes {0:?}")]
    Cycle(Vec<String>),
    #[error("shape mismatch at `{node}`: {detail}")]
    ShapeMismatch { node: String, detail: String },
    #[error("node `{node}` expects {expected} inputs, got {got}")]
    InputArity { node: String, expected: usize, got: usize },
    #[error("malformed weights for `{node}`: {detail}")]
    MalformedWeights { node: String, detail: String },
    #[error("invalid parameters for `{node}`: {detail}")]
    InvalidParams { node: String, detail: String },
}

/// Activation shape, layout (channels, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct TensorShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl From<[usize; 3]> for TensorShape {
    fn from([channels, height, width]: [usize; 3]) -> Self {
        TensorShape {
            channels,
            height,
            width,
        }
    }
}

impl From<TensorShape> for [usize; 3] {
    fn from(s: TensorShape) -> Self {
        [s.channels, s.height, s.width]
    }
}

impl TensorShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        TensorShape {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, c: usize, h: usize, w: usize) -> usize {
        (c * self.height + h) * self.width + w
    }

    pub fn extents(&self) -> [i64; 3] {
        [self.channels as i64, self.height as i64, self.width as i64]
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: TensorShape,
    pub data: Vec<i32>,
}

impl Tensor {
    pub fn zeros(shape: TensorShape) -> Self {
        Tensor {
            shape,
            data: vec![0; shape.len()],
        }
    }

    pub fn from_data(shape: TensorShape, data: Vec<i32>) -> Option<Self> {
        (data.len() == shape.len()).then_some(Tensor { shape, data })
    }

    pub fn get(&self, c: usize, h: usize, w: usize) -> i32 {
        self.data[self.shape.index(c, h, w)]
    }

    pub fn set(&mut self, c: usize, h: usize, w: usize, v: i32) {
        let i = self.shape.index(c, h, w);
        self.data[i] = v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Valid,
    /// Zero padding so that `out = ceil(in / stride)`.
    SameZero,
}

/// Zero border added around the input, in elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Pads {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvParams {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: Padding,
    /// Row-major `out_channels x (in_channels * kernel_h * kernel_w)`, columns
    /// ordered (channel, kernel row, kernel column).
    pub weights: Vec<i8>,
    pub bias: Vec<i32>,
}

impl ConvParams {
    /// Length of the flattened input window.
    pub fn cols(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn weight(&self, k: usize, col: usize) -> i8 {
        self.weights[k * self.cols() + col]
    }

    pub fn pads(&self) -> Pads {
        match self.padding {
            Padding::Valid => Pads::default(),
            Padding::SameZero => {
                let top = (self.kernel_h - 1) / 2;
                let left = (self.kernel_w - 1) / 2;
                Pads {
                    top,
                    bottom: self.kernel_h - 1 - top,
                    left,
                    right: self.kernel_w - 1 - left,
                }
            }
        }
    }

    pub fn validate(&self, node: &str) -> Result<(), ModelError> {
        let bad = |detail: String| ModelError::InvalidParams {
            node: node.into(),
            detail,
        };
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(bad("channel counts must be positive".into()));
        }
        if self.kernel_h == 0 || self.kernel_w == 0 || self.stride == 0 {
            return Err(bad("kernel extents and stride must be positive".into()));
        }
        if self.weights.len() != self.out_channels * self.cols() {
            return Err(ModelError::MalformedWeights {
                node: node.into(),
                detail: format!(
                    "expected {}x{} = {} weights, got {}",
                    self.out_channels,
                    self.cols(),
                    self.out_channels * self.cols(),
                    self.weights.len()
                ),
            });
        }
        if self.bias.len() != self.out_channels {
            return Err(ModelError::MalformedWeights {
                node: node.into(),
                detail: format!(
                    "expected {} bias values, got {}",
                    self.out_channels,
                    self.bias.len()
                ),
            });
        }
        Ok(())
    }

    pub fn output_shape(&self, node: &str, input: TensorShape) -> Result<TensorShape, ModelError> {
        if input.channels != self.in_channels {
            return Err(ModelError::ShapeMismatch {
                node: node.into(),
                detail: format!(
                    "input has {} channels, conv expects {}",
                    input.channels, self.in_channels
                ),
            });
        }
        let p = self.pads();
        let ph = input.height + p.top + p.bottom;
        let pw = input.width + p.left + p.right;
        if ph < self.kernel_h || pw < self.kernel_w {
            return Err(ModelError::ShapeMismatch {
                node: node.into(),
                detail: format!(
                    "input {}x{} smaller than kernel {}x{}",
                    ph, pw, self.kernel_h, self.kernel_w
                ),
            });
        }
        Ok(TensorShape::new(
            self.out_channels,
            (ph - self.kernel_h) / self.stride + 1,
            (pw - self.kernel_w) / self.stride + 1,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum NodeKind {
    Conv2d(ConvParams),
    Add,
    Relu,
}

impl NodeKind {
    pub fn name(&self) -> &'static str {
        match self {
            NodeKind::Conv2d(_) => "Conv2D",
            NodeKind::Add => "Add",
            NodeKind::Relu => "ReLU",
        }
    }

    pub fn is_crossbar(&self) -> bool {
        matches!(self, NodeKind::Conv2d(_))
    }

    fn arity(&self) -> usize {
        match self {
            NodeKind::Add => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    pub inputs: Vec<String>,
    pub output: String,
}

/// Validated, acyclic dataflow graph. Nodes are stored in topological order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NNGraph {
    tensors: BTreeMap<String, TensorShape>,
    nodes: Vec<Node>,
    input: String,
    output: String,
}

impl NNGraph {
    pub fn new(
        tensors: BTreeMap<String, TensorShape>,
        nodes: Vec<Node>,
        input: String,
        output: String,
    ) -> Result<Self, ModelError> {
        if nodes.is_empty() {
            return Err(ModelError::Empty);
        }
        for (id, s) in &tensors {
            if s.channels == 0 || s.height == 0 || s.width == 0 {
                return Err(ModelError::ShapeMismatch {
                    node: id.clone(),
                    detail: format!("tensor extents must be positive, got {s}"),
                });
            }
        }
        let unknown = |tensor: &str, by: &str| ModelError::UnknownTensor {
            tensor: tensor.into(),
            by: by.into(),
        };
        if !tensors.contains_key(&input) {
            return Err(unknown(&input, "graph_input"));
        }
        if !tensors.contains_key(&output) {
            return Err(unknown(&output, "graph_output"));
        }

        let mut ids = BTreeSet::new();
        let mut producer: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if !ids.insert(n.id.as_str()) {
                return Err(ModelError::DuplicateId(n.id.clone()));
            }
            if n.inputs.len() != n.kind.arity() {
                return Err(ModelError::InputArity {
                    node: n.id.clone(),
                    expected: n.kind.arity(),
                    got: n.inputs.len(),
                });
            }
            for t in n.inputs.iter().chain(core::iter::once(&n.output)) {
                if !tensors.contains_key(t) {
                    return Err(unknown(t, &n.id));
                }
            }
            if n.output == input || producer.insert(&n.output, i).is_some() {
                return Err(ModelError::DuplicateProducer(n.output.clone()));
            }
            if let NodeKind::Conv2d(p) = &n.kind {
                p.validate(&n.id)?;
            }
        }
        for t in tensors.keys() {
            if t != &input && !producer.contains_key(t.as_str()) {
                return Err(ModelError::NoProducer(t.clone()));
            }
        }

        // Kahn's algorithm, lowest original index first for determinism.
        let mut indegree: Vec<usize> = nodes
            .iter()
            .map(|n| n.inputs.iter().filter(|t| producer.contains_key(t.as_str())).count())
            .collect();
        let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
        for (i, n) in nodes.iter().enumerate() {
            for t in &n.inputs {
                if let Some(&p) = producer.get(t.as_str()) {
                    consumers[p].push(i);
                }
            }
        }
        let mut ready: BTreeSet<usize> = (0..nodes.len()).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(nodes.len());
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &c in &consumers[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() != nodes.len() {
            let stuck = (0..nodes.len())
                .filter(|i| !order.contains(i))
                .map(|i| nodes[i].id.clone())
                .collect();
            return Err(ModelError::Cycle(stuck));
        }

        for n in &nodes {
            let shape_of = |t: &String| tensors[t];
            let out = shape_of(&n.output);
            let expected = match &n.kind {
                NodeKind::Conv2d(p) => p.output_shape(&n.id, shape_of(&n.inputs[0]))?,
                NodeKind::Add => {
                    let (a, b) = (shape_of(&n.inputs[0]), shape_of(&n.inputs[1]));
                    if a != b {
                        return Err(ModelError::ShapeMismatch {
                            node: n.id.clone(),
                            detail: format!("Add operands {a} and {b} differ"),
                        });
                    }
                    a
                }
                NodeKind::Relu => shape_of(&n.inputs[0]),
            };
            if expected != out {
                return Err(ModelError::ShapeMismatch {
                    node: n.id.clone(),
                    detail: format!("declared output {out}, computed {expected}"),
                });
            }
        }

        let mut slots: Vec<Option<Node>> = nodes.into_iter().map(Some).collect();
        let nodes = order.into_iter().map(|i| slots[i].take().unwrap()).collect();
        Ok(NNGraph {
            tensors,
            nodes,
            input,
            output,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn tensors(&self) -> &BTreeMap<String, TensorShape> {
        &self.tensors
    }

    pub fn shape(&self, tensor: &str) -> Option<TensorShape> {
        self.tensors.get(tensor).copied()
    }

    pub fn input(&self) -> &str {
        &self.input
    }

    pub fn output(&self) -> &str {
        &self.output
    }

    pub fn input_shape(&self) -> TensorShape {
        self.tensors[&self.input]
    }

    pub fn output_shape(&self) -> TensorShape {
        self.tensors[&self.output]
    }

    /// Index (in topological order) of the node producing `tensor`, or `None`
    /// for the graph input.
    pub fn producer(&self, tensor: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.output == tensor)
    }

    pub fn consumers<'a>(&'a self, tensor: &'a str) -> impl Iterator<Item = usize> + 'a {
        self.nodes
            .iter()
            .enumerate()
            .filter(move |(_, n)| n.inputs.iter().any(|t| t == tensor))
            .map(|(i, _)| i)
    }
}

/// Convolution lowered to one MxV per output pixel, calling `observe` with
/// every real (non-padding) input coordinate read for pixel `(oh, ow)`.
pub fn conv2d_mxv_observed(
    p: &ConvParams,
    input: &Tensor,
    mut observe: impl FnMut(usize, usize, (usize, usize, usize)),
) -> Result<Tensor, ModelError> {
    let out_shape = p.output_shape("conv2d", input.shape)?;
    let pads = p.pads();
    let mut out = Tensor::zeros(out_shape);
    let mut window = vec![0i32; p.cols()];
    for oh in 0..out_shape.height {
        for ow in 0..out_shape.width {
            // flatten inp[:, oh*s : oh*s+FH, ow*s : ow*s+FW] in padded coordinates
            for d in 0..p.in_channels {
                for dh in 0..p.kernel_h {
                    for dw in 0..p.kernel_w {
                        let ph = oh * p.stride + dh;
                        let pw = ow * p.stride + dw;
                        let col = (d * p.kernel_h + dh) * p.kernel_w + dw;
                        window[col] = match (ph.checked_sub(pads.top), pw.checked_sub(pads.left)) {
                            (Some(h), Some(w)) if h < input.shape.height && w < input.shape.width => {
                                observe(oh, ow, (d, h, w));
                                input.get(d, h, w)
                            }
                            _ => 0,
                        };
                    }
                }
            }
            let y = mxv(p, &window);
            for (k, v) in y.into_iter().enumerate() {
                out.set(k, oh, ow, v.wrapping_add(p.bias[k]));
            }
        }
    }
    Ok(out)
}

/// Crossbar MxV: `weights (K x cols) * window`, wrapping i32 accumulation.
pub fn mxv(p: &ConvParams, window: &[i32]) -> Vec<i32> {
    (0..p.out_channels)
        .map(|k| {
            window.iter().enumerate().fold(0i32, |acc, (c, &x)| {
                acc.wrapping_add((p.weight(k, c) as i32).wrapping_mul(x))
            })
        })
        .collect()
}

pub fn conv2d_mxv_reference(p: &ConvParams, input: &Tensor) -> Result<Tensor, ModelError> {
    conv2d_mxv_observed(p, input, |_, _, _| {})
}

/// Evaluate the graph node by node in topological order.
pub fn reference_eval(g: &NNGraph, input: &Tensor) -> Result<Tensor, ModelError> {
    if input.shape != g.input_shape() {
        return Err(ModelError::ShapeMismatch {
            node: g.input.clone(),
            detail: format!("input is {}, graph expects {}", input.shape, g.input_shape()),
        });
    }
    let mut values: BTreeMap<&str, Tensor> = BTreeMap::new();
    values.insert(&g.input, input.clone());
    for n in &g.nodes {
        let arg = |i: usize| &values[n.inputs[i].as_str()];
        let out = match &n.kind {
            NodeKind::Conv2d(p) => conv2d_mxv_reference(p, arg(0))?,
            NodeKind::Add => {
                let (a, b) = (arg(0), arg(1));
                Tensor {
                    shape: a.shape,
                    data: a.data.iter().zip(&b.data).map(|(x, y)| x.wrapping_add(*y)).collect(),
                }
            }
            NodeKind::Relu => {
                let a = arg(0);
                Tensor {
                    shape: a.shape,
                    data: a.data.iter().map(|&x| x.max(0)).collect(),
                }
            }
        };
        values.insert(&n.output, out);
    }
    Ok(values.remove(g.output.as_str()).expect("validated graph produces its output"))
}
