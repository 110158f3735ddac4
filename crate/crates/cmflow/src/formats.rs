//! On-disk formats: model JSON, hardware JSON, bundle JSON, and tensor files.
//!
//! # Model JSON
//!
//! ```json
//! {
//!   "format": "cmflow-model/1",
//!   "graph_input": { "name": "x", "shape": [1, 8, 8] },
//!   "graph_output": "y",
//!   "nodes": [
//!     { "id": "conv1", "op": "conv2d", "inputs": ["x"], "output": "t1",
//!       "out_channels": 2, "kernel": [3, 3], "stride": 1, "padding": "same_zero",
//!       "weights": [[1, -2, ...], [...]], "bias": [0, 3] },
//!     { "id": "add", "op": "add", "inputs": ["t2", "t1"], "output": "y" },
//!     { "id": "act", "op": "relu", "inputs": ["y"], "output": "z" }
//!   ]
//! }
//! ```
//!
//! `weights` holds `out_channels x in_channels*FH*FW` int8 values, either as
//! arrays of any nesting (flattened row-major) or as `{"base64": "..."}`
//! over the raw int8 bytes. `in_channels` is optional and inferred from the
//! input tensor. Intermediate tensor shapes are inferred.
//!
//! # Tensor files
//!
//! One JSON header line, then raw little-endian data:
//!
//! ```text
//! {"dtype":"i32","shape":[c,h,w],"frames":1}\n<frames*c*h*w values>
//! ```
//!
//! `dtype` is `i8` or `i32`; values are stored row-major in `(c, h, w)`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, Read, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use cmflow_core::model::{ConvParams, ModelError, NNGraph, Node, NodeKind, Padding, Tensor, TensorShape};
use cmflow_core::placemap::HwDescription;
use cmflow_core::sim::{Bundle, BUNDLE_FORMAT};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const MODEL_FORMAT: &str = "cmflow-model/1";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {msg}")]
    Malformed { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Model { path: PathBuf, source: ModelError },
}

impl FormatError {
    fn malformed(path: &Path, msg: impl Into<String>) -> Self {
        FormatError::Malformed {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, FormatError> {
    fs::read(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    fs::write(path, bytes).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, FormatError> {
    serde_json::from_slice(&read(path)?).map_err(|e| FormatError::malformed(path, e.to_string()))
}

// ---- model ------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphInput {
    pub name: String,
    pub shape: TensorShape,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
enum NodeOp {
    Conv2d {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        in_channels: Option<usize>,
        out_channels: usize,
        kernel: [usize; 2],
        #[serde(default = "one")]
        stride: usize,
        #[serde(default = "valid")]
        padding: Padding,
        weights: Value,
        bias: Vec<i32>,
    },
    Add,
    Relu,
}

fn one() -> usize {
    1
}

fn valid() -> Padding {
    Padding::Valid
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NodeDoc {
    id: String,
    inputs: Vec<String>,
    output: String,
    #[serde(flatten)]
    op: NodeOp,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelDoc {
    format: String,
    graph_input: GraphInput,
    graph_output: String,
    nodes: Vec<NodeDoc>,
}

fn flatten_weights(v: &Value, out: &mut Vec<i8>) -> Result<(), String> {
    match v {
        Value::Array(items) => items.iter().try_for_each(|i| flatten_weights(i, out)),
        Value::Number(n) => {
            let x = n.as_i64().ok_or_else(|| format!("weight {n} is not an integer"))?;
            out.push(i8::try_from(x).map_err(|_| format!("weight {x} does not fit in int8"))?);
            Ok(())
        }
        Value::Object(m) => match m.get("base64") {
            Some(Value::String(s)) if m.len() == 1 => {
                let bytes = STANDARD.decode(s).map_err(|e| format!("bad base64 weights: {e}"))?;
                out.extend(bytes.into_iter().map(|b| b as i8));
                Ok(())
            }
            _ => Err("weights object must be {\"base64\": \"...\"}".into()),
        },
        other => Err(format!("unexpected weight value {other}")),
    }
}

pub fn parse_model(text: &str, path: &Path) -> Result<NNGraph, FormatError> {
    let doc: ModelDoc = serde_json::from_str(text).map_err(|e| FormatError::malformed(path, e.to_string()))?;
    if doc.format != MODEL_FORMAT {
        return Err(FormatError::malformed(
            path,
            format!("format tag `{}`, expected `{MODEL_FORMAT}`", doc.format),
        ));
    }
    let mut tensors = BTreeMap::new();
    tensors.insert(doc.graph_input.name.clone(), doc.graph_input.shape);
    let mut nodes: Vec<Option<Node>> = vec![None; doc.nodes.len()];
    // shapes are inferred in dependency order; iterate to a fixpoint
    let mut progress = true;
    while progress {
        progress = false;
        for (i, n) in doc.nodes.iter().enumerate() {
            if nodes[i].is_some() {
                continue;
            }
            let Some(first) = n.inputs.first().and_then(|t| tensors.get(t)).copied() else {
                continue;
            };
            let (kind, shape) = match &n.op {
                NodeOp::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    weights,
                    bias,
                } => {
                    let mut w = Vec::new();
                    flatten_weights(weights, &mut w)
                        .map_err(|m| FormatError::malformed(path, format!("node `{}`: {m}", n.id)))?;
                    let p = ConvParams {
                        in_channels: in_channels.unwrap_or(first.channels),
                        out_channels: *out_channels,
                        kernel_h: kernel[0],
                        kernel_w: kernel[1],
                        stride: *stride,
                        padding: *padding,
                        weights: w,
                        bias: bias.clone(),
                    };
                    let shape = p.output_shape(&n.id, first).map_err(|source| FormatError::Model {
                        path: path.to_path_buf(),
                        source,
                    })?;
                    (NodeKind::Conv2d(p), shape)
                }
                NodeOp::Add => (NodeKind::Add, first),
                NodeOp::Relu => (NodeKind::Relu, first),
            };
            if tensors.insert(n.output.clone(), shape).is_some() {
                return Err(FormatError::malformed(path, format!("tensor `{}` produced twice", n.output)));
            }
            nodes[i] = Some(Node {
                id: n.id.clone(),
                kind,
                inputs: n.inputs.clone(),
                output: n.output.clone(),
            });
            progress = true;
        }
    }
    if let Some(i) = nodes.iter().position(Option::is_none) {
        return Err(FormatError::malformed(
            path,
            format!("node `{}` reads a tensor that is never produced", doc.nodes[i].id),
        ));
    }
    NNGraph::new(
        tensors,
        nodes.into_iter().map(Option::unwrap).collect(),
        doc.graph_input.name,
        doc.graph_output,
    )
    .map_err(|source| FormatError::Model {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<NNGraph, FormatError> {
    let bytes = read(path)?;
    let text = String::from_utf8(bytes).map_err(|e| FormatError::malformed(path, e.to_string()))?;
    parse_model(&text, path)
}

/// Serialize a graph as model JSON with nested weight rows.
pub fn model_to_json(g: &NNGraph) -> String {
    let nodes = g
        .nodes()
        .iter()
        .map(|n| NodeDoc {
            id: n.id.clone(),
            inputs: n.inputs.clone(),
            output: n.output.clone(),
            op: match &n.kind {
                NodeKind::Conv2d(p) => NodeOp::Conv2d {
                    in_channels: Some(p.in_channels),
                    out_channels: p.out_channels,
                    kernel: [p.kernel_h, p.kernel_w],
                    stride: p.stride,
                    padding: p.padding,
                    weights: Value::Array(
                        p.weights
                            .chunks(p.cols().max(1))
                            .map(|row| Value::Array(row.iter().map(|&w| Value::from(w)).collect()))
                            .collect(),
                    ),
                    bias: p.bias.clone(),
                },
                NodeKind::Add => NodeOp::Add,
                NodeKind::Relu => NodeOp::Relu,
            },
        })
        .collect();
    let doc = ModelDoc {
        format: MODEL_FORMAT.into(),
        graph_input: GraphInput {
            name: g.input().into(),
            shape: g.input_shape(),
        },
        graph_output: g.output().into(),
        nodes,
    };
    serde_json::to_string_pretty(&doc).expect("model serializes") + "\n"
}

// ---- hardware and bundle ------------------------------------------------

pub fn load_hw(path: &Path) -> Result<HwDescription, FormatError> {
    let hw: HwDescription = parse_json(path)?;
    hw.validate().map_err(|e| FormatError::malformed(path, e.to_string()))?;
    Ok(hw)
}

pub fn bundle_to_json(b: &Bundle) -> String {
    serde_json::to_string_pretty(b).expect("bundle serializes") + "\n"
}

pub fn save_bundle(path: &Path, b: &Bundle) -> Result<(), FormatError> {
    write(path, bundle_to_json(b).as_bytes())
}

pub fn load_bundle(path: &Path) -> Result<Bundle, FormatError> {
    let b: Bundle = parse_json(path)?;
    if b.format != BUNDLE_FORMAT {
        return Err(FormatError::malformed(
            path,
            format!("format tag `{}`, expected `{BUNDLE_FORMAT}`", b.format),
        ));
    }
    Ok(b)
}

// ---- tensors ----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    I8,
    I32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorHeader {
    dtype: Dtype,
    shape: TensorShape,
    #[serde(default = "one")]
    frames: usize,
}

pub fn encode_tensors(frames: &[Tensor], dtype: Dtype) -> Result<Vec<u8>, String> {
    let shape = frames.first().ok_or("no frames to write")?.shape;
    if frames.iter().any(|t| t.shape != shape) {
        return Err("frames have different shapes".into());
    }
    let header = TensorHeader {
        dtype,
        shape,
        frames: frames.len(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    for t in frames {
        for &v in &t.data {
            match dtype {
                Dtype::I8 => {
                    let b = i8::try_from(v).map_err(|_| format!("value {v} does not fit in i8"))?;
                    out.push(b as u8);
                }
                Dtype::I32 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    Ok(out)
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<Tensor>, String> {
    let mut cursor = io::Cursor::new(bytes);
    let mut line = Vec::new();
    cursor.read_until(b'\n', &mut line).map_err(|e| e.to_string())?;
    let header: TensorHeader = serde_json::from_slice(&line).map_err(|e| format!("bad header: {e}"))?;
    let mut body = Vec::new();
    cursor.read_to_end(&mut body).map_err(|e| e.to_string())?;
    let n = header.shape.len();
    let width = match header.dtype {
        Dtype::I8 => 1,
        Dtype::I32 => 4,
    };
    if body.len() != header.frames * n * width {
        return Err(format!(
            "expected {} bytes of data for {} frame(s) of {}, found {}",
            header.frames * n * width,
            header.frames,
            header.shape,
            body.len()
        ));
    }
    let values: Vec<i32> = match header.dtype {
        Dtype::I8 => body.iter().map(|&b| b as i8 as i32).collect(),
        Dtype::I32 => body
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    };
    Ok(values
        .chunks(n.max(1))
        .take(header.frames)
        .map(|c| Tensor::from_data(header.shape, c.to_vec()).expect("length checked"))
        .collect())
}

pub fn load_tensors(path: &Path) -> Result<Vec<Tensor>, FormatError> {
    decode_tensors(&read(path)?).map_err(|m| FormatError::malformed(path, m))
}

pub fn save_tensors(path: &Path, frames: &[Tensor], dtype: Dtype) -> Result<(), FormatError> {
    let bytes = encode_tensors(frames, dtype).map_err(|m| FormatError::malformed(path, m))?;
    write(path, &bytes)
}

pub fn save_text(path: &Path, text: &str) -> Result<(), FormatError> {
    let mut f = fs::File::create(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(text.as_bytes()).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}
