//! Seeded generators: the fixture models and chips, random inputs, and
//! random access-relation pairs for oracle checks.

use std::collections::BTreeMap;

use cmflow_core::accessrel::{
    aligned_write_relation, conv_read_relation, dpu_read_relation, gcu_write_relation, iteration_space,
};
use cmflow_core::model::{ConvParams, NNGraph, Node, NodeKind, Padding, Tensor, TensorShape};
use cmflow_core::placemap::{CoreSpec, HwDescription};
use cmflow_core::PresRelation;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Layer description for [`build_graph`].
#[derive(Debug, Clone)]
pub enum Layer {
    /// out channels, kernel (h, w), stride, padding
    Conv(usize, (usize, usize), usize, Padding),
    Relu,
    /// Add the current tensor to an earlier named tensor.
    AddFrom(String),
}

/// Build a graph whose nodes are named by `ids`, each layer feeding the
/// next. Weights and biases come from `seed`.
pub fn build_graph(input: TensorShape, layers: &[(&str, &str, Layer)], seed: u64) -> NNGraph {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut tensors = BTreeMap::new();
    tensors.insert("x".to_string(), input);
    let mut nodes = Vec::new();
    let mut cur = "x".to_string();
    for (id, out, layer) in layers {
        let in_shape = tensors[&cur];
        let (kind, inputs, shape) = match layer {
            Layer::Conv(k, (fh, fw), stride, padding) => {
                let d = in_shape.channels;
                let p = ConvParams {
                    in_channels: d,
                    out_channels: *k,
                    kernel_h: *fh,
                    kernel_w: *fw,
                    stride: *stride,
                    padding: *padding,
                    weights: (0..k * d * fh * fw).map(|_| rng.gen_range(-8..=8)).collect(),
                    bias: (0..*k).map(|_| rng.gen_range(-16..=16)).collect(),
                };
                let shape = p.output_shape(id, in_shape).expect("generator shapes are valid");
                (NodeKind::Conv2d(p), vec![cur.clone()], shape)
            }
            Layer::Relu => (NodeKind::Relu, vec![cur.clone()], in_shape),
            Layer::AddFrom(other) => (NodeKind::Add, vec![cur.clone(), other.clone()], in_shape),
        };
        tensors.insert(out.to_string(), shape);
        nodes.push(Node {
            id: id.to_string(),
            kind,
            inputs,
            output: out.to_string(),
        });
        cur = out.to_string();
    }
    NNGraph::new(tensors, nodes, "x".into(), cur).expect("generator graphs are valid")
}

/// One convolution followed by relu.
pub fn single_conv() -> NNGraph {
    build_graph(
        TensorShape::new(2, 6, 6),
        &[
            ("conv", "t", Layer::Conv(3, (3, 3), 1, Padding::SameZero)),
            ("relu", "y", Layer::Relu),
        ],
        101,
    )
}

/// Three convolutions in a row, with a strided one in the middle.
pub fn chain3() -> NNGraph {
    build_graph(
        TensorShape::new(1, 8, 8),
        &[
            ("conv1", "a", Layer::Conv(2, (3, 3), 1, Padding::SameZero)),
            ("relu1", "b", Layer::Relu),
            ("conv2", "c", Layer::Conv(3, (3, 3), 2, Padding::SameZero)),
            ("conv3", "y", Layer::Conv(2, (2, 2), 1, Padding::Valid)),
        ],
        102,
    )
}

/// Two convolutions and an addition of the first convolution's output to
/// the second's.
pub fn residual() -> NNGraph {
    build_graph(
        TensorShape::new(2, 6, 6),
        &[
            ("conv1", "t1", Layer::Conv(3, (3, 3), 1, Padding::SameZero)),
            ("conv2", "t2", Layer::Conv(3, (3, 3), 1, Padding::SameZero)),
            ("add", "y", Layer::AddFrom("t1".into())),
        ],
        103,
    )
}

/// A 1x1 conv producing `o[0..8]`, read by a 3-tap valid conv producing
/// six outputs: reader iteration `j` needs `o[j..=j+2]`.
pub fn chain1d() -> NNGraph {
    build_graph(
        TensorShape::new(1, 8, 1),
        &[
            ("c1", "o", Layer::Conv(1, (1, 1), 1, Padding::Valid)),
            ("c2", "y", Layer::Conv(1, (3, 1), 1, Padding::Valid)),
        ],
        104,
    )
}

/// A 3x3 conv over 8 channels: 72 crossbar columns.
pub fn oversized() -> NNGraph {
    build_graph(
        TensorShape::new(8, 4, 4),
        &[("big", "y", Layer::Conv(16, (3, 3), 1, Padding::SameZero))],
        105,
    )
}

fn cores(n: u32, width: u32, sram_bytes: u64) -> Vec<CoreSpec> {
    (0..n).map(|id| CoreSpec { id, width, sram_bytes }).collect()
}

/// Core 0 feeds core 1.
pub fn two_core() -> HwDescription {
    HwDescription {
        cores: cores(2, 64, 64 * 1024),
        links: vec![[0, 1]],
        gcu_in: vec![0],
        gcu_out: vec![0, 1],
    }
}

/// `rows x cols` grid with bidirectional nearest-neighbour links, cores
/// numbered row-major; the GCU feeds the left column and drains anywhere.
pub fn mesh(rows: u32, cols: u32) -> HwDescription {
    let id = |r: u32, c: u32| r * cols + c;
    let mut links = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                links.push([id(r, c), id(r, c + 1)]);
                links.push([id(r, c + 1), id(r, c)]);
            }
            if r + 1 < rows {
                links.push([id(r, c), id(r + 1, c)]);
                links.push([id(r + 1, c), id(r, c)]);
            }
        }
    }
    links.sort();
    HwDescription {
        cores: cores(rows * cols, 64, 64 * 1024),
        links,
        gcu_in: (0..rows).map(|r| id(r, 0)).collect(),
        gcu_out: (0..rows * cols).collect(),
    }
}

/// Three cores with no interconnect at all.
pub fn disconnected() -> HwDescription {
    HwDescription {
        cores: cores(3, 64, 64 * 1024),
        links: vec![],
        gcu_in: vec![0, 1, 2],
        gcu_out: vec![0, 1, 2],
    }
}

/// Uniform int8 activations.
pub fn random_input(shape: TensorShape, rng: &mut impl Rng) -> Tensor {
    let data = (0..shape.len()).map(|_| rng.gen_range(-128..=127)).collect();
    Tensor::from_data(shape, data).expect("length matches")
}

/// A writer/reader pair over one shared object.
#[derive(Debug, Clone)]
pub struct AccessCase {
    pub label: String,
    pub w1: PresRelation,
    pub r2: PresRelation,
}

/// Random pair drawn from the conv/add access-relation families: reader
/// output `OH, OW` in 1..=6, kernels in 1..=3, channels in 1..=3, stride 1
/// or 2. The writer is either the GCU row stream or an upstream
/// pixel-aligned operator.
pub fn random_access_case(rng: &mut impl Rng) -> AccessCase {
    let oh = rng.gen_range(1..=6usize);
    let ow = rng.gen_range(1..=6usize);
    let d = rng.gen_range(1..=3usize);
    let from_gcu = rng.gen_bool(0.3);
    let reader = iteration_space("J", TensorShape::new(1, oh, ow)).expect("small space");
    let (object, r2, label) = if rng.gen_bool(0.8) {
        let k = rng.gen_range(1..=3usize);
        let fh = rng.gen_range(1..=3usize);
        let fw = rng.gen_range(1..=3usize);
        let stride = rng.gen_range(1..=2usize);
        let same = rng.gen_bool(0.5);
        let extent = |o: usize, f: usize, rng: &mut dyn rand::RngCore| {
            if same {
                rng.gen_range((o - 1) * stride + 1..=o * stride)
            } else {
                (o - 1) * stride + f
            }
        };
        let ih = extent(oh, fh, rng);
        let iw = extent(ow, fw, rng);
        let p = ConvParams {
            in_channels: d,
            out_channels: k,
            kernel_h: fh,
            kernel_w: fw,
            stride,
            padding: if same { Padding::SameZero } else { Padding::Valid },
            weights: vec![1; k * d * fh * fw],
            bias: vec![0; k],
        };
        let shape = TensorShape::new(d, ih, iw);
        debug_assert_eq!(
            p.output_shape("g", shape).map(|s| (s.height, s.width)),
            Ok((oh, ow))
        );
        let r2 = conv_read_relation(&p, &reader, "O", shape).expect("valid conv");
        let label = format!(
            "conv D={d} K={k} {fh}x{fw} s={stride} {} over {ih}x{iw}",
            if same { "same" } else { "valid" }
        );
        (shape, r2, label)
    } else {
        let shape = TensorShape::new(d, oh, ow);
        let r2 = dpu_read_relation(&reader, "O", shape).expect("aligned");
        (shape, r2, format!("add D={d} over {oh}x{ow}"))
    };
    let w1 = if from_gcu {
        gcu_write_relation("O", object).expect("small object")
    } else {
        let writer = iteration_space("I", object).expect("small space");
        aligned_write_relation(&writer, "O", object).expect("aligned")
    };
    AccessCase {
        label: format!("{label}, writer {}", if from_gcu { "gcu" } else { "pixel" }),
        w1,
        r2,
    }
}
