//! End-to-end: random small models compile, simulate without RAW
//! violations, and match the sequential reference bit for bit.

use std::collections::BTreeMap;

use cmflow_core::model::{reference_eval, ConvParams, NNGraph, Node, NodeKind, Padding, Tensor, TensorShape};
use cmflow_core::placemap::{CoreSpec, HwDescription};
use cmflow_core::sim::SimState;
use cmflow_core::{compile, CompileOptions};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Layer {
    k: usize,
    fh: usize,
    fw: usize,
    stride: usize,
    same: bool,
    relu: bool,
    residual: bool,
}

fn layer() -> impl Strategy<Value = Layer> {
    (1..=3usize, 1..=3usize, 1..=3usize, 1..=2usize, any::<bool>(), any::<bool>(), any::<bool>())
        .prop_map(|(k, fh, fw, stride, same, relu, residual)| Layer { k, fh, fw, stride, same, relu, residual })
}

/// A chain of conv layers, each optionally followed by relu and by a
/// residual add with its own input when shapes allow.
fn build(input: TensorShape, layers: &[Layer], seed: u64) -> Option<NNGraph> {
    let mut state = seed | 1;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let mut tensors = BTreeMap::new();
    tensors.insert("x".to_string(), input);
    let mut nodes = Vec::new();
    let mut cur = "x".to_string();
    for (i, l) in layers.iter().enumerate() {
        let in_shape = tensors[&cur];
        let d = in_shape.channels;
        let p = ConvParams {
            in_channels: d,
            out_channels: l.k,
            kernel_h: l.fh,
            kernel_w: l.fw,
            stride: l.stride,
            padding: if l.same { Padding::SameZero } else { Padding::Valid },
            weights: (0..l.k * d * l.fh * l.fw).map(|_| next() as i8).collect(),
            bias: (0..l.k).map(|_| (next() % 64) as i32 - 32).collect(),
        };
        let shape = p.output_shape("c", in_shape).ok()?;
        let out = format!("c{i}");
        tensors.insert(out.clone(), shape);
        nodes.push(Node { id: format!("conv{i}"), kind: NodeKind::Conv2d(p), inputs: vec![cur.clone()], output: out.clone() });
        cur = out;
        if l.relu {
            let out = format!("r{i}");
            tensors.insert(out.clone(), shape);
            nodes.push(Node { id: format!("relu{i}"), kind: NodeKind::Relu, inputs: vec![cur.clone()], output: out.clone() });
            cur = out;
        }
        let prev = nodes
            .iter()
            .rev()
            .find(|n| matches!(n.kind, NodeKind::Conv2d(_)))
            .map(|n| n.inputs[0].clone())
            .unwrap();
        if l.residual && tensors[&prev] == shape && prev != "x" {
            let out = format!("a{i}");
            tensors.insert(out.clone(), shape);
            nodes.push(Node { id: format!("add{i}"), kind: NodeKind::Add, inputs: vec![cur.clone(), prev], output: out.clone() });
            cur = out;
        }
    }
    NNGraph::new(tensors, nodes, "x".into(), cur).ok()
}

fn line_hw(n: u32) -> HwDescription {
    HwDescription {
        cores: (0..n).map(|id| CoreSpec { id, width: 32, sram_bytes: 1 << 16 }).collect(),
        links: (1..n).map(|b| [b - 1, b]).collect(),
        gcu_in: vec![0],
        gcu_out: (0..n).collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn simulator_matches_reference(
        c in 1..=3usize, h in 1..=6usize, w in 1..=6usize,
        layers in prop::collection::vec(layer(), 1..=3),
        seed in any::<u64>(),
        data in prop::collection::vec(-128i32..128, 108),
    ) {
        let shape = TensorShape::new(c, h, w);
        let Some(g) = build(shape, &layers, seed) else { return Ok(()) };
        let compiled = compile(&g, &line_hw(layers.len() as u32), &CompileOptions::default()).unwrap();
        let input = Tensor::from_data(shape, data[..shape.len()].to_vec()).unwrap();
        let out = SimState::init(compiled.bundle).unwrap().run(std::slice::from_ref(&input), None).unwrap();
        prop_assert_eq!(&out.outputs[0], &reference_eval(&g, &input).unwrap());
    }
}
