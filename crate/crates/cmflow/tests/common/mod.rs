#![allow(dead_code)]

use std::path::PathBuf;

use cmflow::formats::{self, Dtype};
use cmflow::gen;
use cmflow_core::model::{NNGraph, Tensor};
use cmflow_core::placemap::HwDescription;
use cmflow_core::sim::{Bundle, RunOutput, SimState};
use cmflow_core::{compile, CompileOptions};
use rand::rngs::StdRng;
use rand::SeedableRng;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

pub fn model(name: &str) -> NNGraph {
    formats::load_model(&fixture(&format!("models/{name}.json"))).unwrap()
}

pub fn hw(name: &str) -> HwDescription {
    formats::load_hw(&fixture(&format!("hw/{name}.json"))).unwrap()
}

pub fn bundle(model_name: &str, hw_name: &str) -> Bundle {
    compile(&model(model_name), &hw(hw_name), &CompileOptions::default())
        .unwrap()
        .bundle
}

pub fn simulate(b: &Bundle, inputs: &[Tensor], trace: bool) -> RunOutput {
    let mut s = SimState::init(b.clone()).unwrap();
    if trace {
        s.enable_trace();
    }
    s.run(inputs, None).unwrap()
}

pub fn seeded_inputs(g: &NNGraph, seed: u64, n: usize) -> Vec<Tensor> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..n).map(|_| gen::random_input(g.input_shape(), &mut rng)).collect()
}

/// Models and the chips they are compiled for in the corpus.
pub const CORPUS: &[(&str, &str)] = &[
    ("single_conv", "mesh2x3"),
    ("chain3", "mesh2x3"),
    ("residual", "mesh2x3"),
    ("chain1d", "two_core"),
];

pub const GOLDEN_SEED: u64 = 2024;

/// Seeded fixture input for the golden runs.
pub fn golden_input(name: &str) -> Tensor {
    seeded_inputs(&model(name), GOLDEN_SEED, 1).remove(0)
}

pub fn write_i8(path: &std::path::Path, t: &Tensor) {
    formats::save_tensors(path, std::slice::from_ref(t), Dtype::I8).unwrap();
}
