//! Placement of partitions onto cores of the hardware topology.
//!
//! Depth-first backtracking over partitions in topological order, cores in
//! ascending id order, with forward checking of link and capacity
//! constraints. The first feasible mapping wins.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{NNGraph, NodeKind};
use crate::partition::PartitionPlan;
use crate::sim::SramObject;

/// Bytes per stored activation (`i32`).
pub const ELEMENT_BYTES: u32 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreSpec {
    pub id: u32,
    /// Crossbar rows = columns.
    pub width: u32,
    pub sram_bytes: u64,
}

/// Cores and a directed interconnect: a link `[a, b]` means core `a` can
/// send data to core `b`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HwDescription {
    pub cores: Vec<CoreSpec>,
    pub links: Vec<[u32; 2]>,
    /// Cores the global control unit can stream input into.
    pub gcu_in: Vec<u32>,
    /// Cores the global control unit can drain output from.
    pub gcu_out: Vec<u32>,
}

impl HwDescription {
    pub fn validate(&self) -> Result<(), MapError> {
        let mut ids = BTreeSet::new();
        for c in &self.cores {
            if !ids.insert(c.id) {
                return Err(MapError::InvalidHardware(format!("duplicate core id {}", c.id)));
            }
        }
        for [a, b] in &self.links {
            if !ids.contains(a) || !ids.contains(b) {
                return Err(MapError::InvalidHardware(format!("link {a}->{b} names an unknown core")));
            }
        }
        for c in self.gcu_in.iter().chain(&self.gcu_out) {
            if !ids.contains(c) {
                return Err(MapError::InvalidHardware(format!("gcu binding names unknown core {c}")));
            }
        }
        Ok(())
    }

    pub fn core(&self, id: u32) -> Option<&CoreSpec> {
        self.cores.iter().find(|c| c.id == id)
    }

    pub fn has_link(&self, from: u32, to: u32) -> bool {
        self.links.contains(&[from, to])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeLink {
    pub source: usize,
    pub dest: usize,
    pub link: [u32; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mapping {
    /// Core of each partition, indexed by partition id.
    pub cores: Vec<u32>,
    pub edge_links: Vec<EdgeLink>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintClass {
    Capacity,
    Connectivity,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MapError {
    #[error("invalid hardware description: {0}")]
    InvalidHardware(String),
    #[error("capacity infeasible for partition {partition}: {detail}")]
    Capacity { partition: usize, detail: String },
    #[error("connectivity infeasible for partition {partition}: {detail}")]
    Connectivity { partition: usize, detail: String },
}

impl MapError {
    pub fn class(&self) -> Option<ConstraintClass> {
        match self {
            MapError::Capacity { .. } => Some(ConstraintClass::Capacity),
            MapError::Connectivity { .. } => Some(ConstraintClass::Connectivity),
            MapError::InvalidHardware(_) => None,
        }
    }
}

/// What one partition asks of its core.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Requirements {
    pub rows: usize,
    pub cols: usize,
    pub sram: Vec<SramObject>,
    pub reads_input: bool,
    pub writes_output: bool,
}

impl Requirements {
    pub fn sram_bytes(&self) -> u64 {
        self.sram.iter().map(SramObject::bytes).sum()
    }
}

/// Objects resident in a partition's SRAM: every tensor it reads from
/// another partition or from the GCU (padded for its conv window when the
/// conv reads it), plus the graph output if produced here. Tensors are held
/// at full extent.
pub fn requirements(g: &NNGraph, plan: &PartitionPlan, partition: usize) -> Requirements {
    let part = &plan.partitions[partition];
    let mut rows = 0;
    let mut cols = 0;
    let mut conv_input: Option<(&str, crate::model::Pads)> = None;
    for m in &part.members {
        let node = g.node(m).expect("plan validated against graph");
        if let NodeKind::Conv2d(p) = &node.kind {
            rows = p.out_channels;
            cols = p.cols();
            conv_input = Some((&node.inputs[0], p.pads()));
        }
    }
    let produced: BTreeSet<&str> = part
        .members
        .iter()
        .map(|m| g.node(m).expect("validated").output.as_str())
        .collect();
    let mut external: BTreeSet<&str> = BTreeSet::new();
    for m in &part.members {
        for t in &g.node(m).expect("validated").inputs {
            if !produced.contains(t.as_str()) {
                external.insert(t);
            }
        }
    }
    let mut sram: Vec<SramObject> = external
        .iter()
        .map(|&t| {
            let pads = match conv_input {
                Some((ci, pads)) if ci == t => pads,
                _ => Default::default(),
            };
            SramObject {
                tensor: t.into(),
                shape: g.shape(t).expect("validated"),
                pads,
                element_bytes: ELEMENT_BYTES,
            }
        })
        .collect();
    let writes_output = produced.contains(g.output());
    if writes_output {
        sram.push(SramObject {
            tensor: g.output().into(),
            shape: g.output_shape(),
            pads: Default::default(),
            element_bytes: ELEMENT_BYTES,
        });
    }
    Requirements {
        rows,
        cols,
        sram,
        reads_input: external.contains(g.input()),
        writes_output,
    }
}

fn capacity_problem(req: &Requirements, core: &CoreSpec) -> Option<String> {
    let w = core.width as usize;
    if req.rows > w || req.cols > w {
        return Some(format!(
            "crossbar needs {}x{} (out_channels x in_channels*FH*FW) but core {} has width {}",
            req.rows, req.cols, core.id, core.width
        ));
    }
    if req.sram_bytes() > core.sram_bytes {
        return Some(format!(
            "needs {} SRAM bytes but core {} has {}",
            req.sram_bytes(),
            core.id,
            core.sram_bytes
        ));
    }
    None
}

struct Search<'a> {
    hw: &'a HwDescription,
    order: Vec<usize>,
    edges: Vec<(usize, usize)>,
    assign: Vec<Option<u32>>,
    deepest: (usize, usize),
}

impl Search<'_> {
    fn compatible(&self, p: usize, core: u32, q: usize, other: u32) -> bool {
        if core == other {
            return false;
        }
        self.edges.iter().all(|&(a, b)| {
            if a == p && b == q {
                self.hw.has_link(core, other)
            } else if a == q && b == p {
                self.hw.has_link(other, core)
            } else {
                true
            }
        })
    }

    fn run(&mut self, depth: usize, domains: &[Vec<u32>]) -> bool {
        if depth == self.order.len() {
            return true;
        }
        let p = self.order[depth];
        for &c in &domains[p] {
            let assigned_ok = (0..self.assign.len()).all(|q| match self.assign[q] {
                Some(other) if q != p => self.compatible(p, c, q, other),
                _ => true,
            });
            if !assigned_ok {
                continue;
            }
            let mut next = domains.to_vec();
            let mut wiped = false;
            for &q in &self.order[depth + 1..] {
                next[q].retain(|&d| self.compatible(p, c, q, d));
                if next[q].is_empty() {
                    wiped = true;
                    break;
                }
            }
            if wiped {
                continue;
            }
            self.assign[p] = Some(c);
            if self.run(depth + 1, &next) {
                return true;
            }
            self.assign[p] = None;
        }
        if depth >= self.deepest.0 {
            self.deepest = (depth, p);
        }
        false
    }
}

/// Find the first feasible embedding of `plan` into `hw`.
pub fn map(g: &NNGraph, plan: &PartitionPlan, hw: &HwDescription) -> Result<Mapping, MapError> {
    hw.validate()?;
    let n = plan.partitions.len();
    if n > hw.cores.len() {
        return Err(MapError::Capacity {
            partition: hw.cores.len(),
            detail: format!("{n} partitions but only {} cores", hw.cores.len()),
        });
    }
    let mut cores: Vec<&CoreSpec> = hw.cores.iter().collect();
    cores.sort_by_key(|c| c.id);
    let mut domains: Vec<Vec<u32>> = Vec::with_capacity(n);
    for p in 0..n {
        let req = requirements(g, plan, p);
        let fits: Vec<u32> = cores
            .iter()
            .filter(|c| capacity_problem(&req, c).is_none())
            .map(|c| c.id)
            .collect();
        if fits.is_empty() {
            let detail = cores
                .iter()
                .find_map(|c| capacity_problem(&req, c))
                .unwrap_or_else(|| "no cores".into());
            return Err(MapError::Capacity { partition: p, detail });
        }
        let reachable: Vec<u32> = fits
            .into_iter()
            .filter(|c| !req.reads_input || hw.gcu_in.contains(c))
            .filter(|c| !req.writes_output || hw.gcu_out.contains(c))
            .collect();
        if reachable.is_empty() {
            return Err(MapError::Connectivity {
                partition: p,
                detail: format!(
                    "no core with enough capacity is {}",
                    match (req.reads_input, req.writes_output) {
                        (true, true) => "both a GCU input and a GCU output core",
                        (true, false) => "a GCU input core",
                        _ => "a GCU output core",
                    }
                ),
            });
        }
        domains.push(reachable);
    }
    let order = plan.topo_order().map_err(|v| MapError::Connectivity {
        partition: 0,
        detail: format!("{v}"),
    })?;
    let mut search = Search {
        hw,
        order,
        edges: plan.edges.iter().map(|e| (e.source, e.dest)).collect(),
        assign: vec![None; n],
        deepest: (0, 0),
    };
    if !search.run(0, &domains) {
        let p = search.deepest.1;
        return Err(MapError::Connectivity {
            partition: p,
            detail: format!(
                "no placement of partition {p} has interconnect links to all of its neighbour partitions"
            ),
        });
    }
    let cores: Vec<u32> = search.assign.into_iter().map(|c| c.expect("complete")).collect();
    let edge_links = plan
        .edges
        .iter()
        .map(|e| EdgeLink {
            source: e.source,
            dest: e.dest,
            link: [cores[e.source], cores[e.dest]],
        })
        .collect();
    Ok(Mapping { cores, edge_links })
}

/// Independent verification of a mapping against every constraint.
pub fn check_mapping(
    g: &NNGraph,
    plan: &PartitionPlan,
    hw: &HwDescription,
    mapping: &Mapping,
) -> Result<(), MapError> {
    hw.validate()?;
    if mapping.cores.len() != plan.partitions.len() {
        return Err(MapError::Capacity {
            partition: mapping.cores.len().min(plan.partitions.len()),
            detail: "mapping does not cover every partition".into(),
        });
    }
    let mut seen = BTreeSet::new();
    for (p, &c) in mapping.cores.iter().enumerate() {
        let Some(core) = hw.core(c) else {
            return Err(MapError::Capacity {
                partition: p,
                detail: format!("core {c} does not exist"),
            });
        };
        if !seen.insert(c) {
            return Err(MapError::Capacity {
                partition: p,
                detail: format!("core {c} hosts more than one partition"),
            });
        }
        let req = requirements(g, plan, p);
        let width = core.width as usize;
        if req.rows > width || req.cols > width {
            return Err(MapError::Capacity {
                partition: p,
                detail: format!("{}x{} crossbar exceeds width {}", req.rows, req.cols, width),
            });
        }
        let bytes: u64 = req.sram.iter().map(|o| o.bytes()).sum();
        if bytes > core.sram_bytes {
            return Err(MapError::Capacity {
                partition: p,
                detail: format!("{bytes} SRAM bytes exceed {}", core.sram_bytes),
            });
        }
        if req.reads_input && !hw.gcu_in.contains(&c) {
            return Err(MapError::Connectivity {
                partition: p,
                detail: format!("core {c} is not fed by the GCU"),
            });
        }
        if req.writes_output && !hw.gcu_out.contains(&c) {
            return Err(MapError::Connectivity {
                partition: p,
                detail: format!("core {c} cannot be drained by the GCU"),
            });
        }
    }
    if mapping.edge_links.len() != plan.edges.len() {
        return Err(MapError::Connectivity {
            partition: 0,
            detail: "edge links do not match partition edges".into(),
        });
    }
    for (e, l) in plan.edges.iter().zip(&mapping.edge_links) {
        let expected = [mapping.cores[e.source], mapping.cores[e.dest]];
        if l.source != e.source || l.dest != e.dest || l.link != expected || !hw.has_link(expected[0], expected[1]) {
            return Err(MapError::Connectivity {
                partition: e.dest,
                detail: format!(
                    "edge {} -> {} needs link {} -> {}",
                    e.source, e.dest, expected[0], expected[1]
                ),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConvParams, Node, Padding, TensorShape};
    use crate::partition::partition;
    use alloc::collections::BTreeMap;
    use alloc::string::ToString;

    fn conv(d: usize, k: usize, f: usize) -> NodeKind {
        NodeKind::Conv2d(ConvParams {
            in_channels: d,
            out_channels: k,
            kernel_h: f,
            kernel_w: f,
            stride: 1,
            padding: Padding::SameZero,
            weights: vec![1; k * d * f * f],
            bias: vec![0; k],
        })
    }

    fn graph(nodes: &[(&str, NodeKind, &[&str], &str, usize)], input_ch: usize) -> NNGraph {
        let mut tensors = BTreeMap::new();
        tensors.insert("x".to_string(), TensorShape::new(input_ch, 4, 4));
        let nodes: Vec<Node> = nodes
            .iter()
            .map(|(id, k, ins, out, ch)| {
                tensors.insert(out.to_string(), TensorShape::new(*ch, 4, 4));
                Node {
                    id: id.to_string(),
                    kind: k.clone(),
                    inputs: ins.iter().map(|s| s.to_string()).collect(),
                    output: out.to_string(),
                }
            })
            .collect();
        let out = nodes.last().unwrap().output.clone();
        NNGraph::new(tensors, nodes, "x".into(), out).unwrap()
    }

    fn chain2() -> NNGraph {
        graph(&[("c1", conv(1, 1, 1), &["x"], "a", 1), ("c2", conv(1, 1, 3), &["a"], "y", 1)], 1)
    }

    fn residual() -> NNGraph {
        graph(
            &[
                ("conv1", conv(1, 2, 3), &["x"], "t1", 2),
                ("conv2", conv(2, 2, 3), &["t1"], "t2", 2),
                ("add", NodeKind::Add, &["t2", "t1"], "y", 2),
            ],
            1,
        )
    }

    fn cores(n: u32, width: u32) -> Vec<CoreSpec> {
        (0..n).map(|id| CoreSpec { id, width, sram_bytes: 4096 }).collect()
    }

    fn mesh() -> HwDescription {
        // 0 1 2
        // 3 4 5
        let mut links = Vec::new();
        for (a, b) in [(0, 1), (1, 2), (3, 4), (4, 5), (0, 3), (1, 4), (2, 5)] {
            links.push([a, b]);
            links.push([b, a]);
        }
        HwDescription {
            cores: cores(6, 64),
            links,
            gcu_in: vec![0, 3],
            gcu_out: (0..6).collect(),
        }
    }

    #[test]
    fn chain_onto_two_cores() {
        let g = chain2();
        let plan = partition(&g).unwrap();
        let hw = HwDescription {
            cores: cores(2, 64),
            links: vec![[0, 1]],
            gcu_in: vec![0],
            gcu_out: vec![1],
        };
        let m = map(&g, &plan, &hw).unwrap();
        assert_eq!(m.cores, vec![0, 1]);
        assert_eq!(m.edge_links[0].link, [0, 1]);
        check_mapping(&g, &plan, &hw, &m).unwrap();
    }

    #[test]
    fn residual_onto_mesh() {
        let g = residual();
        let plan = partition(&g).unwrap();
        let hw = mesh();
        let m = map(&g, &plan, &hw).unwrap();
        // by hand: p0 needs a GCU input core, lowest id is 0; p1 takes 0's lowest neighbour
        assert_eq!(m.cores, vec![0, 1]);
        assert!(hw.has_link(0, 1));
        check_mapping(&g, &plan, &hw, &m).unwrap();
        assert_eq!(map(&g, &plan, &hw).unwrap(), m);
    }

    #[test]
    fn width_violation_is_capacity() {
        let g = graph(&[("c", conv(4, 1, 5), &["x"], "y", 1)], 4);
        let plan = partition(&g).unwrap();
        let err = map(&g, &plan, &mesh()).unwrap_err();
        assert_eq!(err.class(), Some(ConstraintClass::Capacity));
        assert!(matches!(err, MapError::Capacity { partition: 0, .. }));
    }

    #[test]
    fn sram_violation_is_capacity() {
        let g = chain2();
        let plan = partition(&g).unwrap();
        let mut hw = mesh();
        for c in &mut hw.cores {
            c.sram_bytes = 10;
        }
        assert_eq!(map(&g, &plan, &hw).unwrap_err().class(), Some(ConstraintClass::Capacity));
    }

    #[test]
    fn disconnected_is_connectivity() {
        let g = chain2();
        let plan = partition(&g).unwrap();
        let hw = HwDescription {
            cores: cores(2, 64),
            links: vec![],
            gcu_in: vec![0, 1],
            gcu_out: vec![0, 1],
        };
        let err = map(&g, &plan, &hw).unwrap_err();
        assert_eq!(err.class(), Some(ConstraintClass::Connectivity), "{err}");
    }

    #[test]
    fn backtracks_past_dead_end() {
        // core 0 is fed by the GCU but has no outgoing link; core 2 is the way through
        let g = chain2();
        let plan = partition(&g).unwrap();
        let hw = HwDescription {
            cores: cores(3, 64),
            links: vec![[2, 1]],
            gcu_in: vec![0, 2],
            gcu_out: vec![1],
        };
        let m = map(&g, &plan, &hw).unwrap();
        assert_eq!(m.cores, vec![2, 1]);
        check_mapping(&g, &plan, &hw, &m).unwrap();
    }

    #[test]
    fn checker_rejects_tampered_mapping() {
        let g = chain2();
        let plan = partition(&g).unwrap();
        let hw = mesh();
        let mut m = map(&g, &plan, &hw).unwrap();
        m.cores[1] = 5;
        m.edge_links[0].link = [m.cores[0], 5];
        assert_eq!(
            check_mapping(&g, &plan, &hw, &m).unwrap_err().class(),
            Some(ConstraintClass::Connectivity)
        );
        let mut m = map(&g, &plan, &hw).unwrap();
        m.cores[1] = m.cores[0];
        assert!(check_mapping(&g, &plan, &hw, &m).is_err());
    }

    #[test]
    fn sram_accounting_includes_padding() {
        let g = residual();
        let plan = partition(&g).unwrap();
        let r1 = requirements(&g, &plan, 1);
        // t1 padded to 2x6x6 for the 3x3 conv, plus the 2x4x4 graph output
        assert_eq!(r1.sram_bytes(), (2 * 6 * 6 + 2 * 4 * 4) * 4);
        assert!(!r1.reads_input && r1.writes_output);
        let r0 = requirements(&g, &plan, 0);
        assert!(r0.reads_input && !r0.writes_output);
        assert_eq!((r0.rows, r0.cols), (2, 9));
    }

    #[test]
    fn invalid_hardware() {
        let mut hw = mesh();
        hw.links.push([0, 9]);
        assert!(matches!(hw.validate(), Err(MapError::InvalidHardware(_))));
    }
}
