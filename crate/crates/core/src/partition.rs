//! Split a dataflow graph into per-core partitions.
//!
//! Invariants: every partition holds at most one crossbar operator, and the
//! partition graph is acyclic. Edges between the same pair of partitions are
//! merged into one [`PartitionEdge`].

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::NNGraph;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub id: usize,
    /// Member node ids in topological order.
    pub members: Vec<String>,
    pub crossbar: Option<String>,
}

/// A tensor produced in one partition and read in another.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedObject {
    pub tensor: String,
    /// Nodes of the destination partition that read the tensor.
    pub readers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionEdge {
    pub source: usize,
    pub dest: usize,
    pub objects: Vec<SharedObject>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub partitions: Vec<Partition>,
    pub edges: Vec<PartitionEdge>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("node `{0}` is not assigned to any partition")]
    Unassigned(String),
    #[error("node `{0}` is assigned to more than one partition")]
    Duplicate(String),
    #[error("partition {partition} lists unknown node `{node}`")]
    UnknownNode { partition: usize, node: String },
    #[error("partition {partition} holds more than one crossbar operator: {nodes:?}")]
    MultipleCrossbars { partition: usize, nodes: Vec<String> },
    #[error("partition {partition} declares crossbar {declared:?} but holds {actual:?}")]
    CrossbarMismatch {
        partition: usize,
        declared: Option<String>,
        actual: Option<String>,
    },
    #[error("partition graph has a cycle through partitions {0:?}")]
    Cycle(Vec<usize>),
    #[error("partition edges do not match the dataflow graph: {0}")]
    Edges(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PartitionError {
    #[error("unsupported model: no crossbar operator to place on a core")]
    NoCrossbar,
    #[error("unsupported model: node `{0}` has no crossbar operator upstream")]
    NoCrossbarAncestor(String),
    #[error("internal partitioning error: {0}")]
    Internal(#[from] Violation),
}

impl PartitionPlan {
    pub fn partition_of(&self, node: &str) -> Option<usize> {
        self.partitions
            .iter()
            .find(|p| p.members.iter().any(|m| m == node))
            .map(|p| p.id)
    }

    pub fn edge(&self, source: usize, dest: usize) -> Option<&PartitionEdge> {
        self.edges.iter().find(|e| e.source == source && e.dest == dest)
    }

    /// Partition ids in a topological order of the partition graph.
    pub fn topo_order(&self) -> Result<Vec<usize>, Violation> {
        topo_sort(self.partitions.len(), self.edges.iter().map(|e| (e.source, e.dest)))
    }
}

fn topo_sort(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> Result<Vec<usize>, Violation> {
    let mut succ: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    let mut indeg = vec![0usize; n];
    for (a, b) in edges {
        if succ[a].insert(b) {
            indeg[b] += 1;
        }
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &s in &succ[i] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.insert(s);
            }
        }
    }
    if order.len() == n {
        Ok(order)
    } else {
        Err(Violation::Cycle((0..n).filter(|i| !order.contains(i)).collect()))
    }
}

/// Merged cross-partition edges implied by a node-to-partition assignment.
fn derive_edges(g: &NNGraph, assign: &[Option<usize>]) -> Vec<PartitionEdge> {
    let nodes = g.nodes();
    let mut merged: BTreeMap<(usize, usize), BTreeMap<&str, Vec<String>>> = BTreeMap::new();
    for (i, n) in nodes.iter().enumerate() {
        let Some(dest) = assign[i] else { continue };
        for t in &n.inputs {
            let Some(p) = g.producer(t) else { continue };
            let Some(source) = assign[p] else { continue };
            if source != dest {
                let readers = merged.entry((source, dest)).or_default().entry(t).or_default();
                if !readers.contains(&n.id) {
                    readers.push(n.id.clone());
                }
            }
        }
    }
    merged
        .into_iter()
        .map(|((source, dest), objs)| PartitionEdge {
            source,
            dest,
            objects: objs
                .into_iter()
                .map(|(t, readers)| SharedObject {
                    tensor: t.into(),
                    readers,
                })
                .collect(),
        })
        .collect()
}

fn assemble(g: &NNGraph, assign: &[Option<usize>], count: usize) -> PartitionPlan {
    let mut partitions: Vec<Partition> = (0..count)
        .map(|id| Partition {
            id,
            members: Vec::new(),
            crossbar: None,
        })
        .collect();
    for (i, n) in g.nodes().iter().enumerate() {
        if let Some(p) = assign[i] {
            partitions[p].members.push(n.id.clone());
            if n.kind.is_crossbar() {
                partitions[p].crossbar = Some(n.id.clone());
            }
        }
    }
    PartitionPlan {
        partitions,
        edges: derive_edges(g, assign),
    }
}

/// Walk nodes in topological order, opening a new partition at every
/// crossbar operator. Any other node joins the latest partition among its
/// producers' partitions that keeps the partition graph acyclic.
pub fn partition(g: &NNGraph) -> Result<PartitionPlan, PartitionError> {
    let nodes = g.nodes();
    if !nodes.iter().any(|n| n.kind.is_crossbar()) {
        return Err(PartitionError::NoCrossbar);
    }
    let mut assign: Vec<Option<usize>> = vec![None; nodes.len()];
    let mut count = 0usize;
    for (i, n) in nodes.iter().enumerate() {
        if n.kind.is_crossbar() {
            assign[i] = Some(count);
            count += 1;
            continue;
        }
        let candidates: BTreeSet<usize> = n
            .inputs
            .iter()
            .filter_map(|t| g.producer(t))
            .filter_map(|p| assign[p])
            .collect();
        if candidates.is_empty() {
            return Err(PartitionError::NoCrossbarAncestor(n.id.clone()));
        }
        let mut placed = false;
        for &c in candidates.iter().rev() {
            assign[i] = Some(c);
            let edges = derive_edges(g, &assign);
            if topo_sort(count, edges.iter().map(|e| (e.source, e.dest))).is_ok() {
                placed = true;
                break;
            }
        }
        if !placed {
            let edges = derive_edges(g, &assign);
            let err = topo_sort(count, edges.iter().map(|e| (e.source, e.dest))).unwrap_err();
            return Err(PartitionError::Internal(err));
        }
    }
    let plan = assemble(g, &assign, count);
    validate_plan(g, &plan)?;
    Ok(plan)
}

/// Check both partitioning invariants and the merged-edge list; reports the
/// first violation found.
pub fn validate_plan(g: &NNGraph, plan: &PartitionPlan) -> Result<(), Violation> {
    let nodes = g.nodes();
    let mut assign: Vec<Option<usize>> = vec![None; nodes.len()];
    for (pi, p) in plan.partitions.iter().enumerate() {
        for m in &p.members {
            let Some(i) = nodes.iter().position(|n| &n.id == m) else {
                return Err(Violation::UnknownNode {
                    partition: p.id,
                    node: m.clone(),
                });
            };
            if assign[i].is_some() {
                return Err(Violation::Duplicate(m.clone()));
            }
            assign[i] = Some(pi);
        }
    }
    if let Some(i) = assign.iter().position(Option::is_none) {
        return Err(Violation::Unassigned(nodes[i].id.clone()));
    }
    for (pi, p) in plan.partitions.iter().enumerate() {
        let crossbars: Vec<String> = p
            .members
            .iter()
            .filter(|m| g.node(m).is_some_and(|n| n.kind.is_crossbar()))
            .cloned()
            .collect();
        if crossbars.len() > 1 {
            return Err(Violation::MultipleCrossbars {
                partition: pi,
                nodes: crossbars,
            });
        }
        if crossbars.first() != p.crossbar.as_ref() {
            return Err(Violation::CrossbarMismatch {
                partition: pi,
                declared: p.crossbar.clone(),
                actual: crossbars.first().cloned(),
            });
        }
    }
    let expected = derive_edges(g, &assign);
    topo_sort(
        plan.partitions.len(),
        expected.iter().map(|e| (e.source, e.dest)),
    )?;
    if expected != plan.edges {
        let detail = match expected.iter().find(|e| !plan.edges.contains(e)) {
            Some(e) => alloc::format!("missing or altered edge {} -> {}", e.source, e.dest),
            None => "unexpected extra edge".into(),
        };
        return Err(Violation::Edges(detail));
    }
    Ok(())
}
