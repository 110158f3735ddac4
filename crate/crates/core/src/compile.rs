//! Lowering from a model and a hardware description to a simulator bundle.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::accessrel::{
    aligned_write_relation, conv_read_relation, dpu_read_relation, gcu_write_relation, iteration_space,
    AccessError, AccessSpec, Direction,
};
use crate::depsm::{compute_s, oracle_s, synthesize_lcu, DepError, ObjectDeps};
use crate::model::{NNGraph, NodeKind};
use crate::partition::{partition, validate_plan, PartitionError, PartitionPlan, Violation};
use crate::placemap::{check_mapping, map, requirements, MapError};
use crate::relspec::{EnumCap, PresRelation, RelError, Space};
use crate::sim::{Bundle, CoreConfig, CrossbarConfig, DpuOp, GatherConfig, GcuConfig, Operand, BUNDLE_FORMAT};
use crate::placemap::HwDescription;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompileOptions {
    pub cap: EnumCap,
    /// Cross-check every S relation against the brute-force oracle.
    pub check_oracle: bool,
    pub rows_per_cycle: usize,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions {
            cap: EnumCap::default(),
            check_oracle: true,
            rows_per_cycle: 1,
        }
    }
}

/// Each variant is prefixed with the phase that failed.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error("partition: {0}")]
    Partition(#[from] PartitionError),
    #[error("partition: invalid plan: {0}")]
    Plan(Violation),
    #[error("placemap: {0}")]
    Map(#[from] MapError),
    #[error("accessrel: partition {partition}: {source}")]
    Access { partition: usize, source: AccessError },
    #[error("depsm: partition {partition}, object `{object}`: {source}")]
    Dependency {
        partition: usize,
        object: String,
        source: DepError,
    },
    #[error("depsm: partition {partition}, object `{object}`: S disagrees with the brute-force oracle")]
    OracleMismatch { partition: usize, object: String },
    #[error("relspec: {0}")]
    Relation(#[from] RelError),
}

impl CompileError {
    /// Mapping failures are the "does not fit this chip" class.
    pub fn is_infeasible(&self) -> bool {
        matches!(self, CompileError::Map(_) | CompileError::Partition(_))
    }
}

/// Everything lowering produced, kept for inspection.
#[derive(Debug, Clone)]
pub struct Compiled {
    pub bundle: Bundle,
    pub deps: BTreeMap<usize, Vec<ObjectDeps>>,
}

fn space_name(partition: usize) -> String {
    format!("P{partition}")
}

pub fn compile(g: &NNGraph, hw: &HwDescription, opts: &CompileOptions) -> Result<Compiled, CompileError> {
    let plan = partition(g)?;
    validate_plan(g, &plan).map_err(CompileError::Plan)?;
    let mapping = map(g, &plan, hw)?;
    check_mapping(g, &plan, hw, &mapping)?;

    let spaces = iteration_spaces(g, &plan)?;
    let producer_partition = |t: &str| -> Option<usize> {
        g.producer(t)
            .and_then(|n| plan.partition_of(&g.nodes()[n].id))
    };

    let mut cores = Vec::with_capacity(plan.partitions.len());
    let mut all_deps = BTreeMap::new();
    for part in &plan.partitions {
        let p = part.id;
        let iter = &spaces[p];
        let acc_err = |source| CompileError::Access { partition: p, source };
        let members: Vec<_> = part.members.iter().map(|m| g.node(m).expect("validated")).collect();
        let produced: Vec<&str> = members.iter().map(|n| n.output.as_str()).collect();

        // reads per external object, conv window unioned with DPU operands
        let mut reads: BTreeMap<String, PresRelation> = BTreeMap::new();
        let mut add_read = |t: &str, r: PresRelation| -> Result<(), CompileError> {
            let merged = match reads.remove(t) {
                Some(prev) => prev.union(&r, &opts.cap)?,
                None => r,
            };
            reads.insert(t.into(), merged);
            Ok(())
        };
        let mut gather = None;
        let mut crossbar = None;
        let mut program = Vec::new();
        for node in &members {
            match &node.kind {
                NodeKind::Conv2d(cp) => {
                    let input = &node.inputs[0];
                    let shape = g.shape(input).expect("validated");
                    let rel = conv_read_relation(cp, iter, input, shape).map_err(acc_err)?;
                    add_read(input, rel.clone())?;
                    gather = Some(GatherConfig {
                        object: input.clone(),
                        relation: rel,
                        channels: cp.in_channels,
                        kernel_h: cp.kernel_h,
                        kernel_w: cp.kernel_w,
                        stride: cp.stride,
                    });
                    crossbar = Some(CrossbarConfig {
                        rows: cp.out_channels,
                        cols: cp.cols(),
                        weights: cp.weights.clone(),
                        output: node.output.clone(),
                    });
                    program.push(DpuOp::BiasAdd {
                        register: node.output.clone(),
                        bias: cp.bias.clone(),
                    });
                }
                NodeKind::Add | NodeKind::Relu => {
                    let mut ops = Vec::new();
                    for t in &node.inputs {
                        if produced.contains(&t.as_str()) {
                            ops.push(Operand::Register(t.clone()));
                        } else {
                            let shape = g.shape(t).expect("validated");
                            add_read(t, dpu_read_relation(iter, t, shape).map_err(acc_err)?)?;
                            ops.push(Operand::Object(t.clone()));
                        }
                    }
                    let out = node.output.clone();
                    program.push(match node.kind {
                        NodeKind::Add => {
                            let rhs = ops.pop().expect("validated arity");
                            let lhs = ops.pop().expect("validated arity");
                            DpuOp::ResidualAdd { out, lhs, rhs }
                        }
                        _ => DpuOp::Relu {
                            out,
                            input: ops.pop().expect("validated arity"),
                        },
                    });
                }
            }
            // route the freshly computed tensor
            let t = &node.output;
            aligned_write_relation(iter, t, g.shape(t).expect("validated")).map_err(acc_err)?;
            for e in plan.edges.iter().filter(|e| e.source == p) {
                if e.objects.iter().any(|o| &o.tensor == t) {
                    program.push(DpuOp::Send {
                        dest_core: mapping.cores[e.dest],
                        tensor: t.clone(),
                    });
                }
            }
            if t == g.output() {
                program.push(DpuOp::WriteLocal { tensor: t.clone() });
            }
        }
        let (Some(gather), Some(crossbar)) = (gather, crossbar) else {
            return Err(CompileError::Plan(Violation::CrossbarMismatch {
                partition: p,
                declared: part.crossbar.clone(),
                actual: None,
            }));
        };

        let mut deps = Vec::new();
        let mut accesses = Vec::new();
        for (t, r2) in reads {
            let shape = g.shape(&t).expect("validated");
            let w1 = if t == g.input() {
                gcu_write_relation(&t, shape).map_err(acc_err)?
            } else {
                let q = producer_partition(&t).expect("non-input tensors have a producer");
                aligned_write_relation(&spaces[q], &t, shape).map_err(acc_err)?
            };
            let dep_err = |source| CompileError::Dependency {
                partition: p,
                object: t.clone(),
                source,
            };
            let chain = compute_s(&w1, &r2, &opts.cap).map_err(dep_err)?;
            if opts.check_oracle {
                let oracle = oracle_s(&w1, &r2, &opts.cap).map_err(dep_err)?;
                if !oracle.same_pairs(&chain.s, &opts.cap)? {
                    return Err(CompileError::OracleMismatch { partition: p, object: t });
                }
            }
            accesses.push(AccessSpec {
                object: t.clone(),
                direction: Direction::Read,
                relation: r2,
            });
            accesses.push(AccessSpec {
                object: t.clone(),
                direction: Direction::Write,
                relation: w1.clone(),
            });
            deps.push(ObjectDeps {
                object: t,
                write: w1,
                chain,
            });
        }
        let lcu = synthesize_lcu(iter, &deps, &opts.cap).map_err(|source| CompileError::Dependency {
            partition: p,
            object: String::from("*"),
            source,
        })?;
        cores.push(CoreConfig {
            core: mapping.cores[p],
            partition: p,
            iteration_space: iter.clone(),
            crossbar,
            gather,
            program,
            lcu,
            sram: requirements(g, &plan, p).sram,
            accesses,
        });
        all_deps.insert(p, deps);
    }

    let input_cores = (0..plan.partitions.len())
        .filter(|&p| requirements(g, &plan, p).reads_input)
        .map(|p| mapping.cores[p])
        .collect();
    let out_partition = producer_partition(g.output()).expect("graph output has a producer");
    let gcu = GcuConfig {
        input: g.input().into(),
        input_shape: g.input_shape(),
        input_cores,
        output: g.output().into(),
        output_shape: g.output_shape(),
        output_core: mapping.cores[out_partition],
        rows_per_cycle: opts.rows_per_cycle,
    };
    Ok(Compiled {
        bundle: Bundle {
            format: BUNDLE_FORMAT.into(),
            hw: hw.clone(),
            plan,
            mapping,
            gcu,
            cores,
        },
        deps: all_deps,
    })
}

/// One `[oh, ow]` space per partition over its crossbar operator's output.
fn iteration_spaces(g: &NNGraph, plan: &PartitionPlan) -> Result<Vec<Space>, CompileError> {
    plan.partitions
        .iter()
        .map(|part| {
            let conv = part
                .crossbar
                .as_deref()
                .and_then(|c| g.node(c))
                .ok_or(CompileError::Plan(Violation::CrossbarMismatch {
                    partition: part.id,
                    declared: part.crossbar.clone(),
                    actual: None,
                }))?;
            Ok(iteration_space(&space_name(part.id), g.shape(&conv.output).expect("validated"))?)
        })
        .collect()
}
