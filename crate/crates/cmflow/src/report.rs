//! Human-readable views of a bundle for `cmflow inspect`.

use std::fmt::Write as _;

use cmflow_core::accessrel::Direction;
use cmflow_core::depsm::LCU_RULE;
use cmflow_core::sim::{Bundle, DpuOp, Operand};

pub fn partitions(b: &Bundle) -> String {
    let mut s = String::new();
    for p in &b.plan.partitions {
        let _ = writeln!(
            s,
            "partition {}: {} [crossbar {}]",
            p.id,
            p.members.join(", "),
            p.crossbar.as_deref().unwrap_or("-")
        );
    }
    for e in &b.plan.edges {
        for o in &e.objects {
            let _ = writeln!(
                s,
                "edge {} -> {}: {} (read by {})",
                e.source,
                e.dest,
                o.tensor,
                o.readers.join(", ")
            );
        }
    }
    s
}

pub fn mapping(b: &Bundle) -> String {
    let mut s = String::new();
    for (p, c) in b.mapping.cores.iter().enumerate() {
        let _ = writeln!(s, "partition {p} -> core {c}");
    }
    for l in &b.mapping.edge_links {
        let _ = writeln!(
            s,
            "edge {} -> {} via link {} -> {}",
            l.source, l.dest, l.link[0], l.link[1]
        );
    }
    let _ = writeln!(
        s,
        "gcu: {} -> core(s) {:?}; {} <- core {}",
        b.gcu.input, b.gcu.input_cores, b.gcu.output, b.gcu.output_core
    );
    s
}

fn operand(o: &Operand) -> String {
    match o {
        Operand::Register(r) => format!("%{r}"),
        Operand::Object(t) => format!("{t}[:,oh,ow]"),
    }
}

pub fn relations(b: &Bundle) -> String {
    let mut s = String::new();
    for c in &b.cores {
        let _ = writeln!(s, "# partition {} on core {}", c.partition, c.core);
        let _ = writeln!(s, "iteration space: {}", c.iteration_space);
        let _ = writeln!(s, "gather {}: {}", c.gather.object, c.gather.relation);
        for a in &c.accesses {
            let dir = match a.direction {
                Direction::Read => "read",
                Direction::Write => "write",
            };
            let _ = writeln!(s, "{dir} {}: {}", a.object, a.relation);
        }
        let _ = writeln!(s, "program:");
        let _ = writeln!(
            s,
            "  %{} = mxv {}x{} (gather {})",
            c.crossbar.output, c.crossbar.rows, c.crossbar.cols, c.gather.object
        );
        for op in &c.program {
            let line = match op {
                DpuOp::BiasAdd { register, bias } => format!("%{register} += bias {bias:?}"),
                DpuOp::ResidualAdd { out, lhs, rhs } => {
                    format!("%{out} = {} + {}", operand(lhs), operand(rhs))
                }
                DpuOp::Relu { out, input } => format!("%{out} = relu {}", operand(input)),
                DpuOp::WriteLocal { tensor } => format!("store %{tensor} -> {tensor}[:,oh,ow]"),
                DpuOp::Send { dest_core, tensor } => format!("send %{tensor} -> core {dest_core}"),
            };
            let _ = writeln!(s, "  {line}");
        }
        s.push('\n');
    }
    s
}

pub fn state_machine(b: &Bundle, partition: usize) -> Result<String, String> {
    let Some(c) = b.core_for_partition(partition) else {
        let ids: Vec<String> = b.cores.iter().map(|c| c.partition.to_string()).collect();
        return Err(format!(
            "unknown partition {partition}; valid partitions: {}",
            ids.join(", ")
        ));
    };
    let t = &c.lcu;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "state machine for partition {partition} (core {}): {} iterations over {}",
        c.core, t.iterations, t.iteration_space
    );
    let _ = writeln!(s, "rule: {LCU_RULE}");
    for o in &t.objects {
        let _ = writeln!(s, "\nobject {}: initial frontier {}", o.object, o.initial);
        let _ = writeln!(s, "S = {}", o.s);
        let _ = writeln!(s, "{:<16} {:<16} frontier", "location", "max iteration");
        for e in &o.entries {
            let _ = writeln!(
                s,
                "{:<16} {:<16} {}",
                e.location.to_string(),
                e.max_iteration.to_string(),
                e.frontier
            );
        }
    }
    Ok(s)
}
