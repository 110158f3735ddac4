//! Deterministic cycle-level functional simulator for compiled bundles.
//!
//! Each cycle runs three phases:
//!
//! 1. messages sent in the previous cycle are delivered into the destination
//!    SRAM, their write bits are set, and the destination LCU raises its
//!    per-object frontier by looking up the lexicographically greatest
//!    location of the burst;
//! 2. every core whose frontier exceeds its executed count runs exactly one
//!    iteration: gather, crossbar MxV, DPU program. Local writes land
//!    immediately, remote sends are queued for the next cycle;
//! 3. the GCU injects the next input row(s) and drains finished output
//!    locations.
//!
//! The write bitmaps are a checker only: execution is driven by the LCU
//! tables, and any gathered location whose bit is unset is reported as a
//! read-after-write violation.
//!
//! Frames run back to back; SRAM contents, bitmaps and frontiers are reset
//! between frames.
//!
//! # Trace format
//!
//! One line per event, fields separated by single spaces:
//!
//! ```text
//! <cycle> <unit> <event> <detail...>
//! ```
//!
//! `unit` is `gcu` or `core<id>`. Events, in emission order within a cycle:
//!
//! | event     | detail                                                        |
//! |-----------|---------------------------------------------------------------|
//! | `frame`   | `<index> start` or `<index> done`                             |
//! | `deliver` | `<object> from=<unit> n=<locations> last=<loc> frontier=<n>`  |
//! | `exec`    | `<iteration> n=<executed so far>`                             |
//! | `stall`   | `executed=<n> frontier=<n>`                                   |
//! | `send`    | `<object> to=core<id> last=<loc>`                             |
//! | `inject`  | `<object> row=<r> to=core<id>`                                |
//! | `drain`   | `<object> n=<locations> total=<drained>`                      |

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accessrel::AccessSpec;
use crate::depsm::LcuTable;
use crate::model::{Pads, Tensor, TensorShape};
use crate::partition::PartitionPlan;
use crate::placemap::{HwDescription, Mapping};
use crate::relspec::{EnumCap, IntTuple, PresRelation, Space};

pub const BUNDLE_FORMAT: &str = "cmflow-bundle/1";
pub const TRACE_HEADER: &str = "# cmflow-trace/1 <cycle> <unit> <event> <detail>";

/// One tensor held in a core's local memory, stored with its zero border.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SramObject {
    pub tensor: String,
    pub shape: TensorShape,
    /// Constant zero border; readable without any write.
    pub pads: Pads,
    pub element_bytes: u32,
}

impl SramObject {
    pub fn padded_shape(&self) -> TensorShape {
        TensorShape::new(
            self.shape.channels,
            self.shape.height + self.pads.top + self.pads.bottom,
            self.shape.width + self.pads.left + self.pads.right,
        )
    }

    pub fn bytes(&self) -> u64 {
        self.padded_shape().len() as u64 * self.element_bytes as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossbarConfig {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols`.
    pub weights: Vec<i8>,
    /// Register receiving the MxV result.
    pub output: String,
}

/// How the input vector is assembled: window geometry over the padded SRAM
/// object, plus the read relation it must agree with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatherConfig {
    pub object: String,
    pub relation: PresRelation,
    pub channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operand {
    /// A value computed earlier in this iteration.
    Register(String),
    /// A tensor in local SRAM, read at the current pixel.
    Object(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum DpuOp {
    BiasAdd { register: String, bias: Vec<i32> },
    ResidualAdd { out: String, lhs: Operand, rhs: Operand },
    Relu { out: String, input: Operand },
    WriteLocal { tensor: String },
    Send { dest_core: u32, tensor: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreConfig {
    pub core: u32,
    pub partition: usize,
    pub iteration_space: Space,
    pub crossbar: CrossbarConfig,
    pub gather: GatherConfig,
    pub program: Vec<DpuOp>,
    pub lcu: LcuTable,
    pub sram: Vec<SramObject>,
    /// Access relations the tables were derived from (for inspection).
    pub accesses: Vec<AccessSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GcuConfig {
    pub input: String,
    pub input_shape: TensorShape,
    pub input_cores: Vec<u32>,
    pub output: String,
    pub output_shape: TensorShape,
    pub output_core: u32,
    pub rows_per_cycle: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bundle {
    pub format: String,
    pub hw: HwDescription,
    pub plan: PartitionPlan,
    pub mapping: Mapping,
    pub gcu: GcuConfig,
    pub cores: Vec<CoreConfig>,
}

impl Bundle {
    pub fn core_for_partition(&self, partition: usize) -> Option<&CoreConfig> {
        self.cores.iter().find(|c| c.partition == partition)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid bundle: {0}")]
    InvalidBundle(String),
    #[error("duplicate core id {0} in bundle")]
    DuplicateCore(u32),
    #[error("core {core}: capacity exceeded: {detail}")]
    Capacity { core: u32, detail: String },
    #[error("RAW violation at cycle {cycle}: core {core} read {object}{location} before it was written")]
    Raw {
        cycle: u64,
        core: u32,
        object: String,
        location: IntTuple,
    },
    #[error("cycle {cycle}: core {core} references undeclared object `{object}`")]
    UndeclaredObject { cycle: u64, core: u32, object: String },
    #[error("cycle {cycle}: core {core} received a second write to {object}{location}")]
    DoubleWrite {
        cycle: u64,
        core: u32,
        object: String,
        location: IntTuple,
    },
    #[error("cycle {cycle}: core {core} reads unknown register `{register}`")]
    UnknownRegister { cycle: u64, core: u32, register: String },
    #[error("input frame {frame} has shape {actual}, expected {expected}")]
    InputShape {
        frame: usize,
        expected: TensorShape,
        actual: TensorShape,
    },
    #[error("deadlock: cycle limit {limit} reached\n{diagnostic}")]
    Deadlock { limit: u64, diagnostic: String },
}

/// Where a message came from; the GCU is not a core.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Gcu,
    Core(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub source: Source,
    pub dest_core: u32,
    pub object: String,
    pub values: Vec<(IntTuple, i32)>,
    pub send_cycle: u64,
}

impl Message {
    fn last(&self) -> IntTuple {
        self.values
            .iter()
            .map(|(l, _)| l)
            .max()
                        .cloned()
            .unwrap_or(IntTuple(Vec::new()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CoreStats {
    pub core: u32,
    pub executed: u64,
    pub first_active: Option<u64>,
    pub last_active: Option<u64>,
    pub stall_cycles: u64,
    pub sram_reads: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SimStats {
    pub total_cycles: u64,
    pub frames: u64,
    pub messages: u64,
    pub cores: Vec<CoreStats>,
}

impl SimStats {
    pub fn core(&self, id: u32) -> Option<&CoreStats> {
        self.cores.iter().find(|c| c.core == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutput {
    pub outputs: Vec<Tensor>,
    pub stats: SimStats,
    pub trace: Option<String>,
}

#[derive(Debug, Clone)]
struct SramData {
    decl: SramObject,
    padded: TensorShape,
    values: Vec<i32>,
    written: Vec<bool>,
}

impl SramData {
    fn new(decl: SramObject) -> Self {
        let padded = decl.padded_shape();
        let real = decl.shape.len();
        SramData {
            values: vec![0; padded.len()],
            written: vec![false; real],
            padded,
            decl,
        }
    }

    fn reset(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0);
        self.written.iter_mut().for_each(|b| *b = false);
    }

    fn padded_index(&self, c: usize, h: usize, w: usize) -> usize {
        self.padded
            .index(c, h + self.decl.pads.top, w + self.decl.pads.left)
    }

    fn real_index(&self, loc: &IntTuple) -> Option<(usize, usize, usize)> {
        let s = self.decl.shape;
        match loc.0.as_slice() {
            &[c, h, w]
                if (0..s.channels as i64).contains(&c)
                    && (0..s.height as i64).contains(&h)
                    && (0..s.width as i64).contains(&w) =>
            {
                Some((c as usize, h as usize, w as usize))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
struct ObjectLcu {
    object: String,
    initial: u64,
    lookup: BTreeMap<IntTuple, u64>,
    current: u64,
}

#[derive(Debug, Clone)]
struct CoreState {
    id: u32,
    config: usize,
    iterations: u64,
    executed: u64,
    lcu: Vec<ObjectLcu>,
    sram: BTreeMap<String, SramData>,
}

impl CoreState {
    fn frontier(&self) -> u64 {
        self.lcu
            .iter()
            .map(|o| o.current)
            .min()
            .unwrap_or(self.iterations)
            .min(self.iterations)
    }
}

#[derive(Debug, Clone)]
struct Frame {
    index: usize,
    input: Tensor,
    next_row: usize,
    output: Tensor,
    drain_queue: Vec<(usize, usize, usize)>,
    drained: usize,
}

/// Complete simulator state. Owns its bundle; may be moved between threads.
#[derive(Debug, Clone)]
pub struct SimState {
    bundle: Bundle,
    cores: Vec<CoreState>,
    by_id: BTreeMap<u32, usize>,
    in_flight: Vec<Message>,
    cycle: u64,
    frame: Option<Frame>,
    frames_done: u64,
    stats: SimStats,
    trace: Option<String>,
}

fn geometric_window(g: &GatherConfig, obj: &SramObject, oh: usize, ow: usize) -> Vec<IntTuple> {
    let mut out = Vec::new();
    for d in 0..g.channels {
        for dh in 0..g.kernel_h {
            for dw in 0..g.kernel_w {
                let ph = oh * g.stride + dh;
                let pw = ow * g.stride + dw;
                if let (Some(h), Some(w)) = (ph.checked_sub(obj.pads.top), pw.checked_sub(obj.pads.left)) {
                    if h < obj.shape.height && w < obj.shape.width {
                        out.push(IntTuple(vec![d as i64, h as i64, w as i64]));
                    }
                }
            }
        }
    }
    out.sort();
    out
}

impl SimState {
    /// Program the cores and allocate SRAM. The bundle's hardware
    /// description is the one checked against.
    pub fn init(bundle: Bundle) -> Result<Self, SimError> {
        if bundle.format != BUNDLE_FORMAT {
            return Err(SimError::InvalidBundle(format!(
                "format tag `{}`, expected `{BUNDLE_FORMAT}`",
                bundle.format
            )));
        }
        bundle
            .hw
            .validate()
            .map_err(|e| SimError::InvalidBundle(format!("{e}")))?;
        let mut by_id = BTreeMap::new();
        let mut cores = Vec::with_capacity(bundle.cores.len());
        for (i, cfg) in bundle.cores.iter().enumerate() {
            if by_id.insert(cfg.core, i).is_some() {
                return Err(SimError::DuplicateCore(cfg.core));
            }
            let spec = bundle.hw.core(cfg.core).ok_or_else(|| {
                SimError::InvalidBundle(format!("core {} is not in the hardware description", cfg.core))
            })?;
            let xb = &cfg.crossbar;
            if xb.rows > spec.width as usize || xb.cols > spec.width as usize {
                return Err(SimError::Capacity {
                    core: cfg.core,
                    detail: format!("{}x{} weights on a width-{} crossbar", xb.rows, xb.cols, spec.width),
                });
            }
            if xb.weights.len() != xb.rows * xb.cols || xb.cols != cfg.gather.channels * cfg.gather.kernel_h * cfg.gather.kernel_w {
                return Err(SimError::InvalidBundle(format!(
                    "core {}: crossbar and gather geometry disagree",
                    cfg.core
                )));
            }
            let bytes: u64 = cfg.sram.iter().map(SramObject::bytes).sum();
            if bytes > spec.sram_bytes {
                return Err(SimError::Capacity {
                    core: cfg.core,
                    detail: format!("SRAM directory needs {bytes} bytes, core has {}", spec.sram_bytes),
                });
            }
            for op in &cfg.program {
                if let DpuOp::Send { dest_core, .. } = op {
                    if !bundle.hw.has_link(cfg.core, *dest_core) {
                        return Err(SimError::InvalidBundle(format!(
                            "core {} sends to core {dest_core} without a link",
                            cfg.core
                        )));
                    }
                }
            }
            check_gather(cfg)?;
            let lcu = cfg
                .lcu
                .objects
                .iter()
                .map(|t| ObjectLcu {
                    object: t.object.clone(),
                    initial: t.initial,
                    lookup: t
                        .entries
                        .iter()
                        .map(|e| (e.location.clone(), e.frontier))
                        .collect(),
                    current: t.initial,
                })
                .collect();
            cores.push(CoreState {
                id: cfg.core,
                config: i,
                iterations: cfg.iteration_space.size() as u64,
                executed: 0,
                lcu,
                sram: cfg
                    .sram
                    .iter()
                    .map(|o| (o.tensor.clone(), SramData::new(o.clone())))
                    .collect(),
            });
        }
        let gcu = &bundle.gcu;
        for c in &gcu.input_cores {
            if !by_id.contains_key(c) || !bundle.hw.gcu_in.contains(c) {
                return Err(SimError::InvalidBundle(format!("GCU cannot feed core {c}")));
            }
        }
        if !by_id.contains_key(&gcu.output_core) || !bundle.hw.gcu_out.contains(&gcu.output_core) {
            return Err(SimError::InvalidBundle(format!(
                "GCU cannot drain core {}",
                gcu.output_core
            )));
        }
        if gcu.rows_per_cycle == 0 {
            return Err(SimError::InvalidBundle("rows_per_cycle must be positive".into()));
        }
        let stats = SimStats {
            cores: cores
                .iter()
                .map(|c| CoreStats {
                    core: c.id,
                    ..Default::default()
                })
                .collect(),
            ..Default::default()
        };
        Ok(SimState {
            bundle,
            cores,
            by_id,
            in_flight: Vec::new(),
            cycle: 0,
            frame: None,
            frames_done: 0,
            stats,
            trace: None,
        })
    }

    pub fn enable_trace(&mut self) {
        if self.trace.is_none() {
            self.trace = Some(String::from(TRACE_HEADER) + "\n");
        }
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn stats(&self) -> &SimStats {
        &self.stats
    }

    pub fn bundle(&self) -> &Bundle {
        &self.bundle
    }

    /// Current executable frontier of a core.
    pub fn frontier(&self, core: u32) -> Option<u64> {
        self.by_id.get(&core).map(|&i| self.cores[i].frontier())
    }

    pub fn executed(&self, core: u32) -> Option<u64> {
        self.by_id.get(&core).map(|&i| self.cores[i].executed)
    }

    /// Value of a real (unpadded) SRAM location, if declared on the core.
    pub fn sram_value(&self, core: u32, object: &str, c: usize, h: usize, w: usize) -> Option<i32> {
        let data = self.cores[*self.by_id.get(&core)?].sram.get(object)?;
        Some(data.values[data.padded_index(c, h, w)])
    }

    /// Minimal cycles one frame could take: the longer of input streaming
    /// and the largest iteration space, plus delivery latency.
    pub fn frame_lower_bound(&self) -> u64 {
        let rows = self
            .bundle
            .gcu
            .input_shape
            .height
            .div_ceil(self.bundle.gcu.rows_per_cycle) as u64;
        let iters = self.cores.iter().map(|c| c.iterations).max().unwrap_or(0);
        rows.max(iters) + 2
    }

    fn log(&mut self, unit: &str, event: &str, detail: core::fmt::Arguments<'_>) {
        if let Some(t) = &mut self.trace {
            let _ = writeln!(t, "{} {unit} {event} {detail}", self.cycle);
        }
    }

    /// Reset per-frame state and start streaming `input`.
    pub fn begin_frame(&mut self, input: Tensor) -> Result<(), SimError> {
        let index = self.frames_done as usize;
        if input.shape != self.bundle.gcu.input_shape {
            return Err(SimError::InputShape {
                frame: index,
                expected: self.bundle.gcu.input_shape,
                actual: input.shape,
            });
        }
        for core in &mut self.cores {
            core.executed = 0;
            for o in &mut core.lcu {
                o.current = o.initial;
            }
            for s in core.sram.values_mut() {
                s.reset();
            }
        }
        self.in_flight.clear();
        self.frame = Some(Frame {
            index,
            input,
            next_row: 0,
            output: Tensor::zeros(self.bundle.gcu.output_shape),
            drain_queue: Vec::new(),
            drained: 0,
        });
        self.log("gcu", "frame", format_args!("{index} start"));
        Ok(())
    }

    /// True once the output is fully drained and nothing is left running.
    pub fn frame_complete(&self) -> bool {
        let Some(f) = &self.frame else { return false };
        f.drained == f.output.shape.len()
            && f.next_row == f.input.shape.height
            && self.in_flight.is_empty()
            && self.cores.iter().all(|c| c.executed == c.iterations)
    }

    /// Close the current frame and hand back its output.
    pub fn finish_frame(&mut self) -> Option<Tensor> {
        if !self.frame_complete() {
            return None;
        }
        let f = self.frame.take()?;
        self.cycle -= 1;
        self.log("gcu", "frame", format_args!("{} done", f.index));
        self.cycle += 1;
        self.frames_done += 1;
        self.stats.frames = self.frames_done;
        Some(f.output)
    }

    /// Advance one cycle.
    pub fn step(&mut self) -> Result<(), SimError> {
        self.deliver()?;
        for i in 0..self.cores.len() {
            self.execute(i)?;
        }
        self.gcu_phase();
        self.cycle += 1;
        self.stats.total_cycles = self.cycle;
        Ok(())
    }

    fn deliver(&mut self) -> Result<(), SimError> {
        let msgs = core::mem::take(&mut self.in_flight);
        for m in msgs {
            debug_assert_eq!(m.send_cycle + 1, self.cycle);
            let i = self.by_id[&m.dest_core];
            let cycle = self.cycle;
            let core = &mut self.cores[i];
            let data = core
                .sram
                .get_mut(&m.object)
                .ok_or_else(|| SimError::UndeclaredObject {
                    cycle,
                    core: m.dest_core,
                    object: m.object.clone(),
                })?;
            for (loc, v) in &m.values {
                let (c, h, w) = data.real_index(loc).ok_or_else(|| {
                    SimError::InvalidBundle(format!("write to {}{loc} outside the object", m.object))
                })?;
                let bit = data.decl.shape.index(c, h, w);
                if data.written[bit] {
                    return Err(SimError::DoubleWrite {
                        cycle,
                        core: m.dest_core,
                        object: m.object.clone(),
                        location: loc.clone(),
                    });
                }
                data.written[bit] = true;
                let idx = data.padded_index(c, h, w);
                data.values[idx] = *v;
            }
            let last = m.last();
            let mut frontier = None;
            if let Some(o) = core.lcu.iter_mut().find(|o| o.object == m.object) {
                if let Some(&f) = o.lookup.get(&last) {
                    o.current = o.current.max(f);
                }
                frontier = Some(o.current);
            }
            let from = match m.source {
                Source::Gcu => String::from("gcu"),
                Source::Core(c) => format!("core{c}"),
            };
            let unit = format!("core{}", m.dest_core);
            match frontier {
                Some(f) => self.log(
                    &unit,
                    "deliver",
                    format_args!("{} from={from} n={} last={last} frontier={f}", m.object, m.values.len()),
                ),
                None => self.log(
                    &unit,
                    "deliver",
                    format_args!("{} from={from} n={} last={last} frontier=-", m.object, m.values.len()),
                ),
            }
        }
        Ok(())
    }

    fn execute(&mut self, i: usize) -> Result<(), SimError> {
        let (id, executed, iterations, frontier) = {
            let c = &self.cores[i];
            (c.id, c.executed, c.iterations, c.frontier())
        };
        if executed >= iterations || self.frame.is_none() {
            return Ok(());
        }
        let unit = format!("core{id}");
        if executed >= frontier {
            self.stats.cores[i].stall_cycles += 1;
            self.log(&unit, "stall", format_args!("executed={executed} frontier={frontier}"));
            return Ok(());
        }
        let cycle = self.cycle;
        let cfg = &self.bundle.cores[self.cores[i].config];
        let point = cfg
            .iteration_space
            .point_at(executed)
            .expect("executed < iterations");
        let (oh, ow) = (point.0[0] as usize, point.0[1] as usize);
        let core = &mut self.cores[i];
        let mut reads = 0u64;

        // gather
        let g = &cfg.gather;
        let src = core.sram.get(&g.object).ok_or_else(|| SimError::UndeclaredObject {
            cycle,
            core: id,
            object: g.object.clone(),
        })?;
        let mut window = vec![0i32; cfg.crossbar.cols];
        for d in 0..g.channels {
            for dh in 0..g.kernel_h {
                for dw in 0..g.kernel_w {
                    let ph = oh * g.stride + dh;
                    let pw = ow * g.stride + dw;
                    let col = (d * g.kernel_h + dh) * g.kernel_w + dw;
                    let real = match (ph.checked_sub(src.decl.pads.top), pw.checked_sub(src.decl.pads.left)) {
                        (Some(h), Some(w)) if h < src.decl.shape.height && w < src.decl.shape.width => Some((h, w)),
                        _ => None,
                    };
                    if let Some((h, w)) = real {
                        if !src.written[src.decl.shape.index(d, h, w)] {
                            return Err(SimError::Raw {
                                cycle,
                                core: id,
                                object: g.object.clone(),
                                location: IntTuple(vec![d as i64, h as i64, w as i64]),
                            });
                        }
                    }
                    window[col] = src.values[src.padded.index(d, ph, pw)];
                    reads += 1;
                }
            }
        }

        // crossbar
        let xb = &cfg.crossbar;
        let acc: Vec<i32> = (0..xb.rows)
            .map(|k| {
                window.iter().enumerate().fold(0i32, |a, (c, &x)| {
                    a.wrapping_add((xb.weights[k * xb.cols + c] as i32).wrapping_mul(x))
                })
            })
            .collect();
        let mut regs: BTreeMap<&str, Vec<i32>> = BTreeMap::new();
        regs.insert(&xb.output, acc);

        // DPU
        let mut sends = Vec::new();
        let mut drained = Vec::new();
        for op in &cfg.program {
            match op {
                DpuOp::BiasAdd { register, bias } => {
                    let r = regs.get_mut(register.as_str()).ok_or_else(|| SimError::UnknownRegister {
                        cycle,
                        core: id,
                        register: register.clone(),
                    })?;
                    for (v, b) in r.iter_mut().zip(bias) {
                        *v = v.wrapping_add(*b);
                    }
                }
                DpuOp::ResidualAdd { out, lhs, rhs } => {
                    let a = operand(core, &regs, lhs, cycle, id, oh, ow, &mut reads)?;
                    let b = operand(core, &regs, rhs, cycle, id, oh, ow, &mut reads)?;
                    let sum = a.iter().zip(&b).map(|(x, y)| x.wrapping_add(*y)).collect();
                    regs.insert(out, sum);
                }
                DpuOp::Relu { out, input } => {
                    let a = operand(core, &regs, input, cycle, id, oh, ow, &mut reads)?;
                    regs.insert(out, a.into_iter().map(|x| x.max(0)).collect());
                }
                DpuOp::WriteLocal { tensor } => {
                    let vals = register(&regs, tensor, cycle, id)?;
                    let data = core.sram.get_mut(tensor).ok_or_else(|| SimError::UndeclaredObject {
                        cycle,
                        core: id,
                        object: tensor.clone(),
                    })?;
                    for (c, v) in vals.iter().enumerate() {
                        let bit = data.decl.shape.index(c, oh, ow);
                        if data.written[bit] {
                            return Err(SimError::DoubleWrite {
                                cycle,
                                core: id,
                                object: tensor.clone(),
                                location: IntTuple(vec![c as i64, oh as i64, ow as i64]),
                            });
                        }
                        data.written[bit] = true;
                        let idx = data.padded_index(c, oh, ow);
                        data.values[idx] = *v;
                        drained.push((tensor.clone(), (c, oh, ow)));
                    }
                }
                DpuOp::Send { dest_core, tensor } => {
                    let vals = register(&regs, tensor, cycle, id)?;
                    let values = vals
                        .iter()
                        .enumerate()
                        .map(|(c, &v)| (IntTuple(vec![c as i64, oh as i64, ow as i64]), v))
                        .collect();
                    sends.push(Message {
                        source: Source::Core(id),
                        dest_core: *dest_core,
                        object: tensor.clone(),
                        values,
                        send_cycle: cycle,
                    });
                }
            }
        }
        core.executed += 1;
        let n = core.executed;

        let st = &mut self.stats.cores[i];
        st.executed += 1;
        st.sram_reads += reads;
        st.first_active.get_or_insert(cycle);
        st.last_active = Some(cycle);
        self.log(&unit, "exec", format_args!("{point} n={n}"));
        if id == self.bundle.gcu.output_core {
            if let Some(f) = &mut self.frame {
                for (t, loc) in drained {
                    if t == self.bundle.gcu.output {
                        f.drain_queue.push(loc);
                    }
                }
            }
        }
        for m in sends {
            let last = m.last();
            self.log(&unit, "send", format_args!("{} to=core{} last={last}", m.object, m.dest_core));
            self.stats.messages += 1;
            self.in_flight.push(m);
        }
        Ok(())
    }

    fn gcu_phase(&mut self) {
        let Some(f) = &mut self.frame else { return };
        let gcu = &self.bundle.gcu;
        let mut injected = Vec::new();
        for _ in 0..gcu.rows_per_cycle {
            if f.next_row >= f.input.shape.height {
                break;
            }
            let r = f.next_row;
            f.next_row += 1;
            for &dest in &gcu.input_cores {
                let mut values = Vec::with_capacity(f.input.shape.channels * f.input.shape.width);
                for c in 0..f.input.shape.channels {
                    for w in 0..f.input.shape.width {
                        values.push((IntTuple(vec![c as i64, r as i64, w as i64]), f.input.get(c, r, w)));
                    }
                }
                injected.push((
                    r,
                    Message {
                        source: Source::Gcu,
                        dest_core: dest,
                        object: gcu.input.clone(),
                        values,
                        send_cycle: self.cycle,
                    },
                ));
            }
        }
        let queue = core::mem::take(&mut f.drain_queue);
        let out_core = &self.cores[self.by_id[&gcu.output_core]];
        let data = &out_core.sram[&gcu.output];
        for &(c, h, w) in &queue {
            f.output.set(c, h, w, data.values[data.padded_index(c, h, w)]);
        }
        f.drained += queue.len();
        let drained = f.drained;
        let output = gcu.output.clone();
        for (r, m) in injected {
            self.log("gcu", "inject", format_args!("{} row={r} to=core{}", m.object, m.dest_core));
            self.stats.messages += 1;
            self.in_flight.push(m);
        }
        if !queue.is_empty() {
            self.log("gcu", "drain", format_args!("{output} n={} total={drained}", queue.len()));
        }
    }

    fn diagnostic(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "cycle {}", self.cycle);
        for c in &self.cores {
            let _ = write!(
                s,
                "core{}: executed {}/{} frontier {}",
                c.id,
                c.executed,
                c.iterations,
                c.frontier()
            );
            for o in &c.lcu {
                let _ = write!(s, " {}={}", o.object, o.current);
            }
            s.push('\n');
        }
        if let Some(f) = &self.frame {
            let _ = writeln!(
                s,
                "gcu: frame {} rows injected {}/{} drained {}/{}",
                f.index,
                f.next_row,
                f.input.shape.height,
                f.drained,
                f.output.shape.len()
            );
        }
        if self.in_flight.is_empty() {
            s.push_str("pending messages: none\n");
        }
        for m in &self.in_flight {
            let _ = writeln!(
                s,
                "pending: {} -> core{} n={} last={}",
                m.object,
                m.dest_core,
                m.values.len(),
                m.last()
            );
        }
        s
    }

    /// Stream every input frame through the chip. `cycle_limit` caps the
    /// total cycle count; by default it is ten times the sum of the
    /// per-frame lower bounds.
    pub fn run(mut self, inputs: &[Tensor], cycle_limit: Option<u64>) -> Result<RunOutput, SimError> {
        let limit = cycle_limit.unwrap_or(10 * inputs.len().max(1) as u64 * self.frame_lower_bound());
        let mut outputs = Vec::with_capacity(inputs.len());
        for input in inputs {
            self.begin_frame(input.clone())?;
            loop {
                if self.cycle >= limit {
                    return Err(SimError::Deadlock {
                        limit,
                        diagnostic: self.diagnostic(),
                    });
                }
                self.step()?;
                if self.frame_complete() {
                    break;
                }
            }
            outputs.push(self.finish_frame().expect("frame complete"));
        }
        Ok(RunOutput {
            outputs,
            stats: self.stats,
            trace: self.trace,
        })
    }
}

fn register(regs: &BTreeMap<&str, Vec<i32>>, name: &str, cycle: u64, core: u32) -> Result<Vec<i32>, SimError> {
    regs.get(name).cloned().ok_or_else(|| SimError::UnknownRegister {
        cycle,
        core,
        register: name.into(),
    })
}

#[allow(clippy::too_many_arguments)]
fn operand(
    core: &CoreState,
    regs: &BTreeMap<&str, Vec<i32>>,
    op: &Operand,
    cycle: u64,
    id: u32,
    oh: usize,
    ow: usize,
    reads: &mut u64,
) -> Result<Vec<i32>, SimError> {
    match op {
        Operand::Register(r) => register(regs, r, cycle, id),
        Operand::Object(t) => {
            let data = core.sram.get(t).ok_or_else(|| SimError::UndeclaredObject {
                cycle,
                core: id,
                object: t.clone(),
            })?;
            (0..data.decl.shape.channels)
                .map(|c| {
                    if !data.written[data.decl.shape.index(c, oh, ow)] {
                        return Err(SimError::Raw {
                            cycle,
                            core: id,
                            object: t.clone(),
                            location: IntTuple(vec![c as i64, oh as i64, ow as i64]),
                        });
                    }
                    *reads += 1;
                    Ok(data.values[data.padded_index(c, oh, ow)])
                })
                .collect()
        }
    }
}

/// The window geometry must read exactly the image of the gather relation.
fn check_gather(cfg: &CoreConfig) -> Result<(), SimError> {
    let obj = cfg
        .sram
        .iter()
        .find(|o| o.tensor == cfg.gather.object)
        .ok_or_else(|| SimError::InvalidBundle(format!(
            "core {}: gather object `{}` is not in SRAM",
            cfg.core, cfg.gather.object
        )))?;
    let images = cfg
        .gather
        .relation
        .images(&EnumCap::default())
        .map_err(|e| SimError::InvalidBundle(format!("{e}")))?;
    for point in cfg.iteration_space.points() {
        let expected = geometric_window(&cfg.gather, obj, point.0[0] as usize, point.0[1] as usize);
        let mut actual = images.get(&point).cloned().unwrap_or_default();
        actual.sort();
        if actual != expected {
            return Err(SimError::InvalidBundle(format!(
                "core {}: gather relation disagrees with window geometry at {point}",
                cfg.core
            )));
        }
    }
    Ok(())
}
