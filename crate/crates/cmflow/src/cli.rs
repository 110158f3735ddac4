//! Command-line driver.
//!
//! Exit codes: 0 success, 2 usage (bad flags, missing files), 3 compile
//! infeasible or oracle mismatch, 4 simulation error, 5 malformed input
//! file or write failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{ArgGroup, Args, Parser, Subcommand};
use cmflow_core::depsm::{compute_s, oracle_s};
use cmflow_core::model::reference_eval;
use cmflow_core::sim::SimState;
use cmflow_core::{compile, CompileOptions, EnumCap};
use rand::rngs::StdRng;
use rand::SeedableRng;

use crate::formats::{self, Dtype, FormatError};
use crate::{gen, report};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_COMPILE: i32 = 3;
pub const EXIT_SIM: i32 = 4;
pub const EXIT_IO: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "cmflow", version, about = "Dataflow compiler and simulator for multi-core computational-memory accelerators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Partition, place and lower a model into a configuration bundle.
    Compile(CompileArgs),
    /// Simulate a bundle on one or more input frames.
    Run(RunArgs),
    /// Print parts of a bundle.
    Inspect(InspectArgs),
    /// Evaluate a model with the sequential reference interpreter.
    Reference(ReferenceArgs),
    /// Compare the dependency pipeline against the brute-force oracle on random cases.
    OracleCheck(OracleArgs),
}

#[derive(Debug, Args)]
pub struct CompileArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub hw: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Skip the brute-force cross-check of every dependency relation.
    #[arg(long)]
    pub no_oracle: bool,
    /// Maximum number of points any enumeration may visit.
    #[arg(long)]
    pub enum_cap: Option<u64>,
    /// Input rows the GCU streams per cycle.
    #[arg(long, default_value_t = 1)]
    pub rows_per_cycle: usize,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Statistics JSON; printed to stdout when omitted.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[arg(long)]
    pub cycle_limit: Option<u64>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("view").required(true).args(["partitions", "relations", "state_machine", "mapping"])))]
pub struct InspectArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub partitions: bool,
    #[arg(long)]
    pub relations: bool,
    #[arg(long, value_name = "ID")]
    pub state_machine: Option<usize>,
    #[arg(long)]
    pub mapping: bool,
}

#[derive(Debug, Args)]
pub struct ReferenceArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub cases: usize,
}

/// A failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<FormatError> for Failure {
    fn from(e: FormatError) -> Self {
        Failure::new(EXIT_IO, e.to_string())
    }
}

fn require(paths: &[&Path]) -> Result<(), Failure> {
    for p in paths {
        if !p.is_file() {
            return Err(Failure::new(EXIT_USAGE, format!("{}: no such file", p.display())));
        }
    }
    Ok(())
}

/// Parse `args` and execute; returns the exit code. Normal output goes to
/// `out`, diagnostics to `err`.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return EXIT_USAGE;
            }
            let _ = write!(out, "{e}");
            return 0;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn execute(cmd: Command, out: &mut dyn Write) -> Result<(), Failure> {
    match cmd {
        Command::Compile(a) => cmd_compile(a, out),
        Command::Run(a) => cmd_run(a, out),
        Command::Inspect(a) => cmd_inspect(a, out),
        Command::Reference(a) => cmd_reference(a),
        Command::OracleCheck(a) => cmd_oracle(a, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), Failure> {
    out.write_all(text.as_bytes())
        .map_err(|e| Failure::new(EXIT_IO, format!("stdout: {e}")))
}

fn cmd_compile(a: CompileArgs, out: &mut dyn Write) -> Result<(), Failure> {
    require(&[&a.model, &a.hw])?;
    let g = formats::load_model(&a.model)?;
    let hw = formats::load_hw(&a.hw)?;
    let opts = CompileOptions {
        cap: a.enum_cap.map(EnumCap::uniform).unwrap_or_default(),
        check_oracle: !a.no_oracle,
        rows_per_cycle: a.rows_per_cycle,
    };
    let started = Instant::now();
    let compiled = compile(&g, &hw, &opts).map_err(|e| Failure::new(EXIT_COMPILE, e.to_string()))?;
    formats::save_bundle(&a.out, &compiled.bundle)?;
    emit(
        out,
        &format!(
            "compiled {} partition(s) onto core(s) {:?} in {:.1?}{}\n",
            compiled.bundle.cores.len(),
            compiled.bundle.mapping.cores,
            started.elapsed(),
            if a.no_oracle { " (oracle skipped)" } else { "" }
        ),
    )
}

fn cmd_run(a: RunArgs, out: &mut dyn Write) -> Result<(), Failure> {
    require(&[&a.bundle, &a.input])?;
    let bundle = formats::load_bundle(&a.bundle)?;
    let inputs = formats::load_tensors(&a.input)?;
    let mut state = SimState::init(bundle).map_err(|e| Failure::new(EXIT_SIM, e.to_string()))?;
    if a.trace.is_some() {
        state.enable_trace();
    }
    let result = state
        .run(&inputs, a.cycle_limit)
        .map_err(|e| Failure::new(EXIT_SIM, e.to_string()))?;
    formats::save_tensors(&a.output, &result.outputs, Dtype::I32)?;
    if let (Some(path), Some(trace)) = (&a.trace, &result.trace) {
        formats::save_text(path, trace)?;
    }
    let stats = serde_json::to_string_pretty(&result.stats).expect("stats serialize") + "\n";
    match &a.stats {
        Some(path) => formats::save_text(path, &stats).map_err(Failure::from),
        None => emit(out, &stats),
    }
}

fn cmd_inspect(a: InspectArgs, out: &mut dyn Write) -> Result<(), Failure> {
    require(&[&a.bundle])?;
    let b = formats::load_bundle(&a.bundle)?;
    let text = if a.partitions {
        report::partitions(&b)
    } else if a.relations {
        report::relations(&b)
    } else if a.mapping {
        report::mapping(&b)
    } else {
        let id = a.state_machine.expect("clap enforces one view");
        report::state_machine(&b, id).map_err(|m| Failure::new(EXIT_USAGE, m))?
    };
    emit(out, &text)
}

fn cmd_reference(a: ReferenceArgs) -> Result<(), Failure> {
    require(&[&a.model, &a.input])?;
    let g = formats::load_model(&a.model)?;
    let outputs = formats::load_tensors(&a.input)?
        .iter()
        .map(|t| reference_eval(&g, t))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::new(EXIT_IO, e.to_string()))?;
    formats::save_tensors(&a.output, &outputs, Dtype::I32)?;
    Ok(())
}

fn cmd_oracle(a: OracleArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let mut rng = StdRng::seed_from_u64(a.seed);
    let cap = EnumCap::default();
    let mut failures = 0;
    for i in 0..a.cases {
        let case = gen::random_access_case(&mut rng);
        let fail = |m: String| Failure::new(EXIT_COMPILE, format!("case {i} ({}): {m}", case.label));
        let s = compute_s(&case.w1, &case.r2, &cap).map_err(|e| fail(e.to_string()))?.s;
        let o = oracle_s(&case.w1, &case.r2, &cap).map_err(|e| fail(e.to_string()))?;
        let same = s.same_pairs(&o, &cap).map_err(|e| fail(e.to_string()))?;
        if !same {
            failures += 1;
        }
        emit(out, &format!("case {i}: {} {}\n", if same { "ok" } else { "MISMATCH" }, case.label))?;
    }
    emit(out, &format!("{} of {} cases agree\n", a.cases - failures, a.cases))?;
    if failures > 0 {
        return Err(Failure::new(EXIT_COMPILE, format!("{failures} case(s) disagree with the oracle")));
    }
    Ok(())
}
