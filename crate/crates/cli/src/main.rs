mod commands;
mod report;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use report::{render, OutputFormat, RunManifest};

#[derive(Parser, Debug)]
#[command(name = "seqcomp", version, about = "Function composition, transformer constructions and protocol checks")]
struct Cli {
    /// Report format.
    #[arg(long, value_enum, default_value = "json", global = true)]
    format: OutputFormat,

    /// Write the report to this file instead of standard output.
    #[arg(long, global = true, value_name = "FILE")]
    report: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute the exact parameter schedule for (H, d, p, L).
    Schedule(ScheduleArgs),
    /// Draw a random composition instance.
    GenTask(GenTaskArgs),
    /// Evaluate the composition chain of an instance.
    EvalTask(EvalTaskArgs),
    /// Build a solver network and run it on an instance.
    Solve(SolveArgs),
    /// Run a serialized network on an instance or prompt.
    Run(RunArgs),
    /// Compare a decoder with its protocol simulation.
    VerifyReduction(VerifyReductionArgs),
    /// Search a family of inputs for a fooling pair.
    Fool(FoolArgs),
    /// Compile a symmetric circuit into an encoder.
    CompileCircuit(CompileCircuitArgs),
    /// Compile a circuit and compare the encoder with direct evaluation.
    CheckCircuit(CheckCircuitArgs),
}

#[derive(Args, Debug)]
struct ScheduleArgs {
    #[arg(long = "H")]
    h: u64,
    #[arg(long)]
    d: u64,
    #[arg(long)]
    p: u64,
    #[arg(long = "L")]
    l: u64,
    /// Also check the lower-bound inequality chain.
    #[arg(long)]
    verify: bool,
}

#[derive(Args, Debug, Clone)]
struct TaskShape {
    #[arg(long = "L")]
    l: usize,
    #[arg(long)]
    m: u64,
    /// Query sizes n_1..n_(L-1), comma separated or repeated.
    #[arg(long, value_delimiter = ',')]
    n: Vec<u64>,
}

#[derive(Args, Debug)]
struct GenTaskArgs {
    #[command(flatten)]
    shape: TaskShape,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the instance here; otherwise it is embedded in the report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalTaskArgs {
    file: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Builder {
    Depth,
    Cot,
    Encoder,
}

#[derive(Args, Debug, Clone, Copy)]
struct PrecisionArgs {
    /// Integer bits of the fixed-point format.
    #[arg(long)]
    int_bits: Option<u32>,
    /// Fractional bits of the fixed-point format.
    #[arg(long)]
    frac_bits: Option<u32>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long, value_enum)]
    builder: Builder,
    #[arg(long)]
    task: PathBuf,
    /// Also write the built network.
    #[arg(long)]
    emit_spec: Option<PathBuf>,
    #[command(flatten)]
    precision: PrecisionArgs,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    spec: PathBuf,
    /// A task instance or a prompt document.
    #[arg(long)]
    prompt: PathBuf,
    /// Include every activation, score and weight.
    #[arg(long)]
    trace: bool,
    /// Evaluate positions in parallel.
    #[arg(long)]
    parallel: bool,
}

#[derive(Args, Debug)]
struct VerifyReductionArgs {
    /// Decoder to reduce; a random one is drawn when absent.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[command(flatten)]
    shape: TaskShape,
    /// Heads of the random decoder.
    #[arg(long = "H", default_value_t = 1)]
    h: u64,
    /// Head dimension of the random decoder.
    #[arg(long, default_value_t = 2)]
    d: u64,
    /// Precision of the random decoder.
    #[arg(long, default_value_t = 8)]
    p: u64,
    /// Seed of the random decoder.
    #[arg(long, default_value_t = 0)]
    spec_seed: u64,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also run this many locality trials.
    #[arg(long, default_value_t = 0)]
    locality: usize,
}

#[derive(Args, Debug)]
struct FoolArgs {
    /// Decoder for families whose protocol is the transformer reduction.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    family_spec: PathBuf,
}

#[derive(Args, Debug, Clone, Copy)]
struct LayoutArgs {
    /// Use exactly this many positions.
    #[arg(long)]
    positions: Option<usize>,
    /// Extra zero-wire blocks per wide gate.
    #[arg(long, default_value_t = 0)]
    extra_padding: usize,
}

#[derive(Args, Debug)]
struct CompileCircuitArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Write the compiled network here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    layout: LayoutArgs,
    #[command(flatten)]
    precision: PrecisionArgs,
}

#[derive(Args, Debug)]
struct CheckCircuitArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Check every input (at most 2^20).
    #[arg(long, conflicts_with = "trials")]
    exhaustive: bool,
    /// Check this many random inputs.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    layout: LayoutArgs,
    #[command(flatten)]
    precision: PrecisionArgs,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Schedule(_) => "schedule",
            Command::GenTask(_) => "gen-task",
            Command::EvalTask(_) => "eval-task",
            Command::Solve(_) => "solve",
            Command::Run(_) => "run",
            Command::VerifyReduction(_) => "verify-reduction",
            Command::Fool(_) => "fool",
            Command::CompileCircuit(_) => "compile-circuit",
            Command::CheckCircuit(_) => "check-circuit",
        }
    }
}

/// Errors in the caller's input exit with 2; anything that went wrong while
/// computing exits with 1.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    use seqcomp::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::InvalidParams(_)
                | E::Range { .. }
                | E::Validation(_)
                | E::Unsupported(_)
                | E::Vocabulary { .. }
                | E::Spec(_)
                | E::Json(_)
                | E::Empty(_) => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() || cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn run(cli: Cli) -> Result<bool> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut manifest = RunManifest::new(cli.command.name(), args);
    let outcome = match &cli.command {
        Command::Schedule(a) => commands::schedule(&mut manifest, a)?,
        Command::GenTask(a) => commands::gen_task(&mut manifest, a)?,
        Command::EvalTask(a) => commands::eval_task(&mut manifest, a)?,
        Command::Solve(a) => commands::solve(&mut manifest, a)?,
        Command::Run(a) => commands::run(&mut manifest, a)?,
        Command::VerifyReduction(a) => commands::verify_reduction(&mut manifest, a)?,
        Command::Fool(a) => commands::fool(&mut manifest, a)?,
        Command::CompileCircuit(a) => commands::compile_circuit(&mut manifest, a)?,
        Command::CheckCircuit(a) => commands::check_circuit(&mut manifest, a)?,
    };
    let text = render(&manifest, &outcome, cli.format)?;
    match &cli.report {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(outcome.passed)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
