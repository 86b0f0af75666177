use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, ValueEnum};
use sepconv::bench::{emit_csv, run_ladder, LadderConfig, REFERENCE_SIDES};
use sepconv::exec::{empty_task_overhead, DEFAULT_CUTOFF, DEFAULT_LADDER_WORKERS};
use sepconv::image::{read_ppm, write_ppm, DEFAULT_PLANES};
use sepconv::{
    make_synthetic, Algorithm, ConvVariant, Error, ExecPlan, Image, PlanKind, SeparableKernel,
};

const DESK_SIDES: [usize; 3] = [256, 512, 1024];

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Command {
    Convolve,
    Ladder,
    Overhead,
    Gen,
}

#[derive(Clone, Debug, PartialEq)]
struct Sizes(Vec<(usize, usize)>);

fn parse_sizes(s: &str) -> Result<Sizes, String> {
    s.split(',')
        .map(|item| {
            let (r, c) = item
                .split_once('x')
                .ok_or_else(|| format!("size {item:?} is not ROWSxCOLS"))?;
            let dim = |d: &str| match d.trim().parse::<usize>() {
                Ok(v) if v > 0 => Ok(v),
                _ => Err(format!("bad dimension {d:?} in size {item:?}")),
            };
            Ok((dim(r)?, dim(c)?))
        })
        .collect::<Result<_, _>>()
        .map(Sizes)
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(format!("expected a positive count, got {s:?}")),
    }
}

fn parse_kernel(s: &str) -> Result<SeparableKernel, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    Algorithm::from_name(s)
        .ok_or_else(|| format!("expected single-generic, single-unrolled or two-pass, got {s:?}"))
}

fn parse_plan(s: &str) -> Result<PlanKind, String> {
    PlanKind::from_name(s)
        .ok_or_else(|| format!("expected sequential, static or taskpool, got {s:?}"))
}

/// Separable image convolution runs, the benchmark ladder and the
/// scheduling-overhead probe.
#[derive(Debug, Parser)]
#[command(name = "sepconv", version)]
struct Cli {
    /// convolve, ladder, overhead or gen.
    #[arg(value_enum)]
    subcommand: Option<Command>,

    /// Same as the positional subcommand.
    #[arg(long, value_enum)]
    command: Option<Command>,

    /// Comma-separated ROWSxCOLS list. Defaults to the six reference squares
    /// 1152..8748, or 256..1024 when SEPCONV_DESK=1.
    #[arg(long, value_parser = parse_sizes)]
    sizes: Option<Sizes>,

    #[arg(long, default_value_t = DEFAULT_PLANES, value_parser = positive)]
    planes: usize,

    #[arg(long, default_value_t = 42)]
    seed: u64,

    /// Timed repetitions per measurement (ladder) or launches (overhead).
    #[arg(long, default_value_t = sepconv::bench::DEFAULT_REPS, value_parser = clap::value_parser!(u32).range(1..))]
    reps: u32,

    #[arg(long, value_parser = positive)]
    workers: Option<usize>,

    /// Tasks per parallel loop in the task-pool model.
    #[arg(long, value_parser = positive)]
    cutoff: Option<usize>,

    /// Fuse all planes into one iteration space (task pool only).
    #[arg(long)]
    agglomerate: bool,

    /// sequential, static or taskpool. Inferred from the other flags when
    /// absent: --cutoff or --agglomerate mean taskpool, --workers static.
    #[arg(long, value_parser = parse_plan)]
    plan: Option<PlanKind>,

    #[arg(long, default_value = "two-pass", value_parser = parse_algorithm)]
    algorithm: Algorithm,

    /// Leave single-pass results in the scratch image.
    #[arg(long)]
    no_copy_back: bool,

    /// `gaussian5` or odd-length comma-separated weights, used as given.
    #[arg(long, default_value = "gaussian5", value_parser = parse_kernel, allow_hyphen_values = true)]
    kernel: SeparableKernel,

    /// Comma-separated ladder stage labels (default: all).
    #[arg(long, value_delimiter = ',')]
    stages: Vec<String>,

    #[arg(long = "in")]
    input: Option<PathBuf>,

    #[arg(long)]
    out: Option<PathBuf>,

    #[arg(long)]
    csv: Option<PathBuf>,
}

enum Failure {
    Operational(Error),
    Correctness(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Operational(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Operational(e.into())
    }
}

impl Cli {
    fn command(&self) -> Result<Command, Error> {
        match (self.subcommand, self.command) {
            (Some(a), Some(b)) if a != b => {
                Err(Error::Config("conflicting subcommand and --command".into()))
            }
            (Some(c), _) | (None, Some(c)) => Ok(c),
            (None, None) => Err(Error::Config("no command given; try --help".into())),
        }
    }

    fn sizes(&self) -> Vec<(usize, usize)> {
        if let Some(Sizes(s)) = &self.sizes {
            return s.clone();
        }
        let desk = std::env::var("SEPCONV_DESK").is_ok_and(|v| v == "1");
        let sides: &[usize] = if desk { &DESK_SIDES } else { &REFERENCE_SIDES };
        sides.iter().map(|&s| (s, s)).collect()
    }

    fn single_size(&self) -> Result<(usize, usize), Error> {
        match self.sizes().as_slice() {
            [one] => Ok(*one),
            _ if self.sizes.is_none() => {
                Err(Error::Config("give one image size with --sizes".into()))
            }
            many => Err(Error::Config(format!(
                "expected one size, got {}",
                many.len()
            ))),
        }
    }

    fn plan(&self, default: PlanKind) -> Result<ExecPlan, Error> {
        let kind = self
            .plan
            .unwrap_or(if self.cutoff.is_some() || self.agglomerate {
                PlanKind::TaskPool
            } else if self.workers.is_some() {
                PlanKind::StaticChunked
            } else {
                default
            });
        ExecPlan::from_parts(
            kind,
            self.workers.unwrap_or(DEFAULT_LADDER_WORKERS),
            self.cutoff.unwrap_or(DEFAULT_CUTOFF),
            self.agglomerate,
        )
    }

    fn variant(&self) -> ConvVariant {
        ConvVariant::new(self.algorithm, !self.no_copy_back)
    }
}

fn convolve(cli: &Cli) -> Result<(), Failure> {
    let mut image = match &cli.input {
        Some(path) => read_ppm(path)?,
        None => {
            let (rows, cols) = cli.single_size()?;
            make_synthetic(rows, cols, cli.planes, cli.seed)?
        }
    };
    let mut scratch = image.clone();
    let variant = cli.variant();
    let plan = cli.plan(PlanKind::Sequential)?;
    let stats = sepconv::convolve_image(&mut image, &mut scratch, &cli.kernel, variant, plan)?;
    println!(
        "{} copy_back={} plan={plan} {}x{}x{}: {} launches, {} tasks, {:?}",
        variant.algorithm,
        variant.copy_back,
        image.plane_count(),
        image.rows(),
        image.cols(),
        stats.parallel_region_launches,
        stats.tasks_spawned,
        stats.wall_time
    );
    if let Some(out) = &cli.out {
        let result: &Image = if variant.result_in_source() {
            &image
        } else {
            &scratch
        };
        write_ppm(result, out)?;
    }
    Ok(())
}

fn ladder(cli: &Cli) -> Result<(), Failure> {
    let config = LadderConfig {
        sizes: cli.sizes(),
        planes: cli.planes,
        seed: cli.seed,
        reps: cli.reps,
        workers: cli.workers.unwrap_or(DEFAULT_LADDER_WORKERS),
        cutoff: cli.cutoff.unwrap_or(DEFAULT_CUTOFF),
        stages: cli.stages.clone(),
        kernel: cli.kernel.clone(),
    };
    let report = run_ladder(&config)?;
    match &cli.csv {
        Some(path) => {
            emit_csv(&report.records, BufWriter::new(File::create(path)?))?;
            for r in &report.records {
                let speedup = r
                    .speedup
                    .map(|s| format!("{s:.2}x"))
                    .unwrap_or_else(|| "-".into());
                println!(
                    "{:<14} {:>5}x{:<5} {:>12.3?} {speedup:>10}",
                    r.label, r.rows, r.cols, r.per_image_time
                );
            }
        }
        None => emit_csv(&report.records, io::stdout().lock())?,
    }
    if report.failures.is_empty() {
        return Ok(());
    }
    let lines: Vec<String> = report
        .failures
        .iter()
        .map(|f| format!("{} at {}x{}: {}", f.label, f.rows, f.cols, f.message))
        .collect();
    Err(Failure::Correctness(lines.join("\n")))
}

fn overhead(cli: &Cli) -> Result<(), Failure> {
    let plan = cli.plan(PlanKind::TaskPool)?;
    let per_launch = empty_task_overhead(plan, cli.reps as usize)?;
    let per_image = |launches: u32| -> Duration { per_launch * launches };
    println!(
        "plan {plan}: {per_launch:?} per launch over {} launches",
        cli.reps
    );
    println!(
        "per 3-plane two-pass image: {:?} with 6 launches, {:?} agglomerated into 2",
        per_image(6),
        per_image(2)
    );
    Ok(())
}

fn gen(cli: &Cli) -> Result<(), Failure> {
    let out = cli
        .out
        .as_ref()
        .ok_or_else(|| Error::Config("gen needs --out".into()))?;
    let (rows, cols) = cli.single_size()?;
    write_ppm(&make_synthetic(rows, cols, cli.planes, cli.seed)?, out)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = cli.command().map_err(Failure::from).and_then(|c| match c {
        Command::Convolve => convolve(&cli),
        Command::Ladder => ladder(&cli),
        Command::Overhead => overhead(&cli),
        Command::Gen => gen(&cli),
    });
    let _ = io::stdout().flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Operational(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Correctness(msg)) => {
            eprintln!("correctness check failed:\n{msg}");
            ExitCode::from(2)
        }
    }
}
