//! Benchmark harness: the optimisation ladder, repetition timing, speedup
//! tables, overhead-adjusted compute time and CSV output.
//!
//! A ladder stage is a (variant, plan) pair plus the build flavour. Whether a
//! stage is the scalar or the SIMD rung depends on how this crate was
//! compiled (see [`crate::BUILD_VECTORIZED`]), so the emitted label follows
//! the build: the unrolled single-pass stage is `Opt-1` in a scalar build and
//! `Opt-2` in a vectorized one.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;
use std::time::{Duration, Instant};

use crate::conv::{Algorithm, ConvVariant, CROSS_ALGORITHM_ABS_TOL, CROSS_ALGORITHM_REL_TOL};
use crate::error::{Error, Result};
use crate::exec::{ExecPlan, Executor, DEFAULT_CUTOFF, DEFAULT_LADDER_WORKERS};
use crate::image::{all_close, make_synthetic, Image, ValidRegion};
use crate::kernel::SeparableKernel;
use crate::BUILD_VECTORIZED;

/// Repetitions per measurement unless overridden.
pub const DEFAULT_REPS: u32 = 1000;

/// Square image sides of the reference workload.
pub const REFERENCE_SIDES: [usize; 6] = [1152, 1728, 2592, 3888, 5832, 8748];

pub const CSV_HEADER: &str = "label,algorithm,copy_back,plan,workers,cutoff,agglomerate,rows,cols,planes,reps,total_ns,per_image_ns,speedup,build_vectorized";

/// One timed measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub label: String,
    pub variant: ConvVariant,
    pub plan: ExecPlan,
    pub rows: usize,
    pub cols: usize,
    pub planes: usize,
    pub reps: u32,
    pub total_time: Duration,
    pub per_image_time: Duration,
    /// Filled in by [`speedup_table`].
    pub speedup: Option<f64>,
    pub build_vectorized: bool,
}

impl BenchRecord {
    fn dims(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.planes)
    }
}

/// Times `reps` back-to-back convolutions of `image` after one discarded
/// warm-up run. All runs reuse the same buffers, so each repetition convolves
/// the previous repetition's output.
pub fn time_with(
    exec: &Executor,
    label: &str,
    image: &Image,
    k: &SeparableKernel,
    variant: ConvVariant,
    reps: u32,
) -> Result<BenchRecord> {
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    let mut work = image.clone();
    let mut scratch = image.clone();
    exec.convolve_image(&mut work, &mut scratch, k, variant)?;

    let start = Instant::now();
    for _ in 0..reps {
        exec.convolve_image(&mut work, &mut scratch, k, variant)?;
    }
    let total_time = start.elapsed();

    Ok(BenchRecord {
        label: label.to_string(),
        variant,
        plan: exec.plan(),
        rows: image.rows(),
        cols: image.cols(),
        planes: image.plane_count(),
        reps,
        total_time,
        per_image_time: total_time / reps,
        speedup: None,
        build_vectorized: BUILD_VECTORIZED,
    })
}

/// [`time_with`] on a fresh executor for `plan`, labelled `custom`.
pub fn time_variant(
    image: &Image,
    k: &SeparableKernel,
    variant: ConvVariant,
    plan: ExecPlan,
    reps: u32,
) -> Result<BenchRecord> {
    let exec = Executor::new(plan)?;
    time_with(&exec, "custom", image, k, variant, reps)
}

/// Sets `speedup = baseline.per_image_time / record.per_image_time`, pairing
/// each record with the `baseline_label` record of the same dimensions.
pub fn speedup_table(records: &mut [BenchRecord], baseline_label: &str) -> Result<()> {
    let baselines: Vec<_> = records
        .iter()
        .filter(|r| r.label == baseline_label)
        .map(|r| (r.dims(), r.per_image_time))
        .collect();
    for rec in records.iter_mut() {
        let base = baselines
            .iter()
            .find(|(dims, _)| *dims == rec.dims())
            .map(|&(_, t)| t)
            .ok_or_else(|| {
                Error::Config(format!(
                    "no {baseline_label} baseline for {}x{}x{}",
                    rec.planes, rec.rows, rec.cols
                ))
            })?;
        rec.speedup = Some(ratio(base, rec.per_image_time));
    }
    Ok(())
}

fn ratio(num: Duration, den: Duration) -> f64 {
    // Clamp to one timer tick so a sub-nanosecond image cannot divide by zero.
    num.as_nanos().max(1) as f64 / den.as_nanos().max(1) as f64
}

/// Per-image time with a fixed per-image scheduling overhead removed.
pub fn overhead_adjusted(record: &BenchRecord, overhead_per_image: Duration) -> Result<Duration> {
    subtract_overhead(record.per_image_time, overhead_per_image)
}

pub fn subtract_overhead(total: Duration, overhead: Duration) -> Result<Duration> {
    total.checked_sub(overhead).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "overhead {overhead:?} exceeds total time {total:?}"
        ))
    })
}

/// Writes `records` as CSV under [`CSV_HEADER`], in the order given.
pub fn emit_csv<W: Write>(records: &[BenchRecord], mut sink: W) -> Result<()> {
    writeln!(sink, "{CSV_HEADER}")?;
    for r in records {
        let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            sink,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            csv_field(&r.label),
            r.variant.algorithm.name(),
            r.variant.copy_back,
            r.plan.kind().name(),
            opt(r.plan.workers()),
            opt(r.plan.cutoff()),
            r.plan.agglomerate(),
            r.rows,
            r.cols,
            r.planes,
            r.reps,
            r.total_time.as_nanos(),
            r.per_image_time.as_nanos(),
            r.speedup.map(|s| format!("{s:.4}")).unwrap_or_default(),
            r.build_vectorized,
        )?;
    }
    sink.flush()?;
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One rung of the optimisation ladder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    /// Generic single-pass, copy-back, sequential. Baseline of the first half.
    Naive,
    Unrolled,
    TwoPass,
    ParUnrolled,
    ParTwoPass,
    /// Generic single-pass without copy-back. Baseline of the second half.
    NaiveNoCopy,
    UnrolledNoCopy,
    ParUnrolledNoCopy,
    /// Unrolled single-pass, no copy-back, agglomerated task pool.
    TaskUnrolledNoCopy,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Naive,
        Stage::Unrolled,
        Stage::TwoPass,
        Stage::ParUnrolled,
        Stage::ParTwoPass,
        Stage::NaiveNoCopy,
        Stage::UnrolledNoCopy,
        Stage::ParUnrolledNoCopy,
        Stage::TaskUnrolledNoCopy,
    ];

    /// Label for a scalar (`vectorized == false`) or SIMD build.
    pub fn label(self, vectorized: bool) -> &'static str {
        let (scalar, simd) = match self {
            Stage::Naive => ("Opt-0", "Opt-0"),
            Stage::Unrolled => ("Opt-1", "Opt-2"),
            Stage::TwoPass => ("Opt-3", "Opt-4"),
            Stage::ParUnrolled => ("Par-1", "Par-2"),
            Stage::ParTwoPass => ("Par-3", "Par-4"),
            Stage::NaiveNoCopy => ("Opt-0-nocopy", "Opt-0-nocopy"),
            Stage::UnrolledNoCopy => ("Opt-1-nocopy", "Opt-2-nocopy"),
            Stage::ParUnrolledNoCopy => ("Par-1-nocopy", "Par-2-nocopy"),
            Stage::TaskUnrolledNoCopy => ("Par-5", "Par-6"),
        };
        if vectorized {
            simd
        } else {
            scalar
        }
    }

    /// Label in the current build.
    pub fn current_label(self) -> &'static str {
        self.label(BUILD_VECTORIZED)
    }

    /// Accepts either build's label for a stage.
    pub fn from_label(label: &str) -> Result<Stage> {
        if matches!(label, "Par-7" | "Par-8") {
            return Err(Error::Config(format!(
                "stage {label} needs an OpenCL device backend, which this harness does not provide"
            )));
        }
        Stage::ALL
            .into_iter()
            .find(|s| s.label(false) == label || s.label(true) == label)
            .ok_or_else(|| Error::Config(format!("unknown ladder stage {label:?}")))
    }

    pub fn variant(self) -> ConvVariant {
        match self {
            Stage::Naive => ConvVariant::single_generic(true),
            Stage::Unrolled | Stage::ParUnrolled => ConvVariant::single_unrolled(true),
            Stage::TwoPass | Stage::ParTwoPass => ConvVariant::two_pass(),
            Stage::NaiveNoCopy => ConvVariant::single_generic(false),
            Stage::UnrolledNoCopy | Stage::ParUnrolledNoCopy | Stage::TaskUnrolledNoCopy => {
                ConvVariant::single_unrolled(false)
            }
        }
    }

    pub fn plan(self, workers: usize, cutoff: usize) -> ExecPlan {
        match self {
            Stage::Naive
            | Stage::Unrolled
            | Stage::TwoPass
            | Stage::NaiveNoCopy
            | Stage::UnrolledNoCopy => ExecPlan::Sequential,
            Stage::ParUnrolled | Stage::ParTwoPass | Stage::ParUnrolledNoCopy => {
                ExecPlan::StaticChunked { workers }
            }
            Stage::TaskUnrolledNoCopy => ExecPlan::TaskPool {
                workers,
                cutoff,
                agglomerate: true,
            },
        }
    }

    pub fn baseline(self) -> Stage {
        if self < Stage::NaiveNoCopy {
            Stage::Naive
        } else {
            Stage::NaiveNoCopy
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.current_label())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LadderConfig {
    /// `(rows, cols)` pairs.
    pub sizes: Vec<(usize, usize)>,
    pub planes: usize,
    pub seed: u64,
    pub reps: u32,
    pub workers: usize,
    pub cutoff: usize,
    /// Stage labels to run; empty means every stage.
    pub stages: Vec<String>,
    pub kernel: SeparableKernel,
}

impl Default for LadderConfig {
    fn default() -> Self {
        LadderConfig {
            sizes: REFERENCE_SIDES.iter().map(|&s| (s, s)).collect(),
            planes: crate::image::DEFAULT_PLANES,
            seed: 42,
            reps: DEFAULT_REPS,
            workers: DEFAULT_LADDER_WORKERS,
            cutoff: DEFAULT_CUTOFF,
            stages: Vec::new(),
            kernel: SeparableKernel::gaussian5(),
        }
    }
}

/// A stage whose output disagreed with the naive reference; it is left out
/// of the timing table.
#[derive(Clone, Debug, PartialEq)]
pub struct StageFailure {
    pub label: String,
    pub rows: usize,
    pub cols: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LadderReport {
    /// Ordered by stage, then by image size.
    pub records: Vec<BenchRecord>,
    pub failures: Vec<StageFailure>,
}

/// Compares a stage's convolved image with the reference produced by the
/// generic single-pass sum. Single-pass variants must match bit for bit on
/// the valid region; two-pass must agree within the cross-algorithm
/// tolerance on the doubly-interior region. Returns a description of the
/// first mismatch, if any.
pub fn oracle_mismatch(
    result: &Image,
    reference: &Image,
    algorithm: Algorithm,
    radius: usize,
) -> Result<Option<String>> {
    result.same_shape(reference)?;
    let (rows, cols) = (result.rows(), result.cols());
    for (p, (got, want)) in result.planes().iter().zip(reference.planes()).enumerate() {
        if algorithm.is_single_pass() {
            let region = ValidRegion::for_radius(rows, cols, radius)?;
            for i in region.rows() {
                for j in region.cols() {
                    if got.get(i, j).to_bits() != want.get(i, j).to_bits() {
                        return Ok(Some(format!(
                            "plane {p} pixel ({i},{j}): {} != reference {}",
                            got.get(i, j),
                            want.get(i, j)
                        )));
                    }
                }
            }
        } else {
            let region = ValidRegion::doubly_interior(rows, cols, radius)?;
            if !all_close(
                got,
                want,
                &region,
                CROSS_ALGORITHM_REL_TOL,
                CROSS_ALGORITHM_ABS_TOL,
            )? {
                return Ok(Some(format!(
                    "plane {p} exceeds {CROSS_ALGORITHM_REL_TOL:e} relative / {CROSS_ALGORITHM_ABS_TOL:e} absolute tolerance"
                )));
            }
        }
    }
    Ok(None)
}

/// Convolves once with the generic single-pass sum, sequentially. The
/// reference is the returned scratch image (valid region only).
pub fn reference_output(image: &Image, k: &SeparableKernel) -> Result<Image> {
    let mut work = image.clone();
    let mut out = image.clone();
    Executor::new(ExecPlan::Sequential)?.convolve_image(
        &mut work,
        &mut out,
        k,
        ConvVariant::single_generic(false),
    )?;
    Ok(out)
}

/// Runs the requested stages on every size. Each stage is checked against the
/// naive reference once before it is timed.
pub fn run_ladder(config: &LadderConfig) -> Result<LadderReport> {
    if config.sizes.is_empty() {
        return Err(Error::Config("ladder needs at least one image size".into()));
    }
    let mut stages = if config.stages.is_empty() {
        Stage::ALL.to_vec()
    } else {
        config
            .stages
            .iter()
            .map(|l| Stage::from_label(l))
            .collect::<Result<Vec<_>>>()?
    };
    // Speedups need each stage's baseline measured too.
    for s in stages.clone() {
        if !stages.contains(&s.baseline()) {
            stages.push(s.baseline());
        }
    }
    stages.sort();
    stages.dedup();

    let mut sizes = config.sizes.clone();
    sizes.sort_by(|a, b| (a.0 * a.1).cmp(&(b.0 * b.1)).then(a.cmp(b)));
    sizes.dedup();

    let k = &config.kernel;
    let mut report = LadderReport::default();
    let mut keyed: Vec<(Stage, usize, BenchRecord)> = Vec::new();

    // Workers are created once per plan and reused across sizes.
    let executors = stages
        .iter()
        .map(|s| Executor::new(s.plan(config.workers, config.cutoff)))
        .collect::<Result<Vec<_>>>()?;

    for (size_rank, &(rows, cols)) in sizes.iter().enumerate() {
        let image = make_synthetic(rows, cols, config.planes, config.seed)?;
        let reference = reference_output(&image, k)?;
        for (&stage, exec) in stages.iter().zip(&executors) {
            let variant = stage.variant();
            let label = stage.current_label();
            let mut work = image.clone();
            let mut scratch = image.clone();
            let checked = exec
                .convolve_image(&mut work, &mut scratch, k, variant)
                .and_then(|_| {
                    let result = if variant.result_in_source() {
                        &work
                    } else {
                        &scratch
                    };
                    oracle_mismatch(result, &reference, variant.algorithm, k.radius())
                });
            let mismatch = match checked {
                Ok(m) => m,
                Err(e) => Some(e.to_string()),
            };
            if let Some(message) = mismatch {
                report.failures.push(StageFailure {
                    label: label.to_string(),
                    rows,
                    cols,
                    message,
                });
                continue;
            }
            drop((work, scratch));
            let record = time_with(exec, label, &image, k, variant, config.reps)?;
            keyed.push((stage, size_rank, record));
        }
    }

    keyed.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut records: Vec<BenchRecord> = keyed.into_iter().map(|(_, _, r)| r).collect();
    for base in [Stage::Naive, Stage::NaiveNoCopy] {
        let (group, label) = (
            |r: &BenchRecord| Stage::from_label(&r.label).map(Stage::baseline).ok() == Some(base),
            base.current_label(),
        );
        let mut members: Vec<BenchRecord> = records.iter().filter(|r| group(r)).cloned().collect();
        if members.is_empty() {
            continue;
        }
        // A baseline that failed its correctness check leaves its group
        // without speedups rather than aborting the whole ladder.
        if speedup_table(&mut members, label).is_ok() {
            let mut it = members.into_iter();
            for r in records.iter_mut().filter(|r| group(r)) {
                *r = it.next().expect("same filter");
            }
        }
    }
    report.records = records;
    Ok(report)
}

/// Orders records by stage label then size, the order [`run_ladder`] uses.
pub fn ladder_order(a: &BenchRecord, b: &BenchRecord) -> Ordering {
    let rank = |r: &BenchRecord| Stage::from_label(&r.label).ok();
    rank(a)
        .cmp(&rank(b))
        .then((a.rows * a.cols).cmp(&(b.rows * b.cols)))
        .then(a.dims().cmp(&b.dims()))
}
