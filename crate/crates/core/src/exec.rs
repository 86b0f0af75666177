//! Execution models for the convolution passes.
//!
//! * [`ExecPlan::Sequential`] runs every pass inline on the caller.
//! * [`ExecPlan::StaticChunked`] splits a pass's rows into one balanced block
//!   per worker and pins block `w` to worker `w`, like a statically scheduled
//!   `parallel for`.
//! * [`ExecPlan::TaskPool`] splits the rows into `cutoff` blocks, queues one
//!   task per block, and lets `workers` threads drain the queue greedily.
//!   With `agglomerate` set, all planes share one fused iteration space, so
//!   each pass is one launch instead of one per plane.
//!
//! Every launch is a barrier: it returns only after all of its tasks ran.
//! Tasks write disjoint row blocks, and each output pixel is summed in a fixed
//! order, so all plans produce bit-identical images.

use std::collections::VecDeque;
use std::fmt;
use std::ops::{AddAssign, Range};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Condvar, Mutex, MutexGuard, PoisonError};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::conv::{self, Algorithm, ConvVariant};
use crate::error::{Error, Result};
use crate::image::{Image, ValidRegion};
use crate::kernel::SeparableKernel;

/// Task count tuned for the reference workload; also the default worker count
/// for benchmark ladders.
pub const DEFAULT_CUTOFF: usize = 100;
pub const DEFAULT_LADDER_WORKERS: usize = 100;

/// The `index`-th of `cutoff` balanced contiguous blocks covering `[lo, hi)`.
///
/// With `n = hi - lo`, `q = n / cutoff` and `s = n % cutoff`, the first `s`
/// blocks hold `q + 1` elements and the rest hold `q`. Blocks past `n` are
/// empty when `n < cutoff`.
pub fn partition_block(lo: usize, hi: usize, index: usize, cutoff: usize) -> Result<Range<usize>> {
    if lo > hi {
        return Err(Error::InvalidArgument(format!(
            "range start {lo} exceeds end {hi}"
        )));
    }
    if index >= cutoff {
        return Err(Error::InvalidArgument(format!(
            "chunk index {index} out of range for {cutoff} chunks"
        )));
    }
    Ok(block(lo, hi, index, cutoff))
}

#[inline]
fn block(lo: usize, hi: usize, index: usize, cutoff: usize) -> Range<usize> {
    let n = hi - lo;
    let (q, s) = (n / cutoff, n % cutoff);
    let start = lo + index * q + index.min(s);
    let len = q + usize::from(index < s);
    start..start + len
}

/// Number of hardware threads, at least 1.
pub fn hardware_threads() -> usize {
    thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExecPlan {
    Sequential,
    StaticChunked {
        workers: usize,
    },
    TaskPool {
        workers: usize,
        cutoff: usize,
        agglomerate: bool,
    },
}

impl ExecPlan {
    /// Task pool sized to the machine's hardware threads.
    pub fn task_pool(cutoff: usize, agglomerate: bool) -> Self {
        ExecPlan::TaskPool {
            workers: hardware_threads(),
            cutoff,
            agglomerate,
        }
    }

    /// Builds a plan from loose settings, rejecting combinations that have no
    /// meaning (agglomeration outside the task pool).
    pub fn from_parts(
        kind: PlanKind,
        workers: usize,
        cutoff: usize,
        agglomerate: bool,
    ) -> Result<Self> {
        let plan = match kind {
            PlanKind::Sequential | PlanKind::StaticChunked if agglomerate => {
                return Err(Error::UnsupportedCombination(format!(
                    "agglomeration applies to the task pool only, not the {} plan",
                    kind.name()
                )));
            }
            PlanKind::Sequential => ExecPlan::Sequential,
            PlanKind::StaticChunked => ExecPlan::StaticChunked { workers },
            PlanKind::TaskPool => ExecPlan::TaskPool {
                workers,
                cutoff,
                agglomerate,
            },
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ExecPlan::Sequential => Ok(()),
            ExecPlan::StaticChunked { workers } if workers >= 1 => Ok(()),
            ExecPlan::TaskPool {
                workers, cutoff, ..
            } if workers >= 1 && cutoff >= 1 => Ok(()),
            _ => Err(Error::InvalidArgument(format!(
                "plan {self} needs at least one worker and one chunk"
            ))),
        }
    }

    pub fn kind(&self) -> PlanKind {
        match self {
            ExecPlan::Sequential => PlanKind::Sequential,
            ExecPlan::StaticChunked { .. } => PlanKind::StaticChunked,
            ExecPlan::TaskPool { .. } => PlanKind::TaskPool,
        }
    }

    pub fn workers(&self) -> Option<usize> {
        match *self {
            ExecPlan::Sequential => None,
            ExecPlan::StaticChunked { workers } | ExecPlan::TaskPool { workers, .. } => {
                Some(workers)
            }
        }
    }

    pub fn cutoff(&self) -> Option<usize> {
        match *self {
            ExecPlan::TaskPool { cutoff, .. } => Some(cutoff),
            _ => None,
        }
    }

    pub fn agglomerate(&self) -> bool {
        matches!(
            self,
            ExecPlan::TaskPool {
                agglomerate: true,
                ..
            }
        )
    }

    /// How many blocks one launch splits its range into.
    pub fn chunks(&self) -> usize {
        match *self {
            ExecPlan::Sequential => 1,
            ExecPlan::StaticChunked { workers } => workers,
            ExecPlan::TaskPool { cutoff, .. } => cutoff,
        }
    }
}

impl fmt::Display for ExecPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ExecPlan::Sequential => f.write_str("sequential"),
            ExecPlan::StaticChunked { workers } => write!(f, "static(workers={workers})"),
            ExecPlan::TaskPool {
                workers,
                cutoff,
                agglomerate,
            } => write!(
                f,
                "taskpool(workers={workers}, cutoff={cutoff}{})",
                if agglomerate { ", agglomerated" } else { "" }
            ),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PlanKind {
    Sequential,
    StaticChunked,
    TaskPool,
}

impl PlanKind {
    pub fn name(self) -> &'static str {
        match self {
            PlanKind::Sequential => "sequential",
            PlanKind::StaticChunked => "static",
            PlanKind::TaskPool => "taskpool",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "sequential" => Some(PlanKind::Sequential),
            "static" => Some(PlanKind::StaticChunked),
            "taskpool" => Some(PlanKind::TaskPool),
            _ => None,
        }
    }
}

/// Exact event counts for a batch of launches, plus its wall time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LaunchStats {
    pub parallel_region_launches: u64,
    pub tasks_spawned: u64,
    pub wall_time: Duration,
}

impl AddAssign for LaunchStats {
    fn add_assign(&mut self, rhs: LaunchStats) {
        self.parallel_region_launches += rhs.parallel_region_launches;
        self.tasks_spawned += rhs.tasks_spawned;
        self.wall_time += rhs.wall_time;
    }
}

/// Computes the given destination rows from a whole source plane.
type RowKernel<'a> = dyn Fn(&[f32], Range<usize>, &mut [f32]) + Sync + 'a;

/// A task body: receives its chunk index and row range.
type Body<'a> = dyn Fn(usize, Range<usize>) -> Result<()> + Sync + 'a;

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(PoisonError::into_inner)
}

struct Batch {
    // Lifetime-erased. Valid until `remaining` reaches zero, which the
    // launching thread waits for before its borrow of the body ends.
    body: *const Body<'static>,
    state: Mutex<BatchState>,
    done: Condvar,
}

// SAFETY: the body is `Sync`, and the pointer is only dereferenced by jobs
// that complete before the launching thread lets the referent go.
unsafe impl Send for Batch {}
unsafe impl Sync for Batch {}

struct BatchState {
    remaining: usize,
    failures: Vec<String>,
}

struct Job {
    batch: Arc<Batch>,
    index: usize,
    range: Range<usize>,
}

struct Queues {
    shared: VecDeque<Job>,
    inbox: Vec<VecDeque<Job>>,
    shutdown: bool,
}

struct PoolShared {
    queues: Mutex<Queues>,
    work: Condvar,
}

/// Fixed set of worker threads, created once and reused by every launch.
struct WorkerPool {
    shared: Arc<PoolShared>,
    handles: Vec<JoinHandle<()>>,
}

impl WorkerPool {
    fn new(workers: usize) -> Result<Self> {
        let shared = Arc::new(PoolShared {
            queues: Mutex::new(Queues {
                shared: VecDeque::new(),
                inbox: (0..workers).map(|_| VecDeque::new()).collect(),
                shutdown: false,
            }),
            work: Condvar::new(),
        });
        let mut pool = WorkerPool {
            shared,
            handles: Vec::with_capacity(workers),
        };
        for id in 0..workers {
            let shared = Arc::clone(&pool.shared);
            let handle = thread::Builder::new()
                .name(format!("sepconv-worker-{id}"))
                .spawn(move || worker_loop(&shared, id))?;
            pool.handles.push(handle);
        }
        Ok(pool)
    }

    /// Queues one job per entry (pinned to a worker when `Some`) and blocks
    /// until all of them have run.
    fn execute(
        &self,
        jobs: Vec<(Option<usize>, usize, Range<usize>)>,
        body: &Body<'_>,
    ) -> Result<()> {
        let total = jobs.len();
        if total == 0 {
            return Ok(());
        }
        // SAFETY: only the lifetime changes; see `Batch::body`.
        let body: *const Body<'static> = unsafe { std::mem::transmute(body as *const Body<'_>) };
        let batch = Arc::new(Batch {
            body,
            state: Mutex::new(BatchState {
                remaining: total,
                failures: Vec::new(),
            }),
            done: Condvar::new(),
        });
        {
            let mut q = lock(&self.shared.queues);
            for (worker, index, range) in jobs {
                let job = Job {
                    batch: Arc::clone(&batch),
                    index,
                    range,
                };
                match worker {
                    Some(w) => q.inbox[w].push_back(job),
                    None => q.shared.push_back(job),
                }
            }
        }
        self.shared.work.notify_all();

        let mut state = lock(&batch.state);
        while state.remaining > 0 {
            state = batch
                .done
                .wait(state)
                .unwrap_or_else(PoisonError::into_inner);
        }
        match state.failures.first() {
            None => Ok(()),
            Some(first) => Err(Error::Execution {
                failed: state.failures.len(),
                total,
                first: first.clone(),
            }),
        }
    }
}

impl Drop for WorkerPool {
    fn drop(&mut self) {
        lock(&self.shared.queues).shutdown = true;
        self.shared.work.notify_all();
        for handle in self.handles.drain(..) {
            let _ = handle.join();
        }
    }
}

fn worker_loop(shared: &PoolShared, id: usize) {
    loop {
        let job = {
            let mut q = lock(&shared.queues);
            loop {
                if let Some(job) = q.inbox[id].pop_front() {
                    break job;
                }
                if let Some(job) = q.shared.pop_front() {
                    break job;
                }
                if q.shutdown {
                    return;
                }
                q = shared.work.wait(q).unwrap_or_else(PoisonError::into_inner);
            }
        };
        // SAFETY: the batch is still pending (this job is not counted yet),
        // so the launching thread is blocked and the body is alive.
        let body = unsafe { &*job.batch.body };
        let failure = match catch_unwind(AssertUnwindSafe(|| body(job.index, job.range.clone()))) {
            Ok(Ok(())) => None,
            Ok(Err(e)) => Some(e.to_string()),
            Err(panic) => Some(panic_message(panic.as_ref())),
        };
        let mut state = lock(&job.batch.state);
        if let Some(f) = failure {
            state.failures.push(format!("task {}: {f}", job.index));
        }
        state.remaining -= 1;
        if state.remaining == 0 {
            job.batch.done.notify_all();
        }
    }
}

fn panic_message(panic: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = panic.downcast_ref::<&str>() {
        format!("panicked: {s}")
    } else if let Some(s) = panic.downcast_ref::<String>() {
        format!("panicked: {s}")
    } else {
        "panicked".to_string()
    }
}

/// Owns the workers for one [`ExecPlan`] and runs launches on them.
///
/// Bodies must not launch on the same executor; the nested launch would wait
/// for workers that are busy waiting on it.
pub struct Executor {
    plan: ExecPlan,
    pool: Option<WorkerPool>,
}

impl fmt::Debug for Executor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Executor")
            .field("plan", &self.plan)
            .finish()
    }
}

impl Executor {
    pub fn new(plan: ExecPlan) -> Result<Self> {
        plan.validate()?;
        let pool = match plan {
            ExecPlan::Sequential => None,
            ExecPlan::StaticChunked { workers } | ExecPlan::TaskPool { workers, .. } => {
                Some(WorkerPool::new(workers)?)
            }
        };
        Ok(Executor { plan, pool })
    }

    pub fn plan(&self) -> ExecPlan {
        self.plan
    }

    /// Runs one work-sharing loop over `range` and returns the number of
    /// tasks queued (zero when executed inline).
    fn dispatch(&self, range: Range<usize>, body: &Body<'_>) -> Result<u64> {
        let (lo, hi) = (range.start, range.end);
        if lo > hi {
            return Err(Error::InvalidArgument(format!(
                "range start {lo} exceeds end {hi}"
            )));
        }
        let pool = match (&self.pool, self.plan) {
            (Some(pool), ExecPlan::StaticChunked { .. } | ExecPlan::TaskPool { .. }) => pool,
            _ => {
                body(0, range)?;
                return Ok(0);
            }
        };
        let chunks = self.plan.chunks();
        let pinned = matches!(self.plan, ExecPlan::StaticChunked { .. });
        let jobs = (0..chunks)
            .map(|i| (pinned.then_some(i), i, block(lo, hi, i, chunks)))
            .collect();
        pool.execute(jobs, body)?;
        Ok(chunks as u64)
    }

    /// One parallel region: `body` is called with disjoint blocks that
    /// together cover `range`, and this returns after all of them finished.
    pub fn run<F>(&self, range: Range<usize>, body: F) -> Result<LaunchStats>
    where
        F: Fn(Range<usize>) -> Result<()> + Sync,
    {
        let start = Instant::now();
        let tasks = self.dispatch(range, &|_, r| body(r))?;
        Ok(LaunchStats {
            parallel_region_launches: 1,
            tasks_spawned: tasks,
            wall_time: start.elapsed(),
        })
    }

    /// Total wall time of `launches` launches whose tasks do nothing.
    pub fn time_empty_launches(&self, launches: usize) -> Result<Duration> {
        let range = 0..self.plan.chunks();
        let start = Instant::now();
        for _ in 0..launches {
            self.dispatch(range.clone(), &|_, _| Ok(()))?;
        }
        Ok(start.elapsed())
    }

    /// Convolves every plane of `image` with `variant`.
    ///
    /// `scratch` must have the same shape; it receives the horizontal pass
    /// (two-pass) or the single-pass result. The convolved values end in
    /// `image` when [`ConvVariant::result_in_source`] holds and in `scratch`
    /// otherwise; pixels outside the valid region are never written.
    ///
    /// Launch accounting: without agglomeration every plane gets its own
    /// launch per pass (two per plane for two-pass, one for single-pass with
    /// the copy-back as a second loop inside the same region). Agglomeration
    /// fuses the planes into one iteration space of `planes * rows` rows, so
    /// each pass is a single launch.
    pub fn convolve_image(
        &self,
        image: &mut Image,
        scratch: &mut Image,
        k: &SeparableKernel,
        variant: ConvVariant,
    ) -> Result<LaunchStats> {
        let start = Instant::now();
        variant.check_width(k.width())?;
        image.same_shape(scratch)?;
        let (rows, cols) = (image.rows(), image.cols());
        let region = ValidRegion::for_radius(rows, cols, k.radius())?;
        let planes = image.plane_count();

        let groups: Vec<Range<usize>> = if self.plan.agglomerate() {
            std::iter::once(0..planes).collect()
        } else {
            (0..planes).map(|p| p..p + 1).collect()
        };
        let dense = variant
            .algorithm
            .is_single_pass()
            .then(|| k.outer_product());
        let weights = k.weights();
        let mut stats = LaunchStats::default();

        for group in groups {
            let fused = group.len() > 1;
            let space = Space {
                rows,
                cols,
                range: if fused {
                    0..group.len() * rows
                } else {
                    region.rows()
                },
                clip: region.rows(),
            };
            let img = &mut image.planes_mut()[group.clone()];
            let scr = &mut scratch.planes_mut()[group];

            match variant.algorithm {
                Algorithm::TwoPass => {
                    for s in scr.iter_mut() {
                        conv::zero_horizontal_complement(
                            s.as_mut_slice(),
                            rows,
                            cols,
                            k.radius(),
                            region.rows(),
                        );
                    }
                    stats.tasks_spawned +=
                        self.pass(&space, slices(img), slices_mut(scr), &|src, rows, out| {
                            conv::horizontal_rows(src, cols, weights, rows, out)
                        })?;
                    stats.parallel_region_launches += 1;
                    stats.tasks_spawned +=
                        self.pass(&space, slices(scr), slices_mut(img), &|src, rows, out| {
                            conv::vertical_rows(src, cols, weights, rows, out)
                        })?;
                    stats.parallel_region_launches += 1;
                }
                single => {
                    let dense = dense.as_ref().expect("dense kernel for single pass");
                    let (kernel, width) = (dense.as_slice(), dense.width());
                    let generic = single == Algorithm::SinglePassGeneric;
                    stats.tasks_spawned +=
                        self.pass(&space, slices(img), slices_mut(scr), &|src, rows, out| {
                            if generic {
                                conv::single_pass_rows(src, cols, kernel, width, rows, out)
                            } else {
                                conv::single_pass5_rows(src, cols, kernel, rows, out)
                            }
                        })?;
                    if variant.copy_back {
                        stats.tasks_spawned +=
                            self.pass(&space, slices(scr), slices_mut(img), &|src, rows, out| {
                                conv::copy_rows(src, cols, region.cols(), rows, out)
                            })?;
                    }
                    stats.parallel_region_launches += 1;
                }
            }
        }
        stats.wall_time = start.elapsed();
        Ok(stats)
    }

    /// One work-sharing loop over `space`: each task applies `kernel` to the
    /// destination rows it owns, reading whole source planes.
    fn pass(
        &self,
        space: &Space,
        srcs: Vec<&[f32]>,
        dsts: Vec<&mut [f32]>,
        kernel: &RowKernel<'_>,
    ) -> Result<u64> {
        let chunks = self.plan.chunks();
        let slots = space.split(dsts, chunks);
        self.dispatch(space.range.clone(), &|task, _| {
            let segments = std::mem::take(&mut *lock(&slots[task]));
            for seg in segments {
                kernel(srcs[seg.plane], seg.rows, seg.out);
            }
            Ok(())
        })
    }
}

fn slices(planes: &[crate::image::Plane]) -> Vec<&[f32]> {
    planes.iter().map(|p| p.as_slice()).collect()
}

fn slices_mut(planes: &mut [crate::image::Plane]) -> Vec<&mut [f32]> {
    planes.iter_mut().map(|p| p.as_mut_slice()).collect()
}

/// Iteration space of one pass: `range` in fused row coordinates
/// (`plane * rows + row`), restricted per plane to the rows in `clip`.
struct Space {
    rows: usize,
    cols: usize,
    range: Range<usize>,
    clip: Range<usize>,
}

struct Segment<'a> {
    plane: usize,
    rows: Range<usize>,
    out: &'a mut [f32],
}

impl Space {
    /// Row segments, per plane, of the `index`-th block.
    fn segments(
        &self,
        index: usize,
        chunks: usize,
    ) -> impl Iterator<Item = (usize, Range<usize>)> + '_ {
        let b = block(self.range.start, self.range.end, index, chunks);
        let first = b.start / self.rows;
        let last = b.end.div_ceil(self.rows);
        (first..last).filter_map(move |p| {
            let base = p * self.rows;
            let lo = b.start.max(base) - base;
            let hi = b.end.min(base + self.rows) - base;
            let (lo, hi) = (lo.max(self.clip.start), hi.min(self.clip.end));
            (lo < hi).then_some((p, lo..hi))
        })
    }

    /// Carves the destination planes into the segments each task writes.
    fn split<'a>(&self, dsts: Vec<&'a mut [f32]>, chunks: usize) -> Vec<Mutex<Vec<Segment<'a>>>> {
        let cols = self.cols;
        let mut rest: Vec<(&'a mut [f32], usize)> = dsts.into_iter().map(|d| (d, 0)).collect();
        (0..chunks)
            .map(|t| {
                let segs = self
                    .segments(t, chunks)
                    .map(|(plane, rows)| {
                        let (buf, consumed) = &mut rest[plane];
                        let tail = std::mem::take(buf);
                        let (_, tail) = tail.split_at_mut((rows.start - *consumed) * cols);
                        let (out, tail) = tail.split_at_mut(rows.len() * cols);
                        *buf = tail;
                        *consumed = rows.end;
                        Segment { plane, rows, out }
                    })
                    .collect();
                Mutex::new(segs)
            })
            .collect()
    }
}

/// Runs `body` over `range` split into one block per worker.
pub fn run_static_chunked<F>(range: Range<usize>, workers: usize, body: F) -> Result<LaunchStats>
where
    F: Fn(Range<usize>) -> Result<()> + Sync,
{
    Executor::new(ExecPlan::StaticChunked { workers })?.run(range, body)
}

/// Runs `body` over `range` as `cutoff` queued tasks drained by a worker pool.
pub fn run_task_pool<F>(range: Range<usize>, plan: ExecPlan, body: F) -> Result<LaunchStats>
where
    F: Fn(Range<usize>) -> Result<()> + Sync,
{
    if plan.kind() != PlanKind::TaskPool {
        return Err(Error::InvalidArgument(format!(
            "{plan} is not a task-pool plan"
        )));
    }
    Executor::new(plan)?.run(range, body)
}

/// Convolves `image` under `plan`, creating the workers for this call only.
/// See [`Executor::convolve_image`].
pub fn convolve_image(
    image: &mut Image,
    scratch: &mut Image,
    k: &SeparableKernel,
    variant: ConvVariant,
    plan: ExecPlan,
) -> Result<LaunchStats> {
    Executor::new(plan)?.convolve_image(image, scratch, k, variant)
}

/// Mean wall time of one launch of no-op tasks under `plan`.
pub fn empty_task_overhead(plan: ExecPlan, launches: usize) -> Result<Duration> {
    if launches == 0 {
        return Err(Error::InvalidArgument("need at least one launch".into()));
    }
    let exec = Executor::new(plan)?;
    exec.time_empty_launches(1)?;
    Ok(exec.time_empty_launches(launches)? / launches as u32)
}
