//! Separable 2D image convolution under several loop structures and
//! scheduling models, with the timing harness used to compare them.
//!
//! The pieces, bottom up:
//!
//! * [`image`]: `f32` planes, multi-plane images, synthetic inputs, PPM I/O.
//! * [`kernel`]: 1-D weight vectors and their outer-product matrices.
//! * [`conv`]: sequential single-pass and two-pass convolution, copy-back and
//!   exact operation counts.
//! * [`exec`]: sequential, static row-chunked and task-pool executors.
//! * [`bench`]: the optimisation ladder, speedups and CSV output.
//!
//! ```
//! use sepconv::{make_synthetic, ConvVariant, ExecPlan, SeparableKernel};
//!
//! let mut image = make_synthetic(64, 64, 3, 42).unwrap();
//! let mut scratch = image.clone();
//! let k = SeparableKernel::gaussian5();
//! let plan = ExecPlan::StaticChunked { workers: 2 };
//! let stats = sepconv::convolve_image(&mut image, &mut scratch, &k, ConvVariant::two_pass(), plan).unwrap();
//! assert_eq!(stats.parallel_region_launches, 6);
//! ```

pub mod bench;
pub mod conv;
pub mod error;
pub mod exec;
pub mod image;
pub mod kernel;

pub use conv::{Algorithm, ArithCount, ConvVariant};
pub use error::{Error, Result};
pub use exec::{convolve_image, partition_block, ExecPlan, Executor, LaunchStats, PlanKind};
pub use image::{make_synthetic, Image, Plane, ValidRegion};
pub use kernel::{DenseKernel, SeparableKernel};

/// Whether this build let the compiler auto-vectorize loops. Disable with
/// `RUSTFLAGS="-C llvm-args=-vectorize-loops=false -C llvm-args=-vectorize-slp=false"`.
pub const BUILD_VECTORIZED: bool = !cfg!(sepconv_novec);
