// Records whether this build lets LLVM auto-vectorize loops, so benchmark
// rows can say which ladder rung (scalar or SIMD) they measured.
use std::env;

fn main() {
    println!("cargo::rustc-check-cfg=cfg(sepconv_novec)");
    println!("cargo:rerun-if-env-changed=CARGO_ENCODED_RUSTFLAGS");

    let flags = env::var("CARGO_ENCODED_RUSTFLAGS").unwrap_or_default();
    let vec_disabled = flags
        .split('\x1f')
        .any(|f| f.contains("vectorize-loops=false") || f.contains("vectorize-slp=false"));
    let opt_level = env::var("OPT_LEVEL").unwrap_or_default();
    if vec_disabled || opt_level == "0" {
        println!("cargo:rustc-cfg=sepconv_novec");
    }
}
