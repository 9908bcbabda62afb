//! Finite-difference gradient check of the full model on a micro
//! configuration (6 tokens, d=8, 2 heads, 2 layers, pair hidden 4, quad
//! scans, dropout off): every parameter element's analytic gradient against
//! central differences at h=1e-5.
//!
//!     cargo run --release -p sentigrid --example grad_check

use std::time::Instant;

fn main() {
    env_logger::init();
    let start = Instant::now();
    let report = sentigrid::cli::micro_grad_check().expect("gradient check runs");
    println!("{report}");
    println!("elapsed: {:.1}s", start.elapsed().as_secs_f64());
    if !report.pass {
        std::process::exit(1);
    }
}
