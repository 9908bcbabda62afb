//! Time sequential vs wavefront-scheduled grid recurrence evaluation at
//! production dimensions. Output equivalence is asserted before any timing
//! is reported; speedups are machine-dependent (anti-diagonal parallelism
//! needs more than one core to pay off).
//!
//!     cargo run --release -p sentigrid --example wavefront_bench

use std::time::Instant;

use rand::Rng;
use sentigrid::pair_encoder::{mdgru_naive, mdgru_wavefront, GruDirWeights, ScanDir};
use sentigrid::rng::SeedRng;
use sentigrid::tensor::Real;

fn main() {
    env_logger::init();
    let (d_in, h) = (200, 50);
    println!("n,workers,sequential_ms,wavefront_ms,speedup,max_deviation");
    for n in [32usize, 64, 96] {
        let mut rng = SeedRng::new(5).split_indexed("bench", n as u64);
        let w = GruDirWeights::random(d_in, h, &mut rng);
        let s: Vec<Real> = (0..n * n * d_in).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let t0 = Instant::now();
        let seq = mdgru_naive(&w, &s, None, n, ScanDir::DownRight, None);
        let seq_ms = t0.elapsed().as_secs_f64() * 1e3;

        for workers in [1usize, 2, 4] {
            let t1 = Instant::now();
            let wf = mdgru_wavefront(&w, &s, None, n, ScanDir::DownRight, None, workers);
            let wf_ms = t1.elapsed().as_secs_f64() * 1e3;
            let max_dev = seq.iter().zip(&wf).map(|(a, b)| (a - b).abs()).fold(0.0 as Real, Real::max);
            assert!(max_dev <= 1e-12, "schedule diverged: {max_dev:.3e}");
            println!("{n},{workers},{seq_ms:.2},{wf_ms:.2},{:.2},{max_dev:.1e}", seq_ms / wf_ms);
        }
    }
}
