//! Calibration workloads for the resource sampler.
//!
//! `sampler-fixture idle|spin|alloc [seconds]`: sleep, burn one core, or
//! touch 100 MiB and hold it, for the given time (default 5 s).

use std::hint::black_box;
use std::time::{Duration, Instant};

const ALLOC_BYTES: usize = 100 * 1024 * 1024;

fn main() {
    let mut args = std::env::args().skip(1);
    let mode = args.next().unwrap_or_default();
    let secs: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(5.0);
    let hold = Duration::from_secs_f64(secs);
    match mode.as_str() {
        "idle" => std::thread::sleep(hold),
        "spin" => {
            let end = Instant::now() + hold;
            let mut x = 0u64;
            while Instant::now() < end {
                for i in 0..10_000u64 {
                    x = black_box(x.wrapping_mul(6364136223846793005).wrapping_add(i));
                }
            }
            black_box(x);
        }
        "alloc" => {
            // Give a sampler time to record the baseline first.
            std::thread::sleep(Duration::from_millis(500));
            // Non-zero fill so every page is really touched.
            let block = black_box(vec![1u8; ALLOC_BYTES]);
            std::thread::sleep(hold);
            drop(block);
        }
        _ => {
            eprintln!("usage: sampler-fixture idle|spin|alloc [seconds]");
            std::process::exit(1);
        }
    }
}
