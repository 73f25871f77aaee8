//! Per-phase timings on synthetic scenes of growing size with a fixed number
//! of EM iterations.
//!
//! ```text
//! cargo run --release --example scalability -- [repeats] [sizes,...]
//! ```

use geohmt::{run_benchmark, BenchConfig};

fn main() -> geohmt::Result<()> {
    let mut args = std::env::args().skip(1);
    let repeats = args.next().map_or(3, |s| s.parse().expect("repeats"));
    let sizes = args.next().map_or_else(
        || vec![1_000_000, 2_000_000, 4_000_000],
        |s| s.split(',').map(|v| v.parse().expect("size")).collect(),
    );
    let report = run_benchmark(&BenchConfig {
        sizes,
        repeats,
        ..BenchConfig::default()
    })?;
    print!("{}", report.to_csv());
    for pair in report.rows.windows(2) {
        println!(
            "learn ratio {} -> {}: {:.3}",
            pair[0].target,
            pair[1].target,
            pair[1].learn_s / pair[0].learn_s
        );
    }
    Ok(())
}
