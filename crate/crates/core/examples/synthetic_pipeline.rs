//! Generates a synthetic scene, fits the model, and compares tree inference
//! with the per-pixel classifier.
//!
//! ```text
//! cargo run --release --example synthetic_pipeline -- [cells] [sigma] [seed]
//! ```

use std::time::Instant;

use geohmt::evaluation::score_map;
use geohmt::{
    build_tree, em_fit, generate, infer_greedy, initialize, mlc_classify, EmOptions, SynthConfig,
};

fn main() -> geohmt::Result<()> {
    let mut args = std::env::args().skip(1);
    let cells: usize = args.next().map_or(1_000_000, |s| s.parse().expect("cells"));
    let sigma: f64 = args.next().map_or(20.0, |s| s.parse().expect("sigma"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));

    let config = SynthConfig {
        sigma1: sigma,
        sigma2: sigma,
        seed,
        ..SynthConfig::default()
    }
    .scaled_to(cells);
    let t = Instant::now();
    let scene = generate(&config)?;
    println!(
        "generated {}x{} in {:.2?}",
        config.rows,
        config.cols,
        t.elapsed()
    );

    let t = Instant::now();
    let tree = build_tree(&scene.frame, config.neighborhood)?;
    println!("tree {} in {:.2?}", tree.summary(), t.elapsed());

    let t = Instant::now();
    let fit = em_fit(&tree, &scene.frame, &scene.training, &EmOptions::default())?;
    println!(
        "EM: {} iterations, converged={}, loglik={:.3} in {:.2?}",
        fit.iterations(),
        fit.converged,
        fit.final_log_likelihood,
        t.elapsed()
    );
    println!("fitted pi={:.4} rho={:.6}", fit.params.pi, fit.params.rho);

    let truth = scene.truth_pairs();
    let n = scene.frame.cell_count();
    let hmt = infer_greedy(&tree, &scene.frame, &fit.params)?;
    let init = initialize(&scene.training, 0.5, 0.99)?;
    let mlc = mlc_classify(&tree, &scene.frame, &init)?;
    let hmt_r = score_map(&hmt, &tree, n, &truth)?;
    let mlc_r = score_map(&mlc, &tree, n, &truth)?;
    println!("HMT\n{}", hmt_r.to_table());
    println!("MLC\n{}", mlc_r.to_table());
    Ok(())
}
