//! Trains on a small synthetic scene and prints the EM trace.
//!
//! Usage: em_training [cells] [seed]

use geohmt::{build_tree, em_fit, generate, EmOptions, SynthConfig};

fn main() -> geohmt::Result<()> {
    let mut args = std::env::args().skip(1);
    let cells: usize = args.next().map_or(250_000, |a| a.parse().expect("cells"));
    let seed: u64 = args.next().map_or(0, |a| a.parse().expect("seed"));
    let config = SynthConfig {
        seed,
        ..SynthConfig::default().scaled_to(cells)
    };
    let scene = generate(&config)?;
    let tree = build_tree(&scene.frame, config.neighborhood)?;
    let fit = em_fit(&tree, &scene.frame, &scene.training, &EmOptions::default())?;
    print!("{}", fit.trace_csv());
    println!(
        "converged={} iterations={} final_ll={:.3}",
        fit.converged,
        fit.iterations(),
        fit.final_log_likelihood
    );
    let p = &fit.params;
    println!(
        "rho={:.6} pi={:.4} mu0={:.2?} mu1={:.2?}",
        p.rho, p.pi, p.mu[0], p.mu[1]
    );
    Ok(())
}
