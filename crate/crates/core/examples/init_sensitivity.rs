//! Final average F-score for several initial leaf priors at a fixed
//! initial transition probability.
//!
//! Usage: init_sensitivity [cells] [seed]

use geohmt::evaluation::score_map;
use geohmt::{build_tree, em_fit, generate, infer_greedy, EmOptions, SynthConfig};

fn main() -> geohmt::Result<()> {
    let mut args = std::env::args().skip(1);
    let cells: usize = args.next().map_or(1_000_000, |a| a.parse().expect("cells"));
    let seed: u64 = args.next().map_or(0, |a| a.parse().expect("seed"));
    let config = SynthConfig {
        seed,
        ..SynthConfig::default().scaled_to(cells)
    };
    let scene = generate(&config)?;
    let tree = build_tree(&scene.frame, config.neighborhood)?;
    let truth = scene.truth_pairs();
    println!("init_pi,final_pi,final_rho,iterations,avg_f");
    for init_pi in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let opts = EmOptions {
            init_pi,
            init_rho: 0.99,
            ..EmOptions::default()
        };
        let fit = em_fit(&tree, &scene.frame, &scene.training, &opts)?;
        let map = infer_greedy(&tree, &scene.frame, &fit.params)?;
        let report = score_map(&map, &tree, scene.frame.cell_count(), &truth)?;
        println!(
            "{init_pi},{:.4},{:.6},{},{:.6}",
            fit.params.pi,
            fit.params.rho,
            fit.iterations(),
            report.avg_f
        );
    }
    Ok(())
}
