//! Average F-score of the tree model and of per-pixel maximum likelihood as
//! the class feature spread grows.
//!
//! Usage: sigma_sweep [cells] [seed]

use geohmt::evaluation::score_map;
use geohmt::{
    build_tree, em_fit, generate, infer_greedy, initialize, mlc_classify, EmOptions, SynthConfig,
};

fn main() -> geohmt::Result<()> {
    let mut args = std::env::args().skip(1);
    let cells: usize = args.next().map_or(1_000_000, |a| a.parse().expect("cells"));
    let seed: u64 = args.next().map_or(0, |a| a.parse().expect("seed"));
    let opts = EmOptions::default();
    println!("sigma,hmt_avg_f,mlc_avg_f,em_iterations");
    for sigma in [10.0, 20.0, 30.0, 40.0] {
        let config = SynthConfig {
            sigma1: sigma,
            sigma2: sigma,
            seed,
            ..SynthConfig::default().scaled_to(cells)
        };
        let scene = generate(&config)?;
        let tree = build_tree(&scene.frame, config.neighborhood)?;
        let fit = em_fit(&tree, &scene.frame, &scene.training, &opts)?;
        let truth = scene.truth_pairs();
        let n = scene.frame.cell_count();
        let hmt = score_map(
            &infer_greedy(&tree, &scene.frame, &fit.params)?,
            &tree,
            n,
            &truth,
        )?;
        let init = initialize(&scene.training, opts.init_pi, opts.init_rho)?;
        let mlc = score_map(&mlc_classify(&tree, &scene.frame, &init)?, &tree, n, &truth)?;
        println!(
            "{sigma},{:.6},{:.6},{}",
            hmt.avg_f,
            mlc.avg_f,
            fit.iterations()
        );
    }
    Ok(())
}
