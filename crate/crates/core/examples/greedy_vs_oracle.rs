//! Compares the frontier scan against exhaustive search over feasible
//! labelings on random small trees and reports how often the scan falls
//! short of the maximum.
//!
//! Usage: greedy_vs_oracle [instances] [seed]

use geohmt::inference::{infer_greedy_with, infer_oracle_with};
use geohmt::model::Emissions;
use geohmt::{DependencyTree, HmtParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> geohmt::Result<()> {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().map_or(500, |a| a.parse().expect("instances"));
    let seed: u64 = args.next().map_or(0, |a| a.parse().expect("seed"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut gaps, mut chains, mut worst) = (0, 0, 0.0f64);
    for _ in 0..count {
        let n = rng.random_range(1..=14);
        let single_parent = rng.random_bool(0.3);
        let links: Vec<Option<usize>> = (0..n)
            .map(|i| match i + 1 == n {
                true => None,
                false if single_parent => Some(i + 1),
                false => Some(rng.random_range(i + 1..n)),
            })
            .collect();
        let tree = DependencyTree::from_child_links(links)?;
        let params = HmtParams {
            rho: rng.random_range(0.5..0.999),
            pi: rng.random_range(0.05..0.95),
            mu: [vec![0.0], vec![1.0]],
            sigma: [vec![1.0], vec![1.0]],
        };
        let em = Emissions::from_log_values(
            (0..n)
                .map(|_| [-rng.random_range(0.1..4.0), -rng.random_range(0.1..4.0)])
                .collect(),
        );
        let greedy = infer_greedy_with(&tree, &em, &params).objective;
        let best = infer_oracle_with(&tree, &em, &params)?.objective;
        let gap = best - greedy;
        chains += usize::from(single_parent);
        if gap > 1e-9 * best.abs().max(1.0) {
            gaps += 1;
            worst = worst.max(gap);
        }
    }
    println!(
        "{count} instances ({chains} chains): scan below maximum on {gaps}, largest gap {worst:.4}"
    );
    Ok(())
}
