//! Runs one E-step on a five-node tree and checks the evidence and node
//! marginals against brute-force enumeration of all 2^5 labelings.

use geohmt::learning::e_step;
use geohmt::model::{log_joint_with, Emissions};
use geohmt::{DependencyTree, HmtParams};

fn main() -> geohmt::Result<()> {
    // Nodes 0 and 1 both drain into 2; 2 and 3 drain into the root 4.
    let tree = DependencyTree::from_child_links(vec![Some(2), Some(2), Some(4), Some(4), None])?;
    let params = HmtParams {
        rho: 0.9,
        pi: 0.3,
        mu: [vec![0.0], vec![1.0]],
        sigma: [vec![1.0], vec![1.0]],
    };
    let em = Emissions::from_log_values(vec![
        [-1.2, -0.4],
        [-0.3, -1.5],
        [-0.9, -0.8],
        [-2.0, -0.2],
        [-0.5, -1.1],
    ]);
    let est = e_step(&tree, &em, &params)?;

    let n = tree.node_count();
    let mut evidence = 0.0;
    let mut flood = vec![0.0; n];
    for mask in 0u32..1 << n {
        let labels: Vec<u8> = (0..n).map(|i| ((mask >> i) & 1) as u8).collect();
        let p = log_joint_with(&tree, &em, &labels, &params).exp();
        evidence += p;
        for (f, &y) in flood.iter_mut().zip(&labels) {
            *f += p * f64::from(y);
        }
    }
    println!(
        "log-likelihood: messages {:.12}, enumeration {:.12}",
        est.log_likelihood(),
        evidence.ln()
    );
    for (i, f) in flood.iter().enumerate() {
        println!(
            "node {i}: P(flood) messages {:.9}, enumeration {:.9}",
            est.posteriors.node_marginal(i)[1],
            f / evidence
        );
    }
    Ok(())
}
