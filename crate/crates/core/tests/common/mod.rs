//! Random instances and brute-force oracles shared by the integration tests.
//! The oracles work from the raw child links and never call the library's
//! message code.
#![allow(dead_code)]

use geohmt::model::Emissions;
use geohmt::{Class, DependencyTree, HmtParams, RasterFrame, DRY, FLOOD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random forest on `n` nodes in topological id order: each node's child has
/// a larger id. Favors nearby children so multi-parent merges are common.
pub fn random_child_links(rng: &mut impl Rng, n: usize) -> Vec<Option<usize>> {
    let root_p = rng.random_range(0.0..0.25);
    (0..n)
        .map(|i| {
            if i + 1 == n || rng.random_bool(root_p) {
                None
            } else {
                let span = rng.random_range(1..=3.min(n - 1 - i));
                Some(i + rng.random_range(1..=span))
            }
        })
        .collect()
}

pub fn chain_links(n: usize) -> Vec<Option<usize>> {
    (0..n).map(|i| (i + 1 < n).then_some(i + 1)).collect()
}

/// Random parameters with `m` bands and a valid covariance per class.
pub fn random_params(rng: &mut impl Rng, m: usize) -> HmtParams {
    let mut mu = [Vec::new(), Vec::new()];
    let mut sigma = [Vec::new(), Vec::new()];
    for c in 0..2 {
        mu[c] = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
        // A A^T + d I is symmetric positive definite.
        let a: Vec<f64> = (0..m * m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut s = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                s[i * m + j] = (0..m).map(|k| a[i * m + k] * a[j * m + k]).sum::<f64>();
            }
            s[i * m + i] += rng.random_range(0.2..1.5);
        }
        sigma[c] = s;
    }
    HmtParams {
        rho: rng.random_range(0.05..0.999),
        pi: rng.random_range(0.05..0.95),
        mu,
        sigma,
    }
}

/// A `1 x n` frame with random features; elevation is irrelevant when the
/// tree comes from explicit child links.
pub fn random_frame(rng: &mut impl Rng, n: usize, m: usize) -> RasterFrame {
    let features = (0..n * m).map(|_| rng.random_range(-3.0..3.0)).collect();
    RasterFrame::new(1, n, vec![0.0; n], features, m).unwrap()
}

pub struct Instance {
    pub child: Vec<Option<usize>>,
    pub tree: DependencyTree,
    pub frame: RasterFrame,
    pub params: HmtParams,
    pub em: Emissions,
}

impl Instance {
    pub fn random(rng: &mut impl Rng, child: Vec<Option<usize>>) -> Self {
        let n = child.len();
        let m = rng.random_range(1..=2);
        let tree = DependencyTree::from_child_links(child.clone()).unwrap();
        let frame = random_frame(rng, n, m);
        let params = random_params(rng, m);
        let em = Emissions::compute(&tree, &frame, &params).unwrap();
        Instance {
            child,
            tree,
            frame,
            params,
            em,
        }
    }

    pub fn random_forest(rng: &mut impl Rng, n: usize) -> Self {
        let child = random_child_links(rng, n);
        Self::random(rng, child)
    }

    /// An instance drawn from the model itself (one band), with at least
    /// three nodes of each class so the Gaussian fit is well posed. The
    /// returned parameters are a perturbed copy of the generating ones.
    pub fn sampled(rng: &mut impl Rng, n: usize) -> Self {
        loop {
            let child = random_child_links(rng, n);
            let tree = DependencyTree::from_child_links(child.clone()).unwrap();
            let truth = HmtParams {
                rho: rng.random_range(0.6..0.99),
                pi: rng.random_range(0.3..0.9),
                mu: [vec![0.0], vec![rng.random_range(1.5..4.0)]],
                sigma: [
                    vec![rng.random_range(0.5..1.5)],
                    vec![rng.random_range(0.5..1.5)],
                ],
            };
            let mut labels = vec![DRY; n];
            for &k in tree.topo_order() {
                let p = if tree.is_leaf(k) {
                    truth.pi
                } else if tree.parents(k).iter().all(|&j| labels[j] == FLOOD) {
                    truth.rho
                } else {
                    0.0
                };
                labels[k] = Class::from(rng.random_bool(p));
            }
            let floods = labels.iter().filter(|&&c| c == FLOOD).count();
            if floods < 3 || n - floods < 3 {
                continue;
            }
            let features = labels
                .iter()
                .map(|&c| {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    truth.mu[c as usize][0] + truth.sigma[c as usize][0].sqrt() * z
                })
                .collect();
            let frame = RasterFrame::new(1, n, vec![0.0; n], features, 1).unwrap();
            let mut params = truth.clone();
            params.rho = (params.rho + rng.random_range(-0.1..0.1)).clamp(0.05, 0.999);
            params.pi = (params.pi + rng.random_range(-0.2..0.2)).clamp(0.05, 0.95);
            params.mu[1][0] += rng.random_range(-0.5..0.5);
            let em = Emissions::compute(&tree, &frame, &params).unwrap();
            return Instance {
                child,
                tree,
                frame,
                params,
                em,
            };
        }
    }

    pub fn oracle(&self) -> Oracle {
        Oracle::new(&self.child, &self.params, &self.em)
    }
}

/// Exhaustive reference for the model's probabilities on tiny trees.
pub struct Oracle {
    pub n: usize,
    pub parents: Vec<Vec<usize>>,
    /// Root of each node's component.
    pub root: Vec<usize>,
    pub rho: f64,
    pub pi: f64,
    /// Linear emission densities.
    pub e: Vec<[f64; 2]>,
}

impl Oracle {
    pub fn new(child: &[Option<usize>], params: &HmtParams, em: &Emissions) -> Self {
        let n = child.len();
        let mut parents = vec![Vec::new(); n];
        for (k, c) in child.iter().enumerate() {
            if let Some(c) = c {
                parents[*c].push(k);
            }
        }
        let root = (0..n)
            .map(|mut k| {
                while let Some(c) = child[k] {
                    k = c;
                }
                k
            })
            .collect();
        Oracle {
            n,
            parents,
            root,
            rho: params.rho,
            pi: params.pi,
            e: (0..n).map(|i| em.get(i).map(f64::exp)).collect(),
        }
    }

    /// Prior or transition term of node `i` under `labels`.
    pub fn local(&self, i: usize, labels: &[Class]) -> f64 {
        let y = labels[i];
        if self.parents[i].is_empty() {
            return if y == FLOOD { self.pi } else { 1.0 - self.pi };
        }
        let all = self.parents[i].iter().all(|&k| labels[k] == FLOOD);
        match (y, all) {
            (FLOOD, true) => self.rho,
            (FLOOD, false) => 0.0,
            (_, true) => 1.0 - self.rho,
            (_, false) => 1.0,
        }
    }

    pub fn factor(&self, i: usize, labels: &[Class]) -> f64 {
        self.local(i, labels) * self.e[i][labels[i] as usize]
    }

    pub fn joint(&self, labels: &[Class]) -> f64 {
        (0..self.n).map(|i| self.factor(i, labels)).product()
    }

    /// Node and its strict ancestors.
    pub fn upstream(&self, node: usize) -> Vec<bool> {
        let mut mark = vec![false; self.n];
        let mut stack = vec![node];
        while let Some(k) = stack.pop() {
            if !mark[k] {
                mark[k] = true;
                stack.extend(&self.parents[k]);
            }
        }
        mark
    }

    /// Sums `f(labels)` over all labelings of `free`, with `fixed` held.
    pub fn sum_over(
        &self,
        free: &[usize],
        fixed: &[(usize, Class)],
        mut f: impl FnMut(&[Class]) -> f64,
    ) -> f64 {
        let mut labels = vec![DRY; self.n];
        for &(i, y) in fixed {
            labels[i] = y;
        }
        let mut total = 0.0;
        for mask in 0u32..(1 << free.len()) {
            for (b, &i) in free.iter().enumerate() {
                labels[i] = ((mask >> b) & 1) as Class;
            }
            total += f(&labels);
        }
        total
    }

    /// Strict ancestors, and the rest of the node's component.
    fn split(&self, node: usize) -> (Vec<usize>, Vec<usize>) {
        let up = self.upstream(node);
        let anc = (0..self.n).filter(|&i| up[i] && i != node).collect();
        let rest = (0..self.n)
            .filter(|&i| !up[i] && self.root[i] == self.root[node])
            .collect();
        (anc, rest)
    }

    /// P(x over strict ancestors, y_node = y).
    pub fn f_in(&self, node: usize, y: Class) -> f64 {
        let (anc, _) = self.split(node);
        self.sum_over(&anc, &[(node, y)], |l| {
            anc.iter().map(|&a| self.factor(a, l)).product::<f64>() * self.local(node, l)
        })
    }

    /// P(x over the node and its ancestors, y_node = y).
    pub fn f_out(&self, node: usize, y: Class) -> f64 {
        let (anc, _) = self.split(node);
        self.sum_over(&anc, &[(node, y)], |l| {
            anc.iter().map(|&a| self.factor(a, l)).product::<f64>() * self.factor(node, l)
        })
    }

    /// P(x outside the node and its ancestors | y_node = y).
    pub fn g_in(&self, node: usize, y: Class) -> f64 {
        let (_, rest) = self.split(node);
        self.sum_over(&rest, &[(node, y)], |l| {
            rest.iter().map(|&r| self.factor(r, l)).product()
        })
    }

    /// P(x outside the node's strict ancestors | y_node = y).
    pub fn g_out(&self, node: usize, y: Class) -> f64 {
        let (_, rest) = self.split(node);
        self.sum_over(&rest, &[(node, y)], |l| {
            self.e[node][y as usize] * rest.iter().map(|&r| self.factor(r, l)).product::<f64>()
        })
    }

    pub fn all_nodes(&self) -> Vec<usize> {
        (0..self.n).collect()
    }

    pub fn evidence(&self) -> f64 {
        self.sum_over(&self.all_nodes(), &[], |l| self.joint(l))
    }

    /// P(y_node = y | X).
    pub fn node_marginal(&self, node: usize, y: Class) -> f64 {
        let all = self.all_nodes();
        let z = self.evidence();
        self.sum_over(
            &all,
            &[],
            |l| if l[node] == y { self.joint(l) } else { 0.0 },
        ) / z
    }

    /// P(y_node = a, product of parent classes = b | X).
    pub fn pair_marginal(&self, node: usize, a: Class, b: Class) -> f64 {
        let all = self.all_nodes();
        let z = self.evidence();
        self.sum_over(&all, &[], |l| {
            let prod = Class::from(self.parents[node].iter().all(|&k| l[k] == FLOOD));
            if l[node] == a && prod == b {
                self.joint(l)
            } else {
                0.0
            }
        }) / z
    }
}

/// Relative error with an absolute floor for exact zeros.
pub fn rel_err(got: f64, want: f64) -> f64 {
    if got == want {
        0.0
    } else {
        (got - want).abs() / want.abs().max(1e-300)
    }
}

/// Independent count of parent-closed flood sets: a node is dry, or flooded
/// with every parent flooded, so `#(n) = Π #(p) + 1` over each component.
pub fn feasible_count(child: &[Option<usize>]) -> u64 {
    let n = child.len();
    let mut parents = vec![Vec::new(); n];
    for (k, c) in child.iter().enumerate() {
        if let Some(c) = c {
            parents[*c].push(k);
        }
    }
    fn count(n: usize, parents: &[Vec<usize>]) -> u64 {
        // Dry: each parent region is free. Flooded: everything upstream is.
        1 + parents[n]
            .iter()
            .map(|&p| count(p, parents))
            .product::<u64>()
    }
    (0..n)
        .filter(|&i| child[i].is_none())
        .map(|r| count(r, &parents))
        .product()
}

/// Largest relative error of the library's descaled messages, marginals and
/// evidence against exhaustive enumeration.
pub fn message_error(inst: &Instance) -> f64 {
    let step = geohmt::e_step(&inst.tree, &inst.em, &inst.params).unwrap();
    let o = inst.oracle();
    let msg = &step.messages;
    let mut worst: f64 = rel_err(step.log_likelihood().exp(), o.evidence());
    for node in 0..o.n {
        let fi = msg.descaled_f_in(node);
        let fo = msg.descaled_f_out(node);
        let gi = msg.descaled_g_in(node);
        let go = msg.descaled_g_out(node);
        let pm = step.posteriors.node_marginal(node);
        for y in [DRY, FLOOD] {
            let u = y as usize;
            worst = worst
                .max(rel_err(fi[u], o.f_in(node, y)))
                .max(rel_err(fo[u], o.f_out(node, y)))
                .max(rel_err(gi[u], o.g_in(node, y)))
                .max(rel_err(go[u], o.g_out(node, y)))
                .max(rel_err(pm[u], o.node_marginal(node, y)));
        }
        if let Some(q) = step.posteriors.pair_marginal(node) {
            for a in [DRY, FLOOD] {
                for b in [DRY, FLOOD] {
                    worst = worst.max(rel_err(
                        q[a as usize][b as usize],
                        o.pair_marginal(node, a, b),
                    ));
                }
            }
        }
    }
    worst
}

/// Inference instance `seed` of the greedy-versus-oracle comparison: every
/// fifth one is a pure chain, the rest random forests, all with at most 15
/// nodes.
pub fn inference_instance(seed: u64) -> Instance {
    let mut rng = rng(0x1_0000 + seed);
    let n = rng.random_range(1..=15);
    let child = if seed.is_multiple_of(5) {
        chain_links(n)
    } else {
        random_child_links(&mut rng, n)
    };
    Instance::random(&mut rng, child)
}

/// An instance where the greedy objective falls short of the exhaustive one.
#[derive(Debug, Clone, PartialEq)]
pub struct Counterexample {
    pub seed: u64,
    pub child: Vec<Option<usize>>,
    pub rho: f64,
    pub pi: f64,
    pub log_em: Vec<[f64; 2]>,
    pub greedy: f64,
    pub oracle: f64,
}

impl Counterexample {
    pub fn to_text(&self) -> String {
        let child: Vec<String> = self
            .child
            .iter()
            .map(|c| c.map_or("-".into(), |c| c.to_string()))
            .collect();
        let em: Vec<String> = self
            .log_em
            .iter()
            .map(|e| format!("{},{}", e[0], e[1]))
            .collect();
        format!(
            "seed {}\nchild {}\nrho {}\npi {}\nlog_em {}\ngreedy {}\noracle {}\n",
            self.seed,
            child.join(" "),
            self.rho,
            self.pi,
            em.join(" "),
            self.greedy,
            self.oracle
        )
    }

    pub fn parse_all(text: &str) -> Vec<Counterexample> {
        let mut out = Vec::new();
        let lines: Vec<&str> = text
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .collect();
        for block in lines.chunks(7) {
            let field = |i: usize, key: &str| {
                block[i]
                    .strip_prefix(key)
                    .unwrap_or_else(|| panic!("expected {key}: {}", block[i]))
                    .trim()
            };
            out.push(Counterexample {
                seed: field(0, "seed").parse().unwrap(),
                child: field(1, "child")
                    .split(' ')
                    .map(|c| {
                        if c == "-" {
                            None
                        } else {
                            Some(c.parse().unwrap())
                        }
                    })
                    .collect(),
                rho: field(2, "rho").parse().unwrap(),
                pi: field(3, "pi").parse().unwrap(),
                log_em: field(4, "log_em")
                    .split(' ')
                    .map(|e| {
                        let (a, b) = e.split_once(',').unwrap();
                        [a.parse().unwrap(), b.parse().unwrap()]
                    })
                    .collect(),
                greedy: field(5, "greedy").parse().unwrap(),
                oracle: field(6, "oracle").parse().unwrap(),
            });
        }
        out
    }
}

pub const COUNTEREXAMPLE_FIXTURE: &str = concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/tests/fixtures/greedy_counterexamples.txt"
);

/// Runs greedy and oracle on an instance; `Some` when greedy is strictly
/// worse beyond rounding.
pub fn compare_greedy(
    seed: u64,
    inst: &Instance,
) -> (geohmt::ClassMap, geohmt::ClassMap, Option<Counterexample>) {
    let g = geohmt::inference::infer_greedy_with(&inst.tree, &inst.em, &inst.params);
    let o = geohmt::inference::infer_oracle_with(&inst.tree, &inst.em, &inst.params).unwrap();
    let gap = o.objective - g.objective;
    let cx = (gap > 1e-9 * o.objective.abs().max(1.0)).then(|| Counterexample {
        seed,
        child: inst.child.clone(),
        rho: inst.params.rho,
        pi: inst.params.pi,
        log_em: (0..inst.child.len()).map(|i| inst.em.get(i)).collect(),
        greedy: g.objective,
        oracle: o.objective,
    });
    (g, o, cx)
}
