//! EM parameter estimation with sum-product message passing on the reverse
//! tree.
//!
//! Forward messages run leaves to root, backward messages root to leaves.
//! Messages are held in the log domain, shifted so the larger class entry is
//! 0, with the shift kept as a per-message offset:
//! `ln true = stored + log_offset`. Evidence along long chains routinely
//! separates the two classes by far more than the range of an `f64`, so
//! linear storage would lose the smaller entry.
//!
//! The transition kernel depends on the parents only through the product of
//! their classes, so sums over parent (or sibling) configurations collapse to
//! two terms: the all-flooded product `Π f(1)` and the remainder
//! `Π (f(0) + f(1)) - Π f(1)`. The remainder is accumulated directly as a sum
//! of non-negative terms, never by subtraction.

use crate::error::{Error, Result};
use crate::model::{regularize_covariance, Emissions, HmtParams};
use crate::raster::RasterFrame;
use crate::tree::DependencyTree;
use crate::{Class, FLOOD};

/// `ln(e^a + e^b)`, with `-inf` as the additive identity.
fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Log-domain product over a set of two-class messages. `all`: log of the
/// product of flooded entries. `rest`: log of the total product minus that.
#[derive(Debug, Clone, Copy, PartialEq)]
struct ProductPair {
    all: f64,
    rest: f64,
}

impl ProductPair {
    const EMPTY: ProductPair = ProductPair {
        all: 0.0,
        rest: f64::NEG_INFINITY,
    };

    fn push(self, msg: [f64; 2]) -> Self {
        ProductPair {
            all: self.all + msg[1],
            rest: log_add(self.rest + log_add(msg[0], msg[1]), self.all + msg[0]),
        }
    }

    fn join(self, other: ProductPair) -> Self {
        ProductPair {
            all: self.all + other.all,
            rest: log_add(self.rest + other.total(), self.all + other.rest),
        }
    }

    fn total(self) -> f64 {
        log_add(self.all, self.rest)
    }
}

/// Shifts a log message so its larger entry is 0; returns the shift.
fn normalize_log(raw: [f64; 2], node: usize, what: &str) -> Result<([f64; 2], f64)> {
    let m = raw[0].max(raw[1]);
    if !m.is_finite() {
        return Err(Error::numeric(
            Some(node),
            format!("{what} message has no finite positive entry: {raw:?}"),
        ));
    }
    Ok(([raw[0] - m, raw[1] - m], m))
}

fn absorb_emission(
    msg: [f64; 2],
    log_em: [f64; 2],
    node: usize,
    what: &str,
) -> Result<([f64; 2], f64)> {
    if !(log_em[0].max(log_em[1]).is_finite()) {
        return Err(Error::numeric(
            Some(node),
            format!("emission densities not finite: {log_em:?}"),
        ));
    }
    normalize_log([msg[0] + log_em[0], msg[1] + log_em[1]], node, what)
}

/// Forward (`f`) and backward (`g`) messages with per-node log offsets.
#[derive(Debug, Clone)]
pub struct MessageTable {
    f_in: Vec<[f64; 2]>,
    f_out: Vec<[f64; 2]>,
    g_in: Vec<[f64; 2]>,
    g_out: Vec<[f64; 2]>,
    f_in_log: Vec<f64>,
    f_out_log: Vec<f64>,
    g_in_log: Vec<f64>,
    g_out_log: Vec<f64>,
    log_likelihood: f64,
}

fn linear(msg: [f64; 2], log_offset: f64) -> [f64; 2] {
    [(msg[0] + log_offset).exp(), (msg[1] + log_offset).exp()]
}

impl MessageTable {
    /// Rescaled message, larger entry 1.
    pub fn f_in(&self, node: usize) -> [f64; 2] {
        linear(self.f_in[node], 0.0)
    }

    pub fn f_out(&self, node: usize) -> [f64; 2] {
        linear(self.f_out[node], 0.0)
    }

    pub fn g_in(&self, node: usize) -> [f64; 2] {
        linear(self.g_in[node], 0.0)
    }

    pub fn g_out(&self, node: usize) -> [f64; 2] {
        linear(self.g_out[node], 0.0)
    }

    /// Log offsets `(in, out)` of the rescaled forward messages.
    pub fn f_log_offsets(&self, node: usize) -> (f64, f64) {
        (self.f_in_log[node], self.f_out_log[node])
    }

    pub fn g_log_offsets(&self, node: usize) -> (f64, f64) {
        (self.g_in_log[node], self.g_out_log[node])
    }

    /// `ln P(x over the node's strict ancestors, y_n)`.
    pub fn log_f_in(&self, node: usize) -> [f64; 2] {
        let o = self.f_in_log[node];
        [self.f_in[node][0] + o, self.f_in[node][1] + o]
    }

    /// `ln P(x over the node and its ancestors, y_n)`.
    pub fn log_f_out(&self, node: usize) -> [f64; 2] {
        let o = self.f_out_log[node];
        [self.f_out[node][0] + o, self.f_out[node][1] + o]
    }

    /// `ln P(x outside the node and its ancestors | y_n)`.
    pub fn log_g_in(&self, node: usize) -> [f64; 2] {
        let o = self.g_in_log[node];
        [self.g_in[node][0] + o, self.g_in[node][1] + o]
    }

    /// `ln P(x outside the node's strict ancestors | y_n)`.
    pub fn log_g_out(&self, node: usize) -> [f64; 2] {
        let o = self.g_out_log[node];
        [self.g_out[node][0] + o, self.g_out[node][1] + o]
    }

    pub fn descaled_f_in(&self, node: usize) -> [f64; 2] {
        linear(self.f_in[node], self.f_in_log[node])
    }

    pub fn descaled_f_out(&self, node: usize) -> [f64; 2] {
        linear(self.f_out[node], self.f_out_log[node])
    }

    pub fn descaled_g_in(&self, node: usize) -> [f64; 2] {
        linear(self.g_in[node], self.g_in_log[node])
    }

    pub fn descaled_g_out(&self, node: usize) -> [f64; 2] {
        linear(self.g_out[node], self.g_out_log[node])
    }

    /// Observed-data log-likelihood `log P(X)`, summed over components.
    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }
}

/// Leaf-to-root pass filling the `f` messages.
pub fn forward_pass(
    tree: &DependencyTree,
    em: &Emissions,
    params: &HmtParams,
) -> Result<MessageTable> {
    let n = tree.node_count();
    if em.len() != n {
        return Err(Error::Dimension(format!(
            "{} emission rows for {n} nodes",
            em.len()
        )));
    }
    let (ln_rho, ln_leave) = (params.rho.ln(), (1.0 - params.rho).ln());
    let leaf_prior = [(1.0 - params.pi).ln(), params.pi.ln()];
    let mut f_in = vec![[0.0; 2]; n];
    let mut f_out = vec![[0.0; 2]; n];
    let mut f_in_log = vec![0.0; n];
    let mut f_out_log = vec![0.0; n];

    for &node in tree.topo_order() {
        let parents = tree.parents(node);
        if parents.is_empty() {
            let (msg, shift) = normalize_log(leaf_prior, node, "forward incoming")?;
            f_in[node] = msg;
            f_in_log[node] = shift;
        } else {
            let mut pair = ProductPair::EMPTY;
            let mut log_sum = 0.0;
            for &k in parents {
                pair = pair.push(f_out[k]);
                log_sum += f_out_log[k];
            }
            let raw = [log_add(pair.rest, pair.all + ln_leave), pair.all + ln_rho];
            let (msg, shift) = normalize_log(raw, node, "forward incoming")?;
            f_in[node] = msg;
            f_in_log[node] = log_sum + shift;
        }
        let (msg, shift) = absorb_emission(f_in[node], em.get(node), node, "forward outgoing")?;
        f_out[node] = msg;
        f_out_log[node] = f_in_log[node] + shift;
    }

    let log_likelihood = tree
        .roots()
        .iter()
        .map(|&r| f_out_log[r] + log_add(f_out[r][0], f_out[r][1]))
        .sum();

    Ok(MessageTable {
        f_in,
        f_out,
        g_in: Vec::new(),
        g_out: Vec::new(),
        f_in_log,
        f_out_log,
        g_in_log: Vec::new(),
        g_out_log: Vec::new(),
        log_likelihood,
    })
}

/// Root-to-leaf pass filling the `g` messages of a forward table.
pub fn backward_pass(
    tree: &DependencyTree,
    em: &Emissions,
    params: &HmtParams,
    mut table: MessageTable,
) -> Result<MessageTable> {
    let n = tree.node_count();
    if table.f_out.len() != n {
        return Err(Error::Dimension("forward table does not match tree".into()));
    }
    let (ln_rho, ln_leave) = (params.rho.ln(), (1.0 - params.rho).ln());
    table.g_in = vec![[0.0; 2]; n];
    table.g_out = vec![[0.0; 2]; n];
    table.g_in_log = vec![0.0; n];
    table.g_out_log = vec![0.0; n];

    let mut prefix: Vec<(ProductPair, f64)> = Vec::new();
    let mut suffix: Vec<(ProductPair, f64)> = Vec::new();
    for &child in tree.topo_order().iter().rev() {
        let (msg, shift) =
            absorb_emission(table.g_in[child], em.get(child), child, "backward outgoing")?;
        table.g_out[child] = msg;
        table.g_out_log[child] = table.g_in_log[child] + shift;

        let parents = tree.parents(child);
        if parents.is_empty() {
            continue;
        }
        // prefix[i] covers parents[..i], suffix[i] covers parents[i..].
        prefix.clear();
        suffix.clear();
        prefix.push((ProductPair::EMPTY, 0.0));
        for &k in parents {
            let (p, l) = *prefix.last().unwrap();
            prefix.push((p.push(table.f_out[k]), l + table.f_out_log[k]));
        }
        suffix.resize(parents.len() + 1, (ProductPair::EMPTY, 0.0));
        for (i, &k) in parents.iter().enumerate().rev() {
            let (p, l) = suffix[i + 1];
            suffix[i] = (p.push(table.f_out[k]), l + table.f_out_log[k]);
        }

        let go = table.g_out[child];
        let go_log = table.g_out_log[child];
        let child_given_flood = log_add(go[1] + ln_rho, go[0] + ln_leave);
        for (i, &node) in parents.iter().enumerate() {
            let sib = prefix[i].0.join(suffix[i + 1].0);
            let sib_log = prefix[i].1 + suffix[i + 1].1;
            let raw = [
                go[0] + sib.total(),
                log_add(sib.all + child_given_flood, sib.rest + go[0]),
            ];
            let (msg, shift) = normalize_log(raw, node, "backward incoming")?;
            table.g_in[node] = msg;
            table.g_in_log[node] = go_log + sib_log + shift;
        }
    }
    Ok(table)
}

/// Normalized node and (node, parent-product) posterior marginals.
#[derive(Debug, Clone)]
pub struct PosteriorTable {
    node: Vec<[f64; 2]>,
    /// `pair[n][y_n][y_parents]`; `None` for leaves.
    pair: Vec<Option<[[f64; 2]; 2]>>,
}

impl PosteriorTable {
    /// P(y_n | X).
    pub fn node_marginal(&self, node: usize) -> [f64; 2] {
        self.node[node]
    }

    /// P(y_n, y_parents | X) indexed `[y_n][y_parents]`; `None` for leaves.
    pub fn pair_marginal(&self, node: usize) -> Option<[[f64; 2]; 2]> {
        self.pair[node]
    }

    pub fn len(&self) -> usize {
        self.node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node.is_empty()
    }

    /// Builds a table directly; used by tests of the M-step.
    pub fn from_parts(node: Vec<[f64; 2]>, pair: Vec<Option<[[f64; 2]; 2]>>) -> Self {
        PosteriorTable { node, pair }
    }
}

/// Marginal posteriors from completed forward and backward passes.
pub fn posteriors(
    tree: &DependencyTree,
    em: &Emissions,
    params: &HmtParams,
    messages: &MessageTable,
) -> Result<PosteriorTable> {
    let n = tree.node_count();
    if messages.g_out.len() != n {
        return Err(Error::Dimension("backward pass has not been run".into()));
    }
    let (ln_rho, ln_leave) = (params.rho.ln(), (1.0 - params.rho).ln());
    let mut node_marg = Vec::with_capacity(n);
    let mut pair_marg = Vec::with_capacity(n);
    for node in 0..n {
        let le = em.get(node);
        let fi = messages.f_in[node];
        let gi = messages.g_in[node];
        let raw = [fi[0] + gi[0] + le[0], fi[1] + gi[1] + le[1]];
        let z = log_add(raw[0], raw[1]);
        if !z.is_finite() {
            return Err(Error::numeric(
                Some(node),
                "node posterior has zero normalizer",
            ));
        }
        node_marg.push([(raw[0] - z).exp(), (raw[1] - z).exp()]);

        let parents = tree.parents(node);
        if parents.is_empty() {
            pair_marg.push(None);
            continue;
        }
        let pair = parents
            .iter()
            .fold(ProductPair::EMPTY, |acc, &k| acc.push(messages.f_out[k]));
        let go = messages.g_out[node];
        let q11 = pair.all + go[1] + ln_rho;
        let q01 = pair.all + go[0] + ln_leave;
        let q00 = pair.rest + go[0];
        let z = log_add(log_add(q11, q01), q00);
        if !z.is_finite() {
            return Err(Error::numeric(
                Some(node),
                "pair posterior has zero normalizer",
            ));
        }
        pair_marg.push(Some([
            [(q00 - z).exp(), (q01 - z).exp()],
            [0.0, (q11 - z).exp()],
        ]));
    }
    Ok(PosteriorTable {
        node: node_marg,
        pair: pair_marg,
    })
}

/// One complete E-step.
#[derive(Debug, Clone)]
pub struct EStep {
    pub messages: MessageTable,
    pub posteriors: PosteriorTable,
}

impl EStep {
    pub fn log_likelihood(&self) -> f64 {
        self.messages.log_likelihood
    }
}

pub fn e_step(tree: &DependencyTree, em: &Emissions, params: &HmtParams) -> Result<EStep> {
    let messages = backward_pass(tree, em, params, forward_pass(tree, em, params)?)?;
    let posteriors = posteriors(tree, em, params, &messages)?;
    Ok(EStep {
        messages,
        posteriors,
    })
}

/// Closed-form parameter update from posterior marginals. Quantities without
/// support (no non-leaf nodes, no leaves, a class with zero weight) keep
/// their `previous` values.
pub fn m_step(
    tree: &DependencyTree,
    frame: &RasterFrame,
    post: &PosteriorTable,
    previous: &HmtParams,
) -> Result<HmtParams> {
    let n = tree.node_count();
    let m = frame.n_bands();
    if post.len() != n {
        return Err(Error::Dimension(format!(
            "{} posteriors for {n} nodes",
            post.len()
        )));
    }

    let (mut rho_num, mut rho_den) = (0.0, 0.0);
    let (mut pi_num, mut leaves) = (0.0, 0usize);
    let mut weight = [0.0f64; 2];
    let mut sum = [vec![0.0; m], vec![0.0; m]];
    for node in 0..n {
        let p = post.node[node];
        match post.pair[node] {
            Some(q) => {
                rho_num += q[1][1];
                rho_den += q[1][1] + q[0][1];
            }
            None => {
                pi_num += p[1];
                leaves += 1;
            }
        }
        let x = frame.features(tree.cell_of_node(node));
        for c in 0..2 {
            weight[c] += p[c];
            for (s, xi) in sum[c].iter_mut().zip(x) {
                *s += p[c] * xi;
            }
        }
    }

    let mut next = previous.clone();
    if rho_den > 0.0 {
        next.rho = rho_num / rho_den;
    } else {
        log::warn!(
            "no flooded parent mass on any non-leaf node; rho kept at {}",
            previous.rho
        );
    }
    if leaves > 0 {
        next.pi = pi_num / leaves as f64;
    } else {
        log::warn!("tree has no leaf nodes; pi kept at {}", previous.pi);
    }

    for c in 0..2 {
        if weight[c] <= 0.0 {
            log::warn!("class {c} has no posterior mass; its Gaussian is kept");
            continue;
        }
        let mean: Vec<f64> = sum[c].iter().map(|s| s / weight[c]).collect();
        let mut cov = vec![0.0; m * m];
        let mut d = vec![0.0; m];
        for node in 0..n {
            let w = post.node[node][c];
            if w == 0.0 {
                continue;
            }
            let x = frame.features(tree.cell_of_node(node));
            for i in 0..m {
                d[i] = x[i] - mean[i];
            }
            for i in 0..m {
                for j in 0..=i {
                    cov[i * m + j] += w * d[i] * d[j];
                }
            }
        }
        for i in 0..m {
            for j in 0..=i {
                let v = cov[i * m + j] / weight[c];
                cov[i * m + j] = v;
                cov[j * m + i] = v;
            }
        }
        next.sigma[c] = regularize_covariance(&cov, m)?;
        next.mu[c] = mean;
    }
    next.clamp_probabilities();
    Ok(next)
}

/// A labeled training example. `cell` is set when the sample comes from a
/// frame coordinate rather than a feature-only draw.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub features: Vec<f64>,
    pub class: Class,
    pub cell: Option<usize>,
}

/// Training samples from the labels attached to a frame.
pub fn training_from_frame(frame: &RasterFrame) -> Vec<TrainingSample> {
    frame
        .labeled_cells()
        .into_iter()
        .map(|(cell, class)| TrainingSample {
            features: frame.features(cell).to_vec(),
            class,
            cell: Some(cell),
        })
        .collect()
}

/// Maximum-likelihood Gaussian per class from labeled samples, with the
/// given starting `pi` and `rho`.
pub fn initialize(training: &[TrainingSample], init_pi: f64, init_rho: f64) -> Result<HmtParams> {
    for (name, p) in [("init_pi", init_pi), ("init_rho", init_rho)] {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Initialization(format!(
                "{name} must lie in (0, 1), got {p}"
            )));
        }
    }
    let m = training
        .first()
        .map(|s| s.features.len())
        .ok_or_else(|| Error::Initialization("no training samples".into()))?;
    if m == 0 || training.iter().any(|s| s.features.len() != m) {
        return Err(Error::Initialization(
            "training samples have inconsistent band counts".into(),
        ));
    }

    let mut mu: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut sigma: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for c in 0..2 {
        let samples: Vec<&[f64]> = training
            .iter()
            .filter(|s| s.class as usize == c)
            .map(|s| s.features.as_slice())
            .collect();
        if samples.len() < m + 1 {
            return Err(Error::Initialization(format!(
                "class {c} has {} training samples, need at least {}",
                samples.len(),
                m + 1
            )));
        }
        let count = samples.len() as f64;
        let mean: Vec<f64> = (0..m)
            .map(|i| samples.iter().map(|x| x[i]).sum::<f64>() / count)
            .collect();
        let mut cov = vec![0.0; m * m];
        for x in &samples {
            for i in 0..m {
                for j in 0..m {
                    cov[i * m + j] += (x[i] - mean[i]) * (x[j] - mean[j]);
                }
            }
        }
        cov.iter_mut().for_each(|v| *v /= count);
        sigma[c] = regularize_covariance(&cov, m).map_err(|_| {
            Error::Initialization(format!("class {c} training covariance is degenerate"))
        })?;
        mu[c] = mean;
    }
    Ok(HmtParams {
        rho: init_rho,
        pi: init_pi,
        mu,
        sigma,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmOptions {
    /// Stop once the infinity norm of the parameter change is at most this.
    pub epsilon: f64,
    pub max_iters: usize,
    pub init_pi: f64,
    pub init_rho: f64,
    /// Fix the posterior of training cells to their labels.
    pub clamp_labels: bool,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            epsilon: 1e-5,
            max_iters: 100,
            init_pi: 0.5,
            init_rho: 0.99,
            clamp_labels: false,
        }
    }
}

/// Parameters in effect during one E-step and the log-likelihood they gave.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub pi: f64,
    pub rho: f64,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub params: HmtParams,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    /// Log-likelihood under the returned parameters.
    pub final_log_likelihood: f64,
}

impl EmFit {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    /// `iter,pi,rho,loglik` CSV.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iter,pi,rho,loglik\n");
        for r in &self.trace {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.iteration, r.pi, r.rho, r.log_likelihood
            ));
        }
        out
    }
}

/// Semi-supervised EM: initialize from `training`, then iterate.
pub fn em_fit(
    tree: &DependencyTree,
    frame: &RasterFrame,
    training: &[TrainingSample],
    opts: &EmOptions,
) -> Result<EmFit> {
    let init = initialize(training, opts.init_pi, opts.init_rho)?;
    let clamped: Vec<(usize, Class)> = if opts.clamp_labels {
        training
            .iter()
            .filter_map(|s| {
                s.cell
                    .and_then(|c| tree.node_of_cell(c))
                    .map(|n| (n, s.class))
            })
            .collect()
    } else {
        Vec::new()
    };
    em_run(tree, frame, init, opts, &clamped)
}

/// EM from explicit starting parameters (no label clamping).
pub fn em_fit_from(
    tree: &DependencyTree,
    frame: &RasterFrame,
    init: HmtParams,
    opts: &EmOptions,
) -> Result<EmFit> {
    em_run(tree, frame, init, opts, &[])
}

fn em_run(
    tree: &DependencyTree,
    frame: &RasterFrame,
    init: HmtParams,
    opts: &EmOptions,
    clamped: &[(usize, Class)],
) -> Result<EmFit> {
    let emissions = |p: &HmtParams| -> Result<Emissions> {
        let mut em = Emissions::compute(tree, frame, p)?;
        em.clamp(clamped);
        Ok(em)
    };

    let mut params = init;
    params.validate()?;
    let mut trace = Vec::new();
    let mut converged = false;
    for iteration in 1..=opts.max_iters {
        let em = emissions(&params)?;
        let step = e_step(tree, &em, &params)?;
        trace.push(TraceRow {
            iteration,
            pi: params.pi,
            rho: params.rho,
            log_likelihood: step.log_likelihood(),
        });
        let next = m_step(tree, frame, &step.posteriors, &params)?;
        let change = next.max_abs_diff(&params);
        params = next;
        log::debug!(
            "em iteration {iteration}: loglik {} change {change}",
            step.log_likelihood()
        );
        if change <= opts.epsilon {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "EM stopped at {} iterations without converging",
            opts.max_iters
        );
    }
    let final_log_likelihood = forward_pass(tree, &emissions(&params)?, &params)?.log_likelihood();
    Ok(EmFit {
        params,
        trace,
        converged,
        final_log_likelihood,
    })
}

/// Expected complete-data log-likelihood of `params` under fixed posteriors
/// (the quantity the M-step maximizes).
pub fn expected_log_likelihood(
    tree: &DependencyTree,
    frame: &RasterFrame,
    post: &PosteriorTable,
    params: &HmtParams,
) -> Result<f64> {
    let em = Emissions::compute(tree, frame, params)?;
    let xlogy = |w: f64, lp: f64| if w == 0.0 { 0.0 } else { w * lp };
    let mut total = 0.0;
    for node in 0..tree.node_count() {
        let p = post.node[node];
        let le = em.get(node);
        total += p[0] * le[0] + p[1] * le[1];
        match post.pair[node] {
            Some(q) => {
                total += xlogy(q[1][1], params.rho.ln()) + xlogy(q[0][1], (1.0 - params.rho).ln());
            }
            None => {
                total +=
                    xlogy(p[FLOOD as usize], params.pi.ln()) + xlogy(p[0], (1.0 - params.pi).ln());
            }
        }
    }
    Ok(total)
}
