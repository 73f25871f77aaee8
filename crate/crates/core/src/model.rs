//! Model parameters and the three probability kernels of the hidden Markov
//! tree: Gaussian emission, partial-order class transition, leaf prior.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::raster::RasterFrame;
use crate::tree::DependencyTree;
use crate::{Class, DRY, FLOOD};

/// Lower/upper bound applied to `rho` and `pi` after every update.
pub const PROB_FLOOR: f64 = 1e-6;

/// Ridge factor (relative to the mean diagonal) added when a covariance
/// fails to factorize.
pub const COV_RIDGE: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Θ: transition probability, leaf prior and one Gaussian per class.
/// Covariances are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HmtParams {
    /// P(child flooded | all parents flooded).
    pub rho: f64,
    /// P(leaf flooded).
    pub pi: f64,
    pub mu: [Vec<f64>; 2],
    pub sigma: [Vec<f64>; 2],
}

impl HmtParams {
    pub fn n_bands(&self) -> usize {
        self.mu[0].len()
    }

    /// Checks shapes, probability ranges and covariance definiteness.
    pub fn validate(&self) -> Result<()> {
        let m = self.n_bands();
        if m == 0 || self.mu[1].len() != m || self.sigma.iter().any(|s| s.len() != m * m) {
            return Err(Error::Dimension(format!(
                "parameter shapes inconsistent: mu lengths {}/{}, sigma lengths {}/{}",
                self.mu[0].len(),
                self.mu[1].len(),
                self.sigma[0].len(),
                self.sigma[1].len()
            )));
        }
        for (name, p) in [("rho", self.rho), ("pi", self.pi)] {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {p}")));
            }
        }
        for c in 0..2 {
            let s = &self.sigma[c];
            for i in 0..m {
                for j in 0..i {
                    let (a, b) = (s[i * m + j], s[j * m + i]);
                    if (a - b).abs() > 1e-9 * (a.abs() + b.abs()).max(1.0) {
                        return Err(Error::numeric(None, format!("sigma{c} is not symmetric")));
                    }
                }
            }
            GaussianKernel::new(&self.mu[c], s)?;
        }
        Ok(())
    }

    /// Clamps `rho` and `pi` into `[PROB_FLOOR, 1 - PROB_FLOOR]`.
    pub fn clamp_probabilities(&mut self) {
        self.rho = self.rho.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        self.pi = self.pi.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    }

    /// Scalar parameters in a fixed order: pi, rho, mu0, mu1, sigma0, sigma1.
    pub fn scalars(&self) -> impl Iterator<Item = f64> + '_ {
        [self.pi, self.rho]
            .into_iter()
            .chain(self.mu.iter().flatten().copied())
            .chain(self.sigma.iter().flatten().copied())
    }

    /// Infinity norm of the difference between two parameter sets.
    pub fn max_abs_diff(&self, other: &HmtParams) -> f64 {
        self.scalars()
            .zip(other.scalars())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn kernels(&self) -> Result<[GaussianKernel; 2]> {
        Ok([
            GaussianKernel::new(&self.mu[DRY as usize], &self.sigma[DRY as usize])?,
            GaussianKernel::new(&self.mu[FLOOD as usize], &self.sigma[FLOOD as usize])?,
        ])
    }

    /// Key/value text form: `pi`, `rho`, `mu0`, `mu1`, `sigma0`, `sigma1`.
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut out = String::new();
        let _ = writeln!(out, "pi={}", self.pi);
        let _ = writeln!(out, "rho={}", self.rho);
        let _ = writeln!(out, "mu0={}", join(&self.mu[0]));
        let _ = writeln!(out, "mu1={}", join(&self.mu[1]));
        let _ = writeln!(out, "sigma0={}", join(&self.sigma[0]));
        let _ = writeln!(out, "sigma1={}", join(&self.sigma[1]));
        out
    }

    pub fn from_text(text: &str, source: &str) -> Result<Self> {
        let format_err = |line: usize, message: String| Error::Format {
            path: source.to_string(),
            line,
            message,
        };
        let mut pi = None;
        let mut rho = None;
        let mut mu: [Option<Vec<f64>>; 2] = [None, None];
        let mut sigma: [Option<Vec<f64>>; 2] = [None, None];
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format_err(i + 1, format!("expected key=value, found `{line}`")))?;
            let values: Vec<f64> = value
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| format_err(i + 1, format!("unparseable values in `{line}`")))?;
            let scalar = || -> Result<f64> {
                match values.as_slice() {
                    [v] => Ok(*v),
                    _ => Err(format_err(
                        i + 1,
                        format!("`{}` takes one value", key.trim()),
                    )),
                }
            };
            match key.trim() {
                "pi" => pi = Some(scalar()?),
                "rho" => rho = Some(scalar()?),
                "mu0" => mu[0] = Some(values),
                "mu1" => mu[1] = Some(values),
                "sigma0" => sigma[0] = Some(values),
                "sigma1" => sigma[1] = Some(values),
                other => return Err(format_err(i + 1, format!("unknown key `{other}`"))),
            }
        }
        let missing = |k: &str| format_err(0, format!("missing key `{k}`"));
        let [mu0, mu1] = mu;
        let [s0, s1] = sigma;
        let params = HmtParams {
            pi: pi.ok_or_else(|| missing("pi"))?,
            rho: rho.ok_or_else(|| missing("rho"))?,
            mu: [
                mu0.ok_or_else(|| missing("mu0"))?,
                mu1.ok_or_else(|| missing("mu1"))?,
            ],
            sigma: [
                s0.ok_or_else(|| missing("sigma0"))?,
                s1.ok_or_else(|| missing("sigma1"))?,
            ],
        };
        params.validate()?;
        Ok(params)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }
}

/// A factorized multivariate Gaussian density.
#[derive(Debug, Clone)]
pub struct GaussianKernel {
    mean: Vec<f64>,
    /// Inverse of the lower Cholesky factor, row-major.
    inv_chol: Vec<f64>,
    log_norm: f64,
}

impl GaussianKernel {
    pub fn new(mean: &[f64], cov: &[f64]) -> Result<Self> {
        let m = mean.len();
        if cov.len() != m * m {
            return Err(Error::Dimension(format!(
                "covariance has {} entries for {m} bands",
                cov.len()
            )));
        }
        let chol = DMatrix::from_row_slice(m, m, cov)
            .cholesky()
            .ok_or_else(|| Error::numeric(None, "covariance is not positive definite"))?;
        let l = chol.l();
        let log_det_half: f64 = (0..m).map(|i| l[(i, i)].ln()).sum();
        let inv = l
            .solve_lower_triangular(&DMatrix::identity(m, m))
            .ok_or_else(|| Error::numeric(None, "singular Cholesky factor"))?;
        let mut inv_chol = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..=i {
                inv_chol[i * m + j] = inv[(i, j)];
            }
        }
        let log_norm = -0.5 * m as f64 * LN_2PI - log_det_half;
        if !log_norm.is_finite() {
            return Err(Error::numeric(None, "covariance determinant out of range"));
        }
        Ok(GaussianKernel {
            mean: mean.to_vec(),
            inv_chol,
            log_norm,
        })
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let m = self.mean.len();
        let mut quad = 0.0;
        for i in 0..m {
            let row = &self.inv_chol[i * m..i * m + i + 1];
            let z: f64 = row
                .iter()
                .zip(x.iter().zip(&self.mean))
                .map(|(l, (xi, mi))| l * (xi - mi))
                .sum();
            quad += z * z;
        }
        self.log_norm - 0.5 * quad
    }
}

/// Attempts a Cholesky factorization; on failure adds
/// `COV_RIDGE * mean(diag) * I` and retries once.
pub fn regularize_covariance(cov: &[f64], m: usize) -> Result<Vec<f64>> {
    let factorizes = |c: &[f64]| DMatrix::from_row_slice(m, m, c).cholesky().is_some();
    if factorizes(cov) {
        return Ok(cov.to_vec());
    }
    let mean_diag = (0..m).map(|i| cov[i * m + i]).sum::<f64>() / m as f64;
    let mut ridged = cov.to_vec();
    for i in 0..m {
        ridged[i * m + i] += COV_RIDGE * mean_diag;
    }
    if factorizes(&ridged) {
        Ok(ridged)
    } else {
        Err(Error::numeric(
            None,
            "covariance not positive definite after regularization",
        ))
    }
}

/// log N(x; mu_c, Sigma_c).
pub fn log_emission(params: &HmtParams, x: &[f64], class: Class) -> Result<f64> {
    let c = class as usize;
    if x.len() != params.mu[c].len() {
        return Err(Error::Dimension(format!(
            "feature vector has {} bands, parameters have {}",
            x.len(),
            params.mu[c].len()
        )));
    }
    Ok(GaussianKernel::new(&params.mu[c], &params.sigma[c])?.log_density(x))
}

/// log P(y_child | product of parent classes); `-inf` for a flooded child
/// under a dry parent.
pub fn log_transition(child: Class, parent_product: Class, params: &HmtParams) -> f64 {
    match (child, parent_product) {
        (DRY, DRY) => 0.0,
        (FLOOD, DRY) => f64::NEG_INFINITY,
        (FLOOD, _) => params.rho.ln(),
        (_, _) => (1.0 - params.rho).ln(),
    }
}

pub fn log_leaf_prior(class: Class, params: &HmtParams) -> f64 {
    if class == FLOOD {
        params.pi.ln()
    } else {
        (1.0 - params.pi).ln()
    }
}

/// Per-node log emission densities for both classes.
#[derive(Debug, Clone)]
pub struct Emissions {
    log: Vec<[f64; 2]>,
}

impl Emissions {
    pub fn compute(tree: &DependencyTree, frame: &RasterFrame, params: &HmtParams) -> Result<Self> {
        if frame.n_bands() != params.n_bands() {
            return Err(Error::Dimension(format!(
                "frame has {} bands, parameters have {}",
                frame.n_bands(),
                params.n_bands()
            )));
        }
        let [k0, k1] = params.kernels()?;
        let log = (0..tree.node_count())
            .map(|n| {
                let x = frame.features(tree.cell_of_node(n));
                [k0.log_density(x), k1.log_density(x)]
            })
            .collect();
        Ok(Emissions { log })
    }

    pub fn from_log_values(log: Vec<[f64; 2]>) -> Self {
        Emissions { log }
    }

    /// Forces the given nodes to their class by zeroing the other class.
    pub fn clamp(&mut self, clamped: &[(usize, Class)]) {
        for &(node, class) in clamped {
            self.log[node][1 - class as usize] = f64::NEG_INFINITY;
        }
    }

    pub fn get(&self, node: usize) -> [f64; 2] {
        self.log[node]
    }

    pub fn len(&self) -> usize {
        self.log.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log.is_empty()
    }
}

/// log P(X, Y) for a full labeling of the tree's nodes.
pub fn log_joint(
    tree: &DependencyTree,
    frame: &RasterFrame,
    labels: &[Class],
    params: &HmtParams,
) -> Result<f64> {
    let em = Emissions::compute(tree, frame, params)?;
    Ok(log_joint_with(tree, &em, labels, params))
}

/// [`log_joint`] with precomputed emissions.
pub fn log_joint_with(
    tree: &DependencyTree,
    em: &Emissions,
    labels: &[Class],
    params: &HmtParams,
) -> f64 {
    assert_eq!(labels.len(), tree.node_count(), "one label per node");
    let mut total = 0.0;
    for n in 0..tree.node_count() {
        let y = labels[n];
        total += em.get(n)[y as usize];
        total += if tree.is_leaf(n) {
            log_leaf_prior(y, params)
        } else {
            let product = tree.parents(n).iter().all(|&k| labels[k] == FLOOD) as Class;
            log_transition(y, product, params)
        };
    }
    total
}
