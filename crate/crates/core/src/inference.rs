//! Class inference: the leaf-to-root frontier scan, an exhaustive oracle for
//! small trees, and map rendering.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{log_joint_with, Emissions, HmtParams};
use crate::raster::{write_grid, GridLayer, RasterFrame};
use crate::tree::DependencyTree;
use crate::{Class, DRY, FLOOD};

/// Largest tree the exhaustive oracle accepts.
pub const ORACLE_MAX_NODES: usize = 20;

/// One class per tree node plus the log joint probability of that labeling.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMap {
    pub labels: Vec<Class>,
    pub objective: f64,
}

impl ClassMap {
    pub fn flood_count(&self) -> usize {
        self.labels.iter().filter(|&&c| c == FLOOD).count()
    }

    /// Labels re-indexed by raster cell; `None` for cells outside the tree.
    pub fn to_cells(&self, tree: &DependencyTree, cell_count: usize) -> Vec<Option<Class>> {
        let mut out = vec![None; cell_count];
        for (node, &label) in self.labels.iter().enumerate() {
            out[tree.cell_of_node(node)] = Some(label);
        }
        out
    }
}

/// Per-node sweep state of the frontier scan.
#[derive(Debug, Clone)]
pub struct FrontierGains {
    /// Gain of flooding the node together with all of its ancestors.
    pub current: Vec<f64>,
    /// Best gain found anywhere in the node's upstream region.
    pub best: Vec<f64>,
}

/// Leaf-to-root sweep. All nodes start dry and are flipped to flood in
/// topological order; each flip's reward change counts the node's emission,
/// its own transition (all parents already flooded) and the edge to its
/// child, which changes only when the node is the last of the child's
/// parents to flip.
pub fn frontier_gains(tree: &DependencyTree, em: &Emissions, params: &HmtParams) -> FrontierGains {
    let n = tree.node_count();
    let ln_rho_odds = params.rho.ln() - (1.0 - params.rho).ln();
    let ln_pi_odds = params.pi.ln() - (1.0 - params.pi).ln();
    let ln_leave = (1.0 - params.rho).ln();
    let mut current = vec![0.0; n];
    let mut best = vec![0.0; n];
    for &node in tree.topo_order() {
        let le = em.get(node);
        let parents = tree.parents(node);
        let mut delta = le[1] - le[0];
        delta += if parents.is_empty() {
            ln_pi_odds
        } else {
            ln_rho_odds
        };
        if let Some(c) = tree.child(node) {
            if tree.parents(c).last() == Some(&node) {
                delta += ln_leave;
            }
        }
        let (mut cur, mut max) = (0.0, 0.0);
        for &k in parents {
            cur += current[k];
            max += best[k];
        }
        current[node] = cur + delta;
        best[node] = if max < current[node] {
            current[node]
        } else {
            max
        };
    }
    FrontierGains { current, best }
}

/// Frontier-scan inference. Reconstruction runs root to leaf: where flooding
/// the whole upstream region of an examined node attains the best gain (ties
/// flood), that region is flooded; otherwise the node stays dry and each
/// parent is examined in turn.
pub fn infer_greedy(
    tree: &DependencyTree,
    frame: &RasterFrame,
    params: &HmtParams,
) -> Result<ClassMap> {
    let em = Emissions::compute(tree, frame, params)?;
    Ok(infer_greedy_with(tree, &em, params))
}

pub fn infer_greedy_with(tree: &DependencyTree, em: &Emissions, params: &HmtParams) -> ClassMap {
    const SKIP: u8 = 0;
    const EXAMINE: u8 = 1;
    const FORCED: u8 = 2;
    let gains = frontier_gains(tree, em, params);
    let mut state = vec![SKIP; tree.node_count()];
    for &r in tree.roots() {
        state[r] = EXAMINE;
    }
    let mut labels = vec![DRY; tree.node_count()];
    // Reverse topological order visits each child before its parents, so a
    // node's state is final when reached.
    for &node in tree.topo_order().iter().rev() {
        let next = match state[node] {
            FORCED => FORCED,
            EXAMINE if gains.current[node] >= gains.best[node] => FORCED,
            EXAMINE => EXAMINE,
            _ => continue,
        };
        if next == FORCED {
            labels[node] = FLOOD;
        }
        for &k in tree.parents(node) {
            state[k] = next;
        }
    }
    let objective = log_joint_with(tree, em, &labels, params);
    ClassMap { labels, objective }
}

/// Visits every feasible labeling (flood set closed under parents).
pub fn enumerate_feasible(tree: &DependencyTree, mut visit: impl FnMut(&[Class])) {
    fn recurse(
        tree: &DependencyTree,
        pos: usize,
        labels: &mut Vec<Class>,
        visit: &mut dyn FnMut(&[Class]),
    ) {
        if pos == tree.node_count() {
            visit(labels);
            return;
        }
        let node = tree.topo_order()[pos];
        labels[node] = DRY;
        recurse(tree, pos + 1, labels, visit);
        if tree.parents(node).iter().all(|&k| labels[k] == FLOOD) {
            labels[node] = FLOOD;
            recurse(tree, pos + 1, labels, visit);
            labels[node] = DRY;
        }
    }
    let mut labels = vec![DRY; tree.node_count()];
    recurse(tree, 0, &mut labels, &mut visit);
}

/// Exact maximizer of the log joint over all feasible labelings. Ties go to
/// more flooded nodes, then to the lexicographically larger labeling.
pub fn infer_oracle(
    tree: &DependencyTree,
    frame: &RasterFrame,
    params: &HmtParams,
) -> Result<ClassMap> {
    let em = Emissions::compute(tree, frame, params)?;
    infer_oracle_with(tree, &em, params)
}

pub fn infer_oracle_with(
    tree: &DependencyTree,
    em: &Emissions,
    params: &HmtParams,
) -> Result<ClassMap> {
    if tree.node_count() > ORACLE_MAX_NODES {
        return Err(Error::Size(format!(
            "oracle enumerates at most {ORACLE_MAX_NODES} nodes, tree has {}",
            tree.node_count()
        )));
    }
    let mut best: Option<(f64, usize, Vec<Class>)> = None;
    enumerate_feasible(tree, |labels| {
        let score = log_joint_with(tree, em, labels, params);
        let floods = labels.iter().filter(|&&c| c == FLOOD).count();
        let better = match &best {
            None => true,
            Some((s, f, l)) => {
                score > *s
                    || (score == *s && (floods > *f || (floods == *f && labels > l.as_slice())))
            }
        };
        if better {
            best = Some((score, floods, labels.to_vec()));
        }
    });
    let (objective, _, labels) = best.expect("at least the all-dry labeling is feasible");
    Ok(ClassMap { labels, objective })
}

/// Class map as a grid layer: 0/1 on tree cells, NODATA elsewhere.
pub fn classmap_layer(map: &ClassMap, tree: &DependencyTree, frame: &RasterFrame) -> GridLayer {
    let cells = map.to_cells(tree, frame.cell_count());
    frame.layer_from(|c| cells[c].map(f64::from))
}

/// Writes the class map as an ASCII grid.
pub fn render_map(
    map: &ClassMap,
    tree: &DependencyTree,
    frame: &RasterFrame,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_grid(path, &classmap_layer(map, tree, frame))
}

pub const FLOOD_RGB: [u8; 3] = [139, 69, 19];
pub const DRY_RGB: [u8; 3] = [34, 139, 34];
pub const INVALID_RGB: [u8; 3] = [255, 255, 255];

/// Binary PPM (P6): flood brown, dry green, invalid white.
pub fn render_ppm(
    map: &ClassMap,
    tree: &DependencyTree,
    frame: &RasterFrame,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let cells = map.to_cells(tree, frame.cell_count());
    let mut bytes = format!("P6\n{} {}\n255\n", frame.n_cols(), frame.n_rows()).into_bytes();
    for c in cells {
        bytes.extend_from_slice(match c {
            Some(FLOOD) => &FLOOD_RGB,
            Some(_) => &DRY_RGB,
            None => &INVALID_RGB,
        });
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}
