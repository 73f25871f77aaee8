//! Reverse dependency tree built from the elevation layer.
//!
//! Cells are inserted in ascending elevation order (ties broken by row-major
//! cell index). A cell with no already-inserted neighbor starts a new branch
//! as a leaf; otherwise it is attached below the rear of every neighboring
//! branch, once per distinct rear, and becomes the rear of the merged branch.
//! Each node therefore has at most one child and possibly many parents, and
//! edges always run from earlier-inserted (lower) to later-inserted (higher)
//! cells.
//!
//! The rear of a branch is the one node in it that has no child yet, so the
//! branch is tracked with a union-find whose representative stores the rear.

use std::fmt;

use crate::error::{Error, Result};
use crate::raster::RasterFrame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Neighborhood {
    #[default]
    Four,
    Eight,
}

impl Neighborhood {
    fn offsets(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
        const EIGHT: [(isize, isize); 8] = [
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ];
        match self {
            Neighborhood::Four => &FOUR,
            Neighborhood::Eight => &EIGHT,
        }
    }

    /// Neighbors of `(row, col)` inside an `n_rows x n_cols` grid, as
    /// row-major cell indices.
    pub fn neighbors(
        self,
        row: usize,
        col: usize,
        n_rows: usize,
        n_cols: usize,
    ) -> impl Iterator<Item = usize> {
        self.offsets().iter().filter_map(move |&(dr, dc)| {
            let r = row.checked_add_signed(dr)?;
            let c = col.checked_add_signed(dc)?;
            (r < n_rows && c < n_cols).then_some(r * n_cols + c)
        })
    }
}

impl TryFrom<u32> for Neighborhood {
    type Error = Error;

    fn try_from(value: u32) -> Result<Self> {
        match value {
            4 => Ok(Neighborhood::Four),
            8 => Ok(Neighborhood::Eight),
            other => Err(Error::Config(format!(
                "neighborhood must be 4 or 8, got {other}"
            ))),
        }
    }
}

impl fmt::Display for Neighborhood {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Neighborhood::Four => f.write_str("4"),
            Neighborhood::Eight => f.write_str("8"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    LeafToRoot,
    RootToLeaf,
}

/// Reverse tree over the valid cells of a frame (or over arbitrary nodes
/// when built with [`DependencyTree::from_child_links`]).
///
/// Parents are stored in CSR form, sorted by topological position, so the
/// last entry of `parents(n)` is the parent visited last on a leaf-to-root
/// sweep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyTree {
    child: Vec<Option<usize>>,
    parent_offsets: Vec<usize>,
    parent_ids: Vec<usize>,
    topo_order: Vec<usize>,
    topo_position: Vec<usize>,
    cell_of_node: Vec<usize>,
    node_of_cell: Vec<Option<usize>>,
    roots: Vec<usize>,
}

struct Branches {
    link: Vec<usize>,
    size: Vec<u32>,
    rear: Vec<usize>,
}

impl Branches {
    fn with_capacity(n: usize) -> Self {
        Branches {
            link: Vec::with_capacity(n),
            size: Vec::with_capacity(n),
            rear: Vec::with_capacity(n),
        }
    }

    fn push(&mut self, node: usize) {
        self.link.push(node);
        self.size.push(1);
        self.rear.push(node);
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.link[x] != x {
            let next = self.link[self.link[x]];
            self.link[x] = next;
            x = next;
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> usize {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return a;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.link[b] = a;
        self.size[a] += self.size[b];
        a
    }
}

/// Builds the dependency tree for every valid cell of `frame`.
pub fn build_tree(frame: &RasterFrame, neighborhood: Neighborhood) -> Result<DependencyTree> {
    let n_cells = frame.cell_count();
    let mut cells: Vec<usize> = (0..n_cells).filter(|&c| frame.is_valid(c)).collect();
    if cells.is_empty() {
        return Err(Error::EmptyInput("frame has no valid cells".into()));
    }
    let elev = frame.elevations();
    cells.sort_by(|&a, &b| elev[a].total_cmp(&elev[b]).then(a.cmp(&b)));

    let n = cells.len();
    let mut node_of_cell = vec![None; n_cells];
    let mut child: Vec<Option<usize>> = vec![None; n];
    let mut parent_offsets = Vec::with_capacity(n + 1);
    let mut parent_ids = Vec::with_capacity(n);
    let mut branches = Branches::with_capacity(n);
    let mut rears: Vec<usize> = Vec::with_capacity(8);
    let (n_rows, n_cols) = (frame.n_rows(), frame.n_cols());

    parent_offsets.push(0);
    for (node, &cell) in cells.iter().enumerate() {
        node_of_cell[cell] = Some(node);
        branches.push(node);

        rears.clear();
        let (row, col) = (cell / n_cols, cell % n_cols);
        for nb in neighborhood.neighbors(row, col, n_rows, n_cols) {
            // Only already-inserted neighbors have a node id below `node`.
            if let Some(k) = node_of_cell[nb].filter(|&k| k < node) {
                let root = branches.find(k);
                let rear = branches.rear[root];
                if !rears.contains(&rear) {
                    rears.push(rear);
                }
            }
        }
        rears.sort_unstable();
        for &rear in &rears {
            debug_assert!(child[rear].is_none(), "rear {rear} already has a child");
            child[rear] = Some(node);
            parent_ids.push(rear);
            let merged = branches.union(rear, node);
            branches.rear[merged] = node;
        }
        let merged = branches.find(node);
        branches.rear[merged] = node;
        parent_offsets.push(parent_ids.len());
    }

    let roots = (0..n).filter(|&k| child[k].is_none()).collect();
    Ok(DependencyTree {
        child,
        parent_offsets,
        parent_ids,
        topo_order: (0..n).collect(),
        topo_position: (0..n).collect(),
        cell_of_node: cells,
        node_of_cell,
        roots,
    })
}

impl DependencyTree {
    /// Builds a tree directly from child links, one entry per node. Node
    /// `k` maps to cell `k`. Fails on out-of-range links or cycles.
    pub fn from_child_links(child: Vec<Option<usize>>) -> Result<Self> {
        let n = child.len();
        if n == 0 {
            return Err(Error::EmptyInput("tree needs at least one node".into()));
        }
        let mut counts = vec![0usize; n];
        for (k, c) in child.iter().enumerate() {
            if let Some(c) = *c {
                if c >= n || c == k {
                    return Err(Error::Bounds(format!("node {k} has invalid child {c:?}")));
                }
                counts[c] += 1;
            }
        }

        // Kahn's algorithm; ready nodes are taken in id order.
        let mut remaining = counts.clone();
        let mut ready: std::collections::BTreeSet<usize> =
            (0..n).filter(|&k| remaining[k] == 0).collect();
        let mut topo_order = Vec::with_capacity(n);
        while let Some(k) = ready.pop_first() {
            topo_order.push(k);
            if let Some(c) = child[k] {
                remaining[c] -= 1;
                if remaining[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if topo_order.len() != n {
            return Err(Error::Config("child links contain a cycle".into()));
        }
        let mut topo_position = vec![0; n];
        for (i, &k) in topo_order.iter().enumerate() {
            topo_position[k] = i;
        }

        let mut parent_offsets = vec![0usize; n + 1];
        for k in 0..n {
            parent_offsets[k + 1] = parent_offsets[k] + counts[k];
        }
        let mut fill = parent_offsets.clone();
        let mut parent_ids = vec![0usize; parent_offsets[n]];
        for &k in &topo_order {
            if let Some(c) = child[k] {
                parent_ids[fill[c]] = k;
                fill[c] += 1;
            }
        }

        let roots = topo_order
            .iter()
            .copied()
            .filter(|&k| child[k].is_none())
            .collect();
        Ok(DependencyTree {
            child,
            parent_offsets,
            parent_ids,
            topo_order,
            topo_position,
            cell_of_node: (0..n).collect(),
            node_of_cell: (0..n).map(Some).collect(),
            roots,
        })
    }

    pub fn node_count(&self) -> usize {
        self.child.len()
    }

    pub fn parents(&self, node: usize) -> &[usize] {
        &self.parent_ids[self.parent_offsets[node]..self.parent_offsets[node + 1]]
    }

    pub fn child(&self, node: usize) -> Option<usize> {
        self.child[node]
    }

    /// Other parents of this node's child.
    pub fn siblings(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.child[node]
            .map(|c| self.parents(c))
            .unwrap_or(&[])
            .iter()
            .copied()
            .filter(move |&k| k != node)
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.parent_offsets[node] == self.parent_offsets[node + 1]
    }

    pub fn is_root(&self, node: usize) -> bool {
        self.child[node].is_none()
    }

    /// Nodes without a child, one per connected component.
    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    pub fn leaf_count(&self) -> usize {
        (0..self.node_count()).filter(|&k| self.is_leaf(k)).count()
    }

    pub fn edge_count(&self) -> usize {
        self.parent_ids.len()
    }

    /// Leaf-to-root order: every parent precedes its child.
    pub fn topo_order(&self) -> &[usize] {
        &self.topo_order
    }

    pub fn topo_position(&self, node: usize) -> usize {
        self.topo_position[node]
    }

    pub fn topological_iter(&self, direction: Direction) -> Box<dyn Iterator<Item = usize> + '_> {
        match direction {
            Direction::LeafToRoot => Box::new(self.topo_order.iter().copied()),
            Direction::RootToLeaf => Box::new(self.topo_order.iter().rev().copied()),
        }
    }

    pub fn cell_of_node(&self, node: usize) -> usize {
        self.cell_of_node[node]
    }

    pub fn node_of_cell(&self, cell: usize) -> Option<usize> {
        self.node_of_cell.get(cell).copied().flatten()
    }

    /// `(parent, child)` node pairs, grouped by child in node order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.node_count()).flat_map(move |c| self.parents(c).iter().map(move |&p| (p, c)))
    }

    /// True if `ancestor` lies upstream of `node` (reachable by following
    /// child links from `ancestor`).
    pub fn is_ancestor(&self, ancestor: usize, node: usize) -> bool {
        let mut cur = ancestor;
        while let Some(c) = self.child[cur] {
            if c == node {
                return true;
            }
            cur = c;
        }
        false
    }

    /// The node itself plus all of its ancestors.
    pub fn upstream(&self, node: usize) -> Vec<usize> {
        let mut out = vec![node];
        let mut i = 0;
        while i < out.len() {
            let k = out[i];
            out.extend_from_slice(self.parents(k));
            i += 1;
        }
        out
    }

    /// True if every flooded node has all parents flooded.
    pub fn is_feasible(&self, labels: &[crate::Class]) -> bool {
        (0..self.node_count())
            .all(|n| labels[n] == 0 || self.parents(n).iter().all(|&k| labels[k] == 1))
    }

    /// Summary line used by the `tree` subcommand.
    pub fn summary(&self) -> String {
        format!(
            "nodes={} leaves={} roots={}",
            self.node_count(),
            self.leaf_count(),
            self.roots.len()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strip(elev: &[f64]) -> RasterFrame {
        RasterFrame::new(1, elev.len(), elev.to_vec(), elev.to_vec(), 1).unwrap()
    }

    fn cell_edges(tree: &DependencyTree) -> Vec<(usize, usize)> {
        let mut e: Vec<_> = tree
            .edges()
            .map(|(p, c)| (tree.cell_of_node(p), tree.cell_of_node(c)))
            .collect();
        e.sort();
        e
    }

    #[test]
    fn single_cell() {
        let tree = build_tree(&strip(&[3.0]), Neighborhood::Four).unwrap();
        assert_eq!(tree.node_count(), 1);
        assert!(tree.is_leaf(0) && tree.is_root(0));
        assert_eq!(tree.edge_count(), 0);
        assert_eq!(tree.summary(), "nodes=1 leaves=1 roots=1");
    }

    #[test]
    fn ramp_is_chain() {
        let tree = build_tree(&strip(&[1.0, 2.0, 3.0, 4.0, 5.0]), Neighborhood::Four).unwrap();
        assert_eq!(cell_edges(&tree), vec![(0, 1), (1, 2), (2, 3), (3, 4)]);
        assert!((1..5).all(|n| tree.parents(n).len() == 1));
    }

    #[test]
    fn ties_break_by_cell_index() {
        let tree = build_tree(&strip(&[2.0, 2.0, 2.0]), Neighborhood::Four).unwrap();
        assert_eq!(cell_edges(&tree), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn valley_merges_branches() {
        // Two pits either side of a saddle.
        let tree = build_tree(&strip(&[1.0, 5.0, 2.0]), Neighborhood::Four).unwrap();
        assert_eq!(cell_edges(&tree), vec![(0, 1), (2, 1)]);
        let top = tree.node_of_cell(1).unwrap();
        assert_eq!(tree.parents(top).len(), 2);
        let s: Vec<_> = tree.siblings(tree.node_of_cell(0).unwrap()).collect();
        assert_eq!(s, vec![tree.node_of_cell(2).unwrap()]);
    }

    #[test]
    fn shared_rear_attached_once() {
        // Cell 4 (centre, highest) sees four neighbors in one branch.
        let elev = vec![1.0, 2.0, 3.0, 8.0, 9.0, 4.0, 7.0, 6.0, 5.0];
        let frame = RasterFrame::new(3, 3, elev.clone(), elev, 1).unwrap();
        let tree = build_tree(&frame, Neighborhood::Four).unwrap();
        let centre = tree.node_of_cell(4).unwrap();
        assert_eq!(tree.parents(centre).len(), 1);
        assert_eq!(tree.roots(), &[centre]);
    }

    #[test]
    fn masked_components_get_own_roots() {
        let elev = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let mask = vec![true, true, false, true, true];
        let frame = RasterFrame::with_mask(1, 5, elev.clone(), elev, 1, Some(mask)).unwrap();
        let tree = build_tree(&frame, Neighborhood::Four).unwrap();
        assert_eq!(tree.node_count(), 4);
        assert_eq!(tree.roots().len(), 2);
        assert_eq!(tree.node_of_cell(2), None);
    }

    #[test]
    fn no_valid_cells() {
        let frame = RasterFrame::new(1, 2, vec![f64::NAN, f64::NAN], vec![0.0, 0.0], 1).unwrap();
        assert!(matches!(
            build_tree(&frame, Neighborhood::Four),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn eight_neighborhood_sees_diagonals() {
        // Diagonal pits only touch under 8-adjacency.
        let elev = vec![1.0, 9.0, 9.0, 2.0];
        let frame = RasterFrame::new(2, 2, elev.clone(), elev, 1).unwrap();
        let four = build_tree(&frame, Neighborhood::Four).unwrap();
        let eight = build_tree(&frame, Neighborhood::Eight).unwrap();
        assert_eq!(four.leaf_count(), 2);
        assert_eq!(eight.leaf_count(), 1);
    }

    #[test]
    fn from_child_links_validates() {
        assert!(DependencyTree::from_child_links(vec![Some(1), Some(0)]).is_err());
        assert!(DependencyTree::from_child_links(vec![Some(5)]).is_err());
        let t = DependencyTree::from_child_links(vec![Some(2), Some(2), None]).unwrap();
        assert_eq!(t.parents(2), &[0, 1]);
        assert_eq!(t.topo_order(), &[0, 1, 2]);
        let t = DependencyTree::from_child_links(vec![None, Some(0)]).unwrap();
        assert_eq!(t.topo_order(), &[1, 0]);
    }

    #[test]
    fn neighborhood_parse() {
        assert_eq!(Neighborhood::try_from(8).unwrap(), Neighborhood::Eight);
        assert!(Neighborhood::try_from(6).is_err());
    }
}
