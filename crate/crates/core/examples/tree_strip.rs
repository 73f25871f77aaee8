//! Builds the dependency tree of an 8-cell strip and prints its insertion
//! order, edges and leaf/root summary.

use geohmt::{build_tree, Direction, Neighborhood, RasterFrame};

fn main() -> geohmt::Result<()> {
    let elev = vec![7.0, 5.0, 1.0, 3.0, 6.0, 2.0, 4.0, 8.0];
    let frame = RasterFrame::new(1, 8, elev, vec![0.0; 8], 1)?;
    let tree = build_tree(&frame, Neighborhood::Four)?;

    let name = |node: usize| format!("s{}", tree.cell_of_node(node) + 1);
    let order: Vec<String> = tree
        .topological_iter(Direction::LeafToRoot)
        .map(name)
        .collect();
    println!("insertion order: {}", order.join(" "));
    for (p, c) in tree.edges() {
        println!("  {} -> {}", name(p), name(c));
    }
    println!("{}", tree.summary());
    Ok(())
}
