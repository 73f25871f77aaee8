//! Writes a small scene as ASCII grids plus a label CSV, reads it back and
//! assembles a frame, with one NODATA cell left out of the tree.

use geohmt::raster::{write_grid, write_labels, GridHeader};
use geohmt::{
    assemble_frame, build_tree, load_grid, read_labels, GridLayer, LabelRecord, Neighborhood,
};

fn main() -> geohmt::Result<()> {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let dir = tmp.path();
    let header = GridHeader::new(3, 3);
    let nodata = header.nodata_value;
    let elev = GridLayer::from_values(
        header.clone(),
        vec![3.0, 2.0, 1.0, 4.0, nodata, 2.0, 5.0, 4.0, 3.0],
    )?;
    let band = GridLayer::from_values(
        header,
        vec![
            150.0, 145.0, 152.0, 120.0, nodata, 149.0, 108.0, 112.0, 131.0,
        ],
    )?;
    write_grid(dir.join("elev.asc"), &elev)?;
    write_grid(dir.join("band.asc"), &band)?;
    let labels = [
        LabelRecord {
            row: 0,
            col: 2,
            label: 1,
        },
        LabelRecord {
            row: 2,
            col: 0,
            label: 0,
        },
    ];
    write_labels(dir.join("labels.csv"), &labels)?;

    let elev = load_grid(dir.join("elev.asc"), None)?;
    let band = load_grid(dir.join("band.asc"), Some(elev.shape()))?;
    let labels = read_labels(dir.join("labels.csv"))?;
    let frame = assemble_frame(&elev, &[band], Some(&labels))?;
    let tree = build_tree(&frame, Neighborhood::Four)?;
    println!(
        "cells={} valid={} labels={}",
        frame.cell_count(),
        frame.valid_count(),
        labels.len()
    );
    println!("{}", tree.summary());
    Ok(())
}
