//! Hidden Markov tree classification of raster imagery under an elevation
//! constraint.
//!
//! Cells are arranged in a reverse tree built from elevation: a cell can only
//! be flooded if every cell upstream of it (lower and connected) is flooded.
//! Parameters are learned by EM with scaled sum-product messages, and class
//! maps are inferred by a single leaf-to-root scan.
//!
//! ```no_run
//! use geohmt::{build_tree, em_fit, generate, infer_greedy, EmOptions, Neighborhood, SynthConfig};
//!
//! let scene = generate(&SynthConfig::default().scaled_to(10_000))?;
//! let tree = build_tree(&scene.frame, Neighborhood::Four)?;
//! let fit = em_fit(&tree, &scene.frame, &scene.training, &EmOptions::default())?;
//! let map = infer_greedy(&tree, &scene.frame, &fit.params)?;
//! println!("{} flooded nodes", map.flood_count());
//! # Ok::<(), geohmt::Error>(())
//! ```

pub mod cli;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod learning;
pub mod model;
pub mod raster;
pub mod synthetic;
pub mod tree;

/// Binary class label.
pub type Class = u8;
pub const DRY: Class = 0;
pub const FLOOD: Class = 1;

pub use error::{Error, Result};
pub use evaluation::{mlc_classify, run_benchmark, score, BenchConfig, BenchReport, MetricsReport};
pub use inference::{
    enumerate_feasible, infer_greedy, infer_oracle, render_map, render_ppm, ClassMap,
};
pub use learning::{
    e_step, em_fit, em_fit_from, initialize, m_step, EmFit, EmOptions, TrainingSample,
};
pub use model::{log_joint, Emissions, HmtParams};
pub use raster::{assemble_frame, load_grid, read_labels, GridLayer, LabelRecord, RasterFrame};
pub use synthetic::{generate, generate_scaling_series, SynthConfig, SyntheticData, TrainingMode};
pub use tree::{build_tree, DependencyTree, Direction, Neighborhood};
