//! Accuracy metrics, the per-pixel maximum-likelihood reference classifier
//! and the timing benchmark.

use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::inference::{infer_greedy_with, ClassMap};
use crate::learning::{em_fit, EmOptions};
use crate::model::{Emissions, HmtParams};
use crate::raster::RasterFrame;
use crate::synthetic::{generate, SynthConfig};
use crate::tree::{build_tree, DependencyTree};
use crate::{Class, DRY, FLOOD};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

impl ClassMetrics {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f_score = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ClassMetrics {
            precision,
            recall,
            f_score,
        }
    }
}

/// Confusion counts use flood as the positive class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub dry: ClassMetrics,
    pub flood: ClassMetrics,
    pub avg_f: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl MetricsReport {
    pub fn from_confusion(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let flood = ClassMetrics::from_counts(tp, fp, fn_);
        let dry = ClassMetrics::from_counts(tn, fn_, fp);
        MetricsReport {
            dry,
            flood,
            avg_f: 0.5 * (dry.f_score + flood.f_score),
            tp,
            fp,
            fn_,
            tn,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8}{:>10}{:>10}{:>10}",
            "class", "precision", "recall", "f"
        );
        for (name, m) in [("dry", self.dry), ("flood", self.flood)] {
            let _ = writeln!(
                out,
                "{:<8}{:>10.4}{:>10.4}{:>10.4}",
                name, m.precision, m.recall, m.f_score
            );
        }
        let _ = writeln!(out, "avg_f {:.4}", self.avg_f);
        let _ = writeln!(
            out,
            "tp={} fp={} fn={} tn={}",
            self.tp, self.fp, self.fn_, self.tn
        );
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,precision,recall,f,avg_f,tp,fp,fn,tn\n");
        for (name, m) in [("dry", self.dry), ("flood", self.flood)] {
            let _ = writeln!(
                out,
                "{name},{},{},{},{},{},{},{},{}",
                m.precision, m.recall, m.f_score, self.avg_f, self.tp, self.fp, self.fn_, self.tn
            );
        }
        out
    }
}

/// Scores per-cell predictions against `(cell, class)` truth pairs. Every
/// truth cell must carry a prediction.
pub fn score(predicted: &[Option<Class>], truth: &[(usize, Class)]) -> Result<MetricsReport> {
    if truth.is_empty() {
        return Err(Error::EmptyInput("no truth cells to score".into()));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for &(cell, actual) in truth {
        let pred = predicted
            .get(cell)
            .copied()
            .flatten()
            .ok_or_else(|| Error::Bounds(format!("truth cell {cell} has no prediction")))?;
        match (pred, actual) {
            (FLOOD, FLOOD) => tp += 1,
            (FLOOD, _) => fp += 1,
            (_, FLOOD) => fn_ += 1,
            _ => tn += 1,
        }
    }
    Ok(MetricsReport::from_confusion(tp, fp, fn_, tn))
}

/// Scores a node-indexed class map.
pub fn score_map(
    map: &ClassMap,
    tree: &DependencyTree,
    cell_count: usize,
    truth: &[(usize, Class)],
) -> Result<MetricsReport> {
    score(&map.to_cells(tree, cell_count), truth)
}

/// Per-pixel Gaussian maximum likelihood, ignoring the tree. Ties go to dry.
/// The returned objective is the summed log density of the chosen classes.
pub fn mlc_classify(
    tree: &DependencyTree,
    frame: &RasterFrame,
    params: &HmtParams,
) -> Result<ClassMap> {
    let em = Emissions::compute(tree, frame, params)?;
    let mut objective = 0.0;
    let labels = (0..tree.node_count())
        .map(|n| {
            let le = em.get(n);
            let class = if le[1] > le[0] { FLOOD } else { DRY };
            objective += le[class as usize];
            class
        })
        .collect();
    Ok(ClassMap { labels, objective })
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub iterations: usize,
    pub repeats: usize,
    pub base: SynthConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sizes: vec![2_000_000, 4_000_000],
            iterations: 3,
            repeats: 10,
            base: SynthConfig::default(),
        }
    }
}

/// Mean wall-clock seconds per phase for one scene size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub target: usize,
    pub rows: usize,
    pub cols: usize,
    pub build_s: f64,
    pub learn_s: f64,
    pub infer_s: f64,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub iterations: usize,
    pub repeats: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# iterations={} repeats={}\n",
            self.iterations, self.repeats
        );
        out.push_str("target,rows,cols,cells,build_s,learn_s,infer_s\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6},{:.6},{:.6}",
                r.target,
                r.rows,
                r.cols,
                r.rows * r.cols,
                r.build_s,
                r.learn_s,
                r.infer_s
            );
        }
        out
    }
}

/// Times tree construction, learning (initialization plus a fixed number of
/// EM iterations) and inference on synthetic scenes, averaging over
/// `repeats` runs. Scene generation is not timed.
pub fn run_benchmark(config: &BenchConfig) -> Result<BenchReport> {
    if config.repeats == 0 || config.iterations == 0 {
        return Err(Error::Config(
            "repeats and iterations must be positive".into(),
        ));
    }
    let opts = EmOptions {
        epsilon: -1.0,
        max_iters: config.iterations,
        ..EmOptions::default()
    };
    let mut rows = Vec::with_capacity(config.sizes.len());
    for &target in &config.sizes {
        let scene = generate(&config.base.scaled_to(target))?;
        let (mut build_s, mut learn_s, mut infer_s) = (0.0, 0.0, 0.0);
        for _ in 0..config.repeats {
            let t = Instant::now();
            let tree = build_tree(&scene.frame, scene.config.neighborhood)?;
            build_s += t.elapsed().as_secs_f64();

            let t = Instant::now();
            let fit = em_fit(&tree, &scene.frame, &scene.training, &opts)?;
            learn_s += t.elapsed().as_secs_f64();

            let t = Instant::now();
            let em = Emissions::compute(&tree, &scene.frame, &fit.params)?;
            let map = infer_greedy_with(&tree, &em, &fit.params);
            infer_s += t.elapsed().as_secs_f64();
            std::hint::black_box(map);
        }
        let k = config.repeats as f64;
        rows.push(BenchRow {
            target,
            rows: scene.config.rows,
            cols: scene.config.cols,
            build_s: build_s / k,
            learn_s: learn_s / k,
            infer_s: infer_s / k,
        });
    }
    Ok(BenchReport {
        iterations: config.iterations,
        repeats: config.repeats,
        rows,
    })
}
