//! Synthetic flood scenes: a smooth random elevation surface, a ground-truth
//! flood region that respects the tree constraint, block-constant Gaussian
//! features and a training set.
//!
//! Randomness comes from one ChaCha8 generator per component, all seeded from
//! `seed`, so changing e.g. `sigma1` leaves the terrain and the standard
//! normal draws behind every block untouched.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::learning::TrainingSample;
use crate::raster::{write_grid, write_labels, LabelRecord, RasterFrame};
use crate::tree::Neighborhood;
use crate::{Class, DRY, FLOOD};

const BUMPS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrainingMode {
    /// Fresh draws from the two class Gaussians, no coordinates.
    #[default]
    FeatureOnly,
    /// Features of randomly chosen cells of each class.
    Cells,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub rows: usize,
    pub cols: usize,
    /// Side of the square blocks sharing one feature value.
    pub block: usize,
    /// Feature mean of the dry class.
    pub mu1: f64,
    /// Feature mean of the flood class.
    pub mu2: f64,
    /// Feature standard deviation of the dry class.
    pub sigma1: f64,
    /// Feature standard deviation of the flood class.
    pub sigma2: f64,
    /// Total training samples, split evenly between classes.
    pub n_train: usize,
    /// Fraction of cells (by elevation rank) below the water level.
    pub water_level_quantile: f64,
    pub neighborhood: Neighborhood,
    pub training_mode: TrainingMode,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            rows: 1000,
            cols: 1000,
            block: 50,
            mu1: 110.0,
            mu2: 150.0,
            sigma1: 20.0,
            sigma2: 20.0,
            n_train: 1000,
            water_level_quantile: 0.5,
            neighborhood: Neighborhood::Four,
            training_mode: TrainingMode::FeatureOnly,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.block == 0 {
            return Err(Error::Config(
                "rows, cols and block must be positive".into(),
            ));
        }
        if !self.rows.is_multiple_of(self.block) || !self.cols.is_multiple_of(self.block) {
            return Err(Error::Config(format!(
                "block {} must divide both rows {} and cols {}",
                self.block, self.rows, self.cols
            )));
        }
        if !(self.water_level_quantile > 0.0 && self.water_level_quantile < 1.0) {
            return Err(Error::Config(
                "water_level_quantile must lie in (0, 1)".into(),
            ));
        }
        if !(self.sigma1 >= 0.0 && self.sigma2 >= 0.0) {
            return Err(Error::Config(
                "standard deviations must be non-negative".into(),
            ));
        }
        Ok(())
    }

    fn mean(&self, class: Class) -> f64 {
        if class == FLOOD {
            self.mu2
        } else {
            self.mu1
        }
    }

    fn sd(&self, class: Class) -> f64 {
        if class == FLOOD {
            self.sigma2
        } else {
            self.sigma1
        }
    }

    /// Same settings on a square grid of roughly `cells` cells, rounded to a
    /// multiple of the block size.
    pub fn scaled_to(&self, cells: usize) -> SynthConfig {
        let side =
            ((cells as f64).sqrt() / self.block as f64).round().max(1.0) as usize * self.block;
        SynthConfig {
            rows: side,
            cols: side,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub config: SynthConfig,
    pub frame: RasterFrame,
    /// Ground-truth class per cell.
    pub truth: Vec<Class>,
    /// Training set as configured by `training_mode`.
    pub training: Vec<TrainingSample>,
    /// Cell-sampled label records (always produced, for file output).
    pub label_records: Vec<LabelRecord>,
}

impl SyntheticData {
    /// Ground truth as `(cell, class)` pairs over every cell.
    pub fn truth_pairs(&self) -> Vec<(usize, Class)> {
        self.truth.iter().copied().enumerate().collect()
    }

    /// Writes `elevation.asc`, `band1.asc`, `labels.csv` and `truth.asc`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_grid(dir.join("elevation.asc"), &self.frame.elevation_layer())?;
        for b in 0..self.frame.n_bands() {
            write_grid(
                dir.join(format!("band{}.asc", b + 1)),
                &self.frame.band_layer(b),
            )?;
        }
        write_labels(dir.join("labels.csv"), &self.label_records)?;
        write_grid(
            dir.join("truth.asc"),
            &self.frame.layer_from(|c| Some(f64::from(self.truth[c]))),
        )
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Sum of signed radial Gaussian bumps plus a tilted plane, rescaled to
/// `[0, 100]`.
pub fn elevation_surface(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, 0);
    let extent = rows.max(cols) as f64;
    let mut elev = vec![0.0; rows * cols];
    let gx: f64 = rng.random_range(-0.5..0.5);
    let gy: f64 = rng.random_range(-0.5..0.5);
    for r in 0..rows {
        for c in 0..cols {
            elev[r * cols + c] = gx * c as f64 / cols as f64 + gy * r as f64 / rows as f64;
        }
    }
    let mut row_f = vec![0.0; rows];
    let mut col_f = vec![0.0; cols];
    for _ in 0..BUMPS {
        let cy = rng.random_range(0.0..rows as f64);
        let cx = rng.random_range(0.0..cols as f64);
        let width = rng.random_range(0.05..0.2) * extent;
        let amp: f64 = rng.random_range(-1.0..1.0);
        let k = 1.0 / (2.0 * width * width);
        for (r, f) in row_f.iter_mut().enumerate() {
            let d = r as f64 - cy;
            *f = amp * (-d * d * k).exp();
        }
        for (c, f) in col_f.iter_mut().enumerate() {
            let d = c as f64 - cx;
            *f = (-d * d * k).exp();
        }
        for r in 0..rows {
            let fr = row_f[r];
            for (e, fc) in elev[r * cols..(r + 1) * cols].iter_mut().zip(&col_f) {
                *e += fr * fc;
            }
        }
    }
    let (lo, hi) = elev
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    elev.iter_mut().for_each(|v| *v = 100.0 * (*v - lo) / span);
    elev
}

/// Cells connected to the global minimum through cells ranked below the
/// water level (ranking by elevation, then cell index).
pub fn flood_region(
    elev: &[f64],
    rows: usize,
    cols: usize,
    quantile: f64,
    nbhd: Neighborhood,
) -> Vec<Class> {
    let n = rows * cols;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| elev[a].total_cmp(&elev[b]).then(a.cmp(&b)));
    let level = ((quantile * n as f64) as usize).max(1);
    let mut below = vec![false; n];
    for &c in &order[..level] {
        below[c] = true;
    }
    let mut truth = vec![DRY; n];
    let start = order[0];
    truth[start] = FLOOD;
    let mut queue = VecDeque::from([start]);
    while let Some(c) = queue.pop_front() {
        for nb in nbhd.neighbors(c / cols, c % cols, rows, cols) {
            if below[nb] && truth[nb] == DRY {
                truth[nb] = FLOOD;
                queue.push_back(nb);
            }
        }
    }
    truth
}

/// Generates one synthetic scene.
pub fn generate(config: &SynthConfig) -> Result<SyntheticData> {
    config.validate()?;
    let (rows, cols, block) = (config.rows, config.cols, config.block);
    let n = rows * cols;
    let elevation = elevation_surface(rows, cols, config.seed);
    let truth = flood_region(
        &elevation,
        rows,
        cols,
        config.water_level_quantile,
        config.neighborhood,
    );
    let flooded = truth.iter().filter(|&&c| c == FLOOD).count();
    if flooded == 0 || flooded == n {
        return Err(Error::Config("water level leaves only one class".into()));
    }

    let mut z_rng = stream_rng(config.seed, 1);
    let (brows, bcols) = (rows / block, cols / block);
    let mut block_class = vec![DRY; brows * bcols];
    let mut flood_cells = vec![0usize; brows * bcols];
    for (c, &t) in truth.iter().enumerate() {
        if t == FLOOD {
            flood_cells[(c / cols / block) * bcols + (c % cols) / block] += 1;
        }
    }
    for (b, &f) in flood_cells.iter().enumerate() {
        if 2 * f > block * block {
            block_class[b] = FLOOD;
        }
    }
    let block_value: Vec<f64> = block_class
        .iter()
        .map(|&c| {
            let z: f64 = z_rng.sample(StandardNormal);
            config.mean(c) + config.sd(c) * z
        })
        .collect();
    let features: Vec<f64> = (0..n)
        .map(|c| block_value[(c / cols / block) * bcols + (c % cols) / block])
        .collect();

    let frame = RasterFrame::new(rows, cols, elevation, features, 1)?;

    let per_class = config.n_train / 2;
    let mut cell_rng = stream_rng(config.seed, 3);
    let mut label_records = Vec::with_capacity(2 * per_class);
    for class in [DRY, FLOOD] {
        let cells: Vec<usize> = (0..n).filter(|&c| truth[c] == class).collect();
        let take = per_class.min(cells.len());
        let mut picked: Vec<usize> = index::sample(&mut cell_rng, cells.len(), take)
            .into_iter()
            .map(|i| cells[i])
            .collect();
        picked.sort_unstable();
        label_records.extend(picked.into_iter().map(|c| LabelRecord {
            row: c / cols,
            col: c % cols,
            label: class,
        }));
    }

    let training = match config.training_mode {
        TrainingMode::Cells => label_records
            .iter()
            .map(|r| {
                let cell = r.row * cols + r.col;
                TrainingSample {
                    features: frame.features(cell).to_vec(),
                    class: r.label,
                    cell: Some(cell),
                }
            })
            .collect(),
        TrainingMode::FeatureOnly => {
            let mut t_rng = stream_rng(config.seed, 2);
            [DRY, FLOOD]
                .iter()
                .flat_map(|&class| std::iter::repeat_n(class, per_class))
                .map(|class| {
                    let z: f64 = t_rng.sample(StandardNormal);
                    TrainingSample {
                        features: vec![config.mean(class) + config.sd(class) * z],
                        class,
                        cell: None,
                    }
                })
                .collect()
        }
    };

    Ok(SyntheticData {
        config: config.clone(),
        frame,
        truth,
        training,
        label_records,
    })
}

/// One scene per target size, all sharing `base`'s other settings.
pub fn generate_scaling_series(base: &SynthConfig, sizes: &[usize]) -> Result<Vec<SyntheticData>> {
    sizes
        .iter()
        .map(|&s| generate(&base.scaled_to(s)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            rows: 100,
            cols: 100,
            block: 10,
            n_train: 100,
            seed: 3,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.frame.elevations(), b.frame.elevations());
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.training, b.training);
        assert_eq!(a.label_records, b.label_records);
    }

    #[test]
    fn zero_sigma_gives_class_means() {
        let cfg = SynthConfig {
            sigma1: 0.0,
            sigma2: 0.0,
            ..small()
        };
        let d = generate(&cfg).unwrap();
        let values: std::collections::BTreeSet<u64> = (0..d.frame.cell_count())
            .map(|c| d.frame.features(c)[0].to_bits())
            .collect();
        assert!(values
            .iter()
            .all(|&v| v == 110f64.to_bits() || v == 150f64.to_bits()));
        assert!(d
            .training
            .iter()
            .all(|s| s.features[0] == if s.class == 1 { 150.0 } else { 110.0 }));
    }

    #[test]
    fn blocks_constant_and_classes_present() {
        let d = generate(&small()).unwrap();
        let cols = 100;
        for c in 0..d.frame.cell_count() {
            let anchor = (c / cols / 10 * 10) * cols + (c % cols) / 10 * 10;
            assert_eq!(d.frame.features(c), d.frame.features(anchor));
        }
        let flooded = d.truth.iter().filter(|&&t| t == 1).count();
        assert!(flooded > 0 && flooded < d.truth.len());
        assert_eq!(d.training.len(), 100);
    }

    #[test]
    fn elevation_range() {
        let e = elevation_surface(40, 60, 9);
        let lo = e.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (0.0, 100.0));
    }

    #[test]
    fn scaled_configs() {
        let base = SynthConfig::default();
        assert_eq!(base.scaled_to(10_000).rows, 100);
        for target in [2_000_000usize, 20_000_000] {
            let c = base.scaled_to(target);
            let got = (c.rows * c.cols) as f64;
            assert!(
                (got / target as f64 - 1.0).abs() < 0.05,
                "{target} -> {got}"
            );
            assert!(c.validate().is_ok());
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(generate(&SynthConfig {
            block: 7,
            ..small()
        })
        .is_err());
        assert!(generate(&SynthConfig {
            water_level_quantile: 1.0,
            ..small()
        })
        .is_err());
    }
}
