//! Gridded inputs: ASCII-grid layers, training label records, and the
//! assembled [`RasterFrame`] that every later stage reads from.
//!
//! Layers use the ESRI-style ASCII grid layout: six header lines
//! (`ncols`, `nrows`, `xllcorner`, `yllcorner`, `cellsize`, `NODATA_value`)
//! followed by `nrows` lines of `ncols` values, top row first. All values are
//! held as `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::Class;

/// Default NODATA value used when a frame is built in memory.
pub const DEFAULT_NODATA: f64 = -9999.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GridHeader {
    pub ncols: usize,
    pub nrows: usize,
    pub xllcorner: f64,
    pub yllcorner: f64,
    pub cellsize: f64,
    pub nodata_value: f64,
}

impl GridHeader {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        GridHeader {
            ncols,
            nrows,
            xllcorner: 0.0,
            yllcorner: 0.0,
            cellsize: 1.0,
            nodata_value: DEFAULT_NODATA,
        }
    }

    pub fn cell_count(&self) -> usize {
        self.nrows * self.ncols
    }

    pub fn same_grid(&self, other: &GridHeader) -> bool {
        self.nrows == other.nrows && self.ncols == other.ncols
    }
}

/// One raster layer. `valid[i]` is false wherever the file held the NODATA
/// value or a non-finite number.
#[derive(Debug, Clone, PartialEq)]
pub struct GridLayer {
    pub header: GridHeader,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl GridLayer {
    /// Builds a layer from row-major values; non-finite values and values
    /// equal to the header's NODATA value are marked invalid.
    pub fn from_values(header: GridHeader, values: Vec<f64>) -> Result<Self> {
        if values.len() != header.cell_count() {
            return Err(Error::Dimension(format!(
                "{} values for a {}x{} grid",
                values.len(),
                header.nrows,
                header.ncols
            )));
        }
        let valid = values
            .iter()
            .map(|v| v.is_finite() && *v != header.nodata_value)
            .collect();
        Ok(GridLayer {
            header,
            values,
            valid,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.header.nrows, self.header.ncols)
    }

    /// Value at a cell, or `None` for NODATA.
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let i = row * self.header.ncols + col;
        self.valid[i].then(|| self.values[i])
    }
}

const HEADER_KEYS: [&str; 6] = [
    "ncols",
    "nrows",
    "xllcorner",
    "yllcorner",
    "cellsize",
    "nodata_value",
];

/// Reads an ASCII grid from disk.
pub fn load_grid(
    path: impl AsRef<Path>,
    expected_shape: Option<(usize, usize)>,
) -> Result<GridLayer> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_grid(&text, &path.display().to_string(), expected_shape)
}

/// Parses ASCII-grid text. `source` names the input in error messages.
pub fn parse_grid(
    text: &str,
    source: &str,
    expected_shape: Option<(usize, usize)>,
) -> Result<GridLayer> {
    let format_err = |line: usize, message: String| Error::Format {
        path: source.to_string(),
        line,
        message,
    };

    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut fields: [Option<f64>; 6] = [None; 6];
    let mut header_read = 0;
    while header_read < HEADER_KEYS.len() {
        let Some((lineno, line)) = lines.next() else {
            return Err(format_err(
                text.lines().count(),
                "unexpected end of file inside header".into(),
            ));
        };
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or_default().to_ascii_lowercase();
        let value = parts.next();
        if parts.next().is_some() {
            return Err(format_err(
                lineno,
                format!("trailing tokens in header line `{line}`"),
            ));
        }
        let Some(slot) = HEADER_KEYS.iter().position(|k| *k == key) else {
            return Err(format_err(
                lineno,
                format!("unknown header key in `{line}`"),
            ));
        };
        if fields[slot].is_some() {
            return Err(format_err(lineno, format!("duplicate header key `{key}`")));
        }
        let value: f64 = value
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| format_err(lineno, format!("unparseable value in `{line}`")))?;
        fields[slot] = Some(value);
        header_read += 1;
    }
    let [ncols, nrows, xll, yll, cellsize, nodata] =
        fields.map(|f| f.expect("all header keys read"));

    let as_count = |v: f64, name: &str| -> Result<usize> {
        if v.fract() != 0.0 || v < 1.0 {
            Err(format_err(
                0,
                format!("{name} must be a positive integer, got {v}"),
            ))
        } else {
            Ok(v as usize)
        }
    };
    let header = GridHeader {
        ncols: as_count(ncols, "ncols")?,
        nrows: as_count(nrows, "nrows")?,
        xllcorner: xll,
        yllcorner: yll,
        cellsize,
        nodata_value: nodata,
    };

    let mut values = Vec::with_capacity(header.cell_count());
    let mut rows_read = 0;
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if rows_read == header.nrows {
            return Err(Error::Dimension(format!(
                "{source}: line {lineno}: more than the declared {} rows",
                header.nrows
            )));
        }
        let before = values.len();
        for token in line.split_whitespace() {
            let v: f64 = token
                .parse()
                .map_err(|_| format_err(lineno, format!("unparseable value `{token}`")))?;
            values.push(v);
        }
        let width = values.len() - before;
        if width != header.ncols {
            return Err(Error::Dimension(format!(
                "{source}: line {lineno}: row has {width} values, header declares ncols {}",
                header.ncols
            )));
        }
        rows_read += 1;
    }
    if rows_read != header.nrows {
        return Err(Error::Dimension(format!(
            "{source}: {rows_read} rows present, header declares nrows {}",
            header.nrows
        )));
    }
    if let Some((r, c)) = expected_shape {
        if (r, c) != (header.nrows, header.ncols) {
            return Err(Error::Dimension(format!(
                "{source}: grid is {}x{}, expected {r}x{c}",
                header.nrows, header.ncols
            )));
        }
    }
    GridLayer::from_values(header, values)
}

/// Formats a layer as ASCII-grid text. Invalid cells are written as the
/// header's NODATA value. Values use the shortest round-trip representation.
pub fn format_grid(layer: &GridLayer) -> String {
    let h = &layer.header;
    let mut out = String::with_capacity(h.cell_count() * 4 + 128);
    let _ = writeln!(out, "ncols {}", h.ncols);
    let _ = writeln!(out, "nrows {}", h.nrows);
    let _ = writeln!(out, "xllcorner {}", h.xllcorner);
    let _ = writeln!(out, "yllcorner {}", h.yllcorner);
    let _ = writeln!(out, "cellsize {}", h.cellsize);
    let _ = writeln!(out, "NODATA_value {}", h.nodata_value);
    for row in 0..h.nrows {
        for col in 0..h.ncols {
            let i = row * h.ncols + col;
            if col > 0 {
                out.push(' ');
            }
            let v = if layer.valid[i] {
                layer.values[i]
            } else {
                h.nodata_value
            };
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_grid(path: impl AsRef<Path>, layer: &GridLayer) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_grid(layer)).map_err(|e| Error::io(path, e))
}

/// A training label at a grid coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelRecord {
    pub row: usize,
    pub col: usize,
    pub label: Class,
}

/// Reads a `row,col,label` CSV file.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<LabelRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, &path.display().to_string())
}

pub fn parse_labels(text: &str, source: &str) -> Result<Vec<LabelRecord>> {
    let format_err = |line: usize, message: String| Error::Format {
        path: source.to_string(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| format_err(1, e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["row", "col", "label"] {
        return Err(format_err(
            1,
            format!(
                "expected header `row,col,label`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            format_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| -> Result<usize> {
            record.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| {
                format_err(
                    line,
                    format!(
                        "bad field {} in `{}`",
                        i + 1,
                        record.iter().collect::<Vec<_>>().join(",")
                    ),
                )
            })
        };
        let (row, col, label) = (field(0)?, field(1)?, field(2)?);
        if label > 1 {
            return Err(format_err(
                line,
                format!("label must be 0 or 1, got {label}"),
            ));
        }
        out.push(LabelRecord {
            row,
            col,
            label: label as Class,
        });
    }
    Ok(out)
}

pub fn format_labels(records: &[LabelRecord]) -> String {
    let mut out = String::from("row,col,label\n");
    for r in records {
        let _ = writeln!(out, "{},{},{}", r.row, r.col, r.label);
    }
    out
}

pub fn write_labels(path: impl AsRef<Path>, records: &[LabelRecord]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_labels(records)).map_err(|e| Error::io(path, e))
}

/// Unified in-memory view of elevation, feature bands, labels and the
/// validity mask. Immutable once assembled.
#[derive(Debug, Clone)]
pub struct RasterFrame {
    header: GridHeader,
    n_bands: usize,
    elevation: Vec<f64>,
    features: Vec<f64>,
    labels: Option<Vec<Option<Class>>>,
    valid: Vec<bool>,
}

impl RasterFrame {
    /// Builds a frame from in-memory arrays. `features` is cell-major
    /// (`features[cell * n_bands + band]`). Cells with any non-finite value
    /// are invalid.
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        elevation: Vec<f64>,
        features: Vec<f64>,
        n_bands: usize,
    ) -> Result<Self> {
        Self::with_mask(n_rows, n_cols, elevation, features, n_bands, None)
    }

    /// Like [`RasterFrame::new`] with an explicit extra validity mask.
    pub fn with_mask(
        n_rows: usize,
        n_cols: usize,
        elevation: Vec<f64>,
        features: Vec<f64>,
        n_bands: usize,
        mask: Option<Vec<bool>>,
    ) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 || n_bands == 0 {
            return Err(Error::Dimension(format!(
                "frame needs positive rows, cols and bands, got {n_rows}x{n_cols}x{n_bands}"
            )));
        }
        let n = n_rows * n_cols;
        if elevation.len() != n || features.len() != n * n_bands {
            return Err(Error::Dimension(format!(
                "{} elevations and {} feature values for {n} cells x {n_bands} bands",
                elevation.len(),
                features.len()
            )));
        }
        if let Some(m) = &mask {
            if m.len() != n {
                return Err(Error::Dimension(format!(
                    "mask has {} entries for {n} cells",
                    m.len()
                )));
            }
        }
        let valid = (0..n)
            .map(|i| {
                mask.as_ref().is_none_or(|m| m[i])
                    && elevation[i].is_finite()
                    && features[i * n_bands..(i + 1) * n_bands]
                        .iter()
                        .all(|v| v.is_finite())
            })
            .collect();
        Ok(RasterFrame {
            header: GridHeader::new(n_rows, n_cols),
            n_bands,
            elevation,
            features,
            labels: None,
            valid,
        })
    }

    /// Attaches training labels. Records must be in bounds and on valid cells.
    pub fn with_labels(mut self, records: &[LabelRecord]) -> Result<Self> {
        let mut labels = vec![None; self.cell_count()];
        for r in records {
            let cell = self.cell_index(r.row, r.col)?;
            if !self.valid[cell] {
                return Err(Error::Bounds(format!(
                    "label at ({}, {}) falls on a NODATA cell",
                    r.row, r.col
                )));
            }
            labels[cell] = Some(r.label);
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_header(mut self, header: GridHeader) -> Result<Self> {
        if !header.same_grid(&self.header) {
            return Err(Error::Dimension("header shape differs from frame".into()));
        }
        self.header = header;
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.header.nrows
    }

    pub fn n_cols(&self) -> usize {
        self.header.ncols
    }

    pub fn n_bands(&self) -> usize {
        self.n_bands
    }

    pub fn cell_count(&self) -> usize {
        self.header.cell_count()
    }

    pub fn header(&self) -> &GridHeader {
        &self.header
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn is_valid(&self, cell: usize) -> bool {
        self.valid[cell]
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn elevation(&self, cell: usize) -> f64 {
        self.elevation[cell]
    }

    pub fn elevations(&self) -> &[f64] {
        &self.elevation
    }

    pub fn features(&self, cell: usize) -> &[f64] {
        &self.features[cell * self.n_bands..(cell + 1) * self.n_bands]
    }

    pub fn labels(&self) -> Option<&[Option<Class>]> {
        self.labels.as_deref()
    }

    /// Labeled cells as `(cell, class)` pairs in row-major order.
    pub fn labeled_cells(&self) -> Vec<(usize, Class)> {
        self.labels
            .iter()
            .flatten()
            .enumerate()
            .filter_map(|(i, l)| l.map(|c| (i, c)))
            .collect()
    }

    pub fn cell_index(&self, row: usize, col: usize) -> Result<usize> {
        if row >= self.n_rows() || col >= self.n_cols() {
            return Err(Error::Bounds(format!(
                "cell ({row}, {col}) outside {}x{} grid",
                self.n_rows(),
                self.n_cols()
            )));
        }
        Ok(row * self.n_cols() + col)
    }

    pub fn row_col(&self, cell: usize) -> (usize, usize) {
        (cell / self.n_cols(), cell % self.n_cols())
    }

    /// Builds a layer on this frame's grid, NODATA wherever the frame is
    /// invalid or `value` returns `None`.
    pub fn layer_from(&self, mut value: impl FnMut(usize) -> Option<f64>) -> GridLayer {
        let n = self.cell_count();
        let mut values = Vec::with_capacity(n);
        let mut valid = Vec::with_capacity(n);
        for cell in 0..n {
            match value(cell).filter(|_| self.valid[cell]) {
                Some(v) => {
                    values.push(v);
                    valid.push(true);
                }
                None => {
                    values.push(self.header.nodata_value);
                    valid.push(false);
                }
            }
        }
        GridLayer {
            header: self.header.clone(),
            values,
            valid,
        }
    }

    pub fn elevation_layer(&self) -> GridLayer {
        self.layer_from(|c| Some(self.elevation[c]))
    }

    pub fn band_layer(&self, band: usize) -> GridLayer {
        self.layer_from(|c| Some(self.features[c * self.n_bands + band]))
    }
}

/// Combines an elevation layer and one layer per feature band into a frame.
/// A cell is valid only if it is valid in every layer.
pub fn assemble_frame(
    elevation: &GridLayer,
    feature_layers: &[GridLayer],
    labels: Option<&[LabelRecord]>,
) -> Result<RasterFrame> {
    if feature_layers.is_empty() {
        return Err(Error::Dimension(
            "at least one feature band is required".into(),
        ));
    }
    for (i, layer) in feature_layers.iter().enumerate() {
        if !layer.header.same_grid(&elevation.header) {
            return Err(Error::Dimension(format!(
                "band {} is {}x{}, elevation is {}x{}",
                i + 1,
                layer.header.nrows,
                layer.header.ncols,
                elevation.header.nrows,
                elevation.header.ncols
            )));
        }
    }
    let n = elevation.header.cell_count();
    let m = feature_layers.len();
    let mut features = Vec::with_capacity(n * m);
    let mut mask = Vec::with_capacity(n);
    for cell in 0..n {
        let mut ok = elevation.valid[cell];
        for layer in feature_layers {
            features.push(layer.values[cell]);
            ok &= layer.valid[cell];
        }
        mask.push(ok);
    }
    let frame = RasterFrame::with_mask(
        elevation.header.nrows,
        elevation.header.ncols,
        elevation.values.clone(),
        features,
        m,
        Some(mask),
    )?
    .with_header(elevation.header.clone())?;
    match labels {
        Some(records) => frame.with_labels(records),
        None => Ok(frame),
    }
}
