//! Datasets: synthetic generator, CSV IO, standardization and splitting.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::univariate::GpDist;

pub const SYNTHETIC_DIM: usize = 8;
pub const EXTREME_PROB: f64 = 0.05;
pub const STANDARD_SIZES: (usize, usize, usize) = (200_000, 25_000, 25_000);
pub const DESK_SIZES: (usize, usize, usize) = (20_000, 2_500, 2_500);

/// Mixes `stream` into `seed` (SplitMix64 finalizer) to give independent
/// sub-seeds for separate random streams.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
    Unsplit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    Synthetic { seed: u64 },
    File(PathBuf),
    Derived(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<f64>,
    n_rows: usize,
    names: Vec<String>,
    split: Split,
    provenance: Provenance,
}

pub fn default_names(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("x{i}")).collect()
}

impl Dataset {
    /// Builds a dataset from row-major `values`; every entry must be finite.
    pub fn new(values: Vec<f64>, names: Vec<String>, provenance: Provenance) -> Result<Self> {
        let d = names.len();
        if d == 0 {
            return Err(Error::Shape("dataset needs at least one column".into()));
        }
        if values.is_empty() || values.len() % d != 0 {
            return Err(Error::Shape(format!(
                "{} values do not form nonempty rows of width {d}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parse {
                row: pos / d + 1,
                col: pos % d + 1,
                msg: "non-finite value".into(),
            });
        }
        Ok(Self {
            n_rows: values.len() / d,
            values,
            names,
            split: Split::Unsplit,
            provenance,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], provenance: Provenance) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("rows have differing widths".into()));
        }
        Self::new(rows.concat(), default_names(d), provenance)
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_cols();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_cols())
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    fn select(&self, idx: &[usize], split: Split) -> Dataset {
        let values = idx.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Dataset {
            values,
            n_rows: idx.len(),
            names: self.names.clone(),
            split,
            provenance: self.provenance.clone(),
        }
    }
}

/// Synthetic 8-dimensional benchmark with heavy-tailed, tail-dependent pairs.
///
/// Each row starts uniform on `[0,1]^8`. Pairs `(x1,x2)`, `(x3,x4)`, `(x5,x6)`
/// independently enter an extreme regime with probability 0.05, sharing one
/// GP(0,1,1) excess `g`: upper (`1+g`), lower (`-g`), and either side with
/// equal odds respectively. `x7` is replaced the same way (either side) and
/// `x8` always equals `x7`.
pub fn gen_synthetic(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Param("row count must be at least 1".into()));
    }
    let gp = GpDist::new(0.0, 1.0, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n * SYNTHETIC_DIM);
    let mut row = [0.0; SYNTHETIC_DIM];
    for _ in 0..n {
        for v in row.iter_mut() {
            *v = rng.random();
        }
        for pair in 0..3 {
            if rng.random::<f64>() < EXTREME_PROB {
                let g = gp.sample_from_uniform(rng.random());
                let upper = match pair {
                    0 => true,
                    1 => false,
                    _ => rng.random::<bool>(),
                };
                let v = if upper { 1.0 + g } else { -g };
                row[2 * pair] = v;
                row[2 * pair + 1] = v;
            }
        }
        if rng.random::<f64>() < EXTREME_PROB {
            let g = gp.sample_from_uniform(rng.random());
            row[6] = if rng.random::<bool>() { 1.0 + g } else { -g };
        }
        row[7] = row[6];
        values.extend_from_slice(&row);
    }
    Dataset::new(values, default_names(SYNTHETIC_DIM), Provenance::Synthetic { seed })
}

/// Train/val/test synthetic datasets of the given sizes, drawn from
/// sub-seeds `derive_seed(seed, 0..3)`.
pub fn synthetic_splits(sizes: (usize, usize, usize), seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let train = gen_synthetic(sizes.0, derive_seed(seed, 0))?.with_split(Split::Train);
    let val = gen_synthetic(sizes.1, derive_seed(seed, 1))?.with_split(Split::Val);
    let test = gen_synthetic(sizes.2, derive_seed(seed, 2))?.with_split(Split::Test);
    Ok((train, val, test))
}

pub fn standard_splits(seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    synthetic_splits(STANDARD_SIZES, seed)
}

pub fn desk_splits(seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    synthetic_splits(DESK_SIZES, seed)
}

/// Formats a float with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, to_csv_string(ds)).map_err(|e| Error::io(path, e))
}

pub fn to_csv_string(ds: &Dataset) -> String {
    let mut out = String::with_capacity(ds.values.len() * 24);
    out.push_str(&ds.names.join(","));
    out.push('\n');
    for row in ds.rows() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v:.16e}");
        }
        out.push('\n');
    }
    out
}

pub fn load_csv(path: &Path, has_header: bool) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, has_header, Provenance::File(path.to_path_buf()))
}

/// Parses CSV text. Error positions are 1-based file line and column.
pub fn parse_csv(text: &str, has_header: bool, provenance: Provenance) -> Result<Dataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty());
    let mut names = None;
    if has_header {
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::InsufficientData("empty CSV".into()))?;
        names = Some(header.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>());
    }
    let mut width = names.as_ref().map(Vec::len);
    let mut values = Vec::new();
    for (line_no, line) in lines {
        let cells: Vec<&str> = line.split(',').collect();
        let d = *width.get_or_insert(cells.len());
        if cells.len() != d {
            return Err(Error::Parse {
                row: line_no,
                col: cells.len().min(d) + 1,
                msg: format!("expected {d} cells, found {}", cells.len()),
            });
        }
        for (j, cell) in cells.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row: line_no,
                col: j + 1,
                msg: format!("not a number: {:?}", cell.trim()),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: line_no,
                    col: j + 1,
                    msg: "non-finite value".into(),
                });
            }
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(Error::InsufficientData("CSV has no data rows".into()));
    }
    let names = names.unwrap_or_else(|| default_names(width.unwrap_or(0)));
    Dataset::new(values, names, provenance)
}

/// Per-column affine standardization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Population mean and standard deviation of each column.
    pub fn fit(ds: &Dataset) -> Result<Self> {
        let n = ds.n_rows() as f64;
        let d = ds.n_cols();
        let mut mean = vec![0.0; d];
        for row in ds.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in ds.rows() {
            for j in 0..d {
                var[j] += (row[j] - mean[j]).powi(2);
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
        for (j, s) in std.iter().enumerate() {
            if !(*s > 0.0) || !s.is_finite() {
                return Err(Error::Column {
                    column: ds.names()[j].clone(),
                    source: Box::new(Error::Degenerate("zero variance".into())),
                });
            }
        }
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    /// `log |det d apply / dx|`.
    pub fn log_det(&self) -> f64 {
        -self.std.iter().map(|s| s.ln()).sum::<f64>()
    }
}

pub fn standardize(ds: &Dataset) -> Result<(Dataset, Standardization)> {
    let st = Standardization::fit(ds)?;
    let values = ds.rows().flat_map(|r| st.apply(r)).collect();
    let out = Dataset {
        values,
        n_rows: ds.n_rows,
        names: ds.names.clone(),
        split: ds.split,
        provenance: Provenance::Derived("standardized".into()),
    };
    Ok((out, st))
}

/// Partitions a seeded permutation of the rows. Part boundaries are
/// `round(n * cumulative fraction)`.
pub fn split(ds: &Dataset, fractions: &[f64], seed: u64) -> Result<Vec<Dataset>> {
    if fractions.is_empty() || fractions.iter().any(|f| !(*f >= 0.0)) {
        return Err(Error::Param("split fractions must be nonnegative".into()));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Param(format!("split fractions sum to {total}, not 1")));
    }
    let n = ds.n_rows();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let tags = [Split::Train, Split::Val, Split::Test];
    let mut parts = Vec::with_capacity(fractions.len());
    let mut cum = 0.0;
    let mut start = 0;
    for (k, f) in fractions.iter().enumerate() {
        cum += f;
        let end = if k + 1 == fractions.len() {
            n
        } else {
            ((cum * n as f64).round() as usize).clamp(start, n)
        };
        let tag = if fractions.len() == 3 { tags[k] } else { Split::Unsplit };
        parts.push(ds.select(&idx[start..end], tag));
        start = end;
    }
    Ok(parts)
}
