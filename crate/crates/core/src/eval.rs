//! Evaluation: held-out NLL, empirical tail dependence, PIT uniformity and
//! the report written by the `eval` command.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{CometModel, Mode};
use crate::univariate::{empirical_quantile, sorted_copy};

pub const UPPER_LEVELS: [f64; 2] = [0.95, 0.99];
pub const LOWER_LEVELS: [f64; 2] = [0.05, 0.01];
pub const QUANTILE_LEVELS: [f64; 5] = [0.01, 0.05, 0.5, 0.95, 0.99];
pub const MIN_KS_LEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tail {
    Upper,
    Lower,
}

impl Tail {
    pub fn name(self) -> &'static str {
        match self {
            Tail::Upper => "upper",
            Tail::Lower => "lower",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        match s {
            "upper" => Some(Tail::Upper),
            "lower" => Some(Tail::Lower),
            _ => None,
        }
    }
}

/// Negative mean of `log_prob` over rows, accumulated in row order.
pub fn avg_nll_with<'a, I, F>(rows: I, mut log_prob: F) -> Result<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut total = 0.0;
    let mut n = 0usize;
    for row in rows {
        total -= log_prob(row)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::InsufficientData("no rows to evaluate".into()));
    }
    Ok(total / n as f64)
}

pub fn avg_nll(model: &CometModel, test: &Dataset) -> Result<f64> {
    if test.n_cols() != model.dim() {
        return Err(Error::Shape(format!(
            "model has dimension {} but data has {} columns",
            model.dim(),
            test.n_cols()
        )));
    }
    avg_nll_with(test.rows(), |r| model.log_prob(r))
}

/// Empirical tail-dependence coefficient of `xi` given `xj` at level `u`.
///
/// Upper: `#{xi > qi and xj > qj} / #{xj > qj}` with `q` the empirical
/// `u`-quantiles. Lower uses `<` with the (small) level passed directly.
pub fn tail_dep_coeff(xi: &[f64], xj: &[f64], u: f64, side: Tail) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain {
            value: u,
            domain: "(0, 1)",
        });
    }
    if xi.len() != xj.len() || xi.is_empty() {
        return Err(Error::Shape("tail dependence needs two equal nonempty columns".into()));
    }
    let qi = empirical_quantile(&sorted_copy(xi), u);
    let qj = empirical_quantile(&sorted_copy(xj), u);
    let beyond = |v: f64, q: f64| match side {
        Tail::Upper => v > q,
        Tail::Lower => v < q,
    };
    let mut cond = 0usize;
    let mut joint = 0usize;
    for (&a, &b) in xi.iter().zip(xj) {
        if beyond(b, qj) {
            cond += 1;
            if beyond(a, qi) {
                joint += 1;
            }
        }
    }
    if cond == 0 {
        return Err(Error::Undefined(format!(
            "no rows beyond the {} {u} quantile",
            side.name()
        )));
    }
    Ok(joint as f64 / cond as f64)
}

/// Kolmogorov–Smirnov distance between the empirical CDF of `values` and
/// the uniform CDF on [0, 1].
pub fn ks_uniformity(values: &[f64]) -> Result<f64> {
    if values.len() < MIN_KS_LEN {
        return Err(Error::InsufficientData(format!(
            "{} values, need at least {MIN_KS_LEN}",
            values.len()
        )));
    }
    if let Some(&v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain {
            value: v,
            domain: "[0, 1]",
        });
    }
    let sorted = sorted_copy(values);
    let n = sorted.len() as f64;
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| ((i + 1) as f64 / n - v).max(v - i as f64 / n))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailDepEntry {
    pub pair: (usize, usize),
    pub side: Tail,
    pub level: f64,
    pub data: Option<f64>,
    pub sample: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileEntry {
    pub column: usize,
    pub level: f64,
    pub data: f64,
    pub sample: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub avg_nll: f64,
    pub mode: String,
    pub dim: usize,
    pub n_test: usize,
    pub sample_count: usize,
    pub seed: u64,
    pub config_hash: String,
    pub tail_dependence: Vec<TailDepEntry>,
    pub ks: Vec<f64>,
    pub quantiles: Vec<QuantileEntry>,
}

fn coeff_or_none(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Undefined(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Column pairs `(0,1), (2,3), ...`.
pub fn adjacent_pairs(dim: usize) -> Vec<(usize, usize)> {
    (0..dim / 2).map(|p| (2 * p, 2 * p + 1)).collect()
}

/// Probability integral transform of each test value: the fitted marginal
/// CDF (comet) or the empirical CDF of model samples (baseline).
pub fn pit_values(model: &CometModel, test: &Dataset, samples: &[Vec<f64>], column: usize) -> Vec<f64> {
    let col = test.column(column);
    match model.mode() {
        Mode::Comet => col.iter().map(|&x| model.marginals()[column].transform(x)).collect(),
        Mode::RealNvpBaseline => {
            let sorted = sorted_copy(&samples.iter().map(|s| s[column]).collect::<Vec<_>>());
            let n = sorted.len() as f64;
            col.iter()
                .map(|&x| sorted.partition_point(|&s| s <= x) as f64 / n)
                .collect()
        }
    }
}

pub fn evaluate(model: &CometModel, test: &Dataset, sample_count: usize, seed: u64) -> Result<EvalReport> {
    let avg_nll = avg_nll(model, test)?;
    let samples = model.sample(sample_count, 0.0, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let d = model.dim();
    let sample_col = |j: usize| samples.iter().map(|s| s[j]).collect::<Vec<f64>>();

    let mut tail_dependence = Vec::new();
    for (i, j) in adjacent_pairs(d) {
        let (di, dj) = (test.column(i), test.column(j));
        let (si, sj) = (sample_col(i), sample_col(j));
        for (side, levels) in [(Tail::Upper, UPPER_LEVELS), (Tail::Lower, LOWER_LEVELS)] {
            for level in levels {
                tail_dependence.push(TailDepEntry {
                    pair: (i, j),
                    side,
                    level,
                    data: coeff_or_none(tail_dep_coeff(&di, &dj, level, side))?,
                    sample: coeff_or_none(tail_dep_coeff(&si, &sj, level, side))?,
                });
            }
        }
    }

    let ks = (0..d)
        .map(|j| ks_uniformity(&pit_values(model, test, &samples, j)))
        .collect::<Result<Vec<_>>>()?;

    let mut quantiles = Vec::new();
    for j in 0..d {
        let ds = sorted_copy(&test.column(j));
        let ss = sorted_copy(&sample_col(j));
        for level in QUANTILE_LEVELS {
            quantiles.push(QuantileEntry {
                column: j,
                level,
                data: empirical_quantile(&ds, level),
                sample: empirical_quantile(&ss, level),
            });
        }
    }

    Ok(EvalReport {
        avg_nll,
        mode: model.mode().name().to_string(),
        dim: d,
        n_test: test.n_rows(),
        sample_count,
        seed,
        config_hash: model.config_hash().to_string(),
        tail_dependence,
        ks,
        quantiles,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| x.to_string())
}

fn parse_opt(s: &str) -> Option<Option<f64>> {
    if s == "undefined" {
        Some(None)
    } else {
        s.parse().ok().map(Some)
    }
}

impl EvalReport {
    /// `key=value` lines in a fixed order; floats use the shortest exact
    /// decimal form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "avg_nll={}", self.avg_nll);
        let _ = writeln!(s, "mode={}", self.mode);
        let _ = writeln!(s, "dim={}", self.dim);
        let _ = writeln!(s, "n_test={}", self.n_test);
        let _ = writeln!(s, "sample_count={}", self.sample_count);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "config_hash={}", self.config_hash);
        for t in &self.tail_dependence {
            let _ = writeln!(
                s,
                "tail.{}.{}.{}.{}={},{}",
                t.pair.0 + 1,
                t.pair.1 + 1,
                t.side.name(),
                t.level,
                opt(t.data),
                opt(t.sample)
            );
        }
        for (j, k) in self.ks.iter().enumerate() {
            let _ = writeln!(s, "ks.{}={}", j + 1, k);
        }
        for q in &self.quantiles {
            let _ = writeln!(s, "quantile.{}.{}={},{}", q.column + 1, q.level, q.data, q.sample);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Parse {
            row: line,
            col: 1,
            msg: msg.to_string(),
        };
        let mut r = EvalReport {
            avg_nll: f64::NAN,
            mode: String::new(),
            dim: 0,
            n_test: 0,
            sample_count: 0,
            seed: 0,
            config_hash: String::new(),
            tail_dependence: Vec::new(),
            ks: Vec::new(),
            quantiles: Vec::new(),
        };
        for (no, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
            if line.trim().is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| bad(no, "missing '='"))?;
            let num = |v: &str| v.parse::<f64>().map_err(|_| bad(no, "bad number"));
            let int = |v: &str| v.parse::<u64>().map_err(|_| bad(no, "bad integer"));
            let idx = |v: &str| v.parse::<usize>().ok().filter(|&i| i >= 1).ok_or_else(|| bad(no, "bad index"));
            let pair = |v: &str| -> Result<(f64, f64)> {
                let (a, b) = v.split_once(',').ok_or_else(|| bad(no, "expected two values"))?;
                Ok((num(a)?, num(b)?))
            };
            match key {
                "avg_nll" => r.avg_nll = num(value)?,
                "mode" => r.mode = value.to_string(),
                "dim" => r.dim = int(value)? as usize,
                "n_test" => r.n_test = int(value)? as usize,
                "sample_count" => r.sample_count = int(value)? as usize,
                "seed" => r.seed = int(value)?,
                "config_hash" => r.config_hash = value.to_string(),
                _ => {
                    let parts: Vec<&str> = key.splitn(5, '.').collect();
                    match parts[0] {
                        "tail" if parts.len() == 5 => {
                            let side = Tail::from_name(parts[3]).ok_or_else(|| bad(no, "bad tail side"))?;
                            let (a, b) = value.split_once(',').ok_or_else(|| bad(no, "expected two values"))?;
                            r.tail_dependence.push(TailDepEntry {
                                pair: (idx(parts[1])? - 1, idx(parts[2])? - 1),
                                side,
                                level: num(parts[4])?,
                                data: parse_opt(a).ok_or_else(|| bad(no, "bad coefficient"))?,
                                sample: parse_opt(b).ok_or_else(|| bad(no, "bad coefficient"))?,
                            });
                        }
                        "ks" if parts.len() == 2 => {
                            if idx(parts[1])? != r.ks.len() + 1 {
                                return Err(bad(no, "ks entries out of order"));
                            }
                            r.ks.push(num(value)?);
                        }
                        "quantile" => {
                            let (col, level) = key["quantile.".len()..]
                                .split_once('.')
                                .ok_or_else(|| bad(no, "bad quantile key"))?;
                            let (data, sample) = pair(value)?;
                            r.quantiles.push(QuantileEntry {
                                column: idx(col)? - 1,
                                level: num(level)?,
                                data,
                                sample,
                            });
                        }
                        _ => return Err(bad(no, "unknown key")),
                    }
                }
            }
        }
        if r.avg_nll.is_nan() {
            return Err(bad(1, "missing avg_nll"));
        }
        Ok(r)
    }

    /// Plot-ready rows `pair,side,level,data_lambda,sample_lambda`.
    pub fn tail_csv(&self) -> String {
        let mut s = String::from("pair,side,level,data_lambda,sample_lambda\n");
        for t in &self.tail_dependence {
            let _ = writeln!(
                s,
                "{}-{},{},{},{},{}",
                t.pair.0 + 1,
                t.pair.1 + 1,
                t.side.name(),
                t.level,
                opt(t.data),
                opt(t.sample)
            );
        }
        s
    }
}
