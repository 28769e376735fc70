//! End-to-end model: marginal transforms composed with the copula flow, plus
//! a plain coupling-flow baseline on standardized data.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::copula_flow::{logit_forward, sigmoid_inverse, CouplingFlow, FlowConfig};
use crate::data::{derive_seed, Dataset, Standardization};
use crate::error::{Error, Result};
use crate::marginal::{MarginalModel, LOG_DENSITY_FLOOR, UNIT_EPS};
use crate::nn::{adam_step, AdamConfig, AdamState, Params};

pub const MIN_TRAIN_ROWS: usize = 1000;

/// Sub-seed streams derived from the training seed.
const STREAM_INIT: u64 = 10;
const STREAM_SHUFFLE: u64 = 11;
const STREAM_NOISE: u64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Comet,
    RealNvpBaseline,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Comet => "comet",
            Mode::RealNvpBaseline => "realnvp",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "comet" => Some(Mode::Comet),
            "realnvp" | "realnvp_baseline" => Some(Mode::RealNvpBaseline),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lower_q: f64,
    pub upper_q: f64,
    pub layers: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub batch_size: usize,
    pub sigma_max: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub mode: Mode,
    pub scale_clamp: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lower_q: 0.05,
            upper_q: 0.95,
            layers: crate::copula_flow::DEFAULT_LAYERS,
            hidden: crate::copula_flow::DEFAULT_HIDDEN.to_vec(),
            lr: 1e-3,
            batch_size: 256,
            sigma_max: crate::copula_flow::DEFAULT_SIGMA_MAX,
            max_epochs: 50,
            patience: 2,
            seed: 0,
            mode: Mode::Comet,
            scale_clamp: crate::copula_flow::DEFAULT_SCALE_CLAMP,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Param(m));
        if !(0.0 < self.lower_q && self.lower_q < self.upper_q && self.upper_q < 1.0) {
            return bad(format!("quantiles must satisfy 0 < a < b < 1, got ({}, {})", self.lower_q, self.upper_q));
        }
        if self.patience < 1 {
            return bad("patience must be at least 1".into());
        }
        if self.layers < 2 {
            return bad("need at least 2 coupling layers".into());
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden layer sizes must be positive".into());
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch size and epoch count must be positive".into());
        }
        if !(self.sigma_max >= 0.0) || !self.sigma_max.is_finite() {
            return bad(format!("sigma_max must be nonnegative, got {}", self.sigma_max));
        }
        if !(self.scale_clamp > 0.0) || !self.scale_clamp.is_finite() {
            return bad(format!("scale clamp must be positive, got {}", self.scale_clamp));
        }
        Ok(())
    }

    /// Stable `key=value` rendering, also used for the config hash.
    pub fn echo(&self) -> String {
        let hidden: Vec<String> = self.hidden.iter().map(usize::to_string).collect();
        format!(
            "mode={}\nquantiles={:?},{:?}\nlayers={}\nhidden={}\nlr={:?}\nbatch_size={}\nsigma_max={:?}\nmax_epochs={}\npatience={}\nseed={}\nscale_clamp={:?}\n",
            self.mode.name(),
            self.lower_q,
            self.upper_q,
            self.layers,
            hidden.join(","),
            self.lr,
            self.batch_size,
            self.sigma_max,
            self.max_epochs,
            self.patience,
            self.seed,
            self.scale_clamp
        )
    }

    pub fn hash(&self) -> String {
        hex::encode(&Sha256::digest(self.echo().as_bytes())[..8])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub best_val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainLog {
    pub fn to_text(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,best_val_loss\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{:.6},{:.6},{:.6}", e.epoch, e.train_loss, e.val_loss, e.best_val_loss);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CometModel {
    dim: usize,
    mode: Mode,
    marginals: Vec<MarginalModel>,
    standardization: Option<Standardization>,
    flow: CouplingFlow,
    seed: u64,
    config_hash: String,
}

impl CometModel {
    pub fn from_parts(
        mode: Mode,
        marginals: Vec<MarginalModel>,
        standardization: Option<Standardization>,
        flow: CouplingFlow,
        seed: u64,
        config_hash: String,
    ) -> Result<Self> {
        let dim = flow.dim();
        match mode {
            Mode::Comet if marginals.len() != dim || standardization.is_some() => {
                return Err(Error::Shape(format!(
                    "comet model needs {dim} marginals and no standardization"
                )))
            }
            Mode::RealNvpBaseline
                if !marginals.is_empty() || standardization.as_ref().map(Standardization::dim) != Some(dim) =>
            {
                return Err(Error::Shape(format!(
                    "baseline model needs standardization of width {dim} and no marginals"
                )))
            }
            _ => {}
        }
        Ok(Self {
            dim,
            mode,
            marginals,
            standardization,
            flow,
            seed,
            config_hash,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn marginals(&self) -> &[MarginalModel] {
        &self.marginals
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    pub fn flow(&self) -> &CouplingFlow {
        &self.flow
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!("model expects {} values, got {}", self.dim, x.len())));
        }
        Ok(())
    }

    /// Unit-cube image `f_m(x)` (comet mode only).
    pub fn to_unit(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        if self.mode != Mode::Comet {
            return Err(Error::Param("baseline model has no marginal transform".into()));
        }
        Ok(self.marginals.iter().zip(x).map(|(m, &v)| m.transform(v)).collect())
    }

    /// Input to the coupling stack: logit of the marginal PIT (comet) or the
    /// standardized row (baseline), with the log-Jacobian of that map.
    fn stack_input(&self, x: &[f64]) -> (Vec<f64>, f64) {
        match self.mode {
            Mode::Comet => {
                let mut ld = 0.0;
                let u: Vec<f64> = self
                    .marginals
                    .iter()
                    .zip(x)
                    .map(|(m, &v)| {
                        ld += m.log_density(v);
                        m.transform(v)
                    })
                    .collect();
                let (y, lld) = logit_forward(&u, self.flow.unit_eps());
                (y, ld + lld)
            }
            Mode::RealNvpBaseline => {
                let st = self.standardization.as_ref().expect("baseline has standardization");
                (st.apply(x), st.log_det())
            }
        }
    }

    /// Full forward map to the latent space at context `sigma`.
    pub fn forward(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        self.check_len(x)?;
        let (y, _) = self.stack_input(x);
        Ok(self.flow.stack_forward(&y, sigma)?.0)
    }

    /// Inverse of `forward`.
    pub fn inverse(&self, z: &[f64], sigma: f64) -> Result<Vec<f64>> {
        self.check_len(z)?;
        let y = self.flow.stack_inverse(z, sigma)?;
        self.from_stack(&y)
    }

    fn from_stack(&self, y: &[f64]) -> Result<Vec<f64>> {
        match self.mode {
            Mode::Comet => {
                let u = sigmoid_inverse(y, self.flow.unit_eps());
                self.marginals.iter().zip(&u).map(|(m, &v)| m.inverse(v)).collect()
            }
            Mode::RealNvpBaseline => Ok(self.standardization.as_ref().expect("baseline").invert(y)),
        }
    }

    /// Log-density at `x` evaluated with `sigma = 0`, floored at the sentinel.
    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        self.log_prob_at(x, 0.0)
    }

    pub fn log_prob_at(&self, x: &[f64], sigma: f64) -> Result<f64> {
        self.check_len(x)?;
        let (y, ld) = self.stack_input(x);
        let lp = self.flow.stack_log_prob(&y, sigma)? + ld;
        Ok(if lp.is_nan() { LOG_DENSITY_FLOOR } else { lp.max(LOG_DENSITY_FLOOR) })
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, sigma: f64, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        if n == 0 {
            return Err(Error::Param("sample count must be at least 1".into()));
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::Param(format!("sigma must be nonnegative, got {sigma}")));
        }
        (0..n)
            .map(|_| {
                let z: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(rng)).collect();
                self.inverse(&z, sigma)
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, crate::model_file::encode(self)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        crate::model_file::decode(&text)
    }
}

/// Fits a model: marginals first (comet mode), then the coupling flow by Adam
/// with per-sample noise, early-stopped on validation NLL at `sigma = 0`.
pub fn fit(train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<(CometModel, TrainLog)> {
    cfg.validate()?;
    let d = train.n_cols();
    if val.n_cols() != d {
        return Err(Error::Shape(format!(
            "train has {d} columns but validation has {}",
            val.n_cols()
        )));
    }
    if train.n_rows() < MIN_TRAIN_ROWS {
        return Err(Error::InsufficientData(format!(
            "{} training rows, need at least {MIN_TRAIN_ROWS}",
            train.n_rows()
        )));
    }

    let (marginals, standardization) = match cfg.mode {
        Mode::Comet => {
            let ms = (0..d)
                .map(|j| {
                    MarginalModel::fit(&train.column(j), cfg.lower_q, cfg.upper_q).map_err(|e| Error::Column {
                        column: train.names()[j].clone(),
                        source: Box::new(e),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            (ms, None)
        }
        Mode::RealNvpBaseline => (Vec::new(), Some(Standardization::fit(train)?)),
    };

    let flow_cfg = FlowConfig {
        layers: cfg.layers,
        hidden: cfg.hidden.clone(),
        scale_clamp: cfg.scale_clamp,
        unit_eps: UNIT_EPS,
        sigma_max: if cfg.mode == Mode::Comet { cfg.sigma_max } else { 0.0 },
        ..FlowConfig::new(d)
    };
    let flow = CouplingFlow::new(&flow_cfg, &mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_INIT)))?;
    let mut model = CometModel::from_parts(cfg.mode, marginals, standardization, flow, cfg.seed, cfg.hash())?;

    let prepare = |ds: &Dataset| -> (Vec<f64>, Vec<f64>) {
        let mut ys = Vec::with_capacity(ds.values().len());
        let mut lds = Vec::with_capacity(ds.n_rows());
        for row in ds.rows() {
            let (y, ld) = model.stack_input(row);
            ys.extend(y);
            lds.push(ld);
        }
        (ys, lds)
    };
    let (train_y, train_ld) = prepare(train);
    let (val_y, val_ld) = prepare(val);

    let sigma_max = model.flow.sigma_max();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_SHUFFLE));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_NOISE));
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut state = AdamState::for_params(adam, &model.flow);
    let mut order: Vec<usize> = (0..train.n_rows()).collect();
    let mut log = TrainLog::default();
    let mut best = model.flow.clone();
    let mut best_val = f64::INFINITY;
    let mut stale = 0;
    let mut batch_y = Vec::with_capacity(cfg.batch_size * d);
    let mut sigmas = Vec::with_capacity(cfg.batch_size);

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut train_total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            batch_y.clear();
            sigmas.clear();
            for &i in idx {
                let sigma = if sigma_max > 0.0 { noise_rng.random_range(0.0..=sigma_max) } else { 0.0 };
                sigmas.push(sigma);
                for &y in &train_y[i * d..(i + 1) * d] {
                    let eps: f64 = if sigma > 0.0 { StandardNormal.sample(&mut noise_rng) } else { 0.0 };
                    batch_y.push(y + sigma * eps);
                }
            }
            let at = |e: Error| match e {
                Error::Numerical(m) => Error::Numerical(format!("epoch {epoch}, batch {b}: {m}")),
                other => other,
            };
            let (loss, grads) = model.flow.stack_nll_grad(&batch_y, &sigmas).map_err(at)?;
            if !loss.is_finite() || !grads.all_finite() {
                let layer = grads
                    .layers()
                    .iter()
                    .position(|l| !l.all_finite())
                    .map_or_else(|| "loss".to_string(), |l| format!("coupling layer {l}"));
                return Err(Error::Numerical(format!(
                    "epoch {epoch}, batch {b}: non-finite loss or gradient ({layer})"
                )));
            }
            adam_step(&mut model.flow, &grads, &mut state)?;
            train_total += loss * idx.len() as f64 - idx.iter().map(|&i| train_ld[i]).sum::<f64>();
        }
        let train_loss = train_total / train.n_rows() as f64;

        let mut val_total = 0.0;
        for (y, ld) in val_y.chunks_exact(d).zip(&val_ld) {
            let lp = model.flow.stack_log_prob(y, 0.0)? + ld;
            val_total -= if lp.is_nan() { LOG_DENSITY_FLOOR } else { lp.max(LOG_DENSITY_FLOOR) };
        }
        let val_loss = val_total / val.n_rows() as f64;
        if !val_loss.is_finite() {
            return Err(Error::Numerical(format!("epoch {epoch}: non-finite validation loss")));
        }
        if val_loss < best_val {
            best_val = val_loss;
            best = model.flow.clone();
            log.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
        }
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            best_val_loss: best_val,
        });
        if stale >= cfg.patience {
            break;
        }
    }
    model.flow = best;
    Ok((model, log))
}
