//! Copula transform: a logit layer followed by affine coupling layers whose
//! scale and shift networks are gated by a scalar noise level `sigma`.
//!
//! Each coupling layer splits the coordinates into a passthrough set and a
//! transformed set. For transformed coordinate `i` with conditioner outputs
//! `s`, `t` computed from the passthrough coordinates,
//!
//! ```text
//! y_i = x_i * exp(s_i) + t_i,        log|det J| = sum_i s_i
//! ```
//!
//! and each conditioner output is `sigmoid(w_g sigma + b_g) * net(x_pass) + (w_b sigma + b_b)`.
//! Scales are squashed as `c * tanh(raw / c)` so `|s| <= c`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::{Activation, Dense, Mlp, MlpCache, Params};
use crate::univariate::{std_normal_log_pdf_sum, LN_2PI};

/// Defaults for the copula flow.
pub const DEFAULT_LAYERS: usize = 10;
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];
pub const DEFAULT_SCALE_CLAMP: f64 = 5.0;
pub const DEFAULT_SIGMA_MAX: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub dim: usize,
    pub layers: usize,
    pub hidden: Vec<usize>,
    pub scale_clamp: f64,
    pub unit_eps: f64,
    pub sigma_max: f64,
}

impl FlowConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            layers: DEFAULT_LAYERS,
            hidden: DEFAULT_HIDDEN.to_vec(),
            scale_clamp: DEFAULT_SCALE_CLAMP,
            unit_eps: crate::marginal::UNIT_EPS,
            sigma_max: DEFAULT_SIGMA_MAX,
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Componentwise logit after clamping into `[eps, 1 - eps]`, with its
/// log-Jacobian determinant.
pub fn logit_forward(u: &[f64], eps: f64) -> (Vec<f64>, f64) {
    let mut logdet = 0.0;
    let y = u
        .iter()
        .map(|&v| {
            let v = v.clamp(eps, 1.0 - eps);
            let (lu, l1u) = (v.ln(), (-v).ln_1p());
            logdet -= lu + l1u;
            lu - l1u
        })
        .collect();
    (y, logdet)
}

/// Componentwise sigmoid, clamped into `[eps, 1 - eps]`.
pub fn sigmoid_inverse(y: &[f64], eps: f64) -> Vec<f64> {
    y.iter().map(|&v| sigmoid(v).clamp(eps, 1.0 - eps)).collect()
}

/// Passthrough / transformed index sets for layer `index`.
///
/// Layers come in pairs with opposite parity. Pairs alternate between an
/// interleaved split (even vs. odd coordinates) and a contiguous split at
/// `k = dim / 2`, so every pair of coordinates is separated by some layer.
pub fn coupling_partition(dim: usize, index: usize) -> (Vec<usize>, Vec<usize>) {
    let interleaved = (index / 2) % 2 == 0;
    let parity = index % 2;
    let k = dim / 2;
    let first: Vec<usize> = if interleaved {
        (0..dim).filter(|i| i % 2 == 0).collect()
    } else {
        (0..k).collect()
    };
    let second: Vec<usize> = (0..dim).filter(|i| !first.contains(i)).collect();
    if parity == 0 {
        (first, second)
    } else {
        (second, first)
    }
}

/// Scale or shift network with its noise-level gate and offset.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioner {
    net: Mlp,
    gate: Mlp,
    offset: Mlp,
}

#[derive(Debug, Clone)]
struct ConditionerCache {
    net: MlpCache,
    net_out: Vec<f64>,
    gate: Vec<f64>,
    gate_cache: MlpCache,
    offset_cache: MlpCache,
}

impl Conditioner {
    fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let affine = || Mlp::new(vec![Dense::zeros(1, out_dim, Activation::Identity)]).expect("valid");
        Self {
            net: Mlp::tanh_net(in_dim, hidden, out_dim, true, rng),
            gate: affine(),
            offset: affine(),
        }
    }

    pub fn from_parts(net: Mlp, gate: Mlp, offset: Mlp) -> Result<Self> {
        let out = net.out_dim();
        for (name, m) in [("gate", &gate), ("offset", &offset)] {
            if m.in_dim() != 1 || m.out_dim() != out {
                return Err(Error::Shape(format!(
                    "{name} map must be 1 -> {out}, got {} -> {}",
                    m.in_dim(),
                    m.out_dim()
                )));
            }
        }
        Ok(Self { net, gate, offset })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn gate(&self) -> &Mlp {
        &self.gate
    }

    pub fn offset(&self) -> &Mlp {
        &self.offset
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn gate_mut(&mut self) -> &mut Mlp {
        &mut self.gate
    }

    pub fn offset_mut(&mut self) -> &mut Mlp {
        &mut self.offset
    }

    fn eval(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        let h = self.net.eval(x)?;
        let g = self.gate.eval(&[sigma])?;
        let b = self.offset.eval(&[sigma])?;
        Ok(h.iter()
            .zip(g.iter().zip(&b))
            .map(|(h, (g, b))| sigmoid(*g) * h + b)
            .collect())
    }

    fn forward(&self, x: &[f64], sigma: f64) -> Result<(Vec<f64>, ConditionerCache)> {
        let (net_out, net) = self.net.forward(x)?;
        let (g_pre, gate_cache) = self.gate.forward(&[sigma])?;
        let (b, offset_cache) = self.offset.forward(&[sigma])?;
        let gate: Vec<f64> = g_pre.iter().map(|&v| sigmoid(v)).collect();
        let out = net_out
            .iter()
            .zip(gate.iter().zip(&b))
            .map(|(h, (g, b))| g * h + b)
            .collect();
        Ok((
            out,
            ConditionerCache {
                net,
                net_out,
                gate,
                gate_cache,
                offset_cache,
            },
        ))
    }

    /// Backpropagates `d_out`; returns the gradient with respect to the net input.
    fn backward(&self, cache: &ConditionerCache, d_out: &[f64], grads: &mut Conditioner) -> Result<Vec<f64>> {
        let d_net: Vec<f64> = d_out.iter().zip(&cache.gate).map(|(d, g)| d * g).collect();
        let d_gate: Vec<f64> = d_out
            .iter()
            .zip(cache.gate.iter().zip(&cache.net_out))
            .map(|(d, (g, h))| d * h * g * (1.0 - g))
            .collect();
        self.gate.backward_into(&cache.gate_cache, &d_gate, &mut grads.gate)?;
        self.offset.backward_into(&cache.offset_cache, d_out, &mut grads.offset)?;
        self.net.backward_into(&cache.net, &d_net, &mut grads.net)
    }
}

impl Params for Conditioner {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.net.visit(f);
        self.gate.visit(f);
        self.offset.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.net.visit_mut(f);
        self.gate.visit_mut(f);
        self.offset.visit_mut(f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingLayer {
    dim: usize,
    pass: Vec<usize>,
    trans: Vec<usize>,
    scale: Conditioner,
    shift: Conditioner,
    scale_clamp: f64,
}

#[derive(Debug, Clone)]
struct LayerCache {
    x_trans: Vec<f64>,
    s_raw: Vec<f64>,
    exp_s: Vec<f64>,
    scale: ConditionerCache,
    shift: ConditionerCache,
}

impl CouplingLayer {
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        pass: Vec<usize>,
        trans: Vec<usize>,
        hidden: &[usize],
        scale_clamp: f64,
        rng: &mut R,
    ) -> Result<Self> {
        validate_partition(dim, &pass, &trans)?;
        let scale = Conditioner::init(pass.len(), trans.len(), hidden, rng);
        let shift = Conditioner::init(pass.len(), trans.len(), hidden, rng);
        Self::from_parts(dim, pass, trans, scale, shift, scale_clamp)
    }

    pub fn from_parts(
        dim: usize,
        pass: Vec<usize>,
        trans: Vec<usize>,
        scale: Conditioner,
        shift: Conditioner,
        scale_clamp: f64,
    ) -> Result<Self> {
        validate_partition(dim, &pass, &trans)?;
        if !(scale_clamp > 0.0) || !scale_clamp.is_finite() {
            return Err(Error::Param(format!("scale clamp must be positive, got {scale_clamp}")));
        }
        for (name, c) in [("scale", &scale), ("shift", &shift)] {
            if c.net.in_dim() != pass.len() || c.net.out_dim() != trans.len() {
                return Err(Error::Shape(format!(
                    "{name} network maps {} -> {}, layer needs {} -> {}",
                    c.net.in_dim(),
                    c.net.out_dim(),
                    pass.len(),
                    trans.len()
                )));
            }
        }
        Ok(Self {
            dim,
            pass,
            trans,
            scale,
            shift,
            scale_clamp,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn passthrough(&self) -> &[usize] {
        &self.pass
    }

    pub fn transformed(&self) -> &[usize] {
        &self.trans
    }

    pub fn scale(&self) -> &Conditioner {
        &self.scale
    }

    pub fn shift(&self) -> &Conditioner {
        &self.shift
    }

    pub fn scale_mut(&mut self) -> &mut Conditioner {
        &mut self.scale
    }

    pub fn shift_mut(&mut self) -> &mut Conditioner {
        &mut self.shift
    }

    pub fn scale_clamp(&self) -> f64 {
        self.scale_clamp
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::Shape(format!(
                "coupling layer expects {} coordinates, got {}",
                self.dim,
                v.len()
            )));
        }
        Ok(())
    }

    fn gather(&self, v: &[f64]) -> Vec<f64> {
        self.pass.iter().map(|&i| v[i]).collect()
    }

    fn squash(&self, raw: f64) -> f64 {
        self.scale_clamp * (raw / self.scale_clamp).tanh()
    }

    fn conditioners(&self, passthrough: &[f64], sigma: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let s_raw = self.scale.eval(passthrough, sigma)?;
        let t = self.shift.eval(passthrough, sigma)?;
        check_finite(&s_raw, &t)?;
        Ok((s_raw.into_iter().map(|r| self.squash(r)).collect(), t))
    }

    pub fn forward(&self, x: &[f64], sigma: f64) -> Result<(Vec<f64>, f64)> {
        self.check_len(x)?;
        let (s, t) = self.conditioners(&self.gather(x), sigma)?;
        let mut y = x.to_vec();
        for (k, &i) in self.trans.iter().enumerate() {
            y[i] = x[i] * s[k].exp() + t[k];
        }
        Ok((y, s.iter().sum()))
    }

    pub fn inverse(&self, y: &[f64], sigma: f64) -> Result<Vec<f64>> {
        self.check_len(y)?;
        let (s, t) = self.conditioners(&self.gather(y), sigma)?;
        let mut x = y.to_vec();
        for (k, &i) in self.trans.iter().enumerate() {
            x[i] = (y[i] - t[k]) * (-s[k]).exp();
        }
        Ok(x)
    }

    fn forward_cached(&self, x: &[f64], sigma: f64) -> Result<(Vec<f64>, f64, LayerCache)> {
        let xp = self.gather(x);
        let (s_raw, scale) = self.scale.forward(&xp, sigma)?;
        let (t, shift) = self.shift.forward(&xp, sigma)?;
        check_finite(&s_raw, &t)?;
        let mut y = x.to_vec();
        let mut logdet = 0.0;
        let mut exp_s = Vec::with_capacity(self.trans.len());
        let mut x_trans = Vec::with_capacity(self.trans.len());
        for (k, &i) in self.trans.iter().enumerate() {
            let s = self.squash(s_raw[k]);
            let e = s.exp();
            logdet += s;
            y[i] = x[i] * e + t[k];
            exp_s.push(e);
            x_trans.push(x[i]);
        }
        Ok((
            y,
            logdet,
            LayerCache {
                x_trans,
                s_raw,
                exp_s,
                scale,
                shift,
            },
        ))
    }

    /// Given `dL/dy` and `dL/d logdet`, accumulates parameter gradients and
    /// returns `dL/dx`.
    fn backward(
        &self,
        cache: &LayerCache,
        grad_y: &[f64],
        grad_logdet: f64,
        grads: &mut CouplingLayer,
    ) -> Result<Vec<f64>> {
        let m = self.trans.len();
        let mut grad_x = grad_y.to_vec();
        let mut d_s_raw = Vec::with_capacity(m);
        let mut d_t = Vec::with_capacity(m);
        for (k, &i) in self.trans.iter().enumerate() {
            let gy = grad_y[i];
            let e = cache.exp_s[k];
            grad_x[i] = gy * e;
            let d_s = gy * cache.x_trans[k] * e + grad_logdet;
            let th = (cache.s_raw[k] / self.scale_clamp).tanh();
            d_s_raw.push(d_s * (1.0 - th * th));
            d_t.push(gy);
        }
        let gp_scale = self.scale.backward(&cache.scale, &d_s_raw, &mut grads.scale)?;
        let gp_shift = self.shift.backward(&cache.shift, &d_t, &mut grads.shift)?;
        for (k, &i) in self.pass.iter().enumerate() {
            grad_x[i] += gp_scale[k] + gp_shift[k];
        }
        Ok(grad_x)
    }
}

fn validate_partition(dim: usize, pass: &[usize], trans: &[usize]) -> Result<()> {
    if pass.is_empty() || trans.is_empty() {
        return Err(Error::Shape("coupling partition needs both halves nonempty".into()));
    }
    let mut seen = vec![false; dim];
    for &i in pass.iter().chain(trans) {
        if i >= dim || seen[i] {
            return Err(Error::Shape(format!("coupling partition is not a split of 0..{dim}")));
        }
        seen[i] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Shape(format!("coupling partition does not cover 0..{dim}")));
    }
    Ok(())
}

fn check_finite(s: &[f64], t: &[f64]) -> Result<()> {
    if s.iter().chain(t).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite conditioner output".into()));
    }
    Ok(())
}

impl Params for CouplingLayer {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.scale.visit(f);
        self.shift.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.scale.visit_mut(f);
        self.shift.visit_mut(f);
    }
}

/// Logit layer plus a stack of coupling layers, mapping `(0,1)^d` to `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingFlow {
    dim: usize,
    layers: Vec<CouplingLayer>,
    unit_eps: f64,
    sigma_max: f64,
}

/// Activation record of one pass through the coupling stack.
struct StackCache {
    layers: Vec<LayerCache>,
}

impl CouplingFlow {
    pub fn new<R: Rng + ?Sized>(config: &FlowConfig, rng: &mut R) -> Result<Self> {
        if config.dim < 2 {
            return Err(Error::Param("coupling flow needs at least 2 dimensions".into()));
        }
        if config.layers < 2 {
            return Err(Error::Param("coupling flow needs at least 2 layers".into()));
        }
        let layers = (0..config.layers)
            .map(|l| {
                let (pass, trans) = coupling_partition(config.dim, l);
                CouplingLayer::new(config.dim, pass, trans, &config.hidden, config.scale_clamp, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(config.dim, layers, config.unit_eps, config.sigma_max)
    }

    pub fn from_parts(dim: usize, layers: Vec<CouplingLayer>, unit_eps: f64, sigma_max: f64) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::Param("coupling flow needs at least 2 layers".into()));
        }
        if layers.iter().any(|l| l.dim != dim) {
            return Err(Error::Shape("coupling layer dimension differs from flow".into()));
        }
        if !(unit_eps > 0.0 && unit_eps < 0.5) || !(sigma_max >= 0.0) || !sigma_max.is_finite() {
            return Err(Error::Param("invalid flow clamp or noise range".into()));
        }
        Ok(Self {
            dim,
            layers,
            unit_eps,
            sigma_max,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> &[CouplingLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [CouplingLayer] {
        &mut self.layers
    }

    pub fn unit_eps(&self) -> f64 {
        self.unit_eps
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.fill(0.0);
        g
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::Shape(format!(
                "flow expects {} coordinates, got {}",
                self.dim,
                v.len()
            )));
        }
        Ok(())
    }

    /// Coupling stack only (no logit), in logit space.
    pub fn stack_forward(&self, y: &[f64], sigma: f64) -> Result<(Vec<f64>, f64)> {
        self.check_len(y)?;
        let mut cur = y.to_vec();
        let mut logdet = 0.0;
        for (l, layer) in self.layers.iter().enumerate() {
            let (next, ld) = layer.forward(&cur, sigma).map_err(|e| tag_layer(e, l))?;
            cur = next;
            logdet += ld;
        }
        Ok((cur, logdet))
    }

    pub fn stack_inverse(&self, z: &[f64], sigma: f64) -> Result<Vec<f64>> {
        self.check_len(z)?;
        let mut cur = z.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            cur = layer.inverse(&cur, sigma).map_err(|e| tag_layer(e, l))?;
        }
        Ok(cur)
    }

    /// Gaussian-latent log-density of the coupling stack at `y`.
    pub fn stack_log_prob(&self, y: &[f64], sigma: f64) -> Result<f64> {
        let (z, logdet) = self.stack_forward(y, sigma)?;
        Ok(std_normal_log_pdf_sum(&z) + logdet)
    }

    pub fn forward(&self, u: &[f64], sigma: f64) -> Result<(Vec<f64>, f64)> {
        self.check_len(u)?;
        let (y, logit_ld) = logit_forward(u, self.unit_eps);
        let (z, ld) = self.stack_forward(&y, sigma)?;
        Ok((z, ld + logit_ld))
    }

    pub fn inverse(&self, z: &[f64], sigma: f64) -> Result<Vec<f64>> {
        let y = self.stack_inverse(z, sigma)?;
        Ok(sigmoid_inverse(&y, self.unit_eps))
    }

    /// Conditional copula log-density `log c(u | sigma)`.
    pub fn log_prob(&self, u: &[f64], sigma: f64) -> Result<f64> {
        let (z, logdet) = self.forward(u, sigma)?;
        Ok(std_normal_log_pdf_sum(&z) + logdet)
    }

    /// Latent draws pushed through the inverse stack (logit space).
    pub fn sample_stack<R: Rng + ?Sized>(&self, n: usize, sigma: f64, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        (0..n)
            .map(|_| {
                let z: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(rng)).collect();
                self.stack_inverse(&z, sigma)
            })
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, sigma: f64, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        if n == 0 {
            return Err(Error::Param("sample count must be at least 1".into()));
        }
        Ok(self
            .sample_stack(n, sigma, rng)?
            .into_iter()
            .map(|y| sigmoid_inverse(&y, self.unit_eps))
            .collect())
    }

    fn stack_forward_cached(&self, y: &[f64], sigma: f64) -> Result<(Vec<f64>, f64, StackCache)> {
        self.check_len(y)?;
        let mut cur = y.to_vec();
        let mut logdet = 0.0;
        let mut caches = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let (next, ld, cache) = layer.forward_cached(&cur, sigma).map_err(|e| tag_layer(e, l))?;
            cur = next;
            logdet += ld;
            caches.push(cache);
        }
        Ok((cur, logdet, StackCache { layers: caches }))
    }

    /// Negative stack log-density at `y`, with its parameter gradient added
    /// into `grads`.
    pub fn stack_nll_accumulate(&self, y: &[f64], sigma: f64, grads: &mut CouplingFlow) -> Result<f64> {
        let (z, logdet, cache) = self.stack_forward_cached(y, sigma)?;
        let nll = -(std_normal_log_pdf_sum(&z) + logdet);
        // d(0.5|z|^2)/dz = z, d(-logdet)/dlogdet = -1 for every layer.
        let mut g = z;
        for (l, (layer, c)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            g = layer
                .backward(c, &g, -1.0, &mut grads.layers[l])
                .map_err(|e| tag_layer(e, l))?;
        }
        Ok(nll)
    }

    /// Mean negative stack log-density over a row-major batch and its gradient.
    pub fn stack_nll_grad(&self, ys: &[f64], sigmas: &[f64]) -> Result<(f64, CouplingFlow)> {
        let n = sigmas.len();
        if n == 0 || ys.len() != n * self.dim {
            return Err(Error::Shape(format!(
                "batch of {} values does not hold {n} rows of width {}",
                ys.len(),
                self.dim
            )));
        }
        let mut grads = self.zeros_like();
        let mut total = 0.0;
        for (row, &sigma) in ys.chunks_exact(self.dim).zip(sigmas) {
            total += self.stack_nll_accumulate(row, sigma, &mut grads)?;
        }
        grads.scale(1.0 / n as f64);
        Ok((total / n as f64, grads))
    }

    /// Mean negative `log_prob` over a batch of unit-cube rows and its
    /// parameter gradient.
    pub fn nll_grad(&self, us: &[f64], sigmas: &[f64]) -> Result<(f64, CouplingFlow)> {
        let n = sigmas.len();
        if n == 0 || us.len() != n * self.dim {
            return Err(Error::Shape(format!(
                "batch of {} values does not hold {n} rows of width {}",
                us.len(),
                self.dim
            )));
        }
        let mut ys = Vec::with_capacity(us.len());
        let mut logit_ld = 0.0;
        for row in us.chunks_exact(self.dim) {
            let (y, ld) = logit_forward(row, self.unit_eps);
            ys.extend(y);
            logit_ld += ld;
        }
        let (loss, grads) = self.stack_nll_grad(&ys, sigmas)?;
        Ok((loss - logit_ld / n as f64, grads))
    }
}

fn tag_layer(e: Error, layer: usize) -> Error {
    match e {
        Error::Numerical(msg) => Error::Numerical(format!("coupling layer {layer}: {msg}")),
        other => other,
    }
}

impl Params for CouplingFlow {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        for l in &self.layers {
            l.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for l in &mut self.layers {
            l.visit_mut(f);
        }
    }
}

/// `log N(0; 0, I_d)`, the latent log-density at the origin.
pub fn latent_log_density_at_origin(dim: usize) -> f64 {
    -0.5 * dim as f64 * LN_2PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{adam_step, AdamConfig, AdamState};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn small_config(dim: usize, layers: usize) -> FlowConfig {
        FlowConfig {
            layers,
            hidden: vec![8, 8],
            ..FlowConfig::new(dim)
        }
    }

    /// Flow with every parameter (including the zero-initialized heads)
    /// randomized, so logdets and shifts are far from identity.
    pub(crate) fn random_flow(dim: usize, layers: usize, seed: u64, spread: f64) -> CouplingFlow {
        let mut r = rng(seed);
        let mut flow = CouplingFlow::new(&small_config(dim, layers), &mut r).unwrap();
        flow.visit_mut(&mut |s| {
            for v in s.iter_mut() {
                *v = r.random_range(-spread..spread);
            }
        });
        flow
    }

    fn random_unit(dim: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
        (0..dim).map(|_| r.random_range(0.02..0.98)).collect()
    }

    fn numeric_log_det<F: Fn(&[f64]) -> Vec<f64>>(f: F, x: &[f64], step: f64) -> f64 {
        let d = x.len();
        let mut jac = nalgebra::DMatrix::<f64>::zeros(d, d);
        let mut xp = x.to_vec();
        for j in 0..d {
            xp[j] = x[j] + step;
            let fp = f(&xp);
            xp[j] = x[j] - step;
            let fm = f(&xp);
            xp[j] = x[j];
            for i in 0..d {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * step);
            }
        }
        jac.determinant().abs().ln()
    }

    #[test]
    fn partitions_alternate_and_split_neighbours() {
        let (p0, t0) = coupling_partition(8, 0);
        assert_eq!(p0, vec![0, 2, 4, 6]);
        assert_eq!(t0, vec![1, 3, 5, 7]);
        let (p1, t1) = coupling_partition(8, 1);
        assert_eq!((p1, t1), (t0, p0));
        let (p2, t2) = coupling_partition(8, 2);
        assert_eq!(p2, vec![0, 1, 2, 3]);
        assert_eq!(t2, vec![4, 5, 6, 7]);
        let (p3, _) = coupling_partition(8, 3);
        assert_eq!(p3, vec![4, 5, 6, 7]);
        assert_eq!(coupling_partition(2, 0), (vec![0], vec![1]));
        assert_eq!(coupling_partition(2, 2), (vec![0], vec![1]));
        let (p, t) = coupling_partition(5, 2);
        assert_eq!((p.len(), t.len()), (2, 3));
    }

    #[test]
    fn logit_at_center() {
        let (y, ld) = logit_forward(&[0.5; 3], 1e-7);
        assert!(y.iter().all(|&v| v == 0.0));
        assert!((ld - 3.0 * 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_inverts_logit() {
        let mut r = rng(1);
        for _ in 0..1000 {
            let u = random_unit(4, &mut r);
            let (y, _) = logit_forward(&u, 1e-7);
            let back = sigmoid_inverse(&y, 1e-7);
            for (a, b) in u.iter().zip(&back) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn logit_logdet_matches_jacobian() {
        let mut r = rng(2);
        for _ in 0..20 {
            let u = random_unit(5, &mut r);
            let (_, ld) = logit_forward(&u, 1e-7);
            let num = numeric_log_det(|v| logit_forward(v, 1e-7).0, &u, 1e-6);
            assert!((ld - num).abs() <= 1e-5 * ld.abs(), "{ld} vs {num}");
        }
    }

    #[test]
    fn fresh_layer_is_identity() {
        let flow = CouplingFlow::new(&small_config(6, 2), &mut rng(3)).unwrap();
        let x = [0.3, -1.0, 2.0, 0.1, 5.0, -3.0];
        for sigma in [0.0, 0.2] {
            let (y, ld) = flow.layers()[0].forward(&x, sigma).unwrap();
            assert_eq!(y, x.to_vec());
            assert_eq!(ld, 0.0);
            assert_eq!(flow.layers()[0].inverse(&x, sigma).unwrap(), x.to_vec());
        }
    }

    #[test]
    fn constant_scale_layer() {
        let mut flow = CouplingFlow::new(&small_config(6, 2), &mut rng(4)).unwrap();
        let c = 0.7;
        let layer = &mut flow.layers_mut()[0];
        let clamp = layer.scale_clamp();
        let raw = clamp * (c / clamp).atanh();
        layer.scale_mut().offset_mut().layers_mut()[0].bias_mut().fill(raw);
        let x = [0.3, -1.0, 2.0, 0.1, 5.0, -3.0];
        let (y, ld) = flow.layers()[0].forward(&x, 0.1).unwrap();
        let trans = flow.layers()[0].transformed().to_vec();
        for i in 0..6 {
            if trans.contains(&i) {
                assert!((y[i] - x[i] * c.exp()).abs() < 1e-12);
            } else {
                assert_eq!(y[i], x[i]);
            }
        }
        assert!((ld - 3.0 * c).abs() < 1e-12);
    }

    #[test]
    fn scale_is_clamped() {
        let mut flow = CouplingFlow::new(&small_config(4, 2), &mut rng(5)).unwrap();
        flow.layers_mut()[0].scale_mut().offset_mut().layers_mut()[0].bias_mut().fill(1e6);
        let (_, ld) = flow.layers()[0].forward(&[0.1, 0.2, 0.3, 0.4], 0.0).unwrap();
        assert!((ld - 2.0 * DEFAULT_SCALE_CLAMP).abs() < 1e-9);
    }

    #[test]
    fn non_finite_conditioner_reports_layer() {
        let mut flow = random_flow(4, 3, 6, 0.5);
        flow.layers_mut()[1].shift_mut().offset_mut().layers_mut()[0].bias_mut()[0] = f64::INFINITY;
        let err = flow.stack_forward(&[0.1, 0.2, 0.3, 0.4], 0.0).unwrap_err();
        assert!(err.to_string().contains("coupling layer 1"), "{err}");
    }

    #[test]
    fn layer_logdet_matches_jacobian() {
        let flow = random_flow(8, 4, 7, 0.6);
        let mut r = rng(8);
        for layer in flow.layers() {
            for _ in 0..20 {
                let x: Vec<f64> = (0..8).map(|_| r.random_range(-2.0..2.0)).collect();
                let sigma = r.random_range(0.0..0.3);
                let (_, ld) = layer.forward(&x, sigma).unwrap();
                let num = numeric_log_det(|v| layer.forward(v, sigma).unwrap().0, &x, 1e-6);
                assert!((ld - num).abs() <= 1e-4 * ld.abs().max(1e-2), "{ld} vs {num}");
            }
        }
    }

    #[test]
    fn round_trips() {
        let flow = random_flow(6, 4, 9, 0.5);
        let mut r = rng(10);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..6).map(|_| r.random_range(-3.0..3.0)).collect();
            let sigma = r.random_range(0.0..0.3);
            for layer in flow.layers() {
                let (y, _) = layer.forward(&x, sigma).unwrap();
                let back = layer.inverse(&y, sigma).unwrap();
                for (a, b) in x.iter().zip(&back) {
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
        for sigma in [0.0, flow.sigma_max()] {
            for _ in 0..100 {
                let u = random_unit(6, &mut r);
                let (z, _) = flow.forward(&u, sigma).unwrap();
                let back = flow.inverse(&z, sigma).unwrap();
                for (a, b) in u.iter().zip(&back) {
                    assert!((a - b).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn identity_flow_is_logit() {
        let flow = CouplingFlow::new(&small_config(3, 4), &mut rng(11)).unwrap();
        let u = [0.2, 0.5, 0.9];
        let (z, ld) = flow.forward(&u, 0.0).unwrap();
        let (y, lld) = logit_forward(&u, flow.unit_eps());
        assert_eq!(z, y);
        assert_eq!(ld, lld);
        let lp = flow.log_prob(&[0.5; 3], 0.0).unwrap();
        let expected = latent_log_density_at_origin(3) + 3.0 * 2.0 * 2f64.ln();
        assert!((lp - expected).abs() < 1e-12);
        let edge = flow.log_prob(&[1e-12, 0.5, 1.0 - 1e-12], 0.0).unwrap();
        assert!(edge.is_finite());
    }

    #[test]
    fn total_logdet_is_sum_of_layers() {
        let flow = random_flow(5, 4, 12, 0.4);
        let u = [0.1, 0.3, 0.5, 0.7, 0.9];
        let (z, total) = flow.forward(&u, 0.1).unwrap();
        let (mut cur, mut sum) = logit_forward(&u, flow.unit_eps());
        for layer in flow.layers() {
            let (next, ld) = layer.forward(&cur, 0.1).unwrap();
            cur = next;
            sum += ld;
        }
        assert_eq!(cur, z);
        assert!((total - sum).abs() < 1e-12);
    }

    #[test]
    fn identity_flow_samples() {
        let flow = CouplingFlow::new(&small_config(2, 2), &mut rng(13)).unwrap();
        let samples = flow.sample(100_000, 0.0, &mut rng(14)).unwrap();
        for j in 0..2 {
            let mean = samples.iter().map(|s| s[j]).sum::<f64>() / samples.len() as f64;
            assert!((mean - 0.5).abs() < 0.01);
        }
        assert!(samples.iter().flatten().all(|&v| v > 0.0 && v < 1.0));
        let again = flow.sample(100, 0.0, &mut rng(14)).unwrap();
        assert_eq!(again[..], samples[..100]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let flow = random_flow(4, 2, 15, 0.4);
        let mut r = rng(16);
        let us: Vec<f64> = (0..3).flat_map(|_| random_unit(4, &mut r)).collect();
        let sigmas = [0.0, 0.1, 0.25];
        let (_, grads) = flow.nll_grad(&us, &sigmas).unwrap();
        let analytic = grads.to_flat();
        let theta = flow.to_flat();
        let mut probe = flow.clone();
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let i = r.random_range(0..theta.len());
            let step = 1e-5;
            let mut t = theta.clone();
            t[i] += step;
            probe.set_flat(&t).unwrap();
            let fp = probe.nll_grad(&us, &sigmas).unwrap().0;
            t[i] -= 2.0 * step;
            probe.set_flat(&t).unwrap();
            let fm = probe.nll_grad(&us, &sigmas).unwrap().0;
            let numeric = (fp - fm) / (2.0 * step);
            worst = worst.max(crate::nn::gradient_error(analytic[i], numeric));
        }
        assert!(worst < 1e-3, "worst gradient error {worst}");
    }

    #[test]
    fn identity_init_gradients_finite() {
        let flow = CouplingFlow::new(&small_config(4, 2), &mut rng(17)).unwrap();
        let us = [0.3, 0.7, 0.4, 0.6, 0.7, 0.3, 0.6, 0.4];
        let (_, grads) = flow.nll_grad(&us, &[0.0, 0.0]).unwrap();
        assert!(grads.all_finite());
    }

    #[test]
    fn adam_step_reduces_batch_nll() {
        let mut flow = CouplingFlow::new(&small_config(4, 4), &mut rng(18)).unwrap();
        let mut r = rng(19);
        // Strongly dependent batch: u2 tracks u1, u4 tracks u3.
        let mut us = Vec::new();
        for _ in 0..64 {
            let a: f64 = r.random_range(0.05..0.95);
            let b: f64 = r.random_range(0.05..0.95);
            us.extend([a, (a + 0.01).min(0.99), b, (b * 0.9 + 0.05)]);
        }
        let sigmas = vec![0.0; 64];
        let (before, grads) = flow.nll_grad(&us, &sigmas).unwrap();
        let mut state = AdamState::for_params(AdamConfig::default(), &flow);
        adam_step(&mut flow, &grads, &mut state).unwrap();
        let (after, _) = flow.nll_grad(&us, &sigmas).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn bad_shapes() {
        let flow = CouplingFlow::new(&small_config(4, 2), &mut rng(20)).unwrap();
        assert!(matches!(flow.forward(&[0.5; 3], 0.0), Err(Error::Shape(_))));
        assert!(flow.nll_grad(&[0.5; 7], &[0.0, 0.0]).is_err());
        assert!(CouplingFlow::new(&small_config(1, 2), &mut rng(0)).is_err());
        assert!(CouplingFlow::new(&small_config(4, 1), &mut rng(0)).is_err());
        assert!(validate_partition(3, &[0], &[0, 1]).is_err());
    }
}
