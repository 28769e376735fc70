//! Small dense networks with hand-written backpropagation, plus Adam.
//!
//! Only what the coupling conditioners need: fully connected layers with
//! `tanh` or identity activations, exact gradients, and a flat-parameter
//! optimizer. Weights are row-major `(out_dim, in_dim)`.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Anything that owns trainable `f64` parameters in a fixed visiting order.
///
/// Gradients are stored in a value of the same type, so the visiting order
/// lines parameters up with their gradients.
pub trait Params {
    fn visit(&self, f: &mut dyn FnMut(&[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |s| n += s.len());
        n
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |s| out.extend_from_slice(s));
        out
    }

    fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(Error::Shape(format!(
                "flat parameter vector has {} entries, expected {n}",
                flat.len()
            )));
        }
        let mut offset = 0;
        self.visit_mut(&mut |s| {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        });
        Ok(())
    }

    fn fill(&mut self, value: f64) {
        self.visit_mut(&mut |s| s.fill(value));
    }

    fn scale(&mut self, factor: f64) {
        self.visit_mut(&mut |s| s.iter_mut().for_each(|v| *v *= factor));
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |s| ok &= s.iter().all(|v| v.is_finite()));
        ok
    }
}

/// One fully connected layer: `activation(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl Dense {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Shape("layer dimensions must be positive".into()));
        }
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::Shape(format!(
                "layer {out_dim}x{in_dim} given {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Param("layer parameters must be finite".into()));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn xavier<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
        let weights = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.in_dim).zip(&self.bias) {
            let mut acc = *b;
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            out.push(match self.activation {
                Activation::Tanh => acc.tanh(),
                Activation::Identity => acc,
            });
        }
    }
}

/// Feed-forward network: a chain of [`Dense`] layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Post-activation values recorded by [`Mlp::forward`]; `values[0]` is the input.
#[derive(Debug, Clone)]
pub struct MlpCache {
    values: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.values.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Shape(format!(
                    "layer {l} outputs {} values but layer {} expects {}",
                    pair[0].out_dim,
                    l + 1,
                    pair[1].in_dim
                )));
            }
        }
        Ok(Self { layers })
    }

    /// `tanh` hidden layers and an identity output layer.
    ///
    /// With `zero_output` the output layer starts at all zeros, so the
    /// network initially returns the zero vector for every input.
    pub fn tanh_net<R: Rng + ?Sized>(
        in_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        zero_output: bool,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = in_dim;
        for &h in hidden {
            layers.push(Dense::xavier(prev, h, Activation::Tanh, rng));
            prev = h;
        }
        layers.push(if zero_output {
            Dense::zeros(prev, out_dim, Activation::Identity)
        } else {
            Dense::xavier(prev, out_dim, Activation::Identity, rng)
        });
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.in_dim, l.out_dim, l.activation))
                .collect(),
        }
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.in_dim(),
                input.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        self.check_input(input)?;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.to_vec());
        for layer in &self.layers {
            let mut out = Vec::with_capacity(layer.out_dim);
            layer.apply(values.last().expect("nonempty"), &mut out);
            values.push(out);
        }
        let output = values.last().expect("nonempty").clone();
        Ok((output, MlpCache { values }))
    }

    /// Forward pass without keeping the activation record.
    pub fn eval(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.apply(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Gradients of `<output_grad, output>` with respect to the parameters
    /// and the input.
    pub fn backward(&self, cache: &MlpCache, output_grad: &[f64]) -> Result<(Mlp, Vec<f64>)> {
        let mut grads = self.zeros_like();
        let input_grad = self.backward_into(cache, output_grad, &mut grads)?;
        Ok((grads, input_grad))
    }

    /// Like [`Mlp::backward`] but adds the parameter gradients into `grads`.
    pub fn backward_into(
        &self,
        cache: &MlpCache,
        output_grad: &[f64],
        grads: &mut Mlp,
    ) -> Result<Vec<f64>> {
        self.check_cache(cache)?;
        if output_grad.len() != self.out_dim() {
            return Err(Error::Shape(format!(
                "output gradient has {} entries, network has {} outputs",
                output_grad.len(),
                self.out_dim()
            )));
        }
        if grads.layers.len() != self.layers.len()
            || grads
                .layers
                .iter()
                .zip(&self.layers)
                .any(|(g, l)| g.in_dim != l.in_dim || g.out_dim != l.out_dim)
        {
            return Err(Error::Shape("gradient buffer does not match network".into()));
        }

        let mut delta = output_grad.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.values[l];
            let output = &cache.values[l + 1];
            if layer.activation == Activation::Tanh {
                for (d, y) in delta.iter_mut().zip(output) {
                    *d *= 1.0 - y * y;
                }
            }
            let g = &mut grads.layers[l];
            for (o, &d) in delta.iter().enumerate() {
                g.bias[o] += d;
                if d != 0.0 {
                    let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (w, x) in row.iter_mut().zip(input) {
                        *w += d * x;
                    }
                }
            }
            let mut prev = vec![0.0; layer.in_dim];
            for (row, &d) in layer.weights.chunks_exact(layer.in_dim).zip(&delta) {
                if d != 0.0 {
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    fn check_cache(&self, cache: &MlpCache) -> Result<()> {
        let stale = cache.values.len() != self.layers.len() + 1
            || cache.values[0].len() != self.in_dim()
            || self
                .layers
                .iter()
                .zip(&cache.values[1..])
                .any(|(l, v)| v.len() != l.out_dim);
        if stale {
            return Err(Error::Shape(
                "activation record was not produced by this network".into(),
            ));
        }
        Ok(())
    }
}

impl Params for Mlp {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        for l in &self.layers {
            f(&l.weights);
            f(&l.bias);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for l in &mut self.layers {
            f(&mut l.weights);
            f(&mut l.bias);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, num_params: usize) -> Self {
        Self {
            config,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn for_params<P: Params + ?Sized>(config: AdamConfig, params: &P) -> Self {
        Self::new(config, params.num_params())
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<P: Params + ?Sized>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState,
) -> Result<()> {
    let g = grads.to_flat();
    if g.len() != state.m.len() || params.num_params() != g.len() {
        return Err(Error::Shape(format!(
            "adam state holds {} moments, parameters {}, gradients {}",
            state.m.len(),
            params.num_params(),
            g.len()
        )));
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let (m, v) = (&mut state.m, &mut state.v);
    let mut i = 0;
    params.visit_mut(&mut |slice| {
        for p in slice.iter_mut() {
            let gi = g[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
            i += 1;
        }
    });
    Ok(())
}

/// Largest per-coordinate disagreement between the analytic gradient
/// returned by `f` and central differences with the given step.
///
/// Coordinates where both gradients are below `1e-6` in magnitude are
/// scored by absolute difference, the rest by relative difference.
pub fn grad_check<F>(f: F, point: &[f64], step: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let errors = grad_errors(&f, point, step)?;
    Ok(errors.into_iter().fold(0.0, f64::max))
}

/// Per-coordinate errors underlying [`grad_check`].
pub fn grad_errors<F>(f: &F, point: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (value, analytic) = f(point)?;
    if !value.is_finite() {
        return Err(Error::Numerical(format!("function value {value} at base point")));
    }
    if analytic.len() != point.len() {
        return Err(Error::Shape(format!(
            "gradient has {} entries for a {}-dimensional point",
            analytic.len(),
            point.len()
        )));
    }
    let mut x = point.to_vec();
    let mut errors = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let orig = x[i];
        x[i] = orig + step;
        let (fp, _) = f(&x)?;
        x[i] = orig - step;
        let (fm, _) = f(&x)?;
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite evaluation while perturbing coordinate {i}"
            )));
        }
        let numeric = (fp - fm) / (2.0 * step);
        errors.push(gradient_error(analytic[i], numeric));
    }
    Ok(errors)
}

/// Relative error between gradients, absolute when both are below 1e-6.
pub fn gradient_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-6 {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_weights_return_bias() {
        let layer = Dense::new(3, 2, vec![0.0; 6], vec![0.7, -1.2], Activation::Identity).unwrap();
        let net = Mlp::new(vec![layer]).unwrap();
        let (out, _) = net.forward(&[5.0, -3.0, 9.0]).unwrap();
        assert_eq!(out, vec![0.7, -1.2]);
    }

    #[test]
    fn identity_layer() {
        let net = Mlp::new(vec![
            Dense::new(1, 1, vec![1.0], vec![0.0], Activation::Identity).unwrap()
        ])
        .unwrap();
        assert_eq!(net.eval(&[0.3]).unwrap(), vec![0.3]);
    }

    #[test]
    fn forward_matches_straight_line_evaluation() {
        let net = Mlp::tanh_net(3, &[4], 2, false, &mut rng(1));
        let x = [0.2, -0.7, 1.1];
        let (out, cache) = net.forward(&x).unwrap();

        let (l0, l1) = (&net.layers()[0], &net.layers()[1]);
        let mut hidden = [0.0; 4];
        for o in 0..4 {
            let mut s = l0.bias()[o];
            for i in 0..3 {
                s += l0.weights()[o * 3 + i] * x[i];
            }
            hidden[o] = s.tanh();
        }
        for o in 0..2 {
            let mut s = l1.bias()[o];
            for i in 0..4 {
                s += l1.weights()[o * 4 + i] * hidden[i];
            }
            assert!((out[o] - s).abs() < 1e-14);
        }
        assert_eq!(cache.output(), out.as_slice());
        assert_eq!(net.eval(&x).unwrap(), out);
    }

    #[test]
    fn shape_errors() {
        let net = Mlp::tanh_net(3, &[4], 2, false, &mut rng(1));
        assert!(matches!(net.forward(&[1.0]), Err(Error::Shape(_))));
        let other = Mlp::tanh_net(2, &[4], 2, false, &mut rng(1));
        let (_, cache) = other.forward(&[1.0, 2.0]).unwrap();
        assert!(matches!(net.backward(&cache, &[1.0, 1.0]), Err(Error::Shape(_))));
        let (_, cache) = net.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(net.backward(&cache, &[1.0]), Err(Error::Shape(_))));
        assert!(Mlp::new(vec![
            Dense::zeros(2, 3, Activation::Tanh),
            Dense::zeros(4, 1, Activation::Identity)
        ])
        .is_err());
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let net = Mlp::tanh_net(3, &[5, 5], 2, false, &mut rng(2));
        let (_, cache) = net.forward(&[0.1, 0.2, 0.3]).unwrap();
        let (g, gi) = net.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
        assert!(gi.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_gradients_closed_form() {
        let w = vec![1.0, 2.0, -1.0, 0.5, 3.0, -2.0];
        let net = Mlp::new(vec![
            Dense::new(3, 2, w.clone(), vec![0.1, 0.2], Activation::Identity).unwrap()
        ])
        .unwrap();
        let x = [0.4, -1.0, 2.0];
        let g = [1.5, -0.5];
        let (_, cache) = net.forward(&x).unwrap();
        let (pg, ig) = net.backward(&cache, &g).unwrap();
        let gw = pg.layers()[0].weights();
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(gw[o * 3 + i], g[o] * x[i]);
            }
        }
        assert_eq!(pg.layers()[0].bias(), &g);
        for i in 0..3 {
            let expect = w[i] * g[0] + w[3 + i] * g[1];
            assert!((ig[i] - expect).abs() < 1e-15);
        }
    }

    // Scalar head: f(theta, x) = <c, mlp(x)>, differentiated in params and input.
    fn scalar_head(net: &Mlp, x: &[f64], c: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let (out, cache) = net.forward(x).unwrap();
        let value = out.iter().zip(c).map(|(a, b)| a * b).sum();
        let (g, gi) = net.backward(&cache, c).unwrap();
        (value, g.to_flat(), gi)
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..5 {
            let net = Mlp::tanh_net(3, &[6, 5], 2, false, &mut rng(seed));
            let x = [0.3, -0.8, 0.5];
            let c = [0.7, -1.3];
            let f_params = |theta: &[f64]| {
                let mut n = net.clone();
                n.set_flat(theta)?;
                let (v, g, _) = scalar_head(&n, &x, &c);
                Ok((v, g))
            };
            let err = grad_check(f_params, &net.to_flat(), 1e-5).unwrap();
            assert!(err < 1e-4, "param gradient error {err}");

            let f_input = |xi: &[f64]| {
                let (v, _, gi) = scalar_head(&net, xi, &c);
                Ok((v, gi))
            };
            let err = grad_check(f_input, &x, 1e-5).unwrap();
            assert!(err < 1e-4, "input gradient error {err}");
        }
    }

    #[test]
    fn grad_check_polynomial_and_constant() {
        let sq = |x: &[f64]| Ok((x.iter().map(|v| v * v).sum(), x.iter().map(|v| 2.0 * v).collect()));
        assert!(grad_check(sq, &[0.3, -2.0, 5.0], 1e-5).unwrap() < 1e-6);
        let constant = |x: &[f64]| Ok((4.2, vec![0.0; x.len()]));
        assert!(grad_check(constant, &[1.0, 2.0], 1e-5).unwrap() < 1e-8);
        let bad = |_: &[f64]| Ok((f64::NAN, vec![0.0]));
        assert!(matches!(grad_check(bad, &[1.0], 1e-5), Err(Error::Numerical(_))));
    }

    #[test]
    fn forward_is_deterministic() {
        let net = Mlp::tanh_net(4, &[8, 8], 3, false, &mut rng(9));
        let x = [0.1, 0.2, -0.3, 0.4];
        let a = net.eval(&x).unwrap();
        let b = net.eval(&x).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut net = Mlp::tanh_net(3, &[4], 2, false, &mut rng(3));
        let before = net.clone();
        let grads = net.zeros_like();
        let mut state = AdamState::for_params(AdamConfig::default(), &net);
        for _ in 0..5 {
            adam_step(&mut net, &grads, &mut state).unwrap();
        }
        assert_eq!(net, before);
        assert_eq!(state.step(), 5);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut net = Mlp::tanh_net(2, &[3], 1, false, &mut rng(4));
        let before = net.to_flat();
        let mut grads = net.zeros_like();
        grads.fill(0.37);
        let mut state = AdamState::for_params(AdamConfig { lr: 0.01, ..Default::default() }, &net);
        adam_step(&mut net, &grads, &mut state).unwrap();
        for (a, b) in net.to_flat().iter().zip(&before) {
            assert!((b - a - 0.01).abs() < 1e-9);
        }
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut net = Mlp::tanh_net(2, &[3], 1, false, &mut rng(4));
        let grads = net.zeros_like();
        let mut state = AdamState::new(AdamConfig::default(), 3);
        assert!(matches!(adam_step(&mut net, &grads, &mut state), Err(Error::Shape(_))));
    }

    struct Scalar(Vec<f64>);
    impl Params for Scalar {
        fn visit(&self, f: &mut dyn FnMut(&[f64])) {
            f(&self.0)
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
            f(&mut self.0)
        }
    }

    // Independent scalar Adam written from the textbook update.
    fn reference_adam(w0: f64, lr: f64, steps: usize) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
        for t in 1..=steps {
            let g = 2.0 * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        w
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let expected = reference_adam(1.0, 0.1, 100);
        assert!(expected.abs() < 0.1);
        let mut w = Scalar(vec![1.0]);
        let mut state = AdamState::new(AdamConfig { lr: 0.1, ..Default::default() }, 1);
        for _ in 0..100 {
            let g = Scalar(vec![2.0 * w.0[0]]);
            adam_step(&mut w, &g, &mut state).unwrap();
        }
        assert!(w.0[0].abs() < 0.1);
        assert_eq!(w.0[0], expected);
    }
}
