//! Text encoding of a fitted model.
//!
//! One record per line, `key value...`, whitespace separated. Floats use 17
//! significant digits. The final line is `checksum <sha256 hex>` over all
//! bytes before it.

use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::copula_flow::{Conditioner, CouplingFlow, CouplingLayer};
use crate::data::Standardization;
use crate::error::{Error, Result};
use crate::marginal::{MarginalModel, MarginalParts};
use crate::model::{CometModel, Mode};
use crate::nn::{Activation, Dense, Mlp};
use crate::univariate::GpDist;

pub const VERSION: &str = "comet-v1";

struct Out(String);

impl Out {
    fn line(&mut self, key: &str, vals: &[String]) {
        self.0.push_str(key);
        for v in vals {
            self.0.push(' ');
            self.0.push_str(v);
        }
        self.0.push('\n');
    }

    fn floats(&mut self, key: &str, vals: &[f64]) {
        self.0.push_str(key);
        for v in vals {
            let _ = write!(self.0, " {v:.16e}");
        }
        self.0.push('\n');
    }
}

fn f(v: f64) -> String {
    format!("{v:.16e}")
}

fn ints(v: &[usize]) -> Vec<String> {
    v.iter().map(usize::to_string).collect()
}

fn put_mlp(o: &mut Out, name: &str, m: &Mlp) {
    o.line(name, &[m.layers().len().to_string()]);
    for layer in m.layers() {
        o.line(
            "dense",
            &[
                layer.in_dim().to_string(),
                layer.out_dim().to_string(),
                layer.activation().name().to_string(),
            ],
        );
        o.floats("w", layer.weights());
        o.floats("b", layer.bias());
    }
}

fn put_conditioner(o: &mut Out, name: &str, c: &Conditioner) {
    o.line("conditioner", &[name.to_string()]);
    put_mlp(o, "net", c.net());
    put_mlp(o, "gate", c.gate());
    put_mlp(o, "offset", c.offset());
}

pub fn encode(model: &CometModel) -> String {
    let mut o = Out(String::new());
    o.line(VERSION, &[]);
    o.line("mode", &[model.mode().name().to_string()]);
    o.line("dim", &[model.dim().to_string()]);
    o.line("seed", &[model.seed().to_string()]);
    o.line("config_hash", &[model.config_hash().to_string()]);
    if let Some(st) = model.standardization() {
        o.floats("standardization_mean", &st.mean);
        o.floats("standardization_std", &st.std);
    }
    for (j, m) in model.marginals().iter().enumerate() {
        let p = m.parts();
        o.line("marginal", &[j.to_string()]);
        o.line("quantiles", &[f(p.lower_q), f(p.upper_q)]);
        o.line("thresholds", &[f(p.alpha), f(p.beta)]);
        for (key, t) in [("left_tail", &p.left_tail), ("right_tail", &p.right_tail)] {
            o.line(key, &[f(t.mu()), f(t.sigma()), f(t.xi())]);
        }
        o.line("bandwidth", &[f(p.bandwidth)]);
        o.floats("center_points", &p.center_points);
    }
    let flow = model.flow();
    o.line("flow", &[flow.layers().len().to_string(), f(flow.unit_eps()), f(flow.sigma_max())]);
    for (l, layer) in flow.layers().iter().enumerate() {
        o.line("layer", &[l.to_string(), f(layer.scale_clamp())]);
        o.line("pass", &ints(layer.passthrough()));
        o.line("trans", &ints(layer.transformed()));
        put_conditioner(&mut o, "scale", layer.scale());
        put_conditioner(&mut o, "shift", layer.shift());
    }
    let digest = hex::encode(Sha256::digest(o.0.as_bytes()));
    o.line("checksum", &[digest]);
    o.0
}

struct In<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corrupt(msg.into())
}

impl<'a> In<'a> {
    fn next(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (no, line) = self
            .lines
            .next()
            .ok_or_else(|| corrupt(format!("unexpected end of file, expected {key:?}")))?;
        let mut toks = line.split_ascii_whitespace();
        match toks.next() {
            Some(k) if k == key => Ok((no + 1, toks.collect())),
            other => Err(corrupt(format!(
                "line {}: expected {key:?}, found {:?}",
                no + 1,
                other.unwrap_or("")
            ))),
        }
    }

    fn peek_is(&mut self, key: &str) -> bool {
        self.lines
            .peek()
            .is_some_and(|(_, l)| l.split_ascii_whitespace().next() == Some(key))
    }

    fn fixed(&mut self, key: &str, n: usize) -> Result<(usize, Vec<&'a str>)> {
        let (no, toks) = self.next(key)?;
        if toks.len() != n {
            return Err(corrupt(format!("line {no}: {key:?} needs {n} fields, found {}", toks.len())));
        }
        Ok((no, toks))
    }

    fn floats(&mut self, key: &str) -> Result<Vec<f64>> {
        let (no, toks) = self.next(key)?;
        toks.iter().map(|t| parse(no, t)).collect()
    }

    fn float_n(&mut self, key: &str, n: usize) -> Result<Vec<f64>> {
        let (no, toks) = self.fixed(key, n)?;
        toks.iter().map(|t| parse(no, t)).collect()
    }

    fn ints(&mut self, key: &str) -> Result<Vec<usize>> {
        let (no, toks) = self.next(key)?;
        toks.iter().map(|t| parse(no, t)).collect()
    }

    fn int(&mut self, key: &str) -> Result<usize> {
        let (no, toks) = self.fixed(key, 1)?;
        parse(no, toks[0])
    }

    fn mlp(&mut self, key: &str) -> Result<Mlp> {
        let n = self.int(key)?;
        let mut layers = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            let (no, toks) = self.fixed("dense", 3)?;
            let in_dim: usize = parse(no, toks[0])?;
            let out_dim: usize = parse(no, toks[1])?;
            let act = Activation::from_name(toks[2])
                .ok_or_else(|| corrupt(format!("line {no}: unknown activation {:?}", toks[2])))?;
            let w = self.float_n("w", in_dim.saturating_mul(out_dim))?;
            let b = self.float_n("b", out_dim)?;
            layers.push(Dense::new(in_dim, out_dim, w, b, act).map_err(as_corrupt)?);
        }
        Mlp::new(layers).map_err(as_corrupt)
    }

    fn conditioner(&mut self, name: &str) -> Result<Conditioner> {
        let (no, toks) = self.fixed("conditioner", 1)?;
        if toks[0] != name {
            return Err(corrupt(format!("line {no}: expected {name} conditioner")));
        }
        let net = self.mlp("net")?;
        let gate = self.mlp("gate")?;
        let offset = self.mlp("offset")?;
        Conditioner::from_parts(net, gate, offset).map_err(as_corrupt)
    }
}

fn parse<T: std::str::FromStr>(line: usize, tok: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| corrupt(format!("line {line}: cannot parse {tok:?}")))
}

fn as_corrupt(e: Error) -> Error {
    match e {
        Error::Corrupt(_) => e,
        other => Error::Corrupt(other.to_string()),
    }
}

pub fn decode(text: &str) -> Result<CometModel> {
    let first = text.lines().next().unwrap_or("");
    if first != VERSION {
        return Err(Error::Version {
            found: first.chars().take(40).collect(),
            expected: VERSION,
        });
    }
    let body_end = text
        .trim_end_matches('\n')
        .rfind('\n')
        .map(|i| i + 1)
        .ok_or_else(|| corrupt("missing checksum"))?;
    let (body, tail) = text.split_at(body_end);
    let mut tail_toks = tail.split_ascii_whitespace();
    let stored = match (tail_toks.next(), tail_toks.next(), tail_toks.next()) {
        (Some("checksum"), Some(h), None) => h,
        _ => return Err(corrupt("missing checksum line")),
    };
    if hex::encode(Sha256::digest(body.as_bytes())) != stored {
        return Err(corrupt("checksum mismatch"));
    }

    let mut r = In {
        lines: body.lines().enumerate().peekable(),
    };
    r.fixed(VERSION, 0)?;
    let (no, mode) = r.fixed("mode", 1)?;
    let mode = Mode::from_name(mode[0]).ok_or_else(|| corrupt(format!("line {no}: unknown mode")))?;
    let dim = r.int("dim")?;
    let (no, seed) = r.fixed("seed", 1)?;
    let seed: u64 = parse(no, seed[0])?;
    let (_, hash) = r.fixed("config_hash", 1)?;
    let config_hash = hash[0].to_string();

    let standardization = if r.peek_is("standardization_mean") {
        let mean = r.float_n("standardization_mean", dim)?;
        let std = r.float_n("standardization_std", dim)?;
        Some(Standardization { mean, std })
    } else {
        None
    };

    let mut marginals = Vec::new();
    while r.peek_is("marginal") {
        let (no, idx) = r.fixed("marginal", 1)?;
        if parse::<usize>(no, idx[0])? != marginals.len() {
            return Err(corrupt(format!("line {no}: marginal out of order")));
        }
        let q = r.float_n("quantiles", 2)?;
        let t = r.float_n("thresholds", 2)?;
        let left = r.float_n("left_tail", 3)?;
        let right = r.float_n("right_tail", 3)?;
        let bandwidth = r.float_n("bandwidth", 1)?[0];
        let center_points = r.floats("center_points")?;
        let parts = MarginalParts {
            lower_q: q[0],
            upper_q: q[1],
            alpha: t[0],
            beta: t[1],
            left_tail: GpDist::new(left[0], left[1], left[2]).map_err(as_corrupt)?,
            right_tail: GpDist::new(right[0], right[1], right[2]).map_err(as_corrupt)?,
            center_points,
            bandwidth,
        };
        marginals.push(MarginalModel::from_parts(parts).map_err(as_corrupt)?);
    }

    let (no, head) = r.fixed("flow", 3)?;
    let n_layers: usize = parse(no, head[0])?;
    let unit_eps: f64 = parse(no, head[1])?;
    let sigma_max: f64 = parse(no, head[2])?;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for l in 0..n_layers {
        let (no, lh) = r.fixed("layer", 2)?;
        if parse::<usize>(no, lh[0])? != l {
            return Err(corrupt(format!("line {no}: layer out of order")));
        }
        let clamp: f64 = parse(no, lh[1])?;
        let pass = r.ints("pass")?;
        let trans = r.ints("trans")?;
        let scale = r.conditioner("scale")?;
        let shift = r.conditioner("shift")?;
        layers.push(CouplingLayer::from_parts(dim, pass, trans, scale, shift, clamp).map_err(as_corrupt)?);
    }
    if let Some((no, _)) = r.lines.next() {
        return Err(corrupt(format!("line {}: trailing content", no + 1)));
    }
    let flow = CouplingFlow::from_parts(dim, layers, unit_eps, sigma_max).map_err(as_corrupt)?;
    CometModel::from_parts(mode, marginals, standardization, flow, seed, config_hash).map_err(as_corrupt)
}
