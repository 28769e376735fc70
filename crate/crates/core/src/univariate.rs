//! One-dimensional building blocks for the marginals: the generalized
//! Pareto distribution with its maximum-likelihood fit, and a Gaussian
//! kernel density estimate with an invertible CDF.

use std::f64::consts::SQRT_2;

use crate::error::{Error, Result, TailSide};
use crate::optim::nelder_mead;

/// Below this magnitude the shape parameter is treated as exactly zero.
pub const XI_ZERO: f64 = 1e-9;
/// Shape bounds used by the MLE.
pub const XI_MIN: f64 = -0.49;
pub const XI_MAX: f64 = 5.0;
/// Smallest sample accepted by [`fit_gp_mle`].
pub const MIN_EXCESSES: usize = 20;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub(crate) fn std_normal_pdf(t: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * t * t).exp()
}

pub(crate) fn std_normal_cdf(t: f64) -> f64 {
    0.5 * libm::erfc(-t / SQRT_2)
}

/// Empirical quantile with linear interpolation between order statistics.
/// `sorted` must be ascending and nonempty.
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Sorted copy of `values` (total order, stable).
pub fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Generalized Pareto distribution with location `mu`, scale `sigma`, shape `xi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpDist {
    mu: f64,
    sigma: f64,
    xi: f64,
}

impl GpDist {
    pub fn new(mu: f64, sigma: f64, xi: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Param(format!("GP scale must be positive, got {sigma}")));
        }
        if !mu.is_finite() || !xi.is_finite() {
            return Err(Error::Param("GP location and shape must be finite".into()));
        }
        Ok(Self { mu, sigma, xi })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    fn is_exponential(&self) -> bool {
        self.xi.abs() < XI_ZERO
    }

    /// Upper end of the support (`inf` unless `xi < 0`).
    pub fn upper_bound(&self) -> f64 {
        if self.xi < 0.0 && !self.is_exponential() {
            self.mu - self.sigma / self.xi
        } else {
            f64::INFINITY
        }
    }

    pub fn in_support(&self, x: f64) -> bool {
        x >= self.mu && x <= self.upper_bound()
    }

    /// Log-density; `-inf` off the support.
    pub fn log_pdf(&self, x: f64) -> f64 {
        if !self.in_support(x) {
            return f64::NEG_INFINITY;
        }
        let z = (x - self.mu) / self.sigma;
        if self.is_exponential() {
            -self.sigma.ln() - z
        } else {
            let t = 1.0 + self.xi * z;
            if t <= 0.0 {
                return f64::NEG_INFINITY;
            }
            -self.sigma.ln() - (1.0 + 1.0 / self.xi) * t.ln()
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.log_pdf(x).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.mu {
            return 0.0;
        }
        if x >= self.upper_bound() {
            return 1.0;
        }
        let z = (x - self.mu) / self.sigma;
        if self.is_exponential() {
            -(-z).exp_m1()
        } else {
            // 1 - (1 + xi z)^(-1/xi), written to keep precision near zero.
            -(-(self.xi * z).ln_1p() / self.xi).exp_m1()
        }
    }

    /// Survival function `1 - cdf(x)`, accurate far in the tail.
    pub fn sf(&self, x: f64) -> f64 {
        if x <= self.mu {
            return 1.0;
        }
        if x >= self.upper_bound() {
            return 0.0;
        }
        let z = (x - self.mu) / self.sigma;
        if self.is_exponential() {
            (-z).exp()
        } else {
            (-(self.xi * z).ln_1p() / self.xi).exp()
        }
    }

    pub fn ppf(&self, q: f64) -> Result<f64> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Domain {
                value: q,
                domain: "(0, 1)",
            });
        }
        let log_sf = (-q).ln_1p();
        Ok(if self.is_exponential() {
            self.mu - self.sigma * log_sf
        } else {
            // ((1-q)^(-xi) - 1) / xi
            self.mu + self.sigma * (-self.xi * log_sf).exp_m1() / self.xi
        })
    }

    /// Draws by inversion from a uniform variate in (0, 1).
    pub fn sample_from_uniform(&self, u: f64) -> f64 {
        self.ppf(u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON))
            .expect("clamped into (0, 1)")
    }
}

/// Negative log-likelihood of threshold excesses under GP(0, exp(log_sigma), xi).
pub fn gp_nll(excesses: &[f64], log_sigma: f64, xi: f64) -> f64 {
    if !(XI_MIN..=XI_MAX).contains(&xi) || !log_sigma.is_finite() {
        return f64::INFINITY;
    }
    let sigma = log_sigma.exp();
    let n = excesses.len() as f64;
    if xi.abs() < XI_ZERO {
        return n * log_sigma + excesses.iter().sum::<f64>() / sigma;
    }
    let mut acc = 0.0;
    for &y in excesses {
        let t = xi * y / sigma;
        if t <= -1.0 {
            return f64::INFINITY;
        }
        acc += t.ln_1p();
    }
    n * log_sigma + (1.0 + 1.0 / xi) * acc
}

/// Maximum-likelihood GP fit to nonnegative excesses over a threshold.
///
/// The location is fixed at zero; the caller re-anchors at the threshold.
/// Left-tail excesses are passed already negated (`threshold - x`). `side`
/// only labels errors.
pub fn fit_gp_mle(excesses: &[f64], side: TailSide) -> Result<GpDist> {
    if excesses.len() < MIN_EXCESSES {
        return Err(Error::InsufficientTail {
            side,
            count: excesses.len(),
            min: MIN_EXCESSES,
        });
    }
    if excesses.iter().any(|&y| !(y >= 0.0) || !y.is_finite()) {
        return Err(Error::Param("excesses must be finite and nonnegative".into()));
    }
    let first = excesses[0];
    if excesses.iter().all(|&y| y == first) {
        return Err(Error::Degenerate(format!("all {side} tail excesses are equal")));
    }

    let n = excesses.len() as f64;
    let mean = excesses.iter().sum::<f64>() / n;
    let var = excesses.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    let max = excesses.iter().copied().fold(0.0, f64::max);

    let feasible = |sigma: f64, xi: f64| -> (f64, f64) {
        // Keep the largest excess inside a bounded support.
        if xi < 0.0 && max >= sigma / -xi {
            (max * -xi * 1.1, xi)
        } else {
            (sigma, xi)
        }
    };
    let ratio = mean * mean / var;
    let moment_xi = (0.5 * (1.0 - ratio)).clamp(XI_MIN + 0.04, XI_MAX - 0.1);
    let moment_sigma = (0.5 * mean * (1.0 + ratio)).max(1e-12);
    let starts = [
        feasible(moment_sigma, moment_xi),
        (mean.max(1e-12), 0.0),
        (0.5 * mean.max(1e-12), 0.5),
    ];

    let objective = |p: &[f64]| gp_nll(excesses, p[0], p[1]);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for (sigma, xi) in starts {
        let mut m = nelder_mead(objective, &[sigma.ln(), xi], &[0.1, 0.1], 2000);
        // One restart from the optimum guards against a collapsed simplex.
        let again = nelder_mead(objective, &m.point, &[0.05, 0.05], 2000);
        if again.value < m.value {
            m = again;
        }
        if m.value.is_finite() && best.as_ref().map_or(true, |b| m.value < b.1) {
            best = Some((m.point, m.value));
        }
    }
    let (point, _) = best.ok_or_else(|| {
        Error::Numerical(format!("{side} tail GP likelihood not finite at any start"))
    })?;
    GpDist::new(0.0, point[0].exp(), point[1])
}

/// Gaussian kernel density estimate on a sorted sample.
///
/// Density and CDF are evaluated from a table of exact values at grid nodes
/// spaced at most `h / 16` apart, with cubic Hermite interpolation in between
/// (the exact derivative is stored at every node). The interpolation error is
/// below `1e-8`; [`Kde1D::pdf_exact`] and [`Kde1D::cdf_exact`] give the plain
/// kernel sums.
#[derive(Debug, Clone)]
pub struct Kde1D {
    points: Vec<f64>,
    bandwidth: f64,
    table: KdeTable,
}

impl PartialEq for Kde1D {
    fn eq(&self, other: &Self) -> bool {
        self.points == other.points && self.bandwidth == other.bandwidth
    }
}

#[derive(Debug, Clone)]
struct KdeTable {
    lo: f64,
    step: f64,
    cdf: Vec<f64>,
    pdf: Vec<f64>,
    dpdf: Vec<f64>,
}

const TABLE_RESOLUTION: f64 = 16.0;
const MAX_TABLE_NODES: usize = 1 << 16;
/// Kernels further than this many bandwidths away contribute exactly 0 or 1.
const KERNEL_CUTOFF: f64 = 9.0;
/// The bisection bracket extends this many bandwidths past the sample.
const BRACKET_BANDWIDTHS: f64 = 10.0;

impl Kde1D {
    /// Fits a KDE with Silverman's bandwidth.
    pub fn fit(points: &[f64]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "KDE needs at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::Param("KDE points must be finite".into()));
        }
        let sorted = sorted_copy(points);
        let bandwidth = silverman_bandwidth(&sorted)?;
        Self::with_bandwidth(sorted, bandwidth)
    }

    /// Builds a KDE from ascending points and an explicit bandwidth.
    pub fn with_bandwidth(sorted: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if sorted.len() < 2 {
            return Err(Error::InsufficientData("KDE needs at least 2 points".into()));
        }
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::Param(format!("KDE bandwidth must be positive, got {bandwidth}")));
        }
        if sorted.windows(2).any(|w| w[0] > w[1]) || sorted.iter().any(|v| !v.is_finite()) {
            return Err(Error::Param("KDE points must be finite and ascending".into()));
        }
        let table = KdeTable::build(&sorted, bandwidth);
        Ok(Self {
            points: sorted,
            bandwidth,
            table,
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Bisection bracket `[min - 10h, max + 10h]`.
    pub fn bracket(&self) -> (f64, f64) {
        let h = self.bandwidth;
        (
            self.points[0] - BRACKET_BANDWIDTHS * h,
            self.points[self.points.len() - 1] + BRACKET_BANDWIDTHS * h,
        )
    }

    pub fn pdf_exact(&self, x: f64) -> f64 {
        let (pdf, _, _) = kernel_sums(&self.points, self.bandwidth, x);
        pdf
    }

    pub fn cdf_exact(&self, x: f64) -> f64 {
        let (_, cdf, _) = kernel_sums(&self.points, self.bandwidth, x);
        cdf
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match self.table.locate(x) {
            Some((k, t)) => self.table.pdf_at(k, t),
            None => self.pdf_exact(x),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self.table.locate(x) {
            Some((k, t)) => self.table.cdf_at(k, t),
            None => self.cdf_exact(x),
        }
    }

    /// Inverse CDF by bisection inside the bracket, to `1e-10` in probability.
    pub fn ppf(&self, q: f64) -> Result<f64> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Domain {
                value: q,
                domain: "(0, 1)",
            });
        }
        let t = &self.table;
        let last = t.cdf.len() - 1;
        if q <= t.cdf[0] {
            return Ok(t.node(0));
        }
        if q >= t.cdf[last] {
            return Ok(t.node(last));
        }
        // First node with cdf > q; the root lies in the cell just before it.
        let upper = t.cdf.partition_point(|&c| c <= q);
        let k = upper - 1;
        let (mut a, mut b) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            let c = t.cdf_at(k, mid);
            if (c - q).abs() <= 1e-13 || b - a < 1e-15 {
                return Ok(t.node(k) + mid * t.step);
            }
            if c < q {
                a = mid;
            } else {
                b = mid;
            }
        }
        let x = t.node(k) + 0.5 * (a + b) * t.step;
        if (t.cdf_at(k, 0.5 * (a + b)) - q).abs() > 1e-10 {
            return Err(Error::Numerical(format!("KDE quantile bisection did not converge at q={q}")));
        }
        Ok(x)
    }
}

/// Silverman's rule `0.9 min(std, IQR/1.34) n^(-1/5)` on ascending points.
pub fn silverman_bandwidth(sorted: &[f64]) -> Result<f64> {
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let std = (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(std > 0.0) {
        return Err(Error::Degenerate("KDE input is constant".into()));
    }
    let iqr = empirical_quantile(sorted, 0.75) - empirical_quantile(sorted, 0.25);
    let spread = if iqr > 0.0 { std.min(iqr / 1.34) } else { std };
    Ok(0.9 * spread * n.powf(-0.2))
}

/// (pdf, cdf, d pdf / dx) of the kernel mixture at `x`.
fn kernel_sums(sorted: &[f64], h: f64, x: f64) -> (f64, f64, f64) {
    let lo = sorted.partition_point(|&p| p < x - KERNEL_CUTOFF * h);
    let hi = sorted.partition_point(|&p| p <= x + KERNEL_CUTOFF * h);
    let (mut pdf, mut cdf, mut dpdf) = (0.0, lo as f64, 0.0);
    for &p in &sorted[lo..hi] {
        let t = (x - p) / h;
        let phi = std_normal_pdf(t);
        pdf += phi;
        dpdf -= t * phi;
        cdf += std_normal_cdf(t);
    }
    let n = sorted.len() as f64;
    (pdf / (n * h), cdf / n, dpdf / (n * h * h))
}

impl KdeTable {
    fn build(sorted: &[f64], h: f64) -> Self {
        let lo = sorted[0] - BRACKET_BANDWIDTHS * h;
        let hi = sorted[sorted.len() - 1] + BRACKET_BANDWIDTHS * h;
        let mut cells = ((hi - lo) / (h / TABLE_RESOLUTION)).ceil() as usize;
        cells = cells.clamp(1, MAX_TABLE_NODES - 1);
        let step = (hi - lo) / cells as f64;
        let mut cdf = Vec::with_capacity(cells + 1);
        let mut pdf = Vec::with_capacity(cells + 1);
        let mut dpdf = Vec::with_capacity(cells + 1);
        for k in 0..=cells {
            let (p, c, d) = kernel_sums(sorted, h, lo + k as f64 * step);
            pdf.push(p);
            cdf.push(c);
            dpdf.push(d);
        }
        // Running max removes rounding-level dips so the table is monotone.
        for k in 1..cdf.len() {
            if cdf[k] < cdf[k - 1] {
                cdf[k] = cdf[k - 1];
            }
        }
        Self {
            lo,
            step,
            cdf,
            pdf,
            dpdf,
        }
    }

    fn node(&self, k: usize) -> f64 {
        self.lo + k as f64 * self.step
    }

    /// Cell index and fractional position, or `None` outside the grid.
    fn locate(&self, x: f64) -> Option<(usize, f64)> {
        let pos = (x - self.lo) / self.step;
        let cells = self.cdf.len() - 1;
        if !(pos >= 0.0) || pos > cells as f64 {
            return None;
        }
        let k = (pos.floor() as usize).min(cells - 1);
        Some((k, pos - k as f64))
    }

    fn cdf_at(&self, k: usize, t: f64) -> f64 {
        let v = hermite(
            t,
            self.cdf[k],
            self.pdf[k] * self.step,
            self.cdf[k + 1],
            self.pdf[k + 1] * self.step,
        );
        v.clamp(self.cdf[k], self.cdf[k + 1])
    }

    fn pdf_at(&self, k: usize, t: f64) -> f64 {
        hermite(
            t,
            self.pdf[k],
            self.dpdf[k] * self.step,
            self.pdf[k + 1],
            self.dpdf[k + 1] * self.step,
        )
        .max(0.0)
    }
}

fn hermite(t: f64, y0: f64, m0: f64, y1: f64, m1: f64) -> f64 {
    let t2 = t * t;
    let t3 = t2 * t;
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0
        + (t3 - 2.0 * t2 + t) * m0
        + (-2.0 * t3 + 3.0 * t2) * y1
        + (t3 - t2) * m1
}

/// `log(2 pi)`, used by Gaussian log-densities throughout.
pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub(crate) fn std_normal_log_pdf_sum(z: &[f64]) -> f64 {
    -0.5 * (z.len() as f64 * LN_2PI + z.iter().map(|v| v * v).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Adaptive Simpson quadrature on [a, b].
    fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
        fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
            let m = 0.5 * (a + b);
            let fm = f(m);
            (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
        }
        #[allow(clippy::too_many_arguments)]
        fn recurse<F: Fn(f64) -> f64>(
            f: &F,
            a: f64,
            fa: f64,
            b: f64,
            fb: f64,
            m: f64,
            fm: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let (lm, flm, left) = simpson(f, a, fa, m, fm);
            let (rm, frm, right) = simpson(f, m, fm, b, fb);
            let delta = left + right - whole;
            if depth == 0 || delta.abs() <= 15.0 * tol {
                return left + right + delta / 15.0;
            }
            recurse(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
                + recurse(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
        }
        let (fa, fb) = (f(a), f(b));
        let (m, fm, whole) = simpson(f, a, fa, b, fb);
        recurse(f, a, fa, b, fb, m, fm, whole, tol, 50)
    }

    /// Integral of the GP density over its support via x = (1-t)^(-k) - 1.
    fn gp_total_mass(d: &GpDist) -> f64 {
        if d.xi() < 0.0 {
            return integrate(&|x| d.pdf(x), d.mu(), d.upper_bound(), 1e-10);
        }
        let k = 2.0 * d.xi().max(1.0);
        let g = |t: f64| {
            if t >= 1.0 {
                return 0.0;
            }
            let x = d.mu() + d.sigma() * ((1.0 - t).powf(-k) - 1.0);
            d.pdf(x) * d.sigma() * k * (1.0 - t).powf(-k - 1.0)
        };
        integrate(&g, 0.0, 1.0 - 1e-12, 1e-10)
    }

    #[test]
    fn gp_pdf_values() {
        let exp = GpDist::new(0.0, 1.0, 0.0).unwrap();
        assert_eq!(exp.pdf(0.0), 1.0);
        let heavy = GpDist::new(0.0, 1.0, 1.0).unwrap();
        assert_eq!(heavy.pdf(0.0), 1.0);
        assert!((heavy.pdf(1.0) - 0.25).abs() < 1e-15);
        assert_eq!(heavy.pdf(-0.1), 0.0);
        let bounded = GpDist::new(0.0, 1.0, -0.5).unwrap();
        assert_eq!(bounded.pdf(2.5), 0.0);
        assert!(GpDist::new(0.0, 0.0, 1.0).is_err());
        assert!(GpDist::new(0.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn gp_pdf_integrates_to_one() {
        for xi in [-0.3, 0.0, 0.5, 1.0, 2.0] {
            let d = GpDist::new(0.0, 1.0, xi).unwrap();
            let mass = gp_total_mass(&d);
            assert!((mass - 1.0).abs() < 1e-4, "xi={xi}: mass {mass}");
        }
    }

    #[test]
    fn gp_cdf_values_and_quadrature() {
        let heavy = GpDist::new(0.0, 1.0, 1.0).unwrap();
        assert!((heavy.cdf(1.0) - 0.5).abs() < 1e-15);
        for xi in [-0.3, 0.0, 1.0] {
            let d = GpDist::new(2.0, 1.5, xi).unwrap();
            assert_eq!(d.cdf(2.0), 0.0);
        }
        let d = GpDist::new(0.0, 1.0, 0.5).unwrap();
        let numeric = integrate(&|x| d.pdf(x), 0.0, 2.0, 1e-12);
        assert!((d.cdf(2.0) - numeric).abs() < 1e-6);
        let bounded = GpDist::new(0.0, 1.0, -0.5).unwrap();
        assert_eq!(bounded.cdf(5.0), 1.0);
        assert!((bounded.cdf(1.0) + bounded.sf(1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gp_ppf_values() {
        let heavy = GpDist::new(0.0, 1.0, 1.0).unwrap();
        assert!((heavy.ppf(0.5).unwrap() - 1.0).abs() < 1e-15);
        let exp = GpDist::new(0.0, 1.0, 0.0).unwrap();
        assert!((exp.ppf(1.0 - (-1.0f64).exp()).unwrap() - 1.0).abs() < 1e-14);
        assert!(matches!(heavy.ppf(0.0), Err(Error::Domain { .. })));
        assert!(heavy.ppf(1.0).is_err());
        assert!(heavy.ppf(f64::NAN).is_err());
    }

    #[test]
    fn gp_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let xi = rng.random_range(-0.45..3.0);
            let d = GpDist::new(rng.random_range(-5.0..5.0), rng.random_range(0.1..5.0), xi).unwrap();
            let q = rng.random_range(0.001..0.999);
            let back = d.cdf(d.ppf(q).unwrap());
            assert!((back - q).abs() < 1e-10, "xi={xi} q={q} back={back}");
        }
        for xi in [-0.3, 0.0, 0.5, 1.0, 2.0] {
            let d = GpDist::new(0.0, 1.0, xi).unwrap();
            for i in 1..1000 {
                let q = 0.001 + 0.998 * i as f64 / 1000.0;
                assert!((d.cdf(d.ppf(q).unwrap()) - q).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn near_zero_shape_is_continuous() {
        let a = GpDist::new(0.0, 1.0, 0.0).unwrap();
        let b = GpDist::new(0.0, 1.0, 1e-10).unwrap();
        let c = GpDist::new(0.0, 1.0, 1e-7).unwrap();
        for x in [0.1, 1.0, 5.0] {
            assert_eq!(a.pdf(x), b.pdf(x));
            assert!((a.cdf(x) - c.cdf(x)).abs() < 1e-5);
        }
    }

    fn gp_sample(d: &GpDist, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| d.sample_from_uniform(rng.random::<f64>())).collect()
    }

    #[test]
    fn mle_recovers_heavy_tail() {
        let d = GpDist::new(0.0, 1.0, 1.0).unwrap();
        let mut pass = 0;
        for seed in 0..10 {
            let fit = fit_gp_mle(&gp_sample(&d, 10_000, seed), TailSide::Right).unwrap();
            if (fit.xi() - 1.0).abs() <= 0.15 && (fit.sigma() - 1.0).abs() <= 0.15 {
                pass += 1;
            }
        }
        assert!(pass >= 9, "{pass}/10 seeds recovered GP(0,1,1)");
    }

    #[test]
    fn mle_exponential_has_zero_shape() {
        let d = GpDist::new(0.0, 1.0, 0.0).unwrap();
        let fit = fit_gp_mle(&gp_sample(&d, 10_000, 5), TailSide::Right).unwrap();
        assert!(fit.xi().abs() <= 0.1, "xi {}", fit.xi());
        assert_eq!(fit.mu(), 0.0);
    }

    #[test]
    fn mle_beats_grid_search() {
        let d = GpDist::new(0.0, 0.7, 0.3).unwrap();
        let data = gp_sample(&d, 2000, 8);
        let fit = fit_gp_mle(&data, TailSide::Left).unwrap();
        let best = gp_nll(&data, fit.sigma().ln(), fit.xi());
        for i in -10..=10 {
            for j in -10..=10 {
                let ls = fit.sigma().ln() + 0.02 * i as f64;
                let xi = fit.xi() + 0.02 * j as f64;
                assert!(best <= gp_nll(&data, ls, xi) + 1e-9);
            }
        }
    }

    #[test]
    fn mle_errors() {
        let few = vec![1.0; 19];
        assert!(matches!(
            fit_gp_mle(&few, TailSide::Left),
            Err(Error::InsufficientTail { side: TailSide::Left, count: 19, .. })
        ));
        assert!(matches!(fit_gp_mle(&vec![0.5; 40], TailSide::Right), Err(Error::Degenerate(_))));
        let mut neg = vec![1.0; 30];
        neg[3] = -1.0;
        neg[4] = 2.0;
        assert!(fit_gp_mle(&neg, TailSide::Right).is_err());
    }

    #[test]
    fn mle_shape_stays_in_bounds_for_uniform_excesses() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
        let fit = fit_gp_mle(&data, TailSide::Left).unwrap();
        assert!(fit.xi() >= XI_MIN && fit.xi() < 0.0);
        assert!(data.iter().all(|&y| fit.in_support(y)));
    }

    #[test]
    fn silverman_two_points() {
        let k = Kde1D::fit(&[1.0, 0.0]).unwrap();
        let expect = 0.9 * (0.5f64).min(0.5 / 1.34) * 2f64.powf(-0.2);
        assert!((k.bandwidth() - expect).abs() < 1e-15);
        assert_eq!(k.points(), &[0.0, 1.0]);
        assert!(matches!(Kde1D::fit(&[2.0, 2.0, 2.0]), Err(Error::Degenerate(_))));
        assert!(Kde1D::fit(&[1.0]).is_err());
    }

    #[test]
    fn kde_sorts_input() {
        let k = Kde1D::fit(&[3.0, -1.0, 2.0, 0.5]).unwrap();
        assert_eq!(k.points(), &[-1.0, 0.5, 2.0, 3.0]);
    }

    #[test]
    fn kde_symmetric_median() {
        let k = Kde1D::fit(&[-1.0, 1.0]).unwrap();
        assert!((k.cdf(0.0) - 0.5).abs() < 1e-12);
        assert!((k.cdf_exact(0.0) - 0.5).abs() < 1e-15);
    }

    fn normal_sample(n: usize, seed: u64) -> Vec<f64> {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn kde_density_consistent_with_normal() {
        let k = Kde1D::fit(&normal_sample(10_000, 1)).unwrap();
        assert!((k.pdf(0.0) - INV_SQRT_2PI).abs() < 0.05);
    }

    #[test]
    fn kde_table_matches_exact_sums() {
        let k = Kde1D::fit(&normal_sample(3000, 2)).unwrap();
        let (lo, hi) = k.bracket();
        for i in 0..=997 {
            let x = lo + (hi - lo) * i as f64 / 997.0;
            assert!((k.cdf(x) - k.cdf_exact(x)).abs() < 1e-9, "cdf at {x}");
            assert!((k.pdf(x) - k.pdf_exact(x)).abs() < 1e-8, "pdf at {x}");
        }
    }

    #[test]
    fn kde_cdf_monotone_and_pdf_nonnegative() {
        let k = Kde1D::fit(&normal_sample(500, 3)).unwrap();
        let mut prev = -1.0;
        for i in 0..1000 {
            let x = -6.0 + 12.0 * i as f64 / 999.0;
            let c = k.cdf(x);
            assert!(c >= prev);
            prev = c;
            assert!(k.pdf(x) >= 0.0);
        }
    }

    #[test]
    fn kde_ppf_round_trip() {
        let k = Kde1D::fit(&normal_sample(2000, 4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let q: f64 = rng.random_range(1e-6..1.0 - 1e-6);
            let x = k.ppf(q).unwrap();
            assert!((k.cdf(x) - q).abs() < 1e-8);
        }
        assert!(k.ppf(0.0).is_err());
        assert!(k.ppf(1.0).is_err());
    }

    #[test]
    fn quantile_interpolates() {
        let v = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(empirical_quantile(&v, 0.5), 1.5);
        assert_eq!(empirical_quantile(&v, 0.0), 0.0);
        assert_eq!(empirical_quantile(&v, 1.0), 3.0);
        assert!((empirical_quantile(&v, 0.1) - 0.3).abs() < 1e-15);
    }
}
