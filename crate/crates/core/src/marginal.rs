//! Semi-parametric marginal transform: GP tails below `alpha` and above
//! `beta`, a rescaled KDE in between. Maps each coordinate into (0, 1).

use crate::error::{Error, Result, TailSide};
use crate::univariate::{empirical_quantile, fit_gp_mle, sorted_copy, GpDist, Kde1D};

/// Outputs of the transform are clamped to `[UNIT_EPS, 1 - UNIT_EPS]`.
pub const UNIT_EPS: f64 = 1e-7;
/// Floor for log-densities off the support.
pub const LOG_DENSITY_FLOOR: f64 = -1e10;
/// Smallest column accepted by [`MarginalModel::fit`].
pub const MIN_COLUMN_LEN: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalModel {
    lower_q: f64,
    upper_q: f64,
    alpha: f64,
    beta: f64,
    left_tail: GpDist,
    right_tail: GpDist,
    center: Kde1D,
    center_cdf_alpha: f64,
    center_cdf_beta: f64,
}

/// Serializable parameters of a [`MarginalModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalParts {
    pub lower_q: f64,
    pub upper_q: f64,
    pub alpha: f64,
    pub beta: f64,
    pub left_tail: GpDist,
    pub right_tail: GpDist,
    pub center_points: Vec<f64>,
    pub bandwidth: f64,
}

impl MarginalModel {
    /// Fits thresholds at the empirical `a`/`b` quantiles, GP tails on the
    /// excesses beyond them, and a KDE on the points in `[alpha, beta]`.
    pub fn fit(column: &[f64], a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && a < b && b < 1.0) {
            return Err(Error::Param(format!(
                "tail quantiles must satisfy 0 < a < b < 1, got ({a}, {b})"
            )));
        }
        if column.len() < MIN_COLUMN_LEN {
            return Err(Error::InsufficientData(format!(
                "marginal fit needs at least {MIN_COLUMN_LEN} values, got {}",
                column.len()
            )));
        }
        if column.iter().any(|v| !v.is_finite()) {
            return Err(Error::Param("column contains non-finite values".into()));
        }
        let sorted = sorted_copy(column);
        if sorted[0] == sorted[sorted.len() - 1] {
            return Err(Error::Degenerate("column is constant".into()));
        }
        let alpha = empirical_quantile(&sorted, a);
        let beta = empirical_quantile(&sorted, b);
        if !(alpha < beta) {
            return Err(Error::Degenerate(format!(
                "tail thresholds coincide (alpha = beta = {alpha})"
            )));
        }

        let below = sorted.partition_point(|&x| x < alpha);
        let above_start = sorted.partition_point(|&x| x <= beta);
        let left: Vec<f64> = sorted[..below].iter().map(|&x| alpha - x).collect();
        let right: Vec<f64> = sorted[above_start..].iter().map(|&x| x - beta).collect();
        let left_tail = fit_gp_mle(&left, TailSide::Left)?;
        let right_tail = fit_gp_mle(&right, TailSide::Right)?;
        let center = Kde1D::fit(&sorted[below..above_start])?;
        Self::assemble(a, b, alpha, beta, left_tail, right_tail, center)
    }

    fn assemble(
        lower_q: f64,
        upper_q: f64,
        alpha: f64,
        beta: f64,
        left_tail: GpDist,
        right_tail: GpDist,
        center: Kde1D,
    ) -> Result<Self> {
        let center_cdf_alpha = center.cdf(alpha);
        let center_cdf_beta = center.cdf(beta);
        if !(center_cdf_alpha < center_cdf_beta) {
            return Err(Error::Degenerate(
                "center KDE assigns no mass between the thresholds".into(),
            ));
        }
        Ok(Self {
            lower_q,
            upper_q,
            alpha,
            beta,
            left_tail,
            right_tail,
            center,
            center_cdf_alpha,
            center_cdf_beta,
        })
    }

    pub fn from_parts(parts: MarginalParts) -> Result<Self> {
        let MarginalParts {
            lower_q,
            upper_q,
            alpha,
            beta,
            left_tail,
            right_tail,
            center_points,
            bandwidth,
        } = parts;
        if !(lower_q > 0.0 && lower_q < upper_q && upper_q < 1.0) || !(alpha < beta) {
            return Err(Error::Param("inconsistent marginal thresholds".into()));
        }
        let center = Kde1D::with_bandwidth(center_points, bandwidth)?;
        Self::assemble(lower_q, upper_q, alpha, beta, left_tail, right_tail, center)
    }

    pub fn parts(&self) -> MarginalParts {
        MarginalParts {
            lower_q: self.lower_q,
            upper_q: self.upper_q,
            alpha: self.alpha,
            beta: self.beta,
            left_tail: self.left_tail,
            right_tail: self.right_tail,
            center_points: self.center.points().to_vec(),
            bandwidth: self.center.bandwidth(),
        }
    }

    pub fn lower_quantile(&self) -> f64 {
        self.lower_q
    }

    pub fn upper_quantile(&self) -> f64 {
        self.upper_q
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn left_tail(&self) -> &GpDist {
        &self.left_tail
    }

    pub fn right_tail(&self) -> &GpDist {
        &self.right_tail
    }

    pub fn center(&self) -> &Kde1D {
        &self.center
    }

    fn center_mass(&self) -> f64 {
        self.center_cdf_beta - self.center_cdf_alpha
    }

    /// Unclamped CDF of the piecewise model.
    pub fn cdf(&self, x: f64) -> f64 {
        let (a, b) = (self.lower_q, self.upper_q);
        if x < self.alpha {
            a * self.left_tail.sf(self.alpha - x)
        } else if x > self.beta {
            b + (1.0 - b) * self.right_tail.cdf(x - self.beta)
        } else if x == self.beta {
            b
        } else {
            a + (b - a) * (self.center.cdf(x) - self.center_cdf_alpha) / self.center_mass()
        }
    }

    /// Forward transform into `[UNIT_EPS, 1 - UNIT_EPS]`.
    pub fn transform(&self, x: f64) -> f64 {
        self.cdf(x).clamp(UNIT_EPS, 1.0 - UNIT_EPS)
    }

    pub fn inverse(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Domain {
                value: u,
                domain: "(0, 1)",
            });
        }
        let u = u.clamp(UNIT_EPS, 1.0 - UNIT_EPS);
        let (a, b) = (self.lower_q, self.upper_q);
        if u == a {
            return Ok(self.alpha);
        }
        if u == b {
            return Ok(self.beta);
        }
        if u < a {
            // A(x) = a * sf(alpha - x)  =>  alpha - x = ppf(1 - u / a)
            Ok(self.alpha - self.left_tail.ppf(1.0 - u / a)?)
        } else if u > b {
            Ok(self.beta + self.right_tail.ppf((u - b) / (1.0 - b))?)
        } else {
            let target = self.center_cdf_alpha + (u - a) / (b - a) * self.center_mass();
            let x = self.center.ppf(target.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON))?;
            Ok(x.clamp(self.alpha, self.beta))
        }
    }

    /// Log-density of the piecewise model, floored at [`LOG_DENSITY_FLOOR`].
    pub fn log_density(&self, x: f64) -> f64 {
        let (a, b) = (self.lower_q, self.upper_q);
        let v = if x < self.alpha {
            a.ln() + self.left_tail.log_pdf(self.alpha - x)
        } else if x > self.beta {
            (1.0 - b).ln() + self.right_tail.log_pdf(x - self.beta)
        } else {
            (b - a).ln() + self.center.pdf(x).ln() - self.center_mass().ln()
        };
        if v.is_nan() {
            LOG_DENSITY_FLOOR
        } else {
            v.max(LOG_DENSITY_FLOOR)
        }
    }
}
