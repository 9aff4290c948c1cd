//! Payoff models for the pricing experiments, plus analytic test
//! integrands.
//!
//! The market model is a terminal-observation geometric Brownian motion per
//! asset: strike and barrier act on the performance `S_T / S_0`, so the
//! spot cancels out of the terminal map. The down-and-in put pays
//! `e^{-rT} (K - W)+` when the worst performance `W` finishes at or below
//! the barrier; the breach is inclusive (`W <= B`), a measure-zero
//! convention fixed for reproducibility.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, LowerTriangular, SymMatrix, MAX_DIM};
use crate::sampling::{standard_normal_cdf, SampleBatch};

/// Market parameters for an n-asset worst-of down-and-in put.
#[derive(Debug, Clone)]
pub struct MarketParams {
    /// Per-year volatility per asset.
    pub vols: Vec<f64>,
    /// Risk-free rate per year.
    pub rate: f64,
    /// Spot per asset. Performances are spot-normalized, so spots do not
    /// enter the terminal map; they are kept for completeness.
    pub spots: Vec<f64>,
    /// Strike in performance units.
    pub strike: f64,
    /// Maturity in years.
    pub maturity: f64,
    /// Knock-in barrier in performance units.
    pub barrier: f64,
    /// Asset correlation matrix (unit diagonal, positive definite).
    pub correlation: SymMatrix,
}

impl MarketParams {
    pub fn n_assets(&self) -> usize {
        self.vols.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vols.len();
        if n == 0 || n > MAX_DIM {
            return Err(Error::InvalidParams(format!(
                "number of assets must be in 1..={MAX_DIM}, got {n}"
            )));
        }
        if self.spots.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.spots.len() });
        }
        if self.correlation.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.correlation.dim() });
        }
        if self.vols.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParams("volatilities must be positive".into()));
        }
        if self.spots.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidParams("spots must be positive".into()));
        }
        if !(self.maturity > 0.0) || !self.maturity.is_finite() {
            return Err(Error::InvalidParams("maturity must be positive".into()));
        }
        if !self.rate.is_finite() {
            return Err(Error::InvalidParams("rate must be finite".into()));
        }
        if !(self.barrier > 0.0) || !self.barrier.is_finite() {
            return Err(Error::InvalidParams("barrier must be positive".into()));
        }
        if !(self.strike >= 0.0) || !self.strike.is_finite() {
            return Err(Error::InvalidParams("strike must be nonnegative".into()));
        }
        for i in 0..n {
            if (self.correlation.get(i, i) - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParams("correlation diagonal must be 1".into()));
            }
        }
        cholesky(&self.correlation).map_err(|_| {
            Error::InvalidParams("correlation matrix must be positive definite".into())
        })?;
        Ok(())
    }
}

/// Precomputed terminal GBM map from driving standard normals to per-asset
/// performances.
#[derive(Debug, Clone)]
pub struct GbmMap {
    n: usize,
    chol: LowerTriangular,
    drift: Vec<f64>,
    vol_sqrt_t: Vec<f64>,
}

impl GbmMap {
    pub fn new(params: &MarketParams) -> Result<Self> {
        params.validate()?;
        let n = params.n_assets();
        let chol = cholesky(&params.correlation)?;
        let sqrt_t = params.maturity.sqrt();
        let drift: Vec<f64> = params
            .vols
            .iter()
            .map(|&s| (params.rate - 0.5 * s * s) * params.maturity)
            .collect();
        let vol_sqrt_t: Vec<f64> = params.vols.iter().map(|&s| s * sqrt_t).collect();
        Ok(Self { n, chol, drift, vol_sqrt_t })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Maps one row of standard normals to performances:
    /// `P_i = exp(drift_i + vol_i sqrt(T) (L z)_i)`.
    pub fn apply(&self, z: &[f64], out: &mut [f64]) {
        let n = self.n;
        let l = self.chol.as_slice();
        for i in 0..n {
            let mut w = 0.0;
            for j in 0..=i {
                w += l[i * n + j] * z[j];
            }
            out[i] = (self.drift[i] + self.vol_sqrt_t[i] * w).exp();
        }
    }
}

/// Maps a batch of standard normals to terminal performances.
pub fn gbm_terminal(z: &SampleBatch, params: &MarketParams) -> Result<SampleBatch> {
    let map = GbmMap::new(params)?;
    if z.dim() != map.dim() {
        return Err(Error::DimensionMismatch { expected: map.dim(), got: z.dim() });
    }
    let n = z.n_samples();
    let dim = z.dim();
    let mut values = vec![0.0; n * dim];
    values
        .par_chunks_mut(dim)
        .zip(z.values().par_chunks(dim))
        .for_each(|(out, row)| map.apply(row, out));
    SampleBatch::from_vec(values, n, dim)
}

/// Discounted worst-of down-and-in put payoff for one path of performances.
pub fn down_in_put(performances: &[f64], params: &MarketParams) -> f64 {
    let worst = performances.iter().fold(f64::INFINITY, |m, &p| m.min(p));
    if worst <= params.barrier {
        (-params.rate * params.maturity).exp() * (params.strike - worst).max(0.0)
    } else {
        0.0
    }
}

/// Analytic price of the single-asset down-and-in put with terminal
/// observation and `B < K`:
/// `e^{-rT} K Phi(-d2(B)) - Phi(-d1(B))` in performance units, with
/// `d2(B) = (ln(1/B) + (r - sigma^2/2) T) / (sigma sqrt T)` and
/// `d1 = d2 + sigma sqrt T`.
pub fn down_in_put_closed_form(params: &MarketParams) -> Result<f64> {
    params.validate()?;
    if params.n_assets() != 1 {
        return Err(Error::InvalidParams("closed form requires a single asset".into()));
    }
    if params.barrier >= params.strike {
        return Err(Error::InvalidParams("closed form requires barrier < strike".into()));
    }
    let sigma = params.vols[0];
    let t = params.maturity;
    let s = sigma * t.sqrt();
    let d2 = ((1.0 / params.barrier).ln() + (params.rate - 0.5 * sigma * sigma) * t) / s;
    let d1 = d2 + s;
    let df = (-params.rate * t).exp();
    Ok(df * params.strike * standard_normal_cdf(-d2) - standard_normal_cdf(-d1))
}

/// Worst-of down-and-in put as a function of the driving standard normals;
/// the integrand used by the pricing experiments.
#[derive(Debug, Clone)]
pub struct DownInPutPayoff {
    gbm: GbmMap,
    params: MarketParams,
}

impl DownInPutPayoff {
    pub fn new(params: &MarketParams) -> Result<Self> {
        Ok(Self { gbm: GbmMap::new(params)?, params: params.clone() })
    }

    pub fn dim(&self) -> usize {
        self.gbm.dim()
    }

    /// Discounted payoff for one row of driving standard normals.
    pub fn price_normals(&self, z: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), self.gbm.dim());
        let mut perf = [0.0f64; MAX_DIM];
        let n = self.gbm.dim();
        self.gbm.apply(z, &mut perf[..n]);
        down_in_put(&perf[..n], &self.params)
    }
}

/// Analytic test integrands used by the verification suites.
#[derive(Debug, Clone)]
pub enum TestIntegrand {
    /// `c0 + c1 x + c2 x^2 + ...`
    Polynomial { coeffs: Vec<f64> },
    /// `1{x >= threshold}` (inclusive).
    Heaviside { threshold: f64 },
    /// `scale * exp(-1 / (1 - t^2))` with `t` mapping `[lo, hi]` onto
    /// `[-1, 1]`; smooth, compactly supported in `(lo, hi)`, exactly zero
    /// outside.
    Bump { lo: f64, hi: f64, scale: f64 },
    /// `sin(freq x + phase)`.
    Sin { freq: f64, phase: f64 },
}

impl TestIntegrand {
    pub fn polynomial(coeffs: &[f64]) -> Self {
        TestIntegrand::Polynomial { coeffs: coeffs.to_vec() }
    }

    pub fn heaviside(threshold: f64) -> Self {
        TestIntegrand::Heaviside { threshold }
    }

    pub fn bump(lo: f64, hi: f64, scale: f64) -> Self {
        assert!(hi > lo, "bump support must be a nonempty interval");
        TestIntegrand::Bump { lo, hi, scale }
    }

    pub fn sine(freq: f64, phase: f64) -> Self {
        TestIntegrand::Sin { freq, phase }
    }

    pub fn label(&self) -> String {
        match self {
            TestIntegrand::Polynomial { coeffs } => format!("poly{coeffs:?}"),
            TestIntegrand::Heaviside { threshold } => format!("heaviside(x>={threshold})"),
            TestIntegrand::Bump { lo, hi, scale } => format!("bump({lo},{hi})*{scale}"),
            TestIntegrand::Sin { freq, phase } => format!("sin({freq}x+{phase})"),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            TestIntegrand::Polynomial { coeffs } => {
                coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
            }
            TestIntegrand::Heaviside { threshold } => {
                if x >= *threshold {
                    1.0
                } else {
                    0.0
                }
            }
            TestIntegrand::Bump { lo, hi, scale } => {
                let t = (2.0 * x - (lo + hi)) / (hi - lo);
                if t.abs() < 1.0 {
                    scale * (-1.0 / (1.0 - t * t)).exp()
                } else {
                    0.0
                }
            }
            TestIntegrand::Sin { freq, phase } => (freq * x + phase).sin(),
        }
    }

    /// Analytic first derivative; the Heaviside has none.
    pub fn gradient(&self, x: f64) -> Result<f64> {
        match self {
            TestIntegrand::Polynomial { coeffs } => {
                let mut d = 0.0;
                for (k, &c) in coeffs.iter().enumerate().skip(1) {
                    d += k as f64 * c * x.powi(k as i32 - 1);
                }
                Ok(d)
            }
            TestIntegrand::Heaviside { .. } => {
                Err(Error::UnsupportedDerivative("heaviside gradient"))
            }
            TestIntegrand::Bump { lo, hi, scale } => {
                let dt = 2.0 / (hi - lo);
                let t = (2.0 * x - (lo + hi)) / (hi - lo);
                if t.abs() < 1.0 {
                    let u = 1.0 - t * t;
                    Ok(scale * (-1.0 / u).exp() * (-2.0 * t / (u * u)) * dt)
                } else {
                    Ok(0.0)
                }
            }
            TestIntegrand::Sin { freq, phase } => Ok(freq * (freq * x + phase).cos()),
        }
    }

    /// Analytic second derivative.
    pub fn hessian(&self, x: f64) -> Result<f64> {
        match self {
            TestIntegrand::Polynomial { coeffs } => {
                let mut d = 0.0;
                for (k, &c) in coeffs.iter().enumerate().skip(2) {
                    d += (k * (k - 1)) as f64 * c * x.powi(k as i32 - 2);
                }
                Ok(d)
            }
            TestIntegrand::Heaviside { .. } => {
                Err(Error::UnsupportedDerivative("heaviside hessian"))
            }
            TestIntegrand::Bump { lo, hi, scale } => {
                let dt = 2.0 / (hi - lo);
                let t = (2.0 * x - (lo + hi)) / (hi - lo);
                if t.abs() < 1.0 {
                    let u = 1.0 - t * t;
                    let g = (-1.0 / u).exp();
                    // d2/dt2 of exp(-1/(1-t^2))
                    let d2 = g * (-2.0 / (u * u) - 8.0 * t * t / (u * u * u) + 4.0 * t * t / (u * u * u * u));
                    Ok(scale * d2 * dt * dt)
                } else {
                    Ok(0.0)
                }
            }
            TestIntegrand::Sin { freq, phase } => Ok(-freq * freq * (freq * x + phase).sin()),
        }
    }
}
