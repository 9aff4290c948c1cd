//! Integral estimators and their variance machinery.
//!
//! Three estimators of `E[f(X)]` are provided: plain Monte Carlo, and the
//! first and second order moment matched versions. For the matched
//! estimators the standard error is produced as a by-product of the same
//! pass that computes the estimate, using the sample forms
//!
//! ```text
//! se1^2 = N^-1 [ mean(f^2) - mean(f)^2 - m^T Sigma^-1 m ]
//! se2^2 = N^-1 [ mean(f^2) - mean(f)^2 - m^T Sigma^-1 m - 1/2 tr(Q^2) ]
//! ```
//!
//! with `m` the sample mean of `(x - mu) f(x)` and `Q` the sample mean of
//! `(Sigma^-1 x x^T - I) f(x)` over the matched samples. The module also
//! exposes the corresponding population-limit formulas (the `asym_var_*`
//! functions), which give `lim N * Var` of each estimator for a normal
//! underlying, plus the general-distribution expansions used to study
//! non-normal counterexamples.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{solve_spd, sym_inv_sqrt, SymMatrix};
use crate::moment_match::{match_first_order, match_second_order, nonlinear_match, DistributionMap, MatchOrder};
use crate::numeric::{add_assign, chunked_reduce, pairwise_mean};
use crate::sampling::{correlate, draw_standard_batch, MomentSpec, RngStream, SampleBatch};

/// Estimation method recorded in a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Plain,
    Mm1,
    Mm2,
    NonlinearMm1,
    NonlinearMm2,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::Plain => "plain",
            Method::Mm1 => "mm1",
            Method::Mm2 => "mm2",
            Method::NonlinearMm1 => "nonlinear-mm1",
            Method::NonlinearMm2 => "nonlinear-mm2",
        };
        f.write_str(s)
    }
}

/// Breakdown of the variance estimate: the plain sample-variance term and
/// the subtracted matching corrections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceComponents {
    pub plain_variance: f64,
    pub first_order_correction: f64,
    pub second_order_correction: f64,
}

/// An integral estimate with its standard error.
#[derive(Debug, Clone)]
pub struct EstimateReport {
    pub method: Method,
    pub estimate: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub variance_components: Option<VarianceComponents>,
    /// True when the variance estimate came out negative and was floored to
    /// zero; possible at small N.
    pub se_floored: bool,
}

/// Population moments of an integrand under a given underlying, consumed by
/// the asymptotic variance formulas. Fields are optional so that each
/// formula can state exactly what it needs.
#[derive(Debug, Clone, Default)]
pub struct IntegrandMoments {
    /// E[f(X)]
    pub mean_f: f64,
    /// Var[f(X)]
    pub var_f: f64,
    /// E[grad f(X)]
    pub grad_mean: Option<Vec<f64>>,
    /// E[hess f(X)] for a normal underlying; in the scalar general case the
    /// 1x1 slot holds E[f'(X) X] (the two coincide for a standard normal).
    pub hess_mean: Option<SymMatrix>,
    /// E[X f(X)]
    pub xf_mean: Option<Vec<f64>>,
    /// E[(X - mu) f(X)]
    pub xmu_f_mean: Option<Vec<f64>>,
    /// E[(W W^T - I) f(X)] in whitened coordinates W = Sigma^{-1/2} (X - mu);
    /// symmetric, and tr(quad^2) equals tr(E[(Sigma^-1 X X^T - I) f]^2).
    pub quad_mean: Option<SymMatrix>,
    /// E[f(X) X^2], scalar case
    pub x2f_mean: Option<f64>,
    /// E[X^3], scalar case
    pub third_moment: Option<f64>,
    /// E[X^4], scalar case
    pub fourth_moment: Option<f64>,
}

fn need<'a, T>(field: &'a Option<T>, name: &'static str) -> Result<&'a T> {
    field.as_ref().ok_or(Error::MissingMoment(name))
}

/// Plain Monte Carlo estimate with its standard error
/// `sqrt((mean(f^2) - mean(f)^2) / N)`.
pub fn plain_estimate(f_values: &[f64]) -> Result<EstimateReport> {
    let n = f_values.len();
    if n < 2 {
        return Err(Error::TooFewSamples { required: 2, got: n });
    }
    let mean = pairwise_mean(f_values);
    let sq: Vec<f64> = f_values.iter().map(|v| v * v).collect();
    let mean_sq = pairwise_mean(&sq);
    let var = (mean_sq - mean * mean).max(0.0);
    Ok(EstimateReport {
        method: Method::Plain,
        estimate: mean,
        std_error: (var / n as f64).sqrt(),
        n_samples: n,
        variance_components: Some(VarianceComponents {
            plain_variance: var,
            first_order_correction: 0.0,
            second_order_correction: 0.0,
        }),
        se_floored: false,
    })
}

/// Accumulated per-sample statistics over a matched batch.
struct MatchedSums {
    mean_f: f64,
    mean_f2: f64,
    /// mean of (x - mu) f(x)
    m: Vec<f64>,
    /// mean of x x^T f(x), upper triangle packed; only when requested
    xxf: Option<Vec<f64>>,
}

fn accumulate(batch: &SampleBatch, fvals: &[f64], mu: &[f64], want_quad: bool) -> MatchedSums {
    let n = batch.n_samples();
    let dim = batch.dim();
    let n_pairs = dim * (dim + 1) / 2;
    let width = 2 + dim + if want_quad { n_pairs } else { 0 };
    let sums = chunked_reduce(
        n,
        |range| {
            let mut acc = vec![0.0; width];
            for k in range {
                let row = batch.row(k);
                let f = fvals[k];
                acc[0] += f;
                acc[1] += f * f;
                for j in 0..dim {
                    acc[2 + j] += (row[j] - mu[j]) * f;
                }
                if want_quad {
                    let mut p = 2 + dim;
                    for i in 0..dim {
                        for j in 0..=i {
                            acc[p] += row[i] * row[j] * f;
                            p += 1;
                        }
                    }
                }
            }
            acc
        },
        |mut a, b| {
            add_assign(&mut a, &b);
            a
        },
    )
    .expect("batch is non-empty");
    let inv_n = 1.0 / n as f64;
    MatchedSums {
        mean_f: sums[0] * inv_n,
        mean_f2: sums[1] * inv_n,
        m: sums[2..2 + dim].iter().map(|s| s * inv_n).collect(),
        xxf: want_quad.then(|| sums[2 + dim..].iter().map(|s| s * inv_n).collect()),
    }
}

/// Half the trace of `Q^2` for `Q = Sigma^-1 A - c I`, with `A` symmetric
/// given as a packed upper triangle.
fn half_trace_q_squared(cov: &SymMatrix, xxf: &[f64], c: f64) -> Result<f64> {
    let dim = cov.dim();
    let mut a = SymMatrix::zeros(dim)?;
    let mut p = 0;
    for i in 0..dim {
        for j in 0..=i {
            a.set(i, j, xxf[p]);
            p += 1;
        }
    }
    // columns of M = Sigma^-1 A via Cholesky solves
    let l = crate::linalg::cholesky(cov)?;
    let mut m = vec![0.0; dim * dim];
    let mut col = vec![0.0; dim];
    for j in 0..dim {
        for i in 0..dim {
            col[i] = a.get(i, j);
        }
        let solved = crate::linalg::solve_with_factor(&l, &col);
        for i in 0..dim {
            m[i * dim + j] = solved[i];
        }
    }
    let mut tr_m = 0.0;
    let mut tr_m2 = 0.0;
    for i in 0..dim {
        tr_m += m[i * dim + i];
        for j in 0..dim {
            tr_m2 += m[i * dim + j] * m[j * dim + i];
        }
    }
    // tr(Q^2) = tr(M^2) - 2 c tr(M) + c^2 dim; nonnegative up to round-off
    Ok(0.5 * (tr_m2 - 2.0 * c * tr_m + c * c * dim as f64).max(0.0))
}

fn build_report(
    method: Method,
    n: usize,
    sums: &MatchedSums,
    cov: &SymMatrix,
    second: f64,
) -> Result<EstimateReport> {
    let plain = (sums.mean_f2 - sums.mean_f * sums.mean_f).max(0.0);
    let sigma_inv_m = solve_spd(cov, &sums.m)?;
    let first: f64 = sums.m.iter().zip(&sigma_inv_m).map(|(a, b)| a * b).sum();
    let reduced = plain - first - second;
    let floored = reduced < 0.0;
    Ok(EstimateReport {
        method,
        estimate: sums.mean_f,
        std_error: (reduced.max(0.0) / n as f64).sqrt(),
        n_samples: n,
        variance_components: Some(VarianceComponents {
            plain_variance: plain,
            first_order_correction: first,
            second_order_correction: second,
        }),
        se_floored: floored,
    })
}

/// First order moment matching estimate of `E[f(X)]`, with the by-product
/// standard error. `f` is evaluated once per matched sample.
pub fn mm1_estimate<F>(f: F, x: &SampleBatch, spec: &MomentSpec) -> Result<EstimateReport>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = x.n_samples();
    if n < 2 {
        return Err(Error::TooFewSamples { required: 2, got: n });
    }
    let matched = match_first_order(x, spec.mean())?;
    let fvals = matched.values().map_rows(|row| f(row));
    let sums = accumulate(matched.values(), &fvals, spec.mean(), false);
    build_report(Method::Mm1, n, &sums, spec.cov(), 0.0)
}

/// Second order moment matching estimate of `E[f(X)]`, with the by-product
/// standard error including the trace correction.
pub fn mm2_estimate<F>(f: F, x: &SampleBatch, spec: &MomentSpec) -> Result<EstimateReport>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let matched = match_second_order(x, spec)?;
    let n = x.n_samples();
    let fvals = matched.values().map_rows(|row| f(row));
    let sums = accumulate(matched.values(), &fvals, spec.mean(), true);
    let second = half_trace_q_squared(spec.cov(), sums.xxf.as_ref().expect("quad requested"), sums.mean_f)?;
    build_report(Method::Mm2, n, &sums, spec.cov(), second)
}

/// Nonlinear moment matching estimate of `E[f(Y)]` for a continuous scalar
/// distribution.
///
/// The samples are matched in normal space and `f` is evaluated on the
/// mapped-back values; the standard error is the by-product form applied in
/// normal space, where the matched underlying is standard normal.
pub fn nonlinear_mm_estimate<F>(
    f: F,
    y: &SampleBatch,
    dist: &DistributionMap,
    order: MatchOrder,
) -> Result<EstimateReport>
where
    F: Fn(f64) -> f64 + Sync,
{
    let n = y.n_samples();
    if n < 2 {
        return Err(Error::TooFewSamples { required: 2, got: n });
    }
    let matched = nonlinear_match(y, dist, order)?;
    let fvals: Vec<f64> = matched.values().map_rows(|row| f(row[0]));
    // normal-space matched values, recovered through the distribution map
    let normals: Vec<f64> = matched
        .values()
        .values()
        .par_iter()
        .map(|&v| {
            let c = dist.cdf(v).clamp(1e-300, 1.0 - 1e-16);
            crate::sampling::standard_normal_quantile(c).expect("cdf clamped into (0,1)")
        })
        .collect();
    let normal_batch = SampleBatch::from_vec(normals, n, 1)?;
    let want_quad = order == MatchOrder::Second;
    let sums = accumulate(&normal_batch, &fvals, &[0.0], want_quad);
    let unit = SymMatrix::identity(1)?;
    let (method, second) = match order {
        MatchOrder::First => (Method::NonlinearMm1, 0.0),
        MatchOrder::Second => (
            Method::NonlinearMm2,
            half_trace_q_squared(&unit, sums.xxf.as_ref().expect("quad requested"), sums.mean_f)?,
        ),
    };
    build_report(method, n, &sums, &unit, second)
}

/// General-distribution limit of `N * Var` for the first order matched
/// estimator:
/// `Var[f] - 2 grad^T E[(X - mu) f] + grad^T Sigma grad`.
pub fn asym_var_mm1_general(m: &IntegrandMoments, sigma: &SymMatrix) -> Result<f64> {
    let grad = need(&m.grad_mean, "grad_mean")?;
    let xmu_f = need(&m.xmu_f_mean, "xmu_f_mean")?;
    if grad.len() != sigma.dim() || xmu_f.len() != sigma.dim() {
        return Err(Error::DimensionMismatch { expected: sigma.dim(), got: grad.len() });
    }
    let cross: f64 = grad.iter().zip(xmu_f).map(|(a, b)| a * b).sum();
    let sg = sigma.mul_vec(grad);
    let quad: f64 = grad.iter().zip(&sg).map(|(a, b)| a * b).sum();
    Ok(m.var_f - 2.0 * cross + quad)
}

/// Normal-underlying limit of `N * Var` for the first order matched
/// estimator of a smooth integrand: `Var[f] - grad^T Sigma grad`.
pub fn asym_var_mm1_normal_smooth(m: &IntegrandMoments, sigma: &SymMatrix) -> Result<f64> {
    let grad = need(&m.grad_mean, "grad_mean")?;
    if grad.len() != sigma.dim() {
        return Err(Error::DimensionMismatch { expected: sigma.dim(), got: grad.len() });
    }
    let sg = sigma.mul_vec(grad);
    let quad: f64 = grad.iter().zip(&sg).map(|(a, b)| a * b).sum();
    Ok((m.var_f - quad).max(0.0))
}

/// Normal-underlying (zero mean) limit of `N * Var` for the first order
/// matched estimator of any measurable integrand:
/// `Var[f] - E[X f]^T Sigma^-1 E[X f]`.
pub fn asym_var_mm1_normal_rough(m: &IntegrandMoments, sigma: &SymMatrix) -> Result<f64> {
    let xf = need(&m.xf_mean, "xf_mean")?;
    if xf.len() != sigma.dim() {
        return Err(Error::DimensionMismatch { expected: sigma.dim(), got: xf.len() });
    }
    let w = whiten_solve(sigma, xf)?;
    let sub: f64 = xf.iter().zip(&w).map(|(a, b)| a * b).sum();
    Ok((m.var_f - sub).max(0.0))
}

/// Scalar general-distribution limit of `N * Var` for the second order
/// matched estimator, for a standardized underlying (`E X = 0`,
/// `E X^2 = 1`). The 1x1 hess slot must hold `E[f'(X) X]`.
pub fn asym_var_mm2_general_scalar(m: &IntegrandMoments) -> Result<f64> {
    let grad = need(&m.grad_mean, "grad_mean")?;
    let hess = need(&m.hess_mean, "hess_mean")?;
    if grad.len() != 1 || hess.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: grad.len().max(hess.dim()) });
    }
    let xf = need(&m.xf_mean, "xf_mean")?;
    let x2f = *need(&m.x2f_mean, "x2f_mean")?;
    let third = *need(&m.third_moment, "third_moment")?;
    let fourth = *need(&m.fourth_moment, "fourth_moment")?;
    let ef_prime = grad[0];
    let ef_prime_x = hess.get(0, 0);
    let ef = m.mean_f;
    let efx = xf[0];
    Ok(m.var_f
        + 0.25 * ef_prime_x * ef_prime_x * (fourth - 1.0)
        + ef_prime * ef_prime
        + ef_prime_x * (ef - x2f)
        - 2.0 * ef_prime * efx
        + ef_prime_x * ef_prime * third)
}

/// Normal-underlying limit of `N * Var` for the second order matched
/// estimator of a smooth integrand:
/// `Var[f] - grad^T Sigma grad - 1/2 tr((Sigma hess)^2)`.
pub fn asym_var_mm2_normal_smooth(m: &IntegrandMoments, sigma: &SymMatrix) -> Result<f64> {
    let grad = need(&m.grad_mean, "grad_mean")?;
    let hess = need(&m.hess_mean, "hess_mean")?;
    let dim = sigma.dim();
    if grad.len() != dim || hess.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: grad.len() });
    }
    let sg = sigma.mul_vec(grad);
    let quad: f64 = grad.iter().zip(&sg).map(|(a, b)| a * b).sum();
    // M = Sigma * hess; tr(M^2)
    let mut tr_m2 = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            let mut mij = 0.0;
            let mut mji = 0.0;
            for k in 0..dim {
                mij += sigma.get(i, k) * hess.get(k, j);
                mji += sigma.get(j, k) * hess.get(k, i);
            }
            tr_m2 += mij * mji;
        }
    }
    Ok((m.var_f - quad - 0.5 * tr_m2).max(0.0))
}

/// Normal-underlying (zero mean) limit of `N * Var` for the second order
/// matched estimator of any measurable integrand:
/// `Var[f] - E[X f]^T Sigma^-1 E[X f] - 1/2 tr(quad^2)`.
pub fn asym_var_mm2_normal_rough(m: &IntegrandMoments, sigma: &SymMatrix) -> Result<f64> {
    let xf = need(&m.xf_mean, "xf_mean")?;
    let quad = need(&m.quad_mean, "quad_mean")?;
    let dim = sigma.dim();
    if xf.len() != dim || quad.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: xf.len() });
    }
    let w = whiten_solve(sigma, xf)?;
    let sub: f64 = xf.iter().zip(&w).map(|(a, b)| a * b).sum();
    // quad is symmetric, so tr(quad^2) is the squared Frobenius norm
    let mut tr_q2 = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            tr_q2 += quad.get(i, j) * quad.get(i, j);
        }
    }
    Ok((m.var_f - sub - 0.5 * tr_q2).max(0.0))
}

/// `Sigma^-1 v` through the symmetric inverse root, reporting
/// [`Error::SingularMatrix`] for a degenerate covariance.
fn whiten_solve(sigma: &SymMatrix, v: &[f64]) -> Result<Vec<f64>> {
    let t = sym_inv_sqrt(sigma)?;
    Ok(t.mul_vec(&t.mul_vec(v)))
}

/// Monte Carlo estimate of the integrand moments used by the asymptotic
/// formulas, for a normal underlying described by `spec`.
///
/// Derivative moments are obtained through the Stein identities
/// `E[grad f] = Sigma^-1 E[(X - mu) f]` and
/// `E[hess f] = Sigma^-1/2 E[(Z Z^T - I) f] Sigma^-1/2` with
/// `Z = Sigma^-1/2 (X - mu)`, so no derivative of `f` is ever taken; this
/// stays valid for discontinuous integrands.
pub fn estimate_integrand_moments<F>(
    f: F,
    spec: &MomentSpec,
    stream: RngStream,
    n_samples: usize,
) -> Result<IntegrandMoments>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if n_samples < 100 {
        return Err(Error::TooFewSamples { required: 100, got: n_samples });
    }
    let dim = spec.dim();
    let z = draw_standard_batch(stream, n_samples, dim)?;
    let x = correlate(&z, spec)?;
    let fvals = x.map_rows(|row| f(row));

    let n_pairs = dim * (dim + 1) / 2;
    let scalar_extras = if dim == 1 { 3 } else { 0 };
    // layout: f, f2, xf[dim], xmuf[dim], zzf[n_pairs], (x2f, x3, x4)
    let width = 2 + 2 * dim + n_pairs + scalar_extras;
    let mu = spec.mean();
    let sums = chunked_reduce(
        n_samples,
        |range| {
            let mut acc = vec![0.0; width];
            for k in range {
                let row = x.row(k);
                let zrow = z.row(k);
                let fv = fvals[k];
                acc[0] += fv;
                acc[1] += fv * fv;
                for j in 0..dim {
                    acc[2 + j] += row[j] * fv;
                    acc[2 + dim + j] += (row[j] - mu[j]) * fv;
                }
                let mut p = 2 + 2 * dim;
                for i in 0..dim {
                    for j in 0..=i {
                        acc[p] += zrow[i] * zrow[j] * fv;
                        p += 1;
                    }
                }
                if dim == 1 {
                    let v = row[0];
                    acc[p] += v * v * fv;
                    acc[p + 1] += v * v * v;
                    acc[p + 2] += v * v * v * v;
                }
            }
            acc
        },
        |mut a, b| {
            add_assign(&mut a, &b);
            a
        },
    )
    .expect("n_samples >= 100");

    let inv_n = 1.0 / n_samples as f64;
    let mean_f = sums[0] * inv_n;
    let var_f = (sums[1] * inv_n - mean_f * mean_f).max(0.0);
    let xf_mean: Vec<f64> = sums[2..2 + dim].iter().map(|s| s * inv_n).collect();
    let xmu_f_mean: Vec<f64> = sums[2 + dim..2 + 2 * dim].iter().map(|s| s * inv_n).collect();

    let mut quad = SymMatrix::zeros(dim)?;
    let mut p = 2 + 2 * dim;
    for i in 0..dim {
        for j in 0..=i {
            let v = sums[p] * inv_n - if i == j { mean_f } else { 0.0 };
            quad.set(i, j, v);
            p += 1;
        }
    }

    let grad_mean = solve_spd(spec.cov(), &xmu_f_mean)?;
    let inv_root = sym_inv_sqrt(spec.cov())?;
    let mut hess = SymMatrix::zeros(dim)?;
    for i in 0..dim {
        for j in 0..=i {
            let mut s = 0.0;
            for a in 0..dim {
                for b in 0..dim {
                    s += inv_root.get(i, a) * quad.get(a, b) * inv_root.get(b, j);
                }
            }
            hess.set(i, j, s);
        }
    }

    let (x2f_mean, third_moment, fourth_moment) = if dim == 1 {
        (
            Some(sums[p] * inv_n),
            Some(sums[p + 1] * inv_n),
            Some(sums[p + 2] * inv_n),
        )
    } else {
        (None, None, None)
    };

    Ok(IntegrandMoments {
        mean_f,
        var_f,
        grad_mean: Some(grad_mean),
        hess_mean: Some(hess),
        xf_mean: Some(xf_mean),
        xmu_f_mean: Some(xmu_f_mean),
        quad_mean: Some(quad),
        x2f_mean,
        third_moment,
        fourth_moment,
    })
}
