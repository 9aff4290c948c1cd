//! The matching transforms.
//!
//! First order matching recenters a batch on the known mean. Second order
//! matching additionally whitens with the inverse root of the biased sample
//! covariance and recolors with the root of the target covariance, so the
//! matched batch reproduces the target mean and covariance exactly. The
//! nonlinear scheme carries an arbitrary continuous scalar distribution to
//! normal space through its CDF, matches there, and maps back.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{jacobi_eigen, SymMatrix};
use crate::sampling::{
    batch_mean, sample_moments, standard_normal_cdf, MomentSpec, SampleBatch,
};

/// Clamp window applied to CDF values before the normal quantile, keeping
/// tail samples finite without visibly perturbing results.
const CDF_FLOOR: f64 = 1e-300;
const CDF_CEIL: f64 = 1.0 - 1e-16;

/// Matching order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchOrder {
    First,
    Second,
}

impl MatchOrder {
    pub fn as_u8(self) -> u8 {
        match self {
            MatchOrder::First => 1,
            MatchOrder::Second => 2,
        }
    }
}

/// A CDF/quantile pair describing a continuous scalar distribution.
pub struct DistributionMap {
    cdf: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    quantile: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    description: String,
}

impl DistributionMap {
    pub fn new(
        cdf: impl Fn(f64) -> f64 + Send + Sync + 'static,
        quantile: impl Fn(f64) -> f64 + Send + Sync + 'static,
        description: impl Into<String>,
    ) -> Self {
        Self {
            cdf: Box::new(cdf),
            quantile: Box::new(quantile),
            description: description.into(),
        }
    }

    /// Exponential distribution with the given rate.
    pub fn exponential(rate: f64) -> Self {
        Self::new(
            move |y: f64| -(-rate * y).exp_m1(),
            move |p: f64| -(-p).ln_1p() / rate,
            format!("Exp(rate={rate})"),
        )
    }

    /// Uniform distribution on `(lo, hi)`.
    pub fn uniform(lo: f64, hi: f64) -> Self {
        let width = hi - lo;
        Self::new(
            move |y: f64| ((y - lo) / width).clamp(0.0, 1.0),
            move |p: f64| lo + p * width,
            format!("Uniform({lo}, {hi})"),
        )
    }

    pub fn cdf(&self, y: f64) -> f64 {
        (self.cdf)(y)
    }

    pub fn quantile(&self, p: f64) -> f64 {
        (self.quantile)(p)
    }

    pub fn description(&self) -> &str {
        &self.description
    }
}

impl std::fmt::Debug for DistributionMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DistributionMap")
            .field("description", &self.description)
            .finish()
    }
}

/// A matched batch together with the raw-batch moments the transform used.
#[derive(Debug, Clone)]
pub struct MatchedBatch {
    values: SampleBatch,
    order: MatchOrder,
    source_mean: Vec<f64>,
    /// Biased sample covariance of the raw batch. `None` for a single-sample
    /// batch, where no covariance exists.
    source_cov: Option<SymMatrix>,
}

impl MatchedBatch {
    pub fn values(&self) -> &SampleBatch {
        &self.values
    }

    pub fn into_values(self) -> SampleBatch {
        self.values
    }

    pub fn order(&self) -> MatchOrder {
        self.order
    }

    pub fn source_mean(&self) -> &[f64] {
        &self.source_mean
    }

    pub fn source_cov(&self) -> Option<&SymMatrix> {
        self.source_cov.as_ref()
    }
}

/// First order matching: shifts every sample by `mu - sample mean`.
pub fn match_first_order(x: &SampleBatch, mu: &[f64]) -> Result<MatchedBatch> {
    let dim = x.dim();
    if mu.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: mu.len() });
    }
    let mean = batch_mean(x);
    let shift: Vec<f64> = mu.iter().zip(&mean).map(|(m, xb)| m - xb).collect();
    let n = x.n_samples();
    let mut values = vec![0.0; n * dim];
    values
        .par_chunks_mut(dim)
        .zip(x.values().par_chunks(dim))
        .for_each(|(out, row)| {
            for j in 0..dim {
                out[j] = row[j] + shift[j];
            }
        });
    let source_cov = if n >= 2 { Some(sample_moments(x)?.1) } else { None };
    Ok(MatchedBatch {
        values: SampleBatch::from_vec(values, n, dim)?,
        order: MatchOrder::First,
        source_mean: mean,
        source_cov,
    })
}

/// Second order matching: maps every sample through
/// `cov_sqrt * sample_cov^{-1/2} * (x - sample mean) + mu`.
///
/// Requires at least `dim + 1` samples, the minimum for a nonsingular biased
/// sample covariance, and fails with [`Error::SingularSampleCovariance`]
/// when the smallest eigenvalue of the sample covariance falls below
/// `1e-10 * trace / dim`.
pub fn match_second_order(x: &SampleBatch, spec: &MomentSpec) -> Result<MatchedBatch> {
    let dim = x.dim();
    if spec.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: spec.dim() });
    }
    let n = x.n_samples();
    if n < dim + 1 {
        return Err(Error::TooFewSamples { required: dim + 1, got: n });
    }
    let (mean, cov) = sample_moments(x)?;

    let (vals, q) = jacobi_eigen(&cov);
    let lambda_min = vals.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    if lambda_min <= 1e-10 * cov.trace() / dim as f64 {
        return Err(Error::SingularSampleCovariance { eigenvalue: lambda_min });
    }
    // inv root of the sample covariance from its own eigensystem
    let mut inv_root = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut s = 0.0;
            for k in 0..dim {
                s += q[i * dim + k] / vals[k].sqrt() * q[j * dim + k];
            }
            inv_root[i * dim + j] = s;
            inv_root[j * dim + i] = s;
        }
    }
    // transform = cov_sqrt * inv_root (not symmetric in general)
    let root = spec.cov_sqrt();
    let mut transform = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            let mut s = 0.0;
            for k in 0..dim {
                s += root.get(i, k) * inv_root[k * dim + j];
            }
            transform[i * dim + j] = s;
        }
    }

    let mu = spec.mean();
    let mut values = vec![0.0; n * dim];
    values
        .par_chunks_mut(dim)
        .zip(x.values().par_chunks(dim))
        .for_each(|(out, row)| {
            for i in 0..dim {
                let mut s = mu[i];
                for j in 0..dim {
                    s += transform[i * dim + j] * (row[j] - mean[j]);
                }
                out[i] = s;
            }
        });
    Ok(MatchedBatch {
        values: SampleBatch::from_vec(values, n, dim)?,
        order: MatchOrder::Second,
        source_mean: mean,
        source_cov: Some(cov),
    })
}

/// Nonlinear matching for a scalar batch of a continuous distribution.
///
/// Samples are carried to normal space as `x = Phi^{-1}(F(y))`, matched
/// there (recentred for first order; recentred and rescaled by the biased
/// sample deviation for second order), and mapped back through
/// `F^{-1}(Phi(.))`.
pub fn nonlinear_match(
    y: &SampleBatch,
    dist: &DistributionMap,
    order: MatchOrder,
) -> Result<MatchedBatch> {
    if y.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: y.dim() });
    }
    let n = y.n_samples();
    let mut normals = vec![0.0; n];
    for (k, out) in normals.iter_mut().enumerate() {
        let c = dist.cdf(y.values()[k]);
        if !(c > 0.0 && c < 1.0) {
            return Err(Error::SupportViolation { cdf: c });
        }
        let c = c.clamp(CDF_FLOOR, CDF_CEIL);
        *out = crate::sampling::standard_normal_quantile(c)?;
    }
    let x = SampleBatch::from_vec(normals, n, 1)?;
    let mean = batch_mean(&x)[0];

    let (scale, source_cov) = match order {
        MatchOrder::First => {
            let cov = if n >= 2 { Some(sample_moments(&x)?.1) } else { None };
            (1.0, cov)
        }
        MatchOrder::Second => {
            if n < 2 {
                return Err(Error::TooFewSamples { required: 2, got: n });
            }
            let (_, cov) = sample_moments(&x)?;
            let var = cov.get(0, 0);
            if var <= 1e-14 {
                return Err(Error::DegenerateVariance { variance: var });
            }
            (1.0 / var.sqrt(), Some(cov))
        }
    };

    let values: Vec<f64> = x
        .values()
        .par_iter()
        .map(|&v| {
            let p = standard_normal_cdf(scale * (v - mean)).clamp(CDF_FLOOR, CDF_CEIL);
            dist.quantile(p)
        })
        .collect();
    Ok(MatchedBatch {
        values: SampleBatch::from_vec(values, n, 1)?,
        order,
        source_mean: vec![mean],
        source_cov,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{draw_standard_batch, RngStream};

    fn scalar_batch(values: &[f64]) -> SampleBatch {
        SampleBatch::from_scalars(values.to_vec()).unwrap()
    }

    #[test]
    fn first_order_hand_shift() {
        let m = match_first_order(&scalar_batch(&[1.0, 2.0, 3.0]), &[0.0]).unwrap();
        assert_eq!(m.values().values(), &[-1.0, 0.0, 1.0]);
        assert_eq!(m.source_mean(), &[2.0]);
    }

    #[test]
    fn first_order_single_sample_forced_to_mean() {
        let m = match_first_order(&scalar_batch(&[5.0]), &[2.0]).unwrap();
        assert_eq!(m.values().values(), &[2.0]);
        assert!(m.source_cov().is_none());
    }

    #[test]
    fn first_order_two_dimensional_shift() {
        let x = SampleBatch::from_rows(&[vec![1.0, 0.0], vec![3.0, 2.0]]).unwrap();
        let m = match_first_order(&x, &[0.0, 0.0]).unwrap();
        assert_eq!(m.values().values(), &[-1.0, -1.0, 1.0, 1.0]);
    }

    #[test]
    fn second_order_hand_cases() {
        let spec = MomentSpec::scalar(0.0, 1.0).unwrap();
        let m = match_second_order(&scalar_batch(&[-2.0, 2.0]), &spec).unwrap();
        assert!((m.values().values()[0] + 1.0).abs() < 1e-12);
        assert!((m.values().values()[1] - 1.0).abs() < 1e-12);

        let m = match_second_order(&scalar_batch(&[0.0, 2.0]), &spec).unwrap();
        assert!((m.values().values()[0] + 1.0).abs() < 1e-12);
        assert!((m.values().values()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn second_order_rejects_constant_batch() {
        let spec = MomentSpec::scalar(0.0, 1.0).unwrap();
        let r = match_second_order(&scalar_batch(&[3.0, 3.0, 3.0]), &spec);
        assert!(matches!(r, Err(Error::SingularSampleCovariance { .. })));
    }

    #[test]
    fn second_order_too_few_samples() {
        let spec = MomentSpec::standard(3).unwrap();
        let x = SampleBatch::from_rows(&[vec![0.1, 0.2, 0.3], vec![1.0, -1.0, 0.5]]).unwrap();
        assert!(matches!(
            match_second_order(&x, &spec),
            Err(Error::TooFewSamples { required: 4, .. })
        ));
    }

    #[test]
    fn matched_moments_are_exact() {
        for (seed, dim, n) in [(1u64, 1usize, 6usize), (2, 2, 9), (3, 3, 25), (4, 3, 100)] {
            let x = draw_standard_batch(RngStream::new(seed, 0), n, dim).unwrap();
            let mut cov = SymMatrix::identity(dim).unwrap();
            for i in 0..dim {
                for j in 0..i {
                    cov.set(i, j, 0.3 / (1.0 + (i + j) as f64));
                }
                cov.set(i, i, 1.0 + 0.5 * i as f64);
            }
            let mu: Vec<f64> = (0..dim).map(|i| i as f64 - 0.5).collect();
            let spec = MomentSpec::new(mu.clone(), cov.clone()).unwrap();

            let m1 = match_first_order(&x, &mu).unwrap();
            let (mean1, _) = sample_moments(m1.values()).unwrap();
            for (a, b) in mean1.iter().zip(&mu) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs() + 1.0));
            }

            let m2 = match_second_order(&x, &spec).unwrap();
            let (mean2, cov2) = sample_moments(m2.values()).unwrap();
            for (a, b) in mean2.iter().zip(&mu) {
                assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
            let scale = cov.max_abs();
            for i in 0..dim {
                for j in 0..dim {
                    assert!(
                        (cov2.get(i, j) - cov.get(i, j)).abs() <= 1e-9 * scale,
                        "seed {seed} ({i},{j})"
                    );
                }
            }
        }
    }

    #[test]
    fn scalar_scale_equivariance() {
        let x = draw_standard_batch(RngStream::new(10, 0), 50, 1).unwrap();
        let c = -2.5;
        let scaled = SampleBatch::from_scalars(x.values().iter().map(|v| c * v).collect()).unwrap();
        let spec = MomentSpec::scalar(0.7, 2.0).unwrap();
        let spec_scaled = MomentSpec::scalar(c * 0.7, c * c * 2.0).unwrap();
        let a = match_second_order(&x, &spec).unwrap();
        let b = match_second_order(&scaled, &spec_scaled).unwrap();
        for (u, v) in a.values().values().iter().zip(b.values().values()) {
            assert!((c * u - v).abs() <= 1e-12 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn permutation_equivariance() {
        let x = draw_standard_batch(RngStream::new(11, 0), 40, 2).unwrap();
        let perm: Vec<usize> = (0..40).rev().collect();
        let rows: Vec<Vec<f64>> = perm.iter().map(|&k| x.row(k).to_vec()).collect();
        let xp = SampleBatch::from_rows(&rows).unwrap();
        let spec = MomentSpec::standard(2).unwrap();
        let a = match_second_order(&x, &spec).unwrap();
        let b = match_second_order(&xp, &spec).unwrap();
        for (k, &p) in perm.iter().enumerate() {
            for j in 0..2 {
                let u = a.values().row(p)[j];
                let v = b.values().row(k)[j];
                assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()));
            }
        }
    }

    #[test]
    fn idempotence() {
        let x = draw_standard_batch(RngStream::new(12, 0), 60, 3).unwrap();
        let spec = MomentSpec::standard(3).unwrap();
        let once = match_second_order(&x, &spec).unwrap();
        let twice = match_second_order(once.values(), &spec).unwrap();
        for (u, v) in once.values().values().iter().zip(twice.values().values()) {
            assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()));
        }

        let once = match_first_order(&x, &[1.0, 2.0, 3.0]).unwrap();
        let twice = match_first_order(once.values(), &[1.0, 2.0, 3.0]).unwrap();
        for (u, v) in once.values().values().iter().zip(twice.values().values()) {
            assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn nonlinear_identity_when_already_centered() {
        // Y built from normal values with exact zero mean
        let dist = DistributionMap::exponential(1.0);
        let xs = [-1.5, -0.5, 0.5, 1.5];
        let ys: Vec<f64> = xs.iter().map(|&x| dist.quantile(standard_normal_cdf(x))).collect();
        let y = SampleBatch::from_scalars(ys.clone()).unwrap();
        let m = nonlinear_match(&y, &dist, MatchOrder::First).unwrap();
        for (u, v) in m.values().values().iter().zip(&ys) {
            assert!((u - v).abs() <= 1e-8 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn nonlinear_single_sample_goes_to_median() {
        let dist = DistributionMap::exponential(1.0);
        let y = scalar_batch(&[2.7]);
        let m = nonlinear_match(&y, &dist, MatchOrder::First).unwrap();
        assert!((m.values().values()[0] - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn nonlinear_second_order_fixed_point() {
        // X-values {-1, 1} already have mean 0 and biased deviation 1
        let dist = DistributionMap::exponential(1.0);
        let ys = vec![
            dist.quantile(standard_normal_cdf(-1.0)),
            dist.quantile(standard_normal_cdf(1.0)),
        ];
        let y = SampleBatch::from_scalars(ys.clone()).unwrap();
        let m = nonlinear_match(&y, &dist, MatchOrder::Second).unwrap();
        for (u, v) in m.values().values().iter().zip(&ys) {
            assert!((u - v).abs() <= 1e-9 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn nonlinear_round_trip_moments() {
        let dist = DistributionMap::exponential(0.5);
        let z = draw_standard_batch(RngStream::new(13, 0), 500, 1).unwrap();
        let ys: Vec<f64> = z
            .values()
            .iter()
            .map(|&x| dist.quantile(standard_normal_cdf(x).clamp(1e-300, 1.0 - 1e-16)))
            .collect();
        let y = SampleBatch::from_scalars(ys).unwrap();

        let m1 = nonlinear_match(&y, &dist, MatchOrder::First).unwrap();
        let x1: Vec<f64> = m1
            .values()
            .values()
            .iter()
            .map(|&v| crate::sampling::standard_normal_quantile(dist.cdf(v)).unwrap())
            .collect();
        let mean1: f64 = x1.iter().sum::<f64>() / x1.len() as f64;
        assert!(mean1.abs() < 1e-9);

        let m2 = nonlinear_match(&y, &dist, MatchOrder::Second).unwrap();
        let x2: Vec<f64> = m2
            .values()
            .values()
            .iter()
            .map(|&v| crate::sampling::standard_normal_quantile(dist.cdf(v)).unwrap())
            .collect();
        let mean2: f64 = x2.iter().sum::<f64>() / x2.len() as f64;
        let var2: f64 = x2.iter().map(|v| (v - mean2) * (v - mean2)).sum::<f64>() / x2.len() as f64;
        assert!(mean2.abs() < 1e-9);
        assert!((var2 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn nonlinear_rejects_out_of_support() {
        let dist = DistributionMap::uniform(0.0, 1.0);
        let y = scalar_batch(&[0.5, 1.5]);
        assert!(matches!(
            nonlinear_match(&y, &dist, MatchOrder::First),
            Err(Error::SupportViolation { .. })
        ));
    }

    #[test]
    fn nonlinear_degenerate_variance() {
        let dist = DistributionMap::exponential(1.0);
        let y = scalar_batch(&[0.8, 0.8, 0.8]);
        assert!(matches!(
            nonlinear_match(&y, &dist, MatchOrder::Second),
            Err(Error::DegenerateVariance { .. })
        ));
    }
}
