//! Compensated sums, batch means and least-squares fits.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::new();
        iter.into_iter().for_each(|v| s.add(v));
        s
    }
}

pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().collect::<NeumaierSum>().value()
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = compensated_sum(values.iter().copied()) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
    (mean, (ss / ((n - 1) as f64 * n as f64)).sqrt())
}

/// Count, mean and centred second moment, mergeable in a fixed order
/// (Welford updates, Chan et al. merges).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, v: f64) {
        self.n += 1;
        let delta = v - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (v - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let w = other.n as f64 / n as f64;
        self.mean += delta * w;
        self.m2 += other.m2 + delta * delta * self.n as f64 * w;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.mean
        }
    }

    /// Standard error of the mean (0 for fewer than two samples).
    pub fn stderr(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        (self.m2.max(0.0) / ((self.n - 1) as f64 * self.n as f64)).sqrt()
    }
}

/// Streaming non-overlapping batch means for a series of known length.
/// Batch `i` holds samples `[⌊i n/B⌋, ⌊(i+1) n/B⌋)`.
#[derive(Clone, Debug)]
pub struct BatchMeans {
    n_total: u64,
    n_batches: usize,
    seen: u64,
    current: NeumaierSum,
    next_boundary: u64,
    total: NeumaierSum,
    batch_means: Vec<f64>,
}

impl BatchMeans {
    pub fn new(n_total: u64, n_batches: usize) -> Result<Self> {
        if n_batches < 2 {
            return Err(invalid("n_batches", "need at least 2 batches"));
        }
        if n_total < n_batches as u64 {
            return Err(invalid(
                "n_batches",
                format!("{n_batches} batches need at least as many samples, got {n_total}"),
            ));
        }
        Ok(Self {
            n_total,
            n_batches,
            seen: 0,
            current: NeumaierSum::new(),
            next_boundary: n_total / n_batches as u64,
            total: NeumaierSum::new(),
            batch_means: Vec::with_capacity(n_batches),
        })
    }

    fn boundary(&self, i: usize) -> u64 {
        ((i as u128 * self.n_total as u128) / self.n_batches as u128) as u64
    }

    #[inline]
    pub fn push(&mut self, v: f64) {
        self.current.add(v);
        self.total.add(v);
        self.seen += 1;
        if self.seen == self.next_boundary {
            let i = self.batch_means.len();
            let len = self.boundary(i + 1) - self.boundary(i);
            self.batch_means.push(self.current.value() / len as f64);
            self.current = NeumaierSum::new();
            self.next_boundary = self.boundary(i + 2);
        }
    }

    pub fn is_complete(&self) -> bool {
        self.seen == self.n_total
    }

    /// `(mean, stderr)`; the stderr is the standard error of the batch
    /// means.
    pub fn finish(&self) -> (f64, f64) {
        debug_assert!(self.is_complete());
        let mean = self.total.value() / self.seen as f64;
        let (_, se) = mean_stderr(&self.batch_means);
        (mean, se)
    }

    pub fn batch_means(&self) -> &[f64] {
        &self.batch_means
    }
}

/// Combines independent estimates `(mean, stderr)` with equal weights.
pub fn pool_equal(estimates: &[(f64, f64)]) -> (f64, f64) {
    let k = estimates.len() as f64;
    let mean = compensated_sum(estimates.iter().map(|e| e.0)) / k;
    let var = compensated_sum(estimates.iter().map(|e| e.1 * e.1));
    (mean, var.sqrt() / k)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    pub r_squared: f64,
    /// Weighted residual sum of squares divided by the degrees of freedom.
    pub chi2_reduced: f64,
    pub dof: usize,
}

/// Least-squares line `y ≈ a + s x`, optionally weighted. With weights the
/// standard errors are the inverse-variance ones (`w = 1/var`); without,
/// they are scaled by the residual variance.
pub fn linear_fit(x: &[f64], y: &[f64], weights: Option<&[f64]>) -> Result<LinearFit> {
    let n = x.len();
    if n != y.len() || weights.is_some_and(|w| w.len() != n) {
        return Err(invalid("fit", "x, y and weights must have equal lengths"));
    }
    if n < 2 {
        return Err(invalid("fit", "need at least two points"));
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let sw = compensated_sum((0..n).map(w));
    let xm = compensated_sum((0..n).map(|i| w(i) * x[i])) / sw;
    let ym = compensated_sum((0..n).map(|i| w(i) * y[i])) / sw;
    let sxx = compensated_sum((0..n).map(|i| w(i) * (x[i] - xm).powi(2)));
    let sxy = compensated_sum((0..n).map(|i| w(i) * (x[i] - xm) * (y[i] - ym)));
    let syy = compensated_sum((0..n).map(|i| w(i) * (y[i] - ym).powi(2)));
    if sxx <= 0.0 {
        return Err(invalid("fit", "abscissae are all equal"));
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let rss = compensated_sum((0..n).map(|i| w(i) * (y[i] - intercept - slope * x[i]).powi(2)));
    let dof = n - 2;
    let chi2_reduced = if dof > 0 { rss / dof as f64 } else { 0.0 };
    let scale = if weights.is_some() { 1.0 } else { chi2_reduced };
    let slope_se = (scale / sxx).sqrt();
    let intercept_se = (scale * (1.0 / sw + xm * xm / sxx)).sqrt();
    let r_squared = if syy > 0.0 { (1.0 - rss / syy).clamp(0.0, 1.0) } else { 1.0 };
    Ok(LinearFit {
        slope,
        intercept,
        slope_se,
        intercept_se,
        r_squared,
        chi2_reduced,
        dof,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn moments_merge_matches_direct() {
        let v: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1 - 3.0).collect();
        let (mean, se) = mean_stderr(&v);
        let mut whole = Moments::new();
        v.iter().for_each(|&x| whole.push(x));
        let mut merged = Moments::new();
        for chunk in v.chunks(77) {
            let mut m = Moments::new();
            chunk.iter().for_each(|&x| m.push(x));
            merged.merge(&m);
        }
        for m in [whole, merged] {
            assert_eq!(m.count(), 1000);
            assert_relative_eq!(m.mean(), mean, max_relative = 1e-13);
            assert_relative_eq!(m.stderr(), se, max_relative = 1e-12);
        }
        assert!(Moments::new().mean().is_nan());
        assert_eq!(Moments::new().stderr(), 0.0);
    }

    #[test]
    fn neumaier_recovers_cancelled_terms() {
        let v = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(compensated_sum(v), 2.0);
        assert_eq!(v.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn mean_stderr_small_sample() {
        let (m, se) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        // sample variance 5/3, se = sqrt(5/12)
        assert_relative_eq!(se, (5.0f64 / 12.0).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn batch_means_constant_series() {
        let mut b = BatchMeans::new(1000, 32).unwrap();
        (0..1000).for_each(|_| b.push(3.5));
        assert!(b.is_complete());
        assert_eq!(b.batch_means().len(), 32);
        assert_eq!(b.finish(), (3.5, 0.0));
    }

    #[test]
    fn batch_means_rejects_bad_sizes() {
        assert!(BatchMeans::new(10, 1).is_err());
        assert!(BatchMeans::new(5, 8).is_err());
    }

    #[test]
    fn exact_line_fit() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 1.5 - 2.0 * v).collect();
        let f = linear_fit(&x, &y, None).unwrap();
        assert_relative_eq!(f.slope, -2.0, epsilon = 1e-14);
        assert_relative_eq!(f.intercept, 1.5, epsilon = 1e-14);
        assert!(f.slope_se < 1e-12);
        assert_relative_eq!(f.r_squared, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn weighted_fit_standard_errors() {
        // two points with unit variance: slope se = sqrt(2)/|x1 − x0|
        let f = linear_fit(&[0.0, 2.0], &[0.0, 1.0], Some(&[1.0, 1.0])).unwrap();
        assert_relative_eq!(f.slope, 0.5, epsilon = 1e-15);
        assert_relative_eq!(f.slope_se, 2f64.sqrt() / 2.0, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn batch_mean_equals_plain_mean(values in proptest::collection::vec(-1e3f64..1e3, 16..400), nb in 2usize..16) {
            let mut b = BatchMeans::new(values.len() as u64, nb).unwrap();
            values.iter().for_each(|v| b.push(*v));
            prop_assert_eq!(b.batch_means().len(), nb);
            let (m, _) = b.finish();
            let (plain, _) = mean_stderr(&values);
            prop_assert!((m - plain).abs() <= 1e-12 * (1.0 + plain.abs()));
        }
    }
}
