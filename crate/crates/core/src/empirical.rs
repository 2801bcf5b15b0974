//! Finite-X experiments: samples of the normalized error over [X, 2X], their moments,
//! distances to the limiting distribution and the gap to the partial sums of phi.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arithmetic::ArithTables;
use crate::distribution::DensityGrid;
use crate::error::{invalid, Result};
use crate::lattice::{normalized_error, sample_grid, GroupParams};
use crate::numeric::pairwise_sum;
use crate::phi::PhiSeries;

/// Mean, second and third moments and the range of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub mean: f64,
    pub second: f64,
    pub third: f64,
    pub min: f64,
    pub max: f64,
}

impl SampleStats {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let avg = |f: &dyn Fn(f64) -> f64| {
            pairwise_sum(&values.iter().map(|&v| f(v)).collect::<Vec<_>>()) / n
        };
        SampleStats {
            mean: avg(&|v| v),
            second: avg(&|v| v * v),
            third: avg(&|v| v * v * v),
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Normalized errors at x_j = X (1 + (j + 1/2)/n), j < n.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleSeries {
    pub q: u32,
    /// X = p / r
    pub x_lo: (u64, u64),
    pub n: usize,
    pub xs: Vec<f64>,
    pub errors: Vec<f64>,
    pub stats: SampleStats,
}

impl SampleSeries {
    pub fn x(&self) -> f64 {
        self.x_lo.0 as f64 / self.x_lo.1 as f64
    }
}

/// Table limit needed to sample over [X, 2X].
pub fn table_limit(x_lo: (u64, u64)) -> u64 {
    let (p, r) = x_lo;
    (4 * p * p) / (r * r)
}

pub fn sample_errors(
    params: &GroupParams,
    tables: &ArithTables,
    x_lo: (u64, u64),
    n: usize,
) -> Result<SampleSeries> {
    if n == 0 {
        return invalid("sample count must be >= 1");
    }
    let grid = sample_grid(x_lo, n)?;
    let samples = grid
        .par_iter()
        .map(|x| normalized_error(params, tables, x))
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = samples.iter().map(|s| s.x).collect();
    let errors: Vec<f64> = samples.iter().map(|s| s.normalized_error).collect();
    let stats = SampleStats::of(&errors);
    Ok(SampleSeries {
        q: params.q,
        x_lo,
        n,
        xs,
        errors,
        stats,
    })
}

/// Grid average of |value|^lambda for lambda in (0, 2].
pub fn empirical_lambda_moment(series: &SampleSeries, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda <= 2.0) {
        return invalid(format!("lambda must lie in (0, 2], got {lambda}"));
    }
    let v: Vec<f64> = series.errors.iter().map(|e| e.abs().powf(lambda)).collect();
    Ok(pairwise_sum(&v) / series.n as f64)
}

/// Supremum over the samples of |empirical CDF - cdf|.
pub fn ks_distance_with(series: &SampleSeries, cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = series.errors.clone();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// KS distance to a gridded density, using its monotone cumulative trapezoid `cdf`.
pub fn ks_distance(series: &SampleSeries, grid: &DensityGrid, cdf: &[f64]) -> f64 {
    ks_distance_with(series, |x| grid.cdf_at(cdf, x))
}

/// CDF of the centred Gaussian with the given variance.
pub fn gaussian_cdf(variance: f64) -> impl Fn(f64) -> f64 {
    let s = (2.0 * variance).sqrt();
    move |x| 0.5 * (1.0 + libm::erf(x / s))
}

/// Mean of |E/x^{2q-1} - sum_{m <= M} phi_{q,m}(sqrt(m) x^2)|^2 over the samples, for each M
/// in increasing order of `ms`, with phi truncated at d <= D, k <= K.
pub fn theorem4_gaps(series: &SampleSeries, ms: &[u64], d: u32, k: u32) -> Result<Vec<f64>> {
    if ms.windows(2).any(|w| w[1] < w[0]) {
        return invalid("M values must be nondecreasing");
    }
    let mut partial = vec![0.0; series.n];
    let mut done = 0u64;
    let mut out = Vec::with_capacity(ms.len());
    for &big_m in ms {
        for m in done + 1..=big_m {
            let s = PhiSeries::raw(series.q, m, d, k)?;
            if s.is_zero() {
                continue;
            }
            let g = (m as f64).sqrt();
            let vals: Vec<f64> = series.xs.par_iter().map(|&x| s.eval(g * x * x)).collect();
            for (p, v) in partial.iter_mut().zip(vals) {
                *p += v;
            }
        }
        done = done.max(big_m);
        let sq: Vec<f64> = series
            .errors
            .iter()
            .zip(&partial)
            .map(|(e, p)| (e - p) * (e - p))
            .collect();
        out.push(pairwise_sum(&sq) / series.n as f64);
    }
    Ok(out)
}

pub fn theorem4_l2_gap(series: &SampleSeries, big_m: u64, d: u32, k: u32) -> Result<f64> {
    Ok(theorem4_gaps(series, &[big_m], d, k)?[0])
}

/// Equal-width histogram over [min, max].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub width: f64,
    pub counts: Vec<u64>,
    pub rule: String,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - f) + sorted[i + 1] * f
    } else {
        sorted[i]
    }
}

/// Histogram with `bins` bins, or Freedman-Diaconis width 2 IQR n^{-1/3} when absent.
pub fn histogram(values: &[f64], bins: Option<usize>) -> Result<Histogram> {
    if values.is_empty() {
        return invalid("histogram of an empty sample");
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let (lo, hi) = (v[0], v[v.len() - 1]);
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let (nb, rule) = match bins {
        Some(0) => return invalid("bin count must be >= 1"),
        Some(b) => (b, format!("fixed:{b}")),
        None => {
            let iqr = quantile(&v, 0.75) - quantile(&v, 0.25);
            let w = 2.0 * iqr / (v.len() as f64).cbrt();
            let nb = if w > 0.0 {
                ((span / w).ceil() as usize).clamp(1, 10_000)
            } else {
                1
            };
            (nb, "freedman-diaconis".to_string())
        }
    };
    let width = span / nb as f64;
    let mut counts = vec![0u64; nb];
    for &x in &v {
        let b = (((x - lo) / width) as usize).min(nb - 1);
        counts[b] += 1;
    }
    Ok(Histogram {
        lo,
        width,
        counts,
        rule,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arithmetic::build_r2q_prefix;

    fn small() -> SampleSeries {
        let p = GroupParams::new(3).unwrap();
        let t = build_r2q_prefix(3, table_limit((20, 1))).unwrap();
        sample_errors(&p, &t, (20, 1), 200).unwrap()
    }

    #[test]
    fn series_and_stats() {
        let s = small();
        assert_eq!(s.errors.len(), 200);
        assert!(s.errors.iter().all(|e| e.is_finite()));
        assert_eq!(SampleStats::of(&s.errors), s.stats);
        assert!(s.xs[0] > 20.0 && s.xs[199] < 40.0);
        let l2 = empirical_lambda_moment(&s, 2.0).unwrap();
        assert!((l2 - s.stats.second).abs() <= 1e-12 * l2);
        assert!(empirical_lambda_moment(&s, 1.0).unwrap() >= s.stats.mean.abs());
        assert!(empirical_lambda_moment(&s, 0.0).is_err());
        assert!(empirical_lambda_moment(&s, 2.5).is_err());
    }

    #[test]
    fn gap_at_zero_is_second_moment() {
        let s = small();
        let g = theorem4_gaps(&s, &[0, 1, 5], 8, 8).unwrap();
        assert!((g[0] - s.stats.second).abs() <= 1e-12 * g[0]);
        assert!(g[1] < g[0]);
        assert!(theorem4_gaps(&s, &[5, 1], 8, 8).is_err());
    }

    #[test]
    fn ks_and_histogram() {
        let s = small();
        let d = ks_distance_with(&s, gaussian_cdf(s.stats.second));
        assert!((0.0..=1.0).contains(&d));
        assert!(ks_distance_with(&s, |_| 0.0) > 0.99);
        let h = histogram(&s.errors, None).unwrap();
        assert_eq!(h.counts.iter().sum::<u64>(), 200);
        assert_eq!(h.rule, "freedman-diaconis");
        let h = histogram(&[1.0, 2.0, 3.0, 4.0], Some(2)).unwrap();
        assert_eq!(h.counts, vec![2, 2]);
    }

    #[test]
    fn gaussian_cdf_values() {
        let f = gaussian_cdf(4.0);
        assert!((f(0.0) - 0.5).abs() < 1e-15);
        assert!((f(2.0) - 0.841_344_746_068_542_9).abs() < 1e-12);
    }
}
