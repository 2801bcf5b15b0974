//! Limiting moments Q_q(m, l) of the components phi_{q,m}, the moments of the
//! limiting density built from them, and the variance series.

use std::collections::HashMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::arithmetic::{
    chi4, dirichlet_tail_upper, gcd, isqrt, mobius, r2, SquarefreeR2, WeightedCounts,
};
use crate::error::{invalid, Error, Result};
use crate::numeric::{factorial, pairwise_sum, zeta, Neumaier};
use crate::phi::{majorant_constants, resummed_bounds, resummed_prefactor, PhiSeries};

/// Largest quadrature grid for ergodic averages.
pub const MAX_GRID: usize = 1 << 24;
/// Stopping rule for grid refinement.
pub const GRID_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Analytic,
    Closed2,
    Ergodic,
    Empirical,
    Series,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::Analytic => "analytic",
            Method::Closed2 => "closed2",
            Method::Ergodic => "ergodic",
            Method::Empirical => "empirical",
            Method::Series => "series",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(Method::Analytic),
            "closed2" => Ok(Method::Closed2),
            "ergodic" => Ok(Method::Ergodic),
            "empirical" => Ok(Method::Empirical),
            "series" => Ok(Method::Series),
            _ => invalid(format!("unknown method '{s}'")),
        }
    }
}

/// Where a moment computation was cut off. Zero means not applicable.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MomentTruncation {
    pub d: u32,
    pub k: u32,
    /// number of factors in the frequency constraint
    pub depth: u32,
    pub m_max: u64,
    /// quadrature points, or series length for `Series`
    pub grid: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentValue {
    pub value: f64,
    pub method: Method,
    pub truncation: MomentTruncation,
    pub error_estimate: f64,
}

impl MomentValue {
    fn exact_zero(method: Method, truncation: MomentTruncation) -> Self {
        MomentValue {
            value: 0.0,
            method,
            truncation,
            error_estimate: 0.0,
        }
    }

    /// |a - b| <= err_a + err_b.
    pub fn agrees_with(&self, other: &MomentValue) -> bool {
        (self.value - other.value).abs() <= self.error_estimate + other.error_estimate
    }
}

fn check(q: u32, m: u64, l: u32) -> Result<()> {
    if q < 3 {
        return invalid(format!("q must be >= 3, got {q}"));
    }
    if m == 0 {
        return invalid("m must be >= 1");
    }
    if l == 0 {
        return invalid("moment order must be >= 1");
    }
    Ok(())
}

/// phi_{q,m} vanishes identically unless m is square-free with r_2(m) > 0.
pub fn component_vanishes(m: u64) -> bool {
    mobius(m) == 0 || r2(m) == 0
}

fn gcd_i128(mut a: i128, mut b: i128) -> i128 {
    a = a.abs();
    b = b.abs();
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[derive(Clone, Copy)]
struct Frac {
    num: i128,
    den: i128,
}

impl Frac {
    fn add(self, e: i128, num: i64, den: u64) -> Frac {
        let (n2, d2) = (num as i128, den as i128);
        let n = self.num * d2 + e * n2 * self.den;
        let d = self.den * d2;
        if n == 0 {
            return Frac { num: 0, den: 1 };
        }
        let g = gcd_i128(n, d);
        Frac {
            num: n / g,
            den: d / g,
        }
    }
}

/// cos(3 pi s / 4), exactly on the eight residues.
fn phase_weight(s: i32) -> f64 {
    const H: f64 = std::f64::consts::FRAC_1_SQRT_2;
    [1.0, -H, 0.0, H, -1.0, H, 0.0, -H][s.rem_euclid(8) as usize]
}

/// Largest half-tuple table built by `power_mean`.
pub const HALF_TABLE_BUDGET: f64 = 6e6;

type HalfTable = HashMap<(i128, i128), [f64; 8]>;

/// Sums over r-tuples of (sign, term) of the product of amplitudes, keyed by the exact
/// frequency sum and the sign sum mod 8.
fn half_table(series: &PhiSeries, r: u32) -> HalfTable {
    let mut table: HalfTable = HashMap::new();
    let mut unit = [0.0; 8];
    unit[0] = 1.0;
    table.insert((0, 1), unit);
    for _ in 0..r {
        let mut keys: Vec<(i128, i128)> = table.keys().copied().collect();
        keys.sort_unstable();
        let mut next: HalfTable = HashMap::with_capacity(table.len() * 2 * series.terms.len());
        for key in keys {
            let arr = table[&key];
            let sum = Frac {
                num: key.0,
                den: key.1,
            };
            for t in &series.terms {
                for e in [1i128, -1] {
                    let f = sum.add(e, t.num, t.den);
                    let slot = next.entry((f.num, f.den)).or_insert([0.0; 8]);
                    for (s, v) in arr.iter().enumerate() {
                        if *v != 0.0 {
                            slot[(s as i128 + e).rem_euclid(8) as usize] += v * t.amp;
                        }
                    }
                }
            }
        }
        table = next;
    }
    table
}

/// Largest number of streamed tuples in `power_mean`.
pub const TUPLE_BUDGET: f64 = 4e9;

struct Stream<'a> {
    series: &'a PhiSeries,
    table: &'a HalfTable,
    depth: u32,
}

impl Stream<'_> {
    fn walk(&self, level: u32, sum: Frac, s: i32, prod: f64, acc: &mut Neumaier) {
        if level == self.depth {
            if let Some(other) = self.table.get(&(-sum.num, sum.den)) {
                for (s2, y) in other.iter().enumerate() {
                    if *y != 0.0 {
                        acc.add(prod * y * phase_weight(s + s2 as i32));
                    }
                }
            }
            return;
        }
        for t in &self.series.terms {
            for e in [1i128, -1] {
                self.walk(
                    level + 1,
                    sum.add(e, t.num, t.den),
                    s + e as i32,
                    prod * t.amp,
                    acc,
                );
            }
        }
    }
}

/// Exact mean of f(t)^l for f = sum c sin(2 pi nu t - pi/4) with distinct frequencies nu.
///
/// Writing sin(x - pi/4) = cos(x - 3 pi/4), the mean is 2^{-l} times the sum over sign vectors e
/// and frequency tuples with sum e_i nu_i = 0 of cos(3 pi (sum e_i) / 4) prod c_i. The tuples are
/// split in two parts matched on their exact rational sums: one part tabulated, the other
/// streamed with its first sign fixed (flipping every sign leaves a term unchanged).
pub fn power_mean(series: &PhiSeries, l: u32) -> Result<f64> {
    let n = series.terms.len();
    if l == 0 {
        return Ok(1.0);
    }
    if n == 0 || l == 1 {
        return Ok(0.0);
    }
    let width = 2.0 * n as f64;
    let mut b = l / 2;
    while b > 1 && width.powi(b as i32) > HALF_TABLE_BUDGET {
        b -= 1;
    }
    let a = l - b;
    let streamed = width.powi(a as i32) / 2.0;
    if width.powi(b as i32) > HALF_TABLE_BUDGET || streamed > TUPLE_BUDGET {
        return Err(Error::Budget(format!(
            "{n} frequencies at order {l} need {streamed:.3e} tuples"
        )));
    }
    let table = half_table(series, b);
    let stream = Stream {
        series,
        table: &table,
        depth: a,
    };
    let parts: Vec<f64> = series
        .terms
        .par_iter()
        .map(|t| {
            let mut acc = Neumaier::default();
            stream.walk(
                1,
                Frac {
                    num: t.num as i128,
                    den: t.den as i128,
                },
                1,
                t.amp,
                &mut acc,
            );
            acc.value()
        })
        .collect();
    Ok(2.0 * 0.5f64.powi(l as i32) * pairwise_sum(&parts))
}

/// Error estimate from values at boxes (D, K), (2D, 2K), (4D, 4K), extrapolating the shell
/// differences geometrically.
pub fn shell_estimate(v1: f64, v2: f64, v3: f64) -> f64 {
    let d1 = (v2 - v1).abs();
    let d2 = (v3 - v2).abs();
    let rho = if d1 > 0.0 { (d2 / d1).min(0.9) } else { 0.9 };
    d1 + d2 / (1.0 - rho)
}

/// Q_q(m, l) by enumeration over the resummed coefficients with d <= D, k <= K.
///
/// For l = 2 the error is the majorant bound on the dropped squares; for l >= 3 it is the
/// extrapolated change under two doublings of the box.
pub fn q_analytic(q: u32, m: u64, l: u32, d: u32, k: u32) -> Result<MomentValue> {
    check(q, m, l)?;
    let trunc = MomentTruncation {
        d,
        k,
        depth: l,
        m_max: 0,
        grid: 0,
    };
    if l == 1 || component_vanishes(m) {
        return Ok(MomentValue::exact_zero(Method::Analytic, trunc));
    }
    let series = PhiSeries::resummed(q, m, d, k)?;
    let value = power_mean(&series, l)?;
    let error_estimate = if l == 2 {
        resummed_bounds(&series).l2_tail_sq
    } else {
        let v2 = power_mean(&PhiSeries::resummed(q, m, 2 * d, 2 * k)?, l)?;
        let v3 = power_mean(&PhiSeries::resummed(q, m, 4 * d, 4 * k)?, l)?;
        shell_estimate(value, v2, v3)
    };
    Ok(MomentValue {
        value,
        method: Method::Analytic,
        truncation: trunc,
        error_estimate,
    })
}

/// Q_q(m, 2) from the closed double series over d <= D, k <= K, with the majorant tail as error.
pub fn q2_closed(q: u32, m: u64, d: u32, k: u32) -> Result<MomentValue> {
    check(q, m, 2)?;
    let trunc = MomentTruncation {
        d,
        k,
        depth: 2,
        m_max: 0,
        grid: 0,
    };
    if component_vanishes(m) {
        return Ok(MomentValue::exact_zero(Method::Closed2, trunc));
    }
    let pre = resummed_prefactor(q, m);
    let four_q = 4f64.powi(q as i32);
    let s = 2.0 * q as f64 - 3.0;
    let mut terms = Vec::new();
    for kk in 1..=k as u64 {
        let n = m * kk * kk;
        let counts = WeightedCounts::new(n, q, d as u64);
        let k3 = (kk as f64).powi(3);
        for dd in 1..=d as u64 {
            let ds = (dd as f64).powf(s);
            if gcd(dd, 2 * n) == 1 {
                terms.push(counts.plain[dd as usize].powi(2) / (ds * k3));
            }
            if dd % 4 == 0 && gcd(dd, n) == 1 {
                let r = if q.is_multiple_of(2) {
                    counts.plain[dd as usize]
                } else {
                    counts.twisted[dd as usize]
                };
                terms.push(four_q * r * r / (ds * k3));
            }
        }
    }
    let value = 0.5 * pre * pre * pairwise_sum(&terms);
    let error_estimate = resummed_bounds(&PhiSeries::resummed(q, m, d, k)?).l2_tail_sq;
    Ok(MomentValue {
        value,
        method: Method::Closed2,
        truncation: trunc,
        error_estimate,
    })
}

fn next_pow2(n: u64) -> usize {
    n.next_power_of_two().max(64) as usize
}

fn grid_power_mean(
    series: &PhiSeries,
    n: usize,
    l: u32,
    planner: &mut FftPlanner<f64>,
) -> Result<f64> {
    let fft = planner.plan_fft_inverse(n);
    let g = series.grid_values_with(n, &fft)?;
    let v: Vec<f64> = g.iter().map(|x| x.powi(l as i32)).collect();
    Ok(pairwise_sum(&v) / n as f64)
}

/// Mean of phi(t; D)^l over one exact period by the trapezoid rule, the grid doubled
/// until successive estimates differ by less than `GRID_TOL`.
///
/// The error adds the last grid change to the extrapolated change of the exact mean under
/// two doublings of (D, K).
pub fn q_ergodic(q: u32, m: u64, l: u32, d: u32, k: u32) -> Result<MomentValue> {
    check(q, m, l)?;
    let mut trunc = MomentTruncation {
        d,
        k,
        depth: l,
        m_max: 0,
        grid: 0,
    };
    if component_vanishes(m) {
        return Ok(MomentValue::exact_zero(Method::Ergodic, trunc));
    }
    let series = PhiSeries::raw(q, m, d, k)?;
    let top = series.max_harmonic()?;
    let mut n = next_pow2(2 * top + 1);
    let mut planner = FftPlanner::new();
    let mut prev = grid_power_mean(&series, n, l, &mut planner)?;
    let change = loop {
        n *= 2;
        if n > MAX_GRID {
            return Err(Error::Budget(format!(
                "ergodic grid exceeds {MAX_GRID} points"
            )));
        }
        let cur = grid_power_mean(&series, n, l, &mut planner)?;
        let diff = (cur - prev).abs();
        prev = cur;
        if diff < GRID_TOL {
            break diff;
        }
    };
    trunc.grid = n as u64;
    let trunc_err = if l == 1 {
        0.0
    } else {
        let v1 = power_mean(&series, l)?;
        let v2 = power_mean(&PhiSeries::raw(q, m, 2 * d, 2 * k)?, l)?;
        let v3 = power_mean(&PhiSeries::raw(q, m, 4 * d, 4 * k)?, l)?;
        shell_estimate(v1, v2, v3)
    };
    Ok(MomentValue {
        value: prev,
        method: Method::Ergodic,
        truncation: trunc,
        error_estimate: change + trunc_err,
    })
}

/// Q(m, l) for m <= M and l <= j, with Q(m, 0) = 1 and Q(m, 1) = 0; rows are m - 1.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentTable {
    pub q: u32,
    pub j_max: u32,
    pub d: u32,
    pub k: u32,
    pub values: Vec<Vec<f64>>,
    pub errors: Vec<Vec<f64>>,
}

impl MomentTable {
    pub fn new(q: u32, j_max: u32, m_max: u64, d: u32, k: u32) -> Result<Self> {
        check(q, 1, j_max)?;
        let rows: Vec<Result<(Vec<f64>, Vec<f64>)>> = (1..=m_max)
            .into_par_iter()
            .map(|m| {
                let mut v = vec![0.0; j_max as usize + 1];
                let mut e = vec![0.0; j_max as usize + 1];
                v[0] = 1.0;
                for l in 2..=j_max {
                    let x = q_analytic(q, m, l, d, k)?;
                    v[l as usize] = x.value;
                    e[l as usize] = x.error_estimate;
                }
                Ok((v, e))
            })
            .collect();
        let mut values = Vec::new();
        let mut errors = Vec::new();
        for r in rows {
            let (v, e) = r?;
            values.push(v);
            errors.push(e);
        }
        Ok(MomentTable {
            q,
            j_max,
            d,
            k,
            values,
            errors,
        })
    }

    pub fn m_max(&self) -> u64 {
        self.values.len() as u64
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

/// Moments 0..=j of a sum of independent variables with the given moment rows.
pub fn independent_sum_moments(rows: &[Vec<f64>], j: u32) -> Vec<f64> {
    let j = j as usize;
    let mut mu = vec![0.0; j + 1];
    mu[0] = 1.0;
    for row in rows {
        let mut next = vec![0.0; j + 1];
        for (n, slot) in next.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in 0..=n.min(row.len() - 1) {
                acc += binomial(n as u32, i as u32) * mu[n - i] * row[i];
            }
            *slot = acc;
        }
        mu = next;
    }
    mu
}

/// The j-th moment by the composition formula: sums over compositions l_1 + ... + l_s = j and
/// increasing m_1 < ... < m_s. With `prune`, compositions with a part equal to 1 are skipped.
pub fn composition_moment(table: &MomentTable, j: u32, prune: bool) -> f64 {
    fn go(table: &MomentTable, rest: u32, start: usize, coeff: f64, prune: bool, acc: &mut f64) {
        if rest == 0 {
            *acc += coeff;
            return;
        }
        for part in 1..=rest {
            if prune && part == 1 {
                continue;
            }
            for mi in start..table.values.len() {
                let qv = table.values[mi][part as usize];
                if qv == 0.0 && prune {
                    continue;
                }
                go(
                    table,
                    rest - part,
                    mi + 1,
                    coeff * qv / factorial(part),
                    prune,
                    acc,
                );
            }
        }
    }
    let mut acc = 0.0;
    go(table, j, 0, factorial(j), prune, &mut acc);
    acc
}

/// sum_{m > M} Q(m, 2) estimated from the shape B M^{-1/2} log 2M, with B fitted to the
/// partial sums over (M/2, M].
pub fn variance_tail_estimate(table: &MomentTable) -> f64 {
    let m = table.m_max();
    if m < 4 {
        return f64::INFINITY;
    }
    let half = m / 2;
    let between: f64 = table.values[half as usize..]
        .iter()
        .map(|r| r.get(2).copied().unwrap_or(0.0))
        .sum();
    let shape = |x: f64| x.powf(-0.5) * (2.0 * x).ln();
    let b = between / (shape(half as f64 + 1.0) - shape(m as f64 + 1.0));
    b * shape(m as f64 + 1.0)
}

/// sum_{m > M} |Q(m, 3)| <= sum sup|phi_m| Q(m, 2), each factor replaced by its majorant.
pub fn third_moment_tail_bound(q: u32, m_max: u64) -> f64 {
    let c = PI.powi(q as i32 - 1) / (2.0 * factorial(q - 1));
    let (s1, s2) = majorant_constants(q);
    0.5 * c.powi(3) * s1 * s2 * cubic_shape_tail(m_max)
}

/// The j-th moment of the limiting density from Q(m, l), m <= M.
///
/// The error adds the propagated errors of the table entries to an estimate of the
/// contribution of m > M (rigorous for j <= 3).
pub fn density_moment(q: u32, j: u32, m_max: u64, d: u32, k: u32) -> Result<MomentValue> {
    check(q, 1, j)?;
    if m_max == 0 {
        return invalid("M_max must be >= 1");
    }
    let table = MomentTable::new(q, j.max(2), m_max, d, k)?;
    density_moment_from(&table, j)
}

pub fn density_moment_from(table: &MomentTable, j: u32) -> Result<MomentValue> {
    if j > table.j_max {
        return invalid(format!(
            "table holds moments up to {}, asked for {j}",
            table.j_max
        ));
    }
    let trunc = MomentTruncation {
        d: table.d,
        k: table.k,
        depth: j,
        m_max: table.m_max(),
        grid: 0,
    };
    let mu = independent_sum_moments(&table.values, j);
    let value = mu[j as usize];
    let abs_rows: Vec<Vec<f64>> = table
        .values
        .iter()
        .map(|r| r.iter().map(|x| x.abs()).collect())
        .collect();
    let pert_rows: Vec<Vec<f64>> = table
        .values
        .iter()
        .zip(&table.errors)
        .map(|(r, e)| r.iter().zip(e).map(|(x, y)| x.abs() + y).collect())
        .collect();
    let propagated = independent_sum_moments(&pert_rows, j)[j as usize]
        - independent_sum_moments(&abs_rows, j)[j as usize];
    // moments of the dropped part Y, independent of the kept part X, both of mean zero
    let v_tail = variance_tail_estimate(table);
    let mut y = vec![0.0; j as usize + 1];
    y[0] = 1.0;
    for (i, yi) in y.iter_mut().enumerate().skip(2) {
        *yi = if i == 2 {
            v_tail
        } else if i == 3 {
            third_moment_tail_bound(table.q, table.m_max())
        } else if i % 2 == 0 {
            // Gaussian surrogate for higher moments of the tail
            (1..i).step_by(2).map(|t| t as f64).product::<f64>() * v_tail.powi(i as i32 / 2)
        } else {
            0.0
        };
    }
    let mu_abs = independent_sum_moments(&pert_rows, j);
    let tail: f64 = (2..=j as usize)
        .map(|i| binomial(j, i as u32) * mu_abs[j as usize - i] * y[i])
        .sum();
    Ok(MomentValue {
        value,
        method: Method::Analytic,
        truncation: trunc,
        error_estimate: propagated + tail,
    })
}

/// sum_{m > M} mu^2(m) r_2(m)^3 m^{-9/4}, bounded above.
pub fn cubic_shape_tail(m_max: u64) -> f64 {
    64.0 * dirichlet_tail_upper(&SquarefreeR2 { power: 3 }, 2.25, m_max)
}

/// Result of summing Q_q(m, 3) over m <= M.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ThirdMomentSum {
    pub moment: MomentValue,
    /// largest |Q(m, 3)| / (r_2(m)^3 m^{-9/4}) seen for m <= M
    pub shape_constant: f64,
    /// shape_constant times `cubic_shape_tail(M)`: the measured estimate of the m > M part
    pub tail_estimate: f64,
    /// the majorant bound `third_moment_tail_bound(q, M)` on the m > M part
    pub tail_bound: f64,
}

/// sum_{m <= M} Q_q(m, 3). The error adds the per-term errors to the measured tail estimate;
/// the majorant tail bound is reported alongside.
pub fn third_moment_sum(q: u32, m_max: u64, d: u32, k: u32) -> Result<ThirdMomentSum> {
    check(q, 1, 3)?;
    let vals: Vec<Result<MomentValue>> = (1..=m_max)
        .into_par_iter()
        .map(|m| q_analytic(q, m, 3, d, k))
        .collect();
    let mut v = Vec::new();
    let mut e = Vec::new();
    let mut shape_constant: f64 = 0.0;
    for (i, x) in vals.into_iter().enumerate() {
        let x = x?;
        let m = i as u64 + 1;
        if !component_vanishes(m) {
            let shape = (r2(m) as f64).powi(3) * (m as f64).powf(-2.25);
            shape_constant = shape_constant.max(x.value.abs() / shape);
        }
        v.push(x.value);
        e.push(x.error_estimate);
    }
    let tail_estimate = shape_constant * cubic_shape_tail(m_max);
    let moment = MomentValue {
        value: pairwise_sum(&v),
        method: Method::Analytic,
        truncation: MomentTruncation {
            d,
            k,
            depth: 3,
            m_max,
            grid: 0,
        },
        error_estimate: pairwise_sum(&e) + tail_estimate,
    };
    Ok(ThirdMomentSum {
        moment,
        shape_constant,
        tail_estimate,
        tail_bound: third_moment_tail_bound(q, m_max),
    })
}

/// Terms of the variance series indexed by n = m k^2 (m square-free):
/// t(n) = (1/2) C^2 n^{-3/2} { sum_{(d, 2n) = 1} r_2(n, d)^2 d^{3-2q} + 4^q sum_{4 | d, (d, n) = 1} r_2'(n, d)^2 d^{3-2q} },
/// with r_2' the twisted count for odd q. Index 0 is zero.
pub fn variance_terms(q: u32, n_max: u64) -> Result<Vec<f64>> {
    if q < 3 {
        return invalid(format!("q must be >= 3, got {q}"));
    }
    if n_max > 1 << 27 {
        return Err(Error::Budget(format!(
            "variance series length {n_max} is too large"
        )));
    }
    let n_max = n_max as usize;
    let root = isqrt(n_max as u64) as usize;
    // representations with a > 0, b >= 0, grouped by n
    let mut count = vec![0u32; n_max + 2];
    for a in 1..=root {
        let a2 = a * a;
        let bmax = isqrt((n_max - a2) as u64) as usize;
        for b in 0..=bmax {
            count[a2 + b * b] += 1;
        }
    }
    let mut start = vec![0usize; n_max + 2];
    for n in 1..=n_max + 1 {
        start[n] = start[n - 1] + count[n - 1] as usize;
    }
    let mut fill = start.clone();
    let mut reps = vec![(0u32, 0u32); start[n_max + 1]];
    for a in 1..=root {
        let a2 = a * a;
        let bmax = isqrt((n_max - a2) as u64) as usize;
        for b in 0..=bmax {
            let n = a2 + b * b;
            reps[fill[n]] = (a as u32, b as u32);
            fill[n] += 1;
        }
    }
    drop(fill);
    let spf = smallest_prime_factors(root.max(2));
    let s = 2.0 * q as f64 - 3.0;
    let z_odd = zeta(s) * (1.0 - 2f64.powf(-s));
    let z_four = zeta(s) * 4f64.powf(-s);
    let four_q = 4f64.powi(q as i32);
    let c = PI.powi(q as i32 - 1) / (2.0 * factorial(q - 1));
    let half_c2 = 0.5 * c * c;
    let odd = q % 2 == 1;
    let out: Vec<f64> = (0..n_max + 1)
        .into_par_iter()
        .with_min_len(4096)
        .map(|n| {
            if n == 0 {
                return 0.0;
            }
            let list = &reps[start[n]..start[n + 1]];
            if list.is_empty() {
                return 0.0;
            }
            let nf = n as f64;
            let mut axis = 0.0;
            let mut axis_tw = 0.0;
            // (weight, twisted weight, |b|) for each representation with b != 0, signs folded in
            let mut offaxis: Vec<(f64, f64, u32)> = Vec::new();
            for &(a, b) in list {
                let w = (a as f64 / nf.sqrt()).powi(q as i32 - 1);
                let wt = chi4(a as i64) as f64 * w;
                if b == 0 {
                    axis += 2.0 * w;
                    axis_tw += 2.0 * wt;
                } else {
                    offaxis.push((4.0 * w, 4.0 * wt, b));
                }
            }
            let mut cands: Vec<u64> = Vec::new();
            for &(_, _, b) in &offaxis {
                divisors_into(b as usize, &spf, &mut cands);
            }
            cands.sort_unstable();
            cands.dedup();
            let mut acc = Neumaier::default();
            let mut seen_odd = 0.0;
            let mut seen_four = 0.0;
            for &d in &cands {
                if gcd(d, n as u64) != 1 {
                    continue;
                }
                let ds = (d as f64).powf(-s);
                let (mut p, mut t) = (axis, axis_tw);
                for &(w, wt, b) in &offaxis {
                    if (b as u64).is_multiple_of(d) {
                        p += w;
                        t += wt;
                    }
                }
                if d % 2 == 1 {
                    acc.add(p * p * ds);
                    seen_odd += ds;
                } else if d % 4 == 0 {
                    let r = if odd { t } else { p };
                    acc.add(four_q * r * r * ds);
                    seen_four += ds;
                }
            }
            if axis != 0.0 {
                // every remaining admissible d sees only the axis representations
                let mut coprime = 1.0;
                let mut m = n as u64;
                let mut prime_factors = Vec::new();
                let mut p = 2u64;
                while p * p <= m {
                    if m.is_multiple_of(p) {
                        prime_factors.push(p);
                        while m.is_multiple_of(p) {
                            m /= p;
                        }
                    }
                    p += 1;
                }
                if m > 1 {
                    prime_factors.push(m);
                }
                for &p in &prime_factors {
                    if p != 2 {
                        coprime *= 1.0 - (p as f64).powf(-s);
                    }
                }
                let all_odd = z_odd * coprime;
                acc.add(axis * axis * (all_odd - seen_odd));
                if n % 2 == 1 {
                    let all_four = z_four * coprime;
                    let r = if odd { axis_tw } else { axis };
                    acc.add(four_q * r * r * (all_four - seen_four));
                }
            }
            half_c2 * acc.value() / (nf * nf.sqrt())
        })
        .collect();
    Ok(out)
}

fn smallest_prime_factors(n: usize) -> Vec<u32> {
    let mut spf = vec![0u32; n + 1];
    for i in 2..=n {
        if spf[i] == 0 {
            let mut j = i;
            while j <= n {
                if spf[j] == 0 {
                    spf[j] = i as u32;
                }
                j += i;
            }
        }
    }
    spf
}

fn divisors_into(mut b: usize, spf: &[u32], out: &mut Vec<u64>) {
    let mut divs = vec![1u64];
    while b > 1 {
        let p = spf[b] as usize;
        let mut e = 0;
        while b.is_multiple_of(p) {
            b /= p;
            e += 1;
        }
        let len = divs.len();
        let mut pw = 1u64;
        for _ in 0..e {
            pw *= p as u64;
            for i in 0..len {
                divs.push(divs[i] * pw);
            }
        }
    }
    out.extend(divs);
}

/// Fitted tail of the variance series beyond N, modelling sum_{n <= x} n^{3/2} t(n)
/// as x (alpha log x + beta) by least squares over x in [lo, N].
fn fitted_tail(terms: &[f64], lo: usize) -> f64 {
    let n = terms.len() - 1;
    let mut cum = 0.0;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let samples = 64;
    let mut next = 0;
    let points: Vec<usize> = (0..samples)
        .map(|i| lo + (n - lo) * (i + 1) / samples)
        .collect();
    for (i, t) in terms.iter().enumerate() {
        let x = i as f64;
        cum += t * x * x.sqrt();
        if next < points.len() && i == points[next] {
            xs.push(x);
            ys.push(cum / x);
            next += 1;
        }
    }
    // y = alpha log x + beta
    let k = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let sx: f64 = lx.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = lx.iter().map(|x| x * x).sum();
    let sxy: f64 = lx.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let alpha = (k * sxy - sx * sy) / (k * sxx - sx * sx);
    let beta = (sy - alpha * sx) / k;
    // density alpha log x + alpha + beta integrated against x^{-3/2} over (N, inf)
    let nf = n as f64;
    let r = nf.powf(-0.5);
    alpha * (2.0 * r * nf.ln() + 4.0 * r) + (alpha + beta) * 2.0 * r
}

/// sum_m Q_q(m, 2), the limiting variance: the series in n = m k^2 summed to N with a fitted tail.
/// The error is the spread of the tail fitted over two windows.
pub fn variance_series(q: u32, n_max: u64) -> Result<MomentValue> {
    if n_max < 1024 {
        return invalid("variance series needs N >= 1024");
    }
    let terms = variance_terms(q, n_max)?;
    let head = pairwise_sum(&terms);
    let n = n_max as usize;
    let t1 = fitted_tail(&terms, n / 8);
    let t2 = fitted_tail(&terms, n / 2);
    Ok(MomentValue {
        value: head + t1,
        method: Method::Series,
        truncation: MomentTruncation {
            d: 0,
            k: 0,
            depth: 2,
            m_max: 0,
            grid: n_max,
        },
        error_estimate: (t1 - t2).abs() + 1e-3 * t1.abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arithmetic::{r2_weighted, r2_weighted_chi};

    #[test]
    fn vanishing_cases() {
        for method in 0..3 {
            for m in [3u64, 4, 7, 9, 12] {
                let v = match method {
                    0 => q_analytic(3, m, 3, 8, 8).unwrap(),
                    1 => q2_closed(4, m, 8, 8).unwrap(),
                    _ => q_ergodic(3, m, 2, 4, 4).unwrap(),
                };
                assert_eq!(v.value, 0.0);
                assert_eq!(v.error_estimate, 0.0);
            }
        }
        assert_eq!(q_analytic(3, 1, 1, 8, 8).unwrap().value, 0.0);
        assert!(q_analytic(3, 1, 0, 8, 8).is_err());
    }

    #[test]
    fn phase_table() {
        for s in -9..9 {
            let want = (3.0 * PI * s as f64 / 4.0).cos();
            assert!((phase_weight(s) - want).abs() < 1e-14);
        }
    }

    #[test]
    fn power_mean_matches_quadrature() {
        // independent check: exact enumeration against an FFT average of a small series
        for (q, m) in [(3u32, 1u64), (4, 2), (3, 5)] {
            let s = PhiSeries::raw(q, m, 6, 6).unwrap();
            let top = s.max_harmonic().unwrap();
            for l in 1..=4u32 {
                let n = next_pow2(l as u64 * top + 1) * 2;
                let mut planner = FftPlanner::new();
                let quad = grid_power_mean(&s, n, l, &mut planner).unwrap();
                let exact = power_mean(&s, l).unwrap();
                assert!(
                    (quad - exact).abs() < 1e-9 * (1.0 + exact.abs()),
                    "q={q} m={m} l={l} {quad} {exact}"
                );
            }
        }
    }

    #[test]
    fn closed_matches_analytic() {
        for q in [3u32, 4, 5] {
            for m in [1u64, 2, 5, 10, 13] {
                let a = q_analytic(q, m, 2, 24, 24).unwrap();
                let c = q2_closed(q, m, 24, 24).unwrap();
                assert!(
                    (a.value - c.value).abs() < 1e-12 * c.value,
                    "q={q} m={m} {} {}",
                    a.value,
                    c.value
                );
            }
        }
    }

    #[test]
    fn closed_against_direct_sum() {
        // the unresummed double series with explicit coprimality, straight from r_2(n, d; q)
        let (q, m, dm, km) = (3u32, 5u64, 12u64, 6u64);
        let c = PI.powi(2) / 4.0;
        let mut s = 0.0;
        for k in 1..=km {
            let n = m * k * k;
            for d in 1..=dm {
                let w = (d as f64).powi(3) * (k as f64).powi(3);
                if gcd(d, 2 * n) == 1 {
                    s += r2_weighted(n, d, q).powi(2) / w;
                }
                if d % 4 == 0 && gcd(d, n) == 1 {
                    s += 64.0 * r2_weighted_chi(n, d, q).powi(2) / w;
                }
            }
        }
        let want = 0.5 * c * c * s / (m as f64).powf(1.5);
        let got = q2_closed(q, m, dm as u32, km as u32).unwrap().value;
        assert!((got - want).abs() < 1e-12 * want);
    }

    #[test]
    fn ergodic_agrees_with_closed() {
        for q in [3u32, 4] {
            for m in [1u64, 2, 5] {
                let e = q_ergodic(q, m, 2, 8, 8).unwrap();
                let c = q2_closed(q, m, 40, 40).unwrap();
                assert!(e.agrees_with(&c), "q={q} m={m} {e:?} {c:?}");
                let z = q_ergodic(q, m, 1, 8, 8).unwrap();
                assert!(z.value.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn third_moments_negative() {
        for q in [3u32, 4] {
            for m in [1u64, 2, 5, 13] {
                let v = q_analytic(q, m, 3, 8, 8).unwrap();
                assert!(v.value < 0.0, "q={q} m={m} {v:?}");
            }
        }
    }

    #[test]
    fn composition_pruning_and_dp() {
        let t = MomentTable::new(3, 4, 12, 6, 6).unwrap();
        for j in 1..=4 {
            let dp = independent_sum_moments(&t.values, j)[j as usize];
            let full = composition_moment(&t, j, false);
            let pruned = composition_moment(&t, j, true);
            assert!(
                (dp - full).abs() <= 1e-12 * (1.0 + dp.abs()),
                "j={j} {dp} {full}"
            );
            assert_eq!(full, pruned);
        }
        let d2 = density_moment_from(&t, 2).unwrap().value;
        let s2: f64 = t.values.iter().map(|r| r[2]).sum();
        assert!((d2 - s2).abs() < 1e-12 * s2);
        assert_eq!(density_moment_from(&t, 1).unwrap().value, 0.0);
    }

    fn g_direct(q: u32, n: u64, dmax: u64) -> f64 {
        let s = 2 * q as i32 - 3;
        let mut v = 0.0;
        for d in 1..=dmax {
            let ds = (d as f64).powi(s);
            if gcd(d, 2 * n) == 1 {
                v += r2_weighted(n, d, q).powi(2) / ds;
            }
            if d % 4 == 0 && gcd(d, n) == 1 {
                let r = if q % 2 == 1 {
                    r2_weighted_chi(n, d, q)
                } else {
                    r2_weighted(n, d, q)
                };
                v += 4f64.powi(q as i32) * r * r / ds;
            }
        }
        v
    }

    #[test]
    fn variance_terms_match_direct() {
        for q in [3u32, 4] {
            let t = variance_terms(q, 400).unwrap();
            let c = PI.powi(q as i32 - 1) / (2.0 * factorial(q - 1));
            // the oracle stops at d = 3000; what it drops is below 1e-6 of each term
            for n in 1..=400u64 {
                let want = 0.5 * c * c * g_direct(q, n, 3000) / (n as f64).powf(1.5);
                assert!(
                    (t[n as usize] - want).abs() <= 1e-6 * want.max(1e-300),
                    "q={q} n={n} {} {want}",
                    t[n as usize]
                );
            }
        }
    }

    /// Majorant on the d > D part of the closed series, any k.
    fn d_tail_bound(q: u32, m: u64, d: u32) -> f64 {
        use crate::arithmetic::{class_weighted_tail, dirichlet_series_upper, SquareMajorant};
        let pre = resummed_prefactor(q, m) * r2(m) as f64;
        let w2 = [4f64.powi(q as i32), 1.0, 0.0, 1.0];
        0.5 * pre
            * pre
            * class_weighted_tail(w2, 2.0 * q as f64 - 3.0, d as u64)
            * dirichlet_series_upper(&SquareMajorant { power: 2 }, 3.0)
    }

    #[test]
    fn variance_is_sum_of_q2() {
        // sum over m <= 30, k <= 10 of Q(m, 2) equals the n = m k^2 terms of the variance series
        let q = 3;
        let t = variance_terms(q, 3000).unwrap();
        let mut from_terms = 0.0;
        let mut from_q = 0.0;
        let mut err = 0.0;
        for m in 1..=30u64 {
            if component_vanishes(m) {
                continue;
            }
            for k in 1..=10u64 {
                from_terms += t[(m * k * k) as usize];
            }
            let v = q2_closed(q, m, 400, 10).unwrap();
            from_q += v.value;
            err += d_tail_bound(q, m, 400);
        }
        assert!(
            (from_terms - from_q).abs() <= err,
            "{from_terms} {from_q} {err}"
        );
    }
}
