//! The almost periodic components phi_{q,m} of the normalized error: truncated
//! evaluation, exact-period sampling and certified truncation bounds.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::arithmetic::{
    chi4, class_weighted_tail, dirichlet_series_upper, frak_r_from, gcd, lcm_checked, mobius, r2,
    rho_chi, rho_q, xi, PrimePowerFn, SquareMajorant, WeightedCounts,
};
use crate::error::{invalid, Error, Result};
use crate::numeric::{factorial, frac, pairwise_sum};

/// Truncation of the (d, k) double series with a certified bound on what is dropped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiTruncation {
    pub d: u32,
    pub k: u32,
    pub tail_bound: f64,
}

impl PhiTruncation {
    pub fn new(q: u32, m: u64, d: u32, k: u32) -> Result<Self> {
        Ok(PhiTruncation {
            d,
            k,
            tail_bound: tail_bound_for(q, m, d, k)?,
        })
    }
}

/// amp * sin(2 pi (num / den) t - pi/4), with num / den in lowest terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiTerm {
    pub num: i64,
    pub den: u64,
    pub amp: f64,
}

/// A finite sine series in the shape of phi_{q,m}, one term per distinct frequency.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhiSeries {
    pub q: u32,
    pub m: u64,
    pub d_max: u32,
    pub k_max: u32,
    pub terms: Vec<PhiTerm>,
}

/// Prefactor of the raw series: rho_q / 2 pi (q even) or 2^{q-2} rho_chi / pi (q odd), times mu^2(m)/m^{3/4}.
pub fn raw_prefactor(q: u32, m: u64) -> f64 {
    let mu2 = (mobius(m) as f64).powi(2);
    let base = if q.is_multiple_of(2) {
        rho_q(q) / (2.0 * PI)
    } else {
        2f64.powi(q as i32 - 2) * rho_chi(q) / PI
    };
    base * mu2 * (m as f64).powf(-0.75)
}

/// Prefactor of the resummed series: pi^{q-1} / (2 Gamma(q)) times mu^2(m)/m^{3/4}.
pub fn resummed_prefactor(q: u32, m: u64) -> f64 {
    let mu2 = (mobius(m) as f64).powi(2);
    PI.powi(q as i32 - 1) / (2.0 * factorial(q - 1)) * mu2 * (m as f64).powf(-0.75)
}

fn check(q: u32, m: u64, d: u32, k: u32) -> Result<()> {
    if q < 3 {
        return invalid(format!("q must be >= 3, got {q}"));
    }
    if m == 0 || d == 0 || k == 0 {
        return invalid("m, D and K must be >= 1");
    }
    Ok(())
}

fn insert(map: &mut BTreeMap<(u64, i64), f64>, num: i64, den: u64, amp: f64) {
    if amp == 0.0 {
        return;
    }
    let g = gcd(num.unsigned_abs(), den);
    *map.entry((den / g, num / g as i64)).or_insert(0.0) += amp;
}

impl PhiSeries {
    /// phi_{q,m}(t; D) with frequencies k <= K, terms merged by reduced frequency.
    pub fn raw(q: u32, m: u64, d_max: u32, k_max: u32) -> Result<Self> {
        check(q, m, d_max, k_max)?;
        let pre = raw_prefactor(q, m);
        let mut map = BTreeMap::new();
        if pre != 0.0 && r2(m) != 0 {
            let two_q = 2f64.powi(q as i32);
            let cos_sign = if q.div_ceil(2).is_multiple_of(2) {
                1.0
            } else {
                -1.0
            };
            for k in 1..=k_max as u64 {
                let counts = WeightedCounts::new(m * k * k, q, d_max as u64);
                let kp = (k as f64).powf(1.5);
                for d in 1..=d_max as u64 {
                    let w = pre / ((d as f64).powf(q as f64 - 1.5) * kp);
                    if q.is_multiple_of(2) {
                        insert(
                            &mut map,
                            k as i64,
                            d,
                            w * xi(d, q) * counts.plain[d as usize],
                        );
                    } else if d % 2 == 1 {
                        insert(
                            &mut map,
                            k as i64,
                            d,
                            w * chi4(d as i64) as f64 * counts.plain[d as usize],
                        );
                    } else if d % 4 == 0 {
                        // c cos(theta - pi/4) = -c sin(-theta - pi/4)
                        insert(
                            &mut map,
                            -(k as i64),
                            d,
                            -w * cos_sign * two_q * counts.twisted[d as usize],
                        );
                    }
                }
            }
        }
        Ok(Self::from_map(q, m, d_max, k_max, map))
    }

    /// The same function regrouped by reduced frequency with the inner sums over
    /// common factors done exactly; kept are (k, d) = 1 with d <= D, k <= K.
    pub fn resummed(q: u32, m: u64, d_max: u32, k_max: u32) -> Result<Self> {
        check(q, m, d_max, k_max)?;
        let pre = resummed_prefactor(q, m);
        let mut map = BTreeMap::new();
        if pre != 0.0 && r2(m) != 0 {
            for k in 1..=k_max as u64 {
                let counts = WeightedCounts::new(m * k * k, q, d_max as u64);
                let kp = (k as f64).powf(1.5);
                for d in 1..=d_max as u64 {
                    let r = frak_r_from(&counts, k, d, q);
                    if r != 0.0 {
                        let eps = if q % 2 == 1 && d % 2 == 0 { -1 } else { 1 };
                        let amp = pre * r / ((d as f64).powf(q as f64 - 1.5) * kp);
                        insert(&mut map, eps * k as i64, d, amp);
                    }
                }
            }
        }
        Ok(Self::from_map(q, m, d_max, k_max, map))
    }

    fn from_map(q: u32, m: u64, d_max: u32, k_max: u32, map: BTreeMap<(u64, i64), f64>) -> Self {
        let terms = map
            .into_iter()
            .filter(|(_, a)| *a != 0.0)
            .map(|((den, num), amp)| PhiTerm { num, den, amp })
            .collect();
        PhiSeries {
            q,
            m,
            d_max,
            k_max,
            terms,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Value at t; each phase is reduced modulo its own period before scaling.
    pub fn eval(&self, t: f64) -> f64 {
        let vals: Vec<f64> = self
            .terms
            .iter()
            .map(|term| {
                let r = t.rem_euclid(term.den as f64);
                let cycles = frac(r * term.num as f64 / term.den as f64);
                term.amp * (2.0 * PI * cycles - PI / 4.0).sin()
            })
            .collect();
        pairwise_sum(&vals)
    }

    /// Sum of |amp|, an upper bound for sup |series|.
    pub fn abs_sum(&self) -> f64 {
        pairwise_sum(&self.terms.iter().map(|t| t.amp.abs()).collect::<Vec<_>>())
    }

    /// Mean of the square over a period (the frequencies are distinct).
    pub fn mean_square(&self) -> f64 {
        0.5 * pairwise_sum(&self.terms.iter().map(|t| t.amp * t.amp).collect::<Vec<_>>())
    }

    /// Common period: lcm of the denominators.
    pub fn period(&self) -> Result<u64> {
        let mut p = 1u64;
        for t in &self.terms {
            p = lcm_checked(p, t.den).ok_or(Error::PeriodOverflow(self.d_max))?;
        }
        Ok(p)
    }

    /// Largest integer frequency |num| * period / den.
    pub fn max_harmonic(&self) -> Result<u64> {
        let p = self.period()?;
        let mut top = 0u64;
        for t in &self.terms {
            let g = (p / t.den)
                .checked_mul(t.num.unsigned_abs())
                .ok_or(Error::PeriodOverflow(self.d_max))?;
            top = top.max(g);
        }
        Ok(top)
    }

    /// Values at t_j = P j / n for j < n, P the period, via one inverse FFT.
    pub fn grid_values(&self, n: usize) -> Result<Vec<f64>> {
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_inverse(n);
        self.grid_values_with(n, &fft)
    }

    pub(crate) fn grid_values_with(
        &self,
        n: usize,
        fft: &Arc<dyn rustfft::Fft<f64>>,
    ) -> Result<Vec<f64>> {
        if n == 0 {
            return invalid("grid size must be positive");
        }
        let p = self.period()?;
        let top = self.max_harmonic()?;
        if (top as u128) * 2 >= n as u128 {
            return invalid(format!("grid of {n} points aliases harmonic {top}"));
        }
        let mut spec = vec![Complex64::new(0.0, 0.0); n];
        // a sin(theta - pi/4) = a/(2i) (e^{i(theta - pi/4)} - e^{-i(theta - pi/4)})
        let rot = Complex64::from_polar(1.0, -PI / 4.0);
        for t in &self.terms {
            let g = (p / t.den) as i128 * t.num as i128;
            let pos = g.rem_euclid(n as i128) as usize;
            let neg = (-g).rem_euclid(n as i128) as usize;
            let c = rot * Complex64::new(0.0, -0.5 * t.amp);
            spec[pos] += c;
            spec[neg] += c.conj();
        }
        fft.process(&mut spec);
        Ok(spec.into_iter().map(|z| z.re).collect())
    }
}

/// phi_{q,m}(t) truncated at d <= D, k <= K.
pub fn phi(q: u32, m: u64, t: f64, trunc: &PhiTruncation) -> Result<f64> {
    Ok(PhiSeries::raw(q, m, trunc.d, trunc.k)?.eval(t))
}

/// phi_{q,m}(t; n): moduli d <= n, frequencies k <= K.
pub fn phi_truncated(q: u32, m: u64, t: f64, n: u32, k: u32) -> Result<f64> {
    Ok(PhiSeries::raw(q, m, n, k)?.eval(t))
}

/// Weights of |coefficient| per class of d mod 4, as [0, 1, 2, 3] mod 4.
fn raw_class_weights(q: u32) -> [f64; 4] {
    let two_q = 2f64.powi(q as i32);
    if q.is_multiple_of(2) {
        [two_q - 1.0, 1.0, 1.0, 1.0]
    } else {
        [two_q, 1.0, 0.0, 1.0]
    }
}

/// Certified bound on |phi(t) - phi(t; D, K)| uniformly in t.
///
/// Uses |r_2(m k^2, d; q)| <= r_2(m) h(k) with h(k) = prod over p = 1 (mod 4) of (2 v_p(k) + 1),
/// summed over d > D or k > K.
pub fn tail_bound_for(q: u32, m: u64, d: u32, k: u32) -> Result<f64> {
    check(q, m, d, k)?;
    let pre = raw_prefactor(q, m);
    let r = r2(m) as f64;
    if pre == 0.0 || r == 0.0 {
        return Ok(0.0);
    }
    let s = q as f64 - 1.5;
    let w = raw_class_weights(q);
    let w_tail = class_weighted_tail(w, s, d as u64);
    let w_head: f64 = (1..=d as u64)
        .map(|dd| w[(dd % 4) as usize] * (dd as f64).powf(-s))
        .sum();
    let h_all = majorant_total(1, 1.5);
    let h_tail = majorant_tail(1, 1.5, k as u64);
    Ok(pre * r * (w_head * h_tail + w_tail * h_all))
}

fn majorant_total(power: i32, s: f64) -> f64 {
    static CACHE: std::sync::Mutex<Vec<(i32, u64, f64)>> = std::sync::Mutex::new(Vec::new());
    let key = s.to_bits();
    let mut c = CACHE.lock().unwrap_or_else(|e| e.into_inner());
    if let Some(&(_, _, v)) = c.iter().find(|(p, k, _)| *p == power && *k == key) {
        return v;
    }
    let v = dirichlet_series_upper(&SquareMajorant { power }, s);
    c.push((power, key, v));
    v
}

/// Upper bound on sum_{k > K} h(k)^power k^{-s}.
fn majorant_tail(power: i32, s: f64, k: u64) -> f64 {
    let f = SquareMajorant { power };
    let total = majorant_total(power, s);
    let head: Vec<f64> = (1..=k)
        .rev()
        .map(|n| f.eval(n) * (n as f64).powf(-s))
        .collect();
    (total - pairwise_sum(&head)).max(0.0) + 4.0 * f64::EPSILON * total
}

fn class_head(w: [f64; 4], s: f64, d: u64) -> f64 {
    let v: Vec<f64> = (1..=d)
        .rev()
        .map(|dd| w[(dd % 4) as usize] * (dd as f64).powf(-s))
        .collect();
    pairwise_sum(&v)
}

/// Size of a resummed series inside its box and majorant bounds on what lies outside.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SeriesBounds {
    /// sum of |c| inside the box
    pub sup_box: f64,
    /// mean square inside the box
    pub mean_square_box: f64,
    /// bound on sum of |c| outside the box
    pub sup_tail: f64,
    /// bound on half the sum of c^2 outside the box
    pub l2_tail_sq: f64,
}

impl SeriesBounds {
    /// Bound on sup |phi| for the untruncated function.
    pub fn sup_full(&self) -> f64 {
        self.sup_box + self.sup_tail
    }

    /// Bound on the mean square of the untruncated function.
    pub fn mean_square_full(&self) -> f64 {
        self.mean_square_box + self.l2_tail_sq
    }

    /// Bound on |mean(phi^l) - mean(phi_box^l)|.
    pub fn power_mean_error(&self, l: u32) -> f64 {
        match l {
            0 | 1 => 0.0,
            2 => self.l2_tail_sq,
            _ => {
                l as f64
                    * self.sup_full().powi(l as i32 - 2)
                    * self.mean_square_full().sqrt()
                    * self.l2_tail_sq.sqrt()
            }
        }
    }
}

/// Bounds for `PhiSeries::resummed(q, m, d, k)` from |frak r(m k^2, d)| <= w(d) r_2(m) h(k).
pub fn resummed_bounds(series: &PhiSeries) -> SeriesBounds {
    let (q, m, d, k) = (series.q, series.m, series.d_max as u64, series.k_max as u64);
    let sup_box = series.abs_sum();
    let mean_square_box = series.mean_square();
    let pre = resummed_prefactor(q, m);
    let r = r2(m) as f64;
    if pre == 0.0 || r == 0.0 {
        return SeriesBounds {
            sup_box,
            mean_square_box,
            sup_tail: 0.0,
            l2_tail_sq: 0.0,
        };
    }
    let two_q = 2f64.powi(q as i32);
    let w1 = [two_q, 1.0, 0.0, 1.0];
    let w2 = [two_q * two_q, 1.0, 0.0, 1.0];
    let s1 = q as f64 - 1.5;
    let s2 = 2.0 * q as f64 - 3.0;
    let sup_tail = pre
        * r
        * (class_head(w1, s1, d) * majorant_tail(1, 1.5, k)
            + class_weighted_tail(w1, s1, d) * majorant_total(1, 1.5));
    let l2_tail_sq = 0.5
        * (pre * r).powi(2)
        * (class_head(w2, s2, d) * majorant_tail(2, 3.0, k)
            + class_weighted_tail(w2, s2, d) * majorant_total(2, 3.0));
    SeriesBounds {
        sup_box,
        mean_square_box,
        sup_tail,
        l2_tail_sq,
    }
}

/// (sum_d w(d) d^{1.5-q} sum_k h(k) k^{-3/2}, sum_d w(d)^2 d^{3-2q} sum_k h(k)^2 k^{-3}), so that
/// sup |phi_{q,m}| <= c r_2(m) times the first and Q(m, 2) <= c^2 r_2(m)^2 / 2 times the second,
/// c the resummed prefactor.
pub fn majorant_constants(q: u32) -> (f64, f64) {
    let two_q = 2f64.powi(q as i32);
    let w1 = [two_q, 1.0, 0.0, 1.0];
    let w2 = [two_q * two_q, 1.0, 0.0, 1.0];
    let s1 = q as f64 - 1.5;
    let s2 = 2.0 * q as f64 - 3.0;
    (
        class_weighted_tail(w1, s1, 0) * majorant_total(1, 1.5),
        class_weighted_tail(w2, s2, 0) * majorant_total(2, 3.0),
    )
}

/// L2 distance (root mean square of the difference) between two finite series.
pub fn l2_distance(a: &PhiSeries, b: &PhiSeries) -> f64 {
    let mut map: BTreeMap<(u64, i64), f64> = BTreeMap::new();
    for t in &a.terms {
        *map.entry((t.den, t.num)).or_insert(0.0) += t.amp;
    }
    for t in &b.terms {
        *map.entry((t.den, t.num)).or_insert(0.0) -= t.amp;
    }
    (0.5 * pairwise_sum(&map.values().map(|v| v * v).collect::<Vec<_>>())).sqrt()
}

/// sum_{m <= M} phi_{q,m}(sqrt(m) x^2) at each x, with one truncation for every m.
pub fn partial_sum_phi(q: u32, big_m: u64, xs: &[f64], d: u32, k: u32) -> Result<Vec<f64>> {
    let mut out = vec![0.0; xs.len()];
    for m in 1..=big_m {
        let series = PhiSeries::raw(q, m, d, k)?;
        if series.is_zero() {
            continue;
        }
        let g = (m as f64).sqrt();
        for (o, &x) in out.iter_mut().zip(xs) {
            *o += series.eval(g * x * x);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vanishing_components() {
        for m in [3u64, 4, 7, 8, 9, 12, 21] {
            assert!(PhiSeries::raw(3, m, 8, 8).unwrap().is_zero(), "m={m}");
            assert!(PhiSeries::raw(4, m, 8, 8).unwrap().is_zero(), "m={m}");
            assert_eq!(tail_bound_for(3, m, 8, 8).unwrap(), 0.0);
        }
        assert!(!PhiSeries::raw(3, 1, 4, 4).unwrap().is_zero());
    }

    #[test]
    fn periodic_in_lcm() {
        for q in [3u32, 4] {
            let s = PhiSeries::raw(q, 1, 6, 5).unwrap();
            assert_eq!(s.period().unwrap(), 60);
            for t in [0.1, 1.7, 13.25] {
                assert!((s.eval(t) - s.eval(t + 60.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn direct_term_sum() {
        // independent evaluation of the defining double series
        let (q, m, dm, km) = (3u32, 5u64, 8u64, 6u64);
        let s = PhiSeries::raw(q, m, dm as u32, km as u32).unwrap();
        let pre = raw_prefactor(q, m);
        for t in [0.3, 2.9, 11.0] {
            let mut v = 0.0;
            for d in 1..=dm {
                for k in 1..=km {
                    let base = pre / ((d as f64).powf(1.5) * (k as f64).powf(1.5));
                    let th = 2.0 * PI * k as f64 / d as f64 * t - PI / 4.0;
                    let r = crate::arithmetic::r2_weighted(m * k * k, d, q);
                    let rc = crate::arithmetic::r2_weighted_chi(m * k * k, d, q);
                    v += base * chi4(d as i64) as f64 * r * th.sin();
                    if d % 4 == 0 {
                        v += base * 8.0 * rc * th.cos();
                    }
                }
            }
            assert!((s.eval(t) - v).abs() < 1e-12, "{} {v}", s.eval(t));
        }
    }

    #[test]
    fn grid_matches_eval() {
        let s = PhiSeries::raw(4, 2, 6, 7).unwrap();
        let p = s.period().unwrap() as f64;
        let top = s.max_harmonic().unwrap() as usize;
        assert!(s.grid_values(2 * top).is_err());
        let n = 2 * top + 1;
        let g = s.grid_values(n).unwrap();
        for j in [0usize, 1, n / 3, n / 2, n - 1] {
            assert!((g[j] - s.eval(p * j as f64 / n as f64)).abs() < 1e-11);
        }
    }

    #[test]
    fn resummed_is_limit_of_raw() {
        // raw terms with large D, K collapse onto the reduced frequencies of the resummed box
        for q in [3u32, 4] {
            let r = PhiSeries::resummed(q, 1, 4, 4).unwrap();
            let raw = PhiSeries::raw(q, 1, 200, 200).unwrap();
            for t in [0.2, 0.9] {
                let partial: f64 = raw
                    .terms
                    .iter()
                    .filter(|x| x.den <= 4 && x.num.abs() <= 4)
                    .map(|x| x.amp * (2.0 * PI * x.num as f64 / x.den as f64 * t - PI / 4.0).sin())
                    .sum();
                assert!(
                    (partial - r.eval(t)).abs() < 1e-3,
                    "q={q} {partial} {}",
                    r.eval(t)
                );
            }
        }
    }

    #[test]
    fn resummed_bounds_certify() {
        for q in [3u32, 4] {
            let lo = PhiSeries::resummed(q, 1, 12, 12).unwrap();
            let hi = PhiSeries::resummed(q, 1, 96, 96).unwrap();
            let b = resummed_bounds(&lo);
            assert!(l2_distance(&lo, &hi).powi(2) <= b.l2_tail_sq);
            assert!(hi.abs_sum() - lo.abs_sum() <= b.sup_tail);
            let b2 = resummed_bounds(&PhiSeries::resummed(q, 1, 24, 24).unwrap());
            assert!(b2.l2_tail_sq < b.l2_tail_sq && b2.sup_tail < b.sup_tail);
        }
    }

    #[test]
    fn tail_bound_certifies() {
        let lo = PhiSeries::raw(3, 1, 16, 16).unwrap();
        let hi = PhiSeries::raw(3, 1, 64, 64).unwrap();
        let b = tail_bound_for(3, 1, 16, 16).unwrap();
        assert!(tail_bound_for(3, 1, 32, 16).unwrap() < b);
        for j in 0..200 {
            let t = j as f64 * 0.731;
            assert!((hi.eval(t) - lo.eval(t)).abs() <= b);
        }
    }
}
