//! Finite Voronoi-type approximations of the normalized error: the coefficient
//! functions a_H, a*_H, a_{H,chi}, b*_H, the trigonometric sums S_{q,H}, S*_{q,H}
//! and the T-sums, and the mean square gap against exact counts.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arithmetic::{chi4, isqrt, xi, ArithTables};
use crate::error::{invalid, Result};
use crate::lattice::{normalized_error, GroupParams, Radius};
use crate::numeric::{frac, pairwise_sum, Neumaier};

/// tau(t) = t(1-t)cot(pi t) + t/pi, continuously extended to [0, 1].
pub fn tau(t: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return invalid(format!("tau needs t in [0, 1], got {t}"));
    }
    Ok(tau_unchecked(t))
}

/// tau*(t) = t(1-t).
pub fn tau_star(t: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return invalid(format!("tau* needs t in [0, 1], got {t}"));
    }
    Ok(t * (1.0 - t))
}

#[inline]
fn tau_unchecked(t: f64) -> f64 {
    if t == 0.0 {
        1.0 / PI
    } else if t == 1.0 {
        0.0
    } else if t <= 0.5 {
        t * (1.0 - t) / (PI * t).tan() + t / PI
    } else {
        // cot(pi t) = -cot(pi s) with s = 1 - t exact, avoiding the rounding of pi t near pi
        let s = 1.0 - t;
        t * (1.0 / PI - s / (PI * s).tan())
    }
}

/// lambda(h) = 1 if h = 0 (mod 4), -1 if h = 2 (mod 4), else 0.
#[inline]
pub fn lambda(h: u64) -> f64 {
    match h % 4 {
        0 => 1.0,
        2 => -1.0,
        _ => 0.0,
    }
}

#[inline]
fn chi_neg(n: u64) -> f64 {
    -(chi4(n as i64) as f64)
}

#[inline]
fn power_weight(v: u64, sqrt_m: f64, q: u32) -> f64 {
    if v == 0 {
        0.0
    } else {
        (v as f64 / sqrt_m).powi(q as i32 - 1)
    }
}

/// Which of the four coefficient functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coefficient {
    A,
    AStar,
    AChi,
    BStar,
}

/// Shared H-dependent quantities: [H] and the tau arguments.
#[derive(Clone, Copy, Debug)]
struct HGrid {
    hf: u64,
}

impl HGrid {
    fn new(h: f64) -> Self {
        HGrid {
            hf: if h >= 1.0 { h.floor() as u64 } else { 0 },
        }
    }
    /// h / ([H] + 1)
    #[inline]
    fn t_first(&self, h: u64) -> f64 {
        h as f64 / (self.hf + 1) as f64
    }
    /// h / (d [H/d] + d)
    #[inline]
    fn t_second(&self, h: u64, d: u64) -> f64 {
        h as f64 / (d * (self.hf / d) + d) as f64
    }
}

/// Contributions of one representation m = n^2 + h^2 (0 <= n <= h) to the coefficient
/// functions at modulus d, before the 1/m^{3/4} (or 2/m^{3/4}) prefactor.
#[derive(Clone, Copy, Debug, Default)]
struct PairTerms {
    a: f64,
    a_star: f64,
    a_chi: f64,
    b_star: f64,
}

#[inline]
fn pair_terms(n: u64, h: u64, d: u64, q: u32, g: &HGrid, sqrt_m: f64) -> PairTerms {
    let half = if n == 0 || n == h { 0.5 } else { 1.0 };
    let mut t = PairTerms::default();
    if n.is_multiple_of(d) {
        let s = g.t_first(h);
        let (ta, ts) = (tau_unchecked(s), s * (1.0 - s));
        let w = power_weight(h, sqrt_m, q);
        t.a += ta * w;
        t.a_star += ts * w;
        t.a_chi += chi_neg(h) * ta * w;
        t.b_star += lambda(h) * ts * w;
    }
    if h.is_multiple_of(d) {
        let s = g.t_second(h, d);
        let (ta, ts) = (tau_unchecked(s), s * (1.0 - s));
        let w = power_weight(n, sqrt_m, q);
        t.a += ta * w;
        t.a_star += ts * w;
        t.a_chi += chi_neg(n) * ta * w;
        if n.is_multiple_of(4) {
            t.b_star += 2.0 * ts * w;
        }
    }
    t.a *= half;
    t.a_star *= half;
    t.a_chi *= half;
    t.b_star *= half;
    t
}

/// One of a_H, a*_H, a_{H,chi}, b*_H at (m, d; q) by direct enumeration of m = n^2 + h^2.
pub fn coefficient(kind: Coefficient, m: u64, d: u64, q: u32, h: f64) -> f64 {
    assert!(m >= 1 && d >= 1);
    let g = HGrid::new(h);
    let sqrt_m = (m as f64).sqrt();
    let mut acc = PairTerms::default();
    let mut n = 0u64;
    while 2 * n * n <= m {
        let rest = m - n * n;
        let hh = isqrt(rest);
        if hh * hh == rest && hh >= 1 && hh <= g.hf && n <= hh {
            let t = pair_terms(n, hh, d, q, &g, sqrt_m);
            acc.a += t.a;
            acc.a_star += t.a_star;
            acc.a_chi += t.a_chi;
            acc.b_star += t.b_star;
        }
        n += 1;
    }
    let pre = (m as f64).powf(-0.75);
    match kind {
        Coefficient::A => pre * acc.a,
        Coefficient::AStar => pre * acc.a_star,
        Coefficient::AChi => 2.0 * pre * acc.a_chi,
        Coefficient::BStar => 2.0 * pre * acc.b_star,
    }
}

pub fn coeff_ah(m: u64, d: u64, q: u32, h: f64) -> f64 {
    coefficient(Coefficient::A, m, d, q, h)
}

pub fn coeff_ah_star(m: u64, d: u64, q: u32, h: f64) -> f64 {
    coefficient(Coefficient::AStar, m, d, q, h)
}

pub fn coeff_ah_chi(m: u64, d: u64, q: u32, h: f64) -> f64 {
    coefficient(Coefficient::AChi, m, d, q, h)
}

pub fn coeff_bh_star(m: u64, d: u64, q: u32, h: f64) -> f64 {
    coefficient(Coefficient::BStar, m, d, q, h)
}

/// Which trigonometric sum to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SumKind {
    S,
    SStar,
}

/// Amplitudes multiplying sin and cos of 2 pi (sqrt(m)/d) x^2 - pi/4 for one (pair, d).
#[inline]
fn amplitudes(
    kind: SumKind,
    params: &GroupParams,
    d: u64,
    t: &PairTerms,
    pre: f64,
    dpow: f64,
) -> (f64, f64) {
    let q = params.q;
    let two_q = 2f64.powi(q as i32);
    match (kind, params.odd) {
        (SumKind::S, false) => (2.0 * params.rho_q * xi(d, q) * pre * t.a / dpow, 0.0),
        (SumKind::S, true) => {
            let s = two_q * params.rho_chi * chi4(d as i64) as f64 * pre * t.a / dpow;
            let c = if d.is_multiple_of(4) {
                let sign = if ((q - 1) / 2).is_multiple_of(2) {
                    1.0
                } else {
                    -1.0
                };
                sign * two_q * two_q / 2.0 * params.rho_chi * 2.0 * pre * t.a_chi / dpow
            } else {
                0.0
            };
            (s, c)
        }
        (SumKind::SStar, false) => (
            0.0,
            2.0 * params.rho_q * xi(d, q).abs() * pre * t.a_star / dpow,
        ),
        (SumKind::SStar, true) => {
            let mut dd = two_q / 2.0 * pre * t.a_star;
            if d.is_multiple_of(4) {
                dd += two_q * two_q / 4.0 * 2.0 * pre * t.b_star;
            }
            (0.0, 2.0 * params.rho_chi * dd / dpow)
        }
    }
}

/// Whether modulus d can contribute to the sum at all.
fn modulus_active(kind: SumKind, params: &GroupParams, d: u64) -> bool {
    match (kind, params.odd) {
        (SumKind::S, true) => d % 4 != 2,
        (SumKind::S, false) => xi(d, params.q) != 0.0,
        _ => true,
    }
}

/// Visits every (d, n, h) with d <= sqrt(H), 1 <= h <= [H], 0 <= n <= h and d | n or d | h,
/// in ascending d, then h, then n, passing sqrt(m)/d and the sin/cos amplitudes.
fn for_each_term<F: FnMut(f64, f64, f64)>(kind: SumKind, params: &GroupParams, h: f64, mut f: F) {
    let g = HGrid::new(h);
    if g.hf == 0 {
        return;
    }
    let dmax = isqrt(g.hf);
    let q = params.q;
    for d in 1..=dmax {
        if !modulus_active(kind, params, d) {
            continue;
        }
        let dpow = (d as f64).powf(q as f64 - 1.5);
        for hh in 1..=g.hf {
            let all = hh % d == 0;
            let step = if all { 1 } else { d };
            let mut n = 0;
            while n <= hh {
                let m = n * n + hh * hh;
                let sqrt_m = (m as f64).sqrt();
                let t = pair_terms(n, hh, d, q, &g, sqrt_m);
                let pre = (m as f64).powf(-0.75);
                let (s, c) = amplitudes(kind, params, d, &t, pre, dpow);
                if s != 0.0 || c != 0.0 {
                    f(sqrt_m / d as f64, s, c);
                }
                n += step;
            }
        }
    }
}

/// S_{q,H}(x) or S*_{q,H}(x) at a single point, given x^2.
pub fn eval_sum(kind: SumKind, params: &GroupParams, x2: f64, h: f64) -> f64 {
    let mut acc = Neumaier::default();
    for_each_term(kind, params, h, |rate, s, c| {
        let (sn, cs) = (2.0 * PI * frac(rate * x2) - PI / 4.0).sin_cos();
        acc.add(s * sn + c * cs);
    });
    acc.value()
}

pub fn eval_s_qh(params: &GroupParams, x2: f64, h: f64) -> f64 {
    eval_sum(SumKind::S, params, x2, h)
}

pub fn eval_s_star_qh(params: &GroupParams, x2: f64, h: f64) -> f64 {
    eval_sum(SumKind::SStar, params, x2, h)
}

/// Values on the grid x_j = X (1 + (j + 1/2)/n), j < n.
///
/// The phase 2 pi r x_j^2 is quadratic in j, so consecutive unit phasors are
/// generated by a rotation whose own angle advances by a fixed step.
pub fn eval_sum_grid(kind: SumKind, params: &GroupParams, x_lo: f64, n: usize, h: f64) -> Vec<f64> {
    let mut acc = vec![Neumaier::default(); n];
    if n == 0 {
        return Vec::new();
    }
    let nf = n as f64;
    let x2 = x_lo * x_lo;
    let u0 = 1.0 + 0.5 / nf;
    let unit = |cycles: f64| {
        let (s, c) = (2.0 * PI * frac(cycles)).sin_cos();
        Complex64::new(c, s)
    };
    let shift = Complex64::new((PI / 4.0).cos(), -(PI / 4.0).sin());
    for_each_term(kind, params, h, |rate, s, c| {
        let rho = rate * x2;
        let mut z = unit(rho * u0 * u0) * shift;
        let mut step = unit(rho * (2.0 * u0 + 1.0 / nf) / nf);
        let accel = unit(2.0 * rho / (nf * nf));
        for a in acc.iter_mut() {
            a.add(s * z.im + c * z.re);
            z *= step;
            step *= accel;
        }
    });
    acc.iter().map(Neumaier::value).collect()
}

/// The q = 3 (more generally odd q) companion sums (T_{q,chi}, T^{chi}_q, T_q) at x^2.
pub fn eval_t_sums(params: &GroupParams, x2: f64, h: f64) -> Result<(f64, f64, f64)> {
    if !params.odd {
        return invalid("the T-sums are defined for odd q");
    }
    let q = params.q;
    let g = HGrid::new(h);
    let two_q = 2f64.powi(q as i32);
    let sign = if q.div_ceil(2).is_multiple_of(2) {
        1.0
    } else {
        -1.0
    };
    let (mut t1, mut t2, mut t3) = (
        Neumaier::default(),
        Neumaier::default(),
        Neumaier::default(),
    );
    let dmin = isqrt(g.hf) + 1;
    for d in dmin..=g.hf {
        let dpow = (d as f64).powf(q as f64 - 1.5);
        let top = g.hf / d;
        for hh in 1..=top {
            let w = 1.0 / (dpow * (hh as f64).powf(1.5));
            let t = hh as f64 / (top + 1) as f64;
            let phase = 2.0 * PI * frac(hh as f64 / d as f64 * x2) - PI / 4.0;
            let (sn, cs) = phase.sin_cos();
            let ta = tau_unchecked(t);
            t1.add(two_q / 2.0 * params.rho_chi * chi4(d as i64) as f64 * w * ta * sn);
            if d % 4 == 0 {
                t2.add(
                    sign * two_q * two_q / 2.0
                        * params.rho_chi
                        * chi4(hh as i64) as f64
                        * w
                        * ta
                        * cs,
                );
            }
            let lam = two_q / 4.0
                + if d % 4 == 0 {
                    two_q * two_q / 4.0 * lambda(hh)
                } else {
                    0.0
                };
            t3.add(2.0 * params.rho_chi * lam * w * t * (1.0 - t) * cs);
        }
    }
    Ok((t1.value(), t2.value(), t3.value()))
}

/// Result of the mean square comparison between exact counts and S_{q,H}.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapReport {
    pub x_lo: f64,
    pub h: f64,
    pub samples: usize,
    pub mean_square_gap: f64,
    pub empirical_second_moment: f64,
}

/// Grid average over x_j = X (1 + (j + 1/2)/n) of |E_q(x)/x^{2q-1} - S_{q,H}(x)|^2.
pub fn mean_square_gap(
    params: &GroupParams,
    tables: &ArithTables,
    grid: &[Radius],
    x_lo: f64,
    h: Option<f64>,
) -> Result<GapReport> {
    let n = grid.len();
    if n == 0 {
        return invalid("mean_square_gap needs at least one sample");
    }
    let h = h.unwrap_or(x_lo * x_lo / 2.0);
    let errs: Vec<f64> = grid
        .par_iter()
        .map(|x| normalized_error(params, tables, x).map(|e| e.normalized_error))
        .collect::<Result<_>>()?;
    let s = eval_sum_grid(SumKind::S, params, x_lo, n, h);
    let gaps: Vec<f64> = errs
        .iter()
        .zip(&s)
        .map(|(e, s)| (e - s) * (e - s))
        .collect();
    let sq: Vec<f64> = errs.iter().map(|e| e * e).collect();
    Ok(GapReport {
        x_lo,
        h,
        samples: n,
        mean_square_gap: pairwise_sum(&gaps) / n as f64,
        empirical_second_moment: pairwise_sum(&sq) / n as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arithmetic::{r2_weighted, r2_weighted_chi};

    #[test]
    fn tau_values() {
        assert!((tau(0.5).unwrap() - 0.5 / PI).abs() < 1e-15);
        assert!((tau(0.0).unwrap() - 1.0 / PI).abs() < 1e-15);
        assert!(tau(1.0).unwrap().abs() < 1e-15);
        assert!((tau(1e-9).unwrap() - 1.0 / PI).abs() < 1e-8);
        assert!(tau(1.0 - 1e-9).unwrap().abs() < 1e-8);
        assert_eq!(tau_star(0.5).unwrap(), 0.25);
        assert!(tau(1.5).is_err());
        assert!(tau_star(-0.1).is_err());
    }

    #[test]
    fn a_h_at_one() {
        for h in [1.0f64, 2.5, 10.0, 100.0] {
            let want = tau(1.0 / (h.floor() + 1.0)).unwrap() / 2.0;
            assert!((coeff_ah(1, 1, 3, h) - want).abs() < 1e-15);
        }
        assert_eq!(coeff_ah(2 * 9 + 1, 1, 3, 3.0), 0.0);
    }

    #[test]
    fn lemma3_limits() {
        for m in [1u64, 2, 5, 25, 65] {
            for d in [1u64, 2, 4, 5] {
                let r = r2_weighted(m, d, 3);
                let a = 4.0 * PI * (m as f64).powf(0.75) * coeff_ah(m, d, 3, 1e6);
                assert!((a - r).abs() < 1e-4 * (1.0 + r), "m={m} d={d} {a} {r}");
                let rc = r2_weighted_chi(m, d, 3);
                let ac = -2.0 * PI * (m as f64).powf(0.75) * coeff_ah_chi(m, d, 3, 1e6);
                assert!(
                    (ac - rc).abs() < 1e-4 * (1.0 + rc.abs()),
                    "m={m} d={d} {ac} {rc}"
                );
            }
        }
    }

    #[test]
    fn grid_matches_pointwise() {
        for q in [3u32, 4] {
            let p = GroupParams::new(q).unwrap();
            let (x_lo, n, h) = (5.0, 7, 12.5);
            let g = eval_sum_grid(SumKind::S, &p, x_lo, n, h);
            let gs = eval_sum_grid(SumKind::SStar, &p, x_lo, n, h);
            for j in 0..n {
                let x = x_lo * (1.0 + (j as f64 + 0.5) / n as f64);
                let direct = eval_s_qh(&p, x * x, h);
                assert!(
                    (g[j] - direct).abs() < 1e-10,
                    "q={q} j={j} {} {direct}",
                    g[j]
                );
                assert!((gs[j] - eval_s_star_qh(&p, x * x, h)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn empty_below_one() {
        let p = GroupParams::new(3).unwrap();
        assert_eq!(eval_s_qh(&p, 7.3, 0.5), 0.0);
    }
}
