//! Floating point helpers: deterministic summation, special values, quadrature.

use std::f64::consts::PI;

/// Pairwise summation with a fixed split, so the result depends only on the order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        let mut acc = Neumaier::default();
        for &x in xs {
            acc.add(x);
        }
        return acc.value();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Compensated running sum (Neumaier's variant of Kahan summation).
#[derive(Clone, Copy, Debug, Default)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Fractional part in [0, 1).
#[inline]
pub fn frac(x: f64) -> f64 {
    let f = x - x.floor();
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}

/// sin(2 pi cycles - pi/4) with the argument reduced modulo one cycle first.
#[inline]
pub fn sin_shifted(cycles: f64) -> f64 {
    (2.0 * PI * frac(cycles) - PI / 4.0).sin()
}

/// cos(2 pi cycles - pi/4), reduced modulo one cycle.
#[inline]
pub fn cos_shifted(cycles: f64) -> f64 {
    (2.0 * PI * frac(cycles) - PI / 4.0).cos()
}

pub fn factorial(n: u32) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// Gamma(n2 / 2) for a positive integer n2, using the exact integer and half-integer recurrences.
pub fn gamma_half(n2: u32) -> f64 {
    assert!(n2 > 0);
    if n2.is_multiple_of(2) {
        factorial(n2 / 2 - 1)
    } else {
        // Gamma(n + 1/2) = (2n)! / (4^n n!) sqrt(pi)
        let n = (n2 - 1) / 2;
        let mut v = PI.sqrt();
        for j in 0..n {
            v *= j as f64 + 0.5;
        }
        v
    }
}

/// Riemann zeta for real s > 1 by Euler-Maclaurin summation.
pub fn zeta(s: f64) -> f64 {
    assert!(s > 1.0, "zeta needs s > 1");
    const N: usize = 16;
    // B_{2k} / (2k)!
    const B: [f64; 7] = [
        1.0 / 12.0,
        -1.0 / 720.0,
        1.0 / 30240.0,
        -1.0 / 1209600.0,
        1.0 / 47900160.0,
        -691.0 / 1307674368000.0,
        1.0 / 74724249600.0,
    ];
    let mut terms: Vec<f64> = (1..N).rev().map(|n| (n as f64).powf(-s)).collect();
    let nf = N as f64;
    terms.push(nf.powf(1.0 - s) / (s - 1.0));
    terms.push(0.5 * nf.powf(-s));
    // s(s+1)...(s+2k-2) N^{-s-2k+1}
    let mut rising = s;
    let mut power = nf.powf(-s - 1.0);
    for (k, b) in B.iter().enumerate() {
        terms.push(b * rising * power);
        let j = 2 * k as u32 + 1;
        rising *= (s + j as f64) * (s + j as f64 + 1.0);
        power /= nf * nf;
    }
    pairwise_sum(&terms)
}

/// Sum of d^{-s} over d > n in a residue class d = r (mod step), r in 1..=step.
pub fn power_tail_class(s: f64, n: u64, r: u64, step: u64) -> f64 {
    // Exact for step 1, 2, 4 via zeta; other steps unsupported.
    let z = zeta(s);
    let total = match (step, r % step) {
        (1, _) => z,
        (2, 1) => (1.0 - 2f64.powf(-s)) * z,
        (2, 0) => 2f64.powf(-s) * z,
        (4, 0) => 4f64.powf(-s) * z,
        (4, 2) => 2f64.powf(-s) * (1.0 - 2f64.powf(-s)) * z,
        (4, 1) | (4, 3) => {
            let odd = (1.0 - 2f64.powf(-s)) * z;
            let beta = dirichlet_beta(s);
            if r % 4 == 1 {
                0.5 * (odd + beta)
            } else {
                0.5 * (odd - beta)
            }
        }
        _ => panic!("unsupported residue class"),
    };
    let mut head = Vec::new();
    let mut d = if r.is_multiple_of(step) {
        step
    } else {
        r % step
    };
    while d <= n {
        head.push((d as f64).powf(-s));
        d += step;
    }
    head.reverse();
    (total - pairwise_sum(&head)).max(0.0)
}

/// Dirichlet beta function L(s, chi_4) for real s > 1 by averaging partial sums of the alternating series.
pub fn dirichlet_beta(s: f64) -> f64 {
    // Alternating series with monotone terms: the mean of consecutive partial sums,
    // repeated (Euler transform style), converges fast enough for s > 1.
    let n = 4000usize;
    let mut partials = Vec::with_capacity(n);
    let mut acc = 0.0;
    for j in 0..n {
        let t = ((2 * j + 1) as f64).powf(-s);
        acc += if j % 2 == 0 { t } else { -t };
        partials.push(acc);
    }
    let mut v = partials[n - 40..].to_vec();
    while v.len() > 1 {
        v = v.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    }
    v[0]
}

/// Adaptive Simpson quadrature on [a, b] to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn step<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Significant-digit formatting used for every machine readable number.
pub fn fmt17(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeta_values() {
        assert!((zeta(2.0) - PI * PI / 6.0).abs() < 1e-14);
        assert!((zeta(4.0) - PI.powi(4) / 90.0).abs() < 1e-14);
        assert!((zeta(1.5) - 2.612_375_348_685_488).abs() < 1e-13);
    }

    #[test]
    fn beta_values() {
        // Catalan's constant and pi^3/32
        assert!((dirichlet_beta(2.0) - 0.915_965_594_177_219).abs() < 1e-12);
        assert!((dirichlet_beta(3.0) - PI.powi(3) / 32.0).abs() < 1e-13);
    }

    #[test]
    fn gamma_half_matches_known() {
        assert_eq!(gamma_half(8), 6.0);
        assert!((gamma_half(5) - 0.75 * PI.sqrt()).abs() < 1e-15);
        assert!((gamma_half(1) - PI.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn tails_by_class() {
        let s = 2.5;
        let n_max = 2_000_000u64;
        // integral tail of the truncated oracle, per residue class of density 1/step
        let tail = |step: f64| (n_max as f64).powf(1.0 - s) / ((s - 1.0) * step);
        let direct: f64 = (11..n_max)
            .rev()
            .filter(|d| d % 4 == 0)
            .map(|d| (d as f64).powf(-s))
            .sum::<f64>()
            + tail(4.0);
        let t = power_tail_class(s, 10, 0, 4);
        assert!((t - direct).abs() < 1e-13, "{t} {direct}");
        let direct_odd: f64 = (11..n_max)
            .rev()
            .filter(|d| d % 2 == 1)
            .map(|d| (d as f64).powf(-s))
            .sum::<f64>()
            + tail(2.0);
        assert!((power_tail_class(s, 10, 1, 2) - direct_odd).abs() < 1e-13);
    }

    #[test]
    fn simpson_smooth() {
        let v = adaptive_simpson(&|x: f64| x.cos().powi(4), -PI / 2.0, PI / 2.0, 1e-13);
        assert!((v - 3.0 * PI / 8.0).abs() < 1e-12);
    }

    #[test]
    fn pairwise_is_accurate() {
        let xs: Vec<f64> = (0..100_000)
            .map(|i| if i % 2 == 0 { 1e16 } else { 1.0 })
            .collect();
        let naive_exact = 50_000.0 * 1e16 + 50_000.0;
        assert!((pairwise_sum(&xs) - naive_exact).abs() <= 2.0 * 1e16 * f64::EPSILON * 20.0);
    }
}
