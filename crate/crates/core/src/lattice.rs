//! Exact lattice point counts in dilated Cygan-Koranyi balls, the ball volume and
//! the normalized error term.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::arithmetic::{gcd, isqrt_u128, rho_chi, rho_q, ArithTables};
use crate::error::{invalid, Error, Result};
use crate::numeric::{adaptive_simpson, factorial, gamma_half};

/// The group parameter q and the constants derived from it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroupParams {
    pub q: u32,
    pub dim: u32,
    pub odd: bool,
    pub vol: f64,
    pub rho_q: f64,
    pub rho_chi: f64,
}

impl GroupParams {
    pub fn new(q: u32) -> Result<Self> {
        if q < 3 {
            return invalid(format!("q must be >= 3, got {q}"));
        }
        Ok(GroupParams {
            q,
            dim: 2 * q + 1,
            odd: q % 2 == 1,
            vol: volume_unit_ball(q),
            rho_q: rho_q(q),
            rho_chi: rho_chi(q),
        })
    }
}

/// A dilation radius x held exactly through x^2 = num / den in lowest terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Radius {
    pub num: u64,
    pub den: u64,
}

impl Radius {
    /// x^2 = num / den.
    pub fn from_square(num: u64, den: u64) -> Result<Self> {
        if den == 0 {
            return invalid("zero denominator in x^2");
        }
        let g = gcd(num, den).max(1);
        Ok(Radius {
            num: num / g,
            den: den / g,
        })
    }

    /// x = p / r.
    pub fn from_ratio(p: u64, r: u64) -> Result<Self> {
        if r == 0 {
            return invalid("zero denominator in x");
        }
        let g = gcd(p, r).max(1);
        let (p, r) = (p / g, r / g);
        match (p.checked_mul(p), r.checked_mul(r)) {
            (Some(n), Some(d)) => Self::from_square(n, d),
            _ => invalid(format!("x = {p}/{r} is too large to square exactly")),
        }
    }

    /// x^2 as a float.
    pub fn x2(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn x(&self) -> f64 {
        self.x2().sqrt()
    }

    /// Largest integer not exceeding x^2.
    pub fn floor_x2(&self) -> u64 {
        self.num / self.den
    }
}

impl fmt::Display for Radius {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "sqrt({})", self.num)
        } else {
            write!(f, "sqrt({}/{})", self.num, self.den)
        }
    }
}

fn parse_fraction(s: &str) -> Option<(u64, u64)> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once('/') {
        let (a, b) = (parse_decimal(a)?, parse_decimal(b)?);
        let num = a.0.checked_mul(b.1)?;
        let den = a.1.checked_mul(b.0)?;
        return Some((num, den));
    }
    parse_decimal(s)
}

fn parse_decimal(s: &str) -> Option<(u64, u64)> {
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    match s.split_once('.') {
        None => Some((s.parse().ok()?, 1)),
        Some((int, frac)) => {
            if !frac.chars().all(|c| c.is_ascii_digit()) || frac.len() > 18 {
                return None;
            }
            let den = 10u64.checked_pow(frac.len() as u32)?;
            let int: u64 = if int.is_empty() { 0 } else { int.parse().ok()? };
            let frac: u64 = if frac.is_empty() {
                0
            } else {
                frac.parse().ok()?
            };
            Some((int.checked_mul(den)?.checked_add(frac)?, den))
        }
    }
}

/// Accepts `p/r`, a decimal such as `2.5`, or `sqrt(n)` / `sqrt(n/d)` for x^2 = n/d.
impl FromStr for Radius {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let bad = || Error::InvalidArgument(format!("cannot parse radius '{s}'"));
        if let Some(inner) = t.strip_prefix("sqrt(").and_then(|r| r.strip_suffix(')')) {
            let (n, d) = parse_fraction(inner).ok_or_else(bad)?;
            return Radius::from_square(n, d);
        }
        let (p, r) = parse_fraction(t).ok_or_else(bad)?;
        Radius::from_ratio(p, r)
    }
}

/// A positive rational p / r parsed from `p/r` or a decimal.
pub fn parse_ratio(s: &str) -> Result<(u64, u64)> {
    let (p, r) = parse_fraction(s)
        .ok_or_else(|| Error::InvalidArgument(format!("cannot parse '{s}' as a rational")))?;
    if r == 0 || p == 0 {
        return invalid(format!("'{s}' must be a positive rational"));
    }
    let g = gcd(p, r);
    Ok((p / g, r / g))
}

/// The sample points x_j = X (1 + (j + 1/2)/n), j < n, as exact radii, for X = p / r.
pub fn sample_grid(x_lo: (u64, u64), n: usize) -> Result<Vec<Radius>> {
    let (p, r) = x_lo;
    let n = n as u64;
    (0..n)
        .map(|j| {
            let num = p.checked_mul(2 * n + 2 * j + 1);
            let den = r.checked_mul(2 * n);
            match (num, den) {
                (Some(a), Some(b)) => Radius::from_ratio(a, b),
                _ => invalid("sample grid overflows u64"),
            }
        })
        .collect()
}

/// vol(B) = pi^q / q! * B(1/2, q/2 + 1).
pub fn volume_unit_ball(q: u32) -> f64 {
    PI.powi(q as i32) / factorial(q) * PI.sqrt() * gamma_half(q + 2) / gamma_half(q + 3)
}

/// vol(B) from the slice integral with w = sin(theta), by adaptive Simpson.
pub fn volume_by_quadrature(q: u32) -> f64 {
    let f = |t: f64| t.cos().powi(q as i32 + 1);
    PI.powi(q as i32) / factorial(q) * adaptive_simpson(&f, -PI / 2.0, PI / 2.0, 1e-15)
}

/// Number of (z, w) in Z^{2q} x Z with |z|^4 + w^2 <= x^4.
pub fn count_points(params: &GroupParams, tables: &ArithTables, x: &Radius) -> Result<u128> {
    if tables.q != params.q {
        return invalid(format!(
            "tables built for q = {}, params have q = {}",
            tables.q, params.q
        ));
    }
    let top = x.floor_x2();
    if top > tables.limit {
        return Err(Error::TableTooSmall {
            needed: top,
            have: tables.limit,
        });
    }
    let a = x.num as u128 * x.num as u128;
    let b = x.den as u128 * x.den as u128;
    let den = x.den as u128;
    let prefix = &tables.r2q_prefix;
    let mut total: u128 = prefix[top as usize] as u128;
    for w in 1..=top as u128 {
        let t = isqrt_u128(a - w * w * b) / den;
        total += 2 * prefix[t as usize] as u128;
    }
    Ok(total)
}

/// Direct enumeration of the integer box; the independent oracle for `count_points`.
pub fn count_points_bruteforce(q: u32, x: &Radius) -> Result<u128> {
    if q < 3 {
        return invalid(format!("q must be >= 3, got {q}"));
    }
    let side = crate::arithmetic::isqrt(x.floor_x2());
    let wmax = x.floor_x2();
    let cells = ((2 * side + 1) as f64).powi(2 * q as i32) * (2 * wmax + 1) as f64;
    if cells > 2e9 {
        return Err(Error::Budget(format!(
            "brute force box has {cells:.3e} cells"
        )));
    }
    let n2 = x.num as u128 * x.num as u128;
    let d2 = x.den as u128 * x.den as u128;
    let s = side as i64;
    let mut z = vec![-s; 2 * q as usize];
    let mut count: u128 = 0;
    loop {
        let norm2: u128 = z.iter().map(|&c| (c * c) as u128).sum();
        let w = wmax as i64;
        for w in -w..=w {
            if (norm2 * norm2 + (w * w) as u128) * d2 <= n2 {
                count += 1;
            }
        }
        let mut i = 0;
        loop {
            if i == z.len() {
                return Ok(count);
            }
            if z[i] < s {
                z[i] += 1;
                break;
            }
            z[i] = -s;
            i += 1;
        }
    }
}

/// One sample of the normalized error.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorSample {
    pub x: f64,
    pub radius: Radius,
    pub count: u128,
    pub normalized_error: f64,
}

/// (count - vol x^{2q+2}) / x^{2q-1}.
pub fn normalized_error(
    params: &GroupParams,
    tables: &ArithTables,
    x: &Radius,
) -> Result<ErrorSample> {
    let count = count_points(params, tables, x)?;
    let x2 = x.x2();
    let main = params.vol * x2.powi(params.q as i32 + 1);
    let err = count as f64 - main;
    let xf = x.x();
    Ok(ErrorSample {
        x: xf,
        radius: *x,
        count,
        normalized_error: err / xf.powi(2 * params.q as i32 - 1),
    })
}
