//! Number theoretic primitives: Mobius and chi_4, sums of two squares (plain and
//! weighted), r_{2q} prefix tables and the coefficient symbols of the phi series.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use crate::error::{invalid, Error, Result};
use crate::numeric::{factorial, pairwise_sum, power_tail_class};

pub fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

pub fn lcm_checked(a: u64, b: u64) -> Option<u64> {
    if a == 0 || b == 0 {
        return Some(0);
    }
    (a / gcd(a, b)).checked_mul(b)
}

/// lcm(1, ..., n).
pub fn lcm_upto(n: u32) -> Result<u64> {
    let mut l = 1u64;
    for k in 1..=n as u64 {
        l = lcm_checked(l, k).ok_or(Error::PeriodOverflow(n))?;
    }
    Ok(l)
}

/// Floor of the square root, exact for every u64.
pub fn isqrt(n: u64) -> u64 {
    if n == 0 {
        return 0;
    }
    let mut r = (n as f64).sqrt() as u64;
    while r.checked_mul(r).is_none_or(|v| v > n) {
        r -= 1;
    }
    while (r + 1).checked_mul(r + 1).is_some_and(|v| v <= n) {
        r += 1;
    }
    r
}

/// Floor of the square root for u128 arguments (Newton iteration after a float start).
pub fn isqrt_u128(n: u128) -> u128 {
    if n <= u64::MAX as u128 {
        return isqrt(n as u64) as u128;
    }
    let mut r = (n as f64).sqrt() as u128;
    if r >= 1 << 52 {
        loop {
            let next = (r + n / r) / 2;
            if next >= r {
                break;
            }
            r = next;
        }
    }
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    r
}

/// Prime factorization by trial division.
pub fn factorize(mut n: u64) -> Vec<(u64, u32)> {
    let mut out = Vec::new();
    let mut p = 2u64;
    while p * p <= n {
        if n.is_multiple_of(p) {
            let mut e = 0;
            while n.is_multiple_of(p) {
                n /= p;
                e += 1;
            }
            out.push((p, e));
        }
        p += if p == 2 { 1 } else { 2 };
    }
    if n > 1 {
        out.push((n, 1));
    }
    out
}

pub fn mobius(n: u64) -> i8 {
    assert!(n >= 1, "mobius needs n >= 1");
    let f = factorize(n);
    if f.iter().any(|&(_, e)| e > 1) {
        0
    } else if f.len().is_multiple_of(2) {
        1
    } else {
        -1
    }
}

/// The non-principal character modulo 4; defined for all integers.
pub fn chi4(n: i64) -> i8 {
    match n.rem_euclid(4) {
        1 => 1,
        3 => -1,
        _ => 0,
    }
}

/// Number of (a, b) in Z^2 with a^2 + b^2 = n.
pub fn r2(n: u64) -> u64 {
    if n == 0 {
        return 1;
    }
    let mut v = 4;
    for (p, e) in factorize(n) {
        match p % 4 {
            1 => v *= e as u64 + 1,
            3 if e % 2 == 1 => return 0,
            _ => {}
        }
    }
    v
}

/// All (a, b) in Z^2 with a^2 + b^2 = m, ascending in a then b.
pub fn r2_reps(m: u64) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    let s = isqrt(m) as i64;
    for a in -s..=s {
        let rest = m - (a * a) as u64;
        let b = isqrt(rest) as i64;
        if (b * b) as u64 == rest {
            if b == 0 {
                out.push((a, 0));
            } else {
                out.push((a, -b));
                out.push((a, b));
            }
        }
    }
    out
}

#[inline]
pub(crate) fn rep_weight(a: i64, m: u64, q: u32) -> f64 {
    if a == 0 {
        return 0.0;
    }
    let ratio = (a * a) as f64 / m as f64;
    let e = q - 1;
    if e.is_multiple_of(2) {
        ratio.powi(e as i32 / 2)
    } else {
        ratio.sqrt().powi(e as i32)
    }
}

/// r_2(m, d; q): representations m = a^2 + b^2 with d | b, weighted by (|a|/sqrt m)^{q-1}.
pub fn r2_weighted(m: u64, d: u64, q: u32) -> f64 {
    assert!(m >= 1 && d >= 1);
    let mut s = 0.0;
    for (a, b) in r2_reps(m) {
        if b % d as i64 == 0 {
            s += rep_weight(a, m, q);
        }
    }
    s
}

/// The chi_4(|a|) twisted variant of [`r2_weighted`].
pub fn r2_weighted_chi(m: u64, d: u64, q: u32) -> f64 {
    assert!(m >= 1 && d >= 1);
    let mut s = 0.0;
    for (a, b) in r2_reps(m) {
        if b % d as i64 == 0 {
            s += chi4(a.abs()) as f64 * rep_weight(a, m, q);
        }
    }
    s
}

/// Weighted representation counts of a fixed n for every modulus d in 1..=d_max.
///
/// `axis` holds the weight carried by representations with b = 0; those divide
/// every modulus, so callers extending d past d_max use it for the analytic tail.
#[derive(Clone, Debug)]
pub struct WeightedCounts {
    pub plain: Vec<f64>,
    pub twisted: Vec<f64>,
    pub axis_plain: f64,
    pub axis_twisted: f64,
}

impl WeightedCounts {
    pub fn new(n: u64, q: u32, d_max: u64) -> Self {
        let mut plain = vec![0.0; d_max as usize + 1];
        let mut twisted = vec![0.0; d_max as usize + 1];
        let mut axis_plain = 0.0;
        let mut axis_twisted = 0.0;
        for (a, b) in r2_reps(n) {
            let w = rep_weight(a, n, q);
            if w == 0.0 {
                continue;
            }
            let wc = chi4(a.abs()) as f64 * w;
            if b == 0 {
                axis_plain += w;
                axis_twisted += wc;
                for d in 1..=d_max as usize {
                    plain[d] += w;
                    twisted[d] += wc;
                }
            } else {
                let bb = b.unsigned_abs();
                for d in 1..=d_max.min(bb) {
                    if bb % d == 0 {
                        plain[d as usize] += w;
                        twisted[d as usize] += wc;
                    }
                }
            }
        }
        WeightedCounts {
            plain,
            twisted,
            axis_plain,
            axis_twisted,
        }
    }
}

/// The group-parameter dependent symbols xi, epsilon, the frak r coefficients and rho constants.
#[derive(Clone, Debug)]
pub struct CoefficientSymbols {
    pub q: u32,
    pub odd: bool,
    pub rho_q: f64,
    pub rho_chi: f64,
}

impl CoefficientSymbols {
    pub fn new(q: u32) -> Result<Self> {
        if q < 3 {
            return invalid(format!("q must be >= 3, got {q}"));
        }
        Ok(CoefficientSymbols {
            q,
            odd: q % 2 == 1,
            rho_q: rho_q(q),
            rho_chi: rho_chi(q),
        })
    }

    /// xi(d; q), meaningful for even q.
    pub fn xi(&self, d: u64) -> f64 {
        xi(d, self.q)
    }

    pub fn epsilon(&self, d: u64) -> i64 {
        epsilon(d, self.q)
    }

    pub fn frak_r(&self, m: u64, k: u64, d: u64) -> f64 {
        frak_r(m, k, d, self.q)
    }
}

pub fn xi(d: u64, q: u32) -> f64 {
    let half = (q / 2) as i32;
    let mut v = 0.0;
    if d % 2 == 1 {
        v += 1.0;
    } else {
        v += (-1f64).powi(half + 1);
    }
    if d.is_multiple_of(4) {
        v += (-1f64).powi(half) * 2f64.powi(q as i32);
    }
    v
}

pub fn epsilon(d: u64, q: u32) -> i64 {
    if q % 2 == 1 && d.is_multiple_of(2) {
        -1
    } else {
        1
    }
}

/// frak r(m k^2, d; q).
pub fn frak_r(m: u64, k: u64, d: u64, q: u32) -> f64 {
    if gcd(k, d) != 1 || d % 4 == 2 {
        return 0.0;
    }
    let n = m * k * k;
    let two_q = 2f64.powi(q as i32);
    if d % 2 == 1 {
        let w = r2_weighted(n, d, q);
        if q.is_multiple_of(2) {
            w
        } else {
            chi4(d as i64) as f64 * w
        }
    } else if q.is_multiple_of(2) {
        (-1f64).powi((q / 2) as i32) * two_q * r2_weighted(n, d, q)
    } else {
        (-1f64).powi(((q - 1) / 2) as i32) * two_q * r2_weighted_chi(n, d, q)
    }
}

/// frak r evaluated from precomputed counts of n = m k^2 (d must be within the arrays).
pub fn frak_r_from(counts: &WeightedCounts, k: u64, d: u64, q: u32) -> f64 {
    if gcd(k, d) != 1 || d % 4 == 2 {
        return 0.0;
    }
    let two_q = 2f64.powi(q as i32);
    let (p, t) = (counts.plain[d as usize], counts.twisted[d as usize]);
    if d % 2 == 1 {
        if q.is_multiple_of(2) {
            p
        } else {
            chi4(d as i64) as f64 * p
        }
    } else if q.is_multiple_of(2) {
        (-1f64).powi((q / 2) as i32) * two_q * p
    } else {
        (-1f64).powi(((q - 1) / 2) as i32) * two_q * t
    }
}

const SERIES_TERMS: u64 = 1_000_000;

/// zeta(s) for integer s >= 3 by direct summation to 10^6 plus the Euler-Maclaurin tail.
pub fn zeta_partial(s: u32) -> f64 {
    static CACHE: [OnceLock<f64>; 64] = [const { OnceLock::new() }; 64];
    match CACHE.get(s as usize) {
        Some(c) => *c.get_or_init(|| zeta_direct(s)),
        None => zeta_direct(s),
    }
}

fn zeta_direct(s: u32) -> f64 {
    assert!(s >= 2);
    let sf = s as f64;
    let n = SERIES_TERMS as f64;
    let mut terms: Vec<f64> = (1..=SERIES_TERMS)
        .rev()
        .map(|k| (k as f64).powi(-(s as i32)))
        .collect();
    terms.insert(
        0,
        n.powf(1.0 - sf) / (sf - 1.0) - 0.5 * n.powf(-sf) + sf * n.powf(-sf - 1.0) / 12.0,
    );
    pairwise_sum(&terms)
}

/// L(s, chi_4) for integer s >= 2 by direct summation of the alternating series plus half the next term.
pub fn l_chi_partial(s: u32) -> f64 {
    static CACHE: [OnceLock<f64>; 64] = [const { OnceLock::new() }; 64];
    match CACHE.get(s as usize) {
        Some(c) => *c.get_or_init(|| l_chi_direct(s)),
        None => l_chi_direct(s),
    }
}

fn l_chi_direct(s: u32) -> f64 {
    assert!(s >= 2);
    let mut terms: Vec<f64> = (0..SERIES_TERMS)
        .rev()
        .map(|j| {
            let t = ((2 * j + 1) as f64).powi(-(s as i32));
            if j % 2 == 0 {
                t
            } else {
                -t
            }
        })
        .collect();
    let next = ((2 * SERIES_TERMS + 1) as f64).powi(-(s as i32));
    terms.insert(0, 0.5 * next);
    pairwise_sum(&terms)
}

pub fn rho_q(q: u32) -> f64 {
    PI.powi(q as i32) / ((1.0 - 2f64.powi(-(q as i32))) * factorial(q - 1) * zeta_partial(q))
}

pub fn rho_chi(q: u32) -> f64 {
    PI.powi(q as i32) / (2f64.powi(q as i32 - 1) * factorial(q - 1) * l_chi_partial(q))
}

/// r_{2q} prefix tables and small-argument helpers.
#[derive(Clone, Debug)]
pub struct ArithTables {
    pub q: u32,
    pub limit: u64,
    /// entry T holds the number of z in Z^{2q} with |z|^2 <= T
    pub r2q_prefix: Vec<u64>,
    pub mobius: Vec<i8>,
    /// representations a^2 + b^2 = m for m <= r2_reps.len() - 1
    pub r2_reps: Vec<Vec<(i64, i64)>>,
}

/// Default memory budget for table construction.
pub const TABLE_BUDGET_BYTES: u64 = 1 << 31;

const CACHE_MAGIC: &[u8; 8] = b"HCR2QPX1";

impl ArithTables {
    pub fn r2q(&self, m: u64) -> u64 {
        if m == 0 {
            self.r2q_prefix[0]
        } else {
            self.r2q_prefix[m as usize] - self.r2q_prefix[m as usize - 1]
        }
    }

    /// Writes the prefix table in the binary cache format.
    pub fn save_cache(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(CACHE_MAGIC)?;
        f.write_all(&self.q.to_le_bytes())?;
        f.write_all(&self.limit.to_le_bytes())?;
        for v in &self.r2q_prefix {
            f.write_all(&v.to_le_bytes())?;
        }
        f.flush()?;
        Ok(())
    }

    /// Reads a cache file; returns None when it holds a different q or a smaller N.
    pub fn load_cache(path: &Path, q: u32, n: u64) -> Result<Option<ArithTables>> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::Cache(format!("bad magic in {}", path.display())));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        f.read_exact(&mut b4)?;
        f.read_exact(&mut b8)?;
        let (fq, fnn) = (u32::from_le_bytes(b4), u64::from_le_bytes(b8));
        if fq != q || fnn < n {
            return Ok(None);
        }
        let mut prefix = Vec::with_capacity(n as usize + 1);
        for _ in 0..=n {
            f.read_exact(&mut b8)?;
            prefix.push(u64::from_le_bytes(b8));
        }
        if prefix[0] != 1 || prefix.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Cache(format!(
                "corrupt prefix table in {}",
                path.display()
            )));
        }
        Ok(Some(Self::from_prefix(q, n, prefix)))
    }

    fn from_prefix(q: u32, n: u64, prefix: Vec<u64>) -> Self {
        let small = n.min(4096);
        ArithTables {
            q,
            limit: n,
            r2q_prefix: prefix,
            mobius: mobius_sieve(n),
            r2_reps: (0..=small).map(r2_reps).collect(),
        }
    }
}

/// Mobius values for 0..=n (index 0 unused, set to 0).
pub fn mobius_sieve(n: u64) -> Vec<i8> {
    let n = n as usize;
    let mut mu = vec![1i8; n + 1];
    let mut composite = vec![false; n + 1];
    mu[0] = 0;
    for p in 2..=n {
        if composite[p] {
            continue;
        }
        let mut j = p;
        while j <= n {
            if j > p {
                composite[j] = true;
            }
            mu[j] = -mu[j];
            j += p;
        }
        let pp = p.saturating_mul(p);
        let mut j = pp;
        while j <= n {
            mu[j] = 0;
            j += pp;
        }
    }
    mu
}

/// Builds exact r_{2q}(m) prefix sums for m <= n within the default memory budget.
pub fn build_r2q_prefix(q: u32, n: u64) -> Result<ArithTables> {
    build_r2q_prefix_with_budget(q, n, TABLE_BUDGET_BYTES)
}

pub fn build_r2q_prefix_with_budget(q: u32, n: u64, budget_bytes: u64) -> Result<ArithTables> {
    if q < 3 {
        return invalid(format!("q must be >= 3, got {q}"));
    }
    if n < 1 {
        return invalid("table limit must be >= 1");
    }
    let need = (n + 1).saturating_mul(8 * 2 + 2);
    if need > budget_bytes {
        return Err(Error::Budget(format!(
            "table for N = {n} needs {need} bytes, budget is {budget_bytes}"
        )));
    }
    let prefix = r2q_prefix_counts(q, n)?;
    Ok(ArithTables::from_prefix(q, n, prefix))
}

/// Prefix sums of r_{2q}: r_2 by two single-square steps, then "add two more squares" q - 1 times.
fn r2q_prefix_counts(q: u32, n: u64) -> Result<Vec<u64>> {
    let len = n as usize + 1;
    let mut cur = vec![0u64; len];
    cur[0] = 1;
    let mut next = vec![0u64; len];
    let mut overflow = false;
    for _ in 0..2 * q {
        next.copy_from_slice(&cur);
        let mut a = 1usize;
        while a * a < len {
            let sq = a * a;
            let (dst, src) = (&mut next[sq..], &cur[..len - sq]);
            for (x, &y) in dst.iter_mut().zip(src) {
                let (t, o1) = y.overflowing_mul(2);
                let (s, o2) = x.overflowing_add(t);
                *x = s;
                overflow |= o1 | o2;
            }
            a += 1;
        }
        std::mem::swap(&mut cur, &mut next);
    }
    if overflow {
        return Err(Error::Overflow(format!(
            "r_{}(m) exceeds u64 below N = {n}",
            2 * q
        )));
    }
    let mut acc = 0u64;
    for v in cur.iter_mut() {
        acc = acc.checked_add(*v).ok_or_else(|| {
            Error::Overflow(format!("r_{} prefix exceeds u64 below N = {n}", 2 * q))
        })?;
        *v = acc;
    }
    Ok(cur)
}

/// Tables from the cache directory when present and large enough, otherwise built and stored.
pub fn load_or_build(q: u32, n: u64, cache_dir: Option<&Path>) -> Result<ArithTables> {
    if let Some(dir) = cache_dir {
        let path = dir.join(format!("r2q_q{q}.bin"));
        if path.exists() {
            if let Some(t) = ArithTables::load_cache(&path, q, n)? {
                return Ok(t);
            }
        }
        let t = build_r2q_prefix(q, n)?;
        std::fs::create_dir_all(dir)?;
        t.save_cache(&path)?;
        return Ok(t);
    }
    build_r2q_prefix(q, n)
}

/// Direct count of z in Z^{2q} with |z|^2 = m (small m only).
pub fn r2q_bruteforce(q: u32, m: u64) -> u64 {
    fn rec(dims: u32, rest: u64, memo: &mut std::collections::HashMap<(u32, u64), u64>) -> u64 {
        if dims == 0 {
            return (rest == 0) as u64;
        }
        if let Some(&v) = memo.get(&(dims, rest)) {
            return v;
        }
        let s = isqrt(rest) as i64;
        let v = (-s..=s)
            .map(|a| rec(dims - 1, rest - (a * a) as u64, memo))
            .sum();
        memo.insert((dims, rest), v);
        v
    }
    rec(2 * q, m, &mut std::collections::HashMap::new())
}

// ---------------------------------------------------------------------------
// Majorants used by the certified truncation bounds.

fn primes_upto_limit() -> &'static [u32] {
    static PRIMES: OnceLock<Vec<u32>> = OnceLock::new();
    PRIMES.get_or_init(|| {
        let n = PRIME_LIMIT as usize;
        let mut sieve = vec![true; n + 1];
        sieve[0] = false;
        sieve[1] = false;
        let mut i = 2;
        while i * i <= n {
            if sieve[i] {
                let mut j = i * i;
                while j <= n {
                    sieve[j] = false;
                    j += i;
                }
            }
            i += 1;
        }
        (0..=n).filter(|&k| sieve[k]).map(|k| k as u32).collect()
    })
}

const PRIME_LIMIT: u64 = 4_000_000;

/// A non-negative multiplicative function given by its values on prime powers.
pub trait PrimePowerFn: Sync {
    fn at(&self, p: u64, v: u32) -> f64;
    /// Upper bound for `at(p, v)` over all primes p.
    fn max_at(&self, v: u32) -> f64;

    fn eval(&self, n: u64) -> f64 {
        factorize(n)
            .into_iter()
            .map(|(p, v)| self.at(p, v))
            .product()
    }
}

/// h(k) = product over p = 1 (mod 4) of (2 v_p(k) + 1), raised to `power`.
///
/// For square-free m, r_2(m k^2) <= r_2(m) h(k).
pub struct SquareMajorant {
    pub power: i32,
}

impl PrimePowerFn for SquareMajorant {
    fn at(&self, p: u64, v: u32) -> f64 {
        if p % 4 == 1 {
            ((2 * v + 1) as f64).powi(self.power)
        } else {
            1.0
        }
    }
    fn max_at(&self, v: u32) -> f64 {
        ((2 * v + 1) as f64).powi(self.power)
    }
}

/// g(m) = r_2(m)^power / 4^power on square-free m, zero on non-square-free m.
pub struct SquarefreeR2 {
    pub power: i32,
}

impl PrimePowerFn for SquarefreeR2 {
    fn at(&self, p: u64, v: u32) -> f64 {
        if v >= 2 {
            0.0
        } else if p % 4 == 1 {
            2f64.powi(self.power)
        } else if p == 2 {
            1.0
        } else {
            0.0
        }
    }
    fn max_at(&self, v: u32) -> f64 {
        if v >= 2 {
            0.0
        } else {
            2f64.powi(self.power)
        }
    }
}

/// Upper bound on sum over n of f(n) n^{-s} (the full Dirichlet series) via its Euler product.
pub fn dirichlet_series_upper<F: PrimePowerFn>(f: &F, s: f64) -> f64 {
    assert!(s > 1.0);
    let primes = primes_upto_limit();
    let mut log_sum = 0.0;
    for &p in primes {
        let p = p as u64;
        let pf = p as f64;
        let mut factor = 1.0;
        let mut pw = 1.0;
        for v in 1..200u32 {
            pw *= pf.powf(-s);
            let t = f.at(p, v) * pw;
            factor += t;
            if pw < 1e-22 {
                break;
            }
        }
        log_sum += factor.ln();
    }
    // primes above the sieve: sum_{p>P} p^{-vs} <= 1.26 vs / ((vs - 1) ln P) P^{1 - vs}
    let big_p = PRIME_LIMIT as f64;
    let mut extra = 0.0;
    for v in 1..40u32 {
        let vs = v as f64 * s;
        let bound = 1.26 * vs / ((vs - 1.0) * big_p.ln()) * big_p.powf(1.0 - vs);
        extra += f.max_at(v) * bound;
        if bound < 1e-30 {
            break;
        }
    }
    (log_sum + extra).exp()
}

/// Upper bound on sum_{n > k} f(n) n^{-s}.
pub fn dirichlet_tail_upper<F: PrimePowerFn>(f: &F, s: f64, k: u64) -> f64 {
    let total = dirichlet_series_upper(f, s);
    let head: Vec<f64> = (1..=k)
        .rev()
        .map(|n| f.eval(n) * (n as f64).powf(-s))
        .collect();
    let head = pairwise_sum(&head);
    (total - head).max(0.0) + 4.0 * f64::EPSILON * total
}

/// Sum of w(d) d^{-s} over d > n, for weights constant on residue classes mod 4:
/// `w = [w(d = 0 mod 4), w(1 mod 4), w(2 mod 4), w(3 mod 4)]` with w(1) = w(3).
pub fn class_weighted_tail(w: [f64; 4], s: f64, n: u64) -> f64 {
    debug_assert!(w[1] == w[3]);
    let mut t = 0.0;
    if w[1] != 0.0 {
        t += w[1] * power_tail_class(s, n, 1, 2);
    }
    if w[2] != 0.0 {
        t += w[2] * power_tail_class(s, n, 2, 4);
    }
    if w[0] != 0.0 {
        t += w[0] * power_tail_class(s, n, 0, 4);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_values() {
        assert_eq!(mobius(1), 1);
        assert_eq!(mobius(4), 0);
        assert_eq!(mobius(6), 1);
        assert_eq!(mobius(30), -1);
        assert_eq!(chi4(1), 1);
        assert_eq!(chi4(3), -1);
        assert_eq!(chi4(2), 0);
        assert_eq!(chi4(-1), -1);
        assert_eq!(r2(5), 8);
        assert_eq!(r2(25), 12);
        assert_eq!(r2(3), 0);
    }

    #[test]
    fn weighted_examples() {
        assert!((r2_weighted(5, 1, 3) - 4.0).abs() < 1e-14);
        assert!((r2_weighted(5, 2, 3) - 0.8).abs() < 1e-14);
        assert_eq!(r2_weighted(3, 1, 3), 0.0);
        assert!((r2_weighted_chi(5, 1, 3) - 0.8).abs() < 1e-14);
        assert_eq!(r2_weighted_chi(3, 1, 3), 0.0);
    }

    #[test]
    fn frak_r_examples() {
        assert_eq!(frak_r(5, 2, 2, 4), 0.0);
        assert_eq!(frak_r(5, 1, 2, 4), 0.0);
        let v = frak_r(5, 1, 4, 3);
        let direct: f64 = r2_reps(5)
            .into_iter()
            .filter(|&(_, b)| b % 4 == 0)
            .map(|(a, _)| chi4(a.abs()) as f64 * (a.abs() as f64 / 5f64.sqrt()).powi(2))
            .sum();
        assert!((v + 8.0 * direct).abs() < 1e-14);
        assert!((v + 8.0 * r2_weighted_chi(5, 4, 3)).abs() < 1e-14);
    }

    #[test]
    fn table_small() {
        let t = build_r2q_prefix(3, 60).unwrap();
        assert_eq!(t.r2q(0), 1);
        assert_eq!(t.r2q(1), 12);
        assert_eq!(t.r2q(2), 60);
        for q in 3..=5 {
            let t = build_r2q_prefix(q, 50).unwrap();
            for m in 0..=50 {
                assert_eq!(t.r2q(m), r2q_bruteforce(q, m), "q={q} m={m}");
            }
        }
    }

    #[test]
    fn budget_error() {
        assert!(matches!(
            build_r2q_prefix_with_budget(3, 1_000_000, 1000),
            Err(Error::Budget(_))
        ));
    }

    #[test]
    fn overflow_detected() {
        assert!(matches!(build_r2q_prefix(8, 400), Err(Error::Overflow(_))));
    }

    #[test]
    fn zeta_and_l() {
        assert!((zeta_partial(4) - PI.powi(4) / 90.0).abs() < 1e-14);
        assert!((l_chi_partial(3) - PI.powi(3) / 32.0).abs() < 1e-14);
        assert!((l_chi_partial(3) - 0.968_946_146_259).abs() < 1e-12);
    }

    #[test]
    fn rho_identity() {
        for q in 3..=8 {
            let lhs =
                rho_q(q) * (1.0 - 2f64.powi(-(q as i32))) * zeta_partial(q) / PI.powi(q as i32);
            assert!((lhs - 1.0 / factorial(q - 1)).abs() < 1e-15);
        }
    }

    #[test]
    fn xi_values() {
        // q = 4: odd 1, 2 mod 4: -1, 0 mod 4: -1 + 16
        assert_eq!(xi(3, 4), 1.0);
        assert_eq!(xi(2, 4), -1.0);
        assert_eq!(xi(4, 4), 15.0);
        assert_eq!(xi(2, 6), 1.0);
        assert_eq!(xi(8, 6), 1.0 - 64.0);
    }

    #[test]
    fn majorant_holds() {
        for m in [1u64, 2, 5, 10, 13, 65] {
            for k in 1..200u64 {
                let bound = r2(m) as f64 * SquareMajorant { power: 1 }.eval(k);
                assert!(r2(m * k * k) as f64 <= bound, "m={m} k={k}");
            }
        }
    }

    #[test]
    fn dirichlet_tail_is_upper() {
        let f = SquareMajorant { power: 1 };
        let s = 3.0;
        let direct: Vec<f64> = (101..200_000u64)
            .rev()
            .map(|n| f.eval(n) * (n as f64).powf(-s))
            .collect();
        let direct = pairwise_sum(&direct);
        let bound = dirichlet_tail_upper(&f, s, 100);
        assert!(
            bound >= direct && bound < direct * 1.01 + 1e-9,
            "{bound} {direct}"
        );
    }

    #[test]
    fn cache_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let t = build_r2q_prefix(3, 500).unwrap();
        let p = dir.path().join("t.bin");
        t.save_cache(&p).unwrap();
        let u = ArithTables::load_cache(&p, 3, 400).unwrap().unwrap();
        assert_eq!(&u.r2q_prefix[..], &t.r2q_prefix[..=400]);
        assert!(ArithTables::load_cache(&p, 4, 400).unwrap().is_none());
        assert!(ArithTables::load_cache(&p, 3, 600).unwrap().is_none());
    }

    #[test]
    fn mobius_sieve_agrees() {
        let mu = mobius_sieve(2000);
        for n in 1..=2000u64 {
            assert_eq!(mu[n as usize], mobius(n));
        }
    }

    #[test]
    fn weighted_counts_match() {
        for n in [1u64, 5, 25, 50, 65, 125, 1105] {
            let c = WeightedCounts::new(n, 3, 12);
            for d in 1..=12u64 {
                assert!((c.plain[d as usize] - r2_weighted(n, d, 3)).abs() < 1e-12);
                assert!((c.twisted[d as usize] - r2_weighted_chi(n, d, 3)).abs() < 1e-12);
            }
        }
    }
}
