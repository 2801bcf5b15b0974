//! The limiting distribution: factor averages L(alpha, m), the characteristic function
//! Phi_q as their product, the density P_q by Fourier inversion, its CDF and moments.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::moments::{
    component_vanishes, cubic_shape_tail, q_analytic, variance_series, MomentValue, GRID_TOL,
    MAX_GRID,
};
use crate::numeric::pairwise_sum;
use crate::phi::PhiSeries;

/// Taylor order of the in-bin expansion of exp(2 pi i alpha u).
const TAYLOR: usize = 14;
/// Bin width for component values.
const BIN: f64 = 0.01;
/// Largest |alpha| for which the binned expansion keeps full double precision.
pub const ALPHA_LIMIT: f64 = 20.0;

/// Values of one component on an exact-period grid, binned with the power sums of the
/// offsets from each bin centre so that averages of exp(2 pi i alpha phi) cost one pass over bins.
#[derive(Clone, Debug)]
pub struct ComponentLaw {
    pub m: u64,
    pub grid: usize,
    /// last change of the checked averages under grid doubling
    pub stability: f64,
    pub mean_square: f64,
    pub third_moment: f64,
    lo: f64,
    sums: Vec<[f64; TAYLOR + 1]>,
    zero: bool,
}

impl ComponentLaw {
    fn from_values(m: u64, values: &[f64]) -> Self {
        let n = values.len();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min) - BIN;
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + BIN;
        let bins = ((hi - lo) / BIN).ceil() as usize + 1;
        let mut sums = vec![[0.0; TAYLOR + 1]; bins];
        for &g in values {
            let b = ((g - lo) / BIN).floor() as usize;
            let u = g - (lo + (b as f64 + 0.5) * BIN);
            let slot = &mut sums[b];
            let mut p = 1.0;
            for s in slot.iter_mut() {
                *s += p;
                p *= u;
            }
        }
        let sq: Vec<f64> = values.iter().map(|g| g * g).collect();
        let cu: Vec<f64> = values.iter().map(|g| g * g * g).collect();
        ComponentLaw {
            m,
            grid: n,
            stability: 0.0,
            mean_square: pairwise_sum(&sq) / n as f64,
            third_moment: pairwise_sum(&cu) / n as f64,
            lo,
            sums,
            zero: values.iter().all(|&g| g == 0.0),
        }
    }

    /// The law of an identically zero component.
    pub fn zero(m: u64) -> Self {
        ComponentLaw::from_values(m, &[0.0])
    }

    /// Mean of exp(2 pi i alpha phi) over the grid.
    pub fn char_value(&self, alpha: Complex64) -> Complex64 {
        if self.zero {
            return Complex64::new(1.0, 0.0);
        }
        let z = Complex64::new(0.0, 2.0 * PI) * alpha;
        let mut fact = [1.0; TAYLOR + 1];
        for p in 1..=TAYLOR {
            fact[p] = fact[p - 1] * p as f64;
        }
        let total: f64 = self.sums.iter().map(|s| s[0]).sum();
        let mut acc = Complex64::new(0.0, 0.0);
        for (b, s) in self.sums.iter().enumerate() {
            if s[0] == 0.0 {
                continue;
            }
            let c = self.lo + (b as f64 + 0.5) * BIN;
            let mut poly = Complex64::new(0.0, 0.0);
            for p in (0..=TAYLOR).rev() {
                poly = poly * z + s[p] / fact[p];
            }
            acc += (z * c).exp() * poly;
        }
        acc / total
    }
}

fn sample_series(series: &PhiSeries, n: usize, planner: &mut FftPlanner<f64>) -> Result<Vec<f64>> {
    let fft = planner.plan_fft_inverse(n);
    series.grid_values_with(n, &fft)
}

/// Check points up to the sigma where exp(-2 pi^2 sigma^2 E[phi^2]) falls to 1e-6.
fn check_points(mean_square: f64) -> Vec<f64> {
    let top = (6.0 * 10f64.ln() / (2.0 * PI * PI * mean_square.max(1e-300)))
        .sqrt()
        .min(ALPHA_LIMIT);
    vec![top / 8.0, top / 4.0, top / 2.0, top]
}

/// Law of the resummed component with d <= D, k <= K over one period, the grid doubled until
/// the averages at `check` move by less than the refinement tolerance. Without explicit
/// points the check runs up to where the component's Gaussian proxy reaches 1e-6.
pub fn component_law(q: u32, m: u64, d: u32, k: u32, check: &[f64]) -> Result<ComponentLaw> {
    if component_vanishes(m) {
        return Ok(ComponentLaw::zero(m));
    }
    let series = PhiSeries::resummed(q, m, d, k)?;
    if series.is_zero() {
        return Ok(ComponentLaw::zero(m));
    }
    let top = series.max_harmonic()?;
    let mut n = (2 * top + 1).next_power_of_two().max(64) as usize;
    let mut planner = FftPlanner::new();
    let mut law = ComponentLaw::from_values(m, &sample_series(&series, n, &mut planner)?);
    let check = if check.is_empty() {
        check_points(law.mean_square)
    } else {
        check.to_vec()
    };
    loop {
        n *= 2;
        if n > MAX_GRID {
            return Err(Error::Budget(format!(
                "component grid for m = {m} exceeds {MAX_GRID} points"
            )));
        }
        let next = ComponentLaw::from_values(m, &sample_series(&series, n, &mut planner)?);
        let diff = check
            .iter()
            .map(|&s| {
                (next.char_value(Complex64::new(s, 0.0)) - law.char_value(Complex64::new(s, 0.0)))
                    .norm()
            })
            .fold(0.0, f64::max);
        law = next;
        law.stability = diff;
        if diff < GRID_TOL {
            return Ok(law);
        }
    }
}

/// L(alpha, m): the average of exp(2 pi i alpha phi_{q,m}) with phi truncated to d <= D, k <= K.
pub fn char_factor(q: u32, alpha: Complex64, m: u64, d: u32, k: u32) -> Result<Complex64> {
    if alpha.norm() > ALPHA_LIMIT {
        return invalid(format!("|alpha| must be <= {ALPHA_LIMIT}"));
    }
    let law = component_law(q, m, d, k, &[alpha.norm().max(0.05)])?;
    Ok(law.char_value(alpha))
}

/// Truncation parameters of the distribution computation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionConfig {
    pub d: u32,
    pub k: u32,
    pub m_max: u64,
    /// sigma spacing of the inversion quadrature
    pub sigma_step: f64,
    /// inversion cutoff A; chosen from |Phi| when absent
    pub cutoff: Option<f64>,
    pub x_min: f64,
    pub x_max: f64,
    pub x_step: f64,
    /// length of the variance series
    pub variance_n: u64,
    /// replace the factors m > M by a Gaussian of the missing variance
    pub complete_tail: bool,
}

impl Default for DistributionConfig {
    fn default() -> Self {
        DistributionConfig {
            d: 12,
            k: 32,
            m_max: 60,
            sigma_step: 0.002,
            cutoff: None,
            x_min: -60.0,
            x_max: 60.0,
            x_step: 0.25,
            variance_n: 1 << 22,
            complete_tail: true,
        }
    }
}

impl DistributionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.k == 0 || self.m_max == 0 {
            return invalid("D, K and M must be >= 1");
        }
        if !(self.sigma_step > 0.0 && self.x_step > 0.0 && self.x_max > self.x_min) {
            return invalid("steps must be positive and x_max > x_min");
        }
        if let Some(a) = self.cutoff {
            if a.is_nan() || a <= 0.0 || a > ALPHA_LIMIT {
                return invalid(format!("cutoff A must lie in (0, {ALPHA_LIMIT}]"));
            }
        }
        let span = (self.x_max - self.x_min).max(self.x_max.abs().max(self.x_min.abs()) * 2.0);
        if 1.0 / self.sigma_step < 2.0 * span {
            return invalid("sigma step too coarse: 1/step must exceed twice the x range");
        }
        Ok(())
    }
}

/// Phi_q as a product of component laws for m <= M, optionally completed by a Gaussian
/// factor carrying the variance of the components m > M.
#[derive(Clone, Debug)]
pub struct CharFunction {
    pub q: u32,
    pub d: u32,
    pub k: u32,
    pub m_max: u64,
    pub laws: Vec<ComponentLaw>,
    pub variance: MomentValue,
    /// variance not carried by the laws
    pub v_rest: f64,
    pub complete_tail: bool,
}

impl CharFunction {
    pub fn new(q: u32, cfg: &DistributionConfig) -> Result<Self> {
        let variance = variance_series(q, cfg.variance_n)?;
        Self::with_variance(q, cfg, variance)
    }

    pub fn with_variance(q: u32, cfg: &DistributionConfig, variance: MomentValue) -> Result<Self> {
        cfg.validate()?;
        let laws: Vec<Result<ComponentLaw>> = (1..=cfg.m_max)
            .filter(|&m| !component_vanishes(m))
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|m| component_law(q, m, cfg.d, cfg.k, &[]))
            .collect();
        let laws = laws.into_iter().collect::<Result<Vec<_>>>()?;
        let carried = pairwise_sum(&laws.iter().map(|l| l.mean_square).collect::<Vec<_>>());
        let v_rest = if cfg.complete_tail {
            (variance.value - carried).max(0.0)
        } else {
            0.0
        };
        Ok(CharFunction {
            q,
            d: cfg.d,
            k: cfg.k,
            m_max: cfg.m_max,
            laws,
            variance,
            v_rest,
            complete_tail: cfg.complete_tail,
        })
    }

    /// Product of the factors m <= M, without completion.
    pub fn eval_truncated(&self, alpha: Complex64) -> Complex64 {
        self.laws
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, l| acc * l.char_value(alpha))
    }

    pub fn eval(&self, alpha: Complex64) -> Complex64 {
        self.eval_truncated(alpha) * (-2.0 * PI * PI * alpha * alpha * self.v_rest).exp()
    }

    /// 2 pi^2 sigma^2 V_rest: the size of log of the factors beyond M to second order.
    pub fn tail_factor_bound(&self, sigma: f64) -> f64 {
        2.0 * PI * PI * sigma * sigma * self.v_rest
    }

    /// Mean square carried by the laws.
    pub fn carried_variance(&self) -> f64 {
        pairwise_sum(&self.laws.iter().map(|l| l.mean_square).collect::<Vec<_>>())
    }

    /// Third moment carried by the laws.
    pub fn carried_third_moment(&self) -> f64 {
        pairwise_sum(&self.laws.iter().map(|l| l.third_moment).collect::<Vec<_>>())
    }
}

/// Phi_q(sigma) with the default truncation apart from M.
pub fn char_function(q: u32, sigma: f64, m_max: u64, d: u32, k: u32) -> Result<(Complex64, f64)> {
    let cfg = DistributionConfig {
        d,
        k,
        m_max,
        ..DistributionConfig::default()
    };
    let cf = CharFunction::new(q, &cfg)?;
    Ok((
        cf.eval(Complex64::new(sigma, 0.0)),
        cf.tail_factor_bound(sigma),
    ))
}

/// Error budget of a density computation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DensityErrors {
    /// bound on the inversion integrand beyond the cutoff
    pub cutoff: f64,
    /// effect of the component grid refinement on P
    pub grid: f64,
    /// uncertainty of the third moment carried by the approximation
    pub third_moment: f64,
    /// resulting pointwise estimate for P
    pub pointwise: f64,
}

/// A density sampled on an x grid, with the characteristic function samples it came from.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensityGrid {
    pub q: u32,
    pub config: DistributionConfig,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub step: f64,
    pub sigma_step: f64,
    pub cutoff: f64,
    /// Phi at sigma_j = j * sigma_step, j = 0..=cutoff/sigma_step
    pub phi: Vec<(f64, f64)>,
    pub xs: Vec<f64>,
    pub p: Vec<f64>,
    pub variance: MomentValue,
    pub v_rest: f64,
    pub errors: DensityErrors,
}

/// Largest |G'''| for the centred Gaussian density of variance v.
fn gaussian_third_derivative_max(v: f64) -> f64 {
    0.551 / (v * v)
}

/// P_q on the configured x grid by trapezoid inversion of Phi over [-A, A].
pub fn density(q: u32, cfg: &DistributionConfig) -> Result<DensityGrid> {
    let cf = CharFunction::new(q, cfg)?;
    density_from(&cf, cfg)
}

pub fn density_from(cf: &CharFunction, cfg: &DistributionConfig) -> Result<DensityGrid> {
    cfg.validate()?;
    let h = cfg.sigma_step;
    let max_steps = (ALPHA_LIMIT / h) as usize;
    let mut phi: Vec<Complex64> = Vec::new();
    match cfg.cutoff {
        Some(a) => {
            let steps = (a / h).round() as usize;
            phi = (0..=steps)
                .into_par_iter()
                .map(|j| cf.eval(Complex64::new(j as f64 * h, 0.0)))
                .collect();
            let last = phi[steps].norm();
            if last >= 1e-9 {
                return Err(Error::CutoffTooSmall { a, value: last });
            }
        }
        None => {
            let chunk = 64;
            let mut found = None;
            while found.is_none() {
                let start = phi.len();
                if start > max_steps {
                    let a = start as f64 * h;
                    return Err(Error::CutoffTooSmall {
                        a,
                        value: phi.last().map_or(1.0, |z| z.norm()),
                    });
                }
                let block: Vec<Complex64> = (start..start + chunk)
                    .into_par_iter()
                    .map(|j| cf.eval(Complex64::new(j as f64 * h, 0.0)))
                    .collect();
                for (i, z) in block.iter().enumerate() {
                    if z.norm() < 1e-12 && found.is_none() {
                        found = Some(start + i);
                    }
                }
                phi.extend(block);
            }
            phi.truncate(found.unwrap() + 1);
        }
    }
    let steps = phi.len() - 1;
    let a = steps as f64 * h;
    let nx = ((cfg.x_max - cfg.x_min) / cfg.x_step).round() as usize + 1;
    let xs: Vec<f64> = (0..nx).map(|i| cfg.x_min + i as f64 * cfg.x_step).collect();
    let p: Vec<f64> = xs
        .par_iter()
        .map(|&x| {
            let terms: Vec<f64> = phi
                .iter()
                .enumerate()
                .map(|(j, z)| {
                    let w = if j == 0 || j == steps { 0.5 } else { 1.0 };
                    let ang = -2.0 * PI * x * (j as f64 * h);
                    w * 2.0 * (z * Complex64::from_polar(1.0, ang)).re
                })
                .collect();
            h * pairwise_sum(&terms)
        })
        .collect();

    // beyond A the completed integrand is below exp(-c s^2), c = 2 pi^2 V_rest
    let c = 2.0 * PI * PI * cf.v_rest;
    let cutoff = if c > 0.0 {
        2.0 * (-c * a * a).exp() / (2.0 * c * a)
    } else {
        2.0 * phi[steps].norm() * a
    };
    let grid_err = 2.0 * a * cf.laws.iter().map(|l| l.stability).sum::<f64>();
    let third = third_moment_budget(cf)?;
    let pointwise =
        cutoff + grid_err + third / 6.0 * gaussian_third_derivative_max(cf.variance.value);
    Ok(DensityGrid {
        q: cf.q,
        config: *cfg,
        alpha_min: cfg.x_min,
        alpha_max: cfg.x_max,
        step: cfg.x_step,
        sigma_step: h,
        cutoff: a,
        phi: phi.iter().map(|z| (z.re, z.im)).collect(),
        xs,
        p,
        variance: cf.variance,
        v_rest: cf.v_rest,
        errors: DensityErrors {
            cutoff,
            grid: grid_err,
            third_moment: third,
            pointwise,
        },
    })
}

/// Uncertainty of the third moment held by the laws: the box errors of each Q(m, 3) plus the
/// measured-shape estimate for m > M.
pub fn third_moment_budget(cf: &CharFunction) -> Result<f64> {
    let vals: Vec<Result<(u64, f64, f64)>> = cf
        .laws
        .par_iter()
        .map(|l| {
            let v = q_analytic(cf.q, l.m, 3, cf.d, cf.k)?;
            Ok((l.m, v.value, v.error_estimate))
        })
        .collect();
    let mut err = 0.0;
    let mut shape_constant: f64 = 0.0;
    for v in vals {
        let (m, value, e) = v?;
        err += e;
        let shape = (crate::arithmetic::r2(m) as f64).powi(3) * (m as f64).powf(-2.25);
        shape_constant = shape_constant.max(value.abs() / shape);
    }
    Ok(err + shape_constant * cubic_shape_tail(cf.m_max))
}

/// CDF and quadrature moments of a gridded density.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensityMoments {
    /// integral of x^j P for j = 0..=j_max
    pub moments: Vec<f64>,
    /// integrals of |x| P and x^2 P
    pub abs_moments: [f64; 2],
    pub cdf: Vec<f64>,
    pub min_p: f64,
    pub argmax: f64,
}

fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    let h = xs[1] - xs[0];
    let n = ys.len();
    let terms: Vec<f64> = ys
        .iter()
        .enumerate()
        .map(|(i, y)| if i == 0 || i == n - 1 { 0.5 * y } else { *y })
        .collect();
    h * pairwise_sum(&terms)
}

/// Cumulative trapezoid CDF of max(P, 0), made monotone, and the moments up to j_max.
pub fn cdf_and_moments(grid: &DensityGrid, j_max: u32) -> DensityMoments {
    let (xs, p) = (&grid.xs, &grid.p);
    let h = grid.step;
    let mut cdf = Vec::with_capacity(p.len());
    let mut acc = 0.0;
    cdf.push(0.0);
    for i in 1..p.len() {
        acc += 0.5 * h * (p[i - 1].max(0.0) + p[i].max(0.0));
        cdf.push(acc);
    }
    let moments = (0..=j_max)
        .map(|j| {
            trapezoid(
                xs,
                &xs.iter()
                    .zip(p)
                    .map(|(x, y)| x.powi(j as i32) * y)
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    let abs1 = trapezoid(
        xs,
        &xs.iter()
            .zip(p)
            .map(|(x, y)| x.abs() * y)
            .collect::<Vec<_>>(),
    );
    let abs2 = trapezoid(
        xs,
        &xs.iter().zip(p).map(|(x, y)| x * x * y).collect::<Vec<_>>(),
    );
    let min_p = p.iter().cloned().fold(f64::INFINITY, f64::min);
    let imax = p
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v > p[best] { i } else { best });
    DensityMoments {
        moments,
        abs_moments: [abs1, abs2],
        cdf,
        min_p,
        argmax: xs[imax],
    }
}

/// Error budgets of the quadrature moments j = 0..=j_max. The third-moment uncertainty only
/// enters from j = 3 on; lower moments see the cutoff and grid errors and the variance error.
pub fn moment_budgets(grid: &DensityGrid, j_max: u32) -> Vec<f64> {
    let range = grid.alpha_max - grid.alpha_min;
    let reach = grid.alpha_max.abs().max(grid.alpha_min.abs());
    let e = &grid.errors;
    (0..=j_max)
        .map(|j| {
            let base = range * reach.powi(j as i32) * (e.cutoff + e.grid);
            match j {
                2 => base + grid.variance.error_estimate,
                3 => base + e.third_moment,
                j if j > 3 => range * reach.powi(j as i32) * e.pointwise,
                _ => base,
            }
        })
        .collect()
}

impl DensityGrid {
    /// CDF at x by linear interpolation of the monotone cumulative trapezoid.
    pub fn cdf_at(&self, cdf: &[f64], x: f64) -> f64 {
        if x <= self.xs[0] {
            return 0.0;
        }
        let last = self.xs.len() - 1;
        if x >= self.xs[last] {
            return cdf[last];
        }
        let t = (x - self.xs[0]) / self.step;
        let i = (t.floor() as usize).min(last - 1);
        let f = t - i as f64;
        cdf[i] * (1.0 - f) + cdf[i + 1] * f
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binned_average_matches_direct() {
        let s = PhiSeries::resummed(3, 5, 6, 6).unwrap();
        let n = 4 * (s.max_harmonic().unwrap() as usize) + 64;
        let mut planner = FftPlanner::new();
        let g = sample_series(&s, n, &mut planner).unwrap();
        let law = ComponentLaw::from_values(5, &g);
        for a in [0.0, 0.013, 0.3, 1.7, -2.2] {
            for b in [0.0, 0.05] {
                let alpha = Complex64::new(a, b);
                let direct: Complex64 = g
                    .iter()
                    .map(|v| (Complex64::new(0.0, 2.0 * PI) * alpha * v).exp())
                    .sum::<Complex64>()
                    / n as f64;
                assert!(
                    (law.char_value(alpha) - direct).norm() < 1e-12,
                    "{alpha} {} {direct}",
                    law.char_value(alpha)
                );
            }
        }
    }

    #[test]
    fn factor_properties() {
        assert_eq!(
            char_factor(3, Complex64::new(0.7, 0.0), 3, 6, 6).unwrap(),
            Complex64::new(1.0, 0.0)
        );
        let one = char_factor(3, Complex64::new(0.0, 0.0), 1, 6, 6).unwrap();
        assert!((one - 1.0).norm() < 1e-14);
        for s in [0.05, 0.2, 1.0] {
            let z = char_factor(4, Complex64::new(s, 0.0), 2, 6, 8).unwrap();
            assert!(z.norm() <= 1.0 + 1e-12);
            let w = char_factor(4, Complex64::new(-s, 0.0), 2, 6, 8).unwrap();
            assert!((z - w.conj()).norm() < 1e-12);
        }
    }

    #[test]
    fn small_density_is_a_density() {
        let cfg = DistributionConfig {
            d: 4,
            k: 6,
            m_max: 10,
            variance_n: 1 << 14,
            x_min: -50.0,
            x_max: 50.0,
            x_step: 0.5,
            ..DistributionConfig::default()
        };
        let g = density(3, &cfg).unwrap();
        let mo = cdf_and_moments(&g, 3);
        assert!((mo.moments[0] - 1.0).abs() < 1e-6, "{:?}", mo.moments);
        assert!(mo.moments[1].abs() < 1e-6);
        assert!((mo.moments[2] - g.variance.value).abs() < 1e-4 * g.variance.value);
        assert!(mo.moments[3] < 0.0);
        assert!(mo.min_p > -1e-8);
        assert!(g.phi[0] == (1.0, 0.0));
        let last = *mo.cdf.last().unwrap();
        assert!((last - 1.0).abs() < 1e-3);
        assert!(mo.cdf.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn cutoff_checked() {
        let cfg = DistributionConfig {
            d: 4,
            k: 4,
            m_max: 5,
            variance_n: 1 << 12,
            cutoff: Some(0.01),
            ..DistributionConfig::default()
        };
        assert!(matches!(
            density(3, &cfg),
            Err(Error::CutoffTooSmall { .. })
        ));
    }
}
