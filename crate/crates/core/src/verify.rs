//! The acceptance suite: one check per numbered criterion, each reporting pass or fail
//! with the measured quantities.

use std::f64::consts::PI;
use std::sync::OnceLock;
use std::time::Instant;

use num_complex::Complex64;
use serde::Serialize;

use crate::arithmetic::{build_r2q_prefix, chi4, r2_weighted, r2_weighted_chi, ArithTables};
use crate::distribution::{
    cdf_and_moments, density_from, moment_budgets, CharFunction, DensityGrid, DensityMoments,
    DistributionConfig,
};
use crate::empirical::{
    gaussian_cdf, ks_distance, ks_distance_with, sample_errors, table_limit, theorem4_gaps,
};
use crate::error::Result;
use crate::lattice::{
    count_points, count_points_bruteforce, sample_grid, volume_by_quadrature, volume_unit_ball,
    GroupParams, Radius,
};
use crate::moments::{q2_closed, q_analytic, q_ergodic, third_moment_sum};
use crate::voronoi::mean_square_gap;

pub const CRITERIA: u32 = 10;

#[derive(Clone, Debug, Serialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

pub fn name(id: u32) -> &'static str {
    match id {
        1 => "counting oracle",
        2 => "volume",
        3 => "weighted-count identities",
        4 => "moment cross-validation",
        5 => "third moment",
        6 => "density integrity",
        7 => "empirical convergence",
        8 => "phi partial-sum gap",
        9 => "voronoi gap trend",
        10 => "stability",
        _ => "unknown",
    }
}

/// Base truncation for the stability check; the default configuration doubles every knob.
pub fn base_config() -> DistributionConfig {
    let d = DistributionConfig::default();
    DistributionConfig {
        d: d.d / 2,
        k: d.k / 2,
        m_max: d.m_max / 2,
        sigma_step: 2.0 * d.sigma_step,
        variance_n: d.variance_n / 2,
        ..d
    }
}

struct Fitted {
    cf: CharFunction,
    grid: DensityGrid,
    moments: DensityMoments,
}

fn fit(cfg: &DistributionConfig) -> Result<Fitted> {
    let cf = CharFunction::new(3, cfg)?;
    let grid = density_from(&cf, cfg)?;
    let moments = cdf_and_moments(&grid, 3);
    Ok(Fitted { cf, grid, moments })
}

/// Results shared between criteria.
#[derive(Default)]
pub struct Context {
    density: OnceLock<std::result::Result<Fitted, String>>,
    tables: OnceLock<std::result::Result<ArithTables, String>>,
}

impl Context {
    fn density(&self) -> std::result::Result<&Fitted, String> {
        self.density
            .get_or_init(|| fit(&DistributionConfig::default()).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| e.clone())
    }

    fn tables(&self) -> std::result::Result<&ArithTables, String> {
        self.tables
            .get_or_init(|| build_r2q_prefix(3, table_limit((300, 1))).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| e.clone())
    }
}

type Outcome = std::result::Result<(bool, String), String>;

fn flag(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

fn c1() -> Outcome {
    let xs = ["0.5", "1", "1.5", "sqrt(2)", "2", "2.5", "3"];
    let start = Instant::now();
    let mut mismatches = Vec::new();
    let mut counted = 0.0;
    for q in [3u32, 4] {
        let p = GroupParams::new(q).map_err(|e| e.to_string())?;
        let t = build_r2q_prefix(q, 9).map_err(|e| e.to_string())?;
        for s in xs {
            let x: Radius = s.parse().map_err(|e: crate::Error| e.to_string())?;
            let t0 = Instant::now();
            let fast = count_points(&p, &t, &x).map_err(|e| e.to_string())?;
            counted += t0.elapsed().as_secs_f64();
            let slow = count_points_bruteforce(q, &x).map_err(|e| e.to_string())?;
            if fast != slow {
                mismatches.push(format!("q={q} x={s}: {fast} vs {slow}"));
            }
        }
    }
    let total = start.elapsed().as_secs_f64();
    let ok = mismatches.is_empty() && total <= 1.0;
    Ok((
        ok,
        format!(
            "14 radii, mismatches {:?}, counting {counted:.4}s, with brute force {total:.3}s",
            mismatches
        ),
    ))
}

fn c2() -> Outcome {
    let mut worst: f64 = 0.0;
    for q in 3..=8 {
        let v = volume_unit_ball(q);
        worst = worst.max((v - volume_by_quadrature(q)).abs() / v);
    }
    let exact = PI.powi(4) / 16.0;
    let ulps = (volume_unit_ball(3) - exact).abs() / (f64::EPSILON * exact);
    Ok((
        worst < 1e-10 && ulps <= 2.0,
        format!("max relative gap {worst:.2e}, q=3 off pi^4/16 by {ulps:.1} ulp"),
    ))
}

fn c3() -> Outcome {
    let mut checked = 0u64;
    let mut bad = Vec::new();
    for q in [3u32, 4, 5] {
        for m in 1..=200u64 {
            for d in 1..=10u64 {
                let (plain, twisted) = (r2_weighted(m, d, q), r2_weighted_chi(m, d, q));
                for s in 1..=5u64 {
                    let (ms, ds) = (m * s * s, d * s);
                    checked += 1;
                    if r2_weighted(ms, ds, q) != plain {
                        bad.push(format!("plain q={q} m={m} d={d} s={s}"));
                    }
                    if r2_weighted_chi(ms, ds, q) != chi4(s as i64) as f64 * twisted {
                        bad.push(format!("twisted q={q} m={m} d={d} s={s}"));
                    }
                }
            }
        }
    }
    bad.truncate(5);
    Ok((
        bad.is_empty(),
        format!("{checked} (q, m, d, s) cases, both laws bit-exact; failures {bad:?}"),
    ))
}

fn c4() -> Outcome {
    let start = Instant::now();
    let mut ok = true;
    let mut lines = Vec::new();
    for q in [3u32, 4] {
        for m in [1u64, 2, 5, 13, 17] {
            let closed = q2_closed(q, m, 40, 40).map_err(|e| e.to_string())?;
            let analytic = q_analytic(q, m, 2, 40, 40).map_err(|e| e.to_string())?;
            let ergodic = q_ergodic(q, m, 2, 12, 16).map_err(|e| e.to_string())?;
            let first = q_ergodic(q, m, 1, 12, 16).map_err(|e| e.to_string())?;
            let first_a = q_analytic(q, m, 1, 40, 40).map_err(|e| e.to_string())?;
            let same = (analytic.value - closed.value).abs() <= 1e-9 * closed.value.abs().max(1.0);
            let agree = ergodic.agrees_with(&closed);
            let zero = first.value.abs() < 1e-9 && first_a.value.abs() < 1e-9;
            ok &= same && agree && zero;
            lines.push(format!(
                "q={q} m={m}: closed {:.6}+-{:.3} ergodic {:.6}+-{:.3} [{}] analytic [{}] Q(m,1) [{}]",
                closed.value,
                closed.error_estimate,
                ergodic.value,
                ergodic.error_estimate,
                flag(agree),
                flag(same),
                flag(zero)
            ));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs <= 60.0;
    lines.push(format!("{secs:.1}s"));
    Ok((ok, lines.join("; ")))
}

fn c5() -> Outcome {
    let mut ok = true;
    let mut lines = Vec::new();
    for q in [3u32, 4, 5] {
        let t = third_moment_sum(q, 50, 16, 16).map_err(|e| e.to_string())?;
        let upper = t.moment.value + t.moment.error_estimate;
        let pass = t.moment.value < 0.0 && upper < 0.0;
        ok &= pass;
        lines.push(format!(
            "q={q}: sum {:.4}, error with tail estimate {:.3} (tail {:.3}, majorant {:.1}) [{}]",
            t.moment.value,
            t.moment.error_estimate,
            t.tail_estimate,
            t.tail_bound,
            flag(pass)
        ));
    }
    Ok((ok, lines.join("; ")))
}

fn c6(ctx: &Context) -> Outcome {
    let start = Instant::now();
    let f = ctx.density()?;
    let v = f.cf.variance.value;
    let mo = &f.moments;
    let mass = mo.moments[0];
    let mean = mo.moments[1];
    let second = mo.moments[2];
    let third = mo.moments[3];
    let phi0 = f.cf.eval(Complex64::new(0.0, 0.0));
    let sym = (1..=40)
        .map(|j| {
            let s = j as f64 * f.grid.cutoff / 40.0;
            (f.cf.eval(Complex64::new(-s, 0.0)) - f.cf.eval(Complex64::new(s, 0.0)).conj()).norm()
        })
        .fold(0.0, f64::max);
    let carried = f.cf.carried_variance();
    let checks = [
        ((mass - 1.0).abs() <= 1e-3, format!("mass {mass:.12}")),
        (mean.abs() <= 1e-3, format!("mean {mean:.3e}")),
        (
            (second - v).abs() <= 0.02 * v,
            format!("second {second:.6} vs sum Q(m,2) {v:.6} (m <= M carry {carried:.4})"),
        ),
        (third < 0.0, format!("third {third:.4}")),
        (mo.min_p >= -1e-8, format!("min P {:.3e}", mo.min_p)),
        (
            (phi0 - 1.0).norm() <= 1e-12,
            format!("|Phi(0) - 1| {:.1e}", (phi0 - 1.0).norm()),
        ),
        (sym <= 1e-10, format!("conjugate symmetry {sym:.1e}")),
    ];
    let secs = start.elapsed().as_secs_f64();
    let ok = checks.iter().all(|c| c.0) && secs <= 600.0;
    let mut parts: Vec<String> = checks
        .iter()
        .map(|(p, s)| format!("{s} [{}]", flag(*p)))
        .collect();
    parts.push(format!("A {:.3}, {secs:.1}s", f.grid.cutoff));
    Ok((ok, parts.join("; ")))
}

fn c7(ctx: &Context) -> Outcome {
    let f = ctx.density()?;
    let tables = ctx.tables()?;
    let p = GroupParams::new(3).map_err(|e| e.to_string())?;
    let v = f.cf.variance.value;
    let s300 = sample_errors(&p, tables, (300, 1), 4000).map_err(|e| e.to_string())?;
    let s75 = sample_errors(&p, tables, (75, 1), 4000).map_err(|e| e.to_string())?;
    let ks300 = ks_distance(&s300, &f.grid, &f.moments.cdf);
    let ks75 = ks_distance(&s75, &f.grid, &f.moments.cdf);
    let ks_gauss = ks_distance_with(&s300, gaussian_cdf(v));
    let st = s300.stats;
    let se = (st.second / s300.n as f64).sqrt();
    let checks = [
        (
            st.mean.abs() < 0.05,
            format!("mean {:.4} (sampling s.e. {se:.3})", st.mean),
        ),
        (
            (st.second - v).abs() < 0.1 * v,
            format!("second {:.4} vs {v:.4}", st.second),
        ),
        (st.third < 0.0, format!("third {:.3}", st.third)),
        (
            ks300 < ks75,
            format!("KS X=300 {ks300:.5} vs X=75 {ks75:.5}"),
        ),
        (ks300 < ks_gauss, format!("KS Gaussian {ks_gauss:.5}")),
    ];
    let ok = checks.iter().all(|c| c.0);
    Ok((
        ok,
        checks
            .iter()
            .map(|(p, s)| format!("{s} [{}]", flag(*p)))
            .collect::<Vec<_>>()
            .join("; "),
    ))
}

fn c8(ctx: &Context) -> Outcome {
    let tables = ctx.tables()?;
    let p = GroupParams::new(3).map_err(|e| e.to_string())?;
    let s = sample_errors(&p, tables, (200, 1), 4000).map_err(|e| e.to_string())?;
    let gaps = theorem4_gaps(&s, &[0, 1, 5, 10, 20, 40], 24, 24).map_err(|e| e.to_string())?;
    let decreasing = gaps[1..].windows(2).all(|w| w[1] < w[0]);
    let half = gaps[5] < 0.5 * gaps[0];
    let shown: Vec<String> = gaps.iter().map(|g| format!("{g:.4}")).collect();
    Ok((
        decreasing && half,
        format!(
            "gaps at M = 0,1,5,10,20,40: [{}]; decreasing [{}], gap(40) < gap(0)/2 [{}]",
            shown.join(", "),
            flag(decreasing),
            flag(half)
        ),
    ))
}

fn c9() -> Outcome {
    let p = GroupParams::new(3).map_err(|e| e.to_string())?;
    let tables = build_r2q_prefix(3, table_limit((80, 1))).map_err(|e| e.to_string())?;
    let mut gaps = Vec::new();
    for x in [20u64, 40, 80] {
        let grid = sample_grid((x, 1), 400).map_err(|e| e.to_string())?;
        gaps.push(
            mean_square_gap(&p, &tables, &grid, x as f64, None)
                .map_err(|e| e.to_string())?
                .mean_square_gap,
        );
    }
    let ok = gaps.windows(2).all(|w| w[1] < w[0]);
    Ok((
        ok,
        format!(
            "mean square gap at X = 20, 40, 80 with H = X^2/2: {:.4}, {:.4}, {:.4}",
            gaps[0], gaps[1], gaps[2]
        ),
    ))
}

fn c10(ctx: &Context) -> Outcome {
    let base_cfg = base_config();
    let base = fit(&base_cfg).map_err(|e| e.to_string())?;
    let doubled_cfg = DistributionConfig {
        cutoff: Some(2.0 * base.grid.cutoff),
        ..DistributionConfig::default()
    };
    let grid = density_from(&ctx.density()?.cf, &doubled_cfg).map_err(|e| e.to_string())?;
    let doubled = (cdf_and_moments(&grid, 3), grid);
    let budgets = moment_budgets(&base.grid, 3);
    let names = ["mass", "mean", "second", "third"];
    let mut ok = true;
    let mut parts = Vec::new();
    for j in 0..4 {
        let change = (doubled.0.moments[j] - base.moments.moments[j]).abs();
        let pass = change < budgets[j];
        ok &= pass;
        parts.push(format!(
            "{} change {change:.3e} budget {:.3e} [{}]",
            names[j],
            budgets[j],
            flag(pass)
        ));
    }
    let dp = base
        .grid
        .p
        .iter()
        .zip(&doubled.1.p)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let pw = base.grid.errors.pointwise;
    ok &= dp < pw;
    parts.push(format!(
        "max P change {dp:.3e} budget {pw:.3e} [{}]",
        flag(dp < pw)
    ));
    let dmin = (doubled.0.min_p - base.moments.min_p).abs();
    ok &= dmin < pw;
    parts.push(format!("min P change {dmin:.1e} [{}]", flag(dmin < pw)));
    parts.push(format!(
        "(D, K, M, A, sigma step, N) from ({}, {}, {}, {:.3}, {}, {}) to ({}, {}, {}, {:.3}, {}, {})",
        base_cfg.d,
        base_cfg.k,
        base_cfg.m_max,
        base.grid.cutoff,
        base_cfg.sigma_step,
        base_cfg.variance_n,
        doubled_cfg.d,
        doubled_cfg.k,
        doubled_cfg.m_max,
        doubled.1.cutoff,
        doubled_cfg.sigma_step,
        doubled_cfg.variance_n
    ));
    Ok((ok, parts.join("; ")))
}

/// Runs one criterion; errors count as failures.
pub fn run_one(id: u32, ctx: &Context) -> CriterionResult {
    let start = Instant::now();
    let outcome = match id {
        1 => c1(),
        2 => c2(),
        3 => c3(),
        4 => c4(),
        5 => c5(),
        6 => c6(ctx),
        7 => c7(ctx),
        8 => c8(ctx),
        9 => c9(),
        10 => c10(ctx),
        _ => Err(format!("no criterion {id}")),
    };
    let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    CriterionResult {
        id,
        name: name(id),
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Runs the listed criteria in order, calling `report` after each.
pub fn run(ids: &[u32], mut report: impl FnMut(&CriterionResult)) -> Vec<CriterionResult> {
    let ctx = Context::default();
    ids.iter()
        .map(|&id| {
            let r = run_one(id, &ctx);
            report(&r);
            r
        })
        .collect()
}

/// `criterion N: PASS|FAIL name (seconds) detail`
pub fn format_line(r: &CriterionResult) -> String {
    format!(
        "criterion {}: {} {} ({:.1}s) {}",
        r.id,
        if r.passed { "PASS" } else { "FAIL" },
        r.name,
        r.seconds,
        r.detail
    )
}
