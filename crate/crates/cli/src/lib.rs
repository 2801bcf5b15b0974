//! Command line front end: argument parsing, configuration and report writing.

pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hcount::arithmetic::{load_or_build, ArithTables};
use hcount::distribution::{
    cdf_and_moments, density_from, moment_budgets, CharFunction, DistributionConfig,
};
use hcount::empirical::{
    empirical_lambda_moment, gaussian_cdf, histogram, ks_distance, ks_distance_with, sample_errors,
    table_limit, theorem4_gaps,
};
use hcount::lattice::{
    count_points_bruteforce, normalized_error, parse_ratio, sample_grid, GroupParams, Radius,
};
use hcount::moments::{density_moment, q2_closed, q_analytic, q_ergodic, third_moment_sum, Method};
use hcount::phi::{partial_sum_phi, PhiSeries, PhiTruncation};
use hcount::verify;
use hcount::voronoi::mean_square_gap;
use hcount::{Error, Result};
use serde_json::json;

use config::RunConfig;
use output::{num, report, Csv};

#[derive(Parser, Debug)]
#[command(
    name = "hcount",
    version,
    about = "Lattice points in Heisenberg norm balls and the distribution of the error term"
)]
pub struct Cli {
    /// key = value file supplying defaults for the flags below
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// worker threads (default: available cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// directory for cached arithmetic tables
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    /// write the main output here instead of stdout
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Args, Debug, Default, Clone)]
pub struct Common {
    #[arg(long)]
    pub q: Option<u32>,
    /// arithmetic table limit N
    #[arg(long = "table-limit")]
    pub table_limit: Option<u64>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct Trunc {
    /// modulus truncation D
    #[arg(long = "D")]
    pub d: Option<u32>,
    /// frequency truncation K
    #[arg(long = "K")]
    pub k: Option<u32>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct Window {
    /// left end X of the window [X, 2X], as p/r or a decimal
    #[arg(long = "X")]
    pub x_lo: Option<String>,
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Exact lattice point count at radius x
    Count {
        #[command(flatten)]
        common: Common,
        /// radius as p/r, a decimal or sqrt(n/d)
        #[arg(long)]
        x: String,
        /// also count by direct enumeration and check agreement
        #[arg(long)]
        brute: bool,
    },
    /// Normalized error at one radius, or on the sample grid over [X, 2X]
    Error {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        x: Option<String>,
        /// sample midpoints of [x-min, x-max] instead of [X, 2X]
        #[arg(long = "x-min", requires = "x_max")]
        x_min: Option<String>,
        #[arg(long = "x-max", requires = "x_min")]
        x_max: Option<String>,
        #[command(flatten)]
        window: Window,
    },
    /// Mean square gap between the normalized error and the trigonometric sum S
    VoronoiGap {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        window: Window,
        /// length H of the sum (default X^2/2)
        #[arg(long = "H")]
        h: Option<f64>,
    },
    /// One component phi_{q,m} on a grid of t
    Phi {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        m: u64,
        #[command(flatten)]
        trunc: Trunc,
        /// a single t; overrides the grid
        #[arg(long)]
        t: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        t0: f64,
        #[arg(long, default_value_t = 1.0)]
        t1: f64,
        #[arg(long, default_value_t = 101)]
        points: usize,
        /// use the coefficients summed over common factors
        #[arg(long)]
        resummed: bool,
    },
    /// sum_{m <= M} phi_{q,m}(sqrt(m) x^2) on the sample grid over [X, 2X]
    PhiSum {
        #[command(flatten)]
        common: Common,
        #[arg(long = "M")]
        m_max: Option<u64>,
        #[command(flatten)]
        trunc: Trunc,
        #[command(flatten)]
        window: Window,
    },
    /// Limiting mean Q_q(m, l) of phi_{q,m}^l
    Moments {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        m: u64,
        #[arg(long)]
        l: u32,
        #[arg(long, value_enum, default_value_t = MethodArg::Analytic)]
        method: MethodArg,
        #[command(flatten)]
        trunc: Trunc,
    },
    /// j-th moment of the limiting density from the composition sums
    DensityMoment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        j: u32,
        #[arg(long = "Mmax", alias = "M")]
        m_max: Option<u64>,
        #[command(flatten)]
        trunc: Trunc,
    },
    /// sum_{m <= M} Q_q(m, 3) with its tail estimate and majorant
    ThirdMoment {
        #[command(flatten)]
        common: Common,
        #[arg(long = "M")]
        m_max: Option<u64>,
        #[command(flatten)]
        trunc: Trunc,
    },
    /// Limiting density on an x grid: CSV (x, P) plus JSON metadata
    Density {
        #[command(flatten)]
        common: Common,
        #[arg(long = "M")]
        m_max: Option<u64>,
        #[command(flatten)]
        trunc: Trunc,
        /// inversion cutoff A (default: where |Phi| < 1e-12)
        #[arg(long = "A")]
        cutoff: Option<f64>,
        #[arg(long)]
        step: Option<f64>,
        #[arg(long = "sigma-step")]
        sigma_step: Option<f64>,
        #[arg(long)]
        xmin: Option<f64>,
        #[arg(long)]
        xmax: Option<f64>,
        /// where to write the JSON metadata (default: next to --out)
        #[arg(long)]
        meta: Option<PathBuf>,
    },
    /// Samples over [X, 2X] with moments, KS distances and phi partial-sum gaps
    Empirical {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        window: Window,
        /// values of M for the phi partial sums
        #[arg(long = "M", value_delimiter = ',', default_values_t = vec![0u64, 1, 5, 10, 20, 40])]
        m_list: Vec<u64>,
        #[command(flatten)]
        trunc: Trunc,
        #[arg(long = "hist-bins")]
        hist_bins: Option<usize>,
        /// histogram CSV path
        #[arg(long = "hist-out")]
        hist_out: Option<PathBuf>,
        /// skip the density and the KS distances
        #[arg(long = "no-density")]
        no_density: bool,
    },
    /// Run the acceptance criteria and print a pass/fail table
    Verify {
        /// criteria to run, e.g. 1,2,5
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<u32>>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Analytic,
    Ergodic,
    Closed2,
}

struct Ctx {
    cfg: RunConfig,
    format: Option<Format>,
}

impl Ctx {
    fn q(&self) -> Result<u32> {
        self.cfg
            .q
            .ok_or_else(|| Error::InvalidArgument("--q is required".into()))
    }

    fn window(&self) -> Result<((u64, u64), usize)> {
        let x = self
            .cfg
            .x_lo
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("--X is required".into()))?;
        Ok((parse_ratio(x)?, self.cfg.samples.unwrap_or(1000)))
    }

    fn tables(&self, q: u32, needed: u64) -> Result<ArithTables> {
        let limit = self.cfg.table_limit.unwrap_or(needed).max(needed).max(1);
        load_or_build(q, limit, self.cfg.cache_dir.as_deref())
    }

    fn emit(&self, text: &str) -> Result<()> {
        match &self.cfg.out {
            Some(p) => std::fs::write(p, text)?,
            None => print!("{text}"),
        }
        Ok(())
    }
}

fn flags_config(cli: &Cli) -> RunConfig {
    let mut c = RunConfig {
        threads: cli.threads,
        cache_dir: cli.cache_dir.clone(),
        out: cli.out.clone(),
        ..Default::default()
    };
    let common = |c: &mut RunConfig, k: &Common| {
        c.q = k.q;
        c.table_limit = k.table_limit;
    };
    let trunc = |c: &mut RunConfig, t: &Trunc| {
        c.d = t.d;
        c.k = t.k;
    };
    let window = |c: &mut RunConfig, w: &Window| {
        c.x_lo = w.x_lo.clone();
        c.samples = w.samples;
    };
    match &cli.command {
        Command::Count { common: k, .. } => common(&mut c, k),
        Command::Error {
            common: k,
            window: w,
            ..
        }
        | Command::VoronoiGap {
            common: k,
            window: w,
            ..
        } => {
            common(&mut c, k);
            window(&mut c, w);
        }
        Command::Phi {
            common: k,
            trunc: t,
            ..
        }
        | Command::Moments {
            common: k,
            trunc: t,
            ..
        } => {
            common(&mut c, k);
            trunc(&mut c, t);
        }
        Command::PhiSum {
            common: k,
            m_max,
            trunc: t,
            window: w,
        } => {
            common(&mut c, k);
            trunc(&mut c, t);
            window(&mut c, w);
            c.m_max = *m_max;
        }
        Command::DensityMoment {
            common: k,
            m_max,
            trunc: t,
            ..
        }
        | Command::ThirdMoment {
            common: k,
            m_max,
            trunc: t,
        } => {
            common(&mut c, k);
            trunc(&mut c, t);
            c.m_max = *m_max;
        }
        Command::Density {
            common: k,
            m_max,
            trunc: t,
            cutoff,
            step,
            sigma_step,
            xmin,
            xmax,
            ..
        } => {
            common(&mut c, k);
            trunc(&mut c, t);
            c.m_max = *m_max;
            c.cutoff = *cutoff;
            c.step = *step;
            c.sigma_step = *sigma_step;
            c.xmin = *xmin;
            c.xmax = *xmax;
        }
        Command::Empirical {
            common: k,
            window: w,
            trunc: t,
            ..
        } => {
            common(&mut c, k);
            trunc(&mut c, t);
            window(&mut c, w);
        }
        Command::Verify { .. } => {}
    }
    c
}

fn distribution_config(cfg: &RunConfig) -> DistributionConfig {
    let d = DistributionConfig::default();
    DistributionConfig {
        d: cfg.d.unwrap_or(d.d),
        k: cfg.k.unwrap_or(d.k),
        m_max: cfg.m_max.unwrap_or(d.m_max),
        sigma_step: cfg.sigma_step.unwrap_or(d.sigma_step),
        cutoff: cfg.cutoff,
        x_min: cfg.xmin.unwrap_or(d.x_min),
        x_max: cfg.xmax.unwrap_or(d.x_max),
        x_step: cfg.step.unwrap_or(d.x_step),
        variance_n: cfg.variance_n.unwrap_or(d.variance_n),
        complete_tail: true,
    }
}

fn count_json(count: u128) -> serde_json::Value {
    match u64::try_from(count) {
        Ok(c) => json!(c),
        Err(_) => json!(count.to_string()),
    }
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn cmd_count(ctx: &Ctx, x: &str, brute: bool) -> Result<()> {
    let q = ctx.q()?;
    let x: Radius = x.parse()?;
    let params = GroupParams::new(q)?;
    let tables = ctx.tables(q, x.floor_x2())?;
    let c = hcount::lattice::count_points(&params, &tables, &x)?;
    if brute {
        let b = count_points_bruteforce(q, &x)?;
        if b != c {
            return Err(Error::InvalidArgument(format!(
                "count {c} disagrees with enumeration {b}"
            )));
        }
    }
    match ctx.format.unwrap_or(Format::Text) {
        Format::Text => ctx.emit(&format!("{c}\n")),
        Format::Json => ctx.emit(&report(
            "count",
            &json!({"q": q, "x": x.to_string(), "count": count_json(c)}),
        )),
        Format::Csv => {
            let mut csv = Csv::new(&["q", "x", "count"]);
            csv.row(&[q.to_string(), x.to_string(), c.to_string()]);
            ctx.emit(&csv.finish())
        }
    }
}

/// Midpoints a + (j + 1/2)(b - a)/n as exact rationals.
fn range_grid(lo: &str, hi: &str, n: usize) -> Result<Vec<Radius>> {
    let ((pa, ra), (pb, rb)) = (parse_ratio(lo)?, parse_ratio(hi)?);
    let (pa, ra, pb, rb, n) = (pa as u128, ra as u128, pb as u128, rb as u128, n as u128);
    if pa * rb >= pb * ra {
        return Err(Error::InvalidArgument("x-min must be below x-max".into()));
    }
    let too_big = || Error::InvalidArgument("x range too fine for exact radii".into());
    (0..n)
        .map(|j| {
            let num = pa * rb * (2 * n - 2 * j - 1) + pb * ra * (2 * j + 1);
            let den = 2 * n * ra * rb;
            let g = gcd(num, den);
            let (num, den) = (num / g, den / g);
            Radius::from_ratio(
                u64::try_from(num).map_err(|_| too_big())?,
                u64::try_from(den).map_err(|_| too_big())?,
            )
        })
        .collect()
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn cmd_error(ctx: &Ctx, x: Option<&str>, range: Option<(&str, &str)>) -> Result<()> {
    let q = ctx.q()?;
    let params = GroupParams::new(q)?;
    let radii: Vec<Radius> = match (x, range) {
        (Some(x), _) => vec![x.parse()?],
        (None, Some((lo, hi))) => range_grid(lo, hi, ctx.cfg.samples.unwrap_or(1000))?,
        (None, None) => {
            let (x_lo, n) = ctx.window()?;
            sample_grid(x_lo, n)?
        }
    };
    let top = radii.iter().map(|r| r.floor_x2()).max().unwrap_or(1);
    let tables = ctx.tables(q, top)?;
    let rows = radii
        .iter()
        .map(|r| normalized_error(&params, &tables, r))
        .collect::<Result<Vec<_>>>()?;
    match ctx.format.unwrap_or(if x.is_some() {
        Format::Text
    } else {
        Format::Csv
    }) {
        Format::Text if rows.len() == 1 => {
            ctx.emit(&format!("{}\n", num(rows[0].normalized_error)))
        }
        Format::Json => {
            let v: Vec<_> = rows
                .iter()
                .map(|s| json!({"x": s.x, "radius": s.radius.to_string(), "count": count_json(s.count), "normalized_error": s.normalized_error}))
                .collect();
            ctx.emit(&report("error", &json!({"q": q, "samples": v})))
        }
        _ => {
            let mut csv = Csv::new(&["x", "count", "normalized_error"]);
            for s in &rows {
                csv.row(&[num(s.x), s.count.to_string(), num(s.normalized_error)]);
            }
            ctx.emit(&csv.finish())
        }
    }
}

fn cmd_voronoi_gap(ctx: &Ctx, h: Option<f64>) -> Result<()> {
    let q = ctx.q()?;
    let (x_lo, n) = ctx.window()?;
    let params = GroupParams::new(q)?;
    let tables = ctx.tables(q, table_limit(x_lo))?;
    let grid = sample_grid(x_lo, n)?;
    let r = mean_square_gap(&params, &tables, &grid, x_lo.0 as f64 / x_lo.1 as f64, h)?;
    match ctx.format.unwrap_or(Format::Csv) {
        Format::Json => ctx.emit(&report("voronoi-gap", &json!({"q": q, "report": r}))),
        _ => {
            let mut csv = Csv::new(&[
                "X",
                "H",
                "samples",
                "mean_square_gap",
                "empirical_second_moment",
            ]);
            csv.row(&[
                num(r.x_lo),
                num(r.h),
                r.samples.to_string(),
                num(r.mean_square_gap),
                num(r.empirical_second_moment),
            ]);
            ctx.emit(&csv.finish())
        }
    }
}

fn cmd_phi(ctx: &Ctx, m: u64, t0: f64, t1: f64, points: usize, resummed: bool) -> Result<()> {
    let q = ctx.q()?;
    let (d, k) = (ctx.cfg.d.unwrap_or(16), ctx.cfg.k.unwrap_or(16));
    if points == 0 || t0.is_nan() || t1.is_nan() || t1 < t0 {
        return Err(Error::InvalidArgument(
            "need points >= 1 and t1 >= t0".into(),
        ));
    }
    let s = if resummed {
        PhiSeries::resummed(q, m, d, k)?
    } else {
        PhiSeries::raw(q, m, d, k)?
    };
    let tb = PhiTruncation::new(q, m, d, k)?.tail_bound;
    let ts: Vec<f64> = (0..points)
        .map(|i| {
            if points == 1 {
                t0
            } else {
                t0 + (t1 - t0) * i as f64 / (points - 1) as f64
            }
        })
        .collect();
    match ctx.format.unwrap_or(Format::Csv) {
        Format::Json => {
            let v: Vec<f64> = ts.iter().map(|&t| s.eval(t)).collect();
            ctx.emit(&report("phi", &json!({"q": q, "m": m, "D": d, "K": k, "resummed": resummed, "tail_bound": tb, "t": ts, "phi": v})))
        }
        _ => {
            let mut csv = Csv::new(&["t", "phi", "tail_bound"]);
            for &t in &ts {
                csv.row(&[num(t), num(s.eval(t)), num(tb)]);
            }
            ctx.emit(&csv.finish())
        }
    }
}

fn cmd_phi_sum(ctx: &Ctx) -> Result<()> {
    let q = ctx.q()?;
    let (x_lo, n) = ctx.window()?;
    let big_m = ctx.cfg.m_max.unwrap_or(40);
    let (d, k) = (ctx.cfg.d.unwrap_or(24), ctx.cfg.k.unwrap_or(24));
    let xs: Vec<f64> = sample_grid(x_lo, n)?.iter().map(|r| r.x()).collect();
    let v = partial_sum_phi(q, big_m, &xs, d, k)?;
    let mut csv = Csv::new(&["x", "partial_sum"]);
    for (x, s) in xs.iter().zip(&v) {
        csv.row(&[num(*x), num(*s)]);
    }
    ctx.emit(&csv.finish())
}

fn cmd_moments(ctx: &Ctx, m: u64, l: u32, method: MethodArg) -> Result<()> {
    let q = ctx.q()?;
    let v = match method {
        MethodArg::Analytic => {
            let default = if l <= 2 { 40 } else { 16 };
            q_analytic(
                q,
                m,
                l,
                ctx.cfg.d.unwrap_or(default),
                ctx.cfg.k.unwrap_or(default),
            )?
        }
        MethodArg::Ergodic => q_ergodic(q, m, l, ctx.cfg.d.unwrap_or(12), ctx.cfg.k.unwrap_or(16))?,
        MethodArg::Closed2 => {
            if l != 2 {
                return Err(Error::InvalidArgument("closed2 computes l = 2 only".into()));
            }
            q2_closed(q, m, ctx.cfg.d.unwrap_or(40), ctx.cfg.k.unwrap_or(40))?
        }
    };
    match ctx.format.unwrap_or(Format::Json) {
        Format::Text => ctx.emit(&format!("{}\n", num(v.value))),
        _ => ctx.emit(&report("moments", &json!({"q": q, "m": m, "l": l, "value": v.value, "method": v.method, "error_estimate": v.error_estimate, "truncation": v.truncation}))),
    }
}

fn cmd_density_moment(ctx: &Ctx, j: u32) -> Result<()> {
    let q = ctx.q()?;
    let m_max = ctx.cfg.m_max.unwrap_or(60);
    let v = density_moment(
        q,
        j,
        m_max,
        ctx.cfg.d.unwrap_or(16),
        ctx.cfg.k.unwrap_or(16),
    )?;
    debug_assert!(matches!(v.method, Method::Analytic));
    match ctx.format.unwrap_or(Format::Json) {
        Format::Text => ctx.emit(&format!("{}\n", num(v.value))),
        _ => ctx.emit(&report("density-moment", &json!({"q": q, "j": j, "value": v.value, "method": v.method, "error_estimate": v.error_estimate, "truncation": v.truncation}))),
    }
}

fn cmd_third_moment(ctx: &Ctx) -> Result<()> {
    let q = ctx.q()?;
    let t = third_moment_sum(
        q,
        ctx.cfg.m_max.unwrap_or(50),
        ctx.cfg.d.unwrap_or(16),
        ctx.cfg.k.unwrap_or(16),
    )?;
    ctx.emit(&report("third-moment", &json!({"q": q, "result": t})))
}

fn cmd_density(ctx: &Ctx, meta: Option<&Path>) -> Result<()> {
    let q = ctx.q()?;
    let cfg = distribution_config(&ctx.cfg);
    let cf = CharFunction::new(q, &cfg)?;
    let grid = density_from(&cf, &cfg)?;
    let mo = cdf_and_moments(&grid, 4);
    let mut csv = Csv::new(&["x", "p"]);
    for (x, p) in grid.xs.iter().zip(&grid.p) {
        csv.row(&[num(*x), num(*p)]);
    }
    ctx.emit(&csv.finish())?;
    let meta_path = meta
        .map(Path::to_path_buf)
        .or_else(|| ctx.cfg.out.as_ref().map(|p| sibling(p, "json")));
    if let Some(path) = meta_path {
        let budgets = moment_budgets(&grid, 4);
        let table: Vec<_> = mo
            .moments
            .iter()
            .zip(&budgets)
            .enumerate()
            .map(|(j, (v, b))| json!({"j": j, "value": v, "budget": b}))
            .collect();
        let body = json!({
            "q": q,
            "config": cfg,
            "M": cfg.m_max,
            "A": grid.cutoff,
            "sigma_step": grid.sigma_step,
            "variance": grid.variance,
            "v_rest": grid.v_rest,
            "errors": grid.errors,
            "moments": table,
            "abs_moments": {"lambda1": mo.abs_moments[0], "lambda2": mo.abs_moments[1]},
            "min_p": mo.min_p,
            "argmax": mo.argmax,
            "cdf_end": mo.cdf.last(),
        });
        std::fs::write(path, report("density", &body))?;
    }
    Ok(())
}

fn cmd_empirical(
    ctx: &Ctx,
    m_list: &[u64],
    bins: Option<usize>,
    hist_out: Option<&Path>,
    no_density: bool,
) -> Result<()> {
    let q = ctx.q()?;
    let (x_lo, n) = ctx.window()?;
    let params = GroupParams::new(q)?;
    let tables = ctx.tables(q, table_limit(x_lo))?;
    let s = sample_errors(&params, &tables, x_lo, n)?;
    let mut ms = m_list.to_vec();
    ms.sort_unstable();
    ms.dedup();
    let gaps = theorem4_gaps(&s, &ms, ctx.cfg.d.unwrap_or(24), ctx.cfg.k.unwrap_or(24))?;
    let hist = histogram(&s.errors, bins)?;
    let lambda1 = empirical_lambda_moment(&s, 1.0)?;
    let (ks, ks_gauss, variance) = if no_density {
        (None, None, None)
    } else {
        let cfg = DistributionConfig {
            d: 12,
            k: 32,
            ..distribution_config(&RunConfig {
                cutoff: ctx.cfg.cutoff,
                ..Default::default()
            })
        };
        let cf = CharFunction::new(q, &cfg)?;
        let grid = density_from(&cf, &cfg)?;
        let mo = cdf_and_moments(&grid, 2);
        let v = cf.variance.value;
        (
            Some(ks_distance(&s, &grid, &mo.cdf)),
            Some(ks_distance_with(&s, gaussian_cdf(v))),
            Some(v),
        )
    };
    if let Some(path) = &ctx.cfg.out {
        let mut csv = Csv::new(&["x", "normalized_error"]);
        for (x, e) in s.xs.iter().zip(&s.errors) {
            csv.row(&[num(*x), num(*e)]);
        }
        std::fs::write(path, csv.finish())?;
    }
    if let Some(path) = hist_out {
        let mut csv = Csv::new(&["lo", "hi", "count"]);
        for (i, c) in hist.counts.iter().enumerate() {
            let lo = hist.lo + i as f64 * hist.width;
            csv.row(&[num(lo), num(lo + hist.width), c.to_string()]);
        }
        std::fs::write(path, csv.finish())?;
    }
    let gap_table: Vec<_> = ms
        .iter()
        .zip(&gaps)
        .map(|(m, g)| json!({"M": m, "gap": g}))
        .collect();
    let body = json!({
        "q": q,
        "X": format!("{}/{}", x_lo.0, x_lo.1),
        "samples": n,
        "mean": s.stats.mean,
        "m2": s.stats.second,
        "m3": s.stats.third,
        "min": s.stats.min,
        "max": s.stats.max,
        "lambda1_signed": s.stats.mean,
        "lambda1": lambda1,
        "ks_distance": ks,
        "ks_distance_gaussian": ks_gauss,
        "limiting_variance": variance,
        "theorem4_gaps": gap_table,
        "histogram": {"rule": hist.rule, "bins": hist.counts.len(), "width": hist.width},
    });
    print!("{}", report("empirical", &body));
    Ok(())
}

fn cmd_verify(ctx: &Ctx, only: Option<&[u32]>) -> Result<bool> {
    let ids: Vec<u32> = match only {
        Some(ids) => {
            if let Some(bad) = ids.iter().find(|&&i| i == 0 || i > verify::CRITERIA) {
                return Err(Error::InvalidArgument(format!("no criterion {bad}")));
            }
            ids.to_vec()
        }
        None => (1..=verify::CRITERIA).collect(),
    };
    let json_out = ctx.format == Some(Format::Json);
    let results = verify::run(&ids, |r| {
        if !json_out {
            println!("{}", verify::format_line(r));
        }
    });
    let passed = results.iter().all(|r| r.passed);
    if json_out {
        ctx.emit(&report(
            "verify",
            &json!({"passed": passed, "criteria": results}),
        ))?;
    } else {
        println!(
            "{} of {} criteria pass",
            results.iter().filter(|r| r.passed).count(),
            results.len()
        );
    }
    Ok(passed)
}

fn execute(cli: &Cli) -> Result<i32> {
    let file = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = file.overridden_by(&flags_config(cli));
    cfg.validate()?;
    if let Some(n) = cfg.threads {
        // a pool already set up in this process keeps its size
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let ctx = Ctx {
        cfg,
        format: cli.format,
    };
    match &cli.command {
        Command::Count { x, brute, .. } => cmd_count(&ctx, x, *brute)?,
        Command::Error {
            x, x_min, x_max, ..
        } => {
            let range = x_min.as_deref().zip(x_max.as_deref());
            cmd_error(&ctx, x.as_deref(), range)?
        }
        Command::VoronoiGap { h, .. } => cmd_voronoi_gap(&ctx, *h)?,
        Command::Phi {
            m,
            t0,
            t1,
            points,
            resummed,
            t,
            ..
        } => match t {
            Some(t) => cmd_phi(&ctx, *m, *t, *t, 1, *resummed)?,
            None => cmd_phi(&ctx, *m, *t0, *t1, *points, *resummed)?,
        },
        Command::PhiSum { .. } => cmd_phi_sum(&ctx)?,
        Command::Moments { m, l, method, .. } => cmd_moments(&ctx, *m, *l, *method)?,
        Command::DensityMoment { j, .. } => cmd_density_moment(&ctx, *j)?,
        Command::ThirdMoment { .. } => cmd_third_moment(&ctx)?,
        Command::Density { meta, .. } => cmd_density(&ctx, meta.as_deref())?,
        Command::Empirical {
            m_list,
            hist_bins,
            hist_out,
            no_density,
            ..
        } => cmd_empirical(&ctx, m_list, *hist_bins, hist_out.as_deref(), *no_density)?,
        Command::Verify { only } => {
            if !cmd_verify(&ctx, only.as_deref())? {
                return Ok(1);
            }
        }
    }
    Ok(0)
}

/// Parses `argv` and runs the subcommand: 0 on success, 1 when acceptance fails,
/// 2 on argument errors and 3 on budget, table and other runtime errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
