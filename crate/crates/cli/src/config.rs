//! Run configuration: defaults from a key=value file, overridden by flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hcount::{Error, Result};
use serde::{Deserialize, Serialize};

/// Every knob a subcommand may read. Absent fields fall back to the subcommand default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub q: Option<u32>,
    pub table_limit: Option<u64>,
    pub d: Option<u32>,
    pub k: Option<u32>,
    pub m_max: Option<u64>,
    pub cutoff: Option<f64>,
    pub step: Option<f64>,
    pub sigma_step: Option<f64>,
    pub xmin: Option<f64>,
    pub xmax: Option<f64>,
    pub variance_n: Option<u64>,
    /// left end X of the sampling window, as p/r or a decimal
    pub x_lo: Option<String>,
    pub samples: Option<usize>,
    pub out: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub threads: Option<usize>,
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidArgument(format!("config key '{key}': cannot parse '{v}'")))
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("config line {}: expected key = value", no + 1))
            })?;
            let (key, v) = (key.trim(), v.trim());
            match key {
                "q" => c.q = Some(parse(key, v)?),
                "table_limit" | "N" => c.table_limit = Some(parse(key, v)?),
                "D" | "d" => c.d = Some(parse(key, v)?),
                "K" | "k" => c.k = Some(parse(key, v)?),
                "M" | "m_max" => c.m_max = Some(parse(key, v)?),
                "A" | "cutoff" => c.cutoff = Some(parse(key, v)?),
                "step" => c.step = Some(parse(key, v)?),
                "sigma_step" => c.sigma_step = Some(parse(key, v)?),
                "xmin" => c.xmin = Some(parse(key, v)?),
                "xmax" => c.xmax = Some(parse(key, v)?),
                "variance_n" => c.variance_n = Some(parse(key, v)?),
                "X" | "x_lo" => c.x_lo = Some(v.to_string()),
                "samples" => c.samples = Some(parse(key, v)?),
                "out" => c.out = Some(PathBuf::from(v)),
                "cache_dir" => c.cache_dir = Some(PathBuf::from(v)),
                "threads" => c.threads = Some(parse(key, v)?),
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "config line {}: unknown key '{key}'",
                        no + 1
                    )))
                }
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Writes the set fields back as `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut m: BTreeMap<&str, String> = BTreeMap::new();
        let mut put = |k, v: Option<String>| {
            if let Some(v) = v {
                m.insert(k, v);
            }
        };
        put("q", self.q.map(|v| v.to_string()));
        put("table_limit", self.table_limit.map(|v| v.to_string()));
        put("D", self.d.map(|v| v.to_string()));
        put("K", self.k.map(|v| v.to_string()));
        put("M", self.m_max.map(|v| v.to_string()));
        put("A", self.cutoff.map(|v| format!("{v:?}")));
        put("step", self.step.map(|v| format!("{v:?}")));
        put("sigma_step", self.sigma_step.map(|v| format!("{v:?}")));
        put("xmin", self.xmin.map(|v| format!("{v:?}")));
        put("xmax", self.xmax.map(|v| format!("{v:?}")));
        put("variance_n", self.variance_n.map(|v| v.to_string()));
        put("X", self.x_lo.clone());
        put("samples", self.samples.map(|v| v.to_string()));
        put("out", self.out.as_ref().map(|p| p.display().to_string()));
        put(
            "cache_dir",
            self.cache_dir.as_ref().map(|p| p.display().to_string()),
        );
        put("threads", self.threads.map(|v| v.to_string()));
        m.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Fields set in `flags` replace those in `self`.
    pub fn overridden_by(mut self, flags: &RunConfig) -> RunConfig {
        macro_rules! take {
            ($($f:ident),*) => { $( if flags.$f.is_some() { self.$f = flags.$f.clone(); } )* };
        }
        take!(
            q,
            table_limit,
            d,
            k,
            m_max,
            cutoff,
            step,
            sigma_step,
            xmin,
            xmax,
            variance_n,
            x_lo,
            samples,
            out,
            cache_dir,
            threads
        );
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("{what} must be positive")));
        if let Some(q) = self.q {
            if q < 3 {
                return Err(Error::InvalidArgument(format!("q must be >= 3, got {q}")));
            }
        }
        if self.table_limit == Some(0) {
            return bad("table_limit");
        }
        if self.d == Some(0) || self.k == Some(0) {
            return bad("D and K");
        }
        if self.m_max == Some(0) {
            return bad("M");
        }
        for (name, v) in [
            ("A", self.cutoff),
            ("step", self.step),
            ("sigma_step", self.sigma_step),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return bad(name);
                }
            }
        }
        if self.variance_n == Some(0) || self.samples == Some(0) || self.threads == Some(0) {
            return bad("variance_n, samples and threads");
        }
        if let (Some(a), Some(b)) = (self.xmin, self.xmax) {
            if a >= b {
                return Err(Error::InvalidArgument("xmin must be below xmax".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let c = RunConfig::parse(
            "q = 4\nD=12 # depth\nA = 0.25\nX = 3/2\nsamples = 100\ncache_dir = /tmp/x\n",
        )
        .unwrap();
        assert_eq!(c.q, Some(4));
        assert_eq!(c.x_lo.as_deref(), Some("3/2"));
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::parse("q = 2").is_err());
        assert!(RunConfig::parse("D = 0").is_err());
        assert!(RunConfig::parse("A = -1").is_err());
        assert!(RunConfig::parse("colour = blue").is_err());
        assert!(RunConfig::parse("q 3").is_err());
    }

    #[test]
    fn flags_override() {
        let file = RunConfig {
            q: Some(3),
            d: Some(8),
            ..Default::default()
        };
        let flags = RunConfig {
            d: Some(16),
            ..Default::default()
        };
        let c = file.overridden_by(&flags);
        assert_eq!((c.q, c.d), (Some(3), Some(16)));
    }
}
