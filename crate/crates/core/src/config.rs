//! `lumactl.toml`: flat dotted keys such as `schedule.T = 50`.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::diffusion::ScheduleParams;
use crate::pipeline::EnhanceOptions;
use crate::prompt::{VocabError, VocabularyTable};

pub const CONFIG_ENV: &str = "LUMACTL_CONFIG";
pub const DEFAULT_CONFIG_FILE: &str = "lumactl.toml";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("unknown config key {0}")]
    UnknownKey(String),
    #[error("config key {key}: {message}")]
    BadValue { key: String, message: String },
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub schedule: ScheduleParams,
    pub tbc_sigma: f64,
    pub retinex_lambda: f64,
    pub vocab: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        let o = EnhanceOptions::default();
        Self { schedule: o.schedule, tbc_sigma: o.smooth_sigma, retinex_lambda: o.retinex.lambda, vocab: None }
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, toml::Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

fn number(key: &str, v: &toml::Value) -> Result<f64, ConfigError> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(ConfigError::BadValue { key: key.into(), message: "expected a number".into() }),
    }
}

impl Config {
    /// Relative vocabulary paths resolve against `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse()?;
        let mut entries = Vec::new();
        flatten("", &table, &mut entries);
        let mut c = Config::default();
        for (key, v) in entries {
            match key.as_str() {
                "schedule.T" => {
                    let t = match v {
                        toml::Value::Integer(i) if i >= 1 => i as usize,
                        _ => return Err(ConfigError::BadValue { key, message: "expected a positive integer".into() }),
                    };
                    c.schedule.steps = t;
                }
                "schedule.beta_start" => c.schedule.beta_start = number(&key, &v)?,
                "schedule.beta_end" => c.schedule.beta_end = number(&key, &v)?,
                "tbc.sigma" => {
                    c.tbc_sigma = number(&key, &v)?;
                    if c.tbc_sigma < 0.0 {
                        return Err(ConfigError::BadValue { key, message: "must be nonnegative".into() });
                    }
                }
                "retinex.lambda" => {
                    c.retinex_lambda = number(&key, &v)?;
                    if !(c.retinex_lambda > 0.0) {
                        return Err(ConfigError::BadValue { key, message: "must be positive".into() });
                    }
                }
                "vocab" => {
                    let s = v
                        .as_str()
                        .ok_or_else(|| ConfigError::BadValue { key: key.clone(), message: "expected a path string".into() })?;
                    let p = PathBuf::from(s);
                    c.vocab = Some(match base {
                        Some(b) if p.is_relative() => b.join(p),
                        _ => p,
                    });
                }
                _ => return Err(ConfigError::UnknownKey(key)),
            }
        }
        let s = &c.schedule;
        if !(s.beta_start > 0.0 && s.beta_start <= s.beta_end && s.beta_end < 1.0) {
            return Err(ConfigError::BadValue {
                key: "schedule".into(),
                message: format!("need 0 < beta_start <= beta_end < 1, got {} and {}", s.beta_start, s.beta_end),
            });
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::parse(&text, path.parent())
    }

    /// Explicit path, then `$LUMACTL_CONFIG`, then `./lumactl.toml` if present.
    pub fn discover(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        if let Some(p) = explicit {
            return Self::load(p);
        }
        if let Some(p) = std::env::var_os(CONFIG_ENV) {
            return Self::load(Path::new(&p));
        }
        let local = Path::new(DEFAULT_CONFIG_FILE);
        if local.is_file() {
            return Self::load(local);
        }
        Ok(Self::default())
    }

    pub fn apply(&self, opts: &mut EnhanceOptions) -> Result<(), ConfigError> {
        opts.schedule = self.schedule;
        opts.smooth_sigma = self.tbc_sigma;
        opts.retinex.lambda = self.retinex_lambda;
        if let Some(v) = &self.vocab {
            opts.vocab = VocabularyTable::load(v)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_keys() {
        let c = Config::parse(
            "schedule.T = 20\nschedule.beta_start = 0.001\nschedule.beta_end = 0.3\ntbc.sigma = 0\nretinex.lambda = 0.5\nvocab = \"v.json\"\n",
            Some(Path::new("/etc/lumactl")),
        )
        .unwrap();
        assert_eq!(c.schedule, ScheduleParams { steps: 20, beta_start: 0.001, beta_end: 0.3 });
        assert_eq!(c.tbc_sigma, 0.0);
        assert_eq!(c.retinex_lambda, 0.5);
        assert_eq!(c.vocab, Some(PathBuf::from("/etc/lumactl/v.json")));
        let t = Config::parse("[schedule]\nT = 7\n", None).unwrap();
        assert_eq!(t.schedule.steps, 7);
        assert_eq!(Config::parse("", None).unwrap(), Config::default());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(Config::parse("color.mode = 1", None), Err(ConfigError::UnknownKey(k)) if k == "color.mode"));
        assert!(matches!(Config::parse("schedule.T = 0", None), Err(ConfigError::BadValue { .. })));
        assert!(matches!(Config::parse("tbc.sigma = \"x\"", None), Err(ConfigError::BadValue { .. })));
        assert!(matches!(Config::parse("schedule.beta_end = 1.5", None), Err(ConfigError::BadValue { .. })));
        assert!(matches!(Config::parse("= =", None), Err(ConfigError::Syntax(_))));
    }

    #[test]
    fn apply_sets_options() {
        let c = Config::parse("tbc.sigma = 1.5\nretinex.lambda = 0.3", None).unwrap();
        let mut o = EnhanceOptions::default();
        c.apply(&mut o).unwrap();
        assert_eq!(o.smooth_sigma, 1.5);
        assert_eq!(o.retinex.lambda, 0.3);
    }
}
