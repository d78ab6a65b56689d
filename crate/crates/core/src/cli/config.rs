//! Flat `section.key = value` run configuration.
//!
//! Sections: `env.*` (environment constants, `env.id` required), `train.*`
//! (training settings) and `run.*` (output directory, workers). Values are
//! JSON literals where they parse as such and bare strings otherwise.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use crate::algo::TrainConfig;
use crate::envs::{EnvConfig, EnvId};
use crate::error::{Error, Result};

pub const SEED_ENV: &str = "M3FC_SEED";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub out_dir: PathBuf,
    /// Rayon threads; 0 picks logical cores − 1.
    pub workers: usize,
}

fn parse_value(raw: &str) -> Value {
    let raw = raw.trim();
    if let Ok(x) = raw.parse::<f64>() {
        // `1e6` should fill an integer field
        if x.is_finite() && x.fract() == 0.0 && x.abs() < 9.0e15 {
            return if x < 0.0 { Value::from(x as i64) } else { Value::from(x as u64) };
        }
    }
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// `key → raw value` pairs in file order; later duplicates win.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn merge(base: Value, overrides: &BTreeMap<&str, &String>, section: &str) -> Result<Value> {
    let mut obj = match base {
        Value::Object(m) => m,
        _ => Map::new(),
    };
    for (k, v) in overrides {
        if !obj.contains_key(*k) {
            return Err(Error::Config(format!("unknown key `{section}.{k}`")));
        }
        obj.insert(k.to_string(), parse_value(v));
    }
    Ok(Value::Object(obj))
}

impl RunConfig {
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let mut env_kv = BTreeMap::new();
        let mut train_kv = BTreeMap::new();
        let mut run_kv = BTreeMap::new();
        for (k, v) in pairs {
            match k.split_once('.') {
                Some(("env", f)) if f != "id" => env_kv.insert(f, v),
                Some(("train", f)) => train_kv.insert(f, v),
                Some(("run", f)) => run_kv.insert(f, v),
                Some(("env", _)) => None,
                _ => return Err(Error::Config(format!("unknown key `{k}`"))),
            };
        }
        let id: EnvId = pairs
            .get("env.id")
            .ok_or_else(|| Error::Config("missing field `env.id`".into()))?
            .parse()?;
        let env_json = merge(EnvConfig::default_for(id).to_json(), &env_kv, "env")?;
        let env = EnvConfig::from_json(&env_json)?;
        let train_json = merge(serde_json::to_value(TrainConfig::default()).expect("serializable"), &train_kv, "train")?;
        let train: TrainConfig = serde_json::from_value(train_json).map_err(|e| Error::Config(format!("train: {e}")))?;
        let mut out_dir = PathBuf::from("runs");
        let mut workers = 0;
        for (k, v) in run_kv {
            match k {
                "out_dir" => out_dir = PathBuf::from(v),
                "workers" => workers = v.parse().map_err(|_| Error::Config(format!("run.workers: `{v}` is not a count")))?,
                _ => return Err(Error::Config(format!("unknown key `run.{k}`"))),
            }
        }
        Ok(Self {
            env,
            train,
            out_dir,
            workers,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(&parse_pairs(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Replaces the seed when `value` is set.
    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            self.train.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}: `{v}` is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.env.build().map(|_| ())
    }

    /// Every resolved key, sorted, in the input format.
    pub fn to_flat(&self) -> String {
        let mut s = String::new();
        let mut section = |name: &str, v: Value| {
            if let Value::Object(m) = v {
                let mut keys: Vec<_> = m.into_iter().collect();
                keys.sort_by(|a, b| a.0.cmp(&b.0));
                for (k, v) in keys {
                    let v = match v {
                        Value::String(s) => s,
                        other => other.to_string(),
                    };
                    writeln!(s, "{name}.{k} = {v}").expect("string write");
                }
            }
        };
        section("env", self.env.to_json());
        section("train", serde_json::to_value(&self.train).expect("serializable"));
        let run = serde_json::json!({
            "out_dir": self.out_dir.display().to_string(),
            "workers": self.workers,
        });
        section("run", run);
        s
    }
}
