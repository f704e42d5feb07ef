//! Flat `key = value` configuration. Plain keys set [`Hyperparams`] fields
//! (`ablation` takes a preset name, `ablation.<flag>` a single switch);
//! `synthetic.<field>` keys configure the generator.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::Value;

use crate::data::{AnomalyKind, PlantedEdge, SyntheticConfig};
use crate::error::{Error, Result};
use crate::model::{Ablation, Hyperparams};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", no + 1)))?;
            values.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Apply `key=value` overrides on top of the file values.
    pub fn with_overrides(mut self, sets: &[String]) -> Result<Self> {
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got {s:?}")))?;
            self.values.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(self)
    }

    pub fn hyperparams(&self) -> Result<Hyperparams> {
        let mut obj = match serde_json::to_value(Hyperparams::default())? {
            Value::Object(o) => o,
            _ => unreachable!("struct serializes to an object"),
        };
        for (key, raw) in self.values.iter().filter(|(k, _)| !k.starts_with("synthetic.")) {
            if key == "ablation" {
                obj.insert(key.clone(), serde_json::to_value(Ablation::preset(raw)?)?);
                continue;
            }
            if let Some(flag) = key.strip_prefix("ablation.") {
                let ab = obj.get_mut("ablation").and_then(Value::as_object_mut).expect("ablation object");
                if !ab.contains_key(flag) {
                    return Err(Error::Config(format!("unknown ablation flag {flag:?}")));
                }
                ab.insert(flag.to_string(), scalar(raw));
                continue;
            }
            if !obj.contains_key(key.as_str()) {
                return Err(Error::Config(format!("unknown config key {key:?}")));
            }
            obj.insert(key.clone(), scalar(raw));
        }
        let hp: Hyperparams = serde_json::from_value(Value::Object(obj))
            .map_err(|e| Error::Config(format!("invalid hyperparameter value: {e}")))?;
        hp.validate()?;
        Ok(hp)
    }

    pub fn synthetic(&self) -> Result<SyntheticConfig> {
        let mut cfg = SyntheticConfig::default();
        for (key, raw) in &self.values {
            let Some(field) = key.strip_prefix("synthetic.") else { continue };
            let bad = |what: &str| Error::Config(format!("synthetic.{field}: cannot parse {raw:?} as {what}"));
            let count = || raw.parse::<usize>().map_err(|_| bad("an integer"));
            let real = || raw.parse::<f64>().map_err(|_| bad("a number"));
            match field {
                "n_sensors" => cfg.n_sensors = count()?,
                "t_train" => cfg.t_train = count()?,
                "t_test" => cfg.t_test = count()?,
                "dim" => cfg.dim = count()?,
                "noise_std" => cfg.noise_std = real()?,
                "anomaly_rate" => cfg.anomaly_rate = real()?,
                "seed" => cfg.seed = raw.parse().map_err(|_| bad("an integer"))?,
                "anomaly_kinds" => {
                    cfg.anomaly_kinds = raw
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(str::parse::<AnomalyKind>)
                        .collect::<Result<_>>()?
                }
                "planted_edges" => cfg.planted_edges = parse_edges(raw)?,
                other => return Err(Error::Config(format!("unknown config key \"synthetic.{other}\""))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// `cause>effect@lag:coef` entries separated by `;`.
pub fn parse_edges(raw: &str) -> Result<Vec<PlantedEdge>> {
    raw.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|e| {
            let bad = || Error::Config(format!("edge {e:?}: expected cause>effect@lag:coef"));
            let (pair, rest) = e.split_once('@').ok_or_else(bad)?;
            let (c, f) = pair.split_once('>').ok_or_else(bad)?;
            let (lag, coef) = rest.split_once(':').ok_or_else(bad)?;
            Ok(PlantedEdge::new(
                c.trim().parse().map_err(|_| bad())?,
                f.trim().parse().map_err(|_| bad())?,
                lag.trim().parse().map_err(|_| bad())?,
                coef.trim().parse().map_err(|_| bad())?,
            ))
        })
        .collect()
}
