//! Config files: flat TOML whose keys mirror the command-line flags
//! (`true-effect = 0.0`, `seeds = "1-30"`, ...), plus optional
//! `[selectors.<name>]` tables that override fields of a named preset.
//!
//! ```toml
//! scenario = [1, 2]
//! n = 1000
//! seeds = "1-10"
//! models = ["enh-esvms", "wide-svm"]
//!
//! [selectors.wide-svm]
//! base = "enh-esvms"
//! svm-c = 10.0
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use tristage::frameworks::SelectorConfig;

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> OneOrMany<T> {
    pub fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum SeedList {
    Text(String),
    One(u64),
    Many(Vec<u64>),
}

impl SeedList {
    pub fn resolve(&self) -> Result<Vec<u64>> {
        match self {
            SeedList::Text(s) => parse_seeds(s),
            SeedList::One(v) => Ok(vec![*v]),
            SeedList::Many(v) => Ok(v.clone()),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FileConfig {
    pub scenario: Option<OneOrMany<u8>>,
    pub n: Option<OneOrMany<usize>>,
    pub rho: Option<OneOrMany<f64>>,
    pub seeds: Option<SeedList>,
    pub models: Option<OneOrMany<String>>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub true_effect: Option<f64>,
    pub p: Option<usize>,

    pub store: Option<PathBuf>,
    pub kind: Option<String>,

    pub csv: Option<PathBuf>,
    pub treatment: Option<String>,
    pub outcome: Option<String>,
    pub iters: Option<usize>,
    pub control_sample: Option<usize>,
    pub threshold: Option<f64>,
    pub expert_features: Option<OneOrMany<String>>,
    pub seed: Option<u64>,
    pub sample_att: Option<bool>,

    pub selectors: BTreeMap<String, toml::Table>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))
    }

    /// Resolve model names to selector configurations.
    pub fn selectors_for(&self, names: &[String]) -> Result<Vec<SelectorConfig>> {
        names.iter().map(|n| self.selector(n)).collect()
    }

    /// A preset, or a `[selectors.<name>]` table layered over its `base` preset
    /// (the table's own name when `base` is absent).
    pub fn selector(&self, name: &str) -> Result<SelectorConfig> {
        let Some(table) = self.selectors.get(name) else {
            return Ok(SelectorConfig::preset(name)?);
        };
        let base = match table.get("base") {
            Some(toml::Value::String(b)) => b.as_str(),
            Some(other) => return Err(BenchError::Config(format!("selectors.{name}.base must be a string, got {other}"))),
            None => name,
        };
        let preset = SelectorConfig::preset(base)?;
        let mut merged = match toml::Value::try_from(&preset) {
            Ok(toml::Value::Table(t)) => t,
            _ => return Err(BenchError::Config("selector preset did not serialize to a table".into())),
        };
        for (key, value) in table {
            if key != "base" {
                merged.insert(key.replace('-', "_"), value.clone());
            }
        }
        merged.insert("name".into(), toml::Value::String(name.to_string()));
        let cfg: SelectorConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| BenchError::Config(format!("selectors.{name}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parse seed lists such as `1-30`, `1,2,5` or `1-10,15`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || BenchError::Usage(format!("bad seed list '{text}' (expected e.g. 1-30 or 1,2,5)"));
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: u64 = a.trim().parse().map_err(|_| bad())?;
                let b: u64 = b.trim().parse().map_err(|_| bad())?;
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tristage::frameworks::ExposureEstimator;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1-3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_seeds("1-2, 7").unwrap(), vec![1, 2, 7]);
        assert!(parse_seeds("3-1").is_err());
        assert!(parse_seeds("x").is_err());
        assert!(parse_seeds("").is_err());
    }

    #[test]
    fn flat_keys_and_overrides() {
        let cfg = FileConfig::parse(
            r#"
            scenario = 1
            n = [200, 500]
            seeds = "1-4"
            true-effect = 2.0
            models = ["enh-esvms", "wide"]

            [selectors.wide]
            base = "enh-elrt"
            svm-c = 10.0
            folds = 5
            "#,
        )
        .unwrap();
        assert_eq!(cfg.scenario.clone().unwrap().into_vec(), vec![1]);
        assert_eq!(cfg.n.clone().unwrap().into_vec(), vec![200, 500]);
        assert_eq!(cfg.seeds.as_ref().unwrap().resolve().unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(cfg.true_effect, Some(2.0));
        let wide = cfg.selector("wide").unwrap();
        assert_eq!(wide.name, "wide");
        assert_eq!(wide.exposure, ExposureEstimator::Logistic);
        assert_eq!((wide.svm_c, wide.folds), (10.0, 5));
        assert_eq!(cfg.selector("enh-esvms").unwrap(), SelectorConfig::preset("enh-esvms").unwrap());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(FileConfig::parse("scenarios = 1").is_err());
        let cfg = FileConfig::parse("[selectors.enh-esvms]\nbogus = 1").unwrap();
        assert!(cfg.selector("enh-esvms").is_err());
        assert!(FileConfig::default().selector("nope").is_err());
    }
}
