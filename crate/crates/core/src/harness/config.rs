use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use super::HarnessError;
use crate::classifier::VerifierConfig;
use crate::corpus::{Layout, SplitConfig, Target};
use crate::embedder::EmbedderConfig;
use crate::preprocess::PreprocessConfig;

pub const ENV_PREFIX: &str = "AUTHNET_";

/// Keys that are absent from the defaults because they hold no value there.
const OPTIONAL_KEYS: &[&str] = &[
    "cache_dir",
    "preprocess.detector.cascade_path",
    "embedder.weights_path",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub root: PathBuf,
    pub layout: Layout,
    /// Column heading in the aggregate tables.
    pub name: String,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            root: PathBuf::from("data/miracl-vc1"),
            layout: Layout::MiraclVc1,
            name: "MIRACL-VC1".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root of every artifact: manifest, reports, plots, models, cache.
    pub output: PathBuf,
    /// Defaults to `<output>/cache`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    /// Drives held-out selection and the train/test shuffle.
    pub seed: u64,
    /// Combinations run concurrently; 0 uses every core.
    pub parallelism: usize,
    /// Keep normalised face crops under `<cache>/frames` as PNG files.
    pub cache_frames: bool,
    /// Restricts the run to these `speaker/word` combinations; empty runs all.
    pub targets: Vec<String>,
    pub corpus: CorpusConfig,
    pub split: SplitConfig,
    pub preprocess: PreprocessConfig,
    pub embedder: EmbedderConfig,
    pub classifier: VerifierConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output: PathBuf::from("authnet-out"),
            cache_dir: None,
            seed: 0,
            parallelism: 0,
            cache_frames: false,
            targets: Vec::new(),
            corpus: CorpusConfig::default(),
            split: SplitConfig::default(),
            preprocess: PreprocessConfig::default(),
            embedder: EmbedderConfig::default(),
            classifier: VerifierConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let invalid = |m: String| Err(HarnessError::ConfigInvalid(m));
        self.split
            .validate()
            .or_else(|e| invalid(e.to_string()))?;
        self.preprocess
            .validate()
            .or_else(|e| invalid(e.to_string()))?;
        self.classifier
            .validate()
            .or_else(|e| invalid(e.to_string()))?;
        if self.classifier.timesteps != self.preprocess.timesteps {
            return invalid(format!(
                "classifier.T = {} must equal preprocess.T = {}",
                self.classifier.timesteps, self.preprocess.timesteps
            ));
        }
        if self.classifier.dimension != self.embedder.dimension {
            return invalid(format!(
                "classifier.D = {} must equal embedder.dimension = {}",
                self.classifier.dimension, self.embedder.dimension
            ));
        }
        if self.embedder.dimension == 0 || self.embedder.grid == 0 {
            return invalid("embedder.dimension and embedder.grid must be positive".into());
        }
        self.target_filter()?;
        Ok(())
    }

    pub fn target_filter(&self) -> Result<Vec<Target>, HarnessError> {
        self.targets
            .iter()
            .map(|t| {
                t.parse()
                    .map_err(|e: String| HarnessError::ConfigInvalid(format!("targets: {e}")))
            })
            .collect()
    }

    pub fn cache_root(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.output.join("cache"))
    }

    /// Hex digest of every setting that changes results. Output location,
    /// cache location and parallelism are excluded.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output = PathBuf::new();
        c.cache_dir = None;
        c.parallelism = 0;
        c.cache_frames = false;
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn threads(&self) -> usize {
        if self.parallelism == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            self.parallelism
        }
    }
}

/// Every dotted key the configuration accepts.
pub fn known_keys() -> Vec<String> {
    let table = Value::try_from(ExperimentConfig::default()).expect("config serializes");
    let mut keys = Vec::new();
    flatten("", &table, &mut keys);
    keys.extend(OPTIONAL_KEYS.iter().map(|k| k.to_string()));
    keys.sort();
    keys
}

fn flatten(prefix: &str, value: &Value, out: &mut Vec<String>) {
    match value {
        Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        _ => out.push(prefix.to_string()),
    }
}

/// `AUTHNET_` followed by the key upper-cased with dots as underscores,
/// e.g. `AUTHNET_CLASSIFIER_EPOCHS`.
pub fn env_var_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.replace('.', "_").to_ascii_uppercase())
}

/// Layers, lowest precedence first: defaults, the TOML file, `AUTHNET_*`
/// variables from `env`, then explicit `key=value` overrides.
pub fn load_config(
    file: Option<&Path>,
    env: impl IntoIterator<Item = (String, String)>,
    overrides: &[(String, String)],
) -> Result<ExperimentConfig, HarnessError> {
    let defaults = match Value::try_from(ExperimentConfig::default()).expect("config serializes") {
        Value::Table(t) => t,
        _ => unreachable!("config is a table"),
    };
    let mut merged = defaults.clone();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| {
            HarnessError::ConfigInvalid(format!("cannot read {}: {e}", path.display()))
        })?;
        let table: Table = text.parse().map_err(|e: toml::de::Error| {
            HarnessError::ConfigInvalid(format!("{}: {}", path.display(), e.message()))
        })?;
        merge(&mut merged, table);
    }

    let keys = known_keys();
    let mut env_pairs: Vec<(String, String)> = Vec::new();
    for (name, value) in env {
        if !name.starts_with(ENV_PREFIX) {
            continue;
        }
        match keys.iter().find(|k| env_var_name(k) == name) {
            Some(k) => env_pairs.push((k.clone(), value)),
            None if name == "AUTHNET_LOG" || name == "AUTHNET_CONFIG" => {}
            None => log::warn!("ignoring {name}: not a configuration key"),
        }
    }
    env_pairs.sort();
    for (key, raw) in env_pairs.iter().chain(overrides) {
        if !keys.contains(key) {
            return Err(HarnessError::ConfigInvalid(format!("unknown configuration key {key:?}")));
        }
        let value = coerce(&defaults, key, raw);
        set_path(&mut merged, key, value)?;
    }

    let config: ExperimentConfig = Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| HarnessError::ConfigInvalid(e.message().to_string()))?;
    config.validate()?;
    Ok(config)
}

fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn lookup<'a>(table: &'a Table, key: &str) -> Option<&'a Value> {
    let mut parts = key.split('.');
    let mut v = table.get(parts.next()?)?;
    for p in parts {
        v = v.as_table()?.get(p)?;
    }
    Some(v)
}

/// Reads `raw` as a TOML literal unless the key holds a string (or an unset
/// path), in which case it is taken verbatim.
fn coerce(defaults: &Table, key: &str, raw: &str) -> Value {
    let stringly = match lookup(defaults, key) {
        Some(Value::String(_)) | None => true,
        Some(_) => false,
    };
    let literal = || {
        format!("v = {raw}")
            .parse::<Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
    };
    if stringly {
        let unquoted = raw
            .strip_prefix('"')
            .and_then(|r| r.strip_suffix('"'))
            .unwrap_or(raw);
        return Value::String(unquoted.to_string());
    }
    if let Some(Value::Array(_)) = lookup(defaults, key) {
        if !raw.trim_start().starts_with('[') {
            return literal_list(raw);
        }
    }
    literal().unwrap_or_else(|| Value::String(raw.to_string()))
}

/// `a,b,c` as an array of literals, for list-valued keys.
fn literal_list(raw: &str) -> Value {
    Value::Array(
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                format!("v = {s}")
                    .parse::<Table>()
                    .ok()
                    .and_then(|mut t| t.remove("v"))
                    .unwrap_or_else(|| Value::String(s.to_string()))
            })
            .collect(),
    )
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<(), HarnessError> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .ok_or_else(|| HarnessError::ConfigInvalid(format!("{key}: {p} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn none() -> Vec<(String, String)> {
        Vec::new()
    }

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back: ExperimentConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn env_names_are_unique() {
        let keys = known_keys();
        let mut names: Vec<String> = keys.iter().map(|k| env_var_name(k)).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), keys.len());
        assert!(keys.contains(&"preprocess.T".to_string()));
        assert!(keys.contains(&"classifier.learning_rate".to_string()));
    }

    #[test]
    fn precedence_file_env_flag() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            "seed = 3\nclassifier.epochs = 7\nclassifier.batch_size = 5\ncorpus.name = \"x\"\n",
        )
        .unwrap();
        let env = vec![
            ("AUTHNET_CLASSIFIER_EPOCHS".to_string(), "9".to_string()),
            ("AUTHNET_CLASSIFIER_LEARNING_RATE".to_string(), "0.01".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ];
        let flags = vec![("classifier.learning_rate".to_string(), "0.5".to_string())];
        let c = load_config(Some(&path), env, &flags).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.classifier.batch_size, 5);
        assert_eq!(c.classifier.epochs, 9);
        assert_eq!(c.classifier.learning_rate, 0.5);
        assert_eq!(c.corpus.name, "x");
    }

    #[test]
    fn typed_coercion() {
        let flags: Vec<(String, String)> = [
            ("corpus.name", "123"),
            ("classifier.hidden_size", "8,4"),
            ("classifier.layers", "2"),
            ("embedder.weights_path", "/w/vgg.onnx"),
            ("preprocess.detector.kind", "full-frame"),
            ("targets", "[\"A/b\"]"),
        ]
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        let c = load_config(None, none(), &flags).unwrap();
        assert_eq!(c.corpus.name, "123");
        assert_eq!(c.classifier.hidden_size, vec![8, 4]);
        assert_eq!(c.embedder.weights_path, Some(PathBuf::from("/w/vgg.onnx")));
        assert_eq!(c.targets, vec!["A/b".to_string()]);
    }

    #[test]
    fn bad_inputs_are_config_errors() {
        let unknown = vec![("classifier.epoch".to_string(), "3".to_string())];
        assert!(matches!(load_config(None, none(), &unknown), Err(HarnessError::ConfigInvalid(_))));
        let wrong_type = vec![("classifier.epochs".to_string(), "many".to_string())];
        assert!(matches!(load_config(None, none(), &wrong_type), Err(HarnessError::ConfigInvalid(_))));
        let inconsistent = vec![("classifier.D".to_string(), "64".to_string())];
        assert!(matches!(load_config(None, none(), &inconsistent), Err(HarnessError::ConfigInvalid(_))));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[classifier]\nbogus = 1\n").unwrap();
        assert!(matches!(load_config(Some(&path), none(), &[]), Err(HarnessError::ConfigInvalid(_))));
    }

    #[test]
    fn digest_ignores_location_and_parallelism() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            output: "elsewhere".into(),
            parallelism: 3,
            ..a.clone()
        };
        assert_eq!(a.digest(), b.digest());
        let c = ExperimentConfig { seed: 1, ..a.clone() };
        assert_ne!(a.digest(), c.digest());
    }
}
