//! Layered JSON configuration: defaults, then a config file, then `--seed`, then `--set`.
//!
//! Every key coming from a file or a `--set` override must already exist in the
//! serialized defaults, so typos fail loudly instead of being ignored.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("config {path} is not valid JSON: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("override '{0}' is not of the form key=value")]
    BadOverride(String),
    #[error("invalid configuration: {0}")]
    Invalid(serde_json::Error),
}

impl ConfigError {
    /// True for mistakes in the command line itself rather than in files it names.
    pub fn is_usage(&self) -> bool {
        matches!(self, ConfigError::UnknownKey(_) | ConfigError::BadOverride(_))
    }
}

/// Where the global `--seed` lands in a command's configuration.
pub trait SeedPath {
    const SEED_PATH: &'static str;
}

/// Command-line layers applied on top of the defaults.
#[derive(Debug, Clone, Default)]
pub struct Layers<'a> {
    pub file: Option<&'a Path>,
    pub seed: Option<u64>,
    /// `(dotted key, JSON value)` pairs applied after the seed and before `--set`.
    pub flags: Vec<(&'static str, Value)>,
    pub sets: &'a [String],
}

pub fn resolve<T>(layers: &Layers) -> Result<T, ConfigError>
where
    T: Default + Serialize + DeserializeOwned + SeedPath,
{
    let defaults = serde_json::to_value(T::default()).expect("defaults serialize");
    let mut value = defaults.clone();
    if let Some(path) = layers.file {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let file: Value = serde_json::from_str(&text).map_err(|source| ConfigError::Json {
            path: path.display().to_string(),
            source,
        })?;
        merge(&mut value, file, &mut String::new())?;
    }
    if let Some(seed) = layers.seed {
        set_path(&mut value, T::SEED_PATH, Value::from(seed))?;
    }
    for (key, v) in &layers.flags {
        set_path(&mut value, key, v.clone())?;
    }
    for s in layers.sets {
        let (key, raw) = s
            .split_once('=')
            .filter(|(k, _)| !k.is_empty())
            .ok_or_else(|| ConfigError::BadOverride(s.clone()))?;
        set_path(&mut value, key, parse_value(raw))?;
    }
    serde_json::from_value(value).map_err(ConfigError::Invalid)
}

/// JSON if it parses, otherwise the raw text as a string.
pub fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Recursively overlays `src` onto `dst`. Objects present in the defaults are merged key
/// by key; anything else (including `null` defaults for optional fields) is replaced.
fn merge(dst: &mut Value, src: Value, at: &mut String) -> Result<(), ConfigError> {
    match (dst, src) {
        (Value::Object(d), Value::Object(s)) if !d.is_empty() => {
            for (k, v) in s {
                let len = at.len();
                if !at.is_empty() {
                    at.push('.');
                }
                at.push_str(&k);
                let slot = d.get_mut(&k).ok_or_else(|| ConfigError::UnknownKey(at.clone()))?;
                merge(slot, v, at)?;
                at.truncate(len);
            }
            Ok(())
        }
        (d, s) => {
            *d = s;
            Ok(())
        }
    }
}

fn set_path(root: &mut Value, key: &str, v: Value) -> Result<(), ConfigError> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj: &mut Map<String, Value> = match cur {
            Value::Object(m) => m,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        };
        let slot = obj
            .get_mut(*part)
            .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
        if i + 1 == parts.len() {
            *slot = v;
            return Ok(());
        }
        cur = slot;
    }
    Err(ConfigError::UnknownKey(key.to_string()))
}

#[cfg(test)]
mod tests {
    use serde::Deserialize;

    use super::*;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default)]
    struct Inner {
        seed: u64,
        rate: f64,
    }

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default)]
    struct Cfg {
        inner: Inner,
        name: String,
        path: Option<String>,
    }

    impl SeedPath for Cfg {
        const SEED_PATH: &'static str = "inner.seed";
    }

    #[test]
    fn precedence_is_file_then_seed_then_set() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"inner": {"seed": 1, "rate": 0.5}, "name": "f"}"#).unwrap();
        let sets = vec!["inner.seed=3".to_string(), "name=cli".to_string(), "path=x.json".to_string()];
        let layers = Layers {
            file: Some(&p),
            seed: Some(2),
            flags: vec![],
            sets: &sets,
        };
        let c: Cfg = resolve(&layers).unwrap();
        assert_eq!(c.inner, Inner { seed: 3, rate: 0.5 });
        assert_eq!(c.name, "cli");
        assert_eq!(c.path.as_deref(), Some("x.json"));

        let c: Cfg = resolve(&Layers { sets: &[], ..layers }).unwrap();
        assert_eq!(c.inner.seed, 2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let sets = vec!["inner.sed=3".to_string()];
        let err = resolve::<Cfg>(&Layers { sets: &sets, ..Default::default() }).unwrap_err();
        assert!(err.is_usage());
        let sets = vec!["noequals".to_string()];
        assert!(matches!(
            resolve::<Cfg>(&Layers { sets: &sets, ..Default::default() }),
            Err(ConfigError::BadOverride(_))
        ));

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"inner": {"rat": 1}}"#).unwrap();
        let err = resolve::<Cfg>(&Layers { file: Some(&p), ..Default::default() }).unwrap_err();
        assert_eq!(err.to_string(), "unknown config key 'inner.rat'");
    }

    #[test]
    fn type_errors_surface_as_invalid() {
        let sets = vec!["inner.rate=fast".to_string()];
        assert!(matches!(
            resolve::<Cfg>(&Layers { sets: &sets, ..Default::default() }),
            Err(ConfigError::Invalid(_))
        ));
    }
}
