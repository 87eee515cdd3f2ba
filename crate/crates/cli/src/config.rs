//! Flat JSON configuration: one object whose keys are the field names of
//! the generator, model, training, cache and refresh settings.

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{bail, Context, Result};
use relevance::data::GenConfig;
use relevance::model::ModelConfig;
use relevance::serve::{CacheConfig, RefreshConfig};
use relevance::train::TrainConfig;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Clone, Debug, Default)]
pub struct Settings {
    doc: Map<String, Value>,
}

fn keys_of<T: Serialize + Default>() -> BTreeSet<String> {
    match serde_json::to_value(T::default()) {
        Ok(Value::Object(m)) => m.into_iter().map(|(k, _)| k).collect(),
        _ => BTreeSet::new(),
    }
}

impl Settings {
    pub fn from_value(value: Value) -> Result<Self> {
        let Value::Object(doc) = value else {
            bail!("configuration must be a JSON object");
        };
        let mut known = keys_of::<GenConfig>();
        known.extend(keys_of::<ModelConfig>());
        known.extend(keys_of::<TrainConfig>());
        known.extend(keys_of::<CacheConfig>());
        known.extend(keys_of::<RefreshConfig>());
        if let Some(k) = doc.keys().find(|k| !known.contains(*k)) {
            bail!("unknown configuration key {k:?}");
        }
        Ok(Self { doc })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Self::from_value(value).with_context(|| format!("in {}", path.display()))
    }

    /// `base` with every key of the document that names one of its fields
    /// replaced.
    pub fn overlay<T: Serialize + DeserializeOwned>(&self, base: T) -> Result<T> {
        let Value::Object(mut fields) = serde_json::to_value(base)? else {
            bail!("settings section is not an object");
        };
        for (k, v) in &self.doc {
            if fields.contains_key(k) {
                fields.insert(k.clone(), v.clone());
            }
        }
        Ok(serde_json::from_value(Value::Object(fields))?)
    }

    pub fn gen(&self, seed: Option<u64>) -> Result<GenConfig> {
        let mut c: GenConfig = self.overlay(GenConfig::default())?;
        if let Some(s) = seed {
            c.seed = s;
        }
        Ok(c)
    }

    pub fn train(&self, base: TrainConfig, seed: Option<u64>) -> Result<TrainConfig> {
        let mut c = self.overlay(base)?;
        if let Some(s) = seed {
            c.seed = s;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn model(&self, vocab_size: usize) -> Result<ModelConfig> {
        let c: ModelConfig = self.overlay(ModelConfig::default())?;
        let c = c.with_vocab(vocab_size);
        c.validate()?;
        Ok(c)
    }

    pub fn cache(&self) -> Result<CacheConfig> {
        self.overlay(CacheConfig::default())
    }

    pub fn refresh(&self) -> Result<RefreshConfig> {
        self.overlay(RefreshConfig::default())
    }
}
