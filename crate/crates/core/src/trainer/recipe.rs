//! Multi-stage training recipes, e.g. pre-training a small recognizer and
//! transplanting its front-end into a larger one.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::Deserialize;

use crate::{Error, Result};

/// One `train-vsr` invocation of a recipe.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub name: String,
    /// Earlier stage whose final checkpoint seeds this stage's front-end.
    #[serde(default)]
    pub init_frontend_from: Option<String>,
    /// Flat configuration overrides for this stage.
    #[serde(default)]
    pub config: BTreeMap<String, toml::Value>,
}

impl Stage {
    /// Overrides rendered as strings, the form the run configuration takes.
    pub fn overrides(&self) -> Vec<(String, String)> {
        self.config
            .iter()
            .map(|(k, v)| {
                let s = match v {
                    toml::Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                (k.clone(), s)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recipe {
    #[serde(rename = "stage")]
    pub stages: Vec<Stage>,
}

impl Recipe {
    pub fn parse(text: &str) -> Result<Self> {
        let r: Recipe = toml::from_str(text).map_err(|e| Error::Config(format!("recipe: {e}")))?;
        r.validate()?;
        Ok(r)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("recipe has no stages".into()));
        }
        let mut seen = HashSet::new();
        for s in &self.stages {
            if let Some(from) = &s.init_frontend_from {
                if !seen.contains(from.as_str()) {
                    return Err(Error::Config(format!(
                        "stage `{}` initializes from `{from}`, which is not an earlier stage",
                        s.name
                    )));
                }
            }
            if !seen.insert(s.name.as_str()) {
                return Err(Error::Config(format!("duplicate stage name `{}`", s.name)));
            }
        }
        Ok(())
    }
}
