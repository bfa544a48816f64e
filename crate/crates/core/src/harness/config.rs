//! TOML run configuration. Every section and field is optional; omitted
//! values take the documented defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapt::AdaptConfig;
use crate::error::{Error, Result};
use crate::metalearn::MetaConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub meta: MetaConfig,
    pub adapt: AdaptConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.meta.validate()?;
        c.adapt.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}
