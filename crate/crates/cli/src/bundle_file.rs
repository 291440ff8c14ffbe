use std::path::Path;

use anyhow::{bail, Context, Result};
use mogp_risk::risk::ModelBundle;
use serde::{Deserialize, Serialize};

use crate::output::write_atomic;

pub const BUNDLE_FORMAT: &str = "mogp-bundle";
pub const BUNDLE_VERSION: u32 = 1;

/// On-disk model bundle: a versioned JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleFile {
    pub format: String,
    pub version: u32,
    pub bundle: ModelBundle,
}

impl BundleFile {
    pub fn new(bundle: ModelBundle) -> Self {
        Self { format: BUNDLE_FORMAT.to_string(), version: BUNDLE_VERSION, bundle }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }

    pub fn from_slice(bytes: &[u8], name: &str) -> Result<Self> {
        let file: Self = serde_json::from_slice(bytes).with_context(|| format!("{name} is not a model bundle"))?;
        if file.format != BUNDLE_FORMAT {
            bail!("{name}: unexpected format '{}'", file.format);
        }
        if file.version != BUNDLE_VERSION {
            bail!("{name}: bundle version {} is not supported (expected {BUNDLE_VERSION})", file.version);
        }
        file.bundle.validate().with_context(|| format!("{name} holds an inconsistent bundle"))?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<ModelBundle> {
        let bytes = std::fs::read(path).with_context(|| format!("cannot read bundle {}", path.display()))?;
        Ok(Self::from_slice(&bytes, &path.display().to_string())?.bundle)
    }

    pub fn save(bundle: &ModelBundle, path: &Path) -> Result<()> {
        let bytes = Self::new(bundle.clone()).to_bytes()?;
        write_atomic(path, |w| Ok(w.write_all(&bytes)?))
    }
}
