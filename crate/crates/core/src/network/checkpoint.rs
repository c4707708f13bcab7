//! JSON checkpoint: spec, init seed, flat parameter arrays and an optional
//! mask. Floats are written in shortest round-trip form, so save/load is
//! bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LayerParams, Network, NetworkSpec};
use crate::error::{Error, Result};
use crate::sparsity::{MaskRecord, MaskSet};

const FORMAT: &str = "weedout-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub spec: NetworkSpec,
    pub init_seed: u64,
    pub params: Vec<Option<LayerParams>>,
    #[serde(default)]
    pub mask: Option<MaskRecord>,
}

impl Checkpoint {
    pub fn new(net: &Network, mask: Option<&MaskSet>) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            spec: net.spec().clone(),
            init_seed: net.init_seed(),
            params: net.params().to_vec(),
            mask: mask.map(MaskSet::to_record),
        }
    }

    pub fn network(&self) -> Result<Network> {
        Network::from_parts(self.spec.clone(), self.params.clone(), self.init_seed)
    }

    /// Decodes the stored mask, verifying it against its sampling seed.
    pub fn mask(&self) -> Result<Option<MaskSet>> {
        self.mask
            .as_ref()
            .map(|r| MaskSet::from_record(&self.spec, r))
            .transpose()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s).map_err(|e| Error::Serde(e.to_string()))?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(Error::Serde(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        ck.network()?;
        ck.mask()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}
