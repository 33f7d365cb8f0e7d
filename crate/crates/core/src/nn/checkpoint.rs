//! Versioned JSON checkpoints. Reals are written in shortest round-trip
//! form and parsed with exact rounding, so reloads are bit-identical.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layer::{LayerParams, LayerSpec};
use super::network::Network;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "ltfu-nn";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub layers: Vec<LayerSpec>,
    pub params: Vec<LayerParams>,
}

impl Checkpoint {
    pub fn from_network(net: &Network) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            layers: net.specs().to_vec(),
            params: net.params().to_vec(),
        }
    }

    pub fn into_network(self) -> Result<Network> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format '{}'", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", self.version)));
        }
        Network::from_parts(self.layers, self.params)
    }
}

pub fn to_json(net: &Network) -> Result<String> {
    serde_json::to_string(&Checkpoint::from_network(net)).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn from_json(text: &str) -> Result<Network> {
    let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    ckpt.into_network()
}

pub fn save(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_json(net)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}
