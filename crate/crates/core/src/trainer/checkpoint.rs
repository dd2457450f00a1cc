use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainError, TrainState};

pub const CHECKPOINT_FORMAT: &str = "ilvm-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Self-describing checkpoint document. Tensors carry their shape and a
/// base64 encoding of their little-endian f64 bytes, so values survive
/// exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    pub state: TrainState,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
}

impl Checkpoint {
    pub fn new(config: TrainConfig, state: TrainState) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config,
            state,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("checkpoint serializes");
        out.push(b'\n');
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        let header: Header = serde_json::from_slice(bytes).map_err(|e| TrainError::Corrupt(e.to_string()))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(TrainError::Corrupt(format!("unknown format {:?}", header.format)));
        }
        if header.version != CHECKPOINT_VERSION {
            return Err(TrainError::VersionMismatch {
                found: header.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let ck: Checkpoint = serde_json::from_slice(bytes).map_err(|e| TrainError::Corrupt(e.to_string()))?;
        ck.check()?;
        Ok(ck)
    }

    fn check(&self) -> Result<(), TrainError> {
        let m = &self.state.model;
        let mo = &self.state.moments;
        let pairs = [
            (Some(&m.generative.params), Some(&mo.theta)),
            (Some(&m.recognition.params), Some(&mo.phi)),
            (m.latent_ratio.as_ref().map(|r| &r.params), mo.alpha.as_ref()),
            (m.observed_ratio.as_ref().map(|r| &r.params), mo.beta.as_ref()),
        ];
        for (params, moments) in pairs {
            match (params, moments) {
                (None, None) => {}
                (Some(p), Some(mom)) => {
                    let ok = mom.m.len() == p.len()
                        && mom.v.len() == p.len()
                        && p.values().zip(&mom.m).zip(&mom.v).all(|((a, b), c)| a.shape() == b.shape() && a.shape() == c.shape());
                    if !ok {
                        return Err(TrainError::Corrupt("optimizer moments do not match parameters".into()));
                    }
                }
                _ => return Err(TrainError::Corrupt("parameter groups and moments disagree".into())),
            }
        }
        Ok(())
    }
}

/// Writes atomically: the document goes to a sibling temporary file that is
/// then renamed over `path`.
pub fn save_checkpoint(path: &Path, config: &TrainConfig, state: &TrainState) -> Result<(), TrainError> {
    let bytes = Checkpoint::new(config.clone(), state.clone()).to_bytes();
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(TrainConfig, TrainState), TrainError> {
    let ck = Checkpoint::from_bytes(&fs::read(path)?)?;
    Ok((ck.config, ck.state))
}
