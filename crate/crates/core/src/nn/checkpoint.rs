//! Checkpoint file layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "M3FCCKPT"
//! version    u32      1
//! header_len u32
//! header     JSON     {networks (shapes, heads, value scaling), env, env_steps, iteration}
//! count      u64      number of parameters
//! params     count × f64 (LE)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PolicyParams;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"M3FCCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub networks: PolicyParams,
    /// Resolved environment configuration the parameters were trained on.
    pub env: serde_json::Value,
    pub env_steps: u64,
    pub iteration: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParams,
    pub env: serde_json::Value,
    pub env_steps: u64,
    pub iteration: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            networks: self.params.clone(),
            env: self.env.clone(),
            env_steps: self.env_steps,
            iteration: self.iteration,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let mut out = Vec::with_capacity(24 + json.len() + 8 * self.params.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.params.data.len() as u64).to_le_bytes());
        for x in &self.params.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing checkpoint magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| Error::Format(e.to_string()))?;
        let rest = &bytes[16 + hlen..];
        if rest.len() < 8 {
            return Err(bad("truncated parameter count"));
        }
        let count = u64::from_le_bytes(rest[..8].try_into().unwrap()) as usize;
        let raw = &rest[8..];
        if raw.len() != 8 * count {
            return Err(bad("parameter block length disagrees with count"));
        }
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let n = header.networks;
        let mut params = PolicyParams::from_parts(n.policy, n.value, n.heads, data)?;
        params.value_norm = n.value_norm;
        Ok(Self {
            params,
            env: header.env,
            env_steps: header.env_steps,
            iteration: header.iteration,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{HeadConfig, MajorHead, XiLayout};
    use rand::SeedableRng;

    #[test]
    fn roundtrip_and_corruption() {
        let heads = HeadConfig {
            major: MajorHead::Categorical { k: 3 },
            xi: XiLayout::Finite { states: 3, actions: 3 },
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let params = PolicyParams::init(9, &[4, 4], heads, &mut rng).unwrap();
        let ck = Checkpoint {
            params,
            env: serde_json::json!({"id": "toy3"}),
            env_steps: 123,
            iteration: 4,
        };
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad.pop();
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }
}
