//! Checkpoint container: one file holding a JSON manifest (config, hash,
//! seed, epoch, metrics, architecture descriptor, optimizer record) and named
//! little-endian f32 arrays for every parameter tensor.
//!
//! Writing is canonical (sorted manifest keys, arrays sorted by name), so
//! load -> save reproduces the input byte for byte. Writes go through a
//! temporary file and an atomic rename.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::recovery::ArchDescriptor;

use super::config::ExperimentConfig;

const MAGIC: &[u8; 8] = b"PRKDCKPT";
const VERSION: u32 = 1;

/// Fixed Adam hyperparameters, recorded alongside the configured rate.
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// A parameter tensor: shape plus row-major f32 data.
pub type NamedArray = (Vec<usize>, Vec<f32>);

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seed: u64,
    pub epoch: usize,
    /// Best-validation metrics JSON (inf serialized as "inf").
    pub metrics: Value,
    pub architecture: ArchDescriptor,
    pub arrays: BTreeMap<String, NamedArray>,
}

impl Checkpoint {
    fn manifest(&self) -> Value {
        serde_json::json!({
            "format_version": VERSION,
            "config": serde_json::to_value(&self.config).expect("config"),
            "config_hash": self.config_hash,
            "seed": self.seed,
            "epoch": self.epoch,
            "metrics": self.metrics,
            "architecture": serde_json::to_value(&self.architecture).expect("arch"),
            "optimizer": {
                "name": "adam",
                "learning_rate": self.config.optimizer.learning_rate,
                "beta1": ADAM_BETA1,
                "beta2": ADAM_BETA2,
                "eps": ADAM_EPS,
                "grad_clip_norm": self.config.optimizer.grad_clip_norm,
            },
        })
    }

    /// Serialize to the container byte format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_string(&self.manifest()).expect("manifest json");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        out.extend_from_slice(&(self.arrays.len() as u64).to_le_bytes());
        for (name, (shape, data)) in &self.arrays {
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u64).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&(data.len() as u64).to_le_bytes());
            for &v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Atomic write: temp file in the same directory, then rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        std::fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(
            ".{}.tmp",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("ckpt")
        ));
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?
            .read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut off = 0usize;
        let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
            if *off + n > bytes.len() {
                return Err(Error::Truncated {
                    offset: *off as u64,
                    what: "checkpoint".into(),
                });
            }
            let s = &bytes[*off..*off + n];
            *off += n;
            Ok(s)
        };
        let read_u64 = |off: &mut usize| -> Result<u64> {
            let s = take(off, 8)?;
            Ok(u64::from_le_bytes(s.try_into().unwrap()))
        };

        if take(&mut off, 8)? != MAGIC {
            return Err(Error::Checkpoint("bad checkpoint magic".into()));
        }
        let version = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let mlen = read_u64(&mut off)? as usize;
        let manifest: Value = serde_json::from_slice(take(&mut off, mlen)?)
            .map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
        let config: ExperimentConfig = serde_json::from_value(manifest["config"].clone())
            .map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
        let config_hash = manifest["config_hash"]
            .as_str()
            .ok_or_else(|| Error::Checkpoint("missing config_hash".into()))?
            .to_string();
        if config.config_hash() != config_hash {
            return Err(Error::Checkpoint(
                "config hash does not match the embedded config".into(),
            ));
        }
        let architecture: ArchDescriptor =
            serde_json::from_value(manifest["architecture"].clone())
                .map_err(|e| Error::Checkpoint(format!("architecture: {e}")))?;
        let seed = manifest["seed"].as_u64().unwrap_or(config.seed);
        let epoch = manifest["epoch"].as_u64().unwrap_or(0) as usize;
        let metrics = manifest["metrics"].clone();

        let count = read_u64(&mut off)? as usize;
        let mut arrays = BTreeMap::new();
        for _ in 0..count {
            let nlen = read_u64(&mut off)? as usize;
            let name = String::from_utf8(take(&mut off, nlen)?.to_vec())
                .map_err(|_| Error::Checkpoint("array name not utf-8".into()))?;
            let ndim = read_u64(&mut off)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u64(&mut off)? as usize);
            }
            let dlen = read_u64(&mut off)? as usize;
            if dlen != shape.iter().product::<usize>() {
                return Err(Error::Checkpoint(format!(
                    "array {name}: data length {dlen} does not match shape {shape:?}"
                )));
            }
            let raw = take(&mut off, dlen * 4)?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            arrays.insert(name, (shape, data));
        }
        if off != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "trailing bytes after checkpoint payload at offset {off}"
            )));
        }
        Ok(Checkpoint {
            config,
            config_hash,
            seed,
            epoch,
            metrics,
            architecture,
            arrays,
        })
    }

    /// SHA-256 over all parameter bytes in name order; the teacher
    /// immutability check compares this before/after distillation.
    pub fn param_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (name, (shape, data)) in &self.arrays {
            h.update(name.as_bytes());
            for &d in shape {
                h.update((d as u64).to_le_bytes());
            }
            for &v in data {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::super::config::{preset, Scale, TrainingMode};
    use super::*;
    use crate::data::DataSource;
    use crate::recovery::NetworkConfig;

    fn sample() -> Checkpoint {
        let config = preset(
            TrainingMode::Teacher,
            Scale::Desk,
            DataSource::IdxFiles {
                images: "i.idx".into(),
                labels: "l.idx".into(),
            },
            3,
        );
        let hash = config.config_hash();
        let mut arrays = BTreeMap::new();
        arrays.insert("masks.phases".to_string(), (vec![2, 4, 4], (0..32).map(|i| i as f32 * 0.1).collect()));
        arrays.insert("init.filter".to_string(), (vec![3, 3], vec![1.0 / 9.0; 9]));
        Checkpoint {
            architecture: crate::recovery::ArchDescriptor::of(
                &NetworkConfig::new(3, 32, 1).unwrap(),
            ),
            config_hash: hash,
            seed: config.seed,
            epoch: 7,
            metrics: serde_json::json!({"psnr": {"mean": 21.5}}),
            config,
            arrays,
        }
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.prkd");
        let ckpt = sample();
        ckpt.save(&p).unwrap();
        let bytes1 = std::fs::read(&p).unwrap();
        let loaded = Checkpoint::load(&p).unwrap();
        let p2 = dir.path().join("b.prkd");
        loaded.save(&p2).unwrap();
        let bytes2 = std::fs::read(&p2).unwrap();
        assert_eq!(bytes1, bytes2);
        assert_eq!(loaded.epoch, 7);
        assert_eq!(loaded.arrays.len(), 2);
        assert_eq!(loaded.param_hash(), ckpt.param_hash());
    }

    #[test]
    fn tampered_payloads_are_rejected() {
        let ckpt = sample();
        let mut bytes = ckpt.to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Checkpoint(_))
        ));

        let bytes = ckpt.to_bytes();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated { .. })
        ));

        // config hash mismatch
        let mut c2 = sample();
        c2.config_hash = "0".repeat(64);
        let bytes = c2.to_bytes();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn param_hash_tracks_values() {
        let a = sample();
        let mut b = sample();
        assert_eq!(a.param_hash(), b.param_hash());
        b.arrays.get_mut("init.filter").unwrap().1[0] += 1.0;
        assert_ne!(a.param_hash(), b.param_hash());
    }
}
