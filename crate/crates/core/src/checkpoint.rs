//! Network checkpoints: JSON with layer shapes, row-major weights, the
//! activation and embedding config, the hash of the config that produced
//! the run, and a digest of the weights for integrity checking.

use crate::error::{Error, Result};
use crate::net::{Layer, Mlp, MlpConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

const SCHEMA: &str = "hamflow-mlp-v1";

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema: String,
    pub config: MlpConfig,
    pub layers: Vec<Layer>,
    /// Hash of the experiment config that produced this run (hex SHA-256),
    /// empty when saved outside a configured run.
    pub config_hash: String,
    /// Hex SHA-256 over the little-endian bytes of the flat parameters.
    pub weights_sha256: String,
}

/// Digest of the flat parameter vector.
pub fn weights_digest(net: &Mlp) -> String {
    let mut hasher = Sha256::new();
    for p in net.params_flat() {
        hasher.update(p.to_le_bytes());
    }
    hex_string(&hasher.finalize())
}

pub fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_mlp(net: &Mlp, config_hash: &str, path: &Path) -> Result<()> {
    let ckpt = Checkpoint {
        schema: SCHEMA.to_string(),
        config: net.config().clone(),
        layers: net.layers().to_vec(),
        config_hash: config_hash.to_string(),
        weights_sha256: weights_digest(net),
    };
    let json = serde_json::to_string_pretty(&ckpt)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_mlp(path: &Path) -> Result<(Mlp, String)> {
    let text = std::fs::read_to_string(path)?;
    let ckpt: Checkpoint = serde_json::from_str(&text)?;
    if ckpt.schema != SCHEMA {
        return Err(Error::CheckpointIntegrity(format!(
            "unknown schema {:?}",
            ckpt.schema
        )));
    }
    let net = Mlp::from_layers(ckpt.config, ckpt.layers)?;
    let digest = weights_digest(&net);
    if digest != ckpt.weights_sha256 {
        return Err(Error::CheckpointIntegrity(format!(
            "weight digest mismatch: stored {}, computed {digest}",
            ckpt.weights_sha256
        )));
    }
    Ok((net, ckpt.config_hash))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = std::env::temp_dir().join("hamflow-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("net.json");

        let mut rng = Rng::new(42);
        let mut net = Mlp::new(MlpConfig::time_conditioned(2, vec![8, 8]), &mut rng);
        let mut p = net.params_flat();
        for w in &mut p {
            if *w == 0.0 {
                *w = rng.normal() * 0.1;
            }
        }
        net.set_params_flat(&p).unwrap();

        save_mlp(&net, "abc123", &path).unwrap();
        let (loaded, hash) = load_mlp(&path).unwrap();
        assert_eq!(hash, "abc123");
        assert_eq!(loaded.params_flat(), net.params_flat());
        let x = [0.3, -0.7];
        assert_eq!(
            loaded.forward(&x, Some(0.5)).unwrap(),
            net.forward(&x, Some(0.5)).unwrap()
        );
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn corrupted_weights_fail_integrity() {
        let dir = std::env::temp_dir().join("hamflow-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("corrupt.json");

        let mut rng = Rng::new(7);
        let net = Mlp::new(MlpConfig::autonomous(1, vec![4]), &mut rng);
        save_mlp(&net, "", &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        // Flip one stored weight without updating the digest.
        let corrupted = text.replacen("0.0", "0.5", 1);
        assert_ne!(text, corrupted);
        std::fs::write(&path, corrupted).unwrap();
        match load_mlp(&path) {
            Err(Error::CheckpointIntegrity(_)) => {}
            other => panic!("expected integrity failure, got {other:?}"),
        }
        std::fs::remove_file(&path).ok();
    }
}

