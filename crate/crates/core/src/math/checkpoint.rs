//! Network checkpoints: a TOML manifest next to a `PMNN` parameter blob.
//!
//! Blob layout: magic `PMNN`, `u32` LE version (1), then for each layer in
//! order its weight matrix (`in × out`, row-major) followed by its bias
//! vector, every value a little-endian `f64`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::network::{Activation, NetworkParams};
use crate::codec::{Decoder, Encoder};
use crate::error::{Error, Result};
use crate::rng::RNG_ALGORITHM;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"PMNN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: String,
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
    pub rng: String,
}

impl CheckpointManifest {
    pub fn for_net<T: Scalar>(net: &NetworkParams<T>, seed: u64) -> Self {
        Self {
            format_version: VERSION.to_string(),
            layer_dims: net.layer_dims().to_vec(),
            activation: net.activation(),
            seed,
            rng: RNG_ALGORITHM.to_string(),
        }
    }
}

pub fn encode_params<T: Scalar>(net: &NetworkParams<T>) -> Vec<u8> {
    let mut e = Encoder::new(MAGIC, VERSION);
    for (w, b) in net.weights().iter().zip(net.biases()) {
        e.f64s(w.iter().map(|v| v.as_f64()));
        e.f64s(b.iter().map(|v| v.as_f64()));
    }
    e.finish()
}

pub fn decode_params<T: Scalar>(
    bytes: &[u8],
    layer_dims: &[usize],
    activation: Activation,
) -> Result<NetworkParams<T>> {
    let mut d = Decoder::new("PMNN", bytes, MAGIC, VERSION)?;
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for pair in layer_dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let w = d.f64s(fan_in * fan_out)?;
        let b = d.f64s(fan_out)?;
        weights.push(
            Array2::from_shape_vec((fan_in, fan_out), w.into_iter().map(T::lit).collect())
                .expect("length checked by decoder"),
        );
        biases.push(Array1::from_vec(b.into_iter().map(T::lit).collect()));
    }
    d.finish()?;
    NetworkParams::from_parts(layer_dims.to_vec(), weights, biases, activation)
}

pub fn manifest_path(stem: &Path) -> PathBuf {
    stem.with_extension("toml")
}

pub fn blob_path(stem: &Path) -> PathBuf {
    stem.with_extension("pmnn")
}

/// Writes `<stem>.toml` and `<stem>.pmnn`.
pub fn save_checkpoint<T: Scalar>(stem: &Path, net: &NetworkParams<T>, seed: u64) -> Result<()> {
    let manifest = CheckpointManifest::for_net(net, seed);
    fs::write(manifest_path(stem), toml::to_string(&manifest)?)?;
    fs::write(blob_path(stem), encode_params(net))?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(stem: &Path) -> Result<(NetworkParams<T>, CheckpointManifest)> {
    let mpath = manifest_path(stem);
    let bpath = blob_path(stem);
    for p in [&mpath, &bpath] {
        if !p.exists() {
            return Err(Error::MissingArtifact(p.clone()));
        }
    }
    let manifest: CheckpointManifest = toml::from_str(&fs::read_to_string(&mpath)?)?;
    if manifest.format_version != VERSION.to_string() {
        return Err(Error::format(
            "checkpoint manifest",
            format!("unsupported format_version {}", manifest.format_version),
        ));
    }
    let net = decode_params(&fs::read(&bpath)?, &manifest.layer_dims, manifest.activation)?;
    Ok((net, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_header() {
        let net = NetworkParams::<f64>::random(&[2, 3], Activation::Tanh, 4).unwrap();
        let bytes = encode_params(&net);
        assert_eq!(&bytes[..4], b"PMNN");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(bytes.len(), 8 + 8 * (2 * 3 + 3));
        // first weight is W[0][0]
        assert_eq!(&bytes[8..16], &net.weights()[0][(0, 0)].to_le_bytes());
    }

    #[test]
    fn truncated_and_bad_magic_rejected() {
        let net = NetworkParams::<f64>::random(&[2, 3], Activation::Tanh, 4).unwrap();
        let bytes = encode_params(&net);
        assert!(decode_params::<f64>(&bytes[..bytes.len() - 1], &[2, 3], Activation::Tanh).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_params::<f64>(&bad, &[2, 3], Activation::Tanh).is_err());
        assert!(decode_params::<f64>(&bytes, &[2, 4], Activation::Tanh).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("net");
        let net = NetworkParams::<f64>::random(&[3, 5, 2], Activation::Relu, 8).unwrap();
        save_checkpoint(&stem, &net, 8).unwrap();
        let (back, manifest) = load_checkpoint::<f64>(&stem).unwrap();
        assert_eq!(back, net);
        assert_eq!(manifest.seed, 8);
        assert_eq!(manifest.activation, Activation::Relu);
        let text = std::fs::read_to_string(manifest_path(&stem)).unwrap();
        assert!(text.contains("format_version = \"1\""));
    }
}
