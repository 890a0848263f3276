//! Single-file parameter checkpoints: a JSON manifest of names and shapes
//! followed by the flat little-endian f64 data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AdError, Result};
use crate::network::{Param, ParamStore};
use crate::tensor::Tensor;

const MAGIC: [u8; 4] = *b"TCPT";

#[derive(Serialize, Deserialize)]
struct Manifest {
    seed: u64,
    clip_bound: Option<f64>,
    params: Vec<(String, Vec<usize>)>,
}

pub fn save_checkpoint(path: impl AsRef<Path>, store: &ParamStore) -> Result<()> {
    let manifest = Manifest {
        seed: store.seed,
        clip_bound: store.clip_bound,
        params: store.params.iter().map(|p| (p.name.clone(), p.tensor.dims.clone())).collect(),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| AdError::Format(e.to_string()))?;
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_all(&MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for p in &store.params {
        for &v in &p.tensor.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParamStore> {
    let mut r = BufReader::new(File::open(path.as_ref())?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(AdError::Format("not a checkpoint file".into()));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)?;
    let json_len = u64::from_le_bytes(len_bytes) as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json)?;
    let manifest: Manifest =
        serde_json::from_slice(&json).map_err(|e| AdError::Format(e.to_string()))?;
    let mut params = Vec::with_capacity(manifest.params.len());
    for (name, dims) in manifest.params {
        let n: usize = dims.iter().product();
        let mut data = vec![0.0; n];
        let mut buf = [0u8; 8];
        for v in &mut data {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        params.push(Param { name, tensor: Tensor::new(dims, data)? });
    }
    Ok(ParamStore { params, clip_bound: manifest.clip_bound, seed: manifest.seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_network, NetworkConfig};
    use tempfile::tempdir;

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let cfg = NetworkConfig {
            scales: 2,
            channels_per_layer: 3,
            skip_channels: vec![4, 0],
            input_channels: 2,
            output_size: 16,
        };
        let (_, mut store, _) = build_network(cfg, 77).unwrap();
        store.clip_bound = Some(50.0);
        let dir = tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_checkpoint(&path, &store).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.seed, 77);
        assert_eq!(back.clip_bound, Some(50.0));
        assert_eq!(back.params.len(), store.params.len());
        for (a, b) in back.params.iter().zip(&store.params) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.tensor.dims, b.tensor.dims);
            assert_eq!(a.tensor.data, b.tensor.data);
        }
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bogus");
        std::fs::write(&path, b"nope").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
