//! Parameter container: a little-endian file with a 4-byte JSON header
//! length, a JSON header listing named tensors in payload order, then the
//! raw f64 payloads back to back.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    dtype: String,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn save(path: &Path, params: &ParamSet, meta: serde_json::Value) -> Result<()> {
    let header = Header {
        version: CHECKPOINT_VERSION,
        dtype: "f64".into(),
        tensors: params
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
        meta,
    };
    let hdr = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(hdr.len() as u32).to_le_bytes())?;
    w.write_all(&hdr)?;
    for (_, t) in params.iter() {
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamSet, serde_json::Value)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut len4 = [0u8; 4];
    r.read_exact(&mut len4)?;
    let hlen = u32::from_le_bytes(len4) as usize;
    let mut hbuf = vec![0u8; hlen];
    r.read_exact(&mut hbuf)?;
    let header: Header = serde_json::from_slice(&hbuf)?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Config(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }
    if header.dtype != "f64" {
        return Err(Error::Config(format!(
            "unsupported checkpoint dtype {}",
            header.dtype
        )));
    }
    let mut params = ParamSet::new();
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let mut data = vec![0.0f64; n];
        let mut buf = [0u8; 8];
        for v in data.iter_mut() {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        params.insert(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?);
    }
    Ok((params, header.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = ParamSet::new();
        params.insert("a.w", Tensor::randn(&mut rng, &[3, 4], 1.0));
        params.insert("b.w", Tensor::randn(&mut rng, &[2, 2], 0.5));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        save(&path, &params, serde_json::json!({"tag": "test"})).unwrap();
        let (loaded, meta) = load(&path).unwrap();
        assert_eq!(loaded, params);
        assert_eq!(meta["tag"], "test");
    }
}
