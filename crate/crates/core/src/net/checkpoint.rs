//! Checkpoint files: `u64` little-endian header length, JSON header, then the
//! tensors as little-endian `f32` in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetParams, NetSpec};
use crate::error::{Error, Result};
use crate::numerics::tape::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    spec: NetSpec,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn save_checkpoint(path: &Path, spec: &NetSpec, params: &NetParams) -> Result<()> {
    if !params.matches(spec) {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            msg: "parameters do not match the network spec".into(),
        });
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        spec: spec.clone(),
        tensors: params
            .names
            .iter()
            .zip(&params.tensors)
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(8 + json.len() + 4 * params.count());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for t in &params.tensors {
        for v in t.data() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(NetSpec, NetParams)> {
    let fail = |msg: String| Error::Checkpoint {
        path: path.to_path_buf(),
        msg,
    };
    let bytes = fs::read(path)?;
    if bytes.len() < 8 {
        return Err(fail("truncated header".into()));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(8..8 + hlen).ok_or_else(|| fail("truncated header".into()))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| fail(e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(fail(format!("unsupported format version {}", header.format_version)));
    }
    let mut payload = bytes[8 + hlen..].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64);
    let mut params = NetParams {
        names: Vec::new(),
        tensors: Vec::new(),
    };
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let data: Vec<f64> = payload.by_ref().take(n).collect();
        if data.len() != n {
            return Err(fail(format!("payload ends inside {}", e.name)));
        }
        params.names.push(e.name);
        params.tensors.push(Tensor::new(e.shape, data));
    }
    if payload.next().is_some() {
        return Err(fail("trailing payload".into()));
    }
    if !params.matches(&header.spec) {
        return Err(fail("tensor layout does not match the network spec".into()));
    }
    if !params.is_finite() {
        return Err(fail("non-finite parameters".into()));
    }
    Ok((header.spec, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Mode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let spec = NetSpec::new(Mode::FT, true, 3, 17).with_hidden((5, 4));
        let params = NetParams::init(&spec, &mut ChaCha8Rng::seed_from_u64(1));
        save_checkpoint(&path, &spec, &params).unwrap();
        let (s2, p2) = load_checkpoint(&path).unwrap();
        assert_eq!(s2, spec);
        for (a, b) in params.tensors.iter().zip(&p2.tensors) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*x as f32 as f64, *y);
            }
        }
        // A second save of the loaded parameters is byte-identical.
        let again = dir.path().join("again.ckpt");
        save_checkpoint(&again, &s2, &p2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let spec = NetSpec::new(Mode::T, false, 2, 9).with_hidden((2, 2));
        save_checkpoint(&path, &spec, &NetParams::zeros(&spec)).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint { .. })));
    }
}
