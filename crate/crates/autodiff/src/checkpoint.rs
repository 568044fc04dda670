//! Binary checkpoint format.
//!
//! ```text
//! MMTENSOR <version byte> \n
//! <count> \n
//! <name> \t <d0,d1,...> \n      (count lines, empty dims for a scalar)
//! <payload>                     (row-major little-endian f64, manifest order)
//! ```

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MMTENSOR";
pub const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic string)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {VERSION})")]
    Version { found: u8 },
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("malformed manifest: {0}")]
    Manifest(String),
}

pub fn encode(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(b'\n');
    out.extend_from_slice(format!("{}\n", params.len()).as_bytes());
    for (name, t) in params.iter() {
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        out.extend_from_slice(format!("{name}\t{}\n", dims.join(",")).as_bytes());
    }
    for (_, t) in params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<ParamSet, CheckpointError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut pos = MAGIC.len();
    let version = *bytes
        .get(pos)
        .ok_or_else(|| CheckpointError::Truncated("missing version byte".into()))?;
    if version != VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    pos += 1;
    if bytes.get(pos) != Some(&b'\n') {
        return Err(CheckpointError::Manifest(
            "expected newline after version".into(),
        ));
    }
    pos += 1;

    let next_line = |pos: &mut usize| -> Result<String, CheckpointError> {
        let rest = &bytes[*pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| CheckpointError::Truncated("manifest ends early".into()))?;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| CheckpointError::Manifest("manifest is not UTF-8".into()))?
            .to_string();
        *pos += end + 1;
        Ok(line)
    };

    let count: usize = next_line(&mut pos)?
        .trim()
        .parse()
        .map_err(|_| CheckpointError::Manifest("bad entry count".into()))?;
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let line = next_line(&mut pos)?;
        let (name, dims) = line
            .split_once('\t')
            .ok_or_else(|| CheckpointError::Manifest(format!("bad entry {line:?}")))?;
        let shape = if dims.is_empty() {
            Vec::new()
        } else {
            dims.split(',')
                .map(|d| d.parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| CheckpointError::Manifest(format!("bad shape in {line:?}")))?
        };
        manifest.push((name.to_string(), shape));
    }

    let mut params = ParamSet::new();
    for (name, shape) in manifest {
        let numel: usize = shape.iter().product();
        let need = numel * 8;
        if bytes.len() < pos + need {
            return Err(CheckpointError::Truncated(format!("payload of {name}")));
        }
        let data = bytes[pos..pos + need]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        pos += need;
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
        params.insert(name, t);
    }
    if pos != bytes.len() {
        return Err(CheckpointError::Manifest(format!(
            "{} trailing bytes after payload",
            bytes.len() - pos
        )));
    }
    Ok(params)
}

pub fn save(params: &ParamSet, path: &Path) -> Result<(), CheckpointError> {
    // Write then rename so an interrupted save never clobbers the last good file.
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&encode(params))?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamSet, CheckpointError> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert(
            "encoder.gcn.0.weight",
            Tensor::matrix(2, 3, vec![1.0, -2.5, 3.25, 0.0, 1e-300, f64::MAX]).unwrap(),
        );
        p.insert("sigma.triangles", Tensor::scalar(6.87e-6));
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = sample();
        let back = decode(&encode(&p)).unwrap();
        assert_eq!(back, p);
        for ((_, a), (_, b)) in p.iter().zip(back.iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn wrong_magic_rejected() {
        let mut bytes = encode(&sample());
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn version_mismatch_rejected() {
        let mut bytes = encode(&sample());
        bytes[MAGIC.len()] = 9;
        assert!(matches!(
            decode(&bytes),
            Err(CheckpointError::Version { found: 9 })
        ));
    }

    #[test]
    fn truncated_payload_rejected() {
        let bytes = encode(&sample());
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(decode(cut), Err(CheckpointError::Truncated(_))));
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&sample(), &path).unwrap();
        assert_eq!(load(&path).unwrap(), sample());
    }
}
