//! Raw tensor files for multichannel sample inputs that don't fit the IDX
//! image format: magic "AXT1", then little-endian u32 count/c/h/w, then
//! binary32 payloads, one (1, c, h, w) tensor per sample.

use std::fs;
use std::path::Path;

use crate::nncore::Tensor;

use super::{io_ctx, IoError};

pub const RAW_TENSOR_MAGIC: &[u8; 4] = b"AXT1";

pub fn load_raw_tensors(path: &Path) -> Result<Vec<Tensor<f32>>, IoError> {
    let bytes = fs::read(path).map_err(io_ctx(path.display().to_string()))?;
    if bytes.len() < 20 || &bytes[0..4] != RAW_TENSOR_MAGIC {
        let found = bytes
            .get(0..4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .unwrap_or(0);
        return Err(IoError::BadMagic {
            path: path.display().to_string(),
            expected: u32::from_le_bytes(*RAW_TENSOR_MAGIC),
            found,
        });
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (count, c, h, w) = (word(4), word(8), word(12), word(16));
    let plane = c * h * w;
    let expected = 20 + count * plane * 4;
    if bytes.len() < expected {
        return Err(IoError::Parse(format!(
            "{}: holds {} bytes, header promises {}",
            path.display(),
            bytes.len(),
            expected
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for i in 0..count {
        let start = 20 + i * plane * 4;
        let data: Vec<f32> = bytes[start..start + plane * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(IoError::Parse(format!(
                "{}: non-finite value in sample {i} at element {bad}",
                path.display()
            )));
        }
        tensors.push(Tensor::new(1, c, h, w, data).expect("plane length matches dims"));
    }
    Ok(tensors)
}

pub fn save_raw_tensors(path: &Path, tensors: &[Tensor<f32>]) -> Result<(), IoError> {
    let dims = tensors
        .first()
        .map(|t| t.dims())
        .ok_or_else(|| IoError::Parse("cannot save an empty tensor set".into()))?;
    let mut bytes = Vec::new();
    bytes.extend_from_slice(RAW_TENSOR_MAGIC);
    bytes.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for d in [dims.1, dims.2, dims.3] {
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for t in tensors {
        assert_eq!(t.dims(), dims, "all samples must share one shape");
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(io_ctx(path.display().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.axt");
        let tensors: Vec<Tensor<f32>> = (0..3)
            .map(|i| {
                Tensor::new(1, 2, 2, 2, (0..8).map(|j| (i * 8 + j) as f32 * 0.5).collect())
                    .unwrap()
            })
            .collect();
        save_raw_tensors(&path, &tensors).unwrap();
        let loaded = load_raw_tensors(&path).unwrap();
        assert_eq!(loaded, tensors);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.axt");
        fs::write(&path, b"NOPE + extra bytes here.....").unwrap();
        assert!(matches!(
            load_raw_tensors(&path),
            Err(IoError::BadMagic { .. })
        ));
    }
}
