//! IDX dataset ingestion: big-endian magic and dims per the standard format,
//! pixels scaled to [0, 1] by dividing by 255. Quantization into a pipeline
//! payload happens when an executor ingests each tensor.

use std::fs;
use std::path::Path;

use crate::nncore::Tensor;

use super::{io_ctx, IoError};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// A labelled image set: one `(1, 1, h, w)` tensor per image.
#[derive(Debug, Clone)]
pub struct MnistDataset {
    pub images: Vec<Tensor<f32>>,
    pub labels: Vec<u8>,
    pub rows: usize,
    pub cols: usize,
}

impl MnistDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn read_u32_be(bytes: &[u8], at: usize, path: &Path) -> Result<u32, IoError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| IoError::Parse(format!("{}: truncated header", path.display())))
}

/// Loads an IDX image/label pair, checking magics and that the counts match.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<MnistDataset, IoError> {
    let img_bytes = fs::read(images_path).map_err(io_ctx(images_path.display().to_string()))?;
    let magic = read_u32_be(&img_bytes, 0, images_path)?;
    if magic != IMAGES_MAGIC {
        return Err(IoError::BadMagic {
            path: images_path.display().to_string(),
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = read_u32_be(&img_bytes, 4, images_path)? as usize;
    let rows = read_u32_be(&img_bytes, 8, images_path)? as usize;
    let cols = read_u32_be(&img_bytes, 12, images_path)? as usize;
    let expected = 16 + count * rows * cols;
    if img_bytes.len() < expected {
        return Err(IoError::Parse(format!(
            "{}: holds {} bytes, header promises {}",
            images_path.display(),
            img_bytes.len(),
            expected
        )));
    }

    let lbl_bytes = fs::read(labels_path).map_err(io_ctx(labels_path.display().to_string()))?;
    let magic = read_u32_be(&lbl_bytes, 0, labels_path)?;
    if magic != LABELS_MAGIC {
        return Err(IoError::BadMagic {
            path: labels_path.display().to_string(),
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let label_count = read_u32_be(&lbl_bytes, 4, labels_path)? as usize;
    if label_count != count {
        return Err(IoError::CountMismatch {
            images: count,
            labels: label_count,
        });
    }
    if lbl_bytes.len() < 8 + label_count {
        return Err(IoError::Parse(format!(
            "{}: truncated label payload",
            labels_path.display()
        )));
    }

    let plane = rows * cols;
    let images = (0..count)
        .map(|i| {
            let start = 16 + i * plane;
            let data: Vec<f32> = img_bytes[start..start + plane]
                .iter()
                .map(|&b| b as f32 / 255.0)
                .collect();
            Tensor::new(1, 1, rows, cols, data).expect("plane length matches dims")
        })
        .collect();
    let labels = lbl_bytes[8..8 + label_count].to_vec();
    Ok(MnistDataset {
        images,
        labels,
        rows,
        cols,
    })
}
