//! Model manifest and weight I/O, dataset ingestion, and the
//! batch-normalization parameter adjustment.

mod adjust;
mod idx;
mod manifest;
mod rawtensor;

pub use adjust::adjust_bn;
pub use idx::{load_mnist_idx, MnistDataset};
pub use manifest::{load_model, save_model, MANIFEST_VERSION};
pub use rawtensor::{load_raw_tensors, save_raw_tensors};

use crate::nncore::GraphError;

/// Model/dataset I/O failures; each names the offending node or file context.
#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("node '{node}': shape mismatch: {detail}")]
    ShapeMismatch { node: String, detail: String },
    #[error("node '{node}': non-finite weight at element {index}")]
    NonFiniteWeight { node: String, index: usize },
    #[error("bad magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: String,
        expected: u32,
        found: u32,
    },
    #[error("count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<GraphError> for IoError {
    fn from(e: GraphError) -> IoError {
        IoError::ShapeMismatch {
            node: e.node,
            detail: e.detail,
        }
    }
}

pub(crate) fn io_ctx(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> IoError {
    let context = context.into();
    move |source| IoError::Io { context, source }
}
