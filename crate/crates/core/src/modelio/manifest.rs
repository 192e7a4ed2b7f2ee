//! The model manifest: a versioned JSON document listing nodes, their
//! parameters, edge names, and weight-blob references (file, byte offset,
//! element count). Blobs are little-endian binary32, row-major, (out, in, kh,
//! kw) for conv and (out, in) for FC; one file may hold many blobs.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::mulkit::MultiplierSpec;
use crate::nncore::{BnDesc, ConvDesc, FcDesc, ModelGraph, Node, NodeOp, PoolDesc};

use super::{io_ctx, IoError};

pub const MANIFEST_VERSION: &str = "1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestDoc {
    version: String,
    name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metadata: BTreeMap<String, String>,
    input: InputDoc,
    output: String,
    nodes: Vec<NodeDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InputDoc {
    edge: String,
    /// Per-sample (C, H, W).
    dims: [usize; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BlobRef {
    file: String,
    offset: u64,
    count: usize,
}

fn default_stride() -> [usize; 2] {
    [1, 1]
}

fn default_groups() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum NodeDoc {
    Conv {
        name: String,
        input: String,
        output: String,
        out_channels: usize,
        in_channels: usize,
        kernel: [usize; 2],
        #[serde(default = "default_stride")]
        stride: [usize; 2],
        #[serde(default)]
        padding: [usize; 2],
        #[serde(default = "default_groups")]
        groups: usize,
        weights: BlobRef,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<BlobRef>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        multiplier: Option<String>,
    },
    Fc {
        name: String,
        input: String,
        output: String,
        in_features: usize,
        out_features: usize,
        weights: BlobRef,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<BlobRef>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        multiplier: Option<String>,
    },
    Batchnorm {
        name: String,
        input: String,
        output: String,
        channels: usize,
        epsilon: f64,
        mean: BlobRef,
        variance: BlobRef,
        gamma: BlobRef,
        beta: BlobRef,
    },
    Relu {
        name: String,
        input: String,
        output: String,
    },
    Maxpool {
        name: String,
        input: String,
        output: String,
        kernel: [usize; 2],
        stride: [usize; 2],
        #[serde(default)]
        padding: [usize; 2],
    },
    Avgpool {
        name: String,
        input: String,
        output: String,
        kernel: [usize; 2],
        stride: [usize; 2],
        #[serde(default)]
        padding: [usize; 2],
    },
    Add {
        name: String,
        inputs: [String; 2],
        output: String,
    },
    Flatten {
        name: String,
        input: String,
        output: String,
    },
}

/// Blob files are read once per load and sliced per reference.
struct BlobCache {
    base: PathBuf,
    files: HashMap<String, Vec<u8>>,
}

impl BlobCache {
    fn new(base: PathBuf) -> BlobCache {
        BlobCache {
            base,
            files: HashMap::new(),
        }
    }

    fn fetch(&mut self, node: &str, blob: &BlobRef) -> Result<Vec<f32>, IoError> {
        if !self.files.contains_key(&blob.file) {
            let path = self.base.join(&blob.file);
            let bytes = fs::read(&path).map_err(io_ctx(path.display().to_string()))?;
            self.files.insert(blob.file.clone(), bytes);
        }
        let bytes = &self.files[&blob.file];
        let start = blob.offset as usize;
        let end = start + blob.count * 4;
        if end > bytes.len() {
            return Err(IoError::ShapeMismatch {
                node: node.to_string(),
                detail: format!(
                    "blob {}+{}x4 runs past the end of '{}' ({} bytes)",
                    blob.offset,
                    blob.count,
                    blob.file,
                    bytes.len()
                ),
            });
        }
        Ok(bytes[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn fetch_finite(&mut self, node: &str, blob: &BlobRef) -> Result<Vec<f32>, IoError> {
        let values = self.fetch(node, blob)?;
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(IoError::NonFiniteWeight {
                node: node.to_string(),
                index,
            });
        }
        Ok(values)
    }

    fn fetch_f64(&mut self, node: &str, blob: &BlobRef) -> Result<Vec<f64>, IoError> {
        Ok(self
            .fetch_finite(node, blob)?
            .into_iter()
            .map(|v| v as f64)
            .collect())
    }
}

fn parse_multiplier(node: &str, text: &Option<String>) -> Result<Option<MultiplierSpec>, IoError> {
    match text {
        None => Ok(None),
        Some(t) => t
            .parse::<MultiplierSpec>()
            .map(Some)
            .map_err(|e| IoError::Parse(format!("node '{node}': {e}"))),
    }
}

/// Loads and validates a model. Weights stay in their binary32 master form on
/// the graph; each pipeline quantizes them when an executor binds. NaN or
/// infinite weights are rejected with the offending node named.
pub fn load_model(manifest_path: &Path) -> Result<ModelGraph, IoError> {
    let text = fs::read_to_string(manifest_path)
        .map_err(io_ctx(manifest_path.display().to_string()))?;
    let doc: ManifestDoc =
        serde_json::from_str(&text).map_err(|e| IoError::Parse(e.to_string()))?;
    if doc.version != MANIFEST_VERSION {
        return Err(IoError::Parse(format!(
            "unsupported manifest version '{}', expected '{MANIFEST_VERSION}'",
            doc.version
        )));
    }
    let base = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let mut cache = BlobCache::new(base);
    let mut nodes = Vec::with_capacity(doc.nodes.len());
    for nd in &doc.nodes {
        nodes.push(lower_node(nd, &mut cache)?);
    }
    let graph = ModelGraph {
        name: doc.name,
        input_edge: doc.input.edge,
        input_dims: (doc.input.dims[0], doc.input.dims[1], doc.input.dims[2]),
        output_edge: doc.output,
        nodes,
        metadata: doc.metadata,
    };
    graph.validate()?;
    Ok(graph)
}

fn lower_node(doc: &NodeDoc, cache: &mut BlobCache) -> Result<Node, IoError> {
    Ok(match doc {
        NodeDoc::Conv {
            name,
            input,
            output,
            out_channels,
            in_channels,
            kernel,
            stride,
            padding,
            groups,
            weights,
            bias,
            multiplier,
        } => Node {
            name: name.clone(),
            op: NodeOp::Conv(ConvDesc {
                out_channels: *out_channels,
                in_channels: *in_channels,
                kernel: (kernel[0], kernel[1]),
                stride: (stride[0], stride[1]),
                padding: (padding[0], padding[1]),
                groups: *groups,
                weights: cache.fetch_finite(name, weights)?,
                bias: bias
                    .as_ref()
                    .map(|b| cache.fetch_finite(name, b))
                    .transpose()?,
            }),
            inputs: vec![input.clone()],
            output: output.clone(),
            multiplier: parse_multiplier(name, multiplier)?,
        },
        NodeDoc::Fc {
            name,
            input,
            output,
            in_features,
            out_features,
            weights,
            bias,
            multiplier,
        } => Node {
            name: name.clone(),
            op: NodeOp::Fc(FcDesc {
                in_features: *in_features,
                out_features: *out_features,
                weights: cache.fetch_finite(name, weights)?,
                bias: bias
                    .as_ref()
                    .map(|b| cache.fetch_finite(name, b))
                    .transpose()?,
            }),
            inputs: vec![input.clone()],
            output: output.clone(),
            multiplier: parse_multiplier(name, multiplier)?,
        },
        NodeDoc::Batchnorm {
            name,
            input,
            output,
            channels,
            epsilon,
            mean,
            variance,
            gamma,
            beta,
        } => Node {
            name: name.clone(),
            op: NodeOp::BatchNorm(BnDesc {
                channels: *channels,
                epsilon: *epsilon,
                mean: cache.fetch_f64(name, mean)?,
                variance: cache.fetch_f64(name, variance)?,
                gamma: cache.fetch_f64(name, gamma)?,
                beta: cache.fetch_f64(name, beta)?,
            }),
            inputs: vec![input.clone()],
            output: output.clone(),
            multiplier: None,
        },
        NodeDoc::Relu { name, input, output } => Node {
            name: name.clone(),
            op: NodeOp::Relu,
            inputs: vec![input.clone()],
            output: output.clone(),
            multiplier: None,
        },
        NodeDoc::Maxpool { name, input, output, kernel, stride, padding } => Node {
            name: name.clone(),
            op: NodeOp::MaxPool(PoolDesc {
                kernel: (kernel[0], kernel[1]),
                stride: (stride[0], stride[1]),
                padding: (padding[0], padding[1]),
            }),
            inputs: vec![input.clone()],
            output: output.clone(),
            multiplier: None,
        },
        NodeDoc::Avgpool { name, input, output, kernel, stride, padding } => Node {
            name: name.clone(),
            op: NodeOp::AvgPool(PoolDesc {
                kernel: (kernel[0], kernel[1]),
                stride: (stride[0], stride[1]),
                padding: (padding[0], padding[1]),
            }),
            inputs: vec![input.clone()],
            output: output.clone(),
            multiplier: None,
        },
        NodeDoc::Add { name, inputs, output } => Node {
            name: name.clone(),
            op: NodeOp::Add,
            inputs: inputs.to_vec(),
            output: output.clone(),
            multiplier: None,
        },
        NodeDoc::Flatten { name, input, output } => Node {
            name: name.clone(),
            op: NodeOp::Flatten,
            inputs: vec![input.clone()],
            output: output.clone(),
            multiplier: None,
        },
    })
}

/// Serializes a model back to a manifest plus one consolidated weight blob
/// (`<stem>.bin` alongside the manifest). Weights round-trip bit-identically;
/// BN parameters persist as binary32, the blob format's element type.
pub fn save_model(graph: &ModelGraph, manifest_path: &Path) -> Result<(), IoError> {
    let stem = manifest_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("model");
    let blob_name = format!("{stem}.bin");
    let mut blob: Vec<u8> = Vec::new();
    let mut push_blob = |values: &[f32]| -> BlobRef {
        let offset = blob.len() as u64;
        for v in values {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        BlobRef {
            file: blob_name.clone(),
            offset,
            count: values.len(),
        }
    };

    let mut nodes = Vec::with_capacity(graph.nodes.len());
    for node in &graph.nodes {
        let name = node.name.clone();
        let output = node.output.clone();
        let input = || node.inputs[0].clone();
        let doc = match &node.op {
            NodeOp::Conv(d) => NodeDoc::Conv {
                name,
                input: input(),
                output,
                out_channels: d.out_channels,
                in_channels: d.in_channels,
                kernel: [d.kernel.0, d.kernel.1],
                stride: [d.stride.0, d.stride.1],
                padding: [d.padding.0, d.padding.1],
                groups: d.groups,
                weights: push_blob(&d.weights),
                bias: d.bias.as_ref().map(|b| push_blob(b)),
                multiplier: node.multiplier.map(|m| m.to_string()),
            },
            NodeOp::Fc(d) => NodeDoc::Fc {
                name,
                input: input(),
                output,
                in_features: d.in_features,
                out_features: d.out_features,
                weights: push_blob(&d.weights),
                bias: d.bias.as_ref().map(|b| push_blob(b)),
                multiplier: node.multiplier.map(|m| m.to_string()),
            },
            NodeOp::BatchNorm(d) => {
                let narrow = |v: &[f64]| -> Vec<f32> { v.iter().map(|&x| x as f32).collect() };
                NodeDoc::Batchnorm {
                    name,
                    input: input(),
                    output,
                    channels: d.channels,
                    epsilon: d.epsilon,
                    mean: push_blob(&narrow(&d.mean)),
                    variance: push_blob(&narrow(&d.variance)),
                    gamma: push_blob(&narrow(&d.gamma)),
                    beta: push_blob(&narrow(&d.beta)),
                }
            }
            NodeOp::Relu => NodeDoc::Relu { name, input: input(), output },
            NodeOp::MaxPool(d) => NodeDoc::Maxpool {
                name,
                input: input(),
                output,
                kernel: [d.kernel.0, d.kernel.1],
                stride: [d.stride.0, d.stride.1],
                padding: [d.padding.0, d.padding.1],
            },
            NodeOp::AvgPool(d) => NodeDoc::Avgpool {
                name,
                input: input(),
                output,
                kernel: [d.kernel.0, d.kernel.1],
                stride: [d.stride.0, d.stride.1],
                padding: [d.padding.0, d.padding.1],
            },
            NodeOp::Add => NodeDoc::Add {
                name,
                inputs: [node.inputs[0].clone(), node.inputs[1].clone()],
                output,
            },
            NodeOp::Flatten => NodeDoc::Flatten { name, input: input(), output },
        };
        nodes.push(doc);
    }

    let doc = ManifestDoc {
        version: MANIFEST_VERSION.to_string(),
        name: graph.name.clone(),
        metadata: graph.metadata.clone(),
        input: InputDoc {
            edge: graph.input_edge.clone(),
            dims: [graph.input_dims.0, graph.input_dims.1, graph.input_dims.2],
        },
        output: graph.output_edge.clone(),
        nodes,
    };
    let parent = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(parent).map_err(io_ctx(parent.display().to_string()))?;
    let json = serde_json::to_string_pretty(&doc).map_err(|e| IoError::Parse(e.to_string()))?;
    fs::write(manifest_path, json).map_err(io_ctx(manifest_path.display().to_string()))?;
    let blob_path = parent.join(&blob_name);
    fs::write(&blob_path, blob).map_err(io_ctx(blob_path.display().to_string()))?;
    Ok(())
}
