//! The inference executor: layer kernels over a pipeline payload, and the
//! graph runner that binds a model to one multiplier assignment.
//!
//! Determinism contract: every per-output accumulation is a single-owner
//! sequential reduction in exact (or fixed-order) arithmetic, and parallelism
//! only ever splits work across outputs, so results are bit-identical across
//! runs and worker counts.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::mulkit::{InvalidSpec, MultiplierSpec};
use crate::qformat::ArithError;

use super::graph::{BnDesc, ConvDesc, EdgeDims, GraphError, ModelGraph, NodeOp, PoolDesc};
use super::payload::Payload;
use super::tensor::Tensor;

/// Execution failure, carrying the identity of the failing node where one
/// exists.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExecError {
    #[error("{node}: shape mismatch: {detail}")]
    ShapeMismatch { node: String, detail: String },
    #[error("{node}: {source}")]
    Arith { node: String, source: ArithError },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Spec(#[from] InvalidSpec),
}

impl ExecError {
    fn shape(node: &str, detail: impl Into<String>) -> ExecError {
        ExecError::ShapeMismatch {
            node: node.to_string(),
            detail: detail.into(),
        }
    }
}

/// Geometry of a convolution, independent of the payload the weights are
/// quantized to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvGeom {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl ConvGeom {
    pub fn of(desc: &ConvDesc) -> ConvGeom {
        ConvGeom {
            out_channels: desc.out_channels,
            in_channels: desc.in_channels,
            kernel: desc.kernel,
            stride: desc.stride,
            padding: desc.padding,
            groups: desc.groups,
        }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding.0 - self.kernel.0) / self.stride.0 + 1,
            (w + 2 * self.padding.1 - self.kernel.1) / self.stride.1 + 1,
        )
    }
}

/// Work chunk used when splitting outputs across workers. Outputs are
/// independent, so the chunk size affects scheduling only, never results.
const PAR_CHUNK: usize = 256;

/// Convolution at accumulator resolution: each output is the exact sum of one
/// multiplier call per kernel tap (padded positions multiply against zero,
/// which every kind annihilates exactly), plus the bias. Returns the
/// pre-narrow accumulators.
pub fn conv2d_acc<P: Payload>(
    input: &Tensor<P>,
    geom: &ConvGeom,
    weights: &Tensor<P>,
    bias: Option<&[P::Acc]>,
    mul: &P::Mul,
) -> Result<(Vec<P::Acc>, (usize, usize, usize, usize)), ExecError> {
    let (n, c, h, w) = input.dims();
    if c != geom.in_channels {
        return Err(ExecError::shape(
            "conv2d",
            format!("input has {c} channels, expected {}", geom.in_channels),
        ));
    }
    let ic_per_group = geom.in_channels / geom.groups;
    let oc_per_group = geom.out_channels / geom.groups;
    let (kh, kw) = geom.kernel;
    if weights.dims() != (geom.out_channels, ic_per_group, kh, kw) {
        return Err(ExecError::shape(
            "conv2d",
            format!("weight dims {:?} do not match geometry", weights.dims()),
        ));
    }
    if let Some(b) = bias {
        if b.len() != geom.out_channels {
            return Err(ExecError::shape("conv2d", "bias length != out_channels"));
        }
    }
    let (oh, ow) = geom.out_dims(h, w);
    let out_dims = (n, geom.out_channels, oh, ow);
    let mut accs: Vec<P::Acc> = vec![P::acc_zero(); n * geom.out_channels * oh * ow];

    let plane = oh * ow;
    accs.par_chunks_mut(plane)
        .enumerate()
        .try_for_each(|(img_oc, out_plane)| -> Result<(), ExecError> {
            let img = img_oc / geom.out_channels;
            let oc = img_oc % geom.out_channels;
            let group = oc / oc_per_group;
            let ic_base = group * ic_per_group;
            let start = bias.map_or_else(P::acc_zero, |b| b[oc]);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = start;
                    for ic in 0..ic_per_group {
                        for ky in 0..kh {
                            let iy = oy * geom.stride.0 + ky;
                            for kx in 0..kw {
                                let ix = ox * geom.stride.1 + kx;
                                let x = sample_padded(input, img, ic_base + ic, iy, ix, geom.padding);
                                let wv = weights.at(oc, ic, ky, kx);
                                let p = P::mul(mul, wv, x).map_err(|source| ExecError::Arith {
                                    node: "conv2d".into(),
                                    source,
                                })?;
                                acc = P::acc_add(acc, p).map_err(|source| ExecError::Arith {
                                    node: "conv2d".into(),
                                    source,
                                })?;
                            }
                        }
                    }
                    out_plane[oy * ow + ox] = acc;
                }
            }
            Ok(())
        })?;
    Ok((accs, out_dims))
}

#[inline]
fn sample_padded<P: Payload>(
    input: &Tensor<P>,
    n: usize,
    c: usize,
    iy: usize,
    ix: usize,
    padding: (usize, usize),
) -> P {
    let (_, _, h, w) = input.dims();
    let y = iy.wrapping_sub(padding.0);
    let x = ix.wrapping_sub(padding.1);
    if y < h && x < w {
        input.at(n, c, y, x)
    } else {
        P::ZERO
    }
}

/// Convolution with groups over zero-filled padding; accumulation is exact,
/// narrowing truncates and counts saturation.
pub fn conv2d<P: Payload>(
    input: &Tensor<P>,
    geom: &ConvGeom,
    weights: &Tensor<P>,
    bias: Option<&[P::Acc]>,
    mul: &P::Mul,
    saturations: &mut u64,
) -> Result<Tensor<P>, ExecError> {
    let (accs, (n, c, h, w)) = conv2d_acc(input, geom, weights, bias, mul)?;
    Ok(narrow_all::<P>(accs, (n, c, h, w), saturations))
}

/// Fully-connected layer at accumulator resolution: per-output exact
/// accumulation of one multiplier call per input feature, plus the bias.
/// The input flattens implicitly.
pub fn fully_connected_acc<P: Payload>(
    input: &Tensor<P>,
    weights: &[P],
    in_features: usize,
    out_features: usize,
    bias: Option<&[P::Acc]>,
    mul: &P::Mul,
) -> Result<(Vec<P::Acc>, (usize, usize, usize, usize)), ExecError> {
    let (n, c, h, w) = input.dims();
    if c * h * w != in_features {
        return Err(ExecError::shape(
            "fully_connected",
            format!("input flattens to {} features, expected {in_features}", c * h * w),
        ));
    }
    if weights.len() != in_features * out_features {
        return Err(ExecError::shape("fully_connected", "weight matrix size mismatch"));
    }
    if let Some(b) = bias {
        if b.len() != out_features {
            return Err(ExecError::shape("fully_connected", "bias length != out_features"));
        }
    }
    let data = input.data();
    let mut accs: Vec<P::Acc> = vec![P::acc_zero(); n * out_features];
    accs.par_chunks_mut(1.max(PAR_CHUNK / in_features.max(1)))
        .enumerate()
        .try_for_each(|(chunk_idx, chunk)| -> Result<(), ExecError> {
            let chunk_len = 1.max(PAR_CHUNK / in_features.max(1));
            for (i, slot) in chunk.iter_mut().enumerate() {
                let flat = chunk_idx * chunk_len + i;
                let img = flat / out_features;
                let o = flat % out_features;
                let mut acc = bias.map_or_else(P::acc_zero, |b| b[o]);
                let xs = &data[img * in_features..(img + 1) * in_features];
                let ws = &weights[o * in_features..(o + 1) * in_features];
                for (&wv, &x) in ws.iter().zip(xs) {
                    let p = P::mul(mul, wv, x).map_err(|source| ExecError::Arith {
                        node: "fully_connected".into(),
                        source,
                    })?;
                    acc = P::acc_add(acc, p).map_err(|source| ExecError::Arith {
                        node: "fully_connected".into(),
                        source,
                    })?;
                }
                *slot = acc;
            }
            Ok(())
        })?;
    Ok((accs, (n, out_features, 1, 1)))
}

pub fn fully_connected<P: Payload>(
    input: &Tensor<P>,
    weights: &[P],
    in_features: usize,
    out_features: usize,
    bias: Option<&[P::Acc]>,
    mul: &P::Mul,
    saturations: &mut u64,
) -> Result<Tensor<P>, ExecError> {
    let (accs, dims) = fully_connected_acc(input, weights, in_features, out_features, bias, mul)?;
    Ok(narrow_all::<P>(accs, dims, saturations))
}

fn narrow_all<P: Payload>(
    accs: Vec<P::Acc>,
    dims: (usize, usize, usize, usize),
    saturations: &mut u64,
) -> Tensor<P> {
    let sat = AtomicU64::new(0);
    let data: Vec<P> = accs
        .par_iter()
        .with_min_len(PAR_CHUNK)
        .map(|&a| {
            let mut local = 0u64;
            let v = P::narrow(a, &mut local);
            if local > 0 {
                sat.fetch_add(local, Ordering::Relaxed);
            }
            v
        })
        .collect();
    *saturations += sat.into_inner();
    Tensor::new(dims.0, dims.1, dims.2, dims.3, data).expect("narrow preserves extents")
}

/// Inference-time batch normalization. Computed per channel in binary64 and
/// narrowed back to the pipeline payload; this node never touches the
/// approximate multiplier.
pub fn batchnorm_infer<P: Payload>(
    input: &Tensor<P>,
    bn: &BnDesc,
    saturations: &mut u64,
) -> Result<Tensor<P>, ExecError> {
    let (n, c, h, w) = input.dims();
    if c != bn.channels {
        return Err(ExecError::shape(
            "batchnorm",
            format!("input has {c} channels, descriptor expects {}", bn.channels),
        ));
    }
    let inv_std: Vec<f64> = bn
        .variance
        .iter()
        .map(|&v| 1.0 / (v + bn.epsilon).sqrt())
        .collect();
    let mut out = Tensor::filled(n, c, h, w, P::ZERO);
    let mut sat = 0u64;
    let plane = h * w;
    for img in 0..n {
        for ch in 0..c {
            let base = (img * c + ch) * plane;
            for i in 0..plane {
                let x = input.data()[base + i].to_real();
                let y = bn.gamma[ch] * (x - bn.mean[ch]) * inv_std[ch] + bn.beta[ch];
                out.data_mut()[base + i] = P::from_real(y, &mut sat);
            }
        }
    }
    *saturations += sat;
    Ok(out)
}

pub fn relu<P: Payload>(input: &Tensor<P>) -> Tensor<P> {
    input.map(P::relu)
}

pub fn maxpool<P: Payload>(input: &Tensor<P>, desc: &PoolDesc) -> Result<Tensor<P>, ExecError> {
    pool(input, desc, |window| {
        window
            .iter()
            .copied()
            .reduce(P::pick_max)
            .expect("pool window never empty")
    })
}

/// Average pooling: exact accumulation, division in wide arithmetic (floor in
/// the fixed pipeline), then narrowing. The divisor is the full kernel area;
/// padded positions contribute zero.
pub fn avgpool<P: Payload>(
    input: &Tensor<P>,
    desc: &PoolDesc,
    saturations: &mut u64,
) -> Result<Tensor<P>, ExecError> {
    let area = (desc.kernel.0 * desc.kernel.1) as u32;
    let mut sat = 0u64;
    let out = pool(input, desc, |window| {
        let mut acc = P::acc_zero();
        for &v in window {
            acc = P::acc_add(acc, v.widen()).expect("pool accumulation within guard bits");
        }
        P::narrow(P::acc_div(acc, area), &mut sat)
    });
    *saturations += sat;
    out
}

fn pool<P: Payload>(
    input: &Tensor<P>,
    desc: &PoolDesc,
    mut combine: impl FnMut(&[P]) -> P,
) -> Result<Tensor<P>, ExecError> {
    let (n, c, h, w) = input.dims();
    let (kh, kw) = desc.kernel;
    let (sh, sw) = desc.stride;
    let (ph, pw) = desc.padding;
    if h + 2 * ph < kh || w + 2 * pw < kw {
        return Err(ExecError::shape("pool", "kernel exceeds padded input"));
    }
    let oh = (h + 2 * ph - kh) / sh + 1;
    let ow = (w + 2 * pw - kw) / sw + 1;
    let mut out = Tensor::filled(n, c, oh, ow, P::ZERO);
    let mut window = Vec::with_capacity(kh * kw);
    for img in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    window.clear();
                    for ky in 0..kh {
                        for kx in 0..kw {
                            window.push(sample_padded(
                                input,
                                img,
                                ch,
                                oy * sh + ky,
                                ox * sw + kx,
                                (ph, pw),
                            ));
                        }
                    }
                    let idx = out.index(img, ch, oy, ox);
                    out.data_mut()[idx] = combine(&window);
                }
            }
        }
    }
    Ok(out)
}

/// Residual merge: exact accumulator-level elementwise addition of two
/// branches, narrowed with counted saturation.
pub fn add<P: Payload>(
    a: &Tensor<P>,
    b: &Tensor<P>,
    saturations: &mut u64,
) -> Result<Tensor<P>, ExecError> {
    if a.dims() != b.dims() {
        return Err(ExecError::shape(
            "add",
            format!("branch shapes differ: {:?} vs {:?}", a.dims(), b.dims()),
        ));
    }
    let mut sat = 0u64;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let acc = P::acc_add(x.widen(), y.widen()).expect("add within guard bits");
            P::narrow(acc, &mut sat)
        })
        .collect();
    *saturations += sat;
    let (n, c, h, w) = a.dims();
    Ok(Tensor::new(n, c, h, w, data).expect("add preserves extents"))
}

/// Indices of the `k` largest raw scores, ties broken by lower index. Raw
/// scores feed this directly; there is no softmax, so the result is invariant
/// under any uniform positive scaling of the scores.
pub fn topk<P: Payload>(scores: &Tensor<P>, k: usize) -> Vec<usize> {
    let data = scores.data();
    assert!(k <= data.len(), "k exceeds class count");
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&i, &j| P::cmp_score(&data[j], &data[i]).then_with(|| i.cmp(&j)));
    order.truncate(k);
    order
}

/// One node's saturation tally from a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSaturation {
    pub node: String,
    pub count: u64,
}

/// Result of a plain forward pass.
#[derive(Debug, Clone)]
pub struct Forward<P: Payload> {
    pub output: Tensor<P>,
    pub saturations: Vec<NodeSaturation>,
}

/// Result of a traced forward pass: one output tensor per node, in execution
/// order.
#[derive(Debug, Clone)]
pub struct Traced<P: Payload> {
    pub node_outputs: Vec<Tensor<P>>,
    pub output: Tensor<P>,
    pub saturations: Vec<NodeSaturation>,
}

enum BoundOp<P: Payload> {
    Conv {
        geom: ConvGeom,
        weights: Tensor<P>,
        bias: Option<Vec<P::Acc>>,
        mul: P::Mul,
    },
    Fc {
        in_features: usize,
        out_features: usize,
        weights: Vec<P>,
        bias: Option<Vec<P::Acc>>,
        mul: P::Mul,
    },
    Bn(BnDesc),
    Relu,
    MaxPool(PoolDesc),
    AvgPool(PoolDesc),
    Add,
    Flatten,
}

struct ExecNode<P: Payload> {
    name: String,
    inputs: Vec<usize>,
    output: usize,
    op: BoundOp<P>,
}

/// A model bound to one multiplier assignment for one pipeline. Immutable
/// after binding; shareable across threads.
pub struct Executor<P: Payload> {
    nodes: Vec<ExecNode<P>>,
    slot_count: usize,
    input_slot: usize,
    output_slot: usize,
    input_dims: EdgeDims,
}

impl<P: Payload> Executor<P> {
    /// Validates the graph, quantizes weights into the pipeline payload, and
    /// resolves each node's multiplier (per-node override or the global
    /// spec). Batch-norm nodes never receive a multiplier.
    pub fn bind(graph: &ModelGraph, spec: &MultiplierSpec) -> Result<Executor<P>, ExecError> {
        Self::bind_with(graph, |node_spec| {
            P::make_mul(node_spec.unwrap_or(spec)).map_err(ExecError::from)
        })
    }

    /// Binds with this pipeline's exact multiplier on every node, ignoring
    /// overrides. This is the reference side of every comparison run.
    pub fn bind_reference(graph: &ModelGraph) -> Result<Executor<P>, ExecError> {
        Self::bind_with(graph, |_| Ok(P::exact_mul()))
    }

    fn bind_with(
        graph: &ModelGraph,
        resolve: impl Fn(Option<&MultiplierSpec>) -> Result<P::Mul, ExecError>,
    ) -> Result<Executor<P>, ExecError> {
        graph.validate()?;
        let mut slots: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
        slots.insert(graph.input_edge.as_str(), 0);
        let mut next = 1usize;
        let mut nodes = Vec::with_capacity(graph.nodes.len());
        for node in &graph.nodes {
            let inputs = node
                .inputs
                .iter()
                .map(|e| *slots.get(e.as_str()).expect("validated edge"))
                .collect();
            slots.insert(node.output.as_str(), next);
            let output = next;
            next += 1;
            let node_spec = node.multiplier.as_ref();
            let op = match &node.op {
                NodeOp::Conv(d) => {
                    let mut sink = 0u64;
                    let ic_per_group = d.in_channels / d.groups;
                    let weights = Tensor::new(
                        d.out_channels,
                        ic_per_group,
                        d.kernel.0,
                        d.kernel.1,
                        d.weights
                            .iter()
                            .map(|&v| P::from_real(v as f64, &mut sink))
                            .collect(),
                    )
                    .map_err(|e| ExecError::shape(&node.name, e))?;
                    BoundOp::Conv {
                        geom: ConvGeom::of(d),
                        weights,
                        bias: d.bias.as_ref().map(|b| quantize_bias::<P>(b)),
                        mul: resolve(node_spec)?,
                    }
                }
                NodeOp::Fc(d) => {
                    let mut sink = 0u64;
                    BoundOp::Fc {
                        in_features: d.in_features,
                        out_features: d.out_features,
                        weights: d
                            .weights
                            .iter()
                            .map(|&v| P::from_real(v as f64, &mut sink))
                            .collect(),
                        bias: d.bias.as_ref().map(|b| quantize_bias::<P>(b)),
                        mul: resolve(node_spec)?,
                    }
                }
                NodeOp::BatchNorm(d) => BoundOp::Bn(d.clone()),
                NodeOp::Relu => BoundOp::Relu,
                NodeOp::MaxPool(d) => BoundOp::MaxPool(d.clone()),
                NodeOp::AvgPool(d) => BoundOp::AvgPool(d.clone()),
                NodeOp::Add => BoundOp::Add,
                NodeOp::Flatten => BoundOp::Flatten,
            };
            nodes.push(ExecNode {
                name: node.name.clone(),
                inputs,
                output,
                op,
            });
        }
        Ok(Executor {
            nodes,
            slot_count: next,
            input_slot: 0,
            output_slot: *slots
                .get(graph.output_edge.as_str())
                .expect("validated output edge"),
            input_dims: graph.input_dims,
        })
    }

    /// Quantizes a real-valued input tensor into this pipeline's payload.
    pub fn ingest(&self, input: &Tensor<f32>) -> Tensor<P> {
        let mut sink = 0u64;
        input.map(|v| P::from_real(v as f64, &mut sink))
    }

    pub fn input_dims(&self) -> EdgeDims {
        self.input_dims
    }

    pub fn forward(&self, input: &Tensor<P>) -> Result<Forward<P>, ExecError> {
        let traced = self.run(input)?;
        Ok(Forward {
            output: traced.output,
            saturations: traced.saturations,
        })
    }

    /// Forward pass that keeps every node's output, for error profiling.
    pub fn forward_traced(&self, input: &Tensor<P>) -> Result<Traced<P>, ExecError> {
        self.run(input)
    }

    fn run(&self, input: &Tensor<P>) -> Result<Traced<P>, ExecError> {
        let (_, c, h, w) = input.dims();
        if (c, h, w) != self.input_dims {
            return Err(ExecError::shape(
                "<input>",
                format!("input dims ({c},{h},{w}) do not match model {:?}", self.input_dims),
            ));
        }
        let mut slots: Vec<Option<Tensor<P>>> = vec![None; self.slot_count];
        slots[self.input_slot] = Some(input.clone());
        let mut saturations = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let mut sat = 0u64;
            let result = self.run_node(node, &slots, &mut sat).map_err(|e| match e {
                ExecError::Arith { source, .. } => ExecError::Arith {
                    node: node.name.clone(),
                    source,
                },
                ExecError::ShapeMismatch { detail, .. } => ExecError::ShapeMismatch {
                    node: node.name.clone(),
                    detail,
                },
                other => other,
            })?;
            slots[node.output] = Some(result);
            saturations.push(NodeSaturation {
                node: node.name.clone(),
                count: sat,
            });
        }
        let output = slots[self.output_slot]
            .clone()
            .expect("output slot filled by validated graph");
        let node_outputs = self
            .nodes
            .iter()
            .map(|n| slots[n.output].take().expect("node slot filled"))
            .collect();
        Ok(Traced {
            node_outputs,
            output,
            saturations,
        })
    }

    fn run_node(
        &self,
        node: &ExecNode<P>,
        slots: &[Option<Tensor<P>>],
        sat: &mut u64,
    ) -> Result<Tensor<P>, ExecError> {
        let arg = |i: usize| slots[node.inputs[i]].as_ref().expect("edge produced earlier");
        match &node.op {
            BoundOp::Conv { geom, weights, bias, mul } => {
                conv2d(arg(0), geom, weights, bias.as_deref(), mul, sat)
            }
            BoundOp::Fc { in_features, out_features, weights, bias, mul } => fully_connected(
                arg(0),
                weights,
                *in_features,
                *out_features,
                bias.as_deref(),
                mul,
                sat,
            ),
            BoundOp::Bn(d) => batchnorm_infer(arg(0), d, sat),
            BoundOp::Relu => Ok(relu(arg(0))),
            BoundOp::MaxPool(d) => maxpool(arg(0), d),
            BoundOp::AvgPool(d) => avgpool(arg(0), d, sat),
            BoundOp::Add => add(arg(0), arg(1), sat),
            BoundOp::Flatten => Ok(arg(0).flattened()),
        }
    }
}

fn quantize_bias<P: Payload>(bias: &[f32]) -> Vec<P::Acc> {
    let mut sink = 0u64;
    bias.iter()
        .map(|&b| P::from_real(b as f64, &mut sink).widen())
        .collect()
}
