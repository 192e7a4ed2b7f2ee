//! Network-level error reports: per-layer mean deviation profiles and
//! per-channel variance ratios, measured by running the same inputs through a
//! reference executor and an approximate one.

use rayon::prelude::*;

use crate::mulkit::MultiplierSpec;
use crate::nncore::{Executor, ModelGraph, NodeOp, Payload, Tensor, Traced};

use super::stats::Moments;
use super::StatError;

/// Variance of an all-zero (or near-zero) channel poisons a geometric mean;
/// channels below this output-variance floor are excluded and counted.
pub const DEGENERATE_VARIANCE_FLOOR: f64 = 5.960464477539063e-8; // 2^-24

/// Mean relative deviation of approximate activations at one profiled layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerDeviation {
    pub index: usize,
    pub name: String,
    /// Mean over samples and positions of (approx - exact) / exact, taken
    /// post-activation over positive exact activations only.
    pub mean: f64,
    /// Number of activations that entered the mean.
    pub count: u64,
}

/// Ordered per-layer deviations, execution order.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerErrorProfile {
    pub layers: Vec<LayerDeviation>,
}

/// Per-channel accumulated-error and output variances for one conv layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelVariance {
    pub channel: usize,
    pub error_variance: f64,
    pub output_variance: f64,
}

/// Table-3-style report for one conv layer: channel variances, geometric
/// means across channels, and their percentage ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelVarianceReport {
    pub layer: String,
    pub channels: Vec<ChannelVariance>,
    pub gm_error_variance: f64,
    pub gm_output_variance: f64,
    /// `100 * gm_error_variance / gm_output_variance`, when defined.
    pub pct: Option<f64>,
    /// Channels excluded for near-zero output variance.
    pub degenerate: u64,
}

/// Measurement points: each conv/FC node, observed post-activation. The walk
/// follows the single-consumer chain through batch-norm nodes until it passes
/// the layer's ReLU, and stops right after it, so a BN placed after the
/// activation is *not* folded into the measurement (its correction belongs to
/// the next layer's input).
fn profile_points(graph: &ModelGraph) -> Vec<(usize, String, usize)> {
    let producers = graph.producers();
    let consumers = graph.consumers();
    let mut points = Vec::new();
    for (idx, node) in graph.nodes.iter().enumerate() {
        if !matches!(node.op, NodeOp::Conv(_) | NodeOp::Fc(_)) {
            continue;
        }
        let mut edge = node.output.as_str();
        loop {
            match consumers.get(edge) {
                Some(next) if next.len() == 1 => match graph.nodes[next[0]].op {
                    NodeOp::BatchNorm(_) => {
                        edge = graph.nodes[next[0]].output.as_str();
                        continue;
                    }
                    NodeOp::Relu => {
                        edge = graph.nodes[next[0]].output.as_str();
                        break;
                    }
                    _ => break,
                },
                _ => break,
            }
        }
        let measured = producers[edge];
        points.push((idx, node.name.clone(), measured));
    }
    points
}

fn traced_pair<P: Payload>(
    reference: &Executor<P>,
    approx: &Executor<P>,
    sample: &Tensor<f32>,
) -> Result<(Traced<P>, Traced<P>), StatError> {
    let input_ref = reference.ingest(sample);
    let r = reference.forward_traced(&input_ref)?;
    let a = approx.forward_traced(&input_ref)?;
    Ok((r, a))
}

/// Runs every sample through the reference and approximate executors, folding
/// each traced pair into a partial and merging partials in sample order.
///
/// The reference side executes `reference_graph` with exact multiplication;
/// the approximate side executes `approx_graph` under `spec`. The two graphs
/// are usually the same model, but the BN-adjustment experiments pass the
/// original model as reference and the adjusted one as the approximate side:
/// the adjustment corrects the approximate run *toward the original model's
/// activations*, so that is what deviations are measured against.
fn run_over_samples<P, Acc, F>(
    reference_graph: &ModelGraph,
    approx_graph: &ModelGraph,
    spec: &MultiplierSpec,
    samples: &[Tensor<f32>],
    fold: F,
) -> Result<Acc, StatError>
where
    P: Payload,
    Acc: Send + MergeInOrder,
    F: Fn(&Traced<P>, &Traced<P>) -> Acc + Sync,
{
    if samples.is_empty() {
        return Err(StatError::Invalid("at least one sample input required".into()));
    }
    check_same_structure(reference_graph, approx_graph)?;
    let reference = Executor::<P>::bind_reference(reference_graph)?;
    let approx = Executor::<P>::bind(approx_graph, spec)?;
    let partials: Vec<Result<Acc, StatError>> = samples
        .par_iter()
        .map(|s| traced_pair(&reference, &approx, s).map(|(r, a)| fold(&r, &a)))
        .collect();
    let mut acc: Option<Acc> = None;
    for p in partials {
        let p = p?;
        match &mut acc {
            None => acc = Some(p),
            Some(a) => a.merge(p),
        }
    }
    Ok(acc.expect("samples non-empty"))
}

/// The pair APIs require graphs that differ only in parameter values.
fn check_same_structure(a: &ModelGraph, b: &ModelGraph) -> Result<(), StatError> {
    let same = a.nodes.len() == b.nodes.len()
        && a.nodes.iter().zip(&b.nodes).all(|(x, y)| {
            x.name == y.name
                && x.output == y.output
                && x.inputs == y.inputs
                && x.op.kind_name() == y.op.kind_name()
        });
    if same {
        Ok(())
    } else {
        Err(StatError::Invalid(
            "reference and approximate graphs differ in structure".into(),
        ))
    }
}

trait MergeInOrder {
    fn merge(&mut self, other: Self);
}

impl MergeInOrder for Vec<Moments> {
    fn merge(&mut self, other: Self) {
        for (a, b) in self.iter_mut().zip(other) {
            a.merge(&b);
        }
    }
}

impl MergeInOrder for Vec<Vec<ChannelSums>> {
    fn merge(&mut self, other: Self) {
        for (layer_a, layer_b) in self.iter_mut().zip(other) {
            for (a, b) in layer_a.iter_mut().zip(layer_b) {
                a.merge(&b);
            }
        }
    }
}

/// Plain power sums per channel; merged in sample order for determinism.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct ChannelSums {
    n: u64,
    sum_d: f64,
    sum_d2: f64,
    sum_y: f64,
    sum_y2: f64,
}

impl ChannelSums {
    fn push(&mut self, exact: f64, approx: f64) {
        let d = approx - exact;
        self.n += 1;
        self.sum_d += d;
        self.sum_d2 += d * d;
        self.sum_y += exact;
        self.sum_y2 += exact * exact;
    }

    fn merge(&mut self, other: &ChannelSums) {
        self.n += other.n;
        self.sum_d += other.sum_d;
        self.sum_d2 += other.sum_d2;
        self.sum_y += other.sum_y;
        self.sum_y2 += other.sum_y2;
    }

    fn error_variance(&self) -> f64 {
        variance(self.n, self.sum_d, self.sum_d2)
    }

    fn output_variance(&self) -> f64 {
        variance(self.n, self.sum_y, self.sum_y2)
    }
}

fn variance(n: u64, sum: f64, sum2: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    (sum2 / nf - (sum / nf).powi(2)).max(0.0)
}

/// Per-layer mean relative deviation of approximate activations versus exact
/// activations, ordered by execution, averaged over the sample set.
pub fn layer_mean_error_profile<P: Payload>(
    graph: &ModelGraph,
    spec: &MultiplierSpec,
    samples: &[Tensor<f32>],
) -> Result<LayerErrorProfile, StatError> {
    layer_mean_error_profile_pair::<P>(graph, graph, spec, samples)
}

/// Like [`layer_mean_error_profile`], but measures the approximate run of
/// `approx_graph` (e.g. a BN-adjusted model) against the exact run of
/// `reference_graph` (the original model).
pub fn layer_mean_error_profile_pair<P: Payload>(
    reference_graph: &ModelGraph,
    approx_graph: &ModelGraph,
    spec: &MultiplierSpec,
    samples: &[Tensor<f32>],
) -> Result<LayerErrorProfile, StatError> {
    let points = profile_points(reference_graph);
    let fold = |r: &Traced<P>, a: &Traced<P>| -> Vec<Moments> {
        points
            .iter()
            .map(|&(_, _, measured)| {
                let mut m = Moments::default();
                let exact = &r.node_outputs[measured];
                let approx = &a.node_outputs[measured];
                for (&e, &ap) in exact.data().iter().zip(approx.data()) {
                    let ev = e.to_real();
                    if ev > 0.0 {
                        m.push((ap.to_real() - ev) / ev);
                    }
                }
                m
            })
            .collect()
    };
    let merged =
        run_over_samples::<P, _, _>(reference_graph, approx_graph, spec, samples, fold)?;
    Ok(LayerErrorProfile {
        layers: points
            .iter()
            .zip(merged)
            .enumerate()
            .map(|(i, ((_, name, _), m))| LayerDeviation {
                index: i,
                name: name.clone(),
                mean: m.mean,
                count: m.count,
            })
            .collect(),
    })
}

/// Per-conv-layer channel variance report: variance of output deviations and
/// of exact outputs per channel (pooled across samples and positions),
/// geometric means across channels, and their percentage ratio.
pub fn channel_variance_report<P: Payload>(
    graph: &ModelGraph,
    spec: &MultiplierSpec,
    samples: &[Tensor<f32>],
) -> Result<Vec<ChannelVarianceReport>, StatError> {
    channel_variance_report_pair::<P>(graph, graph, spec, samples)
}

/// Like [`channel_variance_report`], with a separate reference model (see
/// [`layer_mean_error_profile_pair`]).
pub fn channel_variance_report_pair<P: Payload>(
    reference_graph: &ModelGraph,
    approx_graph: &ModelGraph,
    spec: &MultiplierSpec,
    samples: &[Tensor<f32>],
) -> Result<Vec<ChannelVarianceReport>, StatError> {
    let graph = reference_graph;
    let conv_nodes: Vec<(usize, String, usize)> = graph
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| matches!(n.op, NodeOp::Conv(_)))
        .map(|(i, n)| {
            let channels = match &n.op {
                NodeOp::Conv(d) => d.out_channels,
                _ => unreachable!(),
            };
            (i, n.name.clone(), channels)
        })
        .collect();
    let fold = |r: &Traced<P>, a: &Traced<P>| -> Vec<Vec<ChannelSums>> {
        conv_nodes
            .iter()
            .map(|&(node_idx, _, channels)| {
                let exact = &r.node_outputs[node_idx];
                let approx = &a.node_outputs[node_idx];
                let (n, c, h, w) = exact.dims();
                debug_assert_eq!(c, channels);
                let mut sums = vec![ChannelSums::default(); channels];
                let plane = h * w;
                for img in 0..n {
                    for ch in 0..c {
                        let base = (img * c + ch) * plane;
                        for i in 0..plane {
                            sums[ch].push(
                                exact.data()[base + i].to_real(),
                                approx.data()[base + i].to_real(),
                            );
                        }
                    }
                }
                sums
            })
            .collect()
    };
    let merged =
        run_over_samples::<P, _, _>(reference_graph, approx_graph, spec, samples, fold)?;
    Ok(conv_nodes
        .iter()
        .zip(merged)
        .map(|((_, name, _), sums)| build_report(name.clone(), sums))
        .collect())
}

fn build_report(layer: String, sums: Vec<ChannelSums>) -> ChannelVarianceReport {
    let channels: Vec<ChannelVariance> = sums
        .iter()
        .enumerate()
        .map(|(i, s)| ChannelVariance {
            channel: i,
            error_variance: s.error_variance(),
            output_variance: s.output_variance(),
        })
        .collect();
    let mut degenerate = 0u64;
    let mut ln_err = 0.0f64;
    let mut ln_out = 0.0f64;
    let mut kept = 0u64;
    let mut any_zero_err = false;
    for cv in &channels {
        if cv.output_variance < DEGENERATE_VARIANCE_FLOOR {
            degenerate += 1;
            continue;
        }
        kept += 1;
        ln_out += cv.output_variance.ln();
        if cv.error_variance == 0.0 {
            any_zero_err = true;
        } else {
            ln_err += cv.error_variance.ln();
        }
    }
    let (gm_err, gm_out, pct) = if kept == 0 {
        (0.0, 0.0, None)
    } else {
        let gm_out = (ln_out / kept as f64).exp();
        let gm_err = if any_zero_err {
            0.0
        } else {
            (ln_err / kept as f64).exp()
        };
        (gm_err, gm_out, Some(100.0 * gm_err / gm_out))
    };
    ChannelVarianceReport {
        layer,
        channels,
        gm_error_variance: gm_err,
        gm_output_variance: gm_out,
        pct,
        degenerate,
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::nncore::{ConvDesc, Node};
    use crate::qformat::QNum;

    fn conv_graph(groups: usize, seed: u64) -> ModelGraph {
        let c = 8;
        let per_group = c / groups;
        let count = c * per_group * 9;
        let mut state = seed;
        let weights: Vec<f32> = (0..count)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 40) as f32 / (1 << 24) as f32 - 0.5) * 0.5
            })
            .collect();
        ModelGraph {
            name: "pair".into(),
            input_edge: "x".into(),
            input_dims: (c, 6, 6),
            output_edge: "y".into(),
            nodes: vec![Node {
                name: "conv".into(),
                op: NodeOp::Conv(ConvDesc {
                    out_channels: c,
                    in_channels: c,
                    kernel: (3, 3),
                    stride: (1, 1),
                    padding: (1, 1),
                    groups,
                    weights,
                    bias: None,
                }),
                inputs: vec!["x".into()],
                output: "y".into(),
                multiplier: None,
            }],
            metadata: BTreeMap::new(),
        }
    }

    fn sample_inputs(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Vec<Tensor<f32>> {
        let mut state = seed;
        (0..n)
            .map(|_| {
                let data: Vec<f32> = (0..c * h * w)
                    .map(|_| {
                        state = state
                            .wrapping_mul(6364136223846793005)
                            .wrapping_add(1442695040888963407);
                        (state >> 40) as f32 / (1 << 24) as f32
                    })
                    .collect();
                Tensor::new(1, c, h, w, data).unwrap()
            })
            .collect()
    }

    #[test]
    fn exact_multiplier_gives_zero_profile_and_variance() {
        let graph = conv_graph(1, 3);
        let samples = sample_inputs(2, 8, 6, 6, 17);
        let profile = layer_mean_error_profile::<QNum>(&graph, &MultiplierSpec::exact(), &samples)
            .unwrap();
        assert_eq!(profile.layers.len(), 1);
        assert_eq!(profile.layers[0].mean, 0.0);

        let reports =
            channel_variance_report::<QNum>(&graph, &MultiplierSpec::exact(), &samples).unwrap();
        assert_eq!(reports.len(), 1);
        for cv in &reports[0].channels {
            assert_eq!(cv.error_variance, 0.0);
        }
        assert_eq!(reports[0].pct, Some(0.0));
    }

    #[test]
    fn depthwise_ratio_exceeds_conventional() {
        let spec: MultiplierSpec = "mitchw:w=6:sign=c1".parse().unwrap();
        let samples = sample_inputs(3, 8, 6, 6, 99);
        let conventional =
            channel_variance_report::<QNum>(&conv_graph(1, 3), &spec, &samples).unwrap();
        let depthwise =
            channel_variance_report::<QNum>(&conv_graph(8, 3), &spec, &samples).unwrap();
        let a = conventional[0].pct.unwrap();
        let b = depthwise[0].pct.unwrap();
        assert!(b > a, "depthwise {b} vs conventional {a}");
    }

    #[test]
    fn single_product_outputs_match_direct_measurement() {
        // 1x1 conv over one input channel: one product per output, so the
        // per-channel deviation variance equals the directly computed
        // variance of those products' deviations.
        let graph = ModelGraph {
            name: "one".into(),
            input_edge: "x".into(),
            input_dims: (1, 4, 4),
            output_edge: "y".into(),
            nodes: vec![Node {
                name: "conv".into(),
                op: NodeOp::Conv(ConvDesc {
                    out_channels: 1,
                    in_channels: 1,
                    kernel: (1, 1),
                    stride: (1, 1),
                    padding: (0, 0),
                    groups: 1,
                    weights: vec![0.736],
                    bias: None,
                }),
                inputs: vec!["x".into()],
                output: "y".into(),
                multiplier: None,
            }],
            metadata: BTreeMap::new(),
        };
        let spec = MultiplierSpec::mitchell(crate::mulkit::SignMode::ExactSign);
        let samples = sample_inputs(1, 1, 4, 4, 5);
        let report = channel_variance_report::<QNum>(&graph, &spec, &samples).unwrap();

        let exact = Executor::<QNum>::bind(&graph, &MultiplierSpec::exact()).unwrap();
        let approx = Executor::<QNum>::bind(&graph, &spec).unwrap();
        let input = exact.ingest(&samples[0]);
        let e = exact.forward(&input).unwrap().output;
        let a = approx.forward(&input).unwrap().output;
        let ds: Vec<f64> = e
            .data()
            .iter()
            .zip(a.data())
            .map(|(&x, &y)| y.to_real() - x.to_real())
            .collect();
        let mean = ds.iter().sum::<f64>() / ds.len() as f64;
        let var = ds.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / ds.len() as f64;
        assert!((report[0].channels[0].error_variance - var).abs() < 1e-12);
    }
}
