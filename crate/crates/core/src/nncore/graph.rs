//! The declarative model graph: an ordered DAG of conv/FC/BN/activation/pool/
//! add nodes over named tensor edges. Weights are held in binary32 master
//! form; each pipeline quantizes them when an executor binds the graph.

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::mulkit::MultiplierSpec;

/// Convolution geometry plus its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvDesc {
    pub out_channels: usize,
    pub in_channels: usize,
    /// (kh, kw)
    pub kernel: (usize, usize),
    /// (sh, sw)
    pub stride: (usize, usize),
    /// (ph, pw), zero-filled
    pub padding: (usize, usize),
    pub groups: usize,
    /// Row-major (out_channels, in_channels / groups, kh, kw).
    pub weights: Vec<f32>,
    /// One per out channel; added in the accumulator, never multiplied.
    pub bias: Option<Vec<f32>>,
}

impl ConvDesc {
    pub fn weight_count(&self) -> usize {
        self.out_channels * (self.in_channels / self.groups.max(1)) * self.kernel.0 * self.kernel.1
    }

    /// Depthwise means one input channel per group and groups == channels.
    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.groups == self.out_channels
    }
}

/// Fully-connected layer parameters; rows are outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct FcDesc {
    pub in_features: usize,
    pub out_features: usize,
    /// Row-major (out_features, in_features).
    pub weights: Vec<f32>,
    pub bias: Option<Vec<f32>>,
}

/// Inference-time batch normalization parameters, per channel.
/// `y = gamma * (x - mean) / sqrt(variance + epsilon) + beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct BnDesc {
    pub channels: usize,
    pub epsilon: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Pooling geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolDesc {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeOp {
    Conv(ConvDesc),
    Fc(FcDesc),
    BatchNorm(BnDesc),
    Relu,
    MaxPool(PoolDesc),
    AvgPool(PoolDesc),
    /// Exact accumulator-level elementwise addition of two branches.
    Add,
    Flatten,
}

impl NodeOp {
    pub fn kind_name(&self) -> &'static str {
        match self {
            NodeOp::Conv(_) => "conv",
            NodeOp::Fc(_) => "fc",
            NodeOp::BatchNorm(_) => "batchnorm",
            NodeOp::Relu => "relu",
            NodeOp::MaxPool(_) => "maxpool",
            NodeOp::AvgPool(_) => "avgpool",
            NodeOp::Add => "add",
            NodeOp::Flatten => "flatten",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub op: NodeOp,
    /// Edge names consumed (two for `add`, one otherwise).
    pub inputs: Vec<String>,
    /// Edge name produced.
    pub output: String,
    /// Per-node multiplier override; `None` uses the run's global spec.
    pub multiplier: Option<MultiplierSpec>,
}

/// Per-sample channel/height/width extents of an edge.
pub type EdgeDims = (usize, usize, usize);

/// The model: ordered nodes over named edges, one input, one output.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub name: String,
    pub input_edge: String,
    pub input_dims: EdgeDims,
    pub output_edge: String,
    pub nodes: Vec<Node>,
    /// Free-form key/value pairs carried through save/load (records e.g. the
    /// applied BN adjustment factor).
    pub metadata: BTreeMap<String, String>,
}

/// Graph-level validation failure; names the offending node.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("node '{node}': {detail}")]
pub struct GraphError {
    pub node: String,
    pub detail: String,
}

fn fail(node: &str, detail: impl Into<String>) -> GraphError {
    GraphError {
        node: node.to_string(),
        detail: detail.into(),
    }
}

impl ModelGraph {
    /// Shape-checks the whole graph: every edge produced before consumed and
    /// produced exactly once, descriptor invariants hold, weight lengths
    /// match, and the declared output exists. Returns the inferred dims of
    /// every edge.
    pub fn validate(&self) -> Result<HashMap<String, EdgeDims>, GraphError> {
        let mut dims: HashMap<String, EdgeDims> = HashMap::new();
        dims.insert(self.input_edge.clone(), self.input_dims);
        let mut names = HashSet::new();
        for node in &self.nodes {
            if !names.insert(node.name.clone()) {
                return Err(fail(&node.name, "duplicate node name"));
            }
            let expected_inputs = if matches!(node.op, NodeOp::Add) { 2 } else { 1 };
            if node.inputs.len() != expected_inputs {
                return Err(fail(
                    &node.name,
                    format!("expected {expected_inputs} inputs, got {}", node.inputs.len()),
                ));
            }
            let mut in_dims = Vec::new();
            for edge in &node.inputs {
                match dims.get(edge) {
                    Some(d) => in_dims.push(*d),
                    None => {
                        return Err(fail(
                            &node.name,
                            format!("input edge '{edge}' is not produced before it is consumed"),
                        ))
                    }
                }
            }
            let out = infer_node_dims(node, &in_dims)?;
            if dims.insert(node.output.clone(), out).is_some() {
                return Err(fail(
                    &node.name,
                    format!("edge '{}' is produced more than once", node.output),
                ));
            }
        }
        if !dims.contains_key(&self.output_edge) {
            return Err(fail(
                "<graph>",
                format!("output edge '{}' is never produced", self.output_edge),
            ));
        }
        Ok(dims)
    }

    /// Node index producing each edge (the graph input has no producer).
    pub fn producers(&self) -> HashMap<&str, usize> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.output.as_str(), i))
            .collect()
    }

    /// Node indices consuming each edge.
    pub fn consumers(&self) -> HashMap<&str, Vec<usize>> {
        let mut map: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            for e in &n.inputs {
                map.entry(e.as_str()).or_default().push(i);
            }
        }
        map
    }
}

fn pool_output(
    node: &str,
    input: EdgeDims,
    desc: &PoolDesc,
) -> Result<EdgeDims, GraphError> {
    let (c, h, w) = input;
    let (kh, kw) = desc.kernel;
    let (sh, sw) = desc.stride;
    let (ph, pw) = desc.padding;
    if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
        return Err(fail(node, "pool kernel and stride must be positive"));
    }
    if h + 2 * ph < kh || w + 2 * pw < kw {
        return Err(fail(node, "pool kernel exceeds padded input"));
    }
    Ok((c, (h + 2 * ph - kh) / sh + 1, (w + 2 * pw - kw) / sw + 1))
}

fn infer_node_dims(node: &Node, inputs: &[EdgeDims]) -> Result<EdgeDims, GraphError> {
    let name = node.name.as_str();
    match &node.op {
        NodeOp::Conv(d) => {
            let (c, h, w) = inputs[0];
            if d.groups == 0 || d.in_channels % d.groups != 0 || d.out_channels % d.groups != 0 {
                return Err(fail(name, "channel counts must divide by groups"));
            }
            if c != d.in_channels {
                return Err(fail(
                    name,
                    format!("input has {c} channels, descriptor expects {}", d.in_channels),
                ));
            }
            if d.weights.len() != d.weight_count() {
                return Err(fail(
                    name,
                    format!(
                        "weight blob holds {} values, expected {}",
                        d.weights.len(),
                        d.weight_count()
                    ),
                ));
            }
            if let Some(b) = &d.bias {
                if b.len() != d.out_channels {
                    return Err(fail(name, "bias length must equal out_channels"));
                }
            }
            let (kh, kw) = d.kernel;
            let (sh, sw) = d.stride;
            let (ph, pw) = d.padding;
            if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
                return Err(fail(name, "kernel and stride must be positive"));
            }
            if h + 2 * ph < kh || w + 2 * pw < kw {
                return Err(fail(name, "kernel exceeds padded input"));
            }
            Ok((
                d.out_channels,
                (h + 2 * ph - kh) / sh + 1,
                (w + 2 * pw - kw) / sw + 1,
            ))
        }
        NodeOp::Fc(d) => {
            let (c, h, w) = inputs[0];
            if c * h * w != d.in_features {
                return Err(fail(
                    name,
                    format!("input flattens to {} features, descriptor expects {}", c * h * w, d.in_features),
                ));
            }
            if d.weights.len() != d.in_features * d.out_features {
                return Err(fail(name, "weight blob length must equal in*out features"));
            }
            if let Some(b) = &d.bias {
                if b.len() != d.out_features {
                    return Err(fail(name, "bias length must equal out_features"));
                }
            }
            Ok((d.out_features, 1, 1))
        }
        NodeOp::BatchNorm(d) => {
            let (c, h, w) = inputs[0];
            if c != d.channels {
                return Err(fail(
                    name,
                    format!("input has {c} channels, descriptor expects {}", d.channels),
                ));
            }
            for v in [&d.mean, &d.variance, &d.gamma, &d.beta] {
                if v.len() != d.channels {
                    return Err(fail(name, "BN parameter arrays must have one entry per channel"));
                }
            }
            if !(d.epsilon > 0.0) {
                return Err(fail(name, "epsilon must be positive"));
            }
            if d.variance.iter().any(|&v| v < 0.0) {
                return Err(fail(name, "variance must be non-negative"));
            }
            Ok((c, h, w))
        }
        NodeOp::Relu => Ok(inputs[0]),
        NodeOp::MaxPool(d) | NodeOp::AvgPool(d) => pool_output(name, inputs[0], d),
        NodeOp::Add => {
            if inputs[0] != inputs[1] {
                return Err(fail(
                    name,
                    format!("branch shapes differ: {:?} vs {:?}", inputs[0], inputs[1]),
                ));
            }
            Ok(inputs[0])
        }
        NodeOp::Flatten => {
            let (c, h, w) = inputs[0];
            Ok((c * h * w, 1, 1))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn relu_node(name: &str, input: &str, output: &str) -> Node {
        Node {
            name: name.into(),
            op: NodeOp::Relu,
            inputs: vec![input.into()],
            output: output.into(),
            multiplier: None,
        }
    }

    #[test]
    fn single_relu_graph_validates() {
        let g = ModelGraph {
            name: "tiny".into(),
            input_edge: "x".into(),
            input_dims: (1, 4, 4),
            output_edge: "y".into(),
            nodes: vec![relu_node("r", "x", "y")],
            metadata: BTreeMap::new(),
        };
        let dims = g.validate().unwrap();
        assert_eq!(dims["y"], (1, 4, 4));
    }

    #[test]
    fn consuming_unproduced_edge_fails() {
        let g = ModelGraph {
            name: "bad".into(),
            input_edge: "x".into(),
            input_dims: (1, 4, 4),
            output_edge: "y".into(),
            nodes: vec![relu_node("r", "missing", "y")],
            metadata: BTreeMap::new(),
        };
        let err = g.validate().unwrap_err();
        assert_eq!(err.node, "r");
    }

    #[test]
    fn conv_weight_length_is_checked() {
        let g = ModelGraph {
            name: "bad".into(),
            input_edge: "x".into(),
            input_dims: (2, 4, 4),
            output_edge: "y".into(),
            nodes: vec![Node {
                name: "c".into(),
                op: NodeOp::Conv(ConvDesc {
                    out_channels: 2,
                    in_channels: 2,
                    kernel: (3, 3),
                    stride: (1, 1),
                    padding: (1, 1),
                    groups: 1,
                    weights: vec![0.0; 35], // one short of 2*2*3*3
                    bias: None,
                }),
                inputs: vec!["x".into()],
                output: "y".into(),
                multiplier: None,
            }],
            metadata: BTreeMap::new(),
        };
        let err = g.validate().unwrap_err();
        assert_eq!(err.node, "c");
        assert!(err.detail.contains("expected 36"));
    }

    #[test]
    fn depthwise_predicate() {
        let d = ConvDesc {
            out_channels: 8,
            in_channels: 8,
            kernel: (3, 3),
            stride: (1, 1),
            padding: (1, 1),
            groups: 8,
            weights: vec![0.0; 72],
            bias: None,
        };
        assert!(d.is_depthwise());
    }
}
