//! Batch-normalization parameter adjustment: when every convolution output is
//! scaled by a mean multiplier error `(1 + e)`, the stored means must scale by
//! `(1 + e)` and the stored variances by `(1 + e)^2` for normalization to keep
//! redistributing feature maps correctly. Nothing else in the model changes.

use crate::nncore::{ModelGraph, NodeOp};

/// Scales every BN node's mean by `(1 + e)` and variance by `(1 + e)^2`;
/// gamma, beta, and epsilon are untouched, as is every non-BN node. Returns
/// the number of adjusted nodes. Adjustments compose multiplicatively:
/// adjusting by `e1` then `e2` scales means by `(1 + e1) * (1 + e2)`.
pub fn adjust_bn(graph: &mut ModelGraph, e: f64) -> usize {
    assert!(e > -1.0, "mean error must be greater than -1");
    let scale = 1.0 + e;
    let scale2 = scale * scale;
    let mut adjusted = 0;
    for node in &mut graph.nodes {
        if let NodeOp::BatchNorm(bn) = &mut node.op {
            for m in &mut bn.mean {
                *m *= scale;
            }
            for v in &mut bn.variance {
                *v *= scale2;
            }
            adjusted += 1;
        }
    }
    adjusted
}
