//! Minimal CNN inference over a pluggable multiplier: convolution with
//! groups, fully-connected, batch norm, ReLU, pooling, residual add, and
//! top-k scoring, all over either the Q16.16 or the binary32 pipeline.

mod exec;
mod graph;
mod payload;
mod tensor;

pub use exec::{
    add, avgpool, batchnorm_infer, conv2d, conv2d_acc, fully_connected, fully_connected_acc,
    maxpool, relu, topk, ConvGeom, ExecError, Executor, Forward, NodeSaturation, Traced,
};
pub use graph::{
    BnDesc, ConvDesc, EdgeDims, FcDesc, GraphError, ModelGraph, Node, NodeOp, PoolDesc,
};
pub use payload::Payload;
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::mulkit::{Multiplier, MultiplierSpec, SignMode};
    use crate::qformat::{QAcc, QNum};

    fn qtensor(n: usize, c: usize, h: usize, w: usize, reals: &[f64]) -> Tensor<QNum> {
        Tensor::new(n, c, h, w, reals.iter().map(|&x| QNum::quantize(x)).collect()).unwrap()
    }

    #[test]
    fn identity_convolution() {
        let input = qtensor(1, 1, 2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let geom = ConvGeom {
            out_channels: 1,
            in_channels: 1,
            kernel: (1, 1),
            stride: (1, 1),
            padding: (0, 0),
            groups: 1,
        };
        let weights = qtensor(1, 1, 1, 1, &[1.0]);
        let mut sat = 0;
        let out = conv2d(&input, &geom, &weights, None, &Multiplier::Exact, &mut sat).unwrap();
        assert_eq!(out, input);
        assert_eq!(sat, 0);
    }

    #[test]
    fn hand_dot_product_convolution() {
        let input = qtensor(1, 1, 2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let geom = ConvGeom {
            out_channels: 1,
            in_channels: 1,
            kernel: (2, 2),
            stride: (1, 1),
            padding: (0, 0),
            groups: 1,
        };
        let weights = qtensor(1, 1, 2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let mut sat = 0;
        let exact = conv2d(&input, &geom, &weights, None, &Multiplier::Exact, &mut sat).unwrap();
        assert_eq!(exact.data()[0].to_real(), 5.0);

        // Per-product error within [-11.1%, 0] bounds the sum.
        let mitchell = Multiplier::Mitchell { sign: SignMode::ExactSign };
        let approx = conv2d(&input, &geom, &weights, None, &mitchell, &mut sat).unwrap();
        let v = approx.data()[0].to_real();
        assert!(v <= 5.0 && v >= 4.44, "got {v}");
    }

    #[test]
    fn fully_connected_examples() {
        // Identity weights, zero bias: output == input.
        let input = qtensor(1, 4, 1, 1, &[0.5, -1.5, 2.0, 3.25]);
        let identity: Vec<QNum> = (0..16)
            .map(|i| QNum::quantize(if i % 5 == 0 { 1.0 } else { 0.0 }))
            .collect();
        let mut sat = 0;
        let out =
            fully_connected(&input, &identity, 4, 4, None, &Multiplier::Exact, &mut sat).unwrap();
        assert_eq!(out.data(), input.data());

        // 1.0 x 1.0 is a power-of-two product: Mitchell is error-free, the
        // 1024-way accumulation is exact.
        let ones = Tensor::filled(1, 1024, 1, 1, QNum::ONE);
        let w = vec![QNum::ONE; 1024];
        let mitchell = Multiplier::Mitchell { sign: SignMode::ExactSign };
        let out = fully_connected(&ones, &w, 1024, 1, None, &mitchell, &mut sat).unwrap();
        assert_eq!(out.data()[0].to_real(), 1024.0);

        // Zero input: the bias comes straight through.
        let zeros = Tensor::filled(1, 4, 1, 1, QNum::ZERO);
        let bias: Vec<QAcc> = [0.25, -0.5, 3.0, 0.0]
            .iter()
            .map(|&b| QAcc::from_qnum(QNum::quantize(b)))
            .collect();
        let out = fully_connected(
            &zeros,
            &identity,
            4,
            4,
            Some(&bias),
            &Multiplier::Exact,
            &mut sat,
        )
        .unwrap();
        let got: Vec<f64> = out.data().iter().map(|q| q.to_real()).collect();
        assert_eq!(got, vec![0.25, -0.5, 3.0, 0.0]);
    }

    #[test]
    fn batchnorm_examples() {
        let bn = BnDesc {
            channels: 1,
            epsilon: 1e-12,
            mean: vec![0.0],
            variance: vec![1.0],
            gamma: vec![1.0],
            beta: vec![0.0],
        };
        let input = qtensor(1, 1, 1, 3, &[-1.0, 0.5, 2.0]);
        let mut sat = 0;
        let out = batchnorm_infer(&input, &bn, &mut sat).unwrap();
        for (o, i) in out.data().iter().zip(input.data()) {
            assert!((o.to_real() - i.to_real()).abs() < 2e-5);
        }

        let bn2 = BnDesc {
            channels: 1,
            epsilon: 1e-12,
            mean: vec![2.0],
            variance: vec![4.0],
            gamma: vec![2.0],
            beta: vec![1.0],
        };
        let x = qtensor(1, 1, 1, 1, &[4.0]);
        let out = batchnorm_infer(&x, &bn2, &mut sat).unwrap();
        assert!((out.data()[0].to_real() - 3.0).abs() < 2e-5);

        // Constant input at the mean: beta everywhere.
        let x = qtensor(1, 1, 1, 2, &[2.0, 2.0]);
        let out = batchnorm_infer(&x, &bn2, &mut sat).unwrap();
        for o in out.data() {
            assert!((o.to_real() - 1.0).abs() < 2e-5);
        }
    }

    #[test]
    fn relu_pool_add_examples() {
        let input = qtensor(1, 1, 1, 2, &[-3.0, 2.5]);
        let r = relu(&input);
        assert_eq!(r.data()[0], QNum::ZERO);
        assert_eq!(r.data()[1].to_real(), 2.5);

        let square = qtensor(1, 1, 2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let pool = PoolDesc {
            kernel: (2, 2),
            stride: (2, 2),
            padding: (0, 0),
        };
        let m = maxpool(&square, &pool).unwrap();
        assert_eq!(m.data()[0].to_real(), 4.0);

        let mut sat = 0;
        let a = avgpool(&square, &pool, &mut sat).unwrap();
        assert_eq!(a.data()[0].to_real(), 2.5);

        let zeros = Tensor::filled(1, 1, 2, 2, QNum::ZERO);
        let sum = add(&square, &zeros, &mut sat).unwrap();
        assert_eq!(sum, square);
    }

    #[test]
    fn topk_examples() {
        let scores = qtensor(1, 3, 1, 1, &[0.1, 0.9, 0.5]);
        assert_eq!(topk(&scores, 1), vec![1]);

        let equal = qtensor(1, 3, 1, 1, &[0.5, 0.5, 0.5]);
        assert_eq!(topk(&equal, 2), vec![0, 1]);

        // Uniform positive scaling leaves the ranking alone.
        let scaled = qtensor(
            1,
            3,
            1,
            1,
            &[0.1 * 0.941, 0.9 * 0.941, 0.5 * 0.941],
        );
        assert_eq!(topk(&scaled, 3), topk(&scores, 3));
    }

    fn stack_graph() -> ModelGraph {
        // conv(power-of-two weights) -> relu, exercised through the executor.
        let weights = vec![0.5f32; 4 * 2 * 1 * 1];
        ModelGraph {
            name: "tiny".into(),
            input_edge: "x".into(),
            input_dims: (2, 3, 3),
            output_edge: "y".into(),
            nodes: vec![
                Node {
                    name: "c1".into(),
                    op: NodeOp::Conv(ConvDesc {
                        out_channels: 4,
                        in_channels: 2,
                        kernel: (1, 1),
                        stride: (1, 1),
                        padding: (0, 0),
                        groups: 1,
                        weights,
                        bias: None,
                    }),
                    inputs: vec!["x".into()],
                    output: "h".into(),
                    multiplier: None,
                },
                Node {
                    name: "r1".into(),
                    op: NodeOp::Relu,
                    inputs: vec!["h".into()],
                    output: "y".into(),
                    multiplier: None,
                },
            ],
            metadata: BTreeMap::new(),
        }
    }

    #[test]
    fn log_multipliers_exact_on_power_of_two_models() {
        let graph = stack_graph();
        let input: Vec<f64> = (0..18).map(|i| 2f64.powi(i % 5 - 2)).collect();
        let t = qtensor(1, 2, 3, 3, &input);
        let exact = Executor::<QNum>::bind(&graph, &MultiplierSpec::exact()).unwrap();
        let mitchw =
            Executor::<QNum>::bind(&graph, &"mitchw:w=6:sign=c1".parse().unwrap()).unwrap();
        let a = exact.forward(&t).unwrap();
        let b = mitchw.forward(&t).unwrap();
        assert_eq!(a.output, b.output);
    }

    #[test]
    fn grouped_conv_decomposes_into_slices() {
        // conv with g groups equals g independent convs on channel slices.
        let mut sat = 0;
        let reals: Vec<f64> = (0..32).map(|i| (i as f64) * 0.25 - 3.0).collect();
        let input = qtensor(1, 4, 4, 2, &reals[..32]);
        let wreal: Vec<f64> = (0..8).map(|i| 0.125 * (i as f64 + 1.0)).collect();
        let weights = qtensor(4, 1, 2, 1, &wreal);
        let geom = ConvGeom {
            out_channels: 4,
            in_channels: 4,
            kernel: (2, 1),
            stride: (1, 1),
            padding: (0, 0),
            groups: 4,
        };
        let mitchell = Multiplier::Mitchell { sign: SignMode::ExactSign };
        let grouped = conv2d(&input, &geom, &weights, None, &mitchell, &mut sat).unwrap();

        for g in 0..4 {
            let slice_in: Vec<QNum> = (0..8).map(|i| input.data()[g * 8 + i]).collect();
            let slice_t = Tensor::new(1, 1, 4, 2, slice_in).unwrap();
            let slice_w: Vec<QNum> = (0..2).map(|i| weights.data()[g * 2 + i]).collect();
            let slice_wt = Tensor::new(1, 1, 2, 1, slice_w).unwrap();
            let single = ConvGeom {
                out_channels: 1,
                in_channels: 1,
                kernel: (2, 1),
                stride: (1, 1),
                padding: (0, 0),
                groups: 1,
            };
            let out = conv2d(&slice_t, &single, &slice_wt, None, &mitchell, &mut sat).unwrap();
            for (i, &v) in out.data().iter().enumerate() {
                assert_eq!(v, grouped.data()[g * 6 + i], "group {g} element {i}");
            }
        }
    }

    #[test]
    fn forward_is_deterministic_across_thread_counts() {
        let graph = stack_graph();
        let reals: Vec<f64> = (0..18).map(|i| (i as f64 * 0.37).sin() * 2.0).collect();
        let t = qtensor(1, 2, 3, 3, &reals);
        let spec: MultiplierSpec = "mitchw:w=6:sign=c1".parse().unwrap();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                let exec = Executor::<QNum>::bind(&graph, &spec).unwrap();
                exec.forward(&t).unwrap().output
            })
        };
        assert_eq!(run(1), run(4));
    }
}
