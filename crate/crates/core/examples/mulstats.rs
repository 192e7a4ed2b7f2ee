use approxmac_core::errstat::channel_variance_report;
use approxmac_core::modelio::{adjust_bn, load_model, load_raw_tensors};
use approxmac_core::mulkit::MultiplierSpec;
use approxmac_core::nncore::Executor;
use approxmac_core::qformat::QNum;
use std::path::Path;

fn main() {
    let spec: MultiplierSpec = "mitchw:w=6:sign=c1".parse().unwrap();
    let dir = Path::new("fixtures/convpair");
    let inputs = load_raw_tensors(&dir.join("inputs.axt")).unwrap();
    for name in ["conventional", "depthwise"] {
        let graph = load_model(&dir.join(format!("{name}.json"))).unwrap();
        let reports = channel_variance_report::<QNum>(&graph, &spec, &inputs).unwrap();
        let r = &reports[0];
        println!(
            "{name:12} gm_err {:.4e} gm_out {:.4e} pct {:.2}% degenerate {}",
            r.gm_error_variance, r.gm_output_variance, r.pct.unwrap(), r.degenerate
        );
    }

    let rdir = Path::new("fixtures/residual");
    let mut graph = load_model(&rdir.join("manifest.json")).unwrap();
    println!("residual: {} nodes", graph.nodes.len());
    let exec = Executor::<QNum>::bind(&graph, &spec).unwrap();
    let input = approxmac_core::nncore::Tensor::filled(1, 8, 8, 8, QNum::quantize(0.25));
    let out = exec.forward(&exec.ingest(&input.map(|q| q.to_real() as f32))).unwrap();
    println!("residual logits: {:?}", out.output.data().iter().map(|q| q.to_real()).collect::<Vec<_>>());
    let n = adjust_bn(&mut graph, -0.059);
    println!("residual BN nodes adjusted: {n}");
}
