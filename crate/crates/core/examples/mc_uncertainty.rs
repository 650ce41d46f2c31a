//! Monte Carlo dropout uncertainty for a small classifier and the sample
//! weights derived from it under both weight rules.

use uaai::learnkit::{init_params, LayerSpec, Network};
use uaai::numkit::{NumArray, RngStream};
use uaai::uncertainty::{mc_uncertainty, weight_with_rule, McConfig, WeightRule, MAX_VARIANCE};

fn main() -> uaai::Result<()> {
    let net = Network::new(
        "classifier",
        vec![8],
        vec![
            LayerSpec::Linear { inputs: 8, outputs: 32 },
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: 0.3 },
            LayerSpec::Linear { inputs: 32, outputs: 5 },
        ],
    )?;
    let mut rng = RngStream::new(21, 0);
    let params = init_params::<f32>(&net, &mut rng);
    // Inputs of growing magnitude push the logits further apart.
    let n = 6;
    let input = NumArray::new(
        vec![n, 8],
        (0..n * 8).map(|i| (rng.normal() * (1 + i / 8) as f64) as f32).collect(),
    )?;

    for passes in [2, 5, 8] {
        let cfg = McConfig { passes, dropout_rate: 0.3 };
        let scores = mc_uncertainty(&net, &params, &input, &cfg, &RngStream::new(1, 0))?;
        println!("passes = {passes}");
        for (i, s) in scores.iter().enumerate() {
            let exp = weight_with_rule(s.u, WeightRule::ExpBeta, 10.0, 0.1)?;
            let lin = weight_with_rule(s.u, WeightRule::OneMinusU, 10.0, 0.1)?;
            println!("  sample {i}: u = {:.5} (max {MAX_VARIANCE}), w exp = {:.4}, w 1-u = {:.4}", s.u, exp.w, lin.w);
        }
    }
    Ok(())
}
