//! Builds a small conv network, runs one forward/backward pass, and checks
//! every analytic gradient against central finite differences.

use uaai::learnkit::{grad_check, init_params, LayerSpec, Mode, Network};
use uaai::numkit::{log_softmax_slice, softmax_slice, NumArray, RngStream};

fn main() -> uaai::Result<()> {
    let net = Network::new(
        "demo",
        vec![1, 6, 6],
        vec![
            LayerSpec::conv_same(1, 3, 3),
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Linear { inputs: 108, outputs: 4 },
        ],
    )?;
    let mut rng = RngStream::new(7, 0);
    let params = init_params::<f64>(&net, &mut rng);
    let input = NumArray::new(vec![2, 1, 6, 6], (0..72).map(|_| rng.normal()).collect())?;
    let labels = [1usize, 3];

    let cross_entropy = |logits: &NumArray<f64>| {
        let mut loss = 0.0;
        let mut grad = Vec::new();
        for (row, &y) in logits.data().chunks(4).zip(&labels) {
            loss -= log_softmax_slice(row)[y];
            let p = softmax_slice(row);
            grad.extend((0..4).map(|k| p[k] - f64::from(u8::from(k == y))));
        }
        (loss, NumArray::new(logits.shape().to_vec(), grad).expect("same shape"))
    };

    let worst = grad_check(&net, &params, &input, Mode::Train, &rng, cross_entropy, 1e-6)?;
    println!("parameters: {}", params.num_scalars());
    println!("worst relative error: {worst:.3e}");
    Ok(())
}
