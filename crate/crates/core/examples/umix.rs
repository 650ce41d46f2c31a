//! Mixes two frame tensors with a Beta-drawn coefficient and evaluates the
//! uncertainty-weighted mixup loss and its gradient.

use uaai::numkit::{NumArray, RngStream};
use uaai::umix::{mix_samples, sample_lambda, umix_loss_with_grad};
use uaai::uncertainty::weight_from_uncertainty;

fn main() -> uaai::Result<()> {
    let mut rng = RngStream::new(4, 0);
    let x_i = NumArray::<f32>::filled(vec![1, 4, 4], 1.0);
    let x_j = NumArray::<f32>::filled(vec![1, 4, 4], -1.0);
    let lambda = sample_lambda(0.4, &mut rng)?;
    // A confident first sample and an uncertain second one.
    let w_i = weight_from_uncertainty(0.01, 10.0, 0.1)?.w;
    let w_j = weight_from_uncertainty(0.2, 10.0, 0.1)?.w;
    let mixed = mix_samples(&x_i, 2, &x_j, 5, lambda)?.with_weights(w_i, w_j);
    println!("lambda = {lambda:.4}, first pixel = {:.4}", mixed.x_mixed.data()[0]);
    println!("soft label = {:?}", mixed.soft_label(6));

    let logits = [0.1, 0.0, 2.0, 0.0, 0.0, 1.0];
    let (loss, grad) = umix_loss_with_grad(&logits, &mixed)?;
    println!("weights ({w_i:.3}, {w_j:.3}), loss = {loss:.4}");
    println!("gradient = {:?}", grad.iter().map(|g| (g * 1e4).round() / 1e4).collect::<Vec<_>>());
    Ok(())
}
