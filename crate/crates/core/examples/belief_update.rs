//! Accumulates a confusion model from simulated classifier decisions, turns
//! frame-level softmaxes into likelihood matrices, and updates a belief over
//! the hidden class one observation at a time.

use uaai::genmodel::{belief_update, frame_likelihood, vfe_loss, Belief, ConfusionModel, VfeConfig};
use uaai::numkit::{Categorical, RngStream};

fn main() -> uaai::Result<()> {
    let k = 4;
    let mut rng = RngStream::new(3, 0);
    let mut confusion = ConfusionModel::new(k, 1.0)?;
    // A classifier that is right 70% of the time.
    for _ in 0..2000 {
        let truth = rng.below(k);
        let pred = if rng.bernoulli(0.7) { truth } else { rng.below(k) };
        confusion.update(pred, truth)?;
    }
    println!("p(pred = true class): {:.3}", confusion.probability(0, 0));

    let frames = [
        Categorical::new(vec![0.85, 0.05, 0.05, 0.05])?,
        Categorical::new(vec![0.3, 0.3, 0.2, 0.2])?,
        Categorical::new(vec![0.7, 0.1, 0.1, 0.1])?,
    ];
    let mut belief = Belief::uniform(k);
    for (t, frame) in frames.iter().enumerate() {
        let a = frame_likelihood(&confusion, frame, t)?;
        belief = belief_update(&belief, &a, frame.argmax())?;
        println!("after frame {t} (confidence {:.2}): {:?}", a.confidence, rounded(belief.probs()));
    }

    let vfe = VfeConfig::uniform_prior(k, 0.01)?;
    println!("vfe loss of the final belief for label 0: {:.4}", vfe_loss(&belief.dist, 0, &vfe)?);
    Ok(())
}

fn rounded(p: &[f64]) -> Vec<f64> {
    p.iter().map(|v| (v * 1000.0).round() / 1000.0).collect()
}
