//! Greedy expected-free-energy frame selection on a sequence where only a
//! few frames carry class evidence, compared with uniform-stride sampling.

use uaai::efe::{default_budget, select_frames, uniform_stride, EfeMode};
use uaai::genmodel::ConfusionModel;
use uaai::numkit::{softmax_slice, Categorical, RngStream};

fn main() -> uaai::Result<()> {
    let (k, t, label) = (5, 24, 2);
    let informative = [3usize, 10, 17];
    let mut rng = RngStream::new(11, 0);

    let mut confusion = ConfusionModel::new(k, 1.0)?;
    for _ in 0..500 {
        let truth = rng.below(k);
        let pred = if rng.bernoulli(0.8) { truth } else { rng.below(k) };
        confusion.update(pred, truth)?;
    }

    let frames: Vec<Categorical> = (0..t)
        .map(|i| {
            let mut logits: Vec<f64> = (0..k).map(|_| 0.3 * rng.normal()).collect();
            if informative.contains(&i) {
                logits[label] += 3.0;
            }
            Categorical::new(softmax_slice(&logits))
        })
        .collect::<uaai::Result<_>>()?;

    let budget = default_budget(t);
    for (name, mode) in [("info_gain", EfeMode::info_gain()), ("label_target", EfeMode::label_target(label))] {
        let result = select_frames(&frames, &confusion, budget, &mode)?;
        let belief = result.final_belief().expect("budget > 0");
        println!(
            "{name:>12}: frames {:?}, p(label) = {:.3}",
            result.selected,
            belief.probs()[label]
        );
    }
    println!("{:>12}: frames {:?}", "stride", uniform_stride(t, budget));
    println!("informative frames: {informative:?}");
    Ok(())
}
