//! Applies the spatial attention head to a feature map with one strong
//! region, then scores every location by how much information the
//! sequence belief loses when that location is masked out.

use uaai::efe::{attention_head, frame_info_gain, location_efe_map, spatial_attention_untraced, spatial_efe};
use uaai::genmodel::ConfusionModel;
use uaai::learnkit::{init_params, Mode};
use uaai::numkit::{softmax_slice, Categorical, NumArray, RngStream};

fn main() -> uaai::Result<()> {
    let (c, h, w, k) = (4, 6, 6, 3);
    let mut rng = RngStream::new(5, 0);
    let head = attention_head("attention", c, h, w)?;
    let params = init_params::<f64>(&head, &mut rng);

    let mut features = NumArray::zeros(vec![1, c, h, w]);
    for ch in 0..c {
        for (y, x) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
            features.data_mut()[(ch * h + y) * w + x] = 3.0;
        }
    }
    let (mask, _) = spatial_attention_untraced(&head, &params, &features, Mode::Infer, &mut rng)?;
    let m = mask.sample(0)?;
    println!("attention mask:");
    for row in m.data().chunks(w) {
        println!("  {}", row.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(" "));
    }

    // Per-location evidence: each location contributes its feature energy to
    // the logit of class 0.
    let mut confusion = ConfusionModel::new(k, 1.0)?;
    for i in 0..60 {
        confusion.update(i % k, i % k)?;
    }
    let energy: Vec<f64> = (0..h * w).map(|i| (0..c).map(|ch| features.data()[ch * h * w + i]).sum()).collect();
    let g = location_efe_map(h, w, |masked| {
        let total: f64 = energy.iter().enumerate().filter(|(i, _)| Some(*i) != masked).map(|(_, e)| e).sum();
        let frame = Categorical::new(softmax_slice(&[total / 20.0, 0.0, 0.0]))?;
        Ok(frame_info_gain(&confusion, &frame)?)
    })?;
    println!("change in information gain when each location is masked:");
    for row in g.data().chunks(w) {
        println!("  {}", row.iter().map(|v| format!("{v:+.3}")).collect::<Vec<_>>().join(" "));
    }
    println!("mask-weighted score: {:+.4}", spatial_efe(&g, &m)?);
    Ok(())
}
