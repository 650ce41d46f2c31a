//! Beliefs over the hidden class, confusion-derived likelihood matrices,
//! Bayesian updating, and the variational free-energy training loss.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{entropy, kl_divergence, log_softmax_slice, softmax_slice, Categorical, PROB_FLOOR};

const ROW_TOLERANCE: f64 = 1e-9;

/// Minimum Bayes normalizer below which an observation is treated as impossible.
pub const MIN_NORMALIZER: f64 = 1e-12;

/// Categorical belief over the `K` hidden classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    pub dist: Categorical,
}

impl Belief {
    pub fn uniform(k: usize) -> Self {
        Self {
            dist: Categorical::uniform(k),
        }
    }

    pub fn new(dist: Categorical) -> Self {
        Self { dist }
    }

    pub fn probs(&self) -> &[f64] {
        self.dist.probs()
    }

    pub fn k(&self) -> usize {
        self.dist.k()
    }
}

/// Row-stochastic `A(i, j) = p(o = j | s = i)` for one candidate observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodMatrix {
    k: usize,
    a: Vec<f64>,
    pub source_action: usize,
    pub confidence: f64,
}

impl LikelihoodMatrix {
    /// Validates that `rows` is `K×K`, nonnegative, and row-stochastic.
    pub fn from_rows(rows: Vec<Vec<f64>>, source_action: usize, confidence: f64) -> Result<Self> {
        let k = rows.len();
        if k < 2 || rows.iter().any(|r| r.len() != k) {
            return Err(Error::shape("LikelihoodMatrix", format!("expected square K×K with K ≥ 2, got {k} rows")));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidInput(format!("row {i} has negative or non-finite entries")));
            }
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::InvalidInput(format!("row {i} sums to {s}")));
            }
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidInput(format!("confidence {confidence} outside [0, 1]")));
        }
        Ok(Self {
            k,
            a: rows.into_iter().flatten().collect(),
            source_action,
            confidence,
        })
    }

    pub fn uniform(k: usize) -> Self {
        Self {
            k,
            a: vec![1.0 / k as f64; k * k],
            source_action: 0,
            confidence: 0.0,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, state: usize, observation: usize) -> f64 {
        self.a[state * self.k + observation]
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.a[state * self.k..(state + 1) * self.k]
    }

    pub fn column(&self, observation: usize) -> Vec<f64> {
        (0..self.k).map(|i| self.get(i, observation)).collect()
    }

    pub fn max_row_error(&self) -> f64 {
        (0..self.k)
            .map(|i| (self.row(i).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Laplace-smoothed running confusion counts `counts(true, predicted)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionModel {
    k: usize,
    counts: Vec<f64>,
    smoothing: f64,
}

impl ConfusionModel {
    pub fn new(k: usize, smoothing: f64) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidInput(format!("confusion model needs K ≥ 2, got {k}")));
        }
        if !(smoothing > 0.0 && smoothing.is_finite()) {
            return Err(Error::InvalidInput(format!("smoothing must be positive, got {smoothing}")));
        }
        Ok(Self {
            k,
            counts: vec![0.0; k * k],
            smoothing,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    /// Records one classifier decision: `counts(true_class, predicted_class) += 1`.
    pub fn update(&mut self, predicted_class: usize, true_class: usize) -> Result<()> {
        if predicted_class >= self.k || true_class >= self.k {
            return Err(Error::InvalidInput(format!(
                "class indices ({predicted_class}, {true_class}) out of range for K = {}",
                self.k
            )));
        }
        self.counts[true_class * self.k + predicted_class] += 1.0;
        Ok(())
    }

    /// `C(i, j) = (counts(i, j) + ε) / (Σ_j counts(i, j) + K ε)`.
    pub fn probability(&self, true_class: usize, predicted_class: usize) -> f64 {
        let row = &self.counts[true_class * self.k..(true_class + 1) * self.k];
        let total: f64 = row.iter().sum();
        (row[predicted_class] + self.smoothing) / (total + self.k as f64 * self.smoothing)
    }

    pub fn row_stochastic(&self) -> Vec<Vec<f64>> {
        (0..self.k)
            .map(|i| (0..self.k).map(|j| self.probability(i, j)).collect())
            .collect()
    }

    /// CSV snapshot: header of class ids, then `K` rows of probabilities.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = (0..self.k).map(|j| j.to_string()).collect();
        writeln!(w, "{}", header.join(","))?;
        for row in self.row_stochastic() {
            let cells: Vec<String> = row.iter().map(|p| format!("{p}")).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Confidence `λ = 1 − H(softmax) / ln K` of one frame's class prediction.
pub fn frame_confidence(frame_softmax: &Categorical) -> f64 {
    (1.0 - entropy(frame_softmax) / (frame_softmax.k() as f64).ln()).clamp(0.0, 1.0)
}

/// Likelihood for observing a frame: the global confusion model tempered
/// toward the uniform matrix by the frame's confidence,
/// `A = λ C + (1 − λ) U`.
pub fn frame_likelihood(confusion: &ConfusionModel, frame_softmax: &Categorical, source_action: usize) -> Result<LikelihoodMatrix> {
    let k = confusion.k();
    if frame_softmax.k() != k {
        return Err(Error::shape(
            "frame_likelihood",
            format!("softmax over {} classes vs confusion over {k}", frame_softmax.k()),
        ));
    }
    let lambda = frame_confidence(frame_softmax);
    let u = 1.0 / k as f64;
    let mut a = Vec::with_capacity(k * k);
    for i in 0..k {
        let row: Vec<f64> = (0..k).map(|j| lambda * confusion.probability(i, j) + (1.0 - lambda) * u).collect();
        let s: f64 = row.iter().sum();
        a.extend(row.into_iter().map(|v| v / s));
    }
    Ok(LikelihoodMatrix {
        k,
        a,
        source_action,
        confidence: lambda,
    })
}

/// Posterior `belief_i · A(i, o) / Σ_j belief_j · A(j, o)`.
pub fn belief_update(belief: &Belief, likelihood: &LikelihoodMatrix, observed: usize) -> Result<Belief> {
    let k = belief.k();
    if likelihood.k() != k {
        return Err(Error::shape("belief_update", format!("belief over {k} vs likelihood over {}", likelihood.k())));
    }
    if observed >= k {
        return Err(Error::InvalidInput(format!("observation {observed} out of range for K = {k}")));
    }
    let joint: Vec<f64> = belief
        .probs()
        .iter()
        .enumerate()
        .map(|(i, &b)| b * likelihood.get(i, observed))
        .collect();
    let normalizer: f64 = joint.iter().sum();
    if !(normalizer > MIN_NORMALIZER) {
        return Err(Error::DegenerateObservation { observed, normalizer });
    }
    let posterior: Vec<f64> = joint.iter().map(|j| j / normalizer).collect();
    Ok(Belief::new(Categorical::from_weights(&posterior)?))
}

/// Weight on the complexity term and the prior it is measured against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VfeConfig {
    pub beta_kl: f64,
    pub prior: Belief,
}

impl VfeConfig {
    pub fn new(beta_kl: f64, prior: Belief) -> Result<Self> {
        if !(beta_kl >= 0.0 && beta_kl.is_finite()) {
            return Err(Error::InvalidInput(format!("beta_kl must be ≥ 0, got {beta_kl}")));
        }
        Ok(Self { beta_kl, prior })
    }

    pub fn uniform_prior(k: usize, beta_kl: f64) -> Result<Self> {
        Self::new(beta_kl, Belief::uniform(k))
    }
}

/// `−ln q(label) + β · KL(q ‖ prior)` for a posterior `q`.
pub fn vfe_loss(posterior: &Categorical, label: usize, cfg: &VfeConfig) -> Result<f64> {
    if label >= posterior.k() {
        return Err(Error::InvalidInput(format!("label {label} out of range for K = {}", posterior.k())));
    }
    let accuracy = -posterior.probs()[label].max(PROB_FLOOR).ln();
    let complexity = if cfg.beta_kl > 0.0 {
        kl_divergence(posterior, &cfg.prior.dist)?
    } else {
        0.0
    };
    Ok(accuracy + cfg.beta_kl * complexity)
}

/// [`vfe_loss`] on `softmax(logits)` together with its gradient in the logits.
pub fn vfe_loss_with_grad(logits: &[f64], label: usize, cfg: &VfeConfig) -> Result<(f64, Vec<f64>)> {
    let k = logits.len();
    if cfg.prior.k() != k {
        return Err(Error::shape("vfe_loss", format!("{k} logits vs prior over {}", cfg.prior.k())));
    }
    if label >= k {
        return Err(Error::InvalidInput(format!("label {label} out of range for K = {k}")));
    }
    let log_p = log_softmax_slice(logits);
    let p = softmax_slice(logits);
    let log_prior: Vec<f64> = cfg.prior.probs().iter().map(|q| q.max(PROB_FLOOR).ln()).collect();
    let kl: f64 = p.iter().zip(&log_p).zip(&log_prior).map(|((pi, lp), lq)| pi * (lp - lq)).sum();
    let loss = -log_p[label] + cfg.beta_kl * kl;
    // d KL / d z_k = p_k (log p_k − log prior_k − KL)
    let grad = (0..k)
        .map(|j| {
            let ce = p[j] - if j == label { 1.0 } else { 0.0 };
            ce + cfg.beta_kl * p[j] * (log_p[j] - log_prior[j] - kl)
        })
        .collect();
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learnkit::finite_difference_error;
    use crate::numkit::RngStream;
    use proptest::prelude::*;

    fn random_dist(k: usize, rng: &mut RngStream) -> Categorical {
        let w: Vec<f64> = (0..k).map(|_| rng.uniform() + 1e-3).collect();
        Categorical::from_weights(&w).unwrap()
    }

    fn random_likelihood(k: usize, rng: &mut RngStream) -> LikelihoodMatrix {
        let rows = (0..k).map(|_| random_dist(k, rng).probs().to_vec()).collect();
        LikelihoodMatrix::from_rows(rows, 0, 1.0).unwrap()
    }

    #[test]
    fn one_update_laplace_row() {
        let k = 5;
        let mut c = ConfusionModel::new(k, 1.0).unwrap();
        c.update(0, 0).unwrap();
        let row = &c.row_stochastic()[0];
        assert!((row[0] - 2.0 / (1.0 + k as f64)).abs() < 1e-15);
        for &v in &row[1..] {
            assert!((v - 1.0 / (1.0 + k as f64)).abs() < 1e-15);
        }
    }

    #[test]
    fn fresh_confusion_is_uniform() {
        let c = ConfusionModel::new(4, 1.0).unwrap();
        for row in c.row_stochastic() {
            assert!(row.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        }
    }

    #[test]
    fn confusion_rejects_bad_indices() {
        let mut c = ConfusionModel::new(3, 1.0).unwrap();
        assert!(matches!(c.update(3, 0), Err(Error::InvalidInput(_))));
        assert!(c.update(0, 7).is_err());
        assert!(ConfusionModel::new(1, 1.0).is_err());
        assert!(ConfusionModel::new(3, 0.0).is_err());
    }

    #[test]
    fn confusion_converges_to_sampling_matrix() {
        let truth = [[0.7, 0.2, 0.1], [0.1, 0.8, 0.1], [0.25, 0.25, 0.5]];
        let mut rng = RngStream::new(31, 0);
        let mut c = ConfusionModel::new(3, 1.0).unwrap();
        for n in 0..1000 {
            let i = n % 3;
            let u = rng.uniform();
            let mut acc = 0.0;
            let mut j = 2;
            for (cand, &p) in truth[i].iter().enumerate() {
                acc += p;
                if u < acc {
                    j = cand;
                    break;
                }
            }
            c.update(j, i).unwrap();
        }
        for (est, want) in c.row_stochastic().iter().zip(truth) {
            for (a, b) in est.iter().zip(want) {
                assert!((a - b).abs() < 0.05, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn confusion_csv_layout() {
        let mut c = ConfusionModel::new(3, 1.0).unwrap();
        c.update(1, 1).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "0,1,2");
        assert_eq!(lines.len(), 4);
        let row1: f64 = lines[2].split(',').map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((row1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn likelihood_limits() {
        let mut c = ConfusionModel::new(4, 1.0).unwrap();
        for _ in 0..10 {
            c.update(2, 2).unwrap();
            c.update(1, 0).unwrap();
        }
        let flat = frame_likelihood(&c, &Categorical::uniform(4), 3).unwrap();
        assert_eq!(flat.confidence, 0.0);
        for i in 0..4 {
            assert!(flat.row(i).iter().all(|&v| (v - 0.25).abs() < 1e-15));
        }
        let sharp = frame_likelihood(&c, &Categorical::one_hot(4, 1), 0).unwrap();
        assert_eq!(sharp.confidence, 1.0);
        let expect = c.row_stochastic();
        for i in 0..4 {
            for j in 0..4 {
                assert!((sharp.get(i, j) - expect[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn likelihood_two_class_mixture() {
        // λ = 1 − H(0.9, 0.1) / ln 2, evaluated at 40 digits.
        let lambda = 0.531_004_406_410_718_778_746_410_669_6;
        let mut c = ConfusionModel::new(2, 1.0).unwrap();
        for _ in 0..3 {
            c.update(0, 0).unwrap();
        }
        c.update(0, 1).unwrap();
        let a = frame_likelihood(&c, &Categorical::new(vec![0.9, 0.1]).unwrap(), 0).unwrap();
        assert!((a.confidence - lambda).abs() < 1e-15);
        assert!((a.confidence - 0.5310).abs() < 1e-4);
        // C row 0 = [4/5, 1/5], row 1 = [2/3, 1/3].
        let c_rows = [[0.8, 0.2], [2.0 / 3.0, 1.0 / 3.0]];
        for i in 0..2 {
            for j in 0..2 {
                let want = lambda * c_rows[i][j] + (1.0 - lambda) * 0.5;
                assert!((a.get(i, j) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn uniform_prior_cancels() {
        let a = LikelihoodMatrix::from_rows(vec![vec![0.8, 0.2], vec![0.2, 0.8]], 0, 1.0).unwrap();
        let post = belief_update(&Belief::uniform(2), &a, 0).unwrap();
        assert!((post.probs()[0] - 0.8).abs() < 1e-15);
        assert!((post.probs()[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn uniform_likelihood_keeps_prior() {
        let prior = Belief::new(Categorical::new(vec![0.1, 0.6, 0.3]).unwrap());
        for o in 0..3 {
            let post = belief_update(&prior, &LikelihoodMatrix::uniform(3), o).unwrap();
            for (a, b) in post.probs().iter().zip(prior.probs()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn degenerate_observation_is_reported() {
        let a = LikelihoodMatrix::from_rows(vec![vec![1.0, 0.0], vec![1.0, 0.0]], 0, 1.0).unwrap();
        let err = belief_update(&Belief::uniform(2), &a, 1).unwrap_err();
        assert!(matches!(err, Error::DegenerateObservation { observed: 1, .. }));
    }

    /// Joint Bayes by enumeration: p(s | o1..on) ∝ p(s) Π_t A_t(s, o_t).
    fn joint_posterior(prior: &[f64], evidence: &[(&LikelihoodMatrix, usize)]) -> Vec<f64> {
        let k = prior.len();
        let mut joint = vec![0.0; k];
        for (s, j) in joint.iter_mut().enumerate() {
            let mut p = prior[s];
            for (a, o) in evidence {
                p *= a.row(s)[*o];
            }
            *j = p;
        }
        let z: f64 = joint.iter().sum();
        joint.iter().map(|v| v / z).collect()
    }

    #[test]
    fn sequential_updates_match_joint_enumeration() {
        let mut rng = RngStream::new(41, 0);
        for _ in 0..200 {
            let prior = Belief::new(random_dist(4, &mut rng));
            let mats: Vec<LikelihoodMatrix> = (0..3).map(|_| random_likelihood(4, &mut rng)).collect();
            let obs: Vec<usize> = (0..3).map(|_| rng.below(4)).collect();
            let mut b = prior.clone();
            for (a, &o) in mats.iter().zip(&obs) {
                b = belief_update(&b, a, o).unwrap();
            }
            let evidence: Vec<(&LikelihoodMatrix, usize)> = mats.iter().zip(obs.iter().copied()).collect();
            let want = joint_posterior(prior.probs(), &evidence);
            for (x, y) in b.probs().iter().zip(&want) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn commuting_evidence_is_order_invariant() {
        let mut rng = RngStream::new(42, 0);
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        for _ in 0..100 {
            let a = random_likelihood(4, &mut rng);
            let obs = [rng.below(4), rng.below(4), rng.below(4)];
            let mut finals = Vec::new();
            for p in perms {
                let mut b = Belief::uniform(4);
                for idx in p {
                    b = belief_update(&b, &a, obs[idx]).unwrap();
                }
                finals.push(b);
            }
            for f in &finals[1..] {
                for (x, y) in f.probs().iter().zip(finals[0].probs()) {
                    assert!((x - y).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn vfe_known_values() {
        let cfg0 = VfeConfig::uniform_prior(17, 0.0).unwrap();
        assert_eq!(vfe_loss(&Categorical::one_hot(17, 4), 4, &cfg0).unwrap(), 0.0);
        let ln17 = 2.833_213_344_056_216_080_249_534_617_9;
        assert!((vfe_loss(&Categorical::uniform(17), 2, &cfg0).unwrap() - ln17).abs() < 1e-12);
        for beta in [0.0, 0.01, 1.0, 10.0] {
            let cfg = VfeConfig::uniform_prior(17, beta).unwrap();
            assert!((vfe_loss(&Categorical::uniform(17), 0, &cfg).unwrap() - 17f64.ln()).abs() < 1e-12);
        }
        assert!(VfeConfig::uniform_prior(3, -1.0).is_err());
    }

    #[test]
    fn vfe_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(43, 0);
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let k = 2 + rng.below(8);
            let cfg = VfeConfig::uniform_prior(k, rng.uniform()).unwrap();
            let z: Vec<f64> = (0..k).map(|_| 2.0 * rng.normal()).collect();
            let label = rng.below(k);
            let (loss, grad) = vfe_loss_with_grad(&z, label, &cfg).unwrap();
            let direct = vfe_loss(&Categorical::from_weights(&softmax_slice(&z)).unwrap(), label, &cfg).unwrap();
            assert!((loss - direct).abs() < 1e-9);
            worst = worst.max(finite_difference_error(
                |x| Some(vfe_loss_with_grad(x, label, &cfg).unwrap().0),
                &z,
                &grad,
                1e-5,
            ));
        }
        assert!(worst < 1e-4, "{worst}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn likelihood_rows_stochastic_and_confidence_monotone(
            w1 in prop::collection::vec(1e-6f64..1.0, 5),
            w2 in prop::collection::vec(1e-6f64..1.0, 5),
            counts in prop::collection::vec((0usize..5, 0usize..5), 0..40),
        ) {
            let mut c = ConfusionModel::new(5, 1.0).unwrap();
            for (p, t) in counts {
                c.update(p, t).unwrap();
            }
            let s1 = Categorical::from_weights(&w1).unwrap();
            let s2 = Categorical::from_weights(&w2).unwrap();
            let a1 = frame_likelihood(&c, &s1, 0).unwrap();
            prop_assert!(a1.max_row_error() < 1e-9);
            prop_assert!((0..5).all(|i| a1.row(i).iter().all(|&v| v >= 0.0)));
            let (h1, h2) = (entropy(&s1), entropy(&s2));
            let (l1, l2) = (frame_confidence(&s1), frame_confidence(&s2));
            if h1 < h2 {
                prop_assert!(l1 >= l2);
            }
        }

        #[test]
        fn belief_update_stays_on_simplex(
            b in prop::collection::vec(1e-6f64..1.0, 4),
            rows in prop::collection::vec(prop::collection::vec(1e-6f64..1.0, 4), 4),
            o in 0usize..4,
        ) {
            let belief = Belief::new(Categorical::from_weights(&b).unwrap());
            let rows = rows.iter().map(|r| Categorical::from_weights(r).unwrap().probs().to_vec()).collect();
            let a = LikelihoodMatrix::from_rows(rows, 0, 1.0).unwrap();
            let post = belief_update(&belief, &a, o).unwrap();
            prop_assert!((post.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(post.probs().iter().all(|&p| p >= 0.0));
        }

        #[test]
        fn vfe_nonnegative_under_uniform_prior(
            w in prop::collection::vec(0.0f64..1.0, 6),
            label in 0usize..6,
            beta in 0.0f64..5.0,
        ) {
            prop_assume!(w.iter().sum::<f64>() > 0.0);
            let q = Categorical::from_weights(&w).unwrap();
            let cfg = VfeConfig::uniform_prior(6, beta).unwrap();
            prop_assert!(vfe_loss(&q, label, &cfg).unwrap() >= 0.0);
        }
    }
}
