//! Acceptance run: prints one PASS/FAIL line per criterion.
//!
//! `UAAI_ACCEPTANCE_ONLY=1,2,8` restricts the run to the listed criteria.
//! `UAAI_ACCEPTANCE_STRICT=1` turns any FAIL into a non-zero exit.
//! `UAAI_ACCEPTANCE_OUT=<dir>` keeps the training runs for inspection.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config as RunnerConfig, TestRunner};

use uaai::efe::{attention_head, expected_info_gain, select_frames, spatial_attention_backward, spatial_attention_forward, EfeMode};
use uaai::genmodel::{belief_update, frame_likelihood, vfe_loss_with_grad, Belief, ConfusionModel, LikelihoodMatrix, VfeConfig};
use uaai::learnkit::{finite_difference_error, grad_check, init_params, Mode};
use uaai::numkit::{entropy, kl_divergence, sample_beta, softmax_slice, Categorical, NumArray, RngStream};
use uaai::pipeline::{
    ablate, evaluate, evaluate_with, train, Checkpoint, MetricsRow, Model, ModelConfig, SelectorMode, TrainConfig,
    TrainOutcome,
};
use uaai::synthdata::{generate_dataset, read_dataset, read_dataset_from, write_dataset, write_dataset_to, Dataset, GeneratorConfig};
use uaai::umix::{mix_samples, umix_loss, umix_loss_with_grad, MixedSample};
use uaai::uncertainty::{weight_from_uncertainty, UncertaintyScore, MAX_VARIANCE};
use uaai::Error;

const SEEDS: [u64; 3] = [1, 2, 3];
const GRAD_TOLERANCE: f64 = 1e-4;
const GRAD_INSTANCES: u64 = 20;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

/// Default benchmark runs shared by several criteria.
#[derive(Default)]
struct Shared {
    ablation: Option<BTreeMap<(String, u64), f64>>,
    full: Vec<TrainOutcome>,
    data: Option<Dataset>,
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("UAAI_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|c| c.trim().parse().ok()).collect());
    let strict = std::env::var("UAAI_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let wanted = |n: usize| only.as_ref().map_or(true, |o| o.contains(&n));

    let mut shared = Shared::default();
    let mut failures = 0;
    let criteria: [(usize, &str, fn(&mut Shared) -> Verdict); 9] = [
        (1, "math-core property suite", criterion_1),
        (2, "gradient fidelity", criterion_2),
        (3, "selector and belief oracles", criterion_3),
        (4, "selection usefulness", criterion_4),
        (5, "umix noise robustness", criterion_5),
        (6, "ablation ordering", criterion_6),
        (7, "MC cost scaling", criterion_7),
        (8, "determinism and persistence", criterion_8),
        (9, "convergence shape", criterion_9),
    ];
    for (n, name, run) in criteria {
        if !wanted(n) {
            continue;
        }
        let start = Instant::now();
        let verdict = run(&mut shared);
        let status = if verdict.pass { "PASS" } else { "FAIL" };
        failures += usize::from(!verdict.pass);
        println!(
            "criterion {n} [{name}]: {status} ({}; {:.1}s)",
            verdict.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if strict && failures > 0 {
        std::process::exit(1);
    }
}

fn keep_dir(name: &str) -> Option<PathBuf> {
    std::env::var("UAAI_ACCEPTANCE_OUT").ok().map(|d| PathBuf::from(d).join(name))
}

fn default_data(shared: &mut Shared) -> &Dataset {
    shared
        .data
        .get_or_insert_with(|| generate_dataset(&GeneratorConfig::default()).expect("default generator config"))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

// ---------------------------------------------------------------------------
// 1. Math-core properties

fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, k).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    })
}

fn confusion_from(counts: &[(usize, usize)], k: usize) -> ConfusionModel {
    let mut c = ConfusionModel::new(k, 1.0).unwrap();
    for &(p, t) in counts {
        c.update(p % k, t % k).unwrap();
    }
    c
}

fn criterion_1(_: &mut Shared) -> Verdict {
    let start = Instant::now();
    let mut runner = TestRunner::new(RunnerConfig {
        cases: 256,
        failure_persistence: None,
        ..RunnerConfig::default()
    });
    let counts = prop::collection::vec((0usize..6, 0usize..6), 0..60);
    let mut checks: Vec<(&str, Result<(), String>)> = Vec::new();
    let mut check = |name, r: Result<(), String>| checks.push((name, r));

    check(
        "softmax is a shift-invariant distribution",
        runner
            .run(&(prop::collection::vec(-30.0f64..30.0, 2..10), -50.0f64..50.0), |(z, c)| {
                let p = softmax_slice(&z);
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(p.iter().all(|&x| x > 0.0));
                let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
                for (a, b) in p.iter().zip(softmax_slice(&shifted)) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );
    check(
        "KL is nonnegative and zero on equal arguments",
        runner
            .run(&(2usize..8).prop_flat_map(|k| (simplex(k), simplex(k))), |(p, q)| {
                let (p, q) = (Categorical::new(p).unwrap(), Categorical::new(q).unwrap());
                prop_assert!(kl_divergence(&p, &q).unwrap() >= -1e-15);
                prop_assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-15);
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );
    check(
        "entropy lies in [0, ln K]",
        runner
            .run(&(2usize..10).prop_flat_map(simplex), |p| {
                let k = p.len() as f64;
                let h = entropy(&Categorical::new(p).unwrap());
                prop_assert!((-1e-15..=k.ln() + 1e-12).contains(&h));
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );
    check(
        "Beta draws are interior and centred",
        runner
            .run(&(0.1f64..5.0, any::<u64>()), |(alpha, seed)| {
                let mut rng = RngStream::new(seed, 0);
                let draws: Vec<f64> = (0..400).map(|_| sample_beta(alpha, &mut rng).unwrap()).collect();
                prop_assert!(draws.iter().all(|&x| x > 0.0 && x < 1.0));
                // Var = 1 / (4 (2 alpha + 1)); 6 standard errors of the mean.
                let se = (1.0 / (4.0 * (2.0 * alpha + 1.0)) / 400.0).sqrt();
                prop_assert!((mean(&draws) - 0.5).abs() < 6.0 * se);
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );
    check(
        "likelihood rows are stochastic",
        runner
            .run(&((2usize..7).prop_flat_map(simplex), counts.clone()), |(s, c)| {
                let k = s.len();
                let a = frame_likelihood(&confusion_from(&c, k), &Categorical::new(s).unwrap(), 0).unwrap();
                for i in 0..k {
                    prop_assert!((a.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    prop_assert!(a.row(i).iter().all(|&v| v > 0.0));
                }
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );
    check(
        "Bayes updates stay on the simplex and commute",
        runner
            .run(
                &(2usize..6).prop_flat_map(|k| (simplex(k), simplex(k), simplex(k), simplex(k), 0..k, 0..k)),
                |(b, s1, s2, _, o1, o2)| {
                    let k = b.len();
                    let c = confusion_from(&[(0, 0), (1, 1), (1, 0)], k);
                    let belief = Belief::new(Categorical::new(b).unwrap());
                    let a1 = frame_likelihood(&c, &Categorical::new(s1).unwrap(), 0).unwrap();
                    let a2 = frame_likelihood(&c, &Categorical::new(s2).unwrap(), 1).unwrap();
                    let ab = belief_update(&belief_update(&belief, &a1, o1).unwrap(), &a2, o2).unwrap();
                    let ba = belief_update(&belief_update(&belief, &a2, o2).unwrap(), &a1, o1).unwrap();
                    prop_assert!((ab.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    prop_assert!(ab.probs().iter().all(|&p| p >= 0.0));
                    for (x, y) in ab.probs().iter().zip(ba.probs()) {
                        prop_assert!((x - y).abs() < 1e-12);
                    }
                    Ok(())
                },
            )
            .map_err(|e| e.to_string()),
    );
    check(
        "information gain is nonnegative and zero for uniform likelihoods",
        runner
            .run(&((2usize..7).prop_flat_map(|k| (simplex(k), simplex(k))), counts.clone()), |((b, s), c)| {
                let k = b.len();
                let belief = Belief::new(Categorical::new(b).unwrap());
                let a = frame_likelihood(&confusion_from(&c, k), &Categorical::new(s).unwrap(), 0).unwrap();
                prop_assert!(expected_info_gain(&belief, &a).unwrap() >= -1e-15);
                let u = LikelihoodMatrix::uniform(k);
                prop_assert!(expected_info_gain(&belief, &u).unwrap().abs() < 1e-15);
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );
    check(
        "MC variance is bounded by 1/4",
        runner
            .run(&(2usize..6).prop_flat_map(|k| prop::collection::vec(simplex(k), 1..10)), |passes| {
                let u = UncertaintyScore::from_passes(&passes).unwrap().u;
                prop_assert!((0.0..=MAX_VARIANCE + 1e-12).contains(&u));
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );
    check(
        "weights are monotone in uncertainty",
        runner
            .run(&(0.0f64..=0.25, 0.0f64..=0.25, 0.1f64..20.0, 0.01f64..1.0), |(u1, u2, alpha, beta)| {
                let (lo, hi) = if u1 < u2 { (u1, u2) } else { (u2, u1) };
                let (wl, wh) = (
                    weight_from_uncertainty(lo, alpha, beta).unwrap().w,
                    weight_from_uncertainty(hi, alpha, beta).unwrap().w,
                );
                prop_assert!(wl >= wh);
                if hi > lo {
                    prop_assert!(wl > wh);
                }
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );
    check(
        "mixup endpoints and swap symmetry",
        runner
            .run(
                &(prop::collection::vec(-5.0f64..5.0, 12), prop::collection::vec(-5.0f64..5.0, 12), 0.0f64..=1.0, 0usize..4, 0usize..4, prop::collection::vec(-4.0f64..4.0, 4), 0.1f64..2.0, 0.1f64..2.0),
                |(a, b, lambda, yi, yj, logits, wi, wj)| {
                    let xa = NumArray::new(vec![3, 4], a.clone()).unwrap();
                    let xb = NumArray::new(vec![3, 4], b.clone()).unwrap();
                    let at_one = mix_samples(&xa, yi, &xb, yj, 1.0).unwrap();
                    prop_assert_eq!(at_one.x_mixed.data(), xa.data());
                    let at_zero = mix_samples(&xa, yi, &xb, yj, 0.0).unwrap();
                    prop_assert_eq!(at_zero.x_mixed.data(), xb.data());
                    let fwd = mix_samples(&xa, yi, &xb, yj, lambda).unwrap().with_weights(wi, wj);
                    let rev = mix_samples(&xb, yj, &xa, yi, 1.0 - lambda).unwrap().with_weights(wj, wi);
                    for (x, y) in fwd.x_mixed.data().iter().zip(rev.x_mixed.data()) {
                        prop_assert!((x - y).abs() < 1e-12);
                    }
                    let (lf, lr) = (umix_loss(&logits, &fwd).unwrap(), umix_loss(&logits, &rev).unwrap());
                    prop_assert!((lf - lr).abs() < 1e-12 * (1.0 + lf.abs()));
                    Ok(())
                },
            )
            .map_err(|e| e.to_string()),
    );

    let elapsed = start.elapsed().as_secs_f64();
    let failed: Vec<String> = checks
        .iter()
        .filter_map(|(n, r)| r.as_ref().err().map(|e| format!("{n}: {e}")))
        .collect();
    let pass = failed.is_empty() && elapsed < 30.0;
    let detail = if failed.is_empty() {
        format!("{} property groups x 256 cases, {elapsed:.1}s < 30s", checks.len())
    } else {
        failed.join("; ")
    };
    Verdict::new(pass, detail)
}

// ---------------------------------------------------------------------------
// 2. Gradient fidelity

fn criterion_2(_: &mut Shared) -> Verdict {
    let start = Instant::now();
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut record = |path: &'static str, e: f64| {
        let w = worst.entry(path).or_insert(0.0);
        *w = w.max(e);
    };
    let eps = 1e-5;
    let cfg = ModelConfig {
        channels: 3,
        embed: 7,
        hidden: 6,
        dropout: 0.3,
    };
    let (grid, k, frames, per_seq) = (6, 4, 6, 3);

    for seed in 0..GRAD_INSTANCES {
        let mut rng = RngStream::new(10_000 + seed, 0);
        let mode = if seed % 2 == 0 { Mode::Train } else { Mode::Infer };
        let x = NumArray::new(
            vec![frames, 1, grid, grid],
            (0..frames * grid * grid).map(|_| rng.normal()).collect(),
        )
        .unwrap();
        let labels: Vec<usize> = (0..frames / per_seq).map(|_| rng.below(k)).collect();

        // Encoder and classifier through the full sequence model, with and
        // without the attention head.
        for (path, spatial) in [("encoder", false), ("spatial attention (in model)", true)] {
            let model = Model::<f64>::new(&cfg, grid, k, spatial, &mut rng.child(1)).unwrap();
            let drop = rng.child(2);
            let (logits, trace) = model.forward_sequences(&x, per_seq, mode, &mut drop.clone()).unwrap();
            let pattern = trace.activation_pattern();
            let d = ce_grad(&logits, &labels);
            let grads = model.backward_sequences(trace, &d).unwrap();
            for (name, g) in grads.iter() {
                let mut probe = model.clone();
                let base = model.params.get(name).unwrap().data().to_vec();
                let e = finite_difference_error(
                    |theta| {
                        probe.params.get_mut(name).unwrap().data_mut().copy_from_slice(theta);
                        let (l, t) = probe.forward_sequences(&x, per_seq, mode, &mut drop.clone()).ok()?;
                        (t.activation_pattern() == pattern).then(|| ce_loss(&l, &labels))
                    },
                    &base,
                    g.data(),
                    eps,
                );
                let which = if name.starts_with("classifier") { "classifier" } else { path };
                record(which, e);
            }
        }

        // Attention head on its own, including the feature-map gradient.
        let (c, h, w) = (3, 5, 5);
        let head = attention_head("attention", c, h, w).unwrap();
        let params = init_params::<f64>(&head, &mut rng.child(3));
        let feats = NumArray::new(vec![2, c, h, w], (0..2 * c * h * w).map(|_| rng.normal()).collect()).unwrap();
        let weights: Vec<f64> = (0..feats.len()).map(|_| rng.normal()).collect();
        let objective = |out: &NumArray<f64>| out.data().iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>();
        let (_, _, trace) = spatial_attention_forward(&head, &params, &feats, Mode::Infer, &mut rng.clone()).unwrap();
        let pattern = trace.activation_pattern();
        let upstream = NumArray::new(feats.shape().to_vec(), weights.clone()).unwrap();
        let (pg, fg) = spatial_attention_backward(&head, &params, trace, &upstream).unwrap();
        for (name, g) in pg.iter() {
            let mut probe = params.clone();
            let base = params.get(name).unwrap().data().to_vec();
            record(
                "spatial attention (head)",
                finite_difference_error(
                    |theta| {
                        probe.get_mut(name).unwrap().data_mut().copy_from_slice(theta);
                        let (_, out, t) = spatial_attention_forward(&head, &probe, &feats, Mode::Infer, &mut rng.clone()).ok()?;
                        (t.activation_pattern() == pattern).then(|| objective(&out))
                    },
                    &base,
                    g.data(),
                    eps,
                ),
            );
        }
        let mut probe = feats.clone();
        record(
            "spatial attention (head)",
            finite_difference_error(
                |v| {
                    probe.data_mut().copy_from_slice(v);
                    let (_, out, t) = spatial_attention_forward(&head, &params, &probe, Mode::Infer, &mut rng.clone()).ok()?;
                    (t.activation_pattern() == pattern).then(|| objective(&out))
                },
                feats.data(),
                fg.data(),
                eps,
            ),
        );

        // Classifier network alone through the layer-level checker.
        let model = Model::<f64>::new(&cfg, grid, k, false, &mut rng.child(4)).unwrap();
        let clf = model.networks().into_iter().find(|n| n.name == uaai::pipeline::CLASSIFIER).unwrap();
        let emb = NumArray::new(vec![3, cfg.embed], (0..3 * cfg.embed).map(|_| rng.normal()).collect()).unwrap();
        let labels3: Vec<usize> = (0..3).map(|_| rng.below(k)).collect();
        let e = grad_check(
            &clf,
            &model.params,
            &emb,
            mode,
            &rng.child(5),
            |out| (ce_loss(out, &labels3), ce_grad(out, &labels3)),
            eps,
        )
        .unwrap();
        record("classifier", e);

        // Losses.
        let logits: Vec<f64> = (0..k).map(|_| 3.0 * rng.normal()).collect();
        let prior = Categorical::new(softmax_slice(&(0..k).map(|_| rng.normal()).collect::<Vec<_>>())).unwrap();
        let vfe = VfeConfig::new(rng.uniform(), Belief::new(prior)).unwrap();
        let label = rng.below(k);
        let (_, g) = vfe_loss_with_grad(&logits, label, &vfe).unwrap();
        record(
            "vfe_loss",
            finite_difference_error(|z| vfe_loss_with_grad(z, label, &vfe).ok().map(|r| r.0), &logits, &g, eps),
        );
        let pair = MixedSample::<f64> {
            x_mixed: NumArray::zeros(vec![1]),
            y_i: rng.below(k),
            y_j: rng.below(k),
            lambda: rng.uniform(),
            w_i: 0.1 + rng.uniform(),
            w_j: 0.1 + rng.uniform(),
        };
        let (_, g) = umix_loss_with_grad(&logits, &pair).unwrap();
        record(
            "umix_loss",
            finite_difference_error(|z| umix_loss_with_grad(z, &pair).ok().map(|r| r.0), &logits, &g, eps),
        );
    }

    let elapsed = start.elapsed().as_secs_f64();
    let max = worst.values().cloned().fold(0.0, f64::max);
    let pass = max < GRAD_TOLERANCE && elapsed < 120.0 && worst.len() == 6;
    let listing: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    Verdict::new(
        pass,
        format!("{GRAD_INSTANCES} instances per path, max relative error: {}", listing.join(", ")),
    )
}

fn ce_loss(logits: &NumArray<f64>, labels: &[usize]) -> f64 {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .map(|(row, &y)| -uaai::numkit::log_softmax_slice(row)[y])
        .sum()
}

fn ce_grad(logits: &NumArray<f64>, labels: &[usize]) -> NumArray<f64> {
    let k = logits.shape()[1];
    let mut g = Vec::with_capacity(logits.len());
    for (row, &y) in logits.data().chunks(k).zip(labels) {
        let p = softmax_slice(row);
        g.extend((0..k).map(|j| p[j] - f64::from(u8::from(j == y))));
    }
    NumArray::new(logits.shape().to_vec(), g).unwrap()
}

// ---------------------------------------------------------------------------
// 3. Oracles

/// Likelihood matrix computed from raw confusion counts, independent of the
/// library's construction.
fn oracle_likelihood(counts: &[Vec<f64>], softmax: &[f64]) -> Vec<Vec<f64>> {
    let k = softmax.len();
    let h: f64 = -softmax.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
    let lambda = (1.0 - h / (k as f64).ln()).clamp(0.0, 1.0);
    counts
        .iter()
        .map(|row| {
            let total: f64 = row.iter().sum();
            let mixed: Vec<f64> = row
                .iter()
                .map(|c| lambda * (c + 1.0) / (total + k as f64) + (1.0 - lambda) / k as f64)
                .collect();
            let s: f64 = mixed.iter().sum();
            mixed.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

/// Expected free energy by enumerating every observation outcome.
fn oracle_efe(b: &[f64], a: &[Vec<f64>], target: Option<usize>) -> f64 {
    let k = b.len();
    let mut g = 0.0;
    for o in 0..k {
        let joint: Vec<f64> = (0..k).map(|s| b[s] * a[s][o]).collect();
        let p_o: f64 = joint.iter().sum();
        if p_o <= 0.0 {
            continue;
        }
        let post: Vec<f64> = joint.iter().map(|j| j / p_o).collect();
        g += match target {
            None => -p_o * (0..k).filter(|&s| post[s] > 0.0).map(|s| post[s] * (post[s] / b[s]).ln()).sum::<f64>(),
            Some(t) => -p_o * post[t].max(1e-12).ln(),
        };
    }
    if target.is_some() {
        for s in 0..k {
            g -= b[s] * -a[s].iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
        }
    }
    g
}

fn criterion_3(_: &mut Shared) -> Verdict {
    let (t, k) = (5, 3);
    let mut rng = RngStream::new(31_337, 0);
    let mut mismatches = Vec::new();
    let mut ties = 0;
    for instance in 0..100 {
        let mut counts = vec![vec![0.0; k]; k];
        let mut confusion = ConfusionModel::new(k, 1.0).unwrap();
        for _ in 0..(5 + rng.below(40)) {
            let truth = rng.below(k);
            let pred = if rng.bernoulli(0.6) { truth } else { rng.below(k) };
            confusion.update(pred, truth).unwrap();
            counts[truth][pred] += 1.0;
        }
        let mut frames: Vec<Vec<f64>> = (0..t)
            .map(|_| softmax_slice(&(0..k).map(|_| 2.0 * rng.normal()).collect::<Vec<_>>()))
            .collect();
        if instance % 5 == 0 {
            // Exact duplicates exercise lowest-index tie breaking.
            let (i, j) = (rng.below(t), rng.below(t));
            frames[j.max(i)] = frames[j.min(i)].clone();
            ties += 1;
        }
        let cats: Vec<Categorical> = frames.iter().map(|f| Categorical::new(f.clone()).unwrap()).collect();
        let uniform = vec![1.0 / k as f64; k];
        let target = rng.below(k);
        for (mode, tgt) in [(EfeMode::info_gain(), None), (EfeMode::label_target(target), Some(target))] {
            let got = select_frames(&cats, &confusion, 1, &mode).unwrap().selected[0];
            let scores: Vec<f64> = frames.iter().map(|f| oracle_efe(&uniform, &oracle_likelihood(&counts, f), tgt)).collect();
            let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
            let want = scores.iter().position(|&s| s <= min + 1e-12 * (1.0 + min.abs())).unwrap();
            if got != want {
                mismatches.push(format!("instance {instance} {:?}: {got} vs {want}", mode.variant));
            }
        }
    }

    // Sequential updates against the joint posterior over 3-observation chains.
    let mut worst: f64 = 0.0;
    let k4 = 4;
    for _ in 0..200 {
        let mut confusion = ConfusionModel::new(k4, 1.0).unwrap();
        for _ in 0..rng.below(30) {
            confusion.update(rng.below(k4), rng.below(k4)).unwrap();
        }
        let prior = softmax_slice(&(0..k4).map(|_| rng.normal()).collect::<Vec<_>>());
        let mut belief = Belief::new(Categorical::new(prior.clone()).unwrap());
        let mut joint = prior.clone();
        for step in 0..3 {
            let frame = Categorical::new(softmax_slice(&(0..k4).map(|_| 2.0 * rng.normal()).collect::<Vec<_>>())).unwrap();
            let a = frame_likelihood(&confusion, &frame, step).unwrap();
            let o = rng.below(k4);
            belief = belief_update(&belief, &a, o).unwrap();
            for (s, j) in joint.iter_mut().enumerate() {
                *j *= a.get(s, o);
            }
        }
        let z: f64 = joint.iter().sum();
        for (s, j) in joint.iter().enumerate() {
            worst = worst.max((belief.probs()[s] - j / z).abs());
        }
    }

    let pass = mismatches.is_empty() && worst < 1e-9;
    let detail = if mismatches.is_empty() {
        format!("100 instances x 2 modes agree ({ties} with exact ties), joint-Bayes max error {worst:.1e}")
    } else {
        format!("{} mismatches, e.g. {}", mismatches.len(), mismatches[0])
    };
    Verdict::new(pass, detail)
}

// ---------------------------------------------------------------------------
// Default-benchmark training runs

fn run_ablation(shared: &mut Shared) -> &BTreeMap<(String, u64), f64> {
    if shared.ablation.is_none() {
        let data = default_data(shared).clone();
        let mut full = Vec::new();
        let out = keep_dir("ablation");
        let table = ablate(&TrainConfig::default(), &data, &SEEDS, out.as_deref(), |row, seed, outcome| {
            eprintln!(
                "  ablation {} seed {seed}: test {}",
                row.name,
                outcome.test.as_ref().map_or("n/a".into(), |t| pct(t.accuracy))
            );
            if row.name == "full" {
                full.push(outcome.clone());
            }
        })
        .expect("ablation runs");
        shared.full = full;
        shared.ablation = Some(
            table
                .runs
                .iter()
                .map(|r| ((r.row.clone(), r.seed), r.test_accuracy))
                .collect(),
        );
    }
    shared.ablation.as_ref().unwrap()
}

fn row_mean(table: &BTreeMap<(String, u64), f64>, row: &str) -> f64 {
    mean(&SEEDS.iter().map(|s| table[&(row.to_string(), *s)]).collect::<Vec<_>>())
}

fn criterion_4(shared: &mut Shared) -> Verdict {
    run_ablation(shared);
    let data = shared.data.as_ref().unwrap();
    let (mut recall, mut efe_acc, mut stride_acc) = (Vec::new(), Vec::new(), Vec::new());
    for outcome in &shared.full {
        let efe = evaluate_with(&outcome.checkpoint, data, "test", SelectorMode::Efe).unwrap();
        let stride = evaluate_with(&outcome.checkpoint, data, "test", SelectorMode::UniformStride).unwrap();
        assert_eq!(efe.mean_frames_observed, 4.0);
        recall.push(efe.planted_recall);
        efe_acc.push(efe.accuracy);
        stride_acc.push(stride.accuracy);
    }
    let (r, gap) = (mean(&recall), mean(&efe_acc) - mean(&stride_acc));
    Verdict::new(
        r >= 0.70 && gap >= 0.03,
        format!(
            "planted recall {} % (need >= 70), EFE {} % vs stride {} %, gap {} points (need >= 3)",
            pct(r),
            pct(mean(&efe_acc)),
            pct(mean(&stride_acc)),
            pct(gap)
        ),
    )
}

fn criterion_6(shared: &mut Shared) -> Verdict {
    let table = run_ablation(shared);
    let m = |row| row_mean(table, row);
    let (base, full) = (m("baseline"), m("full"));
    let singles = ["uncertainty", "temporal", "spatial"];
    let ordered = singles.iter().all(|r| base <= m(r) && m(r) <= full);
    let listing: Vec<String> = ["baseline", "uncertainty", "temporal", "spatial", "full"]
        .iter()
        .map(|r| format!("{r} {}", pct(m(r))))
        .collect();
    Verdict::new(
        ordered && full - base >= 0.05,
        format!(
            "mean test accuracy %: {}; full - baseline = {} points (need >= 5)",
            listing.join(", "),
            pct(full - base)
        ),
    )
}

fn criterion_9(shared: &mut Shared) -> Verdict {
    run_ablation(shared);
    let pick = |rows: &[MetricsRow], split: &str, epoch: usize, f: fn(&MetricsRow) -> f64| {
        rows.iter().find(|r| r.split == split && r.epoch == epoch).map(f)
    };
    let mut loss_ok = 0;
    let (mut v40, mut v50) = (Vec::new(), Vec::new());
    let mut losses = Vec::new();
    for o in &shared.full {
        let (l5, l40) = (
            pick(&o.metrics, "train", 5, |r| r.loss).unwrap(),
            pick(&o.metrics, "train", 40, |r| r.loss).unwrap(),
        );
        loss_ok += usize::from(l40 < l5);
        losses.push(format!("{l5:.3}->{l40:.3}"));
        v40.push(pick(&o.metrics, "val", 40, |r| r.accuracy).unwrap());
        v50.push(pick(&o.metrics, "val", 50, |r| r.accuracy).unwrap());
    }
    let drift = (mean(&v50) - mean(&v40)).abs();
    Verdict::new(
        loss_ok == SEEDS.len() && drift <= 0.02,
        format!(
            "train loss epoch 5->40 [{}] lower in {loss_ok}/3; mean val accuracy epoch 40 {} %, epoch 50 {} %, drift {} points (need <= 2)",
            losses.join(", "),
            pct(mean(&v40)),
            pct(mean(&v50)),
            pct(drift)
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. Label-noise robustness

fn criterion_5(_: &mut Shared) -> Verdict {
    let data = generate_dataset(&GeneratorConfig {
        label_noise: 0.2,
        ..GeneratorConfig::default()
    })
    .unwrap();
    let mut lower = 0;
    let (mut on, mut off) = (Vec::new(), Vec::new());
    let mut gaps = Vec::new();
    for seed in SEEDS {
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let with = train(&cfg, &data, keep_dir(&format!("noise_umix_seed{seed}")).as_deref()).unwrap();
        let without = train(
            &cfg.with_flags(false, true, true),
            &data,
            keep_dir(&format!("noise_plain_seed{seed}")).as_deref(),
        )
        .unwrap();
        // Every epoch after the first one that computed weights.
        let later: Vec<_> = with.weights.iter().skip(1).collect();
        let clean = mean(&later.iter().map(|w| w.mean_w_clean).collect::<Vec<_>>());
        let noisy = mean(&later.iter().map(|w| w.mean_w_noisy).collect::<Vec<_>>());
        lower += usize::from(noisy < clean);
        gaps.push(format!("{noisy:.4}<{clean:.4}"));
        on.push(with.test.unwrap().accuracy);
        off.push(without.test.unwrap().accuracy);
        eprintln!("  noise seed {seed}: umix {} %, no umix {} %", pct(*on.last().unwrap()), pct(*off.last().unwrap()));
    }
    let gap = mean(&on) - mean(&off);
    Verdict::new(
        lower == SEEDS.len() && gap >= 0.02,
        format!(
            "noisy < clean mean weight in {lower}/3 seeds [{}]; test accuracy umix on {} % vs off {} %, gap {} points (need >= 2)",
            gaps.join(", "),
            pct(mean(&on)),
            pct(mean(&off)),
            pct(gap)
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. MC cost scaling

fn criterion_7(shared: &mut Shared) -> Verdict {
    let data = default_data(shared).clone();
    let mut times = Vec::new();
    for passes in [2, 5, 8] {
        let mut cfg = TrainConfig {
            epochs: 3,
            seed: 1,
            ..TrainConfig::default()
        };
        cfg.mc.passes = passes;
        let outcome = train(&cfg, &data, keep_dir(&format!("mc_passes_{passes}")).as_deref()).unwrap();
        times.push(outcome.train_seconds);
    }
    let ratio = times[2] / times[0];
    let monotone = times.windows(2).all(|w| w[0] < w[1]);
    Verdict::new(
        monotone && (1.2..=3.0).contains(&ratio),
        format!(
            "training seconds for 2/5/8 passes: {:.1}/{:.1}/{:.1}, ratio 8:2 = {ratio:.2} (need 1.2..3.0)",
            times[0], times[1], times[2]
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. Determinism and persistence

fn criterion_8(shared: &mut Shared) -> Verdict {
    let data = default_data(shared).clone();
    let cfg = TrainConfig {
        epochs: 2,
        seed: 5,
        record_wall_clock: false,
        ..TrainConfig::default()
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let outcomes: Vec<_> = dirs.iter().map(|d| train(&cfg, &data, Some(d.path())).unwrap()).collect();
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("metrics.csv")).unwrap();
    let metrics_same = read(&dirs[0]) == read(&dirs[1]);

    let loaded = Checkpoint::load(&dirs[0].path().join("checkpoint.uaai")).unwrap();
    let before = evaluate(&outcomes[0].checkpoint, &data, "test").unwrap();
    let after = evaluate(&loaded, &data, "test").unwrap();
    let ckpt_same = before == after;

    let mut bytes = Vec::new();
    write_dataset_to(&mut bytes, &data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = write_dataset(&data, dir.path()).unwrap();
    let back = read_dataset(&path).unwrap();
    let mut again = Vec::new();
    write_dataset_to(&mut again, &back).unwrap();
    let frames_same = back.splits.iter().zip(&data.splits).all(|(a, b)| {
        a.samples.len() == b.samples.len()
            && a.samples.iter().zip(&b.samples).all(|(x, y)| {
                x.frames.data().iter().map(|v| v.to_bits()).eq(y.frames.data().iter().map(|v| v.to_bits()))
                    && x.label == y.label
                    && x.planted_frames == y.planted_frames
                    && x.noisy_label == y.noisy_label
            })
    });
    let dataset_same = frames_same && bytes == again && bytes == std::fs::read(&path).unwrap();

    let mut bad_magic = bytes.clone();
    bad_magic[0] ^= 0xff;
    let mut bad_version = bytes.clone();
    bad_version[4] = 0x7f;
    let rejected = [bad_magic, bad_version, bytes[..3].to_vec()]
        .iter()
        .all(|b| matches!(read_dataset_from(b.as_slice()), Err(Error::Format { .. })));
    let mut ckpt_bytes = std::fs::read(dirs[0].path().join("checkpoint.uaai")).unwrap();
    ckpt_bytes[0] ^= 0xff;
    let ckpt_rejected = matches!(Checkpoint::read_from(ckpt_bytes.as_slice()), Err(Error::Format { .. }));

    Verdict::new(
        metrics_same && ckpt_same && dataset_same && rejected && ckpt_rejected,
        format!(
            "metrics identical {metrics_same}, checkpoint evaluation identical {ckpt_same} ({} %), dataset round trip bit-exact {dataset_same}, corrupted headers rejected {}",
            pct(after.accuracy),
            rejected && ckpt_rejected
        ),
    )
}
