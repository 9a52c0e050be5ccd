//! Acceptance suite: one PASS/FAIL line per criterion A1-A9.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::tempdir;

use common::*;
use topic_adapt::adapt::{
    fit, loglik_conf, loglik_self_1best, loglik_self_tf, ConfusionObjective, EstimatorConfig, Variant,
};
use topic_adapt::channel::{channel_prob, estimate_channel, ChannelModel};
use topic_adapt::corpus::{Bin, Conversation, Vocabulary, WordId};
use topic_adapt::eval::{constrained_perplexity, perplexity, ReferenceCorpus};
use topic_adapt::par;
use topic_adapt::synth::{sample_conversation, SynthSpec};
use topic_adapt::topics::{mu_to_lambda, MixtureWeights, TopicModel, Unigram};

/// Trace slack for monotonicity (A1).
const MONOTONE_SLACK: f64 = 1e-9;
/// Allowed shortfall against the grid optimum (A2).
const GRID_SLACK: f64 = 1e-6;
const GRID_STEP: f64 = 0.001;
/// Oracle recovery radius in L1 (A3).
const RECOVERY_L1: f64 = 0.05;
/// Lower-bound slack (A5).
const BOUND_SLACK: f64 = 1e-9;
/// Gradient bound and finite-difference step (A6).
const GRADIENT_MAX: f64 = 1e-4;
const FD_STEP: f64 = 1e-6;
/// Perplexity tolerance (A7) and channel row-sum tolerance (A8).
const PPL_TOL: f64 = 1e-12;
const ROW_SUM_TOL: f64 = 1e-9;

const MAP_STRENGTHS: [f64; 3] = [0.0, -0.05, 0.1];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(limit: Duration, started: Instant) -> (bool, String) {
    let elapsed = started.elapsed();
    (elapsed < limit, format!("{:.1}s of {}s", elapsed.as_secs_f64(), limit.as_secs()))
}

/// A random topic model and a conversation drawn from it: observed words
/// come from the mixture, and each bin adds a few random competitors with
/// lower posteriors.
struct Instance {
    tm: TopicModel,
    conv: Conversation,
    cm: ChannelModel,
}

fn instance(seed: u64, t: usize, v: usize, m: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..t)
        .map(|_| {
            let raw: Vec<f64> = (0..v).map(|_| rng.random::<f64>().powi(4) + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / s).collect()
        })
        .collect();
    let tm = TopicModel::from_rows((0..t).map(|i| format!("t{i}")).collect(), rows).unwrap();
    let raw: Vec<f64> = (0..t).map(|_| rng.random_range(0.2..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let lambda: Vec<f64> = raw.into_iter().map(|x| x / s).collect();
    let mixture: Vec<f64> = (0..v)
        .map(|w| (0..t).map(|k| lambda[k] * tm.prob(k, WordId(w as u32))).sum())
        .collect();
    let draw = rand::distr::weighted::WeightedIndex::new(&mixture).unwrap();
    let bins = (0..m)
        .map(|_| {
            let o = draw.sample(&mut rng) as u32;
            let extra = rng.random_range(0..4usize);
            let mut words = vec![o];
            while words.len() < extra + 1 {
                let u = rng.random_range(0..v as u32);
                if !words.contains(&u) {
                    words.push(u);
                }
            }
            let mut post: Vec<f64> = (0..words.len()).map(|_| rng.random_range(0.05..1.0)).collect();
            post[0] = post.iter().copied().fold(0.0, f64::max) + 0.1;
            let mass = rng.random_range(0.8..1.0) / post.iter().sum::<f64>();
            let pairs: Vec<(WordId, f64)> = words
                .iter()
                .zip(&post)
                .map(|(&w, p)| (WordId(w), p * mass))
                .collect();
            Bin::from_pairs(&pairs).unwrap()
        })
        .collect();
    let conv = Conversation::from_bins(format!("i{seed}"), bins).unwrap();
    let cm = estimate_channel(std::slice::from_ref(&conv), 0.05, 10).unwrap();
    Instance { tm, conv, cm }
}

fn objective(inst: &Instance, variant: Variant, lambda: &[f64], m: f64) -> f64 {
    let lw = MixtureWeights::from_lambda(lambda.to_vec()).unwrap();
    let data = match variant {
        Variant::SelfOneBest => loglik_self_1best(&inst.conv, &inst.tm, &lw),
        Variant::SelfTf => loglik_self_tf(&inst.conv, &inst.tm, &lw),
        Variant::ConfOneBest => loglik_conf(&inst.conv, &inst.tm, &lw, &inst.cm, false),
        Variant::ConfTf => loglik_conf(&inst.conv, &inst.tm, &lw, &inst.cm, true),
    };
    let prior = if m == 0.0 {
        0.0
    } else {
        m * lambda.iter().map(|l| l.ln()).sum::<f64>()
    };
    data + prior
}

fn a1() -> Outcome {
    let started = Instant::now();
    let shapes: Vec<(usize, usize, usize)> = [2, 5]
        .into_iter()
        .flat_map(|t| [20, 100].into_iter().flat_map(move |v| [50, 500].into_iter().map(move |m| (t, v, m))))
        .collect();
    let failures: Vec<String> = par::map_range(100, |i| {
        let (t, v, m) = shapes[i % shapes.len()];
        let inst = instance(1000 + i as u64, t, v, m);
        let mut bad = Vec::new();
        for variant in Variant::ALL {
            for strength in MAP_STRENGTHS {
                let cfg = EstimatorConfig::new(variant)
                    .with_map_strength(strength)
                    .with_tolerance(1e-12, 300);
                match fit(&inst.conv, &inst.tm, Some(&inst.cm), &cfg) {
                    Ok(f) => {
                        if f.loglik_trace.windows(2).any(|w| !(w[1] >= w[0] - MONOTONE_SLACK)) {
                            bad.push(format!("instance {i} {variant} m={strength}"));
                        }
                    }
                    Err(e) => bad.push(format!("instance {i} {variant} m={strength}: {e}")),
                }
            }
        }
        bad
    })
    .into_iter()
    .flatten()
    .collect();
    let (fast, time) = within(Duration::from_secs(60), started);
    outcome(
        failures.is_empty() && fast,
        format!(
            "100 instances x 4 variants x map_strength {{0, -0.05, +0.1}}: {} non-monotone or failed runs; {time}{}",
            failures.len(),
            failures.first().map(|f| format!("; first: {f}")).unwrap_or_default()
        ),
    )
}

fn a2() -> Outcome {
    let started = Instant::now();
    let grid: Vec<f64> = (0..=1000).map(|k| k as f64 * GRID_STEP).collect();
    let results: Vec<(f64, String)> = par::map_range(20, |i| {
        let inst = instance(2000 + i as u64, 2, 20, 200);
        let mut worst = (f64::INFINITY, String::new());
        for variant in Variant::ALL {
            for strength in MAP_STRENGTHS {
                let cfg = EstimatorConfig::new(variant)
                    .with_map_strength(strength)
                    .with_tolerance(1e-15, 100_000);
                let fitted = fit(&inst.conv, &inst.tm, Some(&inst.cm), &cfg).expect("fit succeeds");
                let best = grid
                    .iter()
                    .map(|&l1| objective(&inst, variant, &[l1, 1.0 - l1], strength))
                    .filter(|v| v.is_finite())
                    .fold(f64::NEG_INFINITY, f64::max);
                let margin = fitted.final_objective() - best;
                if margin < worst.0 {
                    worst = (margin, format!("instance {i} {variant} m={strength}"));
                }
            }
        }
        worst
    });
    let worst = results.into_iter().fold((f64::INFINITY, String::new()), |a, b| if b.0 < a.0 { b } else { a });
    let (fast, time) = within(Duration::from_secs(120), started);
    outcome(
        worst.0 >= -GRID_SLACK && fast,
        format!(
            "20 instances x 4 variants x map_strength {{0, -0.05, +0.1}}: min(EM - grid max) = {:.3e} at {}; {time}",
            worst.0, worst.1
        ),
    )
}

fn recovery_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        num_topics: 3,
        vocab_size: 50,
        lambda_true: vec![0.5, 0.3, 0.2],
        topic_sharpness: 0.1,
        channel_noise: 0.4,
        bins: 5000,
        bin_width: 5,
        seed,
        conversations: 1,
    }
}

fn recovery_error(seed: u64, variant: Variant) -> f64 {
    let (conv, truth) = sample_conversation(&recovery_spec(seed)).unwrap();
    let cfg = EstimatorConfig::new(variant).with_tolerance(1e-10, 5000);
    let fitted = fit(&conv, &truth.topics, Some(&truth.channel), &cfg).unwrap();
    l1(fitted.weights.lambda(), truth.lambda_true.lambda())
}

fn a3() -> Outcome {
    let started = Instant::now();
    let errors = par::map_range(20, |s| recovery_error(s as u64, Variant::ConfTf));
    let hits = errors.iter().filter(|&&e| e <= RECOVERY_L1).count();
    let median = {
        let mut e = errors.clone();
        e.sort_by(f64::total_cmp);
        e[e.len() / 2]
    };
    let (fast, time) = within(Duration::from_secs(120), started);
    outcome(
        hits >= 18 && fast,
        format!("conf-tf L1 <= {RECOVERY_L1} on {hits}/20 seeds (need 18), median L1 {median:.4}; {time}"),
    )
}

fn a4() -> Outcome {
    let started = Instant::now();
    let wins = par::map_range(50, |s| {
        let seed = s as u64;
        recovery_error(seed, Variant::ConfOneBest) <= recovery_error(seed, Variant::SelfOneBest)
    })
    .into_iter()
    .filter(|&w| w)
    .count();
    let (fast, time) = within(Duration::from_secs(300), started);
    outcome(
        wins * 10 >= 50 * 9 && fast,
        format!("conf-1best at least as close as self-1best on {wins}/50 seeds (need 45); {time}"),
    )
}

fn a5() -> Outcome {
    let violations: Vec<String> = par::map_range(1000, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + i as u64);
        let t = rng.random_range(2..6usize);
        let inst = instance(5000 + i as u64, t, 20, 30);
        let obj = ConfusionObjective::new(&inst.conv, &inst.tm, &inst.cm, i % 2 == 1);
        let mu: Vec<f64> = (0..t).map(|_| rng.random_range(-3.0..3.0)).collect();
        let delta: Vec<f64> = (0..t).map(|_| rng.random_range(-2.0..2.0)).collect();
        let weights = obj.e_step(&mu_to_lambda(&mu)).weights;
        let next: Vec<f64> = mu.iter().zip(&delta).map(|(a, b)| a + b).collect();
        let q_diff = obj.q_value(&weights, &next) - obj.q_value(&weights, &mu);
        let bound = obj.q_lower_bound(&weights, &mu, &delta);
        let step = obj.mm_update(&mu, 0.0, 0).unwrap();
        let at_step = obj.q_lower_bound(&weights, &mu, &step.delta);
        let zero = obj.q_lower_bound(&weights, &mu, &vec![0.0; t]);
        let mut bad = None;
        if bound > q_diff + BOUND_SLACK {
            bad = Some(format!("triple {i}: bound {bound} > Q-difference {q_diff}"));
        } else if at_step < -BOUND_SLACK || zero.abs() > BOUND_SLACK {
            bad = Some(format!("triple {i}: g(0) = {zero}, g(update) = {at_step}"));
        }
        bad
    })
    .into_iter()
    .flatten()
    .collect();
    outcome(
        violations.is_empty(),
        format!(
            "1000 random (instance, mu, delta) triples, 1-best and tf forms: {} violations{}",
            violations.len(),
            violations.first().map(|v| format!("; first: {v}")).unwrap_or_default()
        ),
    )
}

fn a6() -> Outcome {
    let worst = par::map_range(20, |i| {
        let inst = instance(6000 + i as u64, 3, 20, 100);
        let mut worst: (f64, String) = (0.0, String::new());
        for variant in Variant::ALL {
            let cfg = EstimatorConfig::new(variant).with_tolerance(1e-15, 200_000);
            let fitted = fit(&inst.conv, &inst.tm, Some(&inst.cm), &cfg).expect("fit succeeds");
            let mu: Vec<f64> = fitted.weights.mu().to_vec();
            for k in 0..mu.len() {
                let at = |h: f64| {
                    let mut m = mu.clone();
                    m[k] += h;
                    objective(&inst, variant, &mu_to_lambda(&m), 0.0)
                };
                let g = (at(FD_STEP) - at(-FD_STEP)) / (2.0 * FD_STEP);
                if !(g.abs() <= worst.0) {
                    worst = (g.abs(), format!("instance {i} {variant} topic {k}"));
                }
            }
        }
        worst
    })
    .into_iter()
    .fold((0.0, String::new()), |a, b| if !(b.0 <= a.0) { b } else { a });
    outcome(
        worst.0 < GRADIENT_MAX,
        format!(
            "20 instances x 4 MLE variants: max |d objective / d mu| = {:.3e} at {}",
            worst.0, worst.1
        ),
    )
}

fn a7() -> Outcome {
    let model = Unigram::uniform(4);
    let corpus = ReferenceCorpus::new([0u32, 1, 1, 3, 2, 2, 2].map(WordId).to_vec());
    let ppl = perplexity(&model, &corpus, None).unwrap();
    let vacuous = constrained_perplexity(&model, &corpus, Some(corpus.max_count()), None).unwrap();
    let unbounded = constrained_perplexity(&model, &corpus, None, None).unwrap();
    outcome(
        (ppl - 4.0).abs() <= PPL_TOL && vacuous == ppl && unbounded == ppl,
        format!("uniform |V|=4 PPL = {ppl}; vacuous thr {vacuous}; no thr {unbounded}"),
    )
}

fn a8() -> Outcome {
    let mut vocab = Vocabulary::new();
    let (a, b, c) = (vocab.intern("a"), vocab.intern("b"), vocab.intern("c"));
    let fixture = Conversation::from_bins(
        "c1",
        vec![
            Bin::from_pairs(&[(a, 0.6), (b, 0.4)]).unwrap(),
            Bin::from_pairs(&[(a, 0.7), (c, 0.3)]).unwrap(),
        ],
    )
    .unwrap();
    let cm = estimate_channel(&[fixture], 0.05, 10).unwrap();
    let expected: BTreeMap<(WordId, WordId), f64> = [
        ((a, a), 0.5),
        ((b, a), 0.25),
        ((c, a), 0.25),
        ((a, b), 0.5),
        ((b, b), 0.5),
        ((a, c), 0.5),
        ((c, c), 0.5),
    ]
    .into();
    let mut exact = true;
    for v in [a, b, c] {
        for w in [a, b, c] {
            exact &= channel_prob(&cm, v, w) == expected.get(&(v, w)).copied().unwrap_or(0.0);
        }
    }
    let worst_row = par::map_range(50, |i| {
        let convs: Vec<Conversation> = (0..3).map(|k| instance(8000 + 10 * i as u64 + k, 2, 40, 60).conv).collect();
        let cm = estimate_channel(&convs, 0.05, 10).unwrap();
        cm.rows()
            .map(|(_, row)| (row.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    })
    .into_iter()
    .fold(0.0, f64::max);
    outcome(
        exact && worst_row <= ROW_SUM_TOL,
        format!("two-bin table exact: {exact}; 50 random corpora, max |row sum - 1| = {worst_row:.1e}"),
    )
}

/// Runs every subcommand twice in fresh directories and compares outputs.
fn a9() -> Outcome {
    let run_all = |root: &Path| -> Vec<(String, Vec<u8>)> {
        let mut stdout = Vec::new();
        let mut step = |args: &[&str]| stdout.push((args.join(" "), ok(root, args).stdout));
        topic_corpus(root);
        write(root.join("spec.json"), &synth_spec(0.4, 400, 17, 3));
        write(root.join("ref.txt"), "w01 w02 w02 w03\nw07 w49\n");
        step(&["topics-train", "corpus", "tm.txt"]);
        step(&["synth", "spec.json", "data"]);
        step(&["channel", "data/*.cnet", "est-channel.txt"]);
        for variant in ["self-1best", "self-tf", "conf-1best", "conf-tf"] {
            let lam = format!("lam-{variant}");
            let mut args = vec!["adapt", "data", "data/topics.txt", "--variant", variant];
            if variant.starts_with("conf") {
                args.extend(["--channel", "est-channel.txt"]);
            }
            args.extend(["--map-strength", "-0.05", "--out-lambda", &lam, "--out-unigram", "uni", "--report", "rep"]);
            step(&args);
        }
        step(&[
            "adapt", "data/synth0000.cnet", "data/topics.txt", "--variant", "conf-tf", "--channel",
            "data/channel.txt", "--out-lambda", "one.lambda", "--out-unigram", "one.unigram",
        ]);
        step(&["ppl", "one.unigram", "ref.txt", "--thr", "1", "2", "inf", "--out", "ppl.tsv"]);
        step(&["ppl", "one.unigram", "ref.txt"]);
        stdout
    };
    let (first, second) = (tempdir().unwrap(), tempdir().unwrap());
    let out_a = run_all(first.path());
    let out_b = run_all(second.path());
    let (files_a, files_b) = (comparable(first.path()), comparable(second.path()));
    let differing: Vec<&str> = files_a
        .iter()
        .zip(&files_b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let same = files_a.len() == files_b.len() && differing.is_empty() && out_a == out_b;
    outcome(
        same,
        format!(
            "topics-train, synth, channel, adapt (4 variants + single file), ppl (2 forms), each run twice: {} output files compared byte-for-byte (manifests without wall time), stdout identical: {}{}",
            files_a.len(),
            out_a == out_b,
            differing.first().map(|d| format!("; differs: {d}")).unwrap_or_default()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("A1", a1),
        ("A2", a2),
        ("A3", a3),
        ("A4", a4),
        ("A5", a5),
        ("A6", a6),
        ("A7", a7),
        ("A8", a8),
        ("A9", a9),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let result = check();
        if !result.pass {
            failed += 1;
        }
        println!("{name} {} {}", if result.pass { "PASS" } else { "FAIL" }, result.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
