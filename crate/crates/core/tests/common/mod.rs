//! Independent oracles shared by the integration and acceptance tests.

#![allow(dead_code)]

use glam_core::rng::{rng_from_seed, Rng};
use rand::Rng as _;

/// Random documents over a small vocabulary, with punctuation and case noise
/// the normalizer has to strip.
pub fn random_texts(rng: &mut Rng, count: usize, vocab: usize, max_len: usize) -> Vec<String> {
    (0..count)
        .map(|_| {
            let len = rng.random_range(0..=max_len);
            (0..len)
                .map(|_| {
                    let w = format!("w{}", rng.random_range(0..vocab));
                    match rng.random_range(0..6) {
                        0 => w.to_uppercase(),
                        1 => format!("{w},"),
                        2 => format!("({w})"),
                        _ => w,
                    }
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

fn simple_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Dirty iff some n-token window of the example occurs contiguously in some
/// corpus document, found by scanning every offset of every document.
pub fn brute_force_dirty(example: &str, corpus: &[String], n: usize) -> bool {
    let ex = simple_tokens(example);
    let docs: Vec<Vec<String>> = corpus.iter().map(|d| simple_tokens(d)).collect();
    if ex.len() < n {
        return false;
    }
    for i in 0..=ex.len() - n {
        for doc in &docs {
            if doc.len() < n {
                continue;
            }
            for j in 0..=doc.len() - n {
                if (0..n).all(|k| ex[i + k] == doc[j + k]) {
                    return true;
                }
            }
        }
    }
    false
}

/// One randomized contamination fixture: corpus, examples (some with a
/// copied corpus span), and n.
pub struct ContaminationFixture {
    pub corpus: Vec<String>,
    pub examples: Vec<String>,
    pub n: usize,
}

pub fn contamination_fixture(seed: u64) -> ContaminationFixture {
    let mut rng = rng_from_seed(seed);
    let vocab = rng.random_range(3..12);
    let docs = rng.random_range(1..8);
    let corpus = random_texts(&mut rng, docs, vocab, 40);
    let mut examples = random_texts(&mut rng, 10, vocab, 15);
    for ex in examples.iter_mut().take(3) {
        let doc = &corpus[rng.random_range(0..corpus.len())];
        let words: Vec<&str> = doc.split(' ').collect();
        if words.len() > 4 {
            let start = rng.random_range(0..words.len() - 4);
            *ex = format!("{ex} {}", words[start..start + 4].join(" "));
        }
    }
    ContaminationFixture { corpus, examples, n: rng.random_range(2..6) }
}

use glam_core::moe::{moe_forward, ExpertParams};
use glam_core::numerics::Tensor;
use glam_core::shardplan::{plan_dims, Mesh, PlanDims};
use rand_distr::{Distribution, StandardNormal};

/// Every divisible `(E, M, H, B, S) × (X, Y)` combination of a small grid.
pub fn divisible_sweep() -> Vec<(PlanDims, Mesh)> {
    let mut out = Vec::new();
    for e in [1, 2, 4, 8] {
        for m in [2, 4, 8] {
            for h in [4, 8, 16] {
                for b in [1, 2, 4] {
                    for s in [1, 2, 4] {
                        for x in [1, 2, 4] {
                            for y in [1, 2, 4] {
                                let dims =
                                    PlanDims { experts: e, d_model: m, d_ff: h, batch: b, seq_len: s, moe_layers: 2 };
                                let batch_ok = b % x == 0 || (x % b == 0 && s % (x / b) == 0);
                                if e % x == 0 && h % y == 0 && m % y == 0 && batch_ok {
                                    out.push((dims, Mesh { x, y }));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn normal_tensor(rng: &mut Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape,
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                scale * z
            })
            .collect::<Vec<f64>>(),
    )
    .unwrap()
}

/// Largest elementwise gap between the unsharded MoE layer and the sharded
/// simulation on a random instance.
pub fn sharded_vs_unsharded(seed: u64, experts: usize, tokens: usize, mesh: Mesh, capacity_factor: f64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let (m, h) = (4, 8);
    let x = normal_tensor(&mut rng, &[tokens, m], 1.0);
    let gate = normal_tensor(&mut rng, &[m, experts], 1.0);
    let experts_p: Vec<ExpertParams<f64>> = (0..experts)
        .map(|_| ExpertParams {
            w_in: normal_tensor(&mut rng, &[m, h], 0.5),
            w_out: normal_tensor(&mut rng, &[h, m], 0.5),
        })
        .collect();
    let (reference, _) = moe_forward(&x, &experts_p, &gate, capacity_factor).unwrap();
    let dims = PlanDims { experts, d_model: m, d_ff: h, batch: tokens, seq_len: 1, moe_layers: 1 };
    let plan = plan_dims(dims, mesh).unwrap();
    let sharded = glam_core::shardplan::sharded_moe_forward(&plan, &x, &experts_p, &gate, capacity_factor).unwrap();
    reference.max_abs_diff(&sharded)
}
