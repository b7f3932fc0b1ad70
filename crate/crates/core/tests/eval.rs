use glam_core::data::{ByteTokenizer, Tokenizer};
use glam_core::eval::*;
use glam_core::model::{GlamModel, ModelConfig, TokenBatch};
use glam_core::rng::rng_from_seed;
use glam_core::trainer::{run, ShuffledBatches, TrainConfig, TrainLog, Trainer};
use glam_core::Result;

/// Next-token distribution depends only on the last token.
struct Bigram {
    table: Vec<Vec<f64>>,
}

impl LanguageModel for Bigram {
    fn vocab_size(&self) -> usize {
        self.table.len()
    }

    fn next_log_probs(&self, prefix: &[u32]) -> Result<Vec<f64>> {
        Ok(self.table[*prefix.last().unwrap() as usize].iter().map(|p| p.ln()).collect())
    }
}

/// Fixed per-position log-probabilities regardless of the prefix content.
struct Scripted(Vec<Vec<f64>>);

impl LanguageModel for Scripted {
    fn vocab_size(&self) -> usize {
        self.0[0].len()
    }

    fn next_log_probs(&self, prefix: &[u32]) -> Result<Vec<f64>> {
        Ok(self.0[(prefix.len() - 1).min(self.0.len() - 1)].clone())
    }
}

#[test]
fn normalized_and_raw_choose_differently() {
    // option A: three tokens at -0.5 each; option B: one token at -1.2
    let a_model = Scripted(vec![vec![-0.5, -0.5]; 3]);
    let b_model = Scripted(vec![vec![-1.2, -1.2]]);
    let a_raw = score_option(&a_model, &[0], &[0, 0, 0], Normalization::Raw).unwrap();
    let a_norm = score_option(&a_model, &[0], &[0, 0, 0], Normalization::LengthNormalized).unwrap();
    let b_raw = score_option(&b_model, &[0], &[0], Normalization::Raw).unwrap();
    let b_norm = score_option(&b_model, &[0], &[0], Normalization::LengthNormalized).unwrap();
    assert_eq!((a_raw, a_norm, b_raw, b_norm), (-1.5, -0.5, -1.2, -1.2));
    assert_eq!(argmax(&[a_norm, b_norm]), 0);
    assert_eq!(argmax(&[a_raw, b_raw]), 1);
    assert!(score_option(&a_model, &[0], &[], Normalization::Raw).is_err());
}

#[test]
fn uniform_model_closed_form() {
    let v = 7;
    let m = Bigram { table: vec![vec![1.0 / v as f64; v]; v] };
    for k in 1..5 {
        let opt = vec![3u32; k];
        let raw = score_option(&m, &[1], &opt, Normalization::Raw).unwrap();
        let norm = score_option(&m, &[1], &opt, Normalization::LengthNormalized).unwrap();
        assert!((raw + k as f64 * (v as f64).ln()).abs() < 1e-12);
        assert!((norm + (v as f64).ln()).abs() < 1e-12);
        assert_eq!(raw, k as f64 * norm);
    }
}

fn choice_task(options: &[&str], shots: usize, train: usize) -> Task {
    let header = TaskHeader {
        name: "toy".into(),
        kind: TaskKind::MultipleChoice,
        normalization: Normalization::LengthNormalized,
        metric: Metric::AccuracyEm,
        shots,
        category: None,
    };
    let mut ex: Vec<Example> = (0..train)
        .map(|i| {
            Example::choice(format!("d{i}"), options.iter().map(|s| s.to_string()).collect(), 0).in_split(Split::Train)
        })
        .collect();
    ex.push(Example::choice("ctx", options.iter().map(|s| s.to_string()).collect(), 0));
    Task::new(header, ex).unwrap()
}

#[test]
fn ties_and_rigged_models() {
    let uniform = Bigram { table: vec![vec![1.0 / 259.0; 259]; 259] };
    let task = choice_task(&["same", "same"], 0, 0);
    assert_eq!(classify(&uniform, &ByteTokenizer, &task, &task.eval[0], 0).unwrap(), 0);

    // every byte of "B" (66) is certain, everything else near impossible
    let mut table = vec![vec![1e-9; 259]; 259];
    for row in &mut table {
        row[66] = 1.0;
    }
    let rigged = Bigram { table };
    let task = choice_task(&["A", "B", "C"], 1, 2);
    assert_eq!(classify(&rigged, &ByteTokenizer, &task, &task.eval[0], 3).unwrap(), 1);
}

#[test]
fn shared_context_cancels_under_raw_scoring() {
    // joint log P(context ++ option) differs from the conditional score by a
    // term shared across options, so the argmax is unchanged
    let table: Vec<Vec<f64>> = (0..5)
        .map(|r| {
            let w: Vec<f64> = (0..5).map(|c| 1.0 + ((r * 3 + c * 7) % 5) as f64).collect();
            let z: f64 = w.iter().sum();
            w.into_iter().map(|x| x / z).collect()
        })
        .collect();
    let m = Bigram { table };
    let context = [0u32, 2, 4];
    let options = [vec![1u32, 3], vec![2, 2], vec![4, 0], vec![3, 1]];
    let cond: Vec<f64> = options.iter().map(|o| score_option(&m, &context, o, Normalization::Raw).unwrap()).collect();
    let joint: Vec<f64> = options
        .iter()
        .map(|o| {
            let mut full = context[1..].to_vec();
            full.extend(o);
            score_option(&m, &context[..1], &full, Normalization::Raw).unwrap()
        })
        .collect();
    assert_eq!(argmax(&cond), argmax(&joint));
    let shift = joint[0] - cond[0];
    assert!(joint.iter().zip(&cond).all(|(j, c)| (j - c - shift).abs() < 1e-12));
}

/// Start token 3; greedy takes token 0 (0.6) into a flat row, while the
/// best length-3 path is 1,1,1 (0.4 · 0.9 · 0.9).
fn beam_fixture() -> Bigram {
    Bigram {
        table: vec![
            vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0],
            vec![0.05, 0.9, 0.05, 0.0],
            vec![0.2, 0.4, 0.4, 0.0],
            vec![0.6, 0.4, 0.0, 0.0],
        ],
    }
}

fn exhaustive_best(m: &Bigram, start: u32, len: usize) -> (Vec<u32>, f64) {
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    let n = m.vocab_size() as u32;
    for code in 0..n.pow(len as u32) {
        let seq: Vec<u32> = (0..len).map(|i| (code / n.pow((len - 1 - i) as u32)) % n).collect();
        let lp = sequence_log_prob(m, start, &seq);
        if lp > best.1 {
            best = (seq, lp);
        }
    }
    best
}

fn sequence_log_prob(m: &Bigram, start: u32, seq: &[u32]) -> f64 {
    let mut prev = start;
    let mut lp = 0.0;
    for &t in seq {
        lp += m.table[prev as usize][t as usize].ln();
        prev = t;
    }
    lp
}

fn greedy(m: &dyn LanguageModel, prompt: &[u32], steps: usize) -> Vec<u32> {
    let mut prefix = prompt.to_vec();
    for _ in 0..steps {
        let lp = m.next_log_probs(&prefix).unwrap();
        prefix.push(argmax(&lp) as u32);
    }
    prefix[prompt.len()..].to_vec()
}

#[test]
fn beam_finds_what_greedy_misses() {
    let m = beam_fixture();
    let (best, best_lp) = exhaustive_best(&m, 3, 3);
    let g = generate_beam(&m, &[3], 1, 3, None).unwrap();
    assert_eq!(g, greedy(&m, &[3], 3));
    assert!(sequence_log_prob(&m, 3, &g) < best_lp);
    let b = generate_beam(&m, &[3], 2, 3, None).unwrap();
    assert_eq!(b, best);
    assert_eq!(best, vec![1, 1, 1]);
    let mut prev = f64::NEG_INFINITY;
    for w in 1..=4 {
        let s = sequence_log_prob(&m, 3, &generate_beam(&m, &[3], w, 3, None).unwrap());
        assert!(s >= prev);
        prev = s;
    }
    assert!(generate_beam(&m, &[3], 0, 3, None).is_err());
}

#[test]
fn unique_continuation_and_eos() {
    // 0 -> 1 -> 2 -> EOS(3) with certainty
    let mut table = vec![vec![1e-12; 4]; 4];
    table[0][1] = 1.0;
    table[1][2] = 1.0;
    table[2][3] = 1.0;
    table[3][0] = 1.0;
    let m = Bigram { table };
    for w in 1..=4 {
        assert_eq!(generate_beam(&m, &[0], w, 10, Some(3)).unwrap(), vec![1, 2]);
    }
}

#[test]
fn top_k_sampling_matches_softmax() {
    let m = beam_fixture();
    let mut rng = rng_from_seed(12);
    for prompt in [[0u32], [1], [2]] {
        assert_eq!(sample_topk(&m, &prompt, 1, 1.0, &mut rng, 3, None).unwrap(), greedy(&m, &prompt, 3));
    }
    let n = 100_000;
    let mut counts = [0usize; 4];
    for _ in 0..n {
        counts[sample_topk(&m, &[2], 4, 1.0, &mut rng, 1, None).unwrap()[0] as usize] += 1;
    }
    for (c, p) in counts.iter().zip(&m.table[2]) {
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((*c as f64 / n as f64 - p).abs() <= 3.0 * sigma + 1e-12, "{counts:?}");
    }
    // outside the top 2 of row 1 nothing is ever emitted
    for _ in 0..2_000 {
        let t = sample_topk(&m, &[1], 2, 1.0, &mut rng, 1, None).unwrap()[0];
        assert!(t == 0 || t == 1);
    }
}

#[test]
fn memorized_task_scores_perfectly() {
    let tok = ByteTokenizer;
    let answers = ["yes", "no"];
    let pairs: Vec<(String, usize)> = (0..20).map(|i| (format!("k{i:02}="), (i * 7 + i / 3) % 2)).collect();
    // one row per pair, laid out exactly as the harness will prompt it
    let rows: Vec<u32> = pairs
        .iter()
        .flat_map(|(c, a)| {
            let mut row = vec![ByteTokenizer::BOS];
            row.extend(tok.encode(&format!("{c}{}", answers[*a])));
            row.push(ByteTokenizer::EOS);
            row.resize(10, ByteTokenizer::PAD);
            row
        })
        .collect();
    let mut cfg = ModelConfig::toy(1);
    cfg.vocab = ByteTokenizer::VOCAB;
    cfg.d_model = 32;
    cfg.d_ff = 64;
    let batches: Vec<TokenBatch> = rows.chunks(50).map(|c| TokenBatch::new(5, 10, c.to_vec()).unwrap()).collect();
    let mut tc = TrainConfig::new(600);
    tc.ignore_token = Some(ByteTokenizer::PAD);
    tc.warmup_steps = Some(600);
    let mut trainer = Trainer::new(GlamModel::<f64>::build(&cfg, 2).unwrap(), tc);
    let mut source = ShuffledBatches::new(batches, 2).unwrap();
    run(&mut trainer, &mut source, 600, None, &mut TrainLog::new()).unwrap();

    let header = TaskHeader {
        name: "memo".into(),
        kind: TaskKind::MultipleChoice,
        normalization: Normalization::Raw,
        metric: Metric::AccuracyEm,
        shots: 0,
        category: None,
    };
    let examples = pairs
        .iter()
        .map(|(c, a)| Example::choice(c.clone(), answers.iter().map(|s| s.to_string()).collect(), *a))
        .collect();
    let task = Task::new(header, examples).unwrap();
    let result = evaluate_task(&trainer.model, &tok, &task, &EvalOptions::default()).unwrap();
    assert_eq!(result.score, 100.0, "{result:?}");
}
