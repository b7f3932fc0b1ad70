use rand_distr::{Distribution, Normal};

use crate::error::{GlamError, Result};
use crate::moe::{capacity, moe_layer, DispatchStats, MoeVars};
use crate::numerics::{AttentionGeometry, Tape, Tensor, Var};
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

use super::attention::bucket_table;
use super::config::ModelConfig;
use super::ffn::geglu_on_tape;

pub const NORM_EPS: f64 = 1e-6;

/// Token ids for `rows` sequences of `cols` positions, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenBatch {
    pub rows: usize,
    pub cols: usize,
    pub ids: Vec<u32>,
}

impl TokenBatch {
    pub fn new(rows: usize, cols: usize, ids: Vec<u32>) -> Result<Self> {
        if rows * cols != ids.len() || rows == 0 || cols == 0 {
            return Err(GlamError::Shape { op: "token batch", lhs: vec![rows, cols], rhs: vec![ids.len()] });
        }
        Ok(Self { rows, cols, ids })
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.ids[r * self.cols..(r + 1) * self.cols]
    }

    /// Next-token targets per position; the last position of each row and any
    /// position whose target equals `ignore` has none.
    pub fn next_token_targets(&self, ignore: Option<u32>) -> Vec<Option<usize>> {
        let mut out = Vec::with_capacity(self.ids.len());
        for r in 0..self.rows {
            let row = self.row(r);
            for c in 0..self.cols {
                out.push(row.get(c + 1).filter(|&&t| Some(t) != ignore).map(|&t| t as usize));
            }
        }
        out
    }
}

/// A named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

#[derive(Clone, Debug)]
enum FfnLayout {
    Dense { wa: usize, wb: usize, wout: usize },
    Moe { gate: usize, experts: Vec<(usize, usize)> },
}

#[derive(Clone, Debug)]
struct LayerLayout {
    attn_norm: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    rel_bias: usize,
    ffn_norm: usize,
    ffn: FfnLayout,
}

/// Decoder-only stack: pre-norm attention and feed-forward blocks with
/// residual connections, MoE feed-forward on odd layers, output projection
/// tied to the token embedding.
#[derive(Clone, Debug)]
pub struct GlamModel<T> {
    config: ModelConfig,
    params: Vec<Param<T>>,
    embedding: usize,
    layers: Vec<LayerLayout>,
    final_norm: usize,
}

pub struct ForwardOutput {
    /// `[B × S × vocab]`
    pub logits: Var,
    /// Mean of the per-MoE-layer auxiliary losses (zero without MoE layers).
    pub aux_loss: Var,
    pub stats: Vec<DispatchStats>,
}

struct Builder<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> Builder<T> {
    fn add(&mut self, name: String, value: Tensor<T>) -> usize {
        self.params.push(Param { name, value });
        self.params.len() - 1
    }
}

impl<T: Scalar> GlamModel<T> {
    /// Deterministic initialization: weights drawn from N(0, 1/fan_in), norm
    /// gains one, relative biases zero.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(seed);
        let mut normal = |shape: &[usize], fan_in: usize| -> Tensor<T> {
            let dist = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
            let n = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| T::of(dist.sample(&mut rng))).collect()).expect("shape")
        };
        let (m, h, a) = (config.d_model, config.d_ff, config.attention_width());
        let mut b = Builder { params: Vec::new() };
        let embedding = b.add("embedding".into(), normal(&[config.vocab, m], m));
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = |s: &str| format!("layer{l}.{s}");
            let attn_norm = b.add(p("attn_norm"), Tensor::full(&[m], T::one()));
            let wq = b.add(p("wq"), normal(&[m, a], m));
            let wk = b.add(p("wk"), normal(&[m, a], m));
            let wv = b.add(p("wv"), normal(&[m, a], m));
            let wo = b.add(p("wo"), normal(&[a, m], a));
            let rel_bias = b.add(p("rel_bias"), Tensor::zeros(&[config.n_heads, config.rel_buckets]));
            let ffn_norm = b.add(p("ffn_norm"), Tensor::full(&[m], T::one()));
            let ffn = if config.is_moe_layer(l) {
                let gate = b.add(p("moe.gate"), normal(&[m, config.experts], m));
                let experts = (0..config.experts)
                    .map(|e| {
                        let eh = config.expert_width();
                        let w_in = b.add(p(&format!("moe.expert{e}.w_in")), normal(&[m, eh], m));
                        let w_out = b.add(p(&format!("moe.expert{e}.w_out")), normal(&[eh, m], eh));
                        (w_in, w_out)
                    })
                    .collect();
                FfnLayout::Moe { gate, experts }
            } else {
                FfnLayout::Dense {
                    wa: b.add(p("ffn.wa"), normal(&[m, h], m)),
                    wb: b.add(p("ffn.wb"), normal(&[m, h], m)),
                    wout: b.add(p("ffn.wout"), normal(&[h, m], h)),
                }
            };
            layers.push(LayerLayout { attn_norm, wq, wk, wv, wo, rel_bias, ffn_norm, ffn });
        }
        let final_norm = b.add("final_norm".into(), Tensor::full(&[m], T::one()));
        Ok(Self { config: config.clone(), params: b.params, embedding, layers, final_norm })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    pub fn embedding_name(&self) -> &str {
        &self.params[self.embedding].name
    }

    pub fn checksum(&self) -> u64 {
        self.params.iter().fold(0u64, |h, p| (h.rotate_left(5) ^ p.value.checksum()).wrapping_mul(0x100_0000_01b3))
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    /// Replace every parameter value; names and shapes must match.
    pub fn load_values(&mut self, values: &[(String, Tensor<T>)]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(GlamError::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.params.len(),
                values.len()
            )));
        }
        for (p, (name, t)) in self.params.iter().zip(values) {
            if &p.name != name || p.value.shape() != t.shape() {
                return Err(GlamError::Checkpoint(format!(
                    "tensor {name} {:?} does not match {} {:?}",
                    t.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
        }
        for (p, (_, t)) in self.params.iter_mut().zip(values) {
            p.value = t.clone();
        }
        Ok(())
    }

    /// Registers every parameter as a leaf, in storage order.
    pub fn register(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.value.clone())).collect()
    }

    pub fn forward(&self, tape: &mut Tape<T>, batch: &TokenBatch) -> Result<(ForwardOutput, Vec<Var>)> {
        let vars = self.register(tape);
        let out = self.forward_with(tape, &vars, batch)?;
        Ok((out, vars))
    }

    /// Forward pass using caller-supplied parameter handles (same order as
    /// [`GlamModel::params`]).
    pub fn forward_with(&self, tape: &mut Tape<T>, vars: &[Var], batch: &TokenBatch) -> Result<ForwardOutput> {
        let cfg = &self.config;
        if vars.len() != self.params.len() {
            return Err(GlamError::Shape { op: "forward params", lhs: vec![vars.len()], rhs: vec![self.params.len()] });
        }
        if let Some(&bad) = batch.ids.iter().find(|&&t| t as usize >= cfg.vocab) {
            return Err(GlamError::Range { what: "token id", value: bad as usize, limit: cfg.vocab });
        }
        let (rows, seq) = (batch.rows, batch.cols);
        let tokens = rows * seq;
        let ids: Vec<usize> = batch.ids.iter().map(|&t| t as usize).collect();
        let geom = AttentionGeometry {
            batch: rows,
            seq,
            heads: cfg.n_heads,
            d_head: cfg.d_head,
            bucket_of_distance: bucket_table(seq, cfg.rel_buckets, cfg.rel_max_distance),
            buckets: cfg.rel_buckets,
        };
        let eps = T::of(NORM_EPS);
        // position-major fill keeps expert capacity causal
        let fill_order: Vec<usize> = (0..seq).flat_map(|s| (0..rows).map(move |r| r * seq + s)).collect();

        let mut x = tape.gather_rows(vars[self.embedding], &ids)?;
        let mut aux_terms = Vec::new();
        let mut stats = Vec::new();
        for layer in &self.layers {
            let h = tape.rms_norm(x, vars[layer.attn_norm], eps)?;
            let q = tape.matmul(h, vars[layer.wq])?;
            let k = tape.matmul(h, vars[layer.wk])?;
            let v = tape.matmul(h, vars[layer.wv])?;
            let a = tape.causal_attention(q, k, v, vars[layer.rel_bias], geom.clone())?;
            let o = tape.matmul(a, vars[layer.wo])?;
            x = tape.add(x, o)?;

            let h = tape.rms_norm(x, vars[layer.ffn_norm], eps)?;
            let f = match &layer.ffn {
                FfnLayout::Dense { wa, wb, wout } => geglu_on_tape(tape, h, vars[*wa], vars[*wb], vars[*wout])?,
                FfnLayout::Moe { gate, experts } => {
                    let moe_vars = MoeVars {
                        gate: vars[*gate],
                        experts: experts.iter().map(|&(i, o)| (vars[i], vars[o])).collect(),
                    };
                    let cap = capacity(tokens, experts.len(), cfg.capacity_factor)?;
                    // dropped tokens keep only the residual path
                    let out = moe_layer(tape, h, &moe_vars, cap, Some(&fill_order), false)?;
                    aux_terms.push(out.aux_loss);
                    stats.push(out.routing.stats);
                    out.output
                }
            };
            x = tape.add(x, f)?;
        }
        let x = tape.rms_norm(x, vars[self.final_norm], eps)?;
        let logits = tape.matmul_bt(x, vars[self.embedding])?;
        let logits = tape.reshape(logits, &[rows, seq, cfg.vocab])?;

        let aux_loss = match aux_terms.split_first() {
            None => tape.scalar(T::zero()),
            Some((&first, rest)) => {
                let mut acc = first;
                for &t in rest {
                    acc = tape.add(acc, t)?;
                }
                tape.scale(acc, T::one() / T::of(aux_terms.len() as f64))
            }
        };
        Ok(ForwardOutput { logits, aux_loss, stats })
    }

    /// Logits only, as a plain tensor.
    pub fn logits(&self, batch: &TokenBatch) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let (out, _) = self.forward(&mut tape, batch)?;
        Ok(tape.value(out.logits).clone())
    }
}
