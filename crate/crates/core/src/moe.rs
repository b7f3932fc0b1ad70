//! Sparsely activated mixture-of-experts feed-forward layer.
//!
//! A softmax gate picks the two most probable experts per token. Each expert
//! accepts at most `C = ceil(capacity_factor · 2T / E)` tokens per call.
//! Buffers fill token by token in a caller-chosen order (first choice, then
//! second choice of each token); the model uses position-major order so a
//! token's routing never depends on later positions. A token that overflows
//! an expert loses that expert's term (the remaining weight is not
//! renormalized); a token that overflows both is counted as dropped.

use serde::{Deserialize, Serialize};

use crate::error::{GlamError, Result};
use crate::numerics::{gelu, Tape, Tensor, Var};
use crate::scalar::Scalar;

pub const DEFAULT_CAPACITY_FACTOR: f64 = 1.25;

/// Routing result for one token.
#[derive(Clone, Debug, PartialEq)]
pub struct GateDecision<T> {
    pub expert_indices: [usize; 2],
    pub combine_weights: [T; 2],
    pub gate_probs: Vec<T>,
}

/// Per-call expert load statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispatchStats {
    /// Top-1 assignments per expert, before capacity is applied.
    pub tokens_per_expert: Vec<usize>,
    /// Mean gate probability per expert over the tokens of the call.
    pub mean_gate_prob: Vec<f64>,
    pub dropped_tokens: usize,
    pub total_tokens: usize,
}

impl DispatchStats {
    pub fn num_experts(&self) -> usize {
        self.tokens_per_expert.len()
    }

    /// Fraction of tokens whose first choice is each expert.
    pub fn fractions(&self) -> Vec<f64> {
        let total = self.total_tokens.max(1) as f64;
        self.tokens_per_expert.iter().map(|&c| c as f64 / total).collect()
    }

    pub fn max_fraction(&self) -> f64 {
        self.fractions().into_iter().fold(0.0, f64::max)
    }
}

/// `E · Σₑ fₑ · mₑ`; equals 1 under perfect balance.
pub fn aux_load_balance_loss(stats: &DispatchStats) -> Result<f64> {
    if stats.total_tokens == 0 {
        return Err(GlamError::config("aux loss needs at least one token"));
    }
    let e = stats.num_experts() as f64;
    Ok(e * stats.fractions().iter().zip(&stats.mean_gate_prob).map(|(f, m)| f * m).sum::<f64>())
}

/// Top-2 selection from a gate distribution, ties to the lower index.
pub fn decide<T: Scalar>(probs: &[T]) -> GateDecision<T> {
    let n = probs.len();
    assert!(n >= 1, "gate needs at least one expert");
    if n == 1 {
        return GateDecision {
            expert_indices: [0, 0],
            combine_weights: [T::one(), T::zero()],
            gate_probs: probs.to_vec(),
        };
    }
    let mut first = 0;
    for e in 1..n {
        if probs[e] > probs[first] {
            first = e;
        }
    }
    let mut second = if first == 0 { 1 } else { 0 };
    for e in 0..n {
        if e != first && probs[e] > probs[second] {
            second = e;
        }
    }
    let total = probs[first] + probs[second];
    GateDecision {
        expert_indices: [first, second],
        combine_weights: [probs[first] / total, probs[second] / total],
        gate_probs: probs.to_vec(),
    }
}

/// Gate one token representation `x` (length M) with `gate_weights: [M × E]`.
pub fn gate_top2<T: Scalar>(x: &[T], gate_weights: &Tensor<T>) -> Result<GateDecision<T>> {
    let (m, _) = gate_weights.dims2()?;
    if x.len() != m {
        return Err(GlamError::Shape { op: "gate_top2", lhs: vec![x.len()], rhs: gate_weights.shape().to_vec() });
    }
    let logits = Tensor::new(&[1, m], x.to_vec())?.matmul(gate_weights)?;
    Ok(decide(logits.softmax(1)?.data()))
}

pub fn capacity(tokens: usize, experts: usize, capacity_factor: f64) -> Result<usize> {
    if !(capacity_factor >= 1.0) {
        return Err(GlamError::config(format!("capacity_factor must be >= 1, got {capacity_factor}")));
    }
    Ok((capacity_factor * 2.0 * tokens as f64 / experts as f64).ceil() as usize)
}

/// Capacity-constrained assignment of tokens to experts.
#[derive(Clone, Debug)]
pub struct Routing<T> {
    pub decisions: Vec<GateDecision<T>>,
    /// `kept[t][slot]`: whether slot `slot` of token `t` was accepted.
    pub kept: Vec<[bool; 2]>,
    /// Accepted (token, slot) pairs per expert, in acceptance order.
    pub assignments: Vec<Vec<(usize, usize)>>,
    pub capacity: usize,
    pub stats: DispatchStats,
}

impl<T: Scalar> Routing<T> {
    pub fn dropped(&self, token: usize) -> bool {
        let k = self.kept[token];
        !k[0] && !k[1]
    }

    /// Effective output weights `(expert, weight)` of a token after capacity.
    pub fn effective_weights(&self, token: usize) -> Vec<(usize, T)> {
        let d = &self.decisions[token];
        (0..self.slots())
            .filter(|&s| self.kept[token][s])
            .map(|s| (d.expert_indices[s], d.combine_weights[s]))
            .collect()
    }

    fn slots(&self) -> usize {
        if self.stats.num_experts() == 1 {
            1
        } else {
            2
        }
    }
}

/// Routes `T` tokens given their gate distributions `probs: [T × E]`,
/// filling expert buffers in token order.
pub fn route<T: Scalar>(probs: &Tensor<T>, capacity: usize) -> Result<Routing<T>> {
    let (tokens, _) = probs.dims2()?;
    let order: Vec<usize> = (0..tokens).collect();
    route_in_order(probs, capacity, &order)
}

/// As [`route`], filling buffers in the token order given by `order` (a
/// permutation of `0..T`).
pub fn route_in_order<T: Scalar>(probs: &Tensor<T>, capacity: usize, order: &[usize]) -> Result<Routing<T>> {
    let (tokens, experts) = probs.dims2()?;
    let mut seen = vec![false; tokens];
    if order.len() != tokens || !order.iter().all(|&t| t < tokens && !std::mem::replace(&mut seen[t], true)) {
        return Err(GlamError::config("routing order must be a permutation of the tokens"));
    }
    let decisions: Vec<GateDecision<T>> = (0..tokens).map(|t| decide(probs.row(t))).collect();
    let slots = if experts == 1 { 1 } else { 2 };

    let mut load = vec![0usize; experts];
    let mut kept = vec![[false; 2]; tokens];
    let mut assignments = vec![Vec::new(); experts];
    for &t in order {
        let d = &decisions[t];
        for slot in 0..slots {
            let e = d.expert_indices[slot];
            if load[e] < capacity {
                load[e] += 1;
                kept[t][slot] = true;
                assignments[e].push((t, slot));
            }
        }
    }

    let mut tokens_per_expert = vec![0usize; experts];
    let mut mean_gate_prob = vec![0f64; experts];
    for d in &decisions {
        tokens_per_expert[d.expert_indices[0]] += 1;
        for (m, p) in mean_gate_prob.iter_mut().zip(&d.gate_probs) {
            *m += p.as_f64();
        }
    }
    mean_gate_prob.iter_mut().for_each(|m| *m /= tokens.max(1) as f64);
    let dropped_tokens = kept.iter().filter(|k| !k[0] && !k[1]).count();

    Ok(Routing {
        decisions,
        kept,
        assignments,
        capacity,
        stats: DispatchStats { tokens_per_expert, mean_gate_prob, dropped_tokens, total_tokens: tokens },
    })
}

/// Plain two-matrix expert: `gelu(x · w_in) · w_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertParams<T> {
    pub w_in: Tensor<T>,
    pub w_out: Tensor<T>,
}

impl<T: Scalar> ExpertParams<T> {
    pub fn apply(&self, rows: &Tensor<T>) -> Result<Tensor<T>> {
        gelu(&rows.matmul(&self.w_in)?).matmul(&self.w_out)
    }
}

/// Inference-only MoE with an arbitrary expert function over a row batch.
/// Fully dropped tokens pass through unchanged.
pub fn moe_forward_with<T, F>(
    tokens: &Tensor<T>,
    gate_weights: &Tensor<T>,
    capacity: usize,
    expert_fn: F,
) -> Result<(Tensor<T>, Routing<T>)>
where
    T: Scalar,
    F: Fn(usize, &Tensor<T>) -> Result<Tensor<T>>,
{
    let (n, m) = tokens.dims2()?;
    let probs = tokens.matmul(gate_weights)?.softmax(1)?;
    let routing = route(&probs, capacity)?;
    let mut out = vec![T::zero(); n * m];
    for (e, assigned) in routing.assignments.iter().enumerate() {
        if assigned.is_empty() {
            continue;
        }
        let mut rows = Vec::with_capacity(assigned.len() * m);
        for &(t, _) in assigned {
            rows.extend_from_slice(tokens.row(t));
        }
        let y = expert_fn(e, &Tensor::new(&[assigned.len(), m], rows)?)?;
        if y.shape() != [assigned.len(), m] {
            return Err(GlamError::Shape {
                op: "expert output",
                lhs: y.shape().to_vec(),
                rhs: vec![assigned.len(), m],
            });
        }
        for (i, &(t, slot)) in assigned.iter().enumerate() {
            let w = routing.decisions[t].combine_weights[slot];
            for j in 0..m {
                out[t * m + j] += w * y.row(i)[j];
            }
        }
    }
    for t in 0..n {
        if routing.dropped(t) {
            out[t * m..(t + 1) * m].copy_from_slice(tokens.row(t));
        }
    }
    Ok((Tensor::new(&[n, m], out)?, routing))
}

/// Inference-only MoE over `[T × M]` tokens.
pub fn moe_forward<T: Scalar>(
    tokens: &Tensor<T>,
    experts: &[ExpertParams<T>],
    gate_weights: &Tensor<T>,
    capacity_factor: f64,
) -> Result<(Tensor<T>, DispatchStats)> {
    let (n, _) = tokens.dims2()?;
    let cap = capacity(n, experts.len(), capacity_factor)?;
    let (out, routing) = moe_forward_with(tokens, gate_weights, cap, |e, rows| experts[e].apply(rows))?;
    Ok((out, routing.stats))
}

/// Tape handles for one MoE layer's parameters.
#[derive(Clone, Debug)]
pub struct MoeVars {
    /// `[M × E]`
    pub gate: Var,
    /// `(w_in [M × H], w_out [H × M])` per expert.
    pub experts: Vec<(Var, Var)>,
}

pub struct MoeOutput<T> {
    /// Capacity-respecting weighted sum of expert outputs; zero rows for
    /// fully dropped tokens unless pass-through was requested.
    pub output: Var,
    /// Differentiable auxiliary load-balancing loss.
    pub aux_loss: Var,
    pub routing: Routing<T>,
}

/// Differentiable MoE layer. Gradients reach the gate through the combine
/// weights and the mean gate probabilities of the auxiliary loss.
pub fn moe_layer<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    vars: &MoeVars,
    capacity: usize,
    order: Option<&[usize]>,
    passthrough_dropped: bool,
) -> Result<MoeOutput<T>> {
    let shape = tape.shape(x).to_vec();
    let [n, m] = shape[..] else {
        return Err(GlamError::Shape { op: "moe_layer", lhs: shape, rhs: vec![0, 0] });
    };
    let experts = vars.experts.len();
    let logits = tape.matmul(x, vars.gate)?;
    let probs = tape.softmax(logits, 1)?;
    let routing = match order {
        Some(order) => route_in_order(tape.value(probs), capacity, order)?,
        None => route(tape.value(probs), capacity)?,
    };

    let mut output: Option<Var> = None;
    for (e, assigned) in routing.assignments.iter().enumerate() {
        if assigned.is_empty() {
            continue;
        }
        let rows: Vec<usize> = assigned.iter().map(|&(t, _)| t).collect();
        let xe = tape.gather_rows(x, &rows)?;
        let h = tape.matmul(xe, vars.experts[e].0)?;
        let h = tape.gelu(h);
        let ye = tape.matmul(h, vars.experts[e].1)?;

        let num: Vec<usize> = rows.iter().map(|&t| t * experts + e).collect();
        let first: Vec<usize> = rows.iter().map(|&t| t * experts + routing.decisions[t].expert_indices[0]).collect();
        let num = tape.gather(probs, &num)?;
        let mut denom = tape.gather(probs, &first)?;
        if experts > 1 {
            let second: Vec<usize> =
                rows.iter().map(|&t| t * experts + routing.decisions[t].expert_indices[1]).collect();
            let second = tape.gather(probs, &second)?;
            denom = tape.add(denom, second)?;
        }
        let w = tape.div(num, denom)?;
        let weighted = tape.mul_rows(ye, w)?;
        let scattered = tape.scatter_add_rows(weighted, &rows, n)?;
        output = Some(match output {
            Some(acc) => tape.add(acc, scattered)?,
            None => scattered,
        });
    }
    let mut output = match output {
        Some(o) => o,
        None => tape.leaf(Tensor::zeros(&[n, m])),
    };
    if passthrough_dropped {
        let dropped: Vec<usize> = (0..n).filter(|&t| routing.dropped(t)).collect();
        if !dropped.is_empty() {
            let rows = tape.gather_rows(x, &dropped)?;
            let back = tape.scatter_add_rows(rows, &dropped, n)?;
            output = tape.add(output, back)?;
        }
    }

    let mean_prob = tape.mean_rows(probs)?;
    let fractions = Tensor::new(&[experts], routing.stats.fractions().into_iter().map(T::of).collect())?;
    let fm = tape.mul_const(mean_prob, &fractions)?;
    let total = tape.sum(fm);
    let aux_loss = tape.scale(total, T::of(experts as f64));

    Ok(MoeOutput { output, aux_loss, routing })
}
