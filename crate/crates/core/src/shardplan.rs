//! 2D sharding planner for the MoE layers on an `X × Y` device mesh.
//!
//! Expert weights `[E, M, H]` (and `[E, H, M]`) are split with experts over
//! X and the hidden dimension over Y; activations `[B, S, M]` are split with
//! the batch over X and the model dimension over Y. Blocks are contiguous and
//! assigned lowest index to lowest device coordinate, so expert `i` lives in
//! the same mesh column in every MoE layer. Nothing is replicated or padded:
//! shapes that do not divide evenly are rejected.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{GlamError, Result};
use crate::model::ModelConfig;
use crate::moe::{capacity, route, ExpertParams};
use crate::numerics::{gelu, Tensor};
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mesh {
    pub x: usize,
    pub y: usize,
}

impl Mesh {
    pub fn new(x: usize, y: usize) -> Result<Self> {
        if x == 0 || y == 0 {
            return Err(GlamError::Plan(format!("mesh axes must be at least 1, got ({x}, {y})")));
        }
        Ok(Self { x, y })
    }

    /// Device count N.
    pub fn devices(&self) -> usize {
        self.x * self.y
    }

    /// Row-major device id of coordinate `(x, y)`.
    pub fn device_id(&self, x: usize, y: usize) -> usize {
        x * self.y + y
    }

    pub fn coords(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.x).flat_map(move |x| (0..self.y).map(move |y| (x, y)))
    }
}

/// Half-open index box `[start, end)` per dimension.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexBox {
    pub start: Vec<usize>,
    pub end: Vec<usize>,
}

impl IndexBox {
    pub fn volume(&self) -> u64 {
        self.start.iter().zip(&self.end).map(|(&s, &e)| e.saturating_sub(s) as u64).product()
    }

    pub fn contains(&self, idx: &[usize]) -> bool {
        idx.iter().zip(self.start.iter().zip(&self.end)).all(|(&i, (&s, &e))| s <= i && i < e)
    }

    pub fn intersect(&self, other: &IndexBox) -> Option<IndexBox> {
        let start: Vec<usize> = self.start.iter().zip(&other.start).map(|(&a, &b)| a.max(b)).collect();
        let end: Vec<usize> = self.end.iter().zip(&other.end).map(|(&a, &b)| a.min(b)).collect();
        start.iter().zip(&end).all(|(s, e)| s < e).then_some(IndexBox { start, end })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shard {
    /// Mesh coordinate `(x, y)`.
    pub device: (usize, usize),
    pub block: IndexBox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorPlan {
    pub shape: Vec<usize>,
    pub shards: Vec<Shard>,
}

impl TensorPlan {
    pub fn elements(&self) -> u64 {
        self.shape.iter().map(|&d| d as u64).product()
    }
}

/// Dimensions the planner needs from a model configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanDims {
    pub experts: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub batch: usize,
    pub seq_len: usize,
    pub moe_layers: usize,
}

impl PlanDims {
    pub fn from_config(config: &ModelConfig) -> Self {
        Self {
            experts: config.experts,
            d_model: config.d_model,
            d_ff: config.expert_width(),
            batch: config.batch,
            seq_len: config.seq_len,
            moe_layers: config.moe_layers(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShardPlan {
    pub mesh: Mesh,
    pub dims: PlanDims,
    pub tensors: BTreeMap<String, TensorPlan>,
    /// Mesh column (x coordinate) of each expert, shared by all MoE layers.
    pub expert_column: Vec<usize>,
}

fn divides(what: &str, dim: (&str, usize), axis: (&str, usize)) -> Result<usize> {
    if dim.1 % axis.1 != 0 || dim.1 < axis.1 {
        return Err(GlamError::Plan(format!(
            "{what}: {}={} is not divisible by mesh {}={}",
            dim.0, dim.1, axis.0, axis.1
        )));
    }
    Ok(dim.1 / axis.1)
}

pub fn plan(config: &ModelConfig, mesh: Mesh) -> Result<ShardPlan> {
    plan_dims(PlanDims::from_config(config), mesh)
}

pub fn plan_dims(dims: PlanDims, mesh: Mesh) -> Result<ShardPlan> {
    Mesh::new(mesh.x, mesh.y)?;
    let PlanDims { experts: e, d_model: m, d_ff: h, batch: b, seq_len: s, moe_layers } = dims;
    if [e, m, h, b, s].contains(&0) {
        return Err(GlamError::Plan("all tensor dimensions must be positive".into()));
    }
    let e_blk = divides("expert weights (no replication)", ("E", e), ("X", mesh.x))?;
    let h_blk = divides("expert weights", ("H", h), ("Y", mesh.y))?;
    let m_blk = divides("activations", ("M", m), ("Y", mesh.y))?;

    // Batch over X; with fewer rows than columns each row is split along S.
    let act_block = |x: usize| -> Result<((usize, usize), (usize, usize))> {
        if b % mesh.x == 0 {
            let bb = b / mesh.x;
            Ok(((x * bb, (x + 1) * bb), (0, s)))
        } else if mesh.x % b == 0 && s % (mesh.x / b) == 0 {
            let per_row = mesh.x / b;
            let ss = s / per_row;
            let part = x % per_row;
            Ok(((x / per_row, x / per_row + 1), (part * ss, (part + 1) * ss)))
        } else {
            Err(GlamError::Plan(format!("activations: B={b} (S={s}) cannot be split across mesh X={}", mesh.x)))
        }
    };

    let mut tensors = BTreeMap::new();
    for layer in 0..moe_layers {
        let mut w_in = Vec::new();
        let mut w_out = Vec::new();
        for (x, y) in mesh.coords() {
            let (e0, e1) = (x * e_blk, (x + 1) * e_blk);
            let (h0, h1) = (y * h_blk, (y + 1) * h_blk);
            w_in.push(Shard { device: (x, y), block: IndexBox { start: vec![e0, 0, h0], end: vec![e1, m, h1] } });
            w_out.push(Shard { device: (x, y), block: IndexBox { start: vec![e0, h0, 0], end: vec![e1, h1, m] } });
        }
        tensors.insert(format!("moe{layer}.w_in"), TensorPlan { shape: vec![e, m, h], shards: w_in });
        tensors.insert(format!("moe{layer}.w_out"), TensorPlan { shape: vec![e, h, m], shards: w_out });
    }
    let mut act = Vec::new();
    for (x, y) in mesh.coords() {
        let ((b0, b1), (s0, s1)) = act_block(x)?;
        act.push(Shard {
            device: (x, y),
            block: IndexBox { start: vec![b0, s0, y * m_blk], end: vec![b1, s1, (y + 1) * m_blk] },
        });
    }
    tensors.insert("activations".into(), TensorPlan { shape: vec![b, s, m], shards: act });
    Ok(ShardPlan { mesh, dims, tensors, expert_column: (0..e).map(|i| i / e_blk).collect() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Overlap {
        tensor: String,
        devices: [(usize, usize); 2],
        region: IndexBox,
    },
    Gap {
        tensor: String,
        /// First uncovered index in row-major order.
        at: Vec<usize>,
        missing_elements: u64,
    },
    OutOfBounds {
        tensor: String,
        device: (usize, usize),
        block: IndexBox,
    },
}

/// Tensors up to this many elements are checked element by element.
pub const EXHAUSTIVE_LIMIT: u64 = 1 << 16;

/// Checks that each tensor's shards are disjoint and cover it exactly.
pub fn validate(plan: &ShardPlan) -> std::result::Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    for (name, tp) in &plan.tensors {
        let mut in_bounds = Vec::new();
        for shard in &tp.shards {
            let b = &shard.block;
            let ok = b.start.len() == tp.shape.len()
                && b.end.len() == tp.shape.len()
                && b.start.iter().zip(&b.end).zip(&tp.shape).all(|((&s, &e), &d)| s <= e && e <= d);
            if ok {
                in_bounds.push(shard);
            } else {
                violations.push(Violation::OutOfBounds {
                    tensor: name.clone(),
                    device: shard.device,
                    block: b.clone(),
                });
            }
        }
        for (i, a) in in_bounds.iter().enumerate() {
            for b in &in_bounds[i + 1..] {
                if let Some(region) = a.block.intersect(&b.block) {
                    violations.push(Violation::Overlap { tensor: name.clone(), devices: [a.device, b.device], region });
                }
            }
        }
        let gap = if tp.elements() <= EXHAUSTIVE_LIMIT {
            exhaustive_gap(&tp.shape, &in_bounds)
        } else {
            compressed_gap(&tp.shape, &in_bounds)
        };
        if let Some((at, missing_elements)) = gap {
            violations.push(Violation::Gap { tensor: name.clone(), at, missing_elements });
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

fn unravel(mut flat: u64, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for d in (0..shape.len()).rev() {
        idx[d] = (flat % shape[d] as u64) as usize;
        flat /= shape[d] as u64;
    }
    idx
}

fn exhaustive_gap(shape: &[usize], shards: &[&Shard]) -> Option<(Vec<usize>, u64)> {
    let total: u64 = shape.iter().map(|&d| d as u64).product();
    let mut first = None;
    let mut missing = 0;
    for flat in 0..total {
        let idx = unravel(flat, shape);
        if !shards.iter().any(|s| s.block.contains(&idx)) {
            missing += 1;
            first.get_or_insert(idx);
        }
    }
    first.map(|at| (at, missing))
}

/// Coordinate-compressed sweep: every cell between consecutive shard
/// boundaries is either fully covered or fully uncovered.
fn compressed_gap(shape: &[usize], shards: &[&Shard]) -> Option<(Vec<usize>, u64)> {
    let cuts: Vec<Vec<usize>> = (0..shape.len())
        .map(|d| {
            let mut c = vec![0, shape[d]];
            for s in shards {
                c.push(s.block.start[d]);
                c.push(s.block.end[d]);
            }
            c.sort_unstable();
            c.dedup();
            c
        })
        .collect();
    let cells: Vec<usize> = cuts.iter().map(|c| c.len() - 1).collect();
    let n_cells: u64 = cells.iter().map(|&c| c as u64).product();
    let mut first = None;
    let mut missing = 0;
    for flat in 0..n_cells {
        let cell = unravel(flat, &cells);
        let lo: Vec<usize> = cell.iter().enumerate().map(|(d, &c)| cuts[d][c]).collect();
        if !shards.iter().any(|s| s.block.contains(&lo)) {
            let vol: u64 = cell.iter().enumerate().map(|(d, &c)| (cuts[d][c + 1] - cuts[d][c]) as u64).product();
            missing += vol;
            first = match first {
                None => Some(lo),
                Some(f) => Some(if lo < f { lo } else { f }),
            };
        }
    }
    first.map(|at| (at, missing))
}

/// Element counts crossing device boundaries in one MoE all-to-all.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommVolume {
    pub dispatch_elements: f64,
    pub combine_elements: f64,
}

/// Expected traffic under uniform routing: each token sends its M-vector to
/// two experts, each on a different mesh column with probability `1 − 1/X`.
pub fn comm_volume(plan: &ShardPlan) -> CommVolume {
    let d = &plan.dims;
    let tokens = (d.batch * d.seq_len) as f64;
    let dispatch = 2.0 * tokens * d.d_model as f64 * (1.0 - 1.0 / plan.mesh.x as f64);
    CommVolume { dispatch_elements: dispatch, combine_elements: dispatch }
}

/// Mesh column holding token `(b, s)`'s activations.
pub fn token_column(plan: &ShardPlan, b: usize, s: usize) -> usize {
    let act = &plan.tensors["activations"];
    act.shards
        .iter()
        .find(|sh| sh.block.contains(&[b, s, sh.block.start[2]]))
        .map(|sh| sh.device.0)
        .expect("planner covers every token")
}

/// Dispatch elements for one batch routed by uniformly random distinct
/// expert pairs.
pub fn sample_dispatch(plan: &ShardPlan, rng: &mut Rng) -> f64 {
    let d = &plan.dims;
    let mut crossing = 0u64;
    for b in 0..d.batch {
        for s in 0..d.seq_len {
            let home = token_column(plan, b, s);
            let first = rng.random_range(0..d.experts);
            let mut picks = vec![first];
            if d.experts > 1 {
                let mut second = rng.random_range(0..d.experts - 1);
                if second >= first {
                    second += 1;
                }
                picks.push(second);
            } else {
                picks.push(first);
            }
            crossing += picks.iter().filter(|&&e| plan.expert_column[e] != home).count() as u64;
        }
    }
    (crossing * d.d_model as u64) as f64
}

/// Mean and standard error of [`sample_dispatch`] over `trials` batches.
pub fn monte_carlo_dispatch(plan: &ShardPlan, trials: usize, rng: &mut Rng) -> (f64, f64) {
    let samples: Vec<f64> = (0..trials).map(|_| sample_dispatch(plan, rng)).collect();
    let n = trials as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Bytes held by each device, indexed by [`Mesh::device_id`].
pub fn per_device_memory(plan: &ShardPlan, bytes_per_element: u64) -> Vec<u64> {
    let mut bytes = vec![0; plan.mesh.devices()];
    for tp in plan.tensors.values() {
        for shard in &tp.shards {
            bytes[plan.mesh.device_id(shard.device.0, shard.device.1)] += shard.block.volume() * bytes_per_element;
        }
    }
    bytes
}

fn column_slice<T: Scalar>(t: &Tensor<T>, lo: usize, hi: usize) -> Result<Tensor<T>> {
    let (r, _) = t.dims2()?;
    let mut out = Vec::with_capacity(r * (hi - lo));
    for i in 0..r {
        out.extend_from_slice(&t.row(i)[lo..hi]);
    }
    Tensor::new(&[r, hi - lo], out)
}

fn row_slice<T: Scalar>(t: &Tensor<T>, lo: usize, hi: usize) -> Result<Tensor<T>> {
    let (_, c) = t.dims2()?;
    Tensor::new(&[hi - lo, c], t.data()[lo * c..hi * c].to_vec())
}

/// Runs one MoE layer shard by shard: device `(x, y)` applies the hidden
/// slice `y` of the experts in column `x` to the tokens routed there, and
/// the partial products are summed over Y. Routing is computed once on the
/// full token set, as in [`crate::moe::moe_forward`].
pub fn sharded_moe_forward<T: Scalar>(
    plan: &ShardPlan,
    tokens: &Tensor<T>,
    experts: &[ExpertParams<T>],
    gate_weights: &Tensor<T>,
    capacity_factor: f64,
) -> Result<Tensor<T>> {
    let (n, m) = tokens.dims2()?;
    if experts.len() != plan.dims.experts {
        return Err(GlamError::Plan(format!("plan has {} experts, got {}", plan.dims.experts, experts.len())));
    }
    let cap = capacity(n, experts.len(), capacity_factor)?;
    let probs = tokens.matmul(gate_weights)?.softmax(1)?;
    let routing = route(&probs, cap)?;
    let w_in = &plan.tensors.get("moe0.w_in").ok_or_else(|| GlamError::Plan("plan has no MoE layer".into()))?;
    let mut out = vec![T::zero(); n * m];
    for shard in &w_in.shards {
        let b = &shard.block;
        let (h0, h1) = (b.start[2], b.end[2]);
        for e in b.start[0]..b.end[0] {
            let assigned = &routing.assignments[e];
            if assigned.is_empty() {
                continue;
            }
            let mut rows = Vec::with_capacity(assigned.len() * m);
            for &(t, _) in assigned {
                rows.extend_from_slice(tokens.row(t));
            }
            let rows = Tensor::new(&[assigned.len(), m], rows)?;
            let hidden = gelu(&rows.matmul(&column_slice(&experts[e].w_in, h0, h1)?)?);
            let partial = hidden.matmul(&row_slice(&experts[e].w_out, h0, h1)?)?;
            for (i, &(t, slot)) in assigned.iter().enumerate() {
                let w = routing.decisions[t].combine_weights[slot];
                for j in 0..m {
                    out[t * m + j] += w * partial.row(i)[j];
                }
            }
        }
    }
    for t in 0..n {
        if routing.dropped(t) {
            out[t * m..(t + 1) * m].copy_from_slice(tokens.row(t));
        }
    }
    Tensor::new(&[n, m], out)
}

/// Human-readable per-device summary.
pub fn summary_table(plan: &ShardPlan, bytes_per_element: u64) -> String {
    let mem = per_device_memory(plan, bytes_per_element);
    let mut out = format!(
        "mesh {}x{} ({} devices), {} tensors\n{:>8} {:>8} {:>16}\n",
        plan.mesh.x,
        plan.mesh.y,
        plan.mesh.devices(),
        plan.tensors.len(),
        "x",
        "y",
        "bytes"
    );
    for (x, y) in plan.mesh.coords() {
        out.push_str(&format!("{x:>8} {y:>8} {:>16}\n", mem[plan.mesh.device_id(x, y)]));
    }
    out
}
