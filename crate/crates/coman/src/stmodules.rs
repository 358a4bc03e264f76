//! Spatio-temporal conditioning modules.
//!
//! Embedding tables with a reserved out-of-vocabulary row, equal-frequency
//! discretization for numeric features, the temporal activation and
//! temporal target attention blocks, the attention head that generates
//! four-parameter curve parameters from fused context, the adaptive
//! activation gate head, and a scaled-down progressive layered extraction
//! backbone for the two simulator tasks.

use crate::diffcore::{Dropout, Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::monolayer::fpm_squash_graph;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Embedding width for categorical id features.
pub const ID_EMBED_DIM: usize = 8;
/// Embedding width for discretized numeric features.
pub const NUM_EMBED_DIM: usize = 4;
/// Equal-frequency bin count for numeric features.
pub const NUM_BINS: usize = 16;

/// Meal period of the day. Boundaries are fixed:
/// breakfast [04:00, 10:00), lunch [10:00, 14:00),
/// afternoon tea [14:00, 17:00), dinner [17:00, 20:00),
/// midnight snack [20:00, 04:00).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Period {
    Breakfast,
    Lunch,
    AfternoonTea,
    Dinner,
    MidnightSnack,
}

pub const ALL_PERIODS: [Period; 5] = [
    Period::Breakfast,
    Period::Lunch,
    Period::AfternoonTea,
    Period::Dinner,
    Period::MidnightSnack,
];

impl Period {
    pub fn from_hour(hour: u32) -> Period {
        match hour % 24 {
            4..=9 => Period::Breakfast,
            10..=13 => Period::Lunch,
            14..=16 => Period::AfternoonTea,
            17..=19 => Period::Dinner,
            _ => Period::MidnightSnack,
        }
    }

    pub fn index(&self) -> usize {
        ALL_PERIODS.iter().position(|p| p == self).unwrap()
    }

    pub fn from_index(i: usize) -> Period {
        ALL_PERIODS[i % 5]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Period::Breakfast => "breakfast",
            Period::Lunch => "lunch",
            Period::AfternoonTea => "afternoon_tea",
            Period::Dinner => "dinner",
            Period::MidnightSnack => "midnight_snack",
        }
    }
}

/// Raw spatio-temporal context of one request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpatioTemporalContext {
    pub period: Period,
    pub city_id: u32,
    pub district_id: u32,
    pub aoi_id: u32,
    pub weekday: u32,
    pub holiday: bool,
}

/// Equal-frequency bin edges for one numeric feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileBins {
    edges: Vec<f64>,
}

impl QuantileBins {
    /// Fit edges so each of `n_bins` buckets holds roughly the same number
    /// of training values.
    pub fn fit(values: &[f64], n_bins: usize) -> Result<Self> {
        if values.is_empty() || n_bins < 2 {
            return Err(Error::InvalidParam(
                "quantile bins need data and at least 2 bins".into(),
            ));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut edges = Vec::with_capacity(n_bins - 1);
        for k in 1..n_bins {
            let pos = k * sorted.len() / n_bins;
            edges.push(sorted[pos.min(sorted.len() - 1)]);
        }
        edges.dedup();
        Ok(QuantileBins { edges })
    }

    pub fn bin(&self, v: f64) -> usize {
        self.edges.partition_point(|&e| e <= v)
    }

    pub fn n_bins(&self) -> usize {
        self.edges.len() + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableId(pub usize);

struct EmbeddingTable {
    vocab: usize,
    dim: usize,
    param: ParamId,
}

/// Named embedding tables; row 0 of every table is the reserved
/// out-of-vocabulary row, known category k lives at row k + 1.
#[derive(Default)]
pub struct EmbeddingSet {
    tables: Vec<EmbeddingTable>,
}

impl EmbeddingSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_table<R: Rng>(
        &mut self,
        store: &mut ParamStore,
        name: &str,
        vocab: usize,
        dim: usize,
        rng: &mut R,
    ) -> TableId {
        let bound = 1.0 / (dim as f64).sqrt();
        let param = store.add(
            format!("embed.{name}"),
            Tensor::rand_uniform(&[vocab + 1, dim], -bound, bound, rng),
        );
        let id = TableId(self.tables.len());
        self.tables.push(EmbeddingTable { vocab, dim, param });
        id
    }

    pub fn dim(&self, table: TableId) -> usize {
        self.tables[table.0].dim
    }

    /// Row index a raw id maps to (out-of-vocabulary ids hit row 0).
    pub fn row_for(&self, table: TableId, id: usize) -> usize {
        let t = &self.tables[table.0];
        if id < t.vocab {
            id + 1
        } else {
            0
        }
    }

    pub fn lookup(
        &self,
        g: &mut Graph,
        leaves: &[NodeId],
        table: TableId,
        ids: &[usize],
    ) -> Result<NodeId> {
        let t = &self.tables[table.0];
        let rows: Vec<usize> = ids.iter().map(|&i| self.row_for(table, i)).collect();
        g.gather(leaves[t.param.0], rows)
    }
}

/// Plain fully connected layer parameters.
#[derive(Debug, Clone, Copy)]
pub struct Fc {
    pub weights: ParamId,
    pub bias: ParamId,
}

impl Fc {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Fc {
        Fc {
            weights: store.add_linear_weight(format!("{name}.w"), fan_in, fan_out, rng),
            bias: store.add_bias(format!("{name}.b"), fan_out),
        }
    }

    pub fn apply(&self, g: &mut Graph, leaves: &[NodeId], x: NodeId) -> Result<NodeId> {
        let h = g.matmul(x, leaves[self.weights.0])?;
        g.add(h, leaves[self.bias.0])
    }
}

/// Core of the temporal activation block once the context has been
/// projected to the attribute width: gate each sample's attribute vector
/// by the sigmoid of their scaled dot product, then add the residual.
pub fn temporal_activation_core(
    g: &mut Graph,
    projected_context: NodeId,
    attributes: NodeId,
) -> Result<NodeId> {
    let d = g.value(attributes).cols();
    if g.value(projected_context).cols() != d {
        return Err(Error::WidthMismatch {
            what: "temporal activation projection",
            expected: d,
            got: g.value(projected_context).cols(),
        });
    }
    let prod = g.mul(projected_context, attributes)?;
    let dot = g.sum_rows(prod);
    let scaled = g.scale(dot, 1.0 / (d as f64).sqrt());
    let gate = g.sigmoid(scaled);
    let gated = g.mul(gate, attributes)?;
    g.add(gated, attributes)
}

/// Temporal activation module: learned projection of the spatio-temporal
/// embedding plus the gating core.
pub struct TemporalActivation {
    proj: Fc,
}

impl TemporalActivation {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_st: usize,
        d_attr: usize,
        rng: &mut R,
    ) -> Self {
        TemporalActivation {
            proj: Fc::new(store, name, d_st, d_attr, rng),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        leaves: &[NodeId],
        e_st: NodeId,
        attributes: NodeId,
    ) -> Result<NodeId> {
        let projected = self.proj.apply(g, leaves, e_st)?;
        temporal_activation_core(g, projected, attributes)
    }
}

/// Apply a per-sample projection matrix stored row-wise:
/// `gen` is [n, d_out*d_in] and x is [n, d_in]; output row i is
/// reshape(gen[i]) . x[i].
fn per_sample_matvec(
    g: &mut Graph,
    gen: NodeId,
    x: NodeId,
    d_in: usize,
    d_out: usize,
) -> Result<NodeId> {
    let mut cols = Vec::with_capacity(d_out);
    for o in 0..d_out {
        let block = g.slice_cols(gen, o * d_in, (o + 1) * d_in)?;
        let prod = g.mul(block, x)?;
        cols.push(g.sum_rows(prod));
    }
    g.concat_all(&cols)
}

/// Output of the temporal target attention block.
pub struct TtaOut {
    pub output: NodeId,
    /// Attention rows over the behavior sequence, [n, len].
    pub attention: Option<NodeId>,
    pub values: Vec<NodeId>,
}

/// Temporal target attention: the query/key/value projections themselves
/// are generated per sample from the spatio-temporal embedding, then a
/// standard scaled dot-product attention runs over the behavior sequence.
pub struct TemporalTargetAttention {
    gen_wq: Fc,
    gen_bq: Fc,
    gen_wk: Fc,
    gen_bk: Fc,
    gen_wv: Fc,
    gen_bv: Fc,
    d_model: usize,
    d_k: usize,
}

impl TemporalTargetAttention {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_st: usize,
        d_model: usize,
        d_k: usize,
        rng: &mut R,
    ) -> Self {
        TemporalTargetAttention {
            gen_wq: Fc::new(store, &format!("{name}.wq"), d_st, d_k * d_model, rng),
            gen_bq: Fc::new(store, &format!("{name}.bq"), d_st, d_k, rng),
            gen_wk: Fc::new(store, &format!("{name}.wk"), d_st, d_k * d_model, rng),
            gen_bk: Fc::new(store, &format!("{name}.bk"), d_st, d_k, rng),
            gen_wv: Fc::new(store, &format!("{name}.wv"), d_st, d_k * d_model, rng),
            gen_bv: Fc::new(store, &format!("{name}.bv"), d_st, d_k, rng),
            d_model,
            d_k,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.d_k
    }

    /// `behavior` holds one [n, d_model] node per sequence position; an
    /// empty sequence yields a zero output (documented degenerate case).
    pub fn forward(
        &self,
        g: &mut Graph,
        leaves: &[NodeId],
        e_q: NodeId,
        behavior: &[NodeId],
        e_st: NodeId,
    ) -> Result<TtaOut> {
        let n = g.value(e_q).rows();
        if behavior.is_empty() {
            let zero = g.leaf(Tensor::zeros(&[n, self.d_k]));
            return Ok(TtaOut {
                output: zero,
                attention: None,
                values: Vec::new(),
            });
        }
        let wq = self.gen_wq.apply(g, leaves, e_st)?;
        let bq = self.gen_bq.apply(g, leaves, e_st)?;
        let wk = self.gen_wk.apply(g, leaves, e_st)?;
        let bk = self.gen_bk.apply(g, leaves, e_st)?;
        let wv = self.gen_wv.apply(g, leaves, e_st)?;
        let bv = self.gen_bv.apply(g, leaves, e_st)?;

        let q_proj = per_sample_matvec(g, wq, e_q, self.d_model, self.d_k)?;
        let q = g.add(q_proj, bq)?;

        let mut logits = Vec::with_capacity(behavior.len());
        let mut values = Vec::with_capacity(behavior.len());
        for &item in behavior {
            let k_proj = per_sample_matvec(g, wk, item, self.d_model, self.d_k)?;
            let k = g.add(k_proj, bk)?;
            let v_proj = per_sample_matvec(g, wv, item, self.d_model, self.d_k)?;
            let v = g.add(v_proj, bv)?;
            let qk = g.mul(q, k)?;
            let dot = g.sum_rows(qk);
            logits.push(g.scale(dot, 1.0 / (self.d_k as f64).sqrt()));
            values.push(v);
        }
        let logit_mat = g.concat_all(&logits)?;
        let attention = g.softmax_rows(logit_mat);
        let mut out: Option<NodeId> = None;
        for (l, &v) in values.iter().enumerate() {
            let a = g.slice_cols(attention, l, l + 1)?;
            let term = g.mul(a, v)?;
            out = Some(match out {
                Some(acc) => g.add(acc, term)?,
                None => term,
            });
        }
        Ok(TtaOut {
            output: out.unwrap(),
            attention: Some(attention),
            values,
        })
    }
}

/// Squashed per-sample four-parameter curve columns, each [n, 1].
pub struct FpmColumns {
    pub w0: NodeId,
    pub w1: NodeId,
    pub w2: NodeId,
    pub w3: NodeId,
}

/// Spatio-temporal attention head generating four-parameter curves from
/// the fused representation: per curve parameter, a weight/bias pair is
/// generated from the spatio-temporal embedding and contracted against a
/// shared projection of the fused vector, then squashed into the valid
/// parameter domain.
pub struct StAttentionHead {
    fused_proj: Fc,
    gen_w: [Fc; 4],
    gen_b: [Fc; 4],
    out_scale: [ParamId; 4],
    out_bias: [ParamId; 4],
    hidden: usize,
    inflection_range: (f64, f64),
}

impl StAttentionHead {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_fused: usize,
        d_st: usize,
        hidden: usize,
        inflection_range: (f64, f64),
        rng: &mut R,
    ) -> Self {
        let gen_w = std::array::from_fn(|i| {
            Fc::new(store, &format!("{name}.w{i}"), d_st, hidden, rng)
        });
        let gen_b =
            std::array::from_fn(|i| Fc::new(store, &format!("{name}.bias{i}"), d_st, 1, rng));
        let out_scale =
            std::array::from_fn(|i| store.add(format!("{name}.scale{i}"), Tensor::scalar(1.0)));
        let out_bias =
            std::array::from_fn(|i| store.add(format!("{name}.out_b{i}"), Tensor::zeros(&[1, 1])));
        StAttentionHead {
            fused_proj: Fc::new(store, &format!("{name}.proj"), d_fused, hidden, rng),
            gen_w,
            gen_b,
            out_scale,
            out_bias,
            hidden,
            inflection_range,
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        leaves: &[NodeId],
        fused: NodeId,
        e_st: NodeId,
        dropout: &mut Dropout,
    ) -> Result<FpmColumns> {
        let proj = self.fused_proj.apply(g, leaves, fused)?;
        let z = g.leaky_relu(proj, 0.01);
        let z = dropout.apply(g, z);
        let _ = self.hidden;
        let mut raw = [NodeId(0); 4];
        for i in 0..4 {
            let w = self.gen_w[i].apply(g, leaves, e_st)?;
            let b = self.gen_b[i].apply(g, leaves, e_st)?;
            let prod = g.mul(w, z)?;
            let contracted = g.sum_rows(prod);
            let u = g.add(contracted, b)?;
            let scaled = g.mul(u, leaves[self.out_scale[i].0])?;
            raw[i] = g.add(scaled, leaves[self.out_bias[i].0])?;
        }
        let (w0, w1, w2, w3) =
            fpm_squash_graph(g, raw[0], raw[1], raw[2], raw[3], self.inflection_range)?;
        Ok(FpmColumns { w0, w1, w2, w3 })
    }
}

/// Context head producing per-unit soft assignments over the three
/// activation kinds: logits come from context only, interleaved per unit,
/// and a row softmax over [n*units, 3] puts each unit on the simplex.
pub struct AdaptiveGateHead {
    fc1: Fc,
    fc2: Fc,
    units: usize,
}

impl AdaptiveGateHead {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_ctx: usize,
        hidden: usize,
        units: usize,
        rng: &mut R,
    ) -> Self {
        AdaptiveGateHead {
            fc1: Fc::new(store, &format!("{name}.fc1"), d_ctx, hidden, rng),
            fc2: Fc::new(store, &format!("{name}.fc2"), hidden, 3 * units, rng),
            units,
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        leaves: &[NodeId],
        ctx: NodeId,
        dropout: &mut Dropout,
    ) -> Result<NodeId> {
        let n = g.value(ctx).rows();
        let h = self.fc1.apply(g, leaves, ctx)?;
        let h = g.relu(h);
        let h = dropout.apply(g, h);
        let logits = self.fc2.apply(g, leaves, h)?;
        let flat = g.reshape(logits, vec![n * self.units, 3])?;
        Ok(g.softmax_rows(flat))
    }
}

/// One expert: a two-layer relu MLP.
struct Expert {
    fc1: Fc,
    fc2: Fc,
}

impl Expert {
    fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        h1: usize,
        h2: usize,
        rng: &mut R,
    ) -> Self {
        Expert {
            fc1: Fc::new(store, &format!("{name}.fc1"), d_in, h1, rng),
            fc2: Fc::new(store, &format!("{name}.fc2"), h1, h2, rng),
        }
    }

    fn forward(
        &self,
        g: &mut Graph,
        leaves: &[NodeId],
        x: NodeId,
        dropout: &mut Dropout,
    ) -> Result<NodeId> {
        let h = self.fc1.apply(g, leaves, x)?;
        let h = g.relu(h);
        let h = dropout.apply(g, h);
        let h = self.fc2.apply(g, leaves, h)?;
        Ok(g.relu(h))
    }
}

/// Scaled-down progressive layered extraction backbone: shared experts
/// plus optional per-task experts, per-task softmax gates (16-wide hidden
/// layer) over the experts visible to that task, and per-task towers.
pub struct PleBackbone {
    shared: Vec<Expert>,
    task_experts: Vec<Vec<Expert>>,
    gate_hidden: Vec<Fc>,
    gates: Vec<Fc>,
    towers: Vec<Fc>,
    expert_out: usize,
}

const GATE_HIDDEN: usize = 16;

/// Fused representation and tower output per task.
pub struct PleOut {
    pub fused: Vec<NodeId>,
    pub towers: Vec<NodeId>,
}

impl PleBackbone {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        n_shared: usize,
        per_task: usize,
        n_tasks: usize,
        expert_hidden: usize,
        expert_out: usize,
        tower_out: usize,
        rng: &mut R,
    ) -> Self {
        let shared: Vec<Expert> = (0..n_shared)
            .map(|i| Expert::new(store, &format!("{name}.shared{i}"), d_in, expert_hidden, expert_out, rng))
            .collect();
        let task_experts: Vec<Vec<Expert>> = (0..n_tasks)
            .map(|t| {
                (0..per_task)
                    .map(|i| {
                        Expert::new(
                            store,
                            &format!("{name}.task{t}.e{i}"),
                            d_in,
                            expert_hidden,
                            expert_out,
                            rng,
                        )
                    })
                    .collect()
            })
            .collect();
        let gate_hidden: Vec<Fc> = (0..n_tasks)
            .map(|t| Fc::new(store, &format!("{name}.gate{t}.h"), d_in, GATE_HIDDEN, rng))
            .collect();
        let gates: Vec<Fc> = (0..n_tasks)
            .map(|t| {
                Fc::new(
                    store,
                    &format!("{name}.gate{t}"),
                    GATE_HIDDEN,
                    n_shared + per_task,
                    rng,
                )
            })
            .collect();
        let towers: Vec<Fc> = (0..n_tasks)
            .map(|t| Fc::new(store, &format!("{name}.tower{t}"), expert_out, tower_out, rng))
            .collect();
        PleBackbone {
            shared,
            task_experts,
            gate_hidden,
            gates,
            towers,
            expert_out,
        }
    }

    pub fn n_tasks(&self) -> usize {
        self.gates.len()
    }

    pub fn fused_dim(&self) -> usize {
        self.expert_out
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        leaves: &[NodeId],
        x: NodeId,
        dropout: &mut Dropout,
    ) -> Result<PleOut> {
        let shared_out: Vec<NodeId> = self
            .shared
            .iter()
            .map(|e| e.forward(g, leaves, x, dropout))
            .collect::<Result<_>>()?;
        let mut fused = Vec::with_capacity(self.n_tasks());
        let mut towers = Vec::with_capacity(self.n_tasks());
        for t in 0..self.n_tasks() {
            let mut experts = shared_out.clone();
            for e in &self.task_experts[t] {
                experts.push(e.forward(g, leaves, x, dropout)?);
            }
            let gh = self.gate_hidden[t].apply(g, leaves, x)?;
            let gh = g.relu(gh);
            let gh = dropout.apply(g, gh);
            let gate_logits = self.gates[t].apply(g, leaves, gh)?;
            let gate = g.softmax_rows(gate_logits);
            let mut acc: Option<NodeId> = None;
            for (k, &eo) in experts.iter().enumerate() {
                let w = g.slice_cols(gate, k, k + 1)?;
                let term = g.mul(w, eo)?;
                acc = Some(match acc {
                    Some(a) => g.add(a, term)?,
                    None => term,
                });
            }
            let f = acc.expect("at least one expert");
            let tower_pre = self.towers[t].apply(g, leaves, f)?;
            let tower = g.relu(tower_pre);
            let tower = dropout.apply(g, tower);
            fused.push(f);
            towers.push(tower);
        }
        Ok(PleOut { fused, towers })
    }
}
