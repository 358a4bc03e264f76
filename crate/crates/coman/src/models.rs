//! Response-model zoo: the adaptive monotone network, its ablations, and
//! the baselines, all over a shared feature encoder.
//!
//! Architectures (desk scale):
//! - `dnn`: unconstrained MLP over all embeddings plus the raw treatment.
//! - `dnn-m`: sign-constrained MLP with sigmoid activations.
//! - `fpm`: four-parameter head whose parameters come from an
//!   unconstrained context net; the treatment enters only the head.
//! - `cmnn-relu` / `cmnn-elu` / `cmnn-clu`: constrained monotone stack over
//!   [treatment, context] with a sigmoid head.
//! - `coman-b`: temporal activation + target attention + multi-task
//!   backbone feeding a CLU monotone stack with a global four-parameter
//!   head.
//! - `coman-no-aa`: adds per-context head parameters (S-t attention).
//! - `coman-no-st`: adds adaptive activation gates instead.
//! - `coman`: both.

use crate::diffcore::{Dropout, Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::monolayer::{
    fpm_head_graph, fpm_squash_graph, HeadKind, LayerSpec, MonotoneNet, MonotoneNetworkSpec,
    MonotonicityIndicator, StackActivation, ViolationReport, VIOLATION_TOL,
};
use crate::activations::{ActivationSelection, ConvexBase};
use crate::simkit::dataset::{SimRecord, AOI_VOCAB, DISTRICT_VOCAB, ITEM_VOCAB, N_BEHAVIOR};
use crate::simkit::world::Direction;
use crate::stmodules::{
    AdaptiveGateHead, EmbeddingSet, Fc, PleBackbone, QuantileBins, StAttentionHead, TableId,
    TemporalActivation, TemporalTargetAttention, ID_EMBED_DIM, NUM_BINS, NUM_EMBED_DIM,
};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Prediction batch size used outside training.
const EVAL_CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    Dnn,
    DnnM,
    Fpm,
    CmnnRelu,
    CmnnElu,
    CmnnClu,
    ComanB,
    ComanNoAa,
    ComanNoSt,
    Coman,
}

pub const ALL_MODEL_KINDS: [ModelKind; 10] = [
    ModelKind::Dnn,
    ModelKind::DnnM,
    ModelKind::Fpm,
    ModelKind::CmnnRelu,
    ModelKind::CmnnElu,
    ModelKind::CmnnClu,
    ModelKind::ComanB,
    ModelKind::ComanNoAa,
    ModelKind::ComanNoSt,
    ModelKind::Coman,
];

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Dnn => "dnn",
            ModelKind::DnnM => "dnn-m",
            ModelKind::Fpm => "fpm",
            ModelKind::CmnnRelu => "cmnn-relu",
            ModelKind::CmnnElu => "cmnn-elu",
            ModelKind::CmnnClu => "cmnn-clu",
            ModelKind::ComanB => "coman-b",
            ModelKind::ComanNoAa => "coman-no-aa",
            ModelKind::ComanNoSt => "coman-no-st",
            ModelKind::Coman => "coman",
        }
    }

    /// Monotone in the treatment by construction?
    pub fn is_constrained(&self) -> bool {
        !matches!(self, ModelKind::Dnn)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL_MODEL_KINDS
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown model kind {s:?}")))
    }
}

/// Everything the encoder needs that is fit from training data: the
/// treatment grid, campaign direction, and numeric bin edges.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub treatments: Vec<f64>,
    pub direction: Direction,
    pub aff0_bins: QuantileBins,
    pub aff1_bins: QuantileBins,
}

impl FeatureMeta {
    pub fn fit(records: &[SimRecord], direction: Direction) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidParam("cannot fit meta on empty data".into()));
        }
        let mut treatments: Vec<f64> = records.iter().map(|r| r.treatment).collect();
        treatments.sort_by(|a, b| a.partial_cmp(b).unwrap());
        treatments.dedup();
        if treatments.len() < 2 {
            return Err(Error::InvalidParam(
                "training data covers fewer than two treatments".into(),
            ));
        }
        let aff0: Vec<f64> = records.iter().map(|r| r.aff0).collect();
        let aff1: Vec<f64> = records.iter().map(|r| r.aff1).collect();
        Ok(FeatureMeta {
            treatments,
            direction,
            aff0_bins: QuantileBins::fit(&aff0, NUM_BINS)?,
            aff1_bins: QuantileBins::fit(&aff1, NUM_BINS)?,
        })
    }

    pub fn span(&self) -> (f64, f64) {
        (self.treatments[0], *self.treatments.last().unwrap())
    }

    /// Treatment scaled to [0, 1] over the observed grid.
    pub fn t_norm(&self, t: f64) -> f64 {
        let (lo, hi) = self.span();
        (t - lo) / (hi - lo)
    }

    /// Normalized treatment flipped so the curve is increasing in it.
    pub fn t_directed(&self, t: f64) -> f64 {
        match self.direction {
            Direction::Increasing => self.t_norm(t),
            Direction::Decreasing => 1.0 - self.t_norm(t),
        }
    }
}

struct EmbedBundle {
    set: EmbeddingSet,
    city: TableId,
    period: TableId,
    weekday: TableId,
    holiday: TableId,
    district: TableId,
    aoi: TableId,
    aff0: TableId,
    aff1: TableId,
    item: TableId,
}

/// Encoded feature nodes for one batch.
struct Encoded {
    /// Spatio-temporal embedding [n, 32].
    e_st: NodeId,
    /// Attribute embedding [n, 24].
    e_attr: NodeId,
    /// Query item embedding [n, 8].
    e_q: NodeId,
    /// Behavior item embeddings, each [n, 8].
    behavior: Vec<NodeId>,
    /// Normalized treatment column [n, 1].
    t_norm: NodeId,
    /// Direction-adjusted treatment column [n, 1].
    t_directed: NodeId,
}

impl EmbedBundle {
    fn new<R: Rng>(store: &mut ParamStore, rng: &mut R) -> Self {
        let mut set = EmbeddingSet::new();
        let city = set.add_table(store, "city", 5, ID_EMBED_DIM, rng);
        let period = set.add_table(store, "period", 5, ID_EMBED_DIM, rng);
        let weekday = set.add_table(store, "weekday", 7, ID_EMBED_DIM, rng);
        let holiday = set.add_table(store, "holiday", 2, ID_EMBED_DIM, rng);
        let district = set.add_table(store, "district", DISTRICT_VOCAB, ID_EMBED_DIM, rng);
        let aoi = set.add_table(store, "aoi", AOI_VOCAB, ID_EMBED_DIM, rng);
        let aff0 = set.add_table(store, "aff0", NUM_BINS, NUM_EMBED_DIM, rng);
        let aff1 = set.add_table(store, "aff1", NUM_BINS, NUM_EMBED_DIM, rng);
        let item = set.add_table(store, "item", ITEM_VOCAB, ID_EMBED_DIM, rng);
        EmbedBundle {
            set,
            city,
            period,
            weekday,
            holiday,
            district,
            aoi,
            aff0,
            aff1,
            item,
        }
    }

    fn st_dim(&self) -> usize {
        4 * ID_EMBED_DIM
    }

    fn attr_dim(&self) -> usize {
        2 * ID_EMBED_DIM + 2 * NUM_EMBED_DIM
    }

    fn encode(
        &self,
        g: &mut Graph,
        leaves: &[NodeId],
        meta: &FeatureMeta,
        records: &[SimRecord],
        treatment_override: Option<f64>,
    ) -> Result<Encoded> {
        let ids = |f: &dyn Fn(&SimRecord) -> usize| -> Vec<usize> {
            records.iter().map(f).collect()
        };
        let city = self.set.lookup(g, leaves, self.city, &ids(&|r| r.city as usize - 1))?;
        let period = self.set.lookup(g, leaves, self.period, &ids(&|r| r.period as usize))?;
        let weekday =
            self.set.lookup(g, leaves, self.weekday, &ids(&|r| r.weekday as usize))?;
        let holiday =
            self.set.lookup(g, leaves, self.holiday, &ids(&|r| r.holiday as usize))?;
        let district =
            self.set.lookup(g, leaves, self.district, &ids(&|r| r.district as usize))?;
        let aoi = self.set.lookup(g, leaves, self.aoi, &ids(&|r| r.aoi as usize))?;
        let aff0 = self.set.lookup(
            g,
            leaves,
            self.aff0,
            &ids(&|r| meta.aff0_bins.bin(r.aff0)),
        )?;
        let aff1 = self.set.lookup(
            g,
            leaves,
            self.aff1,
            &ids(&|r| meta.aff1_bins.bin(r.aff1)),
        )?;
        let e_q = self.set.lookup(g, leaves, self.item, &ids(&|r| r.query as usize))?;
        let mut behavior = Vec::with_capacity(N_BEHAVIOR);
        for b in 0..N_BEHAVIOR {
            behavior.push(self.set.lookup(
                g,
                leaves,
                self.item,
                &ids(&|r| r.behavior[b] as usize),
            )?);
        }
        let e_st = g.concat_all(&[city, period, weekday, holiday])?;
        let e_attr = g.concat_all(&[district, aoi, aff0, aff1])?;
        let n = records.len();
        let tn: Vec<f64> = records
            .iter()
            .map(|r| meta.t_norm(treatment_override.unwrap_or(r.treatment)))
            .collect();
        let td: Vec<f64> = records
            .iter()
            .map(|r| meta.t_directed(treatment_override.unwrap_or(r.treatment)))
            .collect();
        let t_norm = g.leaf(Tensor::new(vec![n, 1], tn)?);
        let t_directed = g.leaf(Tensor::new(vec![n, 1], td)?);
        Ok(Encoded {
            e_st,
            e_attr,
            e_q,
            behavior,
            t_norm,
            t_directed,
        })
    }
}

/// Architecture-specific parts behind the shared encoder.
enum Arch {
    Dnn {
        fc1: Fc,
        fc2: Fc,
        head: Fc,
    },
    DnnM {
        stack: MonotoneNet,
    },
    FpmStandalone {
        fc1: Fc,
        fc2: Fc,
        heads: [Fc; 4],
    },
    Cmnn {
        ctx1: Fc,
        ctx2: Fc,
        stack: MonotoneNet,
    },
    Coman {
        ta: TemporalActivation,
        tta: TemporalTargetAttention,
        ple: PleBackbone,
        stack: MonotoneNet,
        gate_head: Option<AdaptiveGateHead>,
        sta: Option<StAttentionHead>,
        fpm_raw: Option<[ParamId; 4]>,
        value_head: Fc,
    },
}

/// Batch outputs: conversion probability column, the value regression
/// column for multi-task models, and the per-sample inflection column
/// when the head parameters are context-generated.
pub struct ModelOut {
    pub cvr: NodeId,
    pub value: Option<NodeId>,
    pub inflection: Option<NodeId>,
}

pub struct Model {
    kind: ModelKind,
    seed: u64,
    meta: FeatureMeta,
    store: ParamStore,
    embeds: EmbedBundle,
    arch: Arch,
}

const STACK_WIDTH: usize = 12;
const CTX_DIM: usize = 8;

fn cmnn_stack_spec(base: ConvexBase, direction: Direction, gated: bool) -> MonotoneNetworkSpec {
    let mut indicator = vec![0i8; 1 + CTX_DIM];
    indicator[0] = direction.indicator();
    MonotoneNetworkSpec {
        input_indicator: MonotonicityIndicator::new_monotone(indicator).expect("valid indicator"),
        hidden: vec![LayerSpec {
            width: STACK_WIDTH,
            activation: if gated {
                StackActivation::Gated
            } else {
                StackActivation::Fixed(ActivationSelection::new(4, 4, 4))
            },
        }],
        base,
        head: HeadKind::Linear,
        fpm_inflection_range: (0.0, 1.0),
    }
}

impl Model {
    pub fn build(kind: ModelKind, meta: FeatureMeta, seed: u64) -> Result<Model> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let embeds = EmbedBundle::new(&mut store, &mut rng);
        let d_st = embeds.st_dim();
        let d_attr = embeds.attr_dim();
        let d_all = d_st + d_attr + ID_EMBED_DIM * (1 + N_BEHAVIOR);
        let arch = match kind {
            ModelKind::Dnn => Arch::Dnn {
                fc1: Fc::new(&mut store, "dnn.fc1", d_all + 1, 32, &mut rng),
                fc2: Fc::new(&mut store, "dnn.fc2", 32, 16, &mut rng),
                head: Fc::new(&mut store, "dnn.head", 16, 1, &mut rng),
            },
            ModelKind::DnnM => {
                let mut indicator = vec![1i8; d_all + 1];
                indicator[0] = meta.direction.indicator();
                let spec = MonotoneNetworkSpec {
                    input_indicator: MonotonicityIndicator::new_monotone(indicator)?,
                    hidden: vec![
                        LayerSpec {
                            width: 16,
                            activation: StackActivation::SigmoidAll,
                        },
                        LayerSpec {
                            width: 8,
                            activation: StackActivation::SigmoidAll,
                        },
                    ],
                    base: ConvexBase::Relu,
                    head: HeadKind::Sigmoid,
                    fpm_inflection_range: (0.0, 1.0),
                };
                Arch::DnnM {
                    stack: MonotoneNet::new(spec, &mut store, "dnnm", &mut rng)?,
                }
            }
            ModelKind::Fpm => Arch::FpmStandalone {
                fc1: Fc::new(&mut store, "fpm.fc1", d_all, 32, &mut rng),
                fc2: Fc::new(&mut store, "fpm.fc2", 32, 16, &mut rng),
                heads: std::array::from_fn(|i| {
                    Fc::new(&mut store, &format!("fpm.head{i}"), 16, 1, &mut rng)
                }),
            },
            ModelKind::CmnnRelu | ModelKind::CmnnElu | ModelKind::CmnnClu => {
                let base = match kind {
                    ModelKind::CmnnRelu => ConvexBase::Relu,
                    ModelKind::CmnnElu => ConvexBase::Elu(1.0),
                    _ => ConvexBase::Clu,
                };
                let mut spec = cmnn_stack_spec(base, meta.direction, false);
                spec.head = HeadKind::Sigmoid;
                Arch::Cmnn {
                    ctx1: Fc::new(&mut store, "cmnn.ctx1", d_all, 32, &mut rng),
                    ctx2: Fc::new(&mut store, "cmnn.ctx2", 32, CTX_DIM, &mut rng),
                    stack: MonotoneNet::new(spec, &mut store, "cmnn", &mut rng)?,
                }
            }
            ModelKind::ComanB | ModelKind::ComanNoAa | ModelKind::ComanNoSt | ModelKind::Coman => {
                let gated = matches!(kind, ModelKind::ComanNoSt | ModelKind::Coman);
                let st_params = matches!(kind, ModelKind::ComanNoAa | ModelKind::Coman);
                let ta = TemporalActivation::new(&mut store, "ta", d_st, d_attr, &mut rng);
                let tta = TemporalTargetAttention::new(
                    &mut store,
                    "tta",
                    d_st,
                    ID_EMBED_DIM,
                    ID_EMBED_DIM,
                    &mut rng,
                );
                let ple_in = d_attr + ID_EMBED_DIM + d_st;
                let ple = PleBackbone::new(
                    &mut store, "ple", ple_in, 2, 1, 2, 32, 16, CTX_DIM, &mut rng,
                );
                let stack = MonotoneNet::new(
                    cmnn_stack_spec(ConvexBase::Clu, meta.direction, gated),
                    &mut store,
                    "stack",
                    &mut rng,
                )?;
                let gate_head = gated.then(|| {
                    AdaptiveGateHead::new(
                        &mut store,
                        "aa",
                        ple.fused_dim() + d_st,
                        16,
                        STACK_WIDTH,
                        &mut rng,
                    )
                });
                let sta = st_params.then(|| {
                    StAttentionHead::new(
                        &mut store,
                        "sta",
                        ple.fused_dim(),
                        d_st,
                        16,
                        (0.0, 1.0),
                        &mut rng,
                    )
                });
                let fpm_raw = (!st_params).then(|| {
                    std::array::from_fn(|i| {
                        store.add(format!("fpm_global.r{i}"), Tensor::scalar([-1.5, 0.5, 0.0, 0.5][i]))
                    })
                });
                let value_head = Fc::new(&mut store, "value", CTX_DIM, 1, &mut rng);
                Arch::Coman {
                    ta,
                    tta,
                    ple,
                    stack,
                    gate_head,
                    sta,
                    fpm_raw,
                    value_head,
                }
            }
        };
        Ok(Model {
            kind,
            seed,
            meta,
            store,
            embeds,
            arch,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn meta(&self) -> &FeatureMeta {
        &self.meta
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Build the forward graph for one batch.
    pub fn forward_batch(
        &self,
        g: &mut Graph,
        leaves: &[NodeId],
        records: &[SimRecord],
        treatment_override: Option<f64>,
        dropout: &mut Dropout,
    ) -> Result<ModelOut> {
        let enc = self
            .embeds
            .encode(g, leaves, &self.meta, records, treatment_override)?;
        match &self.arch {
            Arch::Dnn { fc1, fc2, head } => {
                let mut parts = vec![enc.e_st, enc.e_attr, enc.e_q];
                parts.extend(&enc.behavior);
                parts.push(enc.t_norm);
                let x = g.concat_all(&parts)?;
                let h = fc1.apply(g, leaves, x)?;
                let h = g.relu(h);
                let h = dropout.apply(g, h);
                let h = fc2.apply(g, leaves, h)?;
                let h = g.relu(h);
                let h = dropout.apply(g, h);
                let o = head.apply(g, leaves, h)?;
                Ok(ModelOut {
                    cvr: g.sigmoid(o),
                    value: None,
                    inflection: None,
                })
            }
            Arch::DnnM { stack } => {
                let mut parts = vec![enc.t_norm, enc.e_st, enc.e_attr, enc.e_q];
                parts.extend(&enc.behavior);
                let x = g.concat_all(&parts)?;
                let out = stack.forward(g, leaves, x, &[])?;
                Ok(ModelOut {
                    cvr: out,
                    value: None,
                    inflection: None,
                })
            }
            Arch::FpmStandalone { fc1, fc2, heads } => {
                let mut parts = vec![enc.e_st, enc.e_attr, enc.e_q];
                parts.extend(&enc.behavior);
                let ctx = g.concat_all(&parts)?;
                let h = fc1.apply(g, leaves, ctx)?;
                let h = g.relu(h);
                let h = dropout.apply(g, h);
                let h = fc2.apply(g, leaves, h)?;
                let h = g.relu(h);
                let raw: Vec<NodeId> = heads
                    .iter()
                    .map(|f| f.apply(g, leaves, h))
                    .collect::<Result<_>>()?;
                let (w0, w1, w2, w3) =
                    fpm_squash_graph(g, raw[0], raw[1], raw[2], raw[3], (0.0, 1.0))?;
                Ok(ModelOut {
                    cvr: fpm_head_graph(g, enc.t_directed, w0, w1, w2, w3)?,
                    value: None,
                    inflection: Some(w2),
                })
            }
            Arch::Cmnn { ctx1, ctx2, stack } => {
                let mut parts = vec![enc.e_st, enc.e_attr, enc.e_q];
                parts.extend(&enc.behavior);
                let ctx = g.concat_all(&parts)?;
                let h = ctx1.apply(g, leaves, ctx)?;
                let h = g.relu(h);
                let h = dropout.apply(g, h);
                let h = ctx2.apply(g, leaves, h)?;
                let ctx_repr = g.relu(h);
                let x = g.concat_cols(enc.t_norm, ctx_repr)?;
                let out = stack.forward(g, leaves, x, &[])?;
                Ok(ModelOut {
                    cvr: out,
                    value: None,
                    inflection: None,
                })
            }
            Arch::Coman {
                ta,
                tta,
                ple,
                stack,
                gate_head,
                sta,
                fpm_raw,
                value_head,
            } => {
                let h_ta = ta.forward(g, leaves, enc.e_st, enc.e_attr)?;
                let h_tta = tta
                    .forward(g, leaves, enc.e_q, &enc.behavior, enc.e_st)?
                    .output;
                let ple_in = g.concat_all(&[h_ta, h_tta, enc.e_st])?;
                let ple_out = ple.forward(g, leaves, ple_in, dropout)?;
                let ctx_repr = ple_out.towers[0];
                let fused = ple_out.fused[0];
                let x = g.concat_cols(enc.t_norm, ctx_repr)?;
                let gates = match gate_head {
                    Some(head) => {
                        let gate_ctx = g.concat_cols(fused, enc.e_st)?;
                        vec![head.forward(g, leaves, gate_ctx, dropout)?]
                    }
                    None => Vec::new(),
                };
                let h_out = stack.forward(g, leaves, x, &gates)?;
                let mut inflection = None;
                let cvr = match (sta, fpm_raw) {
                    (Some(head), _) => {
                        let cols = head.forward(g, leaves, fused, enc.e_st, dropout)?;
                        inflection = Some(cols.w2);
                        fpm_head_graph(g, h_out, cols.w0, cols.w1, cols.w2, cols.w3)?
                    }
                    (None, Some(raw)) => {
                        let n = g.value(h_out).rows();
                        let b: Vec<NodeId> = raw
                            .iter()
                            .map(|p| g.broadcast_to(leaves[p.0], &[n, 1]))
                            .collect::<Result<_>>()?;
                        let (w0, w1, w2, w3) =
                            fpm_squash_graph(g, b[0], b[1], b[2], b[3], (0.0, 1.0))?;
                        fpm_head_graph(g, h_out, w0, w1, w2, w3)?
                    }
                    (None, None) => unreachable!("coman variant without a head source"),
                };
                let value = value_head.apply(g, leaves, ple_out.towers[1])?;
                Ok(ModelOut {
                    cvr,
                    value: Some(value),
                    inflection,
                })
            }
        }
    }

    /// Whether this model trains a value regression head.
    pub fn is_multi_task(&self) -> bool {
        matches!(self.arch, Arch::Coman { .. })
    }

    /// Conversion predictions in eval mode (no dropout), chunked.
    pub fn predict(&self, records: &[SimRecord]) -> Result<Vec<f64>> {
        self.predict_with(records, None)
    }

    /// Predictions with every record's treatment replaced by `t`.
    pub fn predict_at(&self, records: &[SimRecord], t: f64) -> Result<Vec<f64>> {
        self.predict_with(records, Some(t))
    }

    /// Per-record learned inflection (normalized treatment units) for
    /// models whose head parameters are context-generated; None otherwise.
    pub fn inflections(&self, records: &[SimRecord]) -> Result<Option<Vec<f64>>> {
        let mut out = Vec::with_capacity(records.len());
        let mut dropout = Dropout::disabled();
        for chunk in records.chunks(EVAL_CHUNK) {
            let mut g = Graph::new();
            let leaves = self.store.leaves(&mut g);
            let res = self.forward_batch(&mut g, &leaves, chunk, None, &mut dropout)?;
            match res.inflection {
                Some(node) => out.extend_from_slice(g.value(node).data()),
                None => return Ok(None),
            }
        }
        Ok(Some(out))
    }

    fn predict_with(&self, records: &[SimRecord], t: Option<f64>) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(records.len());
        let mut dropout = Dropout::disabled();
        for chunk in records.chunks(EVAL_CHUNK) {
            let mut g = Graph::new();
            let leaves = self.store.leaves(&mut g);
            let res = self.forward_batch(&mut g, &leaves, chunk, t, &mut dropout)?;
            out.extend_from_slice(g.value(res.cvr).data());
        }
        Ok(out)
    }

    /// Predicted response curve over a treatment grid, averaged over the
    /// given context records. Returns one mean prediction per grid point.
    pub fn mean_curve(&self, records: &[SimRecord], grid: &[f64]) -> Result<Vec<f64>> {
        let mut curve = Vec::with_capacity(grid.len());
        for &t in grid {
            let preds = self.predict_at(records, t)?;
            curve.push(preds.iter().sum::<f64>() / preds.len().max(1) as f64);
        }
        Ok(curve)
    }

    /// Randomized treatment-monotonicity scan: pairs of treatments ordered
    /// along the campaign direction on randomly drawn context records.
    pub fn scan_treatment_monotonicity(
        &self,
        records: &[SimRecord],
        n_chains: usize,
        seed: u64,
    ) -> Result<ViolationReport> {
        if n_chains == 0 || records.is_empty() {
            return Ok(ViolationReport::default());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = self.meta.span();
        let mut batch = Vec::with_capacity(2 * n_chains);
        for _ in 0..n_chains {
            let r = &records[rng.gen_range(0..records.len())];
            let a: f64 = rng.gen_range(lo..hi);
            let b: f64 = rng.gen_range(lo..hi);
            let (small, large) = if a <= b { (a, b) } else { (b, a) };
            // x gets the low-response end, y the high-response end
            let (tx, ty) = match self.meta.direction {
                Direction::Increasing => (small, large),
                Direction::Decreasing => (large, small),
            };
            let mut x = r.clone();
            x.treatment = tx;
            let mut y = r.clone();
            y.treatment = ty;
            batch.push(x);
            batch.push(y);
        }
        let preds = self.predict(&batch)?;
        let mut report = ViolationReport {
            checked: n_chains,
            ..Default::default()
        };
        let mut worst_gap = VIOLATION_TOL;
        for c in 0..n_chains {
            let (fx, fy) = (preds[2 * c], preds[2 * c + 1]);
            if fx - fy > VIOLATION_TOL {
                report.violations += 1;
                if fx - fy > worst_gap {
                    worst_gap = fx - fy;
                    report.worst = Some(crate::monolayer::ViolationPair {
                        x: vec![batch[2 * c].treatment],
                        y: vec![batch[2 * c + 1].treatment],
                        fx,
                        fy,
                    });
                }
            }
        }
        Ok(report)
    }

    /// Structural description embedded in checkpoints: layer widths,
    /// indicators, activation selections, and head kind where applicable.
    pub fn describe(&self) -> serde_json::Value {
        match &self.arch {
            Arch::Dnn { .. } => serde_json::json!({
                "family": "mlp",
                "hidden": [32, 16],
                "head": "sigmoid",
            }),
            Arch::DnnM { stack } => serde_json::json!({
                "family": "sign-constrained-mlp",
                "stack": stack.spec(),
            }),
            Arch::FpmStandalone { .. } => serde_json::json!({
                "family": "fpm-standalone",
                "context_hidden": [32, 16],
                "head": "fpm",
            }),
            Arch::Cmnn { stack, .. } => serde_json::json!({
                "family": "cmnn",
                "context_hidden": [32, CTX_DIM],
                "stack": stack.spec(),
            }),
            Arch::Coman {
                stack,
                gate_head,
                sta,
                ..
            } => serde_json::json!({
                "family": "coman",
                "stack": stack.spec(),
                "adaptive_gates": gate_head.is_some(),
                "context_head_params": sta.is_some(),
                "head": "fpm",
            }),
        }
    }

    // ---- checkpoints ---------------------------------------------------

    pub fn save(&self, path: &Path) -> Result<()> {
        let params: Vec<ParamEntry> = self
            .store
            .iter()
            .map(|(name, t)| ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect();
        let doc = CheckpointDoc {
            format: CHECKPOINT_FORMAT.to_string(),
            kind: self.kind.name().to_string(),
            seed: self.seed,
            architecture: self.describe(),
            meta: self.meta.clone(),
            params,
        };
        let text = serde_json::to_string(&doc).expect("checkpoint serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Model> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let doc: CheckpointDoc = serde_json::from_str(&text).map_err(|e| Error::Schema {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        if doc.format != CHECKPOINT_FORMAT {
            return Err(Error::Schema {
                path: path.display().to_string(),
                detail: format!("unsupported checkpoint format {:?}", doc.format),
            });
        }
        let kind = ModelKind::from_str(&doc.kind)?;
        let mut model = Model::build(kind, doc.meta, doc.seed)?;
        if doc.architecture != model.describe() {
            return Err(Error::Schema {
                path: path.display().to_string(),
                detail: "checkpoint architecture does not match this build".into(),
            });
        }
        if doc.params.len() != model.store.len() {
            return Err(Error::Schema {
                path: path.display().to_string(),
                detail: format!(
                    "checkpoint has {} tensors, architecture expects {}",
                    doc.params.len(),
                    model.store.len()
                ),
            });
        }
        for entry in doc.params {
            let id = model
                .store
                .ids()
                .find(|&id| model.store.name(id) == entry.name)
                .ok_or_else(|| Error::Schema {
                    path: path.display().to_string(),
                    detail: format!("unknown parameter {:?}", entry.name),
                })?;
            if model.store.get(id).shape() != entry.shape.as_slice() {
                return Err(Error::Schema {
                    path: path.display().to_string(),
                    detail: format!("shape mismatch for {:?}", entry.name),
                });
            }
            model.store.set(id, Tensor::new(entry.shape, entry.data)?);
        }
        Ok(model)
    }
}

const CHECKPOINT_FORMAT: &str = "coman-checkpoint-v1";

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format: String,
    kind: String,
    seed: u64,
    architecture: serde_json::Value,
    meta: FeatureMeta,
    params: Vec<ParamEntry>,
}
