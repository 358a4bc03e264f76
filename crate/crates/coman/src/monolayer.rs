//! Monotone-by-construction network layers.
//!
//! A monotonicity indicator assigns each input feature one of {-1, 0, +1};
//! constrained linear layers rewrite their weights elementwise so that the
//! partial derivative of every pre-activation has the indicated sign, and
//! the shaped activations are all increasing, so whole stacks stay monotone
//! in the flagged inputs regardless of training.

use crate::activations::{ActivationSelection, ConvexBase, Curvature, FpmParams};
use crate::diffcore::{Graph, KindSpec, NodeId, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Floor applied to the trainable CLU shape parameters and the product cap
/// from the junction condition.
pub const CLU_PARAM_FLOOR: f64 = 1e-3;
pub const CLU_PRODUCT_CAP: f64 = 4.0;

/// Per-feature monotonicity directions in {-1, 0, +1}.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonotonicityIndicator(Vec<i8>);

impl MonotonicityIndicator {
    pub fn new(entries: Vec<i8>) -> Result<Self> {
        if entries.iter().any(|&t| !(-1..=1).contains(&t)) {
            return Err(Error::InvalidParam(
                "monotonicity indicator entries must be -1, 0, or +1".into(),
            ));
        }
        Ok(MonotonicityIndicator(entries))
    }

    /// Indicator for a layer that claims monotonicity must flag at least
    /// one input.
    pub fn new_monotone(entries: Vec<i8>) -> Result<Self> {
        let ind = Self::new(entries)?;
        if ind.0.iter().all(|&t| t == 0) {
            return Err(Error::InvalidParam(
                "monotone layer needs at least one nonzero indicator entry".into(),
            ));
        }
        Ok(ind)
    }

    pub fn all_ones(width: usize) -> Self {
        MonotonicityIndicator(vec![1; width])
    }

    pub fn entries(&self) -> &[i8] {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.len()
    }
}

/// Apply the indicator transform to a weight matrix value: row i (input
/// feature i) becomes |w| for +1, -|w| for -1, and passes through for 0.
pub fn effective_weights(raw: &Tensor, indicator: &MonotonicityIndicator) -> Result<Tensor> {
    if raw.rank() != 2 || raw.shape()[0] != indicator.width() {
        return Err(Error::WidthMismatch {
            what: "constrained layer weights",
            expected: indicator.width(),
            got: raw.shape().first().copied().unwrap_or(0),
        });
    }
    let (rows, cols) = (raw.shape()[0], raw.shape()[1]);
    let mut out = raw.clone();
    for i in 0..rows {
        match indicator.entries()[i] {
            1 => {
                for j in 0..cols {
                    out.data_mut()[i * cols + j] = raw.data()[i * cols + j].abs();
                }
            }
            -1 => {
                for j in 0..cols {
                    out.data_mut()[i * cols + j] = -raw.data()[i * cols + j].abs();
                }
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Graph form of the indicator transform plus the affine map:
/// h = x . W' + b, differentiable through the raw weights.
pub fn constrained_linear(
    g: &mut Graph,
    x: NodeId,
    weights: NodeId,
    bias: NodeId,
    indicator: &MonotonicityIndicator,
) -> Result<NodeId> {
    let in_width = g.value(weights).shape()[0];
    if indicator.width() != in_width {
        return Err(Error::WidthMismatch {
            what: "constrained layer indicator",
            expected: in_width,
            got: indicator.width(),
        });
    }
    if g.value(x).cols() != in_width {
        return Err(Error::WidthMismatch {
            what: "constrained layer input",
            expected: in_width,
            got: g.value(x).cols(),
        });
    }
    let signed: Vec<f64> = indicator.entries().iter().map(|&t| t as f64).collect();
    let passthrough: Vec<f64> = indicator
        .entries()
        .iter()
        .map(|&t| if t == 0 { 1.0 } else { 0.0 })
        .collect();
    let sign_col = g.leaf(Tensor::new(vec![in_width, 1], signed)?);
    let pass_col = g.leaf(Tensor::new(vec![in_width, 1], passthrough)?);
    let abs_w = g.abs(weights);
    let constrained = g.mul(abs_w, sign_col)?;
    let free = g.mul(weights, pass_col)?;
    let eff = g.add(constrained, free)?;
    let h = g.matmul(x, eff)?;
    g.add(h, bias)
}

/// Effective CLU shape parameters from two raw trainable scalars:
/// omega0 = max(|a0|, floor), omega1 = min(max(|a1|, floor), 4/omega0).
pub fn clu_param_nodes(g: &mut Graph, raw0: NodeId, raw1: NodeId) -> (NodeId, NodeId) {
    let w0 = g.abs_floor(raw0, CLU_PARAM_FLOOR);
    let w1 = g.prod_clamp(raw1, w0, CLU_PARAM_FLOOR, CLU_PRODUCT_CAP);
    (w0, w1)
}

/// Soft per-unit assignment over the three activation kinds.
///
/// Rows live on the probability simplex and must be produced from
/// non-monotone context only; that restriction is what keeps gated stacks
/// monotone.
#[derive(Debug, Clone)]
pub struct AdaptiveGates(Vec<[f64; 3]>);

impl AdaptiveGates {
    pub fn new(rows: Vec<[f64; 3]>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if r.iter().any(|&v| v < 0.0) {
                return Err(Error::MalformedGates(format!("negative entry in row {i}")));
            }
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::MalformedGates(format!(
                    "row {i} sums to {s}, expected 1"
                )));
            }
        }
        Ok(AdaptiveGates(rows))
    }

    pub fn one_hot(sel: &ActivationSelection) -> Self {
        let rows = (0..sel.width())
            .map(|j| match sel.kind_at(j) {
                Curvature::Convex => [1.0, 0.0, 0.0],
                Curvature::Concave => [0.0, 1.0, 0.0],
                Curvature::Saturated => [0.0, 0.0, 1.0],
            })
            .collect();
        AdaptiveGates(rows)
    }

    pub fn rows(&self) -> &[[f64; 3]] {
        &self.0
    }
}

/// Gated mixture of the three shaped activations,
/// y_j = g1 * convex(h_j) + g2 * concave(h_j) + g3 * saturated(h_j).
pub fn adaptive_combined(
    h: &[f64],
    gates: &AdaptiveGates,
    p: &crate::activations::CluParams,
) -> Result<Vec<f64>> {
    if h.len() != gates.rows().len() {
        return Err(Error::WidthMismatch {
            what: "adaptive gates",
            expected: h.len(),
            got: gates.rows().len(),
        });
    }
    Ok(h.iter()
        .zip(gates.rows())
        .map(|(&x, g)| {
            g[0] * crate::activations::clu(x, p)
                + g[1] * crate::activations::clu_concave(x, p)
                + g[2] * crate::activations::clu_saturated(x, p)
        })
        .collect())
}

/// Graph form of the gated activation. `h` is [n, m]; `gate_probs` is the
/// flattened per-unit distribution [n*m, 3] (rows already on the simplex).
pub fn adaptive_combined_graph(
    g: &mut Graph,
    h: NodeId,
    gate_probs: NodeId,
    base: ConvexBase,
    params: Option<(NodeId, NodeId)>,
) -> Result<NodeId> {
    let (n, m) = g.value(h).as_matrix();
    if g.value(gate_probs).shape() != [n * m, 3] {
        return Err(Error::MalformedGates(format!(
            "expected gate shape [{}, 3], got {:?}",
            n * m,
            g.value(gate_probs).shape()
        )));
    }
    let flat = g.reshape(h, vec![n * m, 1])?;
    let mut acc: Option<NodeId> = None;
    for (col, kind) in [
        Curvature::Convex,
        Curvature::Concave,
        Curvature::Saturated,
    ]
    .into_iter()
    .enumerate()
    {
        let act = g.mono_act(flat, base, params, KindSpec::Uniform(kind))?;
        let gate = g.slice_cols(gate_probs, col, col + 1)?;
        let term = g.mul(gate, act)?;
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    g.reshape(acc.unwrap(), vec![n, m])
}

/// Four-parameter head as a graph composite. Each parameter node is either
/// a scalar (global curve) or an [n, 1] column (per-sample curve).
pub fn fpm_head_graph(
    g: &mut Graph,
    h: NodeId,
    w0: NodeId,
    w1: NodeId,
    w2: NodeId,
    w3: NodeId,
) -> Result<NodeId> {
    let centered = g.sub(h, w2)?;
    let scaled = g.mul(centered, w1)?;
    let s = g.sigmoid(scaled);
    let span = g.sub(w3, w0)?;
    let rise = g.mul(span, s)?;
    g.add(w0, rise)
}

/// Margin keeping squashed probabilities representably inside (0, 1) even
/// when the sigmoid saturates in f64.
const FPM_PROB_MARGIN: f64 = 1e-6;

/// Squash four unconstrained columns into valid four-parameter curves:
/// base rate in (0,1), ceiling strictly above it, positive sensitivity,
/// inflection inside [lo, hi].
pub fn fpm_squash_graph(
    g: &mut Graph,
    raw0: NodeId,
    raw1: NodeId,
    raw2: NodeId,
    raw3: NodeId,
    inflection_range: (f64, f64),
) -> Result<(NodeId, NodeId, NodeId, NodeId)> {
    let s0 = g.sigmoid(raw0);
    let w0 = g.clamp_unit(s0, FPM_PROB_MARGIN);
    let sp = g.softplus(raw1);
    let w1 = g.add_scalar(sp, CLU_PARAM_FLOOR);
    let (lo, hi) = inflection_range;
    let s2 = g.sigmoid(raw2);
    let spread = g.scale(s2, hi - lo);
    let w2 = g.add_scalar(spread, lo);
    let s3 = g.sigmoid(raw3);
    let s3 = g.clamp_unit(s3, FPM_PROB_MARGIN);
    let one_minus = g.scale(w0, -1.0);
    let headroom = g.add_scalar(one_minus, 1.0);
    let gain = g.mul(headroom, s3)?;
    let w3 = g.add(w0, gain)?;
    Ok((w0, w1, w2, w3))
}

/// Read a squashed parameter quadruple back out as checked values.
pub fn fpm_params_from_columns(
    w0: &Tensor,
    w1: &Tensor,
    w2: &Tensor,
    w3: &Tensor,
    row: usize,
) -> Result<FpmParams> {
    FpmParams::new(
        w0.data()[row],
        w1.data()[row],
        w2.data()[row],
        w3.data()[row],
    )
}

/// Output head of a monotone network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    Sigmoid,
    Linear,
    Fpm,
}

/// How a hidden layer activates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StackActivation {
    /// Fixed selection of convex/concave/saturated units.
    Fixed(ActivationSelection),
    /// Per-unit soft gates provided by the caller at forward time.
    Gated,
    /// Plain sigmoid units (the weight-constrained baseline style).
    SigmoidAll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: StackActivation,
}

/// Architecture of a monotone stack: input indicator, hidden layers, base
/// convex function, and head. Hidden layers beyond the first always use
/// all-ones indicators so monotonicity composes through the stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneNetworkSpec {
    pub input_indicator: MonotonicityIndicator,
    pub hidden: Vec<LayerSpec>,
    pub base: ConvexBase,
    pub head: HeadKind,
    /// Inflection squash range when the head is a four-parameter curve.
    pub fpm_inflection_range: (f64, f64),
}

impl MonotoneNetworkSpec {
    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.hidden.iter().enumerate() {
            if let StackActivation::Fixed(sel) = &l.activation {
                if sel.width() != l.width {
                    return Err(Error::WidthMismatch {
                        what: "activation selection",
                        expected: l.width,
                        got: sel.width(),
                    });
                }
            }
            if l.width == 0 {
                return Err(Error::InvalidParam(format!("hidden layer {i} has width 0")));
            }
        }
        if self.hidden.is_empty() {
            return Err(Error::InvalidParam("stack needs at least one layer".into()));
        }
        Ok(())
    }
}

struct StackLayer {
    weights: ParamId,
    bias: ParamId,
    clu_raw: Option<(ParamId, ParamId)>,
    indicator: MonotonicityIndicator,
}

/// Monotone stack with parameters registered in a `ParamStore`.
pub struct MonotoneNet {
    spec: MonotoneNetworkSpec,
    layers: Vec<StackLayer>,
    out_weights: ParamId,
    out_bias: ParamId,
    head_raw: Option<[ParamId; 4]>,
}

impl MonotoneNet {
    pub fn new<R: Rng>(
        spec: MonotoneNetworkSpec,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::new();
        let mut in_width = spec.input_indicator.width();
        let needs_clu = matches!(spec.base, ConvexBase::Clu);
        for (i, l) in spec.hidden.iter().enumerate() {
            let indicator = if i == 0 {
                spec.input_indicator.clone()
            } else {
                MonotonicityIndicator::all_ones(in_width)
            };
            let weights =
                store.add_linear_weight(format!("{prefix}.l{i}.w"), in_width, l.width, rng);
            let bias = store.add_bias(format!("{prefix}.l{i}.b"), l.width);
            let clu_raw = if needs_clu && !matches!(l.activation, StackActivation::SigmoidAll) {
                Some((
                    store.add(format!("{prefix}.l{i}.clu0"), Tensor::scalar(2.0)),
                    store.add(format!("{prefix}.l{i}.clu1"), Tensor::scalar(2.0)),
                ))
            } else {
                None
            };
            layers.push(StackLayer {
                weights,
                bias,
                clu_raw,
                indicator,
            });
            in_width = l.width;
        }
        let out_weights = store.add_linear_weight(format!("{prefix}.out.w"), in_width, 1, rng);
        let out_bias = store.add_bias(format!("{prefix}.out.b"), 1);
        let head_raw = if spec.head == HeadKind::Fpm {
            Some([
                store.add(format!("{prefix}.fpm.r0"), Tensor::scalar(-1.5)),
                store.add(format!("{prefix}.fpm.r1"), Tensor::scalar(0.5)),
                store.add(format!("{prefix}.fpm.r2"), Tensor::scalar(0.0)),
                store.add(format!("{prefix}.fpm.r3"), Tensor::scalar(0.5)),
            ])
        } else {
            None
        };
        Ok(MonotoneNet {
            spec,
            layers,
            out_weights,
            out_bias,
            head_raw,
        })
    }

    pub fn spec(&self) -> &MonotoneNetworkSpec {
        &self.spec
    }

    /// Forward pass. `leaves[p.0]` is the graph leaf for parameter p;
    /// `gates` supplies flattened [n*width, 3] simplex rows for each
    /// `Gated` layer, in layer order.
    pub fn forward(
        &self,
        g: &mut Graph,
        leaves: &[NodeId],
        x: NodeId,
        gates: &[NodeId],
    ) -> Result<NodeId> {
        let mut h = x;
        let mut gate_iter = gates.iter();
        for (layer, spec) in self.layers.iter().zip(&self.spec.hidden) {
            let pre = constrained_linear(
                g,
                h,
                leaves[layer.weights.0],
                leaves[layer.bias.0],
                &layer.indicator,
            )?;
            let params = layer
                .clu_raw
                .map(|(a0, a1)| clu_param_nodes(g, leaves[a0.0], leaves[a1.0]));
            h = match &spec.activation {
                StackActivation::Fixed(sel) => g.mono_act(
                    pre,
                    self.spec.base,
                    params,
                    KindSpec::PerColumn(sel.kinds()),
                )?,
                StackActivation::Gated => {
                    let gate = gate_iter.next().ok_or_else(|| {
                        Error::MalformedGates("missing gate input for gated layer".into())
                    })?;
                    adaptive_combined_graph(g, pre, *gate, self.spec.base, params)?
                }
                StackActivation::SigmoidAll => g.sigmoid(pre),
            };
        }
        let out = constrained_linear(
            g,
            h,
            leaves[self.out_weights.0],
            leaves[self.out_bias.0],
            &MonotonicityIndicator::all_ones(g.value(h).cols()),
        )?;
        match self.spec.head {
            HeadKind::Linear => Ok(out),
            HeadKind::Sigmoid => Ok(g.sigmoid(out)),
            HeadKind::Fpm => {
                let raw = self.head_raw.expect("fpm head has raw params");
                let n = g.value(out).rows();
                let cols: Vec<NodeId> = raw
                    .iter()
                    .map(|p| g.broadcast_to(leaves[p.0], &[n, 1]))
                    .collect::<Result<_>>()?;
                let (w0, w1, w2, w3) = fpm_squash_graph(
                    g,
                    cols[0],
                    cols[1],
                    cols[2],
                    cols[3],
                    self.spec.fpm_inflection_range,
                )?;
                fpm_head_graph(g, out, w0, w1, w2, w3)
            }
        }
    }

    /// Convenience: single forward over a raw input matrix using current
    /// parameter values (no gates; eval mode).
    pub fn predict(&self, store: &ParamStore, x: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let leaves = store.leaves(&mut g);
        let xn = g.leaf(x.clone());
        let out = self.forward(&mut g, &leaves, xn, &[])?;
        Ok(g.value(out).data().to_vec())
    }
}

/// One observed monotonicity violation.
#[derive(Debug, Clone)]
pub struct ViolationPair {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub fx: f64,
    pub fy: f64,
}

/// Result of a randomized chain scan.
#[derive(Debug, Clone, Default)]
pub struct ViolationReport {
    pub checked: usize,
    pub violations: usize,
    pub worst: Option<ViolationPair>,
}

pub const VIOLATION_TOL: f64 = 1e-12;

/// Sample `n_chains` pairs x <= y along the indicated directions (other
/// coordinates equal) and count f(x) > f(y) + tol. The model is evaluated
/// in one batched call over all 2*n_chains points.
pub fn monotone_violation_scan(
    f: &mut dyn FnMut(&Tensor) -> Vec<f64>,
    indicator: &MonotonicityIndicator,
    bounds: &[(f64, f64)],
    n_chains: usize,
    seed: u64,
) -> ViolationReport {
    if n_chains == 0 {
        return ViolationReport::default();
    }
    let d = indicator.width();
    assert_eq!(bounds.len(), d, "one bound pair per input dimension");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(2 * n_chains * d);
    for _ in 0..n_chains {
        let mut lo = Vec::with_capacity(d);
        let mut hi = Vec::with_capacity(d);
        for (i, &(b_lo, b_hi)) in bounds.iter().enumerate() {
            let a: f64 = rng.gen_range(b_lo..b_hi);
            match indicator.entries()[i] {
                0 => {
                    lo.push(a);
                    hi.push(a);
                }
                t => {
                    let b: f64 = rng.gen_range(b_lo..b_hi);
                    // order the pair along the indicated direction
                    let (small, large) = if a <= b { (a, b) } else { (b, a) };
                    if t == 1 {
                        lo.push(small);
                        hi.push(large);
                    } else {
                        lo.push(large);
                        hi.push(small);
                    }
                }
            }
        }
        points.extend_from_slice(&lo);
        points.extend_from_slice(&hi);
    }
    let batch = Tensor::new(vec![2 * n_chains, d], points).expect("scan batch");
    let preds = f(&batch);
    assert_eq!(preds.len(), 2 * n_chains, "scan closure output length");

    let mut report = ViolationReport {
        checked: n_chains,
        ..Default::default()
    };
    let mut worst_gap = VIOLATION_TOL;
    for c in 0..n_chains {
        let fx = preds[2 * c];
        let fy = preds[2 * c + 1];
        let gap = fx - fy;
        if gap > VIOLATION_TOL {
            report.violations += 1;
            if gap > worst_gap {
                worst_gap = gap;
                let row = |r: usize| batch.data()[r * d..(r + 1) * d].to_vec();
                report.worst = Some(ViolationPair {
                    x: row(2 * c),
                    y: row(2 * c + 1),
                    fx,
                    fy,
                });
            }
        }
    }
    report
}
