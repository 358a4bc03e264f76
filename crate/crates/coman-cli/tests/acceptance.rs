//! Acceptance suite: one test per shipping criterion, each printing a
//! single PASS line with its measured numbers. Expected values come from
//! independent oracles computed in this file (finite differences,
//! exhaustive enumeration, grid sweeps) or from closed forms checked
//! against them.

use coman::activations::{
    clu, heaviside_approx, sigmoid, ActivationSelection, CluParams, ConvexBase,
};
use coman::allocator::{
    allocate_with, brute_force_oracle, dual_objective, AllocationProblem,
};
use coman::diffcore::{Dropout, Graph, KindSpec, NodeId, ParamStore, Tensor};
use coman::models::{FeatureMeta, Model, ModelKind, ALL_MODEL_KINDS};
use coman::monolayer::{
    monotone_violation_scan, HeadKind, LayerSpec, MonotoneNet, MonotoneNetworkSpec,
    MonotonicityIndicator, StackActivation,
};
use coman::simkit::dataset::{gen_dataset, LoggedDataset, Policy};
use coman::simkit::metrics::{auc, kl_divergence, pearson};
use coman::simkit::world::{SyntheticWorld, WorldConfig, DEFAULT_WORLD_SEED};
use coman::simkit::{eval_grid, evaluate, uplift_cohorts};
use coman::stmodules::AdaptiveGateHead;
use coman::trainer::{train, TrainConfig};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn pass(criterion: usize, name: &str, detail: String, started: Instant, budget_s: f64) {
    let elapsed = started.elapsed().as_secs_f64();
    println!("ACCEPTANCE {criterion} {name}: PASS ({elapsed:.2}s) {detail}");
    assert!(
        elapsed < budget_s,
        "criterion {criterion} exceeded its {budget_s}s budget: {elapsed:.2}s"
    );
}

// ---- 1. convexity and class membership -------------------------------------

#[test]
fn criterion_01_clu_convexity_suite() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0);
    let mut pairs_checked = 0usize;
    for _ in 0..20 {
        let w0: f64 = rng.gen_range(0.2..3.5);
        let w1: f64 = rng.gen_range(0.05..(4.0 / w0));
        let p = CluParams::new(w0, w1).unwrap();
        for _ in 0..500 {
            let x: f64 = rng.gen_range(-10.0..10.0);
            let y: f64 = rng.gen_range(-10.0..10.0);
            let mid = clu(0.5 * (x + y), &p);
            let avg = 0.5 * (clu(x, &p) + clu(y, &p));
            assert!(
                mid <= avg + 1e-12,
                "midpoint convexity violated at w0={w0} w1={w1} x={x} y={y}"
            );
            pairs_checked += 1;
        }
        // class membership: zero-centred, lower bound -w0/2
        assert_eq!(clu(0.0, &p), 0.0);
        assert!((clu(-1e9, &p) + 0.5 * w0).abs() < 1e-12);
        assert!(clu(-500.0, &p) >= -0.5 * w0 - 1e-15);
    }
    assert_eq!(pairs_checked, 10_000);

    // violating the junction condition w0*w1 <= 4 must break convexity
    let bad = CluParams::new_unchecked(4.0, 2.0);
    let mut found = None;
    for _ in 0..10_000 {
        let x: f64 = rng.gen_range(-1.0..0.0);
        let y: f64 = rng.gen_range(0.0..1.0);
        let mid = clu(0.5 * (x + y), &bad);
        let avg = 0.5 * (clu(x, &bad) + clu(y, &bad));
        if mid > avg + 1e-12 {
            found = Some((x, y, mid - avg));
            break;
        }
    }
    let (x, y, gap) = found.expect("no counterexample found for w0*w1 = 8");
    pass(
        1,
        "clu convexity",
        format!("10^4 pairs convex; counterexample at x={x:.3} y={y:.3} gap={gap:.2e}"),
        started,
        5.0,
    );
}

// ---- 2. monotonicity by construction ----------------------------------------

/// Stack + optional per-layer gate heads over [monotone | context] input.
struct MatrixEntry {
    store: ParamStore,
    net: MonotoneNet,
    gate_heads: Vec<AdaptiveGateHead>,
    mono_dims: usize,
    total_dims: usize,
}

fn matrix_entry(layers: usize, style: usize, seed: u64) -> MatrixEntry {
    let mono_dims = 2usize;
    let ctx_dims = 3usize;
    let mut indicator = vec![0i8; mono_dims + ctx_dims];
    indicator[0] = 1;
    indicator[1] = -1;
    let widths = [9usize, 6, 6];
    let hidden: Vec<LayerSpec> = (0..layers)
        .map(|l| {
            let w = widths[l];
            let activation = match style {
                0 => StackActivation::Fixed(ActivationSelection::new(w, 0, 0)),
                1 => StackActivation::Fixed(ActivationSelection::new(0, w, 0)),
                2 => StackActivation::Fixed(ActivationSelection::new(w / 3, w / 3, w - 2 * (w / 3))),
                _ => StackActivation::Gated,
            };
            LayerSpec {
                width: w,
                activation,
            }
        })
        .collect();
    let spec = MonotoneNetworkSpec {
        input_indicator: MonotonicityIndicator::new_monotone(indicator).unwrap(),
        hidden,
        base: ConvexBase::Clu,
        head: HeadKind::Sigmoid,
        fpm_inflection_range: (0.0, 1.0),
    };
    let layer_widths: Vec<usize> = spec.hidden.iter().map(|l| l.width).collect();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = MonotoneNet::new(spec, &mut store, "m", &mut rng).unwrap();
    let gate_heads = if style == 3 {
        layer_widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                AdaptiveGateHead::new(&mut store, &format!("gates{i}"), ctx_dims, 8, w, &mut rng)
            })
            .collect()
    } else {
        Vec::new()
    };
    MatrixEntry {
        store,
        net,
        gate_heads,
        mono_dims,
        total_dims: mono_dims + ctx_dims,
    }
}

impl MatrixEntry {
    fn forward_graph(&self, batch: &Tensor) -> (Graph, NodeId, NodeId) {
        let mut g = Graph::new();
        let leaves = self.store.leaves(&mut g);
        let x = g.leaf(batch.clone());
        let gates: Vec<NodeId> = if self.gate_heads.is_empty() {
            Vec::new()
        } else {
            let ctx = g.slice_cols(x, self.mono_dims, self.total_dims).unwrap();
            let mut drop = Dropout::disabled();
            self.gate_heads
                .iter()
                .map(|head| head.forward(&mut g, &leaves, ctx, &mut drop).unwrap())
                .collect()
        };
        let out = self.net.forward(&mut g, &leaves, x, &gates).unwrap();
        (g, x, out)
    }

    fn predict(&self, batch: &Tensor) -> Vec<f64> {
        let (g, _, out) = self.forward_graph(batch);
        g.value(out).data().to_vec()
    }
}

#[test]
fn criterion_02_monotonicity_by_construction() {
    let started = Instant::now();
    let styles = ["pure-convex", "pure-concave", "mixed", "gated"];
    let mut scans = 0usize;
    for layers in 1..=3usize {
        for style in 0..4usize {
            let entry = matrix_entry(layers, style, 700 + (layers * 10 + style) as u64);
            let ind = entry.net.spec().input_indicator.clone();
            let bounds = vec![(-3.0, 3.0); entry.total_dims];
            let mut f = |batch: &Tensor| entry.predict(batch);
            let report = monotone_violation_scan(
                &mut f,
                &ind,
                &bounds,
                10_000,
                900 + (layers * 10 + style) as u64,
            );
            assert_eq!(
                report.violations, 0,
                "layers={layers} style={} violated",
                styles[style]
            );
            scans += report.checked;

            // gradient-sign suite: adjoint of the input batch obeys the
            // indicator signs at 1e-12
            let mut rng = ChaCha8Rng::seed_from_u64(40 + style as u64);
            let batch = Tensor::rand_uniform(&[1000, entry.total_dims], -3.0, 3.0, &mut rng);
            let (mut g, x, out) = entry.forward_graph(&batch);
            let loss = g.sum_all(out);
            g.backward(loss).unwrap();
            let gx = g.adjoint(x);
            for r in 0..1000 {
                assert!(gx.at2(r, 0) >= -1e-12, "positive-direction slope negative");
                assert!(gx.at2(r, 1) <= 1e-12, "negative-direction slope positive");
            }
        }
    }
    pass(
        2,
        "monotone by construction",
        format!("12 configs x 10^4 chains ({scans} pairs) with 0 violations; gradient signs at 1e-12"),
        started,
        30.0,
    );
}

// ---- 3. gradient correctness -------------------------------------------------

/// Check analytic input gradients of a graph builder against central
/// finite differences on `trials` seeded inputs.
fn check_op(
    name: &str,
    shapes: &[Vec<usize>],
    ranges: &[(f64, f64)],
    build: &dyn Fn(&mut Graph, &[NodeId]) -> NodeId,
    trials: usize,
    seed: u64,
) {
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..trials {
        let inputs: Vec<Tensor> = shapes
            .iter()
            .zip(ranges)
            .map(|(s, &(lo, hi))| Tensor::rand_uniform(s, lo, hi, &mut rng))
            .collect();
        let eval = |tensors: &[Tensor]| -> (f64, Vec<Tensor>) {
            let mut g = Graph::new();
            let ids: Vec<NodeId> = tensors.iter().map(|t| g.leaf(t.clone())).collect();
            let out = build(&mut g, &ids);
            let loss = g.mean_all(out);
            let v = g.value(loss).item();
            g.backward(loss).unwrap();
            (v, ids.iter().map(|&id| g.adjoint(id)).collect())
        };
        let (_, grads) = eval(&inputs);
        for (which, input) in inputs.iter().enumerate() {
            for k in 0..input.len() {
                let mut plus = inputs.clone();
                plus[which].data_mut()[k] += h;
                let mut minus = inputs.clone();
                minus[which].data_mut()[k] -= h;
                let fd = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
                let an = grads[which].data()[k];
                if an.abs().max(fd.abs()) < 1e-7 {
                    assert!(
                        (an - fd).abs() < 1e-7,
                        "{name} trial {trial} input {which}[{k}]: an {an} fd {fd}"
                    );
                } else {
                    assert!(
                        ((an - fd) / an.abs().max(fd.abs())).abs() < 1e-4,
                        "{name} trial {trial} input {which}[{k}]: an {an} fd {fd}"
                    );
                }
            }
        }
    }
}

/// Shift values away from a kink point so central differences stay on one
/// branch.
fn avoid(t: Tensor, kinks: &[f64], margin: f64) -> Tensor {
    t.map(|v| {
        let mut v = v;
        for &k in kinks {
            if (v - k).abs() < margin {
                v = k + margin * if v >= k { 1.0 } else { -1.0 };
            }
        }
        v
    })
}

#[test]
fn criterion_03_gradient_correctness() {
    let started = Instant::now();
    let n = 50;
    let r = (-2.0, 2.0);
    let pos = (0.1, 2.0);
    type B = dyn Fn(&mut Graph, &[NodeId]) -> NodeId;
    let m34 = vec![3usize, 4];
    let cases: Vec<(&str, Vec<Vec<usize>>, Vec<(f64, f64)>, Box<B>)> = vec![
        ("add", vec![m34.clone(), m34.clone()], vec![r, r],
         Box::new(|g, i| g.add(i[0], i[1]).unwrap())),
        ("add_broadcast", vec![m34.clone(), vec![1, 4]], vec![r, r],
         Box::new(|g, i| g.add(i[0], i[1]).unwrap())),
        ("sub", vec![m34.clone(), vec![3, 1]], vec![r, r],
         Box::new(|g, i| g.sub(i[0], i[1]).unwrap())),
        ("mul", vec![m34.clone(), m34.clone()], vec![r, r],
         Box::new(|g, i| g.mul(i[0], i[1]).unwrap())),
        ("mul_broadcast", vec![m34.clone(), vec![1, 4]], vec![r, r],
         Box::new(|g, i| g.mul(i[0], i[1]).unwrap())),
        ("matmul", vec![m34.clone(), vec![4, 2]], vec![r, r],
         Box::new(|g, i| g.matmul(i[0], i[1]).unwrap())),
        ("transpose", vec![m34.clone()], vec![r],
         Box::new(|g, i| { let t = g.transpose(i[0]).unwrap(); g.sigmoid(t) })),
        ("concat", vec![m34.clone(), vec![3, 2]], vec![r, r],
         Box::new(|g, i| { let c = g.concat_cols(i[0], i[1]).unwrap(); g.sigmoid(c) })),
        ("slice", vec![m34.clone()], vec![r],
         Box::new(|g, i| { let s = g.slice_cols(i[0], 1, 3).unwrap(); g.sigmoid(s) })),
        ("sum_all", vec![m34.clone()], vec![r],
         Box::new(|g, i| g.sum_all(i[0]))),
        ("mean_all", vec![m34.clone()], vec![r],
         Box::new(|g, i| g.mean_all(i[0]))),
        ("sum_rows", vec![m34.clone()], vec![r],
         Box::new(|g, i| { let s = g.sum_rows(i[0]); g.sigmoid(s) })),
        ("scale", vec![m34.clone()], vec![r],
         Box::new(|g, i| g.scale(i[0], -1.7))),
        ("add_scalar", vec![m34.clone()], vec![r],
         Box::new(|g, i| g.add_scalar(i[0], 0.37))),
        ("sigmoid", vec![m34.clone()], vec![r],
         Box::new(|g, i| g.sigmoid(i[0]))),
        ("softmax_rows", vec![m34.clone()], vec![r],
         Box::new(|g, i| { let s = g.softmax_rows(i[0]); g.mul(s, s).unwrap() })),
        ("exp", vec![m34.clone()], vec![r],
         Box::new(|g, i| g.exp(i[0]))),
        ("log", vec![m34.clone()], vec![pos],
         Box::new(|g, i| g.log(i[0]).unwrap())),
        ("softplus", vec![m34.clone()], vec![r],
         Box::new(|g, i| g.softplus(i[0]))),
        ("broadcast_to", vec![vec![1, 4]], vec![r],
         Box::new(|g, i| { let b = g.broadcast_to(i[0], &[3, 4]).unwrap(); g.sigmoid(b) })),
        ("reshape", vec![m34.clone()], vec![r],
         Box::new(|g, i| { let s = g.reshape(i[0], vec![12, 1]).unwrap(); g.sigmoid(s) })),
        ("gather", vec![vec![5, 3]], vec![r],
         Box::new(|g, i| {
             let p = g.gather(i[0], vec![4, 0, 2, 2]).unwrap();
             g.sigmoid(p)
         })),
    ];
    for (name, shapes, ranges, build) in &cases {
        check_op(name, shapes, ranges, build.as_ref(), n, 0x5EED);
    }

    // kinked ops: sample away from their branch points
    let kinked: Vec<(&str, Vec<f64>, Box<B>)> = vec![
        ("abs", vec![0.0], Box::new(|g: &mut Graph, i: &[NodeId]| g.abs(i[0]))),
        ("relu", vec![0.0], Box::new(|g: &mut Graph, i: &[NodeId]| g.relu(i[0]))),
        ("leaky_relu", vec![0.0], Box::new(|g: &mut Graph, i: &[NodeId]| g.leaky_relu(i[0], 0.01))),
        ("elu", vec![0.0], Box::new(|g: &mut Graph, i: &[NodeId]| g.elu(i[0], 1.0))),
        ("clamp_unit", vec![0.05, 0.95], Box::new(|g: &mut Graph, i: &[NodeId]| g.clamp_unit(i[0], 0.05))),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0xF00D);
    for (name, kinks, build) in &kinked {
        for trial in 0..n {
            let raw = Tensor::rand_uniform(&[3, 4], -2.0, 2.0, &mut rng);
            let x = avoid(raw, kinks, 1e-3);
            let eval = |t: &Tensor| {
                let mut g = Graph::new();
                let id = g.leaf(t.clone());
                let out = build(&mut g, &[id]);
                let loss = g.mean_all(out);
                let v = g.value(loss).item();
                g.backward(loss).unwrap();
                (v, g.adjoint(id))
            };
            let (_, grad) = eval(&x);
            let h = 1e-5;
            for k in 0..x.len() {
                let mut plus = x.clone();
                plus.data_mut()[k] += h;
                let mut minus = x.clone();
                minus.data_mut()[k] -= h;
                let fd = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
                let an = grad.data()[k];
                if an.abs().max(fd.abs()) < 1e-7 {
                    assert!((an - fd).abs() < 1e-7, "{name} trial {trial}");
                } else {
                    assert!(
                        ((an - fd) / an.abs().max(fd.abs())).abs() < 1e-4,
                        "{name} trial {trial}: an {an} fd {fd}"
                    );
                }
            }
        }
    }

    // shaped monotone activations with trainable parameters
    for shape in [
        coman::activations::Curvature::Convex,
        coman::activations::Curvature::Concave,
        coman::activations::Curvature::Saturated,
    ] {
        for trial in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(0xAC + trial as u64);
            let raw = Tensor::rand_uniform(&[3, 3], -2.0, 2.0, &mut rng);
            let x = avoid(raw, &[-1.0, 0.0, 1.0], 2e-3);
            let w0v: f64 = rng.gen_range(0.5..2.5);
            let w1v: f64 = rng.gen_range(0.3..(4.0 / w0v).min(2.5));
            let eval = |xs: &Tensor, a: f64, b: f64| {
                let mut g = Graph::new();
                let xid = g.leaf(xs.clone());
                let w0 = g.leaf(Tensor::scalar(a));
                let w1 = g.leaf(Tensor::scalar(b));
                let out = g
                    .mono_act(xid, ConvexBase::Clu, Some((w0, w1)), KindSpec::Uniform(shape))
                    .unwrap();
                let loss = g.mean_all(out);
                let v = g.value(loss).item();
                g.backward(loss).unwrap();
                (v, g.adjoint(xid), g.adjoint(w0).item(), g.adjoint(w1).item())
            };
            let (_, gx, gw0, gw1) = eval(&x, w0v, w1v);
            let h = 1e-5;
            for k in 0..x.len() {
                let mut plus = x.clone();
                plus.data_mut()[k] += h;
                let mut minus = x.clone();
                minus.data_mut()[k] -= h;
                let fd = (eval(&plus, w0v, w1v).0 - eval(&minus, w0v, w1v).0) / (2.0 * h);
                let an = gx.data()[k];
                let denom = an.abs().max(fd.abs()).max(1e-7);
                assert!(((an - fd) / denom).abs() < 1e-4, "{shape:?} x[{k}]");
            }
            let fd0 = (eval(&x, w0v + h, w1v).0 - eval(&x, w0v - h, w1v).0) / (2.0 * h);
            let fd1 = (eval(&x, w0v, w1v + h).0 - eval(&x, w0v, w1v - h).0) / (2.0 * h);
            for (an, fd) in [(gw0, fd0), (gw1, fd1)] {
                let denom = an.abs().max(fd.abs()).max(1e-7);
                assert!(((an - fd) / denom).abs() < 1e-4, "{shape:?} params");
            }
        }
    }

    // full models: loss gradient w.r.t. sampled parameter coordinates
    let world = SyntheticWorld::generate(WorldConfig::default()).unwrap();
    let data = gen_dataset(&world, 64, Policy::Uniform, 777).unwrap();
    let meta = FeatureMeta::fit(&data.records, world.config.direction).unwrap();
    for kind in ALL_MODEL_KINDS {
        let mut model = Model::build(kind, meta.clone(), 99).unwrap();
        // the trainable CLU parameters initialize exactly on the product
        // clamp boundary; move them inside so the check runs at a
        // differentiable point
        let clu_ids: Vec<coman::diffcore::ParamId> = model
            .store()
            .ids()
            .filter(|&id| model.store().name(id).contains(".clu1"))
            .collect();
        for id in clu_ids {
            model.store_mut().set(id, Tensor::scalar(1.9));
        }
        let batch = &data.records[..8];
        let labels: Vec<u8> = batch.iter().map(|r| r.label).collect();
        let eval = |store: &ParamStore| -> (f64, Vec<Tensor>) {
            let mut g = Graph::new();
            let leaves = store.leaves(&mut g);
            let mut drop = Dropout::disabled();
            let out = model
                .forward_batch(&mut g, &leaves, batch, None, &mut drop)
                .unwrap();
            let (ce, _) = coman::trainer::cross_entropy_loss(&mut g, out.cvr, &labels).unwrap();
            let loss = match out.value {
                Some(v) => {
                    let targets: Vec<f64> = batch.iter().map(|r| r.value / 25.0).collect();
                    let se =
                        coman::trainer::squared_error_loss(&mut g, v, &targets).unwrap();
                    let sw = g.scale(se, 0.25);
                    g.add(ce, sw).unwrap()
                }
                None => ce,
            };
            let v = g.value(loss).item();
            g.backward(loss).unwrap();
            (v, leaves.iter().map(|&l| g.adjoint(l)).collect())
        };
        let (_, grads) = eval(model.store());
        let mut pick = ChaCha8Rng::seed_from_u64(1234 + kind.name().len() as u64);
        let mut checked = 0usize;
        let mut attempts = 0usize;
        while checked < 50 && attempts < 400 {
            attempts += 1;
            let pid = coman::diffcore::ParamId(pick.gen_range(0..model.store().len()));
            let t = model.store().get(pid).clone();
            if t.is_empty() {
                continue;
            }
            let k = pick.gen_range(0..t.len());
            let an = grads[pid.0].data()[k];
            let h = 1e-5;
            let mut plus = model.store().clone();
            let mut tp = t.clone();
            tp.data_mut()[k] += h;
            plus.set(pid, tp);
            let mut minus = model.store().clone();
            let mut tm = t.clone();
            tm.data_mut()[k] -= h;
            minus.set(pid, tm);
            let fd = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
            if an.abs().max(fd.abs()) < 1e-7 {
                assert!((an - fd).abs() < 1e-7, "{kind} param {k}");
            } else {
                assert!(
                    ((an - fd) / an.abs().max(fd.abs())).abs() < 1e-4,
                    "{kind} {} [{k}]: an {an} fd {fd}",
                    model.store().name(pid)
                );
            }
            checked += 1;
        }
        assert_eq!(checked, 50, "{kind} could not sample 50 coordinates");
    }

    pass(
        3,
        "gradient correctness",
        format!("{} ops + 3 shaped activations + {} full models checked", 27, ALL_MODEL_KINDS.len()),
        started,
        60.0,
    );
}

// ---- 4. universal approximation smoke ---------------------------------------

fn fit_target(target: &dyn Fn(f64) -> f64, sel: ActivationSelection, seed: u64) -> f64 {
    let xs: Vec<f64> = (0..256).map(|i| -2.0 + 4.0 * i as f64 / 255.0).collect();
    let spec = MonotoneNetworkSpec {
        input_indicator: MonotonicityIndicator::new_monotone(vec![1]).unwrap(),
        hidden: vec![LayerSpec {
            width: 32,
            activation: StackActivation::Fixed(sel),
        }],
        base: ConvexBase::Clu,
        head: HeadKind::Linear,
        fpm_inflection_range: (0.0, 1.0),
    };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = MonotoneNet::new(spec, &mut store, "ua", &mut rng).unwrap();
    let x = Tensor::new(vec![xs.len(), 1], xs.clone()).unwrap();
    let y: Vec<f64> = xs.iter().map(|&v| target(v)).collect();
    let mut opt = coman::diffcore::Adagrad::new(1.0, 1e-8, &store).unwrap();
    let mut mse = f64::INFINITY;
    for _ in 0..6000 {
        let mut g = Graph::new();
        let leaves = store.leaves(&mut g);
        let xn = g.leaf(x.clone());
        let out = net.forward(&mut g, &leaves, xn, &[]).unwrap();
        let yn = g.leaf(Tensor::new(vec![xs.len(), 1], y.clone()).unwrap());
        let d = g.sub(out, yn).unwrap();
        let sq = g.mul(d, d).unwrap();
        let loss = g.mean_all(sq);
        mse = g.value(loss).item();
        if mse < 5e-4 {
            break;
        }
        g.backward(loss).unwrap();
        let grads = store.grads(&g, &leaves);
        opt.step(&mut store, &grads).unwrap();
    }
    mse
}

#[test]
fn criterion_04_universal_approximation_smoke() {
    let started = Instant::now();
    let targets: Vec<(&str, Box<dyn Fn(f64) -> f64>, ActivationSelection)> = vec![
        (
            "sigmoid(4x)",
            Box::new(|x: f64| sigmoid(4.0 * x)),
            ActivationSelection::new(0, 0, 32),
        ),
        (
            "scaled cubic",
            Box::new(|x: f64| ((x / 2.0).powi(3) + 1.0) / 2.0),
            ActivationSelection::new(8, 8, 16),
        ),
        (
            "piecewise ramp",
            Box::new(|x: f64| {
                if x < -1.0 {
                    0.05 * (x + 1.0)
                } else if x <= 1.0 {
                    0.5 * (x + 1.0)
                } else {
                    1.0 + 0.05 * (x - 1.0)
                }
            }),
            ActivationSelection::new(8, 8, 16),
        ),
    ];
    let mut detail = String::new();
    for (i, (name, f, sel)) in targets.iter().enumerate() {
        let mse = fit_target(f.as_ref(), *sel, 10 + i as u64);
        assert!(mse < 1e-3, "{name} grid mse {mse}");
        detail.push_str(&format!("{name} mse={mse:.2e}; "));
    }
    pass(4, "universal approximation", detail, started, 120.0);
}

// ---- 5. heaviside limit -------------------------------------------------------

#[test]
fn criterion_05_heaviside_limit() {
    let started = Instant::now();
    let p = CluParams::default();
    // sampled sup over |x| > 1/a: per scale, walk a fresh grid from just
    // outside the exclusion zone to a fixed outer radius
    let sup_dist = |a: f64| -> f64 {
        let inner = 1.0 / a;
        let outer = 4.0f64;
        let steps = 4000usize;
        let mut sup: f64 = 0.0;
        for j in 1..=steps {
            let x = inner + (outer - inner) * j as f64 / steps as f64;
            sup = sup.max((1.0 - heaviside_approx(x, a, &p)).abs());
            sup = sup.max(heaviside_approx(-x, a, &p).abs());
        }
        sup
    };
    let mut prev = f64::INFINITY;
    let mut detail = String::new();
    let mut a = 1.0f64;
    while a <= 256.0 {
        let d = sup_dist(a);
        assert!(
            d < prev,
            "sup distance did not strictly decrease at a={a}: {d} vs {prev}"
        );
        detail.push_str(&format!("a={a}: {d:.4}; "));
        prev = d;
        a *= 2.0;
    }
    pass(5, "heaviside limit", detail, started, 10.0);
}

// ---- 6. allocator vs oracle ----------------------------------------------------

#[test]
fn criterion_06_allocator_vs_oracle() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA110C);
    let mut solved = 0usize;
    let mut exact = 0usize;
    let mut infeasible = 0usize;
    for instance in 0..100 {
        let n_users = rng.gen_range(1..=5usize);
        let n_treat = rng.gen_range(2..=4usize);
        let mut treatments: Vec<f64> = (0..n_treat)
            .map(|k| 0.5 + k as f64 + rng.gen_range(0.0..0.4))
            .collect();
        treatments.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let responses: Vec<f64> = (0..n_users * n_treat)
            .map(|_| rng.gen_range(0.01..0.99))
            .collect();
        let budget = rng.gen_range(0.4..4.5);
        let p = AllocationProblem::anonymous(treatments, responses, budget).unwrap();
        match allocate_with(&p, 1e-9, 200) {
            Err(coman::Error::InfeasibleBudget { min_treatment, .. }) => {
                assert!(min_treatment > budget, "instance {instance}");
                infeasible += 1;
                continue;
            }
            Err(e) => panic!("instance {instance}: {e}"),
            Ok(plan) => {
                let (_, oracle_obj) = brute_force_oracle(&p).unwrap();
                assert!(
                    oracle_obj - plan.objective <= plan.gap_bound + 1e-9,
                    "instance {instance}: oracle {oracle_obj} plan {} bound {}",
                    plan.objective,
                    plan.gap_bound
                );
                assert!(plan.budget_ratio <= budget + 1e-12);
                assert!(
                    plan.slackness_residual <= 1e-6,
                    "instance {instance}: slackness {}",
                    plan.slackness_residual
                );
                if (plan.budget_ratio - budget).abs() <= 1e-9 || plan.lambda_star == 0.0 {
                    // binding-exact or unconstrained: the dual plan must be
                    // optimal outright
                    assert!(
                        (oracle_obj - plan.objective).abs() <= 1e-9,
                        "instance {instance} expected exact optimum"
                    );
                    exact += 1;
                }
                // weak duality spot check
                for lambda in [0.0, plan.lambda_star, plan.lambda_star + 1.0] {
                    let (dv, _) = dual_objective(&p, lambda).unwrap();
                    assert!(-dv >= oracle_obj - 1e-9);
                }
                solved += 1;
            }
        }
    }
    assert!(solved >= 60, "too few feasible instances: {solved}");
    pass(
        6,
        "allocator vs oracle",
        format!("{solved} solved ({exact} provably exact), {infeasible} infeasible rejected"),
        started,
        60.0,
    );
}

// ---- 7. benchmark relative ordering -------------------------------------------

const BENCH_SEEDS: [u64; 5] = [101, 102, 103, 104, 105];

fn bench_config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.05,
        epochs: 4,
        seed,
        early_stop_patience: None,
        ..TrainConfig::default()
    }
}

#[test]
fn criterion_07_benchmark_relative_ordering() {
    let started = Instant::now();
    let world = SyntheticWorld::generate(WorldConfig::default()).unwrap();
    let train_data = gen_dataset(&world, 100_000, Policy::Biased, DEFAULT_WORLD_SEED + 1).unwrap();
    let eval_data = gen_dataset(&world, 10_000, Policy::Uniform, DEFAULT_WORLD_SEED + 2).unwrap();
    let meta = FeatureMeta::fit(&train_data.records, world.config.direction).unwrap();

    let kinds = [
        ModelKind::Dnn,
        ModelKind::ComanB,
        ModelKind::ComanNoAa,
        ModelKind::ComanNoSt,
        ModelKind::Coman,
    ];
    let mut kl = std::collections::HashMap::new();
    let mut mae = std::collections::HashMap::new();
    for kind in kinds {
        kl.insert(kind, Vec::new());
        mae.insert(kind, Vec::new());
    }
    for seed in BENCH_SEEDS {
        for kind in kinds {
            let mut model = Model::build(kind, meta.clone(), seed).unwrap();
            train(&mut model, &train_data, None, &bench_config(seed)).unwrap();
            let report = evaluate(&model, &eval_data, &world).unwrap();
            println!(
                "  bench seed={seed} model={kind}: kl={:.5} mae={:.4}",
                report.overall.kl, report.overall.mae
            );
            kl.get_mut(&kind).unwrap().push(report.overall.kl);
            mae.get_mut(&kind).unwrap().push(report.overall.mae);
        }
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let wins = |a: &[f64], b: &[f64]| a.iter().zip(b).filter(|(x, y)| x < y).count();

    let coman_kl = &kl[&ModelKind::Coman];
    let coman_mae = &mae[&ModelKind::Coman];
    for rival in [ModelKind::Dnn, ModelKind::ComanB] {
        let kl_wins = wins(coman_kl, &kl[&rival]);
        let mae_wins = wins(coman_mae, &mae[&rival]);
        assert!(
            kl_wins >= 4,
            "full model beat {rival} on KL only {kl_wins}/5 seeds"
        );
        assert!(
            mae_wins >= 4,
            "full model beat {rival} on MAE only {mae_wins}/5 seeds"
        );
    }
    let m_full = mean(coman_kl);
    let m_base = mean(&kl[&ModelKind::ComanB]);
    for ablation in [ModelKind::ComanNoAa, ModelKind::ComanNoSt] {
        let m = mean(&kl[&ablation]);
        assert!(
            m_full < m && m < m_base,
            "{ablation} mean KL {m:.5} not between full {m_full:.5} and base {m_base:.5}"
        );
    }
    pass(
        7,
        "benchmark ordering",
        format!(
            "mean KL: coman={:.5} no-aa={:.5} no-st={:.5} coman-b={:.5} dnn={:.5}",
            m_full,
            mean(&kl[&ModelKind::ComanNoAa]),
            mean(&kl[&ModelKind::ComanNoSt]),
            m_base,
            mean(&kl[&ModelKind::Dnn])
        ),
        started,
        900.0,
    );
}

// ---- 8. uplift cohort ordering -------------------------------------------------

#[test]
fn criterion_08_uplift_cohort_ordering() {
    let started = Instant::now();
    let world = SyntheticWorld::generate(WorldConfig {
        two_tier: true,
        ..WorldConfig::default()
    })
    .unwrap();
    let train_data = gen_dataset(&world, 20_000, Policy::Biased, 51).unwrap();
    let eval_data = gen_dataset(&world, 4000, Policy::Uniform, 52).unwrap();
    let meta = FeatureMeta::fit(&train_data.records, world.config.direction).unwrap();
    let grid = eval_grid(&world);
    let mut detail = String::new();
    for seed in BENCH_SEEDS {
        let mut model = Model::build(ModelKind::Coman, meta.clone(), seed).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            ..bench_config(seed)
        };
        train(&mut model, &train_data, None, &cfg).unwrap();
        let cohorts = uplift_cohorts(&model, &eval_data, &grid, 5).unwrap();
        assert_eq!(cohorts.len(), 5);
        assert!(
            cohorts[0].mean_uplift > cohorts[4].mean_uplift,
            "seed {seed}: cohort1 {} <= cohort5 {}",
            cohorts[0].mean_uplift,
            cohorts[4].mean_uplift
        );
        detail.push_str(&format!(
            "s{seed}: {:.3}>{:.3}; ",
            cohorts[0].mean_uplift, cohorts[4].mean_uplift
        ));
    }
    pass(8, "uplift cohort ordering", detail, started, 300.0);
}

// ---- 9. pipeline determinism ----------------------------------------------------

#[test]
fn criterion_09_pipeline_determinism() {
    let started = Instant::now();
    let bin = env!("CARGO_BIN_EXE_coman");
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"epochs": 2, "learning_rate": 0.05}"#).unwrap();
    let run_pipeline = |tag: &str| -> std::path::PathBuf {
        let root = dir.path().join(tag);
        let data = root.join("data");
        let sh = |args: &[&str]| {
            let out = std::process::Command::new(bin)
                .args(args)
                .output()
                .expect("spawn");
            assert!(
                out.status.success(),
                "{args:?}: {}",
                String::from_utf8_lossy(&out.stderr)
            );
        };
        sh(&[
            "gen", "--seed", "42", "--n-users", "3000", "--out",
            data.to_str().unwrap(),
        ]);
        sh(&[
            "train", "--model", "coman", "--data", data.to_str().unwrap(),
            "--config", cfg.to_str().unwrap(), "--seed", "7",
            "--out", root.join("model").to_str().unwrap(),
        ]);
        sh(&[
            "eval", "--checkpoint", root.join("model/checkpoint.json").to_str().unwrap(),
            "--data", data.join("eval.csv").to_str().unwrap(),
            "--world", data.join("world.json").to_str().unwrap(),
            "--out", root.join("eval").to_str().unwrap(),
        ]);
        sh(&[
            "allocate", "--checkpoint", root.join("model/checkpoint.json").to_str().unwrap(),
            "--data", data.join("eval.csv").to_str().unwrap(),
            "--budget", "2.0", "--out", root.join("alloc").to_str().unwrap(),
        ]);
        root
    };
    let a = run_pipeline("a");
    let b = run_pipeline("b");
    let artifacts = [
        "data/world.json",
        "data/train.csv",
        "data/eval.csv",
        "data/dataset_meta.json",
        "model/checkpoint.json",
        "model/loss_trace.csv",
        "eval/eval_report.json",
        "eval/metrics.csv",
        "eval/curves.csv",
        "eval/uplift_cohorts.csv",
        "alloc/plan.csv",
        "alloc/summary.json",
    ];
    for rel in artifacts {
        let bytes_a = std::fs::read(a.join(rel)).unwrap();
        let bytes_b = std::fs::read(b.join(rel)).unwrap();
        assert_eq!(bytes_a, bytes_b, "artifact {rel} differs between runs");
    }
    pass(
        9,
        "pipeline determinism",
        format!("{} artifacts byte-identical", artifacts.len()),
        started,
        300.0,
    );
}

// ---- 10. metric identities -------------------------------------------------------

#[test]
fn criterion_10_metric_identities() {
    let started = Instant::now();
    let p = [0.1, 0.3, 0.4, 0.2];
    assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
    let labels = [0u8, 0, 1, 1, 1];
    let scores = [0.1, 0.2, 0.6, 0.7, 0.9];
    assert_eq!(auc(&labels, &scores), Some(1.0));
    let xs = [1.0, -2.0, 7.0, 0.5];
    let (r, flag) = pearson(&xs, &xs);
    assert_eq!(r, 1.0);
    assert!(!flag);

    // slice additivity of MAE on a real evaluation report
    let world = SyntheticWorld::generate(WorldConfig::default()).unwrap();
    let eval_data: LoggedDataset = gen_dataset(&world, 2000, Policy::Uniform, 61).unwrap();
    let meta = FeatureMeta::fit(&eval_data.records, world.config.direction).unwrap();
    let model = Model::build(ModelKind::ComanB, meta, 62).unwrap();
    let report = evaluate(&model, &eval_data, &world).unwrap();
    let weighted: f64 = report
        .per_period
        .iter()
        .map(|s| s.metrics.mae * s.metrics.n as f64)
        .sum::<f64>()
        / report.overall.n as f64;
    assert!(
        (weighted - report.overall.mae).abs() < 1e-12,
        "slice additivity violated: overall {} vs weighted {}",
        report.overall.mae,
        weighted
    );
    let by_city: f64 = report
        .per_city
        .iter()
        .map(|s| s.metrics.mae * s.metrics.n as f64)
        .sum::<f64>()
        / report.overall.n as f64;
    assert!((by_city - report.overall.mae).abs() < 1e-12);
    pass(
        10,
        "metric identities",
        "KL(p||p)=0, AUC(perfect)=1, Pearson(x,x)=1, MAE additivity at 1e-12".to_string(),
        started,
        60.0,
    );
}
