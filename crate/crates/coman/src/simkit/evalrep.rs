//! Model evaluation against the simulator's known curves: accuracy metrics
//! on logged labels plus distribution metrics on predicted-vs-true
//! sensitivity curves, sliced by period and city.
//!
//! Distribution metrics (KL, correlation) compare response mass over the
//! joint (cell, treatment-bin) space within a slice, so per-cell curve
//! errors cannot cancel by pooling; this also makes the overall KL at
//! least as large as the record-weighted slice KLs, never smaller.

use crate::error::{Error, Result};
use crate::models::Model;
use crate::simkit::dataset::LoggedDataset;
use crate::simkit::metrics::{auc, kl_divergence, pearson, KL_BINS};
use crate::simkit::world::SyntheticWorld;
use crate::stmodules::{Period, ALL_PERIODS};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSet {
    pub n: usize,
    pub auc: Option<f64>,
    pub mae: f64,
    pub mse: f64,
    pub kl: f64,
    pub pearson: f64,
    pub pearson_degenerate: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SliceReport {
    pub name: String,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveRow {
    pub city: u32,
    pub period: String,
    pub treatment: f64,
    pub predicted: f64,
    pub truth: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub overall: MetricSet,
    pub per_period: Vec<SliceReport>,
    pub per_city: Vec<SliceReport>,
    pub curves: Vec<CurveRow>,
    pub notices: Vec<String>,
}

/// Evaluation grid over the world's treatment span.
pub fn eval_grid(world: &SyntheticWorld) -> Vec<f64> {
    let (lo, hi) = world.treatment_span();
    (0..KL_BINS)
        .map(|k| lo + (hi - lo) * k as f64 / (KL_BINS - 1) as f64)
        .collect()
}

/// Predicted curves per record over the grid, as grid-major rows.
pub fn predicted_curves(
    model: &Model,
    data: &LoggedDataset,
    grid: &[f64],
) -> Result<Vec<Vec<f64>>> {
    grid.iter()
        .map(|&t| model.predict_at(&data.records, t))
        .collect()
}

/// Per-(city, period) aggregates over the evaluation split.
struct CellStats {
    city: u32,
    period: Period,
    n: usize,
    mean_pred: Vec<f64>,
    truth: Vec<f64>,
    /// Sum over records of the per-record curve MAE / MSE.
    mae_sum: f64,
    mse_sum: f64,
}

fn cell_stats(
    data: &LoggedDataset,
    world: &SyntheticWorld,
    grid: &[f64],
    pred_curves: &[Vec<f64>],
) -> Vec<CellStats> {
    let mut cells = Vec::new();
    for city in 1..=5u32 {
        for period in ALL_PERIODS {
            let idx: Vec<usize> = (0..data.len())
                .filter(|&i| {
                    data.records[i].city == city && data.records[i].period() == period
                })
                .collect();
            if idx.is_empty() {
                continue;
            }
            let truth: Vec<f64> = grid
                .iter()
                .map(|&t| world.true_cvr(city, period, t))
                .collect();
            let mut mean_pred = vec![0.0f64; grid.len()];
            let mut mae_sum = 0.0;
            let mut mse_sum = 0.0;
            for &i in &idx {
                let mut mae_i = 0.0;
                let mut mse_i = 0.0;
                for k in 0..grid.len() {
                    let p = pred_curves[k][i];
                    mean_pred[k] += p;
                    let d = p - truth[k];
                    mae_i += d.abs();
                    mse_i += d * d;
                }
                mae_sum += mae_i / grid.len() as f64;
                mse_sum += mse_i / grid.len() as f64;
            }
            for v in &mut mean_pred {
                *v /= idx.len() as f64;
            }
            cells.push(CellStats {
                city,
                period,
                n: idx.len(),
                mean_pred,
                truth,
                mae_sum,
                mse_sum,
            });
        }
    }
    cells
}

/// Metrics over a set of cells: errors are record-weighted means of
/// per-record curve errors; KL and correlation run over the joint
/// (cell, bin) response mass with cells weighted by record share.
fn metric_set(
    cells: &[&CellStats],
    labels: Vec<u8>,
    scores: Vec<f64>,
) -> MetricSet {
    let n: usize = cells.iter().map(|c| c.n).sum();
    let mae = cells.iter().map(|c| c.mae_sum).sum::<f64>() / n as f64;
    let mse = cells.iter().map(|c| c.mse_sum).sum::<f64>() / n as f64;
    let mut joint_pred = Vec::new();
    let mut joint_truth = Vec::new();
    for c in cells {
        let w = c.n as f64 / n as f64;
        joint_pred.extend(c.mean_pred.iter().map(|&v| w * v));
        joint_truth.extend(c.truth.iter().map(|&v| w * v));
    }
    let kl = kl_divergence(&joint_pred, &joint_truth).expect("same grid");
    let (corr, degenerate) = pearson(&joint_pred, &joint_truth);
    MetricSet {
        n,
        auc: auc(&labels, &scores),
        mae,
        mse,
        kl,
        pearson: corr,
        pearson_degenerate: degenerate,
    }
}

/// Score a trained model on an evaluation split against ground truth.
pub fn evaluate(model: &Model, data: &LoggedDataset, world: &SyntheticWorld) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::InvalidParam("empty evaluation dataset".into()));
    }
    let grid = eval_grid(world);
    let pred_curves = predicted_curves(model, data, &grid)?;
    let logged_preds = model.predict(&data.records)?;
    let cells = cell_stats(data, world, &grid, &pred_curves);

    let labels_for = |pred: &dyn Fn(usize) -> bool| -> (Vec<u8>, Vec<f64>) {
        let mut labels = Vec::new();
        let mut scores = Vec::new();
        for i in 0..data.len() {
            if pred(i) {
                labels.push(data.records[i].label);
                scores.push(logged_preds[i]);
            }
        }
        (labels, scores)
    };

    let all: Vec<&CellStats> = cells.iter().collect();
    let (labels, scores) = labels_for(&|_| true);
    let overall = metric_set(&all, labels, scores);

    let mut notices = Vec::new();
    let mut per_period = Vec::new();
    for p in ALL_PERIODS {
        let subset: Vec<&CellStats> = cells.iter().filter(|c| c.period == p).collect();
        if subset.is_empty() {
            notices.push(format!("period slice {} omitted: no records", p.name()));
            continue;
        }
        let (labels, scores) = labels_for(&|i| data.records[i].period() == p);
        per_period.push(SliceReport {
            name: p.name().to_string(),
            metrics: metric_set(&subset, labels, scores),
        });
    }
    let mut per_city = Vec::new();
    for city in 1..=5u32 {
        let subset: Vec<&CellStats> = cells.iter().filter(|c| c.city == city).collect();
        if subset.is_empty() {
            notices.push(format!("city slice {city} omitted: no records"));
            continue;
        }
        let (labels, scores) = labels_for(&|i| data.records[i].city == city);
        per_city.push(SliceReport {
            name: format!("city_{city}"),
            metrics: metric_set(&subset, labels, scores),
        });
    }

    // per-cell mean curve dumps for external plotting
    let mut curves = Vec::new();
    for c in &cells {
        for (k, &t) in grid.iter().enumerate() {
            curves.push(CurveRow {
                city: c.city,
                period: c.period.name().to_string(),
                treatment: t,
                predicted: c.mean_pred[k],
                truth: c.truth[k],
            });
        }
    }

    Ok(EvalReport {
        model: model.kind().name().to_string(),
        overall,
        per_period,
        per_city,
        curves,
        notices,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write the report as JSON plus flat CSV tables.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let json_path = dir.join("eval_report.json");
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(report).expect("report serializes") + "\n",
    )
    .map_err(|e| Error::io(json_path.display().to_string(), e))?;

    let metrics_path = dir.join("metrics.csv");
    let mut f = std::fs::File::create(&metrics_path)
        .map_err(|e| Error::io(metrics_path.display().to_string(), e))?;
    writeln!(f, "slice,n,auc,mae,mse,kl,pearson,pearson_degenerate")
        .map_err(|e| Error::io(metrics_path.display().to_string(), e))?;
    let mut row = |name: &str, m: &MetricSet| -> std::io::Result<()> {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            name,
            m.n,
            fmt_opt(m.auc),
            m.mae,
            m.mse,
            m.kl,
            m.pearson,
            m.pearson_degenerate
        )
    };
    row("overall", &report.overall)
        .and_then(|_| {
            for s in report.per_period.iter().chain(&report.per_city) {
                row(&s.name, &s.metrics)?;
            }
            Ok(())
        })
        .map_err(|e| Error::io(metrics_path.display().to_string(), e))?;

    let curves_path = dir.join("curves.csv");
    let mut cf = std::fs::File::create(&curves_path)
        .map_err(|e| Error::io(curves_path.display().to_string(), e))?;
    writeln!(cf, "city,period,treatment,predicted,truth")
        .map_err(|e| Error::io(curves_path.display().to_string(), e))?;
    for c in &report.curves {
        writeln!(
            cf,
            "{},{},{},{},{}",
            c.city, c.period, c.treatment, c.predicted, c.truth
        )
        .map_err(|e| Error::io(curves_path.display().to_string(), e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{FeatureMeta, Model, ModelKind};
    use crate::simkit::dataset::{gen_dataset, Policy};

    #[test]
    fn grid_spans_the_world_treatments() {
        let world = SyntheticWorld::generate(Default::default()).unwrap();
        let grid = eval_grid(&world);
        assert_eq!(grid.len(), KL_BINS);
        assert_eq!(grid[0], 0.0);
        assert_eq!(*grid.last().unwrap(), 5.0);
    }

    #[test]
    fn empty_slices_are_omitted_with_notices() {
        let world = SyntheticWorld::generate(Default::default()).unwrap();
        let mut data = gen_dataset(&world, 40, Policy::Uniform, 5).unwrap();
        // squeeze every record into one period and one city
        for r in &mut data.records {
            r.period = 2;
            r.city = 3;
        }
        let meta = FeatureMeta::fit(&data.records, world.config.direction).unwrap();
        let model = Model::build(ModelKind::Dnn, meta, 1).unwrap();
        let report = evaluate(&model, &data, &world).unwrap();
        assert_eq!(report.per_period.len(), 1);
        assert_eq!(report.per_period[0].name, "afternoon_tea");
        assert_eq!(report.per_city.len(), 1);
        assert_eq!(report.notices.len(), 8, "{:?}", report.notices);
        assert_eq!(report.overall.n, 40);
    }
}
