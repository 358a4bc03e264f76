//! Synthetic marketing simulator: world generation, logged datasets,
//! metrics, evaluation reports, uplift cohorts, and baseline training.

pub mod dataset;
pub mod evalrep;
pub mod metrics;
pub mod uplift;
pub mod world;

pub use dataset::{gen_dataset, LoggedDataset, Policy, SimRecord, SplitTag};
pub use evalrep::{eval_grid, evaluate, EvalReport};
pub use uplift::uplift_cohorts;
pub use world::{Direction, SyntheticWorld, WorldConfig};

use crate::error::Result;
use crate::models::{FeatureMeta, Model, ModelKind};
use crate::trainer::{train, TrainConfig, TrainOutcome};

/// The baseline roster trained for benchmark comparisons.
pub const BASELINE_KINDS: [ModelKind; 6] = [
    ModelKind::Dnn,
    ModelKind::DnnM,
    ModelKind::Fpm,
    ModelKind::CmnnRelu,
    ModelKind::CmnnElu,
    ModelKind::CmnnClu,
];

/// Train every baseline on a shared dataset with the shared trainer and
/// per-kind derived seeds.
pub fn baselines_train(
    data: &LoggedDataset,
    val: Option<&LoggedDataset>,
    direction: Direction,
    cfg: &TrainConfig,
) -> Result<Vec<(ModelKind, Model, TrainOutcome)>> {
    let meta = FeatureMeta::fit(&data.records, direction)?;
    let mut out = Vec::with_capacity(BASELINE_KINDS.len());
    for (i, kind) in BASELINE_KINDS.into_iter().enumerate() {
        let mut model = Model::build(kind, meta.clone(), cfg.seed.wrapping_add(i as u64))?;
        let outcome = train(&mut model, data, val, cfg)?;
        out.push((kind, model, outcome));
    }
    Ok(out)
}
