//! Logged dataset generation mirroring the production protocol: a biased
//! training log plus a small uniformly-treated split used as ground truth
//! for curve evaluation.

use crate::error::{Error, Result};
use crate::simkit::world::SyntheticWorld;
use crate::stmodules::Period;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub const N_BEHAVIOR: usize = 3;
pub const ITEM_VOCAB: usize = 20;
pub const DISTRICT_VOCAB: usize = 16;
pub const AOI_VOCAB: usize = 32;

/// One logged impression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub user_id: u64,
    pub city: u32,
    pub period: u8,
    pub weekday: u8,
    pub holiday: u8,
    pub district: u32,
    pub aoi: u32,
    pub aff0: f64,
    pub aff1: f64,
    pub behavior: [u32; N_BEHAVIOR],
    pub query: u32,
    pub treatment: f64,
    pub label: u8,
    pub value: f64,
}

impl SimRecord {
    pub fn period(&self) -> Period {
        Period::from_index(self.period as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Policy {
    /// Treatment drawn proportionally to exp(-t / mean(t)): cheap
    /// incentives dominate the log.
    Biased,
    /// Uniform over the grid (the unbiased 5%-style split).
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitTag {
    BiasedTrain,
    UnbiasedEval,
}

#[derive(Debug, Clone)]
pub struct LoggedDataset {
    pub records: Vec<SimRecord>,
    pub split: SplitTag,
}

impl LoggedDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

fn weighted_pick<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen_range(0.0..total);
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Generate one logged record per user. Labels are Bernoulli draws from
/// the cell's ground-truth curve at the logged treatment.
pub fn gen_dataset(
    world: &SyntheticWorld,
    n_users: usize,
    policy: Policy,
    seed: u64,
) -> Result<LoggedDataset> {
    if n_users == 0 {
        return Err(Error::InvalidParam("n_users must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let treatments = world.treatments();
    let mean_t: f64 = treatments.iter().sum::<f64>() / treatments.len() as f64;
    let policy_weights: Vec<f64> = match policy {
        Policy::Uniform => vec![1.0; treatments.len()],
        Policy::Biased => treatments
            .iter()
            .map(|&t| (-t / mean_t.max(1e-9)).exp())
            .collect(),
    };
    let city_weights = [0.30, 0.25, 0.20, 0.15, 0.10];
    let period_weights = [0.22, 0.30, 0.10, 0.28, 0.10];

    let mut records = Vec::with_capacity(n_users);
    for user_id in 0..n_users as u64 {
        let city = weighted_pick(&mut rng, &city_weights) as u32 + 1;
        let period = weighted_pick(&mut rng, &period_weights) as u8;
        let weekday = rng.gen_range(0..7u8);
        let holiday = if rng.gen_bool(0.1) { 1 } else { 0 };
        let district = rng.gen_range(0..DISTRICT_VOCAB as u32);
        let aoi = rng.gen_range(0..AOI_VOCAB as u32);
        let aff0 = city as f64 + rng.gen_range(-2.0..2.0);
        let aff1 = period as f64 + rng.gen_range(-2.0..2.0);
        let behavior =
            std::array::from_fn(|_| rng.gen_range(0..ITEM_VOCAB as u32));
        let query = rng.gen_range(0..ITEM_VOCAB as u32);
        let t_idx = weighted_pick(&mut rng, &policy_weights);
        let treatment = treatments[t_idx];
        let cvr = world.true_cvr(city, Period::from_index(period as usize), treatment);
        let label = if rng.gen_bool(cvr.clamp(0.0, 1.0)) { 1 } else { 0 };
        let value = if label == 1 {
            world.value_mean(city) * rng.gen_range(0.5..1.5)
        } else {
            0.0
        };
        records.push(SimRecord {
            user_id,
            city,
            period,
            weekday,
            holiday,
            district,
            aoi,
            aff0,
            aff1,
            behavior,
            query,
            treatment,
            label,
            value,
        });
    }
    Ok(LoggedDataset {
        records,
        split: match policy {
            Policy::Biased => SplitTag::BiasedTrain,
            Policy::Uniform => SplitTag::UnbiasedEval,
        },
    })
}

/// Context column layout in the dataset CSV: ctx_0 weekday, ctx_1 holiday,
/// ctx_2 district, ctx_3 aoi, ctx_4 aff0, ctx_5 aff1, ctx_6..8 behavior
/// items, ctx_9 query item.
pub const CTX_COLS: usize = 10;

pub fn write_csv(data: &LoggedDataset, path: &Path) -> Result<()> {
    let mut f =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut header = String::from("user_id,city,period");
    for i in 0..CTX_COLS {
        header.push_str(&format!(",ctx_{i}"));
    }
    header.push_str(",treatment,label,value\n");
    f.write_all(header.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut buf = String::new();
    for r in &data.records {
        buf.clear();
        buf.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.user_id,
            r.city,
            r.period,
            r.weekday,
            r.holiday,
            r.district,
            r.aoi,
            r.aff0,
            r.aff1,
            r.behavior[0],
            r.behavior[1],
            r.behavior[2],
            r.query,
            r.treatment,
            r.label,
            r.value
        ));
        f.write_all(buf.as_bytes())
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

pub fn read_csv(path: &Path, split: SplitTag) -> Result<LoggedDataset> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Schema {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let schema_err = |detail: String| Error::Schema {
        path: path.display().to_string(),
        detail,
    };
    let headers = rdr.headers().map_err(|e| schema_err(e.to_string()))?.clone();
    let mut expected = vec!["user_id".to_string(), "city".into(), "period".into()];
    for i in 0..CTX_COLS {
        expected.push(format!("ctx_{i}"));
    }
    expected.extend(["treatment".to_string(), "label".into(), "value".into()]);
    let got: Vec<String> = headers.iter().map(|s| s.to_string()).collect();
    if got != expected {
        return Err(schema_err(format!(
            "unexpected header {got:?}, expected {expected:?}"
        )));
    }
    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| schema_err(e.to_string()))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let p = |i: usize| -> Result<f64> {
            field(i)
                .parse()
                .map_err(|_| schema_err(format!("bad number {:?} in column {i}", field(i))))
        };
        records.push(SimRecord {
            user_id: p(0)? as u64,
            city: p(1)? as u32,
            period: p(2)? as u8,
            weekday: p(3)? as u8,
            holiday: p(4)? as u8,
            district: p(5)? as u32,
            aoi: p(6)? as u32,
            aff0: p(7)?,
            aff1: p(8)?,
            behavior: [p(9)? as u32, p(10)? as u32, p(11)? as u32],
            query: p(12)? as u32,
            treatment: p(13)?,
            label: p(14)? as u8,
            value: p(15)?,
        });
    }
    Ok(LoggedDataset { records, split })
}
