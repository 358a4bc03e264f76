//! Synthetic marketing world with known ground-truth sensitivity curves.
//!
//! A world is a 5 x 5 grid of (city, period) cells, each owning a
//! four-parameter response curve. Conversion labels depend only on the
//! cell and the treatment, so predicted curves can be scored exactly.

use crate::activations::{self, FpmParams};
use crate::error::{Error, Result};
use crate::stmodules::{Period, ALL_PERIODS};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const N_CITIES: usize = 5;
pub const N_PERIODS: usize = 5;
pub const DEFAULT_WORLD_SEED: u64 = 42;

/// Campaign attribute direction. Amount-style incentives raise conversion
/// as they grow; threshold- and fee-style attributes depress it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Increasing,
    Decreasing,
}

impl Direction {
    pub fn sign(&self) -> f64 {
        match self {
            Direction::Increasing => 1.0,
            Direction::Decreasing => -1.0,
        }
    }

    pub fn indicator(&self) -> i8 {
        match self {
            Direction::Increasing => 1,
            Direction::Decreasing => -1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldConfig {
    pub seed: u64,
    pub treatments: Vec<f64>,
    pub direction: Direction,
    /// Ablation control: copy one parameter set into every cell.
    pub uniform_cells: bool,
    /// Split cities into clearly separated high/low sensitivity tiers.
    pub two_tier: bool,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: DEFAULT_WORLD_SEED,
            treatments: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            direction: Direction::Increasing,
            uniform_cells: false,
            two_tier: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub config: WorldConfig,
    /// Row-major cells: index = city_offset * N_PERIODS + period_index,
    /// cities numbered 1..=5.
    cells: Vec<FpmParams>,
}

impl SyntheticWorld {
    pub fn generate(config: WorldConfig) -> Result<Self> {
        if config.treatments.len() < 2 || !config.treatments.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidParam(
                "world needs at least two strictly increasing treatments".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let t_min = config.treatments[0];
        let t_max = *config.treatments.last().unwrap();
        let span = t_max - t_min;
        let sample = |rng: &mut ChaCha8Rng, city: usize| -> FpmParams {
            let (w1_lo, w1_hi, ceil_lo, ceil_hi) = if config.two_tier {
                // cities 1-2 highly sensitive, 4-5 barely responsive
                if city <= 2 {
                    (2.4, 3.2, 0.75, 0.95)
                } else if city >= 4 {
                    (0.25, 0.45, 0.30, 0.45)
                } else {
                    (1.0, 1.6, 0.55, 0.75)
                }
            } else {
                (0.6, 2.5, 0.55, 0.95)
            };
            let omega0 = rng.gen_range(0.03..0.12);
            let omega3 = rng.gen_range(ceil_lo..ceil_hi);
            let omega1 = rng.gen_range(w1_lo..w1_hi);
            let omega2 = rng.gen_range(t_min + 0.15 * span..t_max - 0.15 * span);
            FpmParams::new(omega0, omega1, omega2, omega3).expect("sampled ranges are valid")
        };
        let cells = if config.uniform_cells {
            let one = sample(&mut rng, 3);
            vec![one; N_CITIES * N_PERIODS]
        } else {
            let mut v = Vec::with_capacity(N_CITIES * N_PERIODS);
            for city in 1..=N_CITIES {
                for _ in 0..N_PERIODS {
                    v.push(sample(&mut rng, city));
                }
            }
            v
        };
        Ok(SyntheticWorld { config, cells })
    }

    pub fn cell(&self, city: u32, period: Period) -> &FpmParams {
        let c = (city as usize).clamp(1, N_CITIES) - 1;
        &self.cells[c * N_PERIODS + period.index()]
    }

    /// Ground-truth conversion rate at treatment t for one cell; the
    /// campaign direction flips the slope, not the bounds.
    pub fn true_cvr(&self, city: u32, period: Period, t: f64) -> f64 {
        let p = self.cell(city, period);
        let s = self.config.direction.sign();
        p.omega0()
            + (p.omega3() - p.omega0())
                * activations::sigmoid(s * p.omega1() * (t - p.omega2()))
    }

    pub fn treatments(&self) -> &[f64] {
        &self.config.treatments
    }

    pub fn treatment_span(&self) -> (f64, f64) {
        (
            self.config.treatments[0],
            *self.config.treatments.last().unwrap(),
        )
    }

    /// Mean order value for converted users in a city (the regression
    /// label's expectation).
    pub fn value_mean(&self, city: u32) -> f64 {
        8.0 + 2.0 * city as f64
    }

    pub fn cells(&self) -> impl Iterator<Item = (u32, Period, &FpmParams)> {
        (1..=N_CITIES as u32).flat_map(move |city| {
            ALL_PERIODS
                .iter()
                .map(move |&p| (city, p, self.cell(city, p)))
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("world serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Schema {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    }
}
