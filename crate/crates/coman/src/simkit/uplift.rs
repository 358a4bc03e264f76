//! Uplift cohort analysis: rank users by the steepest slope of their
//! predicted response curve (the sensitivity "gradient"), split into
//! descending cohorts, and report each cohort's mean predicted uplift
//! between the stingiest and most generous treatment.

use crate::error::{Error, Result};
use crate::models::Model;
use crate::simkit::dataset::LoggedDataset;
use crate::simkit::evalrep::predicted_curves;
use crate::simkit::world::Direction;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CohortRow {
    /// 1 = most sensitive.
    pub cohort: usize,
    pub n: usize,
    pub mean_slope: f64,
    pub mean_uplift: f64,
}

pub fn uplift_cohorts(
    model: &Model,
    data: &LoggedDataset,
    grid: &[f64],
    k_groups: usize,
) -> Result<Vec<CohortRow>> {
    if k_groups == 0 || data.is_empty() || grid.len() < 2 {
        return Err(Error::InvalidParam(
            "uplift analysis needs records, a grid, and k >= 1".into(),
        ));
    }
    let curves = predicted_curves(model, data, grid)?;
    let n = data.len();
    let mut slope = vec![0.0f64; n];
    let mut uplift = vec![0.0f64; n];
    for i in 0..n {
        let mut steepest = 0.0f64;
        for k in 0..grid.len() - 1 {
            let dt = grid[k + 1] - grid[k];
            let s = ((curves[k + 1][i] - curves[k][i]) / dt).abs();
            steepest = steepest.max(s);
        }
        slope[i] = steepest;
        let first = curves[0][i];
        let last = curves[grid.len() - 1][i];
        uplift[i] = match model.meta().direction {
            Direction::Increasing => last - first,
            Direction::Decreasing => first - last,
        };
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| slope[b].partial_cmp(&slope[a]).unwrap());

    let mut rows = Vec::with_capacity(k_groups);
    let base = n / k_groups;
    let extra = n % k_groups;
    let mut start = 0usize;
    for c in 0..k_groups {
        let size = base + usize::from(c < extra);
        if size == 0 {
            continue;
        }
        let members = &order[start..start + size];
        start += size;
        rows.push(CohortRow {
            cohort: c + 1,
            n: size,
            mean_slope: members.iter().map(|&i| slope[i]).sum::<f64>() / size as f64,
            mean_uplift: members.iter().map(|&i| uplift[i]).sum::<f64>() / size as f64,
        });
    }
    Ok(rows)
}

pub fn write_cohorts(rows: &[CohortRow], path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let mut f =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    writeln!(f, "cohort,n,mean_slope,mean_uplift")
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    for r in rows {
        writeln!(f, "{},{},{},{}", r.cohort, r.n, r.mean_slope, r.mean_uplift)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}
