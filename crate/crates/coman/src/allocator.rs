//! Budget-constrained incentive allocation.
//!
//! The primal problem maximizes total response subject to one treatment
//! per user and an average-spend-per-conversion cap B. After dualizing the
//! budget constraint with multiplier lambda, the per-user simplex
//! constraints collapse into an argmin over treatments of
//! r * (lambda*t - lambda*B - 1), so the only remaining unknown is the
//! scalar lambda. The realized spend ratio of that argmin plan is
//! non-increasing in lambda, which makes bracketed bisection exact here;
//! a grid-sweep oracle and an exhaustive integral oracle cross-check it.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Hard cap on exhaustive enumeration size.
pub const ORACLE_LIMIT: f64 = 1e6;

/// Per-user response scores over a shared treatment grid, plus the budget.
#[derive(Debug, Clone)]
pub struct AllocationProblem {
    user_ids: Vec<String>,
    treatments: Vec<f64>,
    /// Row-major |C| x |T| response matrix.
    responses: Vec<f64>,
    budget: f64,
}

impl AllocationProblem {
    /// `responses` is row-major per user over the treatment grid.
    /// Treatments must be strictly increasing; a meaningful allocation has
    /// at least two of them, but a degenerate single-treatment problem is
    /// accepted so the decision rule's no-choice behavior stays testable.
    pub fn new(
        user_ids: Vec<String>,
        treatments: Vec<f64>,
        responses: Vec<f64>,
        budget: f64,
    ) -> Result<Self> {
        if treatments.is_empty() {
            return Err(Error::InvalidParam("empty treatment set".into()));
        }
        if !treatments.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidParam(
                "treatments must be strictly increasing".into(),
            ));
        }
        if user_ids.is_empty() {
            return Err(Error::InvalidParam("no users".into()));
        }
        if responses.len() != user_ids.len() * treatments.len() {
            return Err(Error::SizeMismatch {
                op: "AllocationProblem::new",
                shape: vec![user_ids.len(), treatments.len()],
                expected: user_ids.len() * treatments.len(),
                got: responses.len(),
            });
        }
        if responses.iter().any(|r| !r.is_finite() || !(0.0..=1.0).contains(r)) {
            return Err(Error::InvalidParam(
                "responses must be finite and in [0, 1]".into(),
            ));
        }
        if !budget.is_finite() || budget <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "budget must be positive and finite, got {budget}"
            )));
        }
        Ok(AllocationProblem {
            user_ids,
            treatments,
            responses,
            budget,
        })
    }

    pub fn anonymous(treatments: Vec<f64>, responses: Vec<f64>, budget: f64) -> Result<Self> {
        let n = if treatments.is_empty() {
            0
        } else {
            responses.len() / treatments.len()
        };
        let ids = (0..n).map(|i| i.to_string()).collect();
        Self::new(ids, treatments, responses, budget)
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_treatments(&self) -> usize {
        self.treatments.len()
    }

    pub fn treatments(&self) -> &[f64] {
        &self.treatments
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn response(&self, user: usize, treatment: usize) -> f64 {
        self.responses[user * self.treatments.len() + treatment]
    }

    /// Copy with every response scaled by a positive constant.
    pub fn scaled_responses(&self, c: f64) -> Result<Self> {
        let scaled: Vec<f64> = self.responses.iter().map(|r| r * c).collect();
        Self::new(
            self.user_ids.clone(),
            self.treatments.clone(),
            scaled,
            self.budget,
        )
    }

    /// Objective, spend, and spend ratio of an assignment.
    pub fn plan_stats(&self, assignment: &[usize]) -> (f64, f64, f64) {
        let mut objective = 0.0;
        let mut spend = 0.0;
        for (i, &j) in assignment.iter().enumerate() {
            let r = self.response(i, j);
            objective += r;
            spend += self.treatments[j] * r;
        }
        let ratio = if objective > 0.0 { spend / objective } else { 0.0 };
        (objective, spend, ratio)
    }
}

/// Dual score of one (user, treatment) cell at a given lambda.
#[inline]
fn dual_score(r: f64, t: f64, budget: f64, lambda: f64) -> f64 {
    r * (lambda * t - lambda * budget - 1.0)
}

/// Minimize the Lagrangian at fixed lambda: per user pick
/// argmin_j r_ij * (lambda*t_j - lambda*B - 1), ties to the cheapest
/// treatment. Returns the minimized value and the per-user indices.
pub fn dual_objective(p: &AllocationProblem, lambda: f64) -> Result<(f64, Vec<usize>)> {
    if lambda < 0.0 {
        return Err(Error::NegativeLambda(lambda));
    }
    let mut value = 0.0;
    let mut indices = Vec::with_capacity(p.n_users());
    for i in 0..p.n_users() {
        let mut best_j = 0usize;
        let mut best = dual_score(p.response(i, 0), p.treatments[0], p.budget, lambda);
        for j in 1..p.n_treatments() {
            let s = dual_score(p.response(i, j), p.treatments[j], p.budget, lambda);
            // strict improvement only: equal scores keep the lower index,
            // i.e. the cheaper treatment
            if s < best {
                best = s;
                best_j = j;
            }
        }
        value += best;
        indices.push(best_j);
    }
    Ok((value, indices))
}

/// Result of the lambda search: the feasible end of the final bisection
/// bracket plus the infeasible end it closed against.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub lambda: f64,
    pub assignment: Vec<usize>,
    pub ratio: f64,
    /// Largest explored lambda with ratio > B (None when lambda == 0).
    pub lambda_infeasible: Option<f64>,
    pub ratio_infeasible: Option<f64>,
}

impl DualSolution {
    /// Discrete complementary-slackness residual. Zero means: either the
    /// multiplier is zero (budget slack at the unconstrained optimum), or
    /// the budget constraint is active at the crossing -- feasible at
    /// lambda, violated just below it.
    pub fn slackness_residual(&self, budget: f64) -> f64 {
        if self.lambda == 0.0 {
            return self.lambda * (self.ratio - budget);
        }
        let feasibility = (self.ratio - budget).max(0.0);
        let activity = match self.ratio_infeasible {
            Some(rb) => (budget - rb).max(0.0),
            None => f64::INFINITY,
        };
        feasibility + activity
    }
}

/// Find the smallest multiplier whose induced plan meets the budget, by
/// doubling then bisection on the monotone ratio-vs-lambda curve.
pub fn solve_lambda(p: &AllocationProblem, tol: f64, max_iter: usize) -> Result<DualSolution> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidParam(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let (_, at_zero) = dual_objective(p, 0.0)?;
    let (_, _, ratio0) = p.plan_stats(&at_zero);
    if ratio0 <= p.budget {
        return Ok(DualSolution {
            lambda: 0.0,
            assignment: at_zero,
            ratio: ratio0,
            lambda_infeasible: None,
            ratio_infeasible: None,
        });
    }
    // The spend ratio is a convex combination of treatment values, so it
    // can never drop below the cheapest treatment: if even that exceeds
    // the budget, no plan is feasible.
    let min_t = p.treatments[0];
    if min_t > p.budget {
        return Err(Error::InfeasibleBudget {
            min_treatment: min_t,
            budget: p.budget,
        });
    }

    let mut lo = 0.0;
    let mut ratio_lo = ratio0;
    let mut hi = 1.0;
    let mut guard = 0usize;
    let (mut ratio_hi, mut assign_hi) = loop {
        let (_, a) = dual_objective(p, hi)?;
        let (_, _, r) = p.plan_stats(&a);
        if r <= p.budget {
            break (r, a);
        }
        lo = hi;
        ratio_lo = r;
        hi *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(Error::InfeasibleBudget {
                min_treatment: min_t,
                budget: p.budget,
            });
        }
    };

    for _ in 0..max_iter {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let (_, a) = dual_objective(p, mid)?;
        let (_, _, r) = p.plan_stats(&a);
        if r <= p.budget {
            hi = mid;
            ratio_hi = r;
            assign_hi = a;
        } else {
            lo = mid;
            ratio_lo = r;
        }
    }
    Ok(DualSolution {
        lambda: hi,
        assignment: assign_hi,
        ratio: ratio_hi,
        lambda_infeasible: Some(lo),
        ratio_infeasible: Some(ratio_lo),
    })
}

/// An integral plan: one treatment per user, chosen by the decision rule
/// at the solved multiplier.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub assignment: Vec<usize>,
    pub objective: f64,
    pub spend: f64,
    pub budget_ratio: f64,
    pub lambda_star: f64,
    /// Valid upper bound on oracle_objective - objective: the plan's
    /// Lagrangian optimality leaves at most lambda* times its budget slack
    /// on the table.
    pub gap_bound: f64,
    pub slackness_residual: f64,
}

pub const DEFAULT_LAMBDA_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 200;

pub fn allocate(p: &AllocationProblem) -> Result<AllocationPlan> {
    allocate_with(p, DEFAULT_LAMBDA_TOL, DEFAULT_MAX_ITER)
}

pub fn allocate_with(p: &AllocationProblem, tol: f64, max_iter: usize) -> Result<AllocationPlan> {
    let sol = solve_lambda(p, tol, max_iter)?;
    let (objective, spend, budget_ratio) = p.plan_stats(&sol.assignment);
    let gap_bound = sol.lambda * (p.budget * objective - spend).max(0.0);
    Ok(AllocationPlan {
        slackness_residual: sol.slackness_residual(p.budget),
        assignment: sol.assignment,
        objective,
        spend,
        budget_ratio,
        lambda_star: sol.lambda,
        gap_bound,
    })
}

/// Exhaustive search over all |T|^|C| integral assignments; exact but
/// capped at `ORACLE_LIMIT` combinations.
pub fn brute_force_oracle(p: &AllocationProblem) -> Result<(Vec<usize>, f64)> {
    let combos = (p.n_treatments() as f64).powi(p.n_users() as i32);
    if combos > ORACLE_LIMIT {
        return Err(Error::InstanceTooLarge {
            combinations: combos,
            limit: ORACLE_LIMIT,
        });
    }
    let mut assignment = vec![0usize; p.n_users()];
    let mut best: Option<(Vec<usize>, f64)> = None;
    loop {
        let (objective, spend, _) = p.plan_stats(&assignment);
        let feasible = spend <= p.budget * objective + 1e-12;
        if feasible {
            match &best {
                Some((_, b)) if *b >= objective => {}
                _ => best = Some((assignment.clone(), objective)),
            }
        }
        // odometer increment
        let mut pos = 0usize;
        loop {
            if pos == p.n_users() {
                return best.ok_or(Error::InfeasibleBudget {
                    min_treatment: p.treatments[0],
                    budget: p.budget,
                });
            }
            assignment[pos] += 1;
            if assignment[pos] < p.n_treatments() {
                break;
            }
            assignment[pos] = 0;
            pos += 1;
        }
    }
}

/// Grid-sweep reference for the lambda search: smallest grid multiple of
/// `step` whose plan is feasible.
pub fn lambda_grid_oracle(p: &AllocationProblem, step: f64, max_lambda: f64) -> Result<Option<f64>> {
    let mut lambda = 0.0;
    while lambda <= max_lambda {
        let (_, a) = dual_objective(p, lambda)?;
        let (_, _, r) = p.plan_stats(&a);
        if r <= p.budget {
            return Ok(Some(lambda));
        }
        lambda += step;
    }
    Ok(None)
}

// ---- file formats ----------------------------------------------------------

/// Read a long-format problem CSV: header `user_id,treatment_value,response_score`,
/// one row per (user, treatment). Every user must cover the same grid.
pub fn problem_from_csv(path: &Path, budget: f64) -> Result<AllocationProblem> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Error::Schema {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?
        .clone();
    let expect = ["user_id", "treatment_value", "response_score"];
    if headers.iter().take(3).collect::<Vec<_>>() != expect {
        return Err(Error::Schema {
            path: path.display().to_string(),
            detail: format!("expected header {expect:?}, got {headers:?}"),
        });
    }
    let mut user_order: Vec<String> = Vec::new();
    let mut rows: Vec<(String, f64, f64)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Schema {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        let uid = rec.get(0).unwrap_or("").to_string();
        let t: f64 = rec
            .get(1)
            .unwrap_or("")
            .parse()
            .map_err(|_| Error::Schema {
                path: path.display().to_string(),
                detail: format!("bad treatment_value {:?}", rec.get(1)),
            })?;
        let r: f64 = rec
            .get(2)
            .unwrap_or("")
            .parse()
            .map_err(|_| Error::Schema {
                path: path.display().to_string(),
                detail: format!("bad response_score {:?}", rec.get(2)),
            })?;
        if !user_order.contains(&uid) {
            user_order.push(uid.clone());
        }
        rows.push((uid, t, r));
    }
    let mut treatments: Vec<f64> = rows.iter().map(|r| r.1).collect();
    treatments.sort_by(|a, b| a.partial_cmp(b).unwrap());
    treatments.dedup();
    let nt = treatments.len();
    let mut responses = vec![f64::NAN; user_order.len() * nt];
    for (uid, t, r) in &rows {
        let ui = user_order.iter().position(|u| u == uid).unwrap();
        let tj = treatments
            .iter()
            .position(|tv| tv == t)
            .expect("treatment present by construction");
        let slot = &mut responses[ui * nt + tj];
        if !slot.is_nan() {
            return Err(Error::Schema {
                path: path.display().to_string(),
                detail: format!("duplicate row for user {uid} treatment {t}"),
            });
        }
        *slot = *r;
    }
    if responses.iter().any(|r| r.is_nan()) {
        return Err(Error::Schema {
            path: path.display().to_string(),
            detail: "every user must have a score for every treatment".into(),
        });
    }
    AllocationProblem::new(user_order, treatments, responses, budget)
}

/// Write the plan CSV (`user_id,treatment_value`) next to a JSON summary.
pub fn write_plan(
    p: &AllocationProblem,
    plan: &AllocationPlan,
    csv_path: &Path,
    summary_path: &Path,
) -> Result<()> {
    let mut f = std::fs::File::create(csv_path)
        .map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    writeln!(f, "user_id,treatment_value").map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    for (i, &j) in plan.assignment.iter().enumerate() {
        writeln!(f, "{},{}", p.user_ids()[i], p.treatments()[j])
            .map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    }
    let summary = serde_json::json!({
        "budget": p.budget(),
        "objective": plan.objective,
        "spend": plan.spend,
        "budget_ratio": plan.budget_ratio,
        "lambda_star": plan.lambda_star,
        "gap_bound": plan.gap_bound,
        "slackness_residual": plan.slackness_residual,
        "n_users": p.n_users(),
        "n_treatments": p.n_treatments(),
    });
    std::fs::write(
        summary_path,
        serde_json::to_string_pretty(&summary).expect("summary json") + "\n",
    )
    .map_err(|e| Error::io(summary_path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seeded_problem(
        seed: u64,
        n_users: usize,
        treatments: Vec<f64>,
        budget: f64,
    ) -> AllocationProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let responses: Vec<f64> = (0..n_users * treatments.len())
            .map(|_| rng.gen_range(0.01..0.99))
            .collect();
        AllocationProblem::anonymous(treatments, responses, budget).unwrap()
    }

    #[test]
    fn lambda_zero_reduces_to_argmax() {
        let p = seeded_problem(1, 8, vec![1.0, 2.0, 4.0], 10.0);
        let (_, idx) = dual_objective(&p, 0.0).unwrap();
        for i in 0..p.n_users() {
            let argmax = (0..3)
                .max_by(|&a, &b| p.response(i, a).partial_cmp(&p.response(i, b)).unwrap())
                .unwrap();
            assert_eq!(idx[i], argmax);
        }
    }

    #[test]
    fn single_treatment_has_no_choice() {
        let p = AllocationProblem::anonymous(vec![2.0], vec![0.3, 0.9], 5.0).unwrap();
        for lambda in [0.0, 0.7, 3.0] {
            let (_, idx) = dual_objective(&p, lambda).unwrap();
            assert_eq!(idx, vec![0, 0]);
        }
    }

    #[test]
    fn negative_lambda_rejected() {
        let p = seeded_problem(2, 3, vec![1.0, 2.0], 2.0);
        assert!(matches!(
            dual_objective(&p, -0.5),
            Err(Error::NegativeLambda(_))
        ));
    }

    #[test]
    fn two_by_two_hand_case_matches_enumeration() {
        let p = AllocationProblem::anonymous(
            vec![1.0, 3.0],
            vec![0.2, 0.6, 0.5, 0.55],
            2.0,
        )
        .unwrap();
        let (value, idx) = dual_objective(&p, 1.0).unwrap();
        // enumerate both options per user at lambda = 1
        for i in 0..2 {
            let s0 = p.response(i, 0) * (1.0 * 1.0 - 2.0 - 1.0);
            let s1 = p.response(i, 1) * (1.0 * 3.0 - 2.0 - 1.0);
            let want = if s0 <= s1 { 0 } else { 1 };
            assert_eq!(idx[i], want);
        }
        assert!((value - (0.2 * -2.0 + 0.5 * -2.0)).abs() < 1e-12);
    }

    #[test]
    fn generous_budget_gives_lambda_zero_argmax_plan() {
        let p = seeded_problem(3, 10, vec![1.0, 2.0, 3.0], 3.0);
        let plan = allocate(&p).unwrap();
        assert_eq!(plan.lambda_star, 0.0);
        assert_eq!(plan.gap_bound, 0.0);
        let (_, argmax) = dual_objective(&p, 0.0).unwrap();
        assert_eq!(plan.assignment, argmax);
    }

    #[test]
    fn impossible_budget_is_infeasible() {
        let p = seeded_problem(4, 5, vec![2.0, 3.0], 1.0);
        assert!(matches!(
            allocate(&p),
            Err(Error::InfeasibleBudget { .. })
        ));
    }

    #[test]
    fn identical_users_get_identical_assignments() {
        let row = vec![0.2, 0.5, 0.9];
        let mut responses = Vec::new();
        for _ in 0..6 {
            responses.extend_from_slice(&row);
        }
        let p = AllocationProblem::anonymous(vec![1.0, 2.0, 5.0], responses, 1.8).unwrap();
        let plan = allocate(&p).unwrap();
        assert!(plan.assignment.windows(2).all(|w| w[0] == w[1]));
        assert!(plan.budget_ratio <= 1.8 + 1e-12);
    }

    #[test]
    fn matches_exhaustive_oracle_within_gap_bound() {
        for seed in 0..30 {
            let p = seeded_problem(100 + seed, 4, vec![1.0, 2.0, 4.0], 1.9);
            let plan = allocate(&p).unwrap();
            let (_, oracle_obj) = brute_force_oracle(&p).unwrap();
            assert!(
                oracle_obj - plan.objective <= plan.gap_bound + 1e-9,
                "seed {seed}: oracle {oracle_obj} plan {} bound {}",
                plan.objective,
                plan.gap_bound
            );
            assert!(plan.slackness_residual <= 1e-6, "seed {seed}");
        }
    }

    #[test]
    fn lambda_search_matches_grid_oracle() {
        let p = seeded_problem(42, 50, vec![0.5, 1.0, 2.0, 3.0, 5.0], 1.6);
        let sol = solve_lambda(&p, 1e-9, 200).unwrap();
        let grid = lambda_grid_oracle(&p, 1e-4, 50.0).unwrap().unwrap();
        assert!(
            (sol.lambda - grid).abs() <= 1e-3,
            "bisection {} vs grid {}",
            sol.lambda,
            grid
        );
        let (_, grid_assign) = dual_objective(&p, grid).unwrap();
        assert_eq!(sol.assignment, grid_assign);
    }

    #[test]
    fn spend_ratio_monotone_in_budget() {
        for seed in 0..5 {
            let mut prev_ratio = -1.0;
            let mut prev_lambda = f64::INFINITY;
            for pct in 1..=8 {
                let budget = 0.5 + 0.45 * pct as f64;
                let p = seeded_problem(500 + seed, 20, vec![0.5, 1.5, 3.0, 4.5], budget);
                let plan = allocate(&p).unwrap();
                assert!(plan.budget_ratio >= prev_ratio - 1e-9);
                assert!(plan.lambda_star <= prev_lambda + 1e-9);
                prev_ratio = plan.budget_ratio;
                prev_lambda = plan.lambda_star;
            }
        }
    }

    #[test]
    fn weak_duality_bounds_oracle() {
        let p = seeded_problem(7, 5, vec![1.0, 2.0, 3.0], 1.7);
        let (_, oracle_obj) = brute_force_oracle(&p).unwrap();
        for lambda in [0.0, 0.1, 0.5, 1.0, 2.0, 10.0] {
            let (dual_value, _) = dual_objective(&p, lambda).unwrap();
            assert!(
                -dual_value >= oracle_obj - 1e-9,
                "lambda {lambda}: dual bound {} below oracle {oracle_obj}",
                -dual_value
            );
        }
    }

    #[test]
    fn scale_covariance_of_argmins() {
        let p = seeded_problem(11, 12, vec![1.0, 2.0, 4.0], 2.0);
        let scaled = p.scaled_responses(0.37).unwrap();
        for lambda in [0.0, 0.3, 1.0, 4.0] {
            let (_, a) = dual_objective(&p, lambda).unwrap();
            let (_, b) = dual_objective(&scaled, lambda).unwrap();
            assert_eq!(a, b, "lambda {lambda}");
        }
    }

    #[test]
    fn oracle_rejects_huge_instances() {
        let p = seeded_problem(13, 25, vec![1.0, 2.0, 3.0, 4.0], 2.5);
        assert!(matches!(
            brute_force_oracle(&p),
            Err(Error::InstanceTooLarge { .. })
        ));
    }

    #[test]
    fn oracle_single_user_picks_best_feasible() {
        let p =
            AllocationProblem::anonymous(vec![1.0, 4.0], vec![0.5, 0.9], 2.0).unwrap();
        // expensive treatment ratio = 4 > 2, so only the cheap one is feasible
        let (assign, obj) = brute_force_oracle(&p).unwrap();
        assert_eq!(assign, vec![0]);
        assert!((obj - 0.5).abs() < 1e-12);
    }

    #[test]
    fn equal_cost_treatments_reduce_to_argmax() {
        // constant ratio regardless of choice: budget dominates, argmax wins
        let p = AllocationProblem::anonymous(
            vec![2.0, 2.0 + 1e-12],
            vec![0.1, 0.9, 0.8, 0.2],
            2.5,
        )
        .unwrap();
        let (assign, _) = brute_force_oracle(&p).unwrap();
        assert_eq!(assign, vec![1, 0]);
    }

    #[test]
    fn csv_round_trip_and_schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        std::fs::write(
            &path,
            "user_id,treatment_value,response_score\n\
             u1,1.0,0.2\nu1,3.0,0.6\nu2,1.0,0.5\nu2,3.0,0.55\n",
        )
        .unwrap();
        let p = problem_from_csv(&path, 2.0).unwrap();
        assert_eq!(p.n_users(), 2);
        assert_eq!(p.treatments(), &[1.0, 3.0]);
        assert!((p.response(1, 1) - 0.55).abs() < 1e-15);

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "user,t,r\nu1,1.0,0.2\n").unwrap();
        assert!(matches!(
            problem_from_csv(&bad, 2.0),
            Err(Error::Schema { .. })
        ));

        let missing = dir.path().join("missing.csv");
        std::fs::write(
            &missing,
            "user_id,treatment_value,response_score\nu1,1.0,0.2\nu2,1.0,0.5\nu2,3.0,0.55\n",
        )
        .unwrap();
        assert!(matches!(
            problem_from_csv(&missing, 2.0),
            Err(Error::Schema { .. })
        ));

        let plan = allocate(&p).unwrap();
        let csv_out = dir.path().join("plan.csv");
        let sum_out = dir.path().join("summary.json");
        write_plan(&p, &plan, &csv_out, &sum_out).unwrap();
        let text = std::fs::read_to_string(&csv_out).unwrap();
        assert!(text.starts_with("user_id,treatment_value\n"));
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&sum_out).unwrap()).unwrap();
        assert!(summary["lambda_star"].as_f64().is_some());
    }
}
