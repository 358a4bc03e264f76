//! Activation algebra for monotone response modeling.
//!
//! The base function family is convex, monotonically increasing,
//! lower-bounded, and zero-centred; every member is the identity on x >= 0.
//! From a base we derive its concave point reflection and a saturated
//! (bounded both sides) variant, plus a normalized Heaviside approximant.
//! The four-parameter sigmoid head lives here too.
//!
//! All functions carry analytic derivatives so the graph engine can
//! backpropagate through them, including through the CLU shape parameters.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stable ln(1 + exp(x)).
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Shape parameters of the convex linear unit.
///
/// `omega0` is twice the depth of the lower asymptote (the unit tends to
/// -omega0/2 as x -> -inf); `omega1` is the steepness of the negative
/// branch. Global convexity additionally needs the junction condition
/// omega0 * omega1 <= 4: the left derivative at 0 is omega0*omega1/4 and
/// the right derivative is 1, so a larger product would put a concave kink
/// at the origin. Equality makes the unit continuously differentiable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CluParams {
    omega0: f64,
    omega1: f64,
}

impl CluParams {
    pub fn new(omega0: f64, omega1: f64) -> Result<Self> {
        if !omega0.is_finite() || omega0 <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "clu omega0 must be positive and finite, got {omega0}"
            )));
        }
        if !omega1.is_finite() || omega1 <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "clu omega1 must be positive and finite, got {omega1}"
            )));
        }
        if omega0 * omega1 > 4.0 {
            return Err(Error::InvalidParam(format!(
                "clu junction condition violated: omega0*omega1 = {} > 4",
                omega0 * omega1
            )));
        }
        Ok(CluParams { omega0, omega1 })
    }

    /// Skips the junction check; used only to demonstrate that violating it
    /// breaks convexity.
    pub fn new_unchecked(omega0: f64, omega1: f64) -> Self {
        CluParams { omega0, omega1 }
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    pub fn omega1(&self) -> f64 {
        self.omega1
    }
}

impl Default for CluParams {
    fn default() -> Self {
        // Product exactly 4: C1 at the junction.
        CluParams {
            omega0: 2.0,
            omega1: 2.0,
        }
    }
}

/// Which derived shape of the base convex function to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Curvature {
    Convex,
    Concave,
    Saturated,
}

/// Base convex functions (all identity on x >= 0, zero-centred,
/// lower-bounded).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ConvexBase {
    Clu,
    Relu,
    Elu(f64),
}

/// Value and partial derivatives of a shaped activation at one point.
#[derive(Debug, Clone, Copy)]
pub struct ActEval {
    pub y: f64,
    pub dx: f64,
    /// Partial w.r.t. omega0 (zero for non-CLU bases).
    pub dw0: f64,
    /// Partial w.r.t. omega1 (zero for non-CLU bases).
    pub dw1: f64,
}

fn base_eval(base: ConvexBase, x: f64, w0: f64, w1: f64) -> ActEval {
    if x >= 0.0 {
        return ActEval {
            y: x,
            dx: 1.0,
            dw0: 0.0,
            dw1: 0.0,
        };
    }
    match base {
        ConvexBase::Clu => {
            let s = sigmoid(w1 * x);
            let sp = s * (1.0 - s);
            ActEval {
                y: -0.5 * w0 + w0 * s,
                dx: w0 * w1 * sp,
                dw0: s - 0.5,
                dw1: w0 * x * sp,
            }
        }
        ConvexBase::Relu => ActEval {
            y: 0.0,
            dx: 0.0,
            dw0: 0.0,
            dw1: 0.0,
        },
        ConvexBase::Elu(alpha) => {
            let e = x.exp();
            ActEval {
                y: alpha * (e - 1.0),
                dx: alpha * e,
                dw0: 0.0,
                dw1: 0.0,
            }
        }
    }
}

/// Evaluate a shaped activation with derivatives.
///
/// Convex is the base itself; concave is its point reflection -b(-x);
/// saturated splices shifted copies of both so the result is bounded on
/// both sides and zero at the origin (the base being the identity at 1
/// makes the splice constants collapse to +/-1).
pub fn shaped_eval(base: ConvexBase, shape: Curvature, x: f64, w0: f64, w1: f64) -> ActEval {
    match shape {
        Curvature::Convex => base_eval(base, x, w0, w1),
        Curvature::Concave => {
            let b = base_eval(base, -x, w0, w1);
            ActEval {
                y: -b.y,
                dx: b.dx,
                dw0: -b.dw0,
                dw1: -b.dw1,
            }
        }
        Curvature::Saturated => {
            if x < 0.0 {
                let b = base_eval(base, x + 1.0, w0, w1);
                ActEval {
                    y: b.y - 1.0,
                    dx: b.dx,
                    dw0: b.dw0,
                    dw1: b.dw1,
                }
            } else {
                let b = base_eval(base, 1.0 - x, w0, w1);
                ActEval {
                    y: 1.0 - b.y,
                    dx: b.dx,
                    dw0: -b.dw0,
                    dw1: -b.dw1,
                }
            }
        }
    }
}

/// Convex linear unit: identity for x >= 0, scaled shifted sigmoid below.
pub fn clu(x: f64, p: &CluParams) -> f64 {
    base_eval(ConvexBase::Clu, x, p.omega0, p.omega1).y
}

/// Concave counterpart -clu(-x).
pub fn clu_concave(x: f64, p: &CluParams) -> f64 {
    shaped_eval(ConvexBase::Clu, Curvature::Concave, x, p.omega0, p.omega1).y
}

/// Saturated counterpart, bounded to [-omega0/2 - 1, omega0/2 + 1].
pub fn clu_saturated(x: f64, p: &CluParams) -> f64 {
    shaped_eval(ConvexBase::Clu, Curvature::Saturated, x, p.omega0, p.omega1).y
}

/// Unit counts per activation kind within a combined layer of width m.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationSelection {
    pub convex: usize,
    pub concave: usize,
    pub saturated: usize,
}

impl ActivationSelection {
    pub fn new(convex: usize, concave: usize, saturated: usize) -> Self {
        ActivationSelection {
            convex,
            concave,
            saturated,
        }
    }

    pub fn width(&self) -> usize {
        self.convex + self.concave + self.saturated
    }

    /// Kind of unit j under this selection.
    pub fn kind_at(&self, j: usize) -> Curvature {
        if j < self.convex {
            Curvature::Convex
        } else if j < self.convex + self.concave {
            Curvature::Concave
        } else {
            Curvature::Saturated
        }
    }

    pub fn kinds(&self) -> Vec<Curvature> {
        (0..self.width()).map(|j| self.kind_at(j)).collect()
    }
}

/// Combined activation: first `convex` units get the convex base, the next
/// `concave` its reflection, the rest the saturated variant.
pub fn combined(h: &[f64], sel: &ActivationSelection, p: &CluParams) -> Result<Vec<f64>> {
    if h.len() != sel.width() {
        return Err(Error::WidthMismatch {
            what: "combined activation",
            expected: sel.width(),
            got: h.len(),
        });
    }
    Ok(h.iter()
        .enumerate()
        .map(|(j, &x)| {
            shaped_eval(ConvexBase::Clu, sel.kind_at(j), x, p.omega0, p.omega1).y
        })
        .collect())
}

/// Saturated unit evaluated at a*x and affinely normalized into [0, 1];
/// approaches the Heaviside step as a grows.
pub fn heaviside_approx(x: f64, a: f64, p: &CluParams) -> f64 {
    debug_assert!(a > 0.0, "heaviside scale must be positive");
    // c = inf of the base = -omega0/2 and base(1) = 1, so the normalizer
    // is omega0/2 + 1 on each side of zero.
    let half_span = 0.5 * p.omega0 + 1.0;
    (clu_saturated(a * x, p) + half_span) / (2.0 * half_span)
}

/// Four-parameter response curve: base rate, sensitivity, inflection
/// point, and ceiling of a translated sigmoid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpmParams {
    omega0: f64,
    omega1: f64,
    omega2: f64,
    omega3: f64,
}

impl FpmParams {
    pub fn new(omega0: f64, omega1: f64, omega2: f64, omega3: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&omega0) || !omega0.is_finite() {
            return Err(Error::InvalidParam(format!(
                "fpm omega0 must lie in [0,1], got {omega0}"
            )));
        }
        if !(0.0..=1.0).contains(&omega3) || omega3 <= omega0 {
            return Err(Error::InvalidParam(format!(
                "fpm omega3 must lie in ({omega0}, 1], got {omega3}"
            )));
        }
        if !omega1.is_finite() || omega1 <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "fpm omega1 must be positive, got {omega1}"
            )));
        }
        if !omega2.is_finite() {
            return Err(Error::InvalidParam(format!(
                "fpm omega2 must be finite, got {omega2}"
            )));
        }
        Ok(FpmParams {
            omega0,
            omega1,
            omega2,
            omega3,
        })
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }
    pub fn omega1(&self) -> f64 {
        self.omega1
    }
    pub fn omega2(&self) -> f64 {
        self.omega2
    }
    pub fn omega3(&self) -> f64 {
        self.omega3
    }

    /// Curve slope at the inflection point.
    pub fn peak_slope(&self) -> f64 {
        self.omega1 * (self.omega3 - self.omega0) / 4.0
    }
}

/// Response value in [omega0, omega3] at incentive t.
pub fn fpm(t: f64, p: &FpmParams) -> f64 {
    p.omega0 + (p.omega3 - p.omega0) * sigmoid(p.omega1 * (t - p.omega2))
}

/// d fpm / dt.
pub fn fpm_dt(t: f64, p: &FpmParams) -> f64 {
    let s = sigmoid(p.omega1 * (t - p.omega2));
    (p.omega3 - p.omega0) * p.omega1 * s * (1.0 - s)
}

/// Plain ReLU, for the unconstrained baselines.
pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Plain ELU, for the unconstrained baselines.
pub fn elu(x: f64, alpha: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        alpha * (x.exp() - 1.0)
    }
}
