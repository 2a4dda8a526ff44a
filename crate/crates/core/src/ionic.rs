//! FitzHugh-Nagumo membrane kinetics and numerical validation of the
//! structural growth/monotonicity/coercivity assumptions the analysis
//! places on the ionic functions.

use crate::{Error, Result};

/// FitzHugh-Nagumo parameters. The constructor enforces the sign and
/// range constraints a, b >= 0, lambda < 0, 0 < theta < 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FhnParams {
    a: f64,
    b: f64,
    lambda: f64,
    theta: f64,
}

impl FhnParams {
    pub fn new(a: f64, b: f64, lambda: f64, theta: f64) -> Result<Self> {
        if !(a >= 0.0) || !(b >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "ionic: a and b must be nonnegative (a={a}, b={b})"
            )));
        }
        if !(lambda < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "ionic: lambda must be negative, got {lambda}"
            )));
        }
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "ionic: theta must lie in (0,1), got {theta}"
            )));
        }
        Ok(Self { a, b, lambda, theta })
    }

    /// Standard excitable-regime defaults: a=0.7, b=0.3, lambda=-1,
    /// theta=0.25.
    pub fn standard() -> Self {
        Self { a: 0.7, b: 0.3, lambda: -1.0, theta: 0.25 }
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }
}

/// I_1(v) = lambda v (1 - v)(v - theta), the cubic part.
pub fn i1(v: f64, p: &FhnParams) -> f64 {
    p.lambda * v * (1.0 - v) * (v - p.theta)
}

/// I_2(w) = -lambda w, the linear recovery part.
pub fn i2(w: f64, p: &FhnParams) -> f64 {
    -p.lambda * w
}

/// Total ionic current I_ion(v, w) = I_1(v) + I_2(w).
pub fn i_ion(v: f64, w: f64, p: &FhnParams) -> f64 {
    i1(v, p) + i2(w, p)
}

/// Gating rate H(v, w) = a v - b w.
pub fn h_gate(v: f64, w: f64, p: &FhnParams) -> f64 {
    p.a * v - p.b * w
}

/// Derivative of I_1, used to pick the monotonicity shift.
fn i1_prime(v: f64, p: &FhnParams) -> f64 {
    // d/dv [lambda(-v^3 + (1+theta)v^2 - theta v)]
    p.lambda * (-3.0 * v * v + 2.0 * (1.0 + p.theta) * v - p.theta)
}

/// Constants fitted (or found infeasible) by [`validate_assumptions`].
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    pub r: f64,
    /// Two-sided growth constant for I_1.
    pub alpha1: f64,
    /// Linear growth constant for I_2.
    pub alpha2: f64,
    /// Linear growth constant for H.
    pub alpha3: f64,
    /// Coupling constants of the coercivity inequality
    /// I_2(w) v - alpha4 H(v,w) w >= alpha5 |w|^2, when one was found.
    pub alpha4: Option<f64>,
    pub alpha5: Option<f64>,
    /// Shift making z -> I_1(z) + beta1 z + beta2 nondecreasing.
    pub beta1: f64,
    pub beta2: f64,
    /// Constant of the strong monotonicity inequality for the shifted I_1.
    pub c_monotone: f64,
}

/// Numerically verify the growth, monotonicity and coercivity
/// assumptions on (I_1, I_2, H) over `box_half`-sized sample box
/// [-box_half, box_half]^2 with `samples` points per axis.
///
/// This is a sampling check, not a proof. The lower growth bound
/// (1/alpha1)|v|^{r-1} <= |I_1(v)| is checked away from the roots of the
/// cubic (|v| >= 2), where it carries the asymptotic content; inside the
/// root region the cubic vanishes at {0, theta, 1} and no finite alpha1
/// exists pointwise.
pub fn validate_assumptions(
    p: &FhnParams,
    r: f64,
    box_half: f64,
    samples: usize,
) -> Result<AssumptionReport> {
    assert!(samples >= 16);
    let n = samples;
    let vs: Vec<f64> = (0..=n).map(|i| -box_half + 2.0 * box_half * i as f64 / n as f64).collect();

    // (a) two-sided growth of I_1: find the smallest feasible alpha1.
    let mut alpha1: f64 = 1.0;
    for &v in &vs {
        let ai = i1(v, p).abs();
        // upper bound |I_1| <= alpha1 (|v|^{r-1} + 1)
        let denom = v.abs().powf(r - 1.0) + 1.0;
        let need_upper = ai / denom;
        if !need_upper.is_finite() {
            return Err(Error::AssumptionViolated {
                assumption: "growth upper bound".into(),
                v,
                w: 0.0,
            });
        }
        alpha1 = alpha1.max(need_upper);
        // lower bound, asymptotic region only
        if v.abs() >= 2.0 {
            if ai == 0.0 {
                return Err(Error::AssumptionViolated {
                    assumption: format!("growth lower bound with r = {r}"),
                    v,
                    w: 0.0,
                });
            }
            alpha1 = alpha1.max(v.abs().powf(r - 1.0) / ai);
        }
    }
    // Re-check both bounds with the fitted alpha1; a wrong growth
    // exponent makes the pair infeasible at large |v|.
    for &v in &vs {
        let ai = i1(v, p).abs();
        if ai > alpha1 * (v.abs().powf(r - 1.0) + 1.0) * (1.0 + 1e-12) {
            return Err(Error::AssumptionViolated {
                assumption: format!("growth upper bound with r = {r}"),
                v,
                w: 0.0,
            });
        }
        if v.abs() >= 2.0 && v.abs().powf(r - 1.0) / alpha1 > ai * (1.0 + 1e-12) {
            return Err(Error::AssumptionViolated {
                assumption: format!("growth lower bound with r = {r}"),
                v,
                w: 0.0,
            });
        }
    }
    // Feasibility cross-check of the pair: the fitted alpha1 must not be
    // dominated by the sample box edge (an exponent mismatch shows up as
    // the fit being attained at the largest |v| sampled, growing without
    // bound). Compare the constant needed at the edge with the one
    // needed at half the box.
    let edge = box_half;
    let need = |v: f64| -> f64 {
        let ai = i1(v, p).abs();
        (ai / (v.abs().powf(r - 1.0) + 1.0)).max(if v.abs() >= 2.0 && ai > 0.0 {
            v.abs().powf(r - 1.0) / ai
        } else {
            0.0
        })
    };
    if need(edge) > 2.0 * need(edge / 2.0).max(1.0) {
        return Err(Error::AssumptionViolated {
            assumption: format!("growth exponent r = {r} infeasible: constant diverges"),
            v: edge,
            w: 0.0,
        });
    }

    // (a) |I_2(w)| <= alpha2 (|w| + 1) — linear, alpha2 = |lambda|.
    let alpha2 = p.lambda.abs();
    // (b) |H| <= alpha3 (|v| + |w| + 1).
    let alpha3 = p.a.max(p.b);

    // (b) coercivity: I_2(w) v - alpha4 H(v,w) w >= alpha5 |w|^2.
    // Search alpha4 on a coarse grid; verify on the sample box.
    let mut alpha4 = None;
    let mut alpha5 = None;
    if p.a > 0.0 {
        let cand = -p.lambda / p.a; // cancels the vw cross term
        let a5 = cand * p.b;
        if a5 > 0.0 {
            let mut ok = true;
            for &v in &vs {
                for &w in &vs {
                    let lhs = i2(w, p) * v - cand * h_gate(v, w, p) * w;
                    if lhs < a5 * w * w - 1e-9 {
                        ok = false;
                    }
                }
            }
            if ok {
                alpha4 = Some(cand);
                alpha5 = Some(a5);
            }
        }
    }

    // (c) monotonicity of the shifted cubic: beta1 >= -min I_1' makes
    // I_1 + beta1 z nondecreasing on the box; the minimum of I_1' over R
    // sits at the vertex of the parabola.
    let vertex = (1.0 + p.theta) / 3.0;
    let min_deriv = i1_prime(vertex, p).min(i1_prime(-box_half, p)).min(i1_prime(box_half, p));
    let beta1 = (-min_deriv).max(0.0) + 1e-9;
    let beta2 = 0.0;
    for pair in vs.windows(2) {
        let (z1, z2) = (pair[0], pair[1]);
        let d = (i1(z2, p) + beta1 * z2) - (i1(z1, p) + beta1 * z1);
        if d < -1e-9 {
            return Err(Error::AssumptionViolated {
                assumption: "shifted monotonicity".into(),
                v: z1,
                w: 0.0,
            });
        }
    }

    // (d) strong monotonicity constant: fit the largest feasible 1/C on
    // sampled pairs (coarse subsample to keep this quadratic pass cheap).
    let stride = (n / 64).max(1);
    let sub: Vec<f64> = vs.iter().copied().step_by(stride).collect();
    let mut inv_c = f64::INFINITY;
    for &z1 in &sub {
        for &z2 in &sub {
            if (z1 - z2).abs() < 1e-12 {
                continue;
            }
            let lhs = ((i1(z1, p) + beta1 * z1) - (i1(z2, p) + beta1 * z2)) * (z1 - z2);
            let scale = (1.0 + z1.abs() + z2.abs()).powf(r - 2.0) * (z1 - z2) * (z1 - z2);
            inv_c = inv_c.min(lhs / scale);
        }
    }
    if !(inv_c > 0.0) {
        return Err(Error::AssumptionViolated {
            assumption: "strong monotonicity of shifted I_1".into(),
            v: 0.0,
            w: 0.0,
        });
    }

    Ok(AssumptionReport {
        r,
        alpha1,
        alpha2,
        alpha3,
        alpha4,
        alpha5,
        beta1,
        beta2,
        c_monotone: 1.0 / inv_c,
    })
}
