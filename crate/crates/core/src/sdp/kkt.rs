//! Optimality residuals recomputed from the instance data and the returned
//! primal-dual pair, independent of the solver's internal state.

use serde::Serialize;

use super::{SdpInstance, SdpSolution};
use crate::linalg::{inner, min_eigenvalue, symmetrize};

/// Relative residuals of the optimality conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktReport {
    /// Negative part of the smallest eigenvalue of the primal matrix.
    pub primal_psd: f64,
    /// Equality rows with zero right-hand side (and affine rows).
    pub equalities: f64,
    /// Equality rows with nonzero right-hand side (the normalization).
    pub normalization: f64,
    pub inequalities: f64,
    pub dual_sign: f64,
    pub dual_psd: f64,
    /// `|⟨Z, X⟩|` plus inequality multiplier-slack products.
    pub complementarity: f64,
    /// Mismatch between the returned dual slack and `C − Σ yᵢAᵢ − Σ ±λⱼGⱼ`.
    pub stationarity: f64,
    pub duality_gap: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        [
            self.primal_psd,
            self.equalities,
            self.normalization,
            self.inequalities,
            self.dual_sign,
            self.dual_psd,
            self.complementarity,
            self.stationarity,
            self.duality_gap,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max() <= tol
    }

    /// `(name, value)` pairs in a fixed order.
    pub fn entries(&self) -> [(&'static str, f64); 9] {
        [
            ("primal_psd", self.primal_psd),
            ("equalities", self.equalities),
            ("normalization", self.normalization),
            ("inequalities", self.inequalities),
            ("dual_sign", self.dual_sign),
            ("dual_psd", self.dual_psd),
            ("complementarity", self.complementarity),
            ("stationarity", self.stationarity),
            ("duality_gap", self.duality_gap),
        ]
    }
}

pub fn check_kkt(instance: &SdpInstance, solution: &SdpSolution) -> KktReport {
    let sf = instance.lower();
    let x = &solution.lifted;
    let z = &solution.z;
    let n_eq = instance.equalities.len();
    let n_in = instance.inequalities.len();

    // Full multiplier vector on the lowered rows; inequality rows were
    // negated for `≤`, which keeps their multipliers nonnegative.
    let mut y: Vec<f64> = solution.y.clone();
    y.extend(solution.lambda.iter().copied());
    if let Some(aff) = &solution.affine_dual {
        y.extend(aff.iter().copied());
    }
    if let Some(c) = solution.corner_dual {
        y.push(c);
    }
    let y_len_ok = y.len() == sf.rows.len();

    let x_scale = 1.0 + x.norm();
    let primal_psd = (-min_eigenvalue(&symmetrize(x))).max(0.0) / x_scale;
    let dual_psd = (-min_eigenvalue(&symmetrize(z))).max(0.0) / (1.0 + z.norm());

    let mut equalities = 0.0f64;
    let mut normalization = 0.0f64;
    let mut inequalities = 0.0f64;
    let mut dual_sign = 0.0f64;
    let mut slack_products = 0.0f64;
    for (i, (a, &b)) in sf.rows.iter().zip(sf.b.iter()).enumerate() {
        let value = inner(a, x);
        let row_scale = 1.0 + b.abs() + a.norm() * x.norm();
        let is_ineq = i >= n_eq && i < n_eq + n_in;
        if is_ineq {
            inequalities = inequalities.max((b - value).max(0.0) / row_scale);
            if y_len_ok {
                dual_sign = dual_sign.max((-y[i]).max(0.0));
                slack_products += (y[i] * (value - b)).abs();
            }
        } else if b != 0.0 && i < n_eq {
            normalization = normalization.max((value - b).abs() / row_scale);
        } else {
            equalities = equalities.max((value - b).abs() / row_scale);
        }
    }

    let primal_objective = inner(&sf.c, x);
    let (dual_objective, stationarity) = if y_len_ok {
        let mut recon = sf.c.clone();
        for (a, &yi) in sf.rows.iter().zip(y.iter()) {
            recon -= a * yi;
        }
        let dual_objective: f64 = sf.b.iter().zip(y.iter()).map(|(b, y)| b * y).sum();
        (dual_objective, (recon - z).norm() / (1.0 + sf.c.norm()))
    } else {
        (f64::NAN, f64::INFINITY)
    };
    let obj_scale = 1.0 + primal_objective.abs() + dual_objective.abs();
    let complementarity = (inner(z, x).abs() + slack_products) / obj_scale;
    let duality_gap = (primal_objective - dual_objective).abs() / obj_scale;

    KktReport {
        primal_psd,
        equalities,
        normalization,
        inequalities,
        dual_sign,
        dual_psd,
        complementarity,
        stationarity,
        duality_gap,
    }
}
