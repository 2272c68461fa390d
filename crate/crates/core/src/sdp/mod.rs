//! Dense primal-dual interior-point solver for small semidefinite programs
//!
//! ```text
//! minimize ⟨C, X⟩  s.t.  ⟨Aᵢ, X⟩ = bᵢ,  ⟨Gⱼ, X⟩ ≥ hⱼ (or ≤),  X ⪰ 0
//! ```
//!
//! optionally with a vector variable `x` coupled through the bordered
//! matrix `[[X, x], [xᵀ, 1]] ⪰ 0` and affine constraints `Fx = g`.

mod ipm;
mod kkt;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use kkt::{check_kkt, KktReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    /// `⟨G, X⟩ ≥ h`
    Geq,
    /// `⟨G, X⟩ ≤ h`
    Leq,
}

impl Sense {
    fn sign(self) -> f64 {
        match self {
            Sense::Geq => 1.0,
            Sense::Leq => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inequality {
    pub matrix: DMatrix<f64>,
    pub sense: Sense,
    pub rhs: f64,
}

/// Vector variable `x` with `Fx = g` and `[[X, x], [xᵀ, 1]] ⪰ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineBlock {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpInstance {
    pub cost: DMatrix<f64>,
    pub equalities: Vec<(DMatrix<f64>, f64)>,
    pub inequalities: Vec<Inequality>,
    pub affine: Option<AffineBlock>,
}

impl SdpInstance {
    pub fn new(cost: DMatrix<f64>) -> Self {
        Self {
            cost,
            equalities: Vec::new(),
            inequalities: Vec::new(),
            affine: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.cost.nrows()
    }

    /// Dimension of the matrix variable actually handled by the solver.
    pub fn lifted_dim(&self) -> usize {
        self.dim() + usize::from(self.affine.is_some())
    }

    pub fn equality(mut self, matrix: DMatrix<f64>, rhs: f64) -> Self {
        self.equalities.push((matrix, rhs));
        self
    }

    pub fn inequality(mut self, matrix: DMatrix<f64>, sense: Sense, rhs: f64) -> Self {
        self.inequalities.push(Inequality { matrix, sense, rhs });
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if n == 0 || self.cost.ncols() != n {
            return Err(Error::Dimension(format!("cost matrix is {}×{}", n, self.cost.ncols())));
        }
        let check = |name: &str, m: &DMatrix<f64>| -> Result<()> {
            if m.shape() != (n, n) {
                return Err(Error::Dimension(format!("{name} is {:?}, expected {n}×{n}", m.shape())));
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} has non-finite entries")));
            }
            let scale = m.amax().max(f64::MIN_POSITIVE);
            if (m - m.transpose()).amax() > 1e-12 * scale {
                return Err(Error::InvalidArgument(format!("{name} is not symmetric")));
            }
            Ok(())
        };
        check("cost", &self.cost)?;
        for (i, (m, b)) in self.equalities.iter().enumerate() {
            check(&format!("equality {i}"), m)?;
            if !b.is_finite() {
                return Err(Error::InvalidArgument(format!("equality {i} has non-finite rhs")));
            }
        }
        for (j, g) in self.inequalities.iter().enumerate() {
            check(&format!("inequality {j}"), &g.matrix)?;
            if !g.rhs.is_finite() {
                return Err(Error::InvalidArgument(format!("inequality {j} has non-finite rhs")));
            }
        }
        if let Some(aff) = &self.affine {
            if aff.matrix.ncols() != n || aff.matrix.nrows() != aff.rhs.len() {
                return Err(Error::Dimension(format!(
                    "affine block is {:?} with {} right-hand sides for dimension {n}",
                    aff.matrix.shape(),
                    aff.rhs.len()
                )));
            }
        }
        Ok(())
    }

    /// The instance as a plain equality/inequality SDP over the lifted variable.
    pub(crate) fn lower(&self) -> StandardForm {
        let n = self.dim();
        let big = self.lifted_dim();
        let embed = |m: &DMatrix<f64>| {
            let mut out = DMatrix::zeros(big, big);
            out.view_mut((0, 0), (n, n)).copy_from(m);
            out
        };
        let mut rows = Vec::new();
        let mut b = Vec::new();
        let mut ineq = Vec::new();
        for (m, rhs) in &self.equalities {
            rows.push(embed(m));
            b.push(*rhs);
        }
        for g in &self.inequalities {
            ineq.push(rows.len());
            rows.push(embed(&g.matrix) * g.sense.sign());
            b.push(g.rhs * g.sense.sign());
        }
        if let Some(aff) = &self.affine {
            for r in 0..aff.matrix.nrows() {
                let mut f = DMatrix::zeros(big, big);
                for j in 0..n {
                    f[(j, n)] = 0.5 * aff.matrix[(r, j)];
                    f[(n, j)] = 0.5 * aff.matrix[(r, j)];
                }
                rows.push(f);
                b.push(aff.rhs[r]);
            }
            let mut corner = DMatrix::zeros(big, big);
            corner[(n, n)] = 1.0;
            rows.push(corner);
            b.push(1.0);
        }
        StandardForm {
            c: embed(&self.cost),
            rows,
            b: DVector::from_vec(b),
            ineq,
        }
    }
}

/// `min ⟨C, X⟩ s.t. ⟨Aᵢ, X⟩ = bᵢ (i ∉ I), ⟨Aᵢ, X⟩ ≥ bᵢ (i ∈ I), X ⪰ 0`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct StandardForm {
    pub c: DMatrix<f64>,
    pub rows: Vec<DMatrix<f64>>,
    pub b: DVector<f64>,
    /// Indices of rows that are `≥` inequalities.
    pub ineq: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    MaxIterations,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Optimal => "optimal",
            Status::MaxIterations => "max_iters",
            Status::Infeasible => "infeasible",
            Status::Unbounded => "unbounded",
            Status::NumericalFailure => "numerical_failure",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpOptions {
    /// Relative primal/dual infeasibility and duality-gap target.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_dim: usize,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
    /// Normalize the cost and every constraint row before solving.
    pub equilibrate: bool,
    /// Remove linearly dependent equality rows before solving.
    pub presolve: bool,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 200,
            max_dim: 64,
            step_fraction: 0.98,
            equilibrate: true,
            presolve: true,
        }
    }
}

/// One line of the iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub relative_gap: f64,
    pub mu: f64,
    pub sigma: f64,
    pub primal_step: f64,
    pub dual_step: f64,
}

impl fmt::Display for IterationLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "iter={} pobj={:.12e} dobj={:.12e} pinf={:.3e} dinf={:.3e} gap={:.3e} mu={:.3e} sigma={:.3e} ap={:.4} ad={:.4}",
            self.iteration,
            self.primal_objective,
            self.dual_objective,
            self.primal_infeasibility,
            self.dual_infeasibility,
            self.relative_gap,
            self.mu,
            self.sigma,
            self.primal_step,
            self.dual_step
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub status: Status,
    /// Matrix variable `X` (the leading block when an affine block is present).
    pub x: DMatrix<f64>,
    /// Vector variable, when the instance has an affine block.
    pub x_vec: Option<DVector<f64>>,
    /// Full lifted primal matrix.
    pub lifted: DMatrix<f64>,
    /// Multipliers of the equalities.
    pub y: Vec<f64>,
    /// Multipliers of the inequalities, nonnegative for either sense.
    pub lambda: Vec<f64>,
    /// Multipliers of the affine rows `Fx = g`.
    pub affine_dual: Option<DVector<f64>>,
    /// Multiplier of the bordered corner `Y_{nn} = 1`.
    pub corner_dual: Option<f64>,
    /// Dual slack on the lifted variable.
    pub z: DMatrix<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub relative_gap: f64,
    pub iterations: usize,
    pub log: Vec<IterationLog>,
    /// Human-readable reason when the status is not optimal.
    pub message: Option<String>,
}

impl SdpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }

    /// Primal minus dual objective.
    pub fn gap(&self) -> f64 {
        self.primal_objective - self.dual_objective
    }
}

/// Solves an instance; never panics on well-formed input and never reports
/// `Optimal` unless the tolerances are met.
pub fn solve(instance: &SdpInstance, options: &SdpOptions) -> Result<SdpSolution> {
    instance.validate()?;
    let lifted = instance.lifted_dim();
    if lifted > options.max_dim {
        return Err(Error::Dimension(format!(
            "SDP dimension {lifted} exceeds the configured cap {}",
            options.max_dim
        )));
    }
    let standard = instance.lower();
    let raw = ipm::solve_standard(&standard, options);
    Ok(unlower(instance, raw))
}

fn unlower(instance: &SdpInstance, raw: ipm::RawSolution) -> SdpSolution {
    let n = instance.dim();
    let n_eq = instance.equalities.len();
    let n_in = instance.inequalities.len();
    let y = raw.y.rows(0, n_eq).iter().copied().collect();
    let lambda = raw.y.rows(n_eq, n_in).iter().copied().collect();
    let (x, x_vec, affine_dual, corner_dual) = match &instance.affine {
        Some(aff) => {
            let k = aff.rhs.len();
            (
                raw.x.view((0, 0), (n, n)).into_owned(),
                Some(raw.x.view((0, n), (n, 1)).column(0).into_owned()),
                Some(raw.y.rows(n_eq + n_in, k).into_owned()),
                Some(raw.y[n_eq + n_in + k]),
            )
        }
        None => (raw.x.clone(), None, None, None),
    };
    SdpSolution {
        status: raw.status,
        x,
        x_vec,
        lifted: raw.x,
        y,
        lambda,
        affine_dual,
        corner_dual,
        z: raw.z,
        primal_objective: raw.primal_objective,
        dual_objective: raw.dual_objective,
        primal_infeasibility: raw.primal_infeasibility,
        dual_infeasibility: raw.dual_infeasibility,
        relative_gap: raw.relative_gap,
        iterations: raw.iterations,
        log: raw.log,
        message: raw.message,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize) -> DMatrix<f64> {
        DMatrix::identity(n, n)
    }

    #[test]
    fn one_dimensional_trace() {
        let inst = SdpInstance::new(unit(1)).equality(unit(1), 1.0);
        let sol = solve(&inst, &SdpOptions::default()).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.x[(0, 0)] - 1.0).abs() < 1e-9);
        assert!((sol.primal_objective - 1.0).abs() < 1e-9);
    }

    #[test]
    fn smallest_eigenvalue() {
        let c = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let inst = SdpInstance::new(c).equality(unit(2), 1.0);
        let sol = solve(&inst, &SdpOptions::default()).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.primal_objective - 1.0).abs() < 1e-9);
        assert!((sol.x[(0, 0)] - 1.0).abs() < 1e-8);
        assert!(sol.x[(1, 1)].abs() < 1e-8);
        assert!(sol.iterations <= 30, "{}", sol.iterations);
    }

    #[test]
    fn dimension_cap_is_enforced() {
        let inst = SdpInstance::new(unit(3)).equality(unit(3), 1.0);
        let opts = SdpOptions {
            max_dim: 2,
            ..SdpOptions::default()
        };
        assert!(matches!(solve(&inst, &opts), Err(Error::Dimension(_))));
    }

    #[test]
    fn rejects_asymmetric_data() {
        let mut a = unit(2);
        a[(0, 1)] = 1.0;
        assert!(solve(&SdpInstance::new(unit(2)).equality(a, 1.0), &SdpOptions::default()).is_err());
    }

    #[test]
    fn infeasible_instance_is_detected() {
        // tr X = 1 and tr X ≤ 0 cannot both hold.
        let inst = SdpInstance::new(unit(2))
            .equality(unit(2), 1.0)
            .inequality(unit(2), Sense::Leq, -0.5);
        let sol = solve(&inst, &SdpOptions::default()).unwrap();
        assert_eq!(sol.status, Status::Infeasible, "{:?}", sol.message);
    }

    #[test]
    fn inconsistent_dependent_rows_are_infeasible() {
        let inst = SdpInstance::new(unit(2))
            .equality(unit(2), 1.0)
            .equality(unit(2) * 2.0, 3.0);
        let sol = solve(&inst, &SdpOptions::default()).unwrap();
        assert_eq!(sol.status, Status::Infeasible);
    }

    #[test]
    fn unbounded_instance_is_detected() {
        // min −X₁₁ s.t. X₂₂ = 1.
        let mut c = DMatrix::zeros(2, 2);
        c[(0, 0)] = -1.0;
        let mut a = DMatrix::zeros(2, 2);
        a[(1, 1)] = 1.0;
        let sol = solve(&SdpInstance::new(c).equality(a, 1.0), &SdpOptions::default()).unwrap();
        assert_eq!(sol.status, Status::Unbounded, "{:?}", sol.message);
    }

    #[test]
    fn affine_block_projects_onto_line() {
        // min ‖x‖² s.t. x₁ + x₂ = 2 → x = (1, 1).
        let inst = SdpInstance {
            affine: Some(AffineBlock {
                matrix: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
                rhs: DVector::from_vec(vec![2.0]),
            }),
            ..SdpInstance::new(unit(2))
        };
        let sol = solve(&inst, &SdpOptions::default()).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        let x = sol.x_vec.unwrap();
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6);
        assert!((sol.primal_objective - 2.0).abs() < 1e-8);
    }

    #[test]
    fn inequality_binds_with_positive_multiplier() {
        // min X₁₁ + 2X₂₂ s.t. tr X = 1, X₂₂ ≥ 0.25.
        let c = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let mut g = DMatrix::zeros(2, 2);
        g[(1, 1)] = 1.0;
        let inst = SdpInstance::new(c).equality(unit(2), 1.0).inequality(g, Sense::Geq, 0.25);
        let sol = solve(&inst, &SdpOptions::default()).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.primal_objective - 1.25).abs() < 1e-8);
        assert!((sol.lambda[0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn trace_lines_are_key_value() {
        let inst = SdpInstance::new(unit(1)).equality(unit(1), 1.0);
        let sol = solve(&inst, &SdpOptions::default()).unwrap();
        let line = sol.log[0].to_string();
        assert!(line.starts_with("iter=1 pobj="));
        assert!(line.split(' ').all(|kv| kv.contains('=')));
    }
}
