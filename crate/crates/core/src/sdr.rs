//! Semidefinite relaxation of the transmit-power-constrained QCQP: lifting,
//! solving, rank-one extraction and recovery of the operating point.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::circuit::{ImpedanceMatrix, Loading};
use crate::closed_form::transmit_powers;
use crate::error::{Error, Result};
use crate::linalg::{orthogonal_complement, sym_eigen, CVector};
use crate::qcqp::{to_currents, ConstraintMode, QcqpProblem};
use crate::sdp::{self, check_kkt, AffineBlock, KktReport, SdpInstance, SdpOptions, SdpSolution, Sense, Status};

/// Which lifted formulation is handed to the SDP solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdrForm {
    /// `C ⪰ 0` with homogeneous KVL constraints and `tr(RC) = 1`.
    Conic,
    /// `[[C, c], [cᵀ, 1]] ⪰ 0` with `Ac = b`.
    Affine,
}

impl fmt::Display for SdrForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SdrForm::Conic => "conic",
            SdrForm::Affine => "affine",
        })
    }
}

impl FromStr for SdrForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conic" => Ok(SdrForm::Conic),
            "affine" => Ok(SdrForm::Affine),
            _ => Err(Error::InvalidArgument(format!("form '{s}' (expected conic or affine)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdrOptions {
    pub form: SdrForm,
    /// Solve the conic form on the face `C = V W Vᵀ`, `Vᵀk = 0`, on which the
    /// homogeneous KVL constraints hold identically.
    pub facial_reduction: bool,
    pub sdp: SdpOptions,
    pub tightness_threshold: f64,
    /// `μ₂/μ₁` above which the relaxed matrix is clearly not rank one.
    pub rank_ratio_threshold: f64,
}

impl Default for SdrOptions {
    fn default() -> Self {
        Self {
            form: SdrForm::Conic,
            facial_reduction: true,
            sdp: SdpOptions::default(),
            tightness_threshold: 1e-8,
            rank_ratio_threshold: 1e-4,
        }
    }
}

/// Lagrange multipliers in the conic form's terms.
#[derive(Debug, Clone, PartialEq)]
pub struct SdrDuals {
    /// One per power inequality (lower bounds first, then caps).
    pub lambda: Vec<f64>,
    pub nu0: f64,
    /// Multipliers of the `Kₘ` equalities.
    pub nu: DVector<f64>,
    /// Multiplier of the received-power equality.
    pub sigma: f64,
    /// Dual slack matrix.
    pub q_star: DMatrix<f64>,
}

/// Output of one relaxation solve.
#[derive(Debug, Clone)]
pub struct Relaxation {
    pub c_matrix: DMatrix<f64>,
    /// Vector variable of the affine form.
    pub c_vec: Option<DVector<f64>>,
    pub p_relax: f64,
    pub status: Status,
    pub iterations: usize,
    pub duals: SdrDuals,
    /// Instance against which the optimality certificate is checked.
    pub certificate_instance: SdpInstance,
    pub certificate_solution: SdpSolution,
}

impl Relaxation {
    pub fn kkt(&self) -> KktReport {
        check_kkt(&self.certificate_instance, &self.certificate_solution)
    }
}

fn power_inequalities(problem: &QcqpProblem) -> Vec<(DMatrix<f64>, Sense, f64)> {
    let mut out = Vec::new();
    match &problem.constraints {
        ConstraintMode::None => {}
        ConstraintMode::NonNegative => {
            for q in &problem.q {
                out.push((q.clone(), Sense::Geq, 0.0));
            }
        }
        ConstraintMode::Caps(caps) => {
            for q in &problem.q {
                out.push((q.clone(), Sense::Geq, 0.0));
            }
            for (q, &cap) in problem.q.iter().zip(caps) {
                out.push((q.clone(), Sense::Leq, cap));
            }
        }
    }
    out
}

/// Purely conic lifted instance: equalities `K₀` (index 0), `Kₘ` when
/// enabled, then `R` last.
pub fn conic_instance(problem: &QcqpProblem) -> SdpInstance {
    let mut inst = SdpInstance::new(problem.q0.clone()).equality(problem.k0(), 0.0);
    if problem.redundant_equalities {
        for m in 0..problem.dim() {
            inst = inst.equality(problem.km(m), 0.0);
        }
    }
    inst = inst.equality(problem.r.clone(), 1.0);
    for (g, sense, rhs) in power_inequalities(problem) {
        inst = inst.inequality(g, sense, rhs);
    }
    inst
}

pub fn affine_instance(problem: &QcqpProblem) -> SdpInstance {
    let mut inst = SdpInstance::new(problem.q0.clone());
    for (g, sense, rhs) in power_inequalities(problem) {
        inst = inst.inequality(g, sense, rhs);
    }
    inst.affine = Some(AffineBlock {
        matrix: problem.a.clone(),
        rhs: problem.b.clone(),
    });
    inst
}

fn solver_error(sol: &SdpSolution) -> Error {
    let detail = sol.message.clone().unwrap_or_default();
    match sol.status {
        Status::Infeasible => Error::Infeasible(format!("relaxation is infeasible: {detail}")),
        s => Error::Solver(format!(
            "SDP solver stopped with status {s} after {} iterations (pinf {:.2e}, dinf {:.2e}, gap {:.2e}) {detail}",
            sol.iterations, sol.primal_infeasibility, sol.dual_infeasibility, sol.relative_gap
        )),
    }
}

pub fn solve_relaxation(problem: &QcqpProblem, options: &SdrOptions) -> Result<Relaxation> {
    match options.form {
        SdrForm::Affine => solve_affine(problem, options),
        SdrForm::Conic if options.facial_reduction => solve_reduced(problem, options),
        SdrForm::Conic => solve_conic(problem, options),
    }
}

fn solve_affine(problem: &QcqpProblem, options: &SdrOptions) -> Result<Relaxation> {
    let inst = affine_instance(problem);
    let sol = sdp::solve(&inst, &options.sdp)?;
    if !sol.is_optimal() {
        return Err(solver_error(&sol));
    }
    let m = problem.dim();
    let duals = SdrDuals {
        lambda: sol.lambda.clone(),
        nu0: 0.0,
        nu: sol.affine_dual.clone().unwrap_or_else(|| DVector::zeros(0)),
        sigma: sol.corner_dual.unwrap_or(0.0),
        q_star: sol.z.view((0, 0), (m, m)).into_owned(),
    };
    Ok(Relaxation {
        c_matrix: sol.x.clone(),
        c_vec: sol.x_vec.clone(),
        p_relax: sol.primal_objective,
        status: sol.status,
        iterations: sol.iterations,
        duals,
        certificate_instance: inst,
        certificate_solution: sol,
    })
}

fn conic_duals(problem: &QcqpProblem, sol: &SdpSolution) -> SdrDuals {
    let m = problem.dim();
    let n_km = if problem.redundant_equalities { m } else { 0 };
    SdrDuals {
        lambda: sol.lambda.clone(),
        nu0: sol.y[0],
        nu: DVector::from_iterator(n_km, sol.y[1..1 + n_km].iter().copied()),
        sigma: sol.y[1 + n_km],
        q_star: sol.z.clone(),
    }
}

fn solve_conic(problem: &QcqpProblem, options: &SdrOptions) -> Result<Relaxation> {
    let inst = conic_instance(problem);
    let sol = sdp::solve(&inst, &options.sdp)?;
    if !sol.is_optimal() {
        return Err(solver_error(&sol));
    }
    Ok(Relaxation {
        c_matrix: sol.x.clone(),
        c_vec: None,
        p_relax: sol.primal_objective,
        status: sol.status,
        iterations: sol.iterations,
        duals: conic_duals(problem, &sol),
        certificate_instance: inst,
        certificate_solution: sol,
    })
}

fn solve_reduced(problem: &QcqpProblem, options: &SdrOptions) -> Result<Relaxation> {
    let k = &problem.k;
    let k_norm = k.norm();
    let v = orthogonal_complement(k);
    let vt = v.transpose();
    let restrict = |a: &DMatrix<f64>| crate::linalg::symmetrize(&(&vt * a * &v));
    let mut reduced = SdpInstance::new(restrict(&problem.q0)).equality(restrict(&problem.r), 1.0);
    let ineqs = power_inequalities(problem);
    for (g, sense, rhs) in &ineqs {
        reduced = reduced.inequality(restrict(g), *sense, *rhs);
    }
    let sol = sdp::solve(&reduced, &options.sdp)?;
    if !sol.is_optimal() {
        return Err(solver_error(&sol));
    }
    let c_matrix = crate::linalg::symmetrize(&(&v * &sol.x * &vt));

    // Lift the multipliers: the Kₘ family absorbs every cross term between
    // k and its complement, leaving a positive multiple of k̂k̂ᵀ.
    let sigma = sol.y[0];
    let mut p0 = problem.q0.clone() - &problem.r * sigma;
    for ((g, sense, _), &lambda) in ineqs.iter().zip(&sol.lambda) {
        let sign = if *sense == Sense::Geq { 1.0 } else { -1.0 };
        p0 -= g * (sign * lambda);
    }
    let k_hat = k / k_norm;
    let g_vec = &vt * &p0 * &k_hat;
    let h = k_hat.dot(&(&p0 * &k_hat));
    let m = problem.dim();
    let q = sol.z.trace().max(0.0) / (m - 1) as f64;
    let nu = &v * &g_vec / k_norm + &k_hat * ((h - q) / (2.0 * k_norm));
    let q_star = crate::linalg::symmetrize(&(&p0 - (&nu * k.transpose() + k * nu.transpose())));

    let mut full_problem = problem.clone();
    full_problem.redundant_equalities = true;
    let certificate_instance = conic_instance(&full_problem);
    let mut y = vec![0.0];
    y.extend(nu.iter().copied());
    y.push(sigma);
    let certificate_solution = SdpSolution {
        x: c_matrix.clone(),
        lifted: c_matrix.clone(),
        y,
        lambda: sol.lambda.clone(),
        z: q_star.clone(),
        primal_objective: crate::linalg::inner(&problem.q0, &c_matrix),
        dual_objective: sigma,
        ..sol.clone()
    };
    Ok(Relaxation {
        p_relax: certificate_solution.primal_objective,
        c_matrix,
        c_vec: None,
        status: sol.status,
        iterations: sol.iterations,
        duals: SdrDuals {
            lambda: sol.lambda.clone(),
            nu0: 0.0,
            nu,
            sigma,
            q_star,
        },
        certificate_instance,
        certificate_solution,
    })
}

/// Dominant rank-one factor of a relaxed matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub c: DVector<f64>,
    pub mu1: f64,
    pub mu2: f64,
    /// `μ₂/μ₁`
    pub rank_ratio: f64,
    pub rank_one: bool,
}

/// `c = √μ₁·w₁`, signed so the receiver current is positive, then rescaled
/// so the load receives exactly 1 W.
pub fn extract_solution(c_matrix: &DMatrix<f64>, r_l: f64, rank_ratio_threshold: f64) -> Result<Extraction> {
    let m = c_matrix.nrows();
    if m % 2 == 0 || m == 0 {
        return Err(Error::Dimension(format!("relaxed matrix has even dimension {m}")));
    }
    let receiver = (m - 1) / 2;
    let (values, vectors) = sym_eigen(&crate::linalg::symmetrize(c_matrix));
    let mu1 = values[m - 1];
    let mu2 = if m > 1 { values[m - 2].max(0.0) } else { 0.0 };
    if !(mu1 > 0.0) {
        return Err(Error::Solver("relaxed matrix has no positive eigenvalue".into()));
    }
    let mut c = vectors.column(m - 1) * mu1.sqrt();
    if c[receiver] < 0.0 {
        c = -c;
    }
    if c[receiver] == 0.0 {
        return Err(Error::Solver("extracted receiver current is zero".into()));
    }
    let target = (2.0 / r_l).sqrt();
    let c = &c * (target / c[receiver]);
    let rank_ratio = mu2 / mu1;
    let rank_one = rank_ratio <= rank_ratio_threshold;
    if !rank_one {
        log::warn!("relaxed matrix is not rank one (μ₂/μ₁ = {rank_ratio:e}); extraction is heuristic");
    }
    Ok(Extraction {
        c,
        mu1,
        mu2,
        rank_ratio,
        rank_one,
    })
}

/// `‖C − ccᵀ‖_F / cᵀc`.
pub fn tightness_error(c_matrix: &DMatrix<f64>, c: &DVector<f64>) -> Result<f64> {
    let cc = c.dot(c);
    if cc == 0.0 {
        return Err(Error::InvalidArgument("zero vector in tightness error".into()));
    }
    Ok((c_matrix - c * c.transpose()).norm() / cc)
}

/// Minimum-norm Gauss–Newton correction of an extracted point onto the
/// receiver constraints and every power bound that is violated or carries a
/// positive multiplier. Removes the rank-one truncation error so the point
/// is feasible to rounding.
pub fn polish_point(problem: &QcqpProblem, c: &DVector<f64>, lambda: &[f64]) -> DVector<f64> {
    let m = problem.dim();
    let receiver = problem.receiver_index();
    let i_r = (2.0 / problem.r_l).sqrt();
    let n_tx = problem.q.len();
    let mut c = c.clone();
    for _ in 0..8 {
        let powers: Vec<f64> = problem.q.iter().map(|q| c.dot(&(q * &c))).collect();
        let scale = 1.0 + powers.iter().map(|p| p.abs()).sum::<f64>();
        let near = |p: f64, target: f64| (p - target).abs() <= 1e-6 * scale;
        // (gradient, residual) rows
        let mut rows: Vec<(DVector<f64>, f64)> = vec![(problem.k.clone(), problem.k.dot(&c))];
        let mut e_r = DVector::zeros(m);
        e_r[receiver] = 1.0;
        rows.push((e_r, c[receiver] - i_r));
        let mut push_power = |n: usize, target: f64| {
            let q = &problem.q[n];
            rows.push((q * &c * 2.0, powers[n] - target));
        };
        match &problem.constraints {
            ConstraintMode::None => {}
            ConstraintMode::NonNegative => {
                for n in 0..n_tx {
                    let active = lambda.get(n).is_some_and(|&l| l > 0.0) && near(powers[n], 0.0);
                    if powers[n] < 0.0 || active {
                        push_power(n, 0.0);
                    }
                }
            }
            ConstraintMode::Caps(caps) => {
                for n in 0..n_tx {
                    let low = lambda.get(n).is_some_and(|&l| l > 0.0) && near(powers[n], 0.0);
                    let high = lambda.get(n_tx + n).is_some_and(|&l| l > 0.0) && near(powers[n], caps[n]);
                    if powers[n] < 0.0 || (low && powers[n] <= caps[n]) {
                        push_power(n, 0.0);
                    } else if powers[n] > caps[n] || high {
                        push_power(n, caps[n]);
                    }
                }
            }
        }
        let worst = rows.iter().map(|(_, r)| r.abs()).fold(0.0, f64::max);
        if worst <= 1e-15 * scale {
            break;
        }
        let jac = DMatrix::from_fn(rows.len(), m, |i, j| rows[i].0[j]);
        let res = DVector::from_iterator(rows.len(), rows.iter().map(|(_, r)| *r));
        let gram = &jac * jac.transpose();
        let Some(step) = gram.clone().cholesky().map(|ch| ch.solve(&res)).or_else(|| gram.lu().solve(&res)) else {
            break;
        };
        c -= jac.transpose() * step;
    }
    c
}

/// A complete physical operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub currents: CVector,
    pub x_r: f64,
    pub voltages: CVector,
    /// Real power into every port of the loaded network (receiver last).
    pub port_powers: Vec<f64>,
    pub p_loss: f64,
    pub eta: f64,
}

impl OperatingPoint {
    pub fn transmit_powers(&self) -> &[f64] {
        &self.port_powers[..self.port_powers.len() - 1]
    }
}

/// Currents, receiver reactance (from the imaginary receiver KVL), voltages
/// and efficiency for a feasible real point `c`.
pub fn recover_operating_point(c: &DVector<f64>, z: &ImpedanceMatrix, r_l: f64) -> Result<OperatingPoint> {
    let n = z.n_ports();
    if c.len() != 2 * n - 1 {
        return Err(Error::Dimension(format!("point of length {} for N = {n}", c.len())));
    }
    let problem = QcqpProblem::build(z, r_l, ConstraintMode::None)?;
    let eval = problem.evaluate(c)?;
    let kvl_scale = problem.k.norm() * c.norm();
    if eval.kvl_residual.abs() > 1e-8 * kvl_scale || eval.pl_residual.abs() > 1e-8 {
        return Err(Error::Infeasible(format!(
            "point violates the receiver constraints (KVL {:.3e}, load power {:.3e})",
            eval.kvl_residual, eval.pl_residual
        )));
    }
    let currents = to_currents(c)?;
    let i_r = currents[n - 1].re;
    let z_e = z.entries();
    let mut coupling = Complex64::new(0.0, 0.0);
    for t in 0..n - 1 {
        coupling += z_e[(n - 1, t)] * currents[t];
    }
    let x_r = -z_e[(n - 1, n - 1)].im - coupling.im / i_r;
    let loading = Loading::receiver(n, x_r, r_l)?;
    let loaded = crate::circuit::apply_loading(z, &loading)?;
    let voltages = loaded.voltages(&currents);
    let port_powers = transmit_powers(z, &loading, &currents)?;
    let p_loss = eval.objective;
    Ok(OperatingPoint {
        currents,
        x_r,
        voltages,
        port_powers,
        p_loss,
        eta: 1.0 / (1.0 + p_loss),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_one_error_is_zero() {
        let c = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let cc = &c * c.transpose();
        assert_eq!(tightness_error(&cc, &c).unwrap(), 0.0);
    }

    #[test]
    fn identity_against_unit_vector() {
        let c = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(tightness_error(&DMatrix::identity(2, 2), &c).unwrap(), 1.0);
        assert!(tightness_error(&DMatrix::identity(2, 2), &DVector::zeros(2)).is_err());
    }

    #[test]
    fn extraction_recovers_rank_one_factor_with_positive_receiver() {
        let c = DVector::from_vec(vec![0.3, -1.0, 0.7]);
        let r_l = 2.0;
        for sign in [1.0, -1.0] {
            let s = &c * sign;
            let e = extract_solution(&(&s * s.transpose()), r_l, 1e-4).unwrap();
            assert!(e.rank_one);
            assert!(e.c[1] > 0.0);
            assert!((e.c[1] - 1.0).abs() < 1e-15);
            assert!((&e.c + &c).norm() < 1e-14);
        }
    }

    #[test]
    fn extraction_flags_higher_rank() {
        let c = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 1.0, 0.25]));
        let e = extract_solution(&c, 2.0, 1e-4).unwrap();
        assert!(!e.rank_one);
        assert!((e.rank_ratio - 0.5).abs() < 1e-12);
    }

    #[test]
    fn form_parsing() {
        assert_eq!("conic".parse::<SdrForm>().unwrap(), SdrForm::Conic);
        assert_eq!("affine".parse::<SdrForm>().unwrap(), SdrForm::Affine);
        assert!("x".parse::<SdrForm>().is_err());
    }
}
