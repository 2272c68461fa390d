//! Independent verification: exhaustive grid search with local refinement
//! for small QCQPs, and batch checks of the algebraic identities that tie the
//! modules together.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::circuit::{partition, ImpedanceMatrix};
use crate::closed_form::{max_pte, mutual_q, output_impedance, resonant_pte, solve_closed_form, solve_min_loss_qp};
use crate::error::{Error, Result};
use crate::linalg::{half_quadratic_form, herm_eigen, hermitian_defect, orthogonal_complement, CMatrix, CVector};
use crate::pim::{pim_from_entries, pim_split};
use crate::qcqp::{ConstraintMode, QcqpProblem};

pub const DEFAULT_RESOLUTION: usize = 41;
const PENALTY_ROUNDS: usize = 6;
const PENALTY_GROWTH: f64 = 10.0;
const REFINE_STARTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    /// Best grid point, no refinement improved it.
    Grid,
    /// A refined start from the grid improved on the best grid point.
    Multistart,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    #[serde(skip)]
    pub c: DVector<f64>,
    pub objective: f64,
    pub method: OracleMethod,
    pub evaluations: usize,
    pub feasible_grid_points: usize,
    /// Largest constraint violation of the reported point.
    pub max_violation: f64,
    /// `(candidate − oracle) / |oracle|` once compared.
    pub agreement_gap: Option<f64>,
}

impl OracleReport {
    pub fn compare(mut self, candidate_objective: f64) -> Self {
        self.agreement_gap = Some((candidate_objective - self.objective) / self.objective.abs().max(f64::MIN_POSITIVE));
        self
    }
}

/// `c(z) = c₀ + N z` over the null space of `A`.
struct Reduced {
    c0: DVector<f64>,
    basis: DMatrix<f64>,
    /// `NᵀQN` for the objective then each power matrix.
    hess: Vec<DMatrix<f64>>,
    /// `NᵀQc₀`
    lin: Vec<DVector<f64>>,
    /// `c₀ᵀQc₀`
    constant: Vec<f64>,
    /// `(matrix index, sign, bound)`: `sign·(g − bound) ≥ 0`.
    bounds: Vec<(usize, f64, f64)>,
}

impl Reduced {
    fn new(problem: &QcqpProblem) -> Result<Self> {
        let a = &problem.a;
        let gram = a * a.transpose();
        let c0 = a.transpose()
            * gram
                .lu()
                .solve(&problem.b)
                .ok_or_else(|| Error::Oracle("affine constraints are rank deficient".into()))?;
        let v1 = orthogonal_complement(&a.row(0).transpose());
        let a2 = v1.transpose() * a.row(1).transpose();
        let basis = &v1 * orthogonal_complement(&a2);
        let mats: Vec<&DMatrix<f64>> = std::iter::once(&problem.q0).chain(problem.q.iter()).collect();
        let hess = mats.iter().map(|q| basis.transpose() * *q * &basis).collect();
        let lin = mats.iter().map(|q| basis.transpose() * (*q * &c0)).collect();
        let constant = mats.iter().map(|q| c0.dot(&(*q * &c0))).collect();
        let mut bounds = Vec::new();
        match &problem.constraints {
            ConstraintMode::None => {}
            ConstraintMode::NonNegative => bounds.extend((0..problem.q.len()).map(|n| (n + 1, 1.0, 0.0))),
            ConstraintMode::Caps(caps) => {
                bounds.extend((0..problem.q.len()).map(|n| (n + 1, 1.0, 0.0)));
                bounds.extend(caps.iter().enumerate().map(|(n, &cap)| (n + 1, -1.0, cap)));
            }
        }
        Ok(Self {

            c0,
            basis,
            hess,
            lin,
            constant,
            bounds,
        })
    }

    fn dim(&self) -> usize {
        self.basis.ncols()
    }

    fn point(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.c0 + &self.basis * z
    }

    /// Value of quadratic `k` (0 = objective).
    fn quad(&self, k: usize, z: &DVector<f64>) -> f64 {
        z.dot(&(&self.hess[k] * z)) + 2.0 * self.lin[k].dot(z) + self.constant[k]
    }

    fn grad(&self, k: usize, z: &DVector<f64>) -> DVector<f64> {
        (&self.hess[k] * z + &self.lin[k]) * 2.0
    }

    /// Signed slack of each bound; negative means violated.
    fn slacks(&self, z: &DVector<f64>) -> Vec<f64> {
        self.bounds
            .iter()
            .map(|&(k, sign, bound)| sign * (self.quad(k, z) - bound))
            .collect()
    }

    fn violation(&self, z: &DVector<f64>) -> f64 {
        self.slacks(z).iter().fold(0.0f64, |w, &s| w.max(-s))
    }

    fn unconstrained_minimizer(&self) -> Result<DVector<f64>> {
        self.hess[0]
            .clone()
            .cholesky()
            .map(|ch| -ch.solve(&self.lin[0]))
            .ok_or_else(|| Error::Oracle("reduced objective is not positive definite".into()))
    }

    fn scale(&self, z: &DVector<f64>) -> f64 {
        1.0 + (1..self.hess.len()).map(|k| self.quad(k, z).abs()).sum::<f64>()
    }
}

/// Exhaustive search over the free coordinates followed by penalty, restoration
/// and active-set refinement of the best feasible grid points.
pub fn brute_force_qcqp(problem: &QcqpProblem, resolution: usize) -> Result<OracleReport> {
    if problem.n_ports > 3 {
        return Err(Error::Oracle(format!(
            "brute force supports at most two transmitters, got {}",
            problem.n_ports - 1
        )));
    }
    if resolution < 2 {
        return Err(Error::InvalidArgument("grid resolution must be at least 2".into()));
    }
    let red = Reduced::new(problem)?;
    let center = red.unconstrained_minimizer()?;
    let radius = 10.0 * red.point(&center).norm();
    let mut evaluations = 0;
    let mut grid = scan(&red, &center, radius, resolution, &mut evaluations);
    if grid.is_empty() {
        log::info!("no feasible grid point; widening the search ball");
        grid = scan(&red, &center, 10.0 * radius, resolution, &mut evaluations);
    }
    if grid.is_empty() {
        return Err(Error::Oracle("no feasible point found in the search region".into()));
    }
    let feasible_grid_points = grid.len();
    grid.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.2.cmp(&b.2)));
    let (mut best_z, mut best_f, _) = grid[0].clone();
    let mut method = OracleMethod::Grid;
    // Distinct starts: skip grid points adjacent to an already chosen one.
    let spacing = 2.0 * radius / (resolution - 1) as f64;
    let mut starts: Vec<DVector<f64>> = Vec::new();
    for (z, _, _) in &grid {
        if starts.iter().all(|s| (s - z).amax() > 1.5 * spacing) {
            starts.push(z.clone());
        }
        if starts.len() == REFINE_STARTS {
            break;
        }
    }
    for start in starts {
        let z = refine(&red, start, &mut evaluations);
        let tol = 1e-12 * red.scale(&z);
        if red.violation(&z) <= tol {
            let f = red.quad(0, &z);
            evaluations += 1;
            if f < best_f {
                best_f = f;
                best_z = z;
                method = OracleMethod::Multistart;
            }
        }
    }
    let c = red.point(&best_z);
    let max_violation = red.violation(&best_z);
    Ok(OracleReport {
        c,
        objective: best_f,
        method,
        evaluations,
        feasible_grid_points,
        max_violation,
        agreement_gap: None,
    })
}

fn scan(
    red: &Reduced,
    center: &DVector<f64>,
    radius: f64,
    resolution: usize,
    evaluations: &mut usize,
) -> Vec<(DVector<f64>, f64, usize)> {
    let d = red.dim();
    let total = resolution.pow(d as u32);
    *evaluations += total;
    let step = 2.0 * radius / (resolution - 1) as f64;
    (0..total)
        .into_par_iter()
        .filter_map(|index| {
            let mut rem = index;
            let z = DVector::from_fn(d, |_, _| {
                let i = rem % resolution;
                rem /= resolution;
                -radius + step * i as f64
            });
            if z.norm() > radius * (1.0 + 1e-12) {
                return None;
            }
            let z = center + z;
            if red.slacks(&z).iter().any(|&s| s < 0.0) {
                return None;
            }
            let f = red.quad(0, &z);
            Some((z, f, index))
        })
        .collect()
}

/// Penalty Newton rounds, then feasibility restoration, then active-set SQP.
fn refine(red: &Reduced, start: DVector<f64>, evaluations: &mut usize) -> DVector<f64> {
    let f_scale = red.quad(0, &start).abs().max(1e-300);
    let g_scale = red.scale(&start);
    let mut rho = f_scale / (g_scale * g_scale);
    let mut z = start;
    for _ in 0..PENALTY_ROUNDS {
        z = penalty_newton(red, z, rho, evaluations);
        rho *= PENALTY_GROWTH;
    }
    z = restore(red, z);
    active_set_sqp(red, z)
}

fn penalty_value(red: &Reduced, z: &DVector<f64>, rho: f64) -> f64 {
    red.quad(0, z) + rho * red.slacks(z).iter().map(|&s| s.min(0.0).powi(2)).sum::<f64>()
}

fn penalty_newton(red: &Reduced, mut z: DVector<f64>, rho: f64, evaluations: &mut usize) -> DVector<f64> {
    let d = red.dim();
    for _ in 0..50 {
        let mut grad = red.grad(0, &z);
        let mut hess = &red.hess[0] * 2.0;
        for (&(k, sign, _), &s) in red.bounds.iter().zip(red.slacks(&z).iter()) {
            if s < 0.0 {
                let gs = red.grad(k, &z) * sign;
                grad += &gs * (2.0 * rho * s);
                hess += (&gs * gs.transpose()) * (2.0 * rho) + &red.hess[k] * (4.0 * rho * s * sign);
            }
        }
        let dir = match hess.clone().cholesky() {
            Some(ch) => -ch.solve(&grad),
            None => -&grad,
        };
        let phi0 = penalty_value(red, &z, rho);
        let slope = grad.dot(&dir);
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-12 {
            let cand = &z + &dir * t;
            *evaluations += 1;
            if penalty_value(red, &cand, rho) <= phi0 + 1e-4 * t * slope {
                z = cand;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved || (&dir * t).norm() <= 1e-15 * (1.0 + z.norm()) || d == 0 {
            break;
        }
    }
    z
}

/// Minimum-norm Gauss–Newton steps onto the violated bounds.
fn restore(red: &Reduced, mut z: DVector<f64>) -> DVector<f64> {
    for _ in 0..20 {
        let slacks = red.slacks(&z);
        let rows: Vec<(DVector<f64>, f64)> = red
            .bounds
            .iter()
            .zip(&slacks)
            .filter(|(_, &s)| s < 0.0)
            .map(|(&(k, sign, _), &s)| (red.grad(k, &z) * sign, s))
            .collect();
        if rows.is_empty() {
            break;
        }
        let jac = DMatrix::from_fn(rows.len(), red.dim(), |i, j| rows[i].0[j]);
        let res = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
        let Some(step) = (&jac * jac.transpose()).lu().solve(&res) else {
            break;
        };
        z -= jac.transpose() * step;
    }
    z
}

/// Newton's method on the KKT system of the nearly active bounds, dropping
/// bounds whose multiplier has the wrong sign.
fn active_set_sqp(red: &Reduced, z: DVector<f64>) -> DVector<f64> {
    let d = red.dim();
    let scale = red.scale(&z);
    let mut active: Vec<usize> = red
        .slacks(&z)
        .iter()
        .enumerate()
        .filter(|(_, &s)| s.abs() <= 1e-6 * scale)
        .map(|(i, _)| i)
        .collect();
    for _ in 0..=red.bounds.len() {
        let mut x = z.clone();
        let mut mu = DVector::zeros(active.len());
        let mut ok = true;
        for _ in 0..30 {
            let na = active.len();
            let mut kkt = DMatrix::zeros(d + na, d + na);
            let mut rhs = DVector::zeros(d + na);
            let mut hess = &red.hess[0] * 2.0;
            let mut grad = red.grad(0, &x);
            for (j, &b) in active.iter().enumerate() {
                let (k, sign, bound) = red.bounds[b];
                let gk = red.grad(k, &x) * sign;
                // Lagrangian f − Σ μ_b s_b.
                grad -= &gk * mu[j];
                hess -= &red.hess[k] * (2.0 * sign * mu[j]);
                for i in 0..d {
                    kkt[(i, d + j)] = -gk[i];
                    kkt[(d + j, i)] = gk[i];
                }
                rhs[d + j] = -(sign * (red.quad(k, &x) - bound));
            }
            kkt.view_mut((0, 0), (d, d)).copy_from(&hess);
            rhs.rows_mut(0, d).copy_from(&(-&grad));
            let Some(step) = kkt.lu().solve(&rhs) else {
                ok = false;
                break;
            };
            x += step.rows(0, d);
            mu += step.rows(d, na);
            if step.norm() <= 1e-15 * (1.0 + x.norm() + mu.norm()) {
                break;
            }
        }
        if !ok {
            return z;
        }
        match mu.iter().enumerate().filter(|(_, &m)| m < 0.0).min_by(|a, b| a.1.total_cmp(b.1)) {
            Some((j, _)) => {
                active.remove(j);
            }
            None => {
                if red.violation(&x) <= 1e-12 * red.scale(&x) {
                    return x;
                }
                return z;
            }
        }
    }
    z
}

/// One named identity check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct IdentityReport {
    pub checks: Vec<IdentityCheck>,
}

impl IdentityReport {
    fn push(&mut self, name: impl Into<String>, residual: f64, tolerance: f64) {
        self.checks.push(IdentityCheck {
            name: name.into(),
            residual,
            tolerance,
            passed: residual <= tolerance,
        });
    }

    fn fail(&mut self, name: impl Into<String>) {
        self.push(name, f64::INFINITY, 0.0);
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&IdentityCheck> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

/// Checks the cross-module identities on a raw (possibly corrupted) matrix:
/// PIM sum and power identities, analytic PIM eigensystems and splits, and —
/// when the matrix is a valid system — the closed form against the QP and
/// the loss/efficiency relation.
pub fn verify_identities(entries: &CMatrix, frequency_hz: f64, r_l: Option<f64>) -> IdentityReport {
    const TOL: f64 = 1e-10;
    let mut report = IdentityReport::default();
    let n = entries.nrows();
    if n < 2 || entries.ncols() != n {
        report.fail("square matrix with at least two ports");
        return report;
    }
    let r_l = r_l.unwrap_or_else(|| {
        ImpedanceMatrix::new(entries.clone(), frequency_hz)
            .ok()
            .and_then(|z| solve_closed_form(&z, None).ok())
            .map_or(1.0, |cf| cf.r_l_opt)
    });
    let mut loaded = entries.clone();
    loaded[(n - 1, n - 1)] += Complex64::new(r_l, 0.0);
    let scale = loaded.norm();

    let pims: Vec<_> = (0..n).map(|p| pim_from_entries(&loaded, p, true)).collect();
    let mut sum = CMatrix::zeros(n, n);
    for t in &pims {
        sum += &t.matrix;
    }
    let re = loaded.map(|z| Complex64::new(z.re, 0.0));
    report.push("pim_sum_equals_resistance", (sum - re).norm() / scale, TOL);

    let worst_herm = pims.iter().map(|t| hermitian_defect(&t.matrix)).fold(0.0, f64::max);
    report.push("pim_hermitian", worst_herm / scale, TOL);

    let currents: Vec<CVector> = (0..8)
        .map(|k| {
            CVector::from_fn(n, |i, _| {
                let a = (k * 7 + i * 3 + 1) as f64;
                Complex64::new((a * 0.37).sin(), (a * 0.91).cos())
            })
        })
        .collect();
    let mut worst_power = 0.0f64;
    for i in &currents {
        let v = &loaded * i;
        let parts: f64 = pims.iter().map(|t| half_quadratic_form(&t.matrix, i)).sum();
        let total = half_quadratic_form(&loaded.map(|z| Complex64::new(z.re, 0.0)), i);
        let direct: f64 = (0..n).map(|p| 0.5 * (v[p] * i[p].conj()).re).sum();
        worst_power = worst_power
            .max((parts - total).abs() / (1.0 + total.abs()))
            .max((parts - direct).abs() / (1.0 + direct.abs()));
    }
    report.push("per_port_power_identity", worst_power, TOL);

    let mut eig_err = 0.0f64;
    let mut vec_err = 0.0f64;
    let mut quad_err = 0.0f64;
    let mut split_err = 0.0f64;
    for t in &pims {
        let norm = t.matrix.norm();
        let eig = t.eigensystem();
        let (values, _) = herm_eigen(&t.matrix);
        eig_err = eig_err
            .max((values[n - 1] - eig.lambda_plus).abs() / norm)
            .max((values[0] + eig.lambda_minus).abs() / norm);
        let resid = |v: &CVector, lambda: f64| (&t.matrix * v - v * Complex64::new(lambda, 0.0)).norm() / (norm * v.norm());
        vec_err = vec_err.max(resid(&eig.v_plus, eig.lambda_plus));
        let qf = |v: &CVector| (v.adjoint() * &t.matrix * v)[(0, 0)].re;
        quad_err = quad_err.max((qf(&eig.v_plus) - eig.lambda_plus * eig.v_plus.norm_squared()).abs() / norm);
        if let Some(v) = &eig.v_minus {
            vec_err = vec_err.max(resid(v, -eig.lambda_minus));
            quad_err = quad_err.max((qf(v) + eig.lambda_minus * v.norm_squared()).abs() / norm);
        }
        let (plus, minus) = pim_split(t);
        split_err = split_err.max((&plus - &minus - &t.matrix).norm() / norm);
    }
    report.push("pim_eigenvalues_analytic_vs_numeric", eig_err, TOL);
    report.push("pim_eigenvectors_residual", vec_err, TOL);
    report.push("pim_eigen_quadratic_forms", quad_err, TOL);
    report.push("pim_split_reassembly", split_err, 1e-12);

    let z = match ImpedanceMatrix::new(entries.clone(), frequency_hz) {
        Ok(z) => z,
        Err(e) => {
            report.fail(format!("valid impedance matrix ({e})"));
            return report;
        }
    };
    let (cf, qp) = match (solve_closed_form(&z, Some(r_l)), solve_min_loss_qp(&z, r_l)) {
        (Ok(cf), Ok(qp)) => (cf, qp),
        _ => {
            report.fail("closed form and QP solvable");
            return report;
        }
    };
    report.push("loss_efficiency_relation", (1.0 / (qp.p_loss + 1.0) - qp.eta).abs(), 1e-12);
    report.push("closed_form_vs_qp_efficiency", (cf.eta_res - qp.eta).abs(), TOL);
    let c_t = cf.real_transmit_currents();
    report.push("closed_form_vs_qp_currents", (&c_t - &qp.c_t).norm() / c_t.norm(), 1e-9);
    if let (Ok(z_o), Ok(u)) = (output_impedance(&z), mutual_q(&z)) {
        report.push(
            "resonant_efficiency_at_optimal_load",
            (resonant_pte(z_o, u, cf.r_l_opt) - max_pte(u)).abs(),
            1e-12,
        );
    }
    let i = cf.currents();
    let mut with_x = loaded.clone();
    with_x[(n - 1, n - 1)] += Complex64::new(0.0, cf.x_r);
    let v = &with_x * &i;
    report.push("receiver_kvl", v[n - 1].norm() / (with_x.norm() * i.norm()), TOL);
    if n == 2 {
        if let Ok(p) = partition(&z) {
            let r_t = p.z_t[(0, 0)].re;
            let z_o = output_impedance(&z).map(|z| z.re).unwrap_or(f64::NAN);
            let u_siso = (p.z_tr[0].norm_sqr() / (r_t * z_o)).sqrt();
            report.push("siso_mutual_q", (u_siso - cf.u).abs() / cf.u.max(1e-300), 1e-12);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn three_port() -> CMatrix {
        CMatrix::from_row_slice(
            3,
            3,
            &[
                c(1.0, 40.0), c(0.3, 5.0), c(0.2, -3.0),
                c(0.3, 5.0), c(1.2, 38.0), c(-0.1, 6.0),
                c(0.2, -3.0), c(-0.1, 6.0), c(0.9, 35.0),
            ],
        )
    }

    #[test]
    fn identities_hold_on_valid_system() {
        let r = verify_identities(&three_port(), 1e7, None);
        assert!(r.all_passed(), "{:?}", r.failures());
    }

    #[test]
    fn asymmetry_breaks_the_pim_sum() {
        let mut z = three_port();
        z[(0, 1)] += c(0.0, 1e-3);
        let r = verify_identities(&z, 1e7, Some(1.0));
        let names: Vec<_> = r.failures().iter().map(|c| c.name.clone()).collect();
        assert!(names.contains(&"pim_sum_equals_resistance".to_string()), "{names:?}");
    }

    #[test]
    fn unconstrained_oracle_matches_qp() {
        let z = ImpedanceMatrix::new(three_port(), 1e7).unwrap();
        let cf = solve_closed_form(&z, None).unwrap();
        let p = QcqpProblem::build(&z, cf.r_l, ConstraintMode::None).unwrap();
        let rep = brute_force_qcqp(&p, 21).unwrap();
        assert!((rep.objective - cf.p_loss).abs() < 1e-9 * cf.p_loss, "{} vs {}", rep.objective, cf.p_loss);
    }

    #[test]
    fn zero_caps_are_infeasible() {
        let z = ImpedanceMatrix::new(three_port(), 1e7).unwrap();
        let p = QcqpProblem::build(&z, 1.0, ConstraintMode::Caps(vec![0.0, 0.0])).unwrap();
        assert!(matches!(brute_force_qcqp(&p, 11), Err(Error::Oracle(_))));
    }

    #[test]
    fn rejects_large_systems() {
        let mut z = CMatrix::identity(4, 4);
        z[(0, 3)] = c(0.0, 0.1);
        z[(3, 0)] = c(0.0, 0.1);
        let z = ImpedanceMatrix::new(z, 1e7).unwrap();
        let p = QcqpProblem::build(&z, 1.0, ConstraintMode::None).unwrap();
        assert!(brute_force_qcqp(&p, 5).is_err());
    }
}
