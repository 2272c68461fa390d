//! Infeasible-start primal-dual path following with Nesterov–Todd scaling
//! and Mehrotra's predictor-corrector. Inequality rows carry a nonnegative
//! primal slack `w` whose dual `s` must equal the row multiplier.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{IterationLog, SdpOptions, StandardForm, Status};
use crate::linalg::{inner, sym_eigen, symmetrize};

/// Certificate threshold for infeasibility and unboundedness (scaled data).
const CERTIFICATE_TOL: f64 = 1e-8;
/// Relative tolerance for declaring an equality row dependent.
const DEPENDENCE_TOL: f64 = 1e-10;
const STALL_LIMIT: usize = 5;

#[derive(Debug, Clone)]
pub(crate) struct RawSolution {
    pub status: Status,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub y: DVector<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub relative_gap: f64,
    pub iterations: usize,
    pub log: Vec<IterationLog>,
    pub message: Option<String>,
}

struct Scaled {
    c: DMatrix<f64>,
    rows: Vec<DMatrix<f64>>,
    b: DVector<f64>,
    /// Position of each kept row's slack in `w`, if it is an inequality.
    slack: Vec<Option<usize>>,
    /// Original index of each kept row.
    origin: Vec<usize>,
    /// Multiply scaled duals by `gamma / alpha[origin]` to recover originals.
    gamma: f64,
    alpha: Vec<f64>,
    n_slacks: usize,
}

#[derive(Clone)]
struct Iterate {
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    y: DVector<f64>,
    w: DVector<f64>,
    s: DVector<f64>,
}

struct Residuals {
    r_p: DVector<f64>,
    r_d: DMatrix<f64>,
    r_dw: DVector<f64>,
    pobj: f64,
    dobj: f64,
    pinf: f64,
    dinf: f64,
    gap: f64,
    mu: f64,
}

impl Residuals {
    fn merit(&self) -> f64 {
        self.pinf.max(self.dinf).max(self.gap)
    }
}

struct Direction {
    dx: DMatrix<f64>,
    dz: DMatrix<f64>,
    dy: DVector<f64>,
    dw: DVector<f64>,
    ds: DVector<f64>,
}

fn failure(sf: &StandardForm, status: Status, message: String) -> RawSolution {
    let n = sf.c.nrows();
    RawSolution {
        status,
        x: DMatrix::zeros(n, n),
        z: DMatrix::zeros(n, n),
        y: DVector::zeros(sf.rows.len()),
        primal_objective: f64::NAN,
        dual_objective: f64::NAN,
        primal_infeasibility: f64::INFINITY,
        dual_infeasibility: f64::INFINITY,
        relative_gap: f64::INFINITY,
        iterations: 0,
        log: Vec::new(),
        message: Some(message),
    }
}

/// Row equilibration and removal of dependent equality rows.
fn prepare(sf: &StandardForm, options: &SdpOptions) -> Result<Scaled, String> {
    let m = sf.rows.len();
    let c_norm = sf.c.norm();
    let gamma = if options.equilibrate && c_norm > 0.0 { c_norm } else { 1.0 };
    let mut alpha = vec![1.0; m];
    let is_ineq = |i: usize| sf.ineq.contains(&i);
    let mut kept: Vec<usize> = Vec::new();
    for i in 0..m {
        let norm = sf.rows[i].norm();
        if norm == 0.0 {
            let ok = if is_ineq(i) { sf.b[i] <= 0.0 } else { sf.b[i] == 0.0 };
            if !ok {
                return Err(format!("row {i} has a zero matrix and an unattainable right-hand side"));
            }
            continue;
        }
        if options.equilibrate {
            alpha[i] = norm;
        }
        kept.push(i);
    }
    let mut rows_kept: Vec<usize> = Vec::new();
    if options.presolve {
        // Dependence test against previously kept equality rows, on the
        // vectorized (unit-norm) matrices.
        let mut basis: Vec<DVector<f64>> = Vec::new();
        let mut basis_rows: Vec<usize> = Vec::new();
        for &i in &kept {
            if is_ineq(i) {
                rows_kept.push(i);
                continue;
            }
            let v = DVector::from_column_slice((&sf.rows[i] / sf.rows[i].norm()).as_slice());
            if !basis.is_empty() {
                let k = DMatrix::from_columns(&basis);
                let svd = k.clone().svd(true, true);
                let coef = svd
                    .solve(&v, 1e-14)
                    .map_err(|e| format!("presolve least squares failed: {e}"))?;
                let resid = (&k * &coef - &v).norm();
                if resid <= DEPENDENCE_TOL {
                    let target = sf.b[i] / sf.rows[i].norm();
                    let implied: f64 = basis_rows
                        .iter()
                        .zip(coef.iter())
                        .map(|(&j, &c)| c * sf.b[j] / sf.rows[j].norm())
                        .sum();
                    let scale = 1.0 + target.abs() + implied.abs();
                    if (target - implied).abs() > 1e-9 * scale {
                        return Err(format!("equality row {i} contradicts the rows it depends on"));
                    }
                    log::debug!("presolve: dropping dependent equality row {i}");
                    continue;
                }
            }
            basis.push(v);
            basis_rows.push(i);
            rows_kept.push(i);
        }
    } else {
        rows_kept = kept;
    }
    let mut n_slacks = 0;
    let slack = rows_kept
        .iter()
        .map(|&i| {
            is_ineq(i).then(|| {
                n_slacks += 1;
                n_slacks - 1
            })
        })
        .collect();
    Ok(Scaled {
        c: &sf.c / gamma,
        rows: rows_kept.iter().map(|&i| &sf.rows[i] / alpha[i]).collect(),
        b: DVector::from_iterator(rows_kept.len(), rows_kept.iter().map(|&i| sf.b[i] / alpha[i])),
        slack,
        origin: rows_kept,
        gamma,
        alpha,
        n_slacks,
    })
}

fn apply_op(rows: &[DMatrix<f64>], x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(rows.len(), rows.iter().map(|a| inner(a, x)))
}

fn adjoint(rows: &[DMatrix<f64>], y: &DVector<f64>, n: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, n);
    for (a, &yi) in rows.iter().zip(y.iter()) {
        if yi != 0.0 {
            out += a * yi;
        }
    }
    out
}

/// Largest `α` with `M + αΔ ⪰ 0`, given a Cholesky factor of `M`.
fn psd_step(chol: &Cholesky<f64, Dyn>, delta: &DMatrix<f64>) -> f64 {
    let l = chol.l();
    let Some(left) = l.solve_lower_triangular(delta) else {
        return 0.0;
    };
    let Some(both) = l.solve_lower_triangular(&left.transpose()) else {
        return 0.0;
    };
    let (values, _) = sym_eigen(&symmetrize(&both));
    let min = values[0];
    if min >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / min
    }
}

fn ratio_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&x, &d)| -x / d)
        .fold(f64::INFINITY, f64::min)
}

impl Scaled {
    fn n(&self) -> usize {
        self.c.nrows()
    }

    fn slack_sum(&self, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.rows.len(),
            self.slack.iter().map(|s| s.map_or(0.0, |k| w[k])),
        )
    }

    fn slack_gather(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_slacks);
        for (i, s) in self.slack.iter().enumerate() {
            if let Some(k) = s {
                out[*k] = y[i];
            }
        }
        out
    }

    fn residuals(&self, it: &Iterate) -> Residuals {
        let n = self.n();
        let r_p = &self.b - apply_op(&self.rows, &it.x) + self.slack_sum(&it.w);
        let r_d = &self.c - adjoint(&self.rows, &it.y, n) - &it.z;
        let r_dw = &it.s - self.slack_gather(&it.y);
        let pobj = inner(&self.c, &it.x);
        let dobj = self.b.dot(&it.y);
        let pinf = r_p.norm() / (1.0 + self.b.norm());
        let dinf = (r_d.norm_squared() + r_dw.norm_squared()).sqrt() / (1.0 + self.c.norm());
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        let mu = (inner(&it.x, &it.z) + it.w.dot(&it.s)) / (n + self.n_slacks) as f64;
        Residuals {
            r_p,
            r_d,
            r_dw,
            pobj,
            dobj,
            pinf,
            dinf,
            gap,
            mu,
        }
    }
}

pub(crate) fn solve_standard(sf: &StandardForm, options: &SdpOptions) -> RawSolution {
    let prob = match prepare(sf, options) {
        Ok(p) => p,
        Err(msg) => return failure(sf, Status::Infeasible, msg),
    };
    let n = prob.n();
    let m = prob.rows.len();
    let p = prob.n_slacks;
    let nf = n as f64;

    let max_row_ratio = prob
        .rows
        .iter()
        .zip(prob.b.iter())
        .map(|(a, &b)| (1.0 + b.abs()) / (1.0 + a.norm()))
        .fold(0.0, f64::max);
    let xi = 10f64.max(nf.sqrt()).max(nf * max_row_ratio);
    let zeta = 10f64
        .max(nf.sqrt())
        .max(prob.c.norm())
        .max(prob.rows.iter().map(|a| a.norm()).fold(0.0, f64::max));
    let mut it = Iterate {
        x: DMatrix::identity(n, n) * xi,
        z: DMatrix::identity(n, n) * zeta,
        y: DVector::zeros(m),
        w: DVector::from_element(p, xi),
        s: DVector::from_element(p, zeta),
    };

    let mut log = Vec::new();
    let mut best = (f64::INFINITY, it.clone());
    let mut stalls = 0;
    let mut status = Status::MaxIterations;
    let mut message = None;
    let mut iterations = 0;

    for iter in 1..=options.max_iterations + 1 {
        let res = prob.residuals(&it);
        if res.merit() < best.0 {
            best = (res.merit(), it.clone());
        }
        if res.pinf <= options.tolerance && res.dinf <= options.tolerance && res.gap <= options.tolerance {
            status = Status::Optimal;
            break;
        }
        if let Some(kind) = certificate(&prob, &it, &res) {
            status = kind;
            best = (res.merit(), it.clone());
            message = Some(match kind {
                Status::Infeasible => "primal infeasibility certificate found".to_string(),
                _ => "primal recession direction found (dual infeasible)".to_string(),
            });
            break;
        }
        if iter > options.max_iterations {
            message = Some(format!("iteration limit {} reached", options.max_iterations));
            break;
        }
        iterations = iter;

        let step = match newton_step(&prob, &it, &res, options) {
            Ok(s) => s,
            Err(msg) => {
                status = Status::NumericalFailure;
                message = Some(msg);
                break;
            }
        };
        log.push(IterationLog {
            iteration: iter,
            primal_objective: prob.gamma * res.pobj,
            dual_objective: prob.gamma * res.dobj,
            primal_infeasibility: res.pinf,
            dual_infeasibility: res.dinf,
            relative_gap: res.gap,
            mu: res.mu,
            sigma: step.sigma,
            primal_step: step.alpha_p,
            dual_step: step.alpha_d,
        });
        log::trace!("{}", log.last().expect("just pushed"));

        let d = step.direction;
        it.x = symmetrize(&(&it.x + &d.dx * step.alpha_p));
        it.w += &d.dw * step.alpha_p;
        it.y += &d.dy * step.alpha_d;
        it.z = symmetrize(&(&it.z + &d.dz * step.alpha_d));
        it.s += &d.ds * step.alpha_d;

        if step.alpha_p.max(step.alpha_d) < 1e-10 {
            stalls += 1;
            if stalls >= STALL_LIMIT {
                status = Status::NumericalFailure;
                message = Some("step lengths collapsed".into());
                break;
            }
        } else {
            stalls = 0;
        }
    }

    let final_it = match status {
        Status::Optimal | Status::Infeasible | Status::Unbounded => it,
        _ => best.1,
    };
    let res = prob.residuals(&final_it);
    if status != Status::Optimal
        && matches!(status, Status::MaxIterations | Status::NumericalFailure)
        && res.pinf <= options.tolerance
        && res.dinf <= options.tolerance
        && res.gap <= options.tolerance
    {
        status = Status::Optimal;
        message = None;
    }
    unscale(sf, &prob, final_it, &res, status, iterations, log, message)
}

#[allow(clippy::too_many_arguments)]
fn unscale(
    sf: &StandardForm,
    prob: &Scaled,
    it: Iterate,
    res: &Residuals,
    status: Status,
    iterations: usize,
    log: Vec<IterationLog>,
    message: Option<String>,
) -> RawSolution {
    let mut y = DVector::zeros(sf.rows.len());
    for (k, &i) in prob.origin.iter().enumerate() {
        y[i] = prob.gamma * it.y[k] / prob.alpha[i];
    }
    RawSolution {
        status,
        primal_objective: inner(&sf.c, &it.x),
        dual_objective: sf.b.dot(&y),
        x: it.x,
        z: it.z * prob.gamma,
        y,
        primal_infeasibility: res.pinf,
        dual_infeasibility: res.dinf,
        relative_gap: res.gap,
        iterations,
        log,
        message,
    }
}

/// Farkas-type certificates from the current iterate.
fn certificate(prob: &Scaled, it: &Iterate, res: &Residuals) -> Option<Status> {
    let n = prob.n();
    if res.dobj > 0.0 {
        // y with bᵀy > 0, −𝒜*y ⪰ 0 and nonnegative inequality multipliers.
        let aty = adjoint(&prob.rows, &it.y, n);
        let (values, _) = sym_eigen(&symmetrize(&aty));
        let mut violation = values[n - 1].max(0.0);
        for k in prob.slack.iter().enumerate().filter_map(|(i, s)| s.map(|_| i)) {
            violation = violation.max(-it.y[k]);
        }
        if violation <= CERTIFICATE_TOL * res.dobj {
            return Some(Status::Infeasible);
        }
    }
    if res.pobj < 0.0 {
        // X ⪰ 0, w ≥ 0 with 𝒜(X) − w = 0 and ⟨C, X⟩ < 0.
        let ax = apply_op(&prob.rows, &it.x) - prob.slack_sum(&it.w);
        if -res.pobj > 1e-6 && ax.norm() <= CERTIFICATE_TOL * -res.pobj {
            return Some(Status::Unbounded);
        }
    }
    None
}

struct Step {
    direction: Direction,
    alpha_p: f64,
    alpha_d: f64,
    sigma: f64,
}

fn newton_step(prob: &Scaled, it: &Iterate, res: &Residuals, options: &SdpOptions) -> Result<Step, String> {
    let n = prob.n();
    let m = prob.rows.len();
    let p = prob.n_slacks;

    let chol_x = Cholesky::new(it.x.clone()).ok_or("primal iterate lost definiteness")?;
    let chol_z = Cholesky::new(it.z.clone()).ok_or("dual iterate lost definiteness")?;
    let lx = chol_x.l();
    let lz = chol_z.l();
    let svd = (lz.transpose() * &lx).svd(true, true);
    let v = svd.v_t.ok_or("SVD failed")?.transpose();
    let d = svd.singular_values;
    if d.iter().any(|&x| !(x > 0.0)) {
        return Err("degenerate scaling point".into());
    }
    let d_isqrt = DMatrix::from_diagonal(&d.map(|x| 1.0 / x.sqrt()));
    let d_sqrt = DMatrix::from_diagonal(&d.map(f64::sqrt));
    let g = &lx * &v * &d_isqrt;
    let w_mat = symmetrize(&(&g * g.transpose()));
    let lx_inv = lx
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or("singular primal factor")?;
    let g_inv = &d_sqrt * v.transpose() * lx_inv;

    let waw: Vec<DMatrix<f64>> = prob.rows.iter().map(|a| &w_mat * a * &w_mat).collect();
    let mut schur = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let val = inner(&prob.rows[i], &waw[j]);
            schur[(i, j)] = val;
            schur[(j, i)] = val;
        }
        if let Some(k) = prob.slack[i] {
            schur[(i, i)] += it.w[k] / it.s[k];
        }
    }
    let chol = Cholesky::new(schur.clone());
    let lu = if chol.is_none() { Some(schur.clone().lu()) } else { None };
    let solve_schur = |rhs: &DVector<f64>| -> Result<DVector<f64>, String> {
        if m == 0 {
            return Ok(DVector::zeros(0));
        }
        match (&chol, &lu) {
            (Some(c), _) => Ok(c.solve(rhs)),
            (None, Some(lu)) => lu.solve(rhs).ok_or_else(|| "singular Schur complement".to_string()),
            _ => unreachable!(),
        }
    };

    let w_rd_w = &w_mat * &res.r_d * &w_mat;
    let direction = |r_c: &DMatrix<f64>, r_lp: &DVector<f64>| -> Result<Direction, String> {
        let mut rhs = &res.r_p - apply_op(&prob.rows, &(r_c - &w_rd_w));
        for (i, s) in prob.slack.iter().enumerate() {
            if let Some(k) = *s {
                rhs[i] += (r_lp[k] + it.w[k] * res.r_dw[k]) / it.s[k];
            }
        }
        let dy = solve_schur(&rhs)?;
        let dz = &res.r_d - adjoint(&prob.rows, &dy, n);
        let dx = symmetrize(&(r_c - &w_mat * &dz * &w_mat));
        let dy_slack = prob.slack_gather(&dy);
        let ds = &dy_slack - &res.r_dw;
        let dw = DVector::from_fn(p, |k, _| (r_lp[k] - it.w[k] * ds[k]) / it.s[k]);
        if dx.iter().chain(dy.iter()).any(|x| !x.is_finite()) {
            return Err("non-finite search direction".into());
        }
        Ok(Direction { dx, dz, dy, dw, ds })
    };

    let max_steps = |dir: &Direction| {
        let ap = psd_step(&chol_x, &dir.dx).min(ratio_step(&it.w, &dir.dw));
        let ad = psd_step(&chol_z, &dir.dz).min(ratio_step(&it.s, &dir.ds));
        (ap, ad)
    };

    // Predictor.
    let wsv = it.w.component_mul(&it.s);
    let aff = direction(&(-&it.x), &(-&wsv))?;
    let (ap, ad) = max_steps(&aff);
    let (ap, ad) = (ap.min(1.0), ad.min(1.0));
    let x_a = &it.x + &aff.dx * ap;
    let z_a = &it.z + &aff.dz * ad;
    let w_a = &it.w + &aff.dw * ap;
    let s_a = &it.s + &aff.ds * ad;
    let mu_aff = (inner(&x_a, &z_a) + w_a.dot(&s_a)) / (n + p) as f64;
    let sigma = if res.mu > 0.0 { (mu_aff / res.mu).clamp(0.0, 1.0).powi(3) } else { 0.0 };

    // Corrector in the scaled space, where both iterates equal diag(d).
    let dxs = &g_inv * &aff.dx * g_inv.transpose();
    let dzs = g.transpose() * &aff.dz * &g;
    let jordan = (&dxs * &dzs + &dzs * &dxs) * 0.5;
    let target = sigma * res.mu;
    let t = DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { target - d[i] * d[i] } else { 0.0 };
        2.0 * (diag - jordan[(i, j)]) / (d[i] + d[j])
    });
    let r_c = symmetrize(&(&g * t * g.transpose()));
    let r_lp = DVector::from_fn(p, |k, _| target - wsv[k] - aff.dw[k] * aff.ds[k]);
    let dir = direction(&r_c, &r_lp)?;
    let (ap, ad) = max_steps(&dir);
    let frac = options.step_fraction;
    Ok(Step {
        alpha_p: (frac * ap).min(1.0),
        alpha_d: (frac * ad).min(1.0),
        direction: dir,
        sigma,
    })
}
