//! End-to-end optimization of one system: closed form first, the relaxation
//! only when the closed form violates a power constraint, and an outer
//! search over the load resistance.

use nalgebra::{DMatrix, DVector};

use crate::circuit::ImpedanceMatrix;
use crate::closed_form::{solve_closed_form, ClosedFormSolution, ReactiveElement};
use crate::error::{Error, Result};
use crate::linalg::CVector;
use crate::qcqp::{to_real, ConstraintMode, QcqpProblem};
use crate::sdp::{KktReport, Status};
use crate::sdr::{
    extract_solution, polish_point, recover_operating_point, solve_relaxation, tightness_error, SdrDuals,
    SdrOptions,
};

/// Power below which a closed-form port counts as harvesting (W).
pub const SKIP_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub constraints: ConstraintMode,
    pub sdr: SdrOptions,
    /// Solve the relaxation even when the closed form is already feasible.
    pub force_relaxation: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            constraints: ConstraintMode::NonNegative,
            sdr: SdrOptions::default(),
            force_relaxation: false,
        }
    }
}

/// Relaxation outcome and the recovered operating point.
#[derive(Debug, Clone)]
pub struct SdrResult {
    pub c_matrix: DMatrix<f64>,
    pub c: DVector<f64>,
    /// `tr(Q₀C*)`, a lower bound on the constrained minimum loss.
    pub p_relax: f64,
    /// Loss `cᵀQ₀c` at the recovered point.
    pub p_loss: f64,
    pub epsilon: f64,
    pub rank_ratio: f64,
    pub tight: bool,
    /// The closed form already satisfied every constraint.
    pub skipped: bool,
    pub eta: f64,
    pub currents: CVector,
    pub x_r: f64,
    pub transmit_powers: Vec<f64>,
    pub status: Option<Status>,
    pub iterations: usize,
    pub kkt: Option<KktReport>,
    pub duals: Option<SdrDuals>,
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub r_l: f64,
    pub constraints: ConstraintMode,
    pub closed_form: ClosedFormSolution,
    pub sdr: SdrResult,
    /// `10·log₁₀(η_SDR/η_CF)`
    pub delta_eta_db: f64,
    /// Relative change of the receiver capacitance (equivalently `x_CF/x_SDR − 1`).
    pub delta_cr_rel: f64,
    pub receiver_element: ReactiveElement,
}

/// Whether a closed-form point satisfies the power constraints.
pub fn closed_form_feasible(cf: &ClosedFormSolution, mode: &ConstraintMode) -> bool {
    let powers = cf.transmit_powers();
    match mode {
        ConstraintMode::None => true,
        ConstraintMode::NonNegative => powers.iter().all(|&p| p >= -SKIP_TOLERANCE),
        ConstraintMode::Caps(caps) => powers
            .iter()
            .zip(caps)
            .all(|(&p, &cap)| p >= -SKIP_TOLERANCE && p <= cap + SKIP_TOLERANCE),
    }
}

fn from_closed_form(cf: &ClosedFormSolution) -> Result<SdrResult> {
    let c = to_real(&cf.currents())?;
    let c_matrix = &c * c.transpose();
    Ok(SdrResult {
        c_matrix,
        p_relax: cf.p_loss,
        p_loss: cf.p_loss,
        epsilon: 0.0,
        rank_ratio: 0.0,
        tight: true,
        skipped: true,
        eta: cf.eta_res,
        currents: cf.currents(),
        x_r: cf.x_r,
        transmit_powers: cf.transmit_powers().to_vec(),
        status: None,
        iterations: 0,
        kkt: None,
        duals: None,
        c,
    })
}

pub fn solve_sdr(z: &ImpedanceMatrix, r_l: f64, mode: &ConstraintMode, options: &SdrOptions) -> Result<SdrResult> {
    let problem = QcqpProblem::build(z, r_l, mode.clone())?;
    let relax = solve_relaxation(&problem, options)?;
    let extraction = extract_solution(&relax.c_matrix, r_l, options.rank_ratio_threshold)?;
    let candidate = relax.c_vec.clone().unwrap_or_else(|| extraction.c.clone());
    let epsilon = tightness_error(&relax.c_matrix, &candidate)?;
    let tight = epsilon <= options.tightness_threshold && extraction.rank_one;
    if !tight {
        log::warn!("relaxation not tight (ε = {epsilon:e}); reporting heuristic extraction");
    }
    let c = polish_point(&problem, &extraction.c, &relax.duals.lambda);
    let op = recover_operating_point(&c, z, r_l)?;
    let kkt = relax.kkt();
    Ok(SdrResult {
        c_matrix: relax.c_matrix.clone(),
        p_relax: relax.p_relax,
        p_loss: op.p_loss,
        epsilon,
        rank_ratio: extraction.rank_ratio,
        tight,
        skipped: false,
        eta: op.eta,
        transmit_powers: op.transmit_powers().to_vec(),
        currents: op.currents,
        x_r: op.x_r,
        status: Some(relax.status),
        iterations: relax.iterations,
        kkt: Some(kkt),
        duals: Some(relax.duals),
        c,
    })
}

pub fn full_pipeline(z: &ImpedanceMatrix, r_l: f64, options: &PipelineOptions) -> Result<PipelineResult> {
    let cf = solve_closed_form(z, Some(r_l))?;
    let skip = !options.force_relaxation && closed_form_feasible(&cf, &options.constraints);
    let sdr = if skip {
        from_closed_form(&cf)?
    } else {
        solve_sdr(z, r_l, &options.constraints, &options.sdr)?
    };
    let delta_eta_db = 10.0 * (sdr.eta / cf.eta_res).log10();
    let delta_cr_rel = if sdr.x_r != 0.0 { cf.x_r / sdr.x_r - 1.0 } else { f64::NAN };
    Ok(PipelineResult {
        r_l,
        constraints: options.constraints.clone(),
        receiver_element: ReactiveElement::for_reactance(sdr.x_r, z.omega()),
        closed_form: cf,
        sdr,
        delta_eta_db,
        delta_cr_rel,
    })
}

/// Result of the outer load search.
#[derive(Debug, Clone)]
pub struct LoadOptimum {
    pub r_l: f64,
    pub result: PipelineResult,
    pub evaluations: usize,
    /// The golden-section bracket failed and a grid scan was used.
    pub grid_fallback: bool,
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Maximizes the efficiency over `R_L ∈ [lo, hi]` with a full pipeline run per
/// evaluation; relative tolerance `rtol` on `R_L`.
pub fn optimize_load(
    z: &ImpedanceMatrix,
    bounds: (f64, f64),
    rtol: f64,
    options: &PipelineOptions,
) -> Result<LoadOptimum> {
    let (lo, hi) = bounds;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::InvalidArgument(format!("load bounds [{lo}, {hi}]")));
    }
    let mut evaluations = 0;
    let mut eval = |r: f64| -> Result<(f64, PipelineResult)> {
        evaluations += 1;
        let res = full_pipeline(z, r, options)?;
        Ok((res.sdr.eta, res))
    };

    // Golden-section search in log R_L.
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let mut x1 = b - GOLDEN * (b - a);
    let mut x2 = a + GOLDEN * (b - a);
    let (mut f1, mut r1) = eval(x1.exp())?;
    let (mut f2, mut r2) = eval(x2.exp())?;
    let (fa, _) = eval(lo)?;
    let (fb, _) = eval(hi)?;
    let mut bracket_ok = f1.max(f2) >= fa.max(fb);
    let log_tol = (1.0 + rtol).ln();
    while b - a > log_tol {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            r2 = r1;
            x1 = b - GOLDEN * (b - a);
            let (f, r) = eval(x1.exp())?;
            f1 = f;
            r1 = r;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            r1 = r2;
            x2 = a + GOLDEN * (b - a);
            let (f, r) = eval(x2.exp())?;
            f2 = f;
            r2 = r;
        }
    }
    let (best_f, best) = if f1 >= f2 { (f1, r1) } else { (f2, r2) };
    // A maximum that lands on a bound, or an interior value below an end
    // point, means the function was not unimodal on the bracket.
    if best_f < fa.max(fb) {
        bracket_ok = false;
    }
    if bracket_ok {
        return Ok(LoadOptimum {
            r_l: best.r_l,
            result: best,
            evaluations,
            grid_fallback: false,
        });
    }
    log::warn!("load search bracket is not unimodal; falling back to a grid scan");
    let steps = 200;
    let mut top: Option<(f64, PipelineResult)> = None;
    for i in 0..=steps {
        let r = (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / steps as f64).exp();
        let (f, res) = eval(r)?;
        if top.as_ref().is_none_or(|(g, _)| f > *g) {
            top = Some((f, res));
        }
    }
    let (_, result) = top.expect("grid is non-empty");
    Ok(LoadOptimum {
        r_l: result.r_l,
        result,
        evaluations,
        grid_fallback: true,
    })
}

/// Efficiency-optimal load bracket around the closed-form optimum.
pub fn default_load_bounds(cf: &ClosedFormSolution) -> (f64, f64) {
    (cf.r_l_opt / 10.0, cf.r_l_opt * 10.0)
}

