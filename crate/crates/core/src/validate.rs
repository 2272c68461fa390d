//! Acceptance suite: end-to-end checks of the closed forms, the relaxation
//! and the solver against independent computations on the geometry presets.

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::circuit::{build_loop_system, GeometrySpec, ImpedanceMatrix, Preset, DEFAULT_FREQUENCY_HZ};
use crate::closed_form::{max_pte, solve_closed_form, solve_min_loss_qp};
use crate::linalg::{herm_eigen, CMatrix, CVector};
use crate::oracle::{brute_force_qcqp, verify_identities, IdentityReport, DEFAULT_RESOLUTION};
use crate::pim::{pim_from_entries, pim_split};
use crate::pipeline::{default_load_bounds, full_pipeline, optimize_load, solve_sdr, PipelineOptions, PipelineResult};
use crate::qcqp::{ConstraintMode, QcqpProblem};
use crate::sdp::Status;
use crate::sdr::SdrOptions;

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionOutcome {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CriterionOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{verdict}] {}. {}: {}", self.id, self.title, self.detail)
    }
}

fn outcome(id: u8, title: &'static str, failures: &[String], detail: String) -> CriterionOutcome {
    let detail = if failures.is_empty() {
        detail
    } else {
        let shown: Vec<&str> = failures.iter().take(5).map(String::as_str).collect();
        format!("{detail}; {} failure(s): {}", failures.len(), shown.join("; "))
    };
    CriterionOutcome {
        id,
        title,
        passed: failures.is_empty(),
        detail,
    }
}

fn preset_system(preset: Preset, d: f64, theta_deg: f64) -> crate::Result<ImpedanceMatrix> {
    let g = GeometrySpec::preset(preset, DEFAULT_FREQUENCY_HZ, d, theta_deg.to_radians());
    build_loop_system(&g, DEFAULT_FREQUENCY_HZ)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Two-port systems with a purely reactive coupling reduce to the textbook
/// single-link formulas.
pub fn siso_collapse() -> CriterionOutcome {
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    let spot = max_pte(2.0);
    if (spot - 0.381966).abs() > 5e-7 {
        failures.push(format!("η_max(U=2) = {spot}"));
    }
    for d in [0.05, 0.1, 0.2, 0.3] {
        for theta in [0.0, 18.0, 45.0, 60.0, 80.0] {
            let mut g = GeometrySpec::preset(Preset::Siso, DEFAULT_FREQUENCY_HZ, d, f64::to_radians(theta));
            g.mutual_radiation = false;
            let z = match build_loop_system(&g, DEFAULT_FREQUENCY_HZ).and_then(|z| Ok((solve_closed_form(&z, None)?, z))) {
                Ok(v) => v,
                Err(e) => {
                    failures.push(format!("d={d} θ={theta}: {e}"));
                    continue;
                }
            };
            let (cf, z) = z;
            let e = z.entries();
            let (r_t, r_r) = (e[(0, 0)].re, e[(1, 1)].re);
            let omega_m = e[(0, 1)].im;
            let u = omega_m.abs() / (r_t * r_r).sqrt();
            let eta = u * u / (1.0 + (1.0 + u * u).sqrt()).powi(2);
            let r_l = r_r * (1.0 + u * u).sqrt();
            let errs = [rel(cf.u, u), rel(cf.eta_max, eta), rel(cf.r_l_opt, r_l)];
            let m = errs.iter().copied().fold(0.0, f64::max);
            worst = worst.max(m);
            if m > 1e-12 {
                failures.push(format!("d={d} θ={theta}: rel err {m:e}"));
            }
        }
    }
    outcome(
        1,
        "SISO collapse",
        &failures,
        format!("η_max(U=2) = {spot:.6}, worst rel err {worst:.2e} (tol 1e-12)"),
    )
}

/// Analytic QP, unconstrained relaxation and brute force agree.
pub fn convex_chain() -> CriterionOutcome {
    let cases: Vec<(Preset, f64, f64)> = Preset::ALL
        .iter()
        .flat_map(|&p| {
            [0.05, 0.1, 0.2]
                .into_iter()
                .flat_map(move |d| [0.0, 18.0, 60.0].into_iter().map(move |t| (p, d, t)))
        })
        .collect();
    let results: Vec<Result<(f64, Option<f64>), String>> = cases
        .par_iter()
        .map(|&(p, d, t)| {
            let tag = format!("{p} d={d} θ={t}");
            let z = preset_system(p, d, t).map_err(|e| format!("{tag}: {e}"))?;
            let cf = solve_closed_form(&z, None).map_err(|e| format!("{tag}: {e}"))?;
            let qp = solve_min_loss_qp(&z, cf.r_l_opt).map_err(|e| format!("{tag}: {e}"))?;
            let sdr = solve_sdr(&z, cf.r_l_opt, &ConstraintMode::None, &SdrOptions::default())
                .map_err(|e| format!("{tag}: {e}"))?;
            let mut worst = rel(sdr.p_relax, qp.p_loss).max(rel(sdr.p_loss, qp.p_loss));
            let mut oracle = None;
            if z.n_ports() <= 3 {
                let problem = QcqpProblem::build(&z, cf.r_l_opt, ConstraintMode::None).map_err(|e| format!("{tag}: {e}"))?;
                let o = brute_force_qcqp(&problem, DEFAULT_RESOLUTION).map_err(|e| format!("{tag}: {e}"))?;
                let e = rel(o.objective, qp.p_loss);
                oracle = Some(e);
                worst = worst.max(e);
            }
            if worst > 1e-6 {
                return Err(format!("{tag}: rel diff {worst:e}"));
            }
            Ok((worst, oracle))
        })
        .collect();
    let failures: Vec<String> = results.iter().filter_map(|r| r.as_ref().err().cloned()).collect();
    let ok: Vec<&(f64, Option<f64>)> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    let worst = ok.iter().map(|r| r.0).fold(0.0, f64::max);
    let with_oracle = ok.iter().filter(|r| r.1.is_some()).count();
    outcome(
        2,
        "convex-chain equivalence",
        &failures,
        format!(
            "{} cases ({with_oracle} with brute force), worst rel diff {worst:.2e} (tol 1e-6)",
            cases.len()
        ),
    )
}

/// One point of a full angular sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub preset: Preset,
    pub theta_deg: f64,
    pub result: Result<PipelineResult, String>,
}

/// Nonnegative-power sweeps of every preset at `d = λ/10`, θ from −90° to 90°
/// in 2° steps, at the closed-form optimal load.
pub fn reference_sweeps() -> Vec<SweepPoint> {
    let points: Vec<(Preset, f64)> = Preset::ALL
        .iter()
        .flat_map(|&p| (0..=90).map(move |i| (p, -90.0 + 2.0 * i as f64)))
        .collect();
    let options = PipelineOptions::default();
    points
        .par_iter()
        .map(|&(preset, theta_deg)| {
            let result = preset_system(preset, 0.1, theta_deg)
                .and_then(|z| {
                    let cf = solve_closed_form(&z, None)?;
                    full_pipeline(&z, cf.r_l_opt, &options)
                })
                .map_err(|e| e.to_string());
            SweepPoint {
                preset,
                theta_deg,
                result,
            }
        })
        .collect()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

fn solved(sweeps: &[SweepPoint]) -> impl Iterator<Item = (&SweepPoint, &PipelineResult)> {
    sweeps.iter().filter_map(|p| p.result.as_ref().ok().map(|r| (p, r)))
}

pub fn tightness(sweeps: &[SweepPoint]) -> CriterionOutcome {
    let mut failures: Vec<String> = sweeps
        .iter()
        .filter_map(|p| p.result.as_ref().err().map(|e| format!("{} θ={}: {e}", p.preset, p.theta_deg)))
        .collect();
    let mut eps = Vec::new();
    for (p, r) in solved(sweeps).filter(|(_, r)| !r.sdr.skipped) {
        eps.push(r.sdr.epsilon);
        if !(r.sdr.epsilon <= 1e-8) {
            failures.push(format!("{} θ={}: ε = {:e}", p.preset, p.theta_deg, r.sdr.epsilon));
        }
    }
    eps.sort_by(f64::total_cmp);
    let mut decades = [0usize; 5];
    for &e in &eps {
        let k = match e {
            e if e < 1e-14 => 0,
            e if e < 1e-12 => 1,
            e if e < 1e-10 => 2,
            e if e < 1e-8 => 3,
            _ => 4,
        };
        decades[k] += 1;
    }
    outcome(
        3,
        "tightness",
        &failures,
        format!(
            "{} relaxations over {} points; ε min {:.1e} median {:.1e} p90 {:.1e} max {:.1e}; \
             histogram <1e-14:{} <1e-12:{} <1e-10:{} <1e-8:{} ≥1e-8:{}",
            eps.len(),
            sweeps.len(),
            quantile(&eps, 0.0),
            quantile(&eps, 0.5),
            quantile(&eps, 0.9),
            quantile(&eps, 1.0),
            decades[0],
            decades[1],
            decades[2],
            decades[3],
            decades[4]
        ),
    )
}

pub fn nonnegativity(sweeps: &[SweepPoint]) -> CriterionOutcome {
    let mut failures = Vec::new();
    let mut min_sdr = f64::INFINITY;
    let mut summary = Vec::new();
    for preset in Preset::ALL {
        let mut negative_cf = 0;
        for (p, r) in solved(sweeps).filter(|(p, _)| p.preset == preset) {
            if r.closed_form.min_transmit_power() < 0.0 {
                negative_cf += 1;
            }
            if !r.sdr.skipped {
                let m = r.sdr.transmit_powers.iter().copied().fold(f64::INFINITY, f64::min);
                min_sdr = min_sdr.min(m);
                if m < -1e-9 {
                    failures.push(format!("{preset} θ={}: P_t = {m:e} W", p.theta_deg));
                }
            }
        }
        if preset.is_miso() && negative_cf == 0 {
            failures.push(format!("{preset}: no negative closed-form power on the sweep"));
        }
        summary.push(format!("{preset}:{negative_cf}"));
    }
    outcome(
        4,
        "nonnegativity",
        &failures,
        format!(
            "min relaxed-point power {min_sdr:.2e} W (tol −1e-9); closed-form points with a negative port: {}",
            summary.join(" ")
        ),
    )
}

pub fn degradation(sweeps: &[SweepPoint]) -> CriterionOutcome {
    let mut failures = Vec::new();
    let mut drops = Vec::new();
    for (p, r) in solved(sweeps).filter(|(_, r)| !r.sdr.skipped) {
        let drop = r.closed_form.eta_res - r.sdr.eta;
        drops.push(drop);
        if r.sdr.eta > r.closed_form.eta_res + 1e-12 {
            failures.push(format!("{} θ={}: η_SDR exceeds η_CF by {:e}", p.preset, p.theta_deg, -drop));
        }
        if drop > 0.05 {
            failures.push(format!("{} θ={}: drop {drop:.4}", p.preset, p.theta_deg));
        }
    }
    drops.sort_by(f64::total_cmp);
    let median = quantile(&drops, 0.5);
    if !(median < 0.01) {
        failures.push(format!("median drop {median:.4}"));
    }
    outcome(
        5,
        "small degradation",
        &failures,
        format!(
            "{} binding points; drop median {median:.2e} max {:.2e} (tol 0.05, median < 0.01)",
            drops.len(),
            quantile(&drops, 1.0)
        ),
    )
}

/// Closed-form PIM eigensystems against a numerical eigendecomposition.
pub fn pim_eigensystems() -> CriterionOutcome {
    let mut failures = Vec::new();
    let (mut worst_eig, mut worst_split) = (0.0f64, 0.0f64);
    let mut count = 0;
    for preset in Preset::ALL {
        for theta in [0.0, 18.0, 60.0] {
            let z = match preset_system(preset, 0.1, theta).and_then(|z| Ok((solve_closed_form(&z, None)?, z))) {
                Ok(v) => v,
                Err(e) => {
                    failures.push(format!("{preset} θ={theta}: {e}"));
                    continue;
                }
            };
            let (cf, z) = z;
            let n = z.n_ports();
            let mut loaded = z.entries().clone();
            loaded[(n - 1, n - 1)] += Complex64::new(cf.r_l_opt, 0.0);
            for (entries, is_loaded) in [(z.entries().clone(), false), (loaded, true)] {
                for port in 0..n {
                    count += 1;
                    let t = pim_from_entries(&entries, port, is_loaded);
                    let norm = t.matrix.norm();
                    let eig = t.eigensystem();
                    let (values, vectors) = herm_eigen(&t.matrix);
                    let mut err = rel(eig.lambda_plus, values[n - 1]).max((values[0] + eig.lambda_minus).abs() / norm);
                    let mut align = |v: &CVector, col: usize| {
                        let num: CVector = vectors.column(col).into();
                        let cos = (v.dotc(&num)).norm() / v.norm();
                        err = err.max(1.0 - cos);
                    };
                    align(&eig.v_plus, n - 1);
                    if let Some(v) = &eig.v_minus {
                        align(v, 0);
                    }
                    for &v in &values[1..n - 1] {
                        err = err.max(v.abs() / norm);
                    }
                    worst_eig = worst_eig.max(err);
                    if err > 1e-10 {
                        failures.push(format!("{preset} θ={theta} port {port}: eigen err {err:e}"));
                    }
                    let (plus, minus) = pim_split(&t);
                    let min_eig = |m: &CMatrix| herm_eigen(m).0[0];
                    let split = ((&plus - &minus - &t.matrix).norm() / norm)
                        .max((-min_eig(&plus)).max(0.0) / norm)
                        .max((-min_eig(&minus)).max(0.0) / norm);
                    worst_split = worst_split.max(split);
                    if split > 1e-12 {
                        failures.push(format!("{preset} θ={theta} port {port}: split err {split:e}"));
                    }
                }
            }
        }
    }
    outcome(
        6,
        "PIM eigensystems",
        &failures,
        format!("{count} PIMs; worst eigen err {worst_eig:.2e} (tol 1e-10), worst split err {worst_split:.2e} (tol 1e-12)"),
    )
}

pub fn kkt_and_duality(sweeps: &[SweepPoint]) -> CriterionOutcome {
    let mut failures = Vec::new();
    let (mut worst_kkt, mut worst_gap, mut max_iter) = (0.0f64, 0.0f64, 0usize);
    let mut solves: Vec<(String, crate::pipeline::SdrResult)> = solved(sweeps)
        .map(|(p, r)| (format!("{} θ={}", p.preset, p.theta_deg), r.sdr.clone()))
        .collect();
    let forced = PipelineOptions {
        constraints: ConstraintMode::None,
        force_relaxation: true,
        ..PipelineOptions::default()
    };
    for preset in Preset::ALL {
        for theta in [0.0, 18.0, 60.0] {
            let res = preset_system(preset, 0.1, theta).and_then(|z| {
                let cf = solve_closed_form(&z, None)?;
                full_pipeline(&z, cf.r_l_opt, &forced)
            });
            match res {
                Ok(r) => solves.push((format!("{preset} θ={theta} unconstrained"), r.sdr)),
                Err(e) => failures.push(format!("{preset} θ={theta}: {e}")),
            }
        }
    }
    let mut count = 0;
    for (tag, r) in &solves {
        let Some(kkt) = r.kkt else { continue };
        count += 1;
        max_iter = max_iter.max(r.iterations);
        if r.status != Some(Status::Optimal) {
            failures.push(format!("{tag}: status {:?}", r.status));
            continue;
        }
        worst_kkt = worst_kkt.max(kkt.max());
        worst_gap = worst_gap.max(kkt.duality_gap);
        if kkt.max() > 1e-8 || kkt.duality_gap > 1e-9 || r.iterations > 60 {
            failures.push(format!(
                "{tag}: kkt {:e} gap {:e} iterations {}",
                kkt.max(),
                kkt.duality_gap,
                r.iterations
            ));
        }
    }
    outcome(
        7,
        "KKT and duality",
        &failures,
        format!(
            "{count} solves; worst KKT residual {worst_kkt:.2e} (tol 1e-8), worst gap {worst_gap:.2e} (tol 1e-9), max iterations {max_iter} (limit 60)"
        ),
    )
}

pub fn load_optimization() -> CriterionOutcome {
    let mut failures = Vec::new();
    let (mut worst_rl, mut worst_flat) = (0.0f64, 0.0f64);
    let options = PipelineOptions {
        constraints: ConstraintMode::None,
        ..PipelineOptions::default()
    };
    for preset in Preset::ALL {
        for theta in [0.0, 18.0, 60.0] {
            let run = || -> crate::Result<(f64, f64)> {
                let z = preset_system(preset, 0.1, theta)?;
                let cf = solve_closed_form(&z, None)?;
                let opt = optimize_load(&z, default_load_bounds(&cf), 1e-7, &options)?;
                let at = |r: f64| full_pipeline(&z, r, &options).map(|p| p.sdr.eta);
                let peak = at(cf.r_l_opt)?;
                let flat = [0.9, 1.1]
                    .into_iter()
                    .map(|f| at(f * cf.r_l_opt).map(|e| 1.0 - e / peak))
                    .collect::<crate::Result<Vec<_>>>()?
                    .into_iter()
                    .fold(0.0, f64::max);
                Ok((rel(opt.r_l, cf.r_l_opt), flat))
            };
            match run() {
                Ok((e, flat)) => {
                    worst_rl = worst_rl.max(e);
                    worst_flat = worst_flat.max(flat);
                    if e > 1e-3 || flat > 0.01 {
                        failures.push(format!("{preset} θ={theta}: R_L err {e:e}, η drop {flat:e}"));
                    }
                }
                Err(e) => failures.push(format!("{preset} θ={theta}: {e}")),
            }
        }
    }
    outcome(
        8,
        "load optimization",
        &failures,
        format!("worst R_L* rel err {worst_rl:.2e} (tol 1e-3); worst η loss at ±10% {worst_flat:.2e} (tol 0.01)"),
    )
}

/// Random passive two-transmitter system whose closed form draws power
/// from at least one transmitter.
pub fn random_constrained_system(rng: &mut ChaCha8Rng) -> ImpedanceMatrix {
    loop {
        let b = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let r = &b * b.transpose() * 0.5 + DMatrix::from_diagonal(&nalgebra::DVector::from_fn(3, |_, _| rng.random_range(0.05..0.5)));
        let mut x = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-8.0..8.0));
        x = (&x + x.transpose()) * 0.5;
        for i in 0..3 {
            x[(i, i)] += rng.random_range(20.0..60.0);
        }
        let z = CMatrix::from_fn(3, 3, |i, j| Complex64::new(r[(i, j)], x[(i, j)]));
        let Ok(z) = ImpedanceMatrix::new(z, 1e7) else { continue };
        match solve_closed_form(&z, None) {
            Ok(cf) if cf.min_transmit_power() < -1e-6 && cf.eta_max > 1e-3 => return z,
            _ => continue,
        }
    }
}

pub fn oracle_agreement() -> CriterionOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let systems: Vec<ImpedanceMatrix> = (0..10).map(|_| random_constrained_system(&mut rng)).collect();
    let results: Vec<Result<f64, String>> = systems
        .par_iter()
        .enumerate()
        .map(|(k, z)| {
            let tag = format!("system {k}");
            let cf = solve_closed_form(z, None).map_err(|e| format!("{tag}: {e}"))?;
            let sdr = solve_sdr(z, cf.r_l_opt, &ConstraintMode::NonNegative, &SdrOptions::default())
                .map_err(|e| format!("{tag}: {e}"))?;
            let problem =
                QcqpProblem::build(z, cf.r_l_opt, ConstraintMode::NonNegative).map_err(|e| format!("{tag}: {e}"))?;
            let o = brute_force_qcqp(&problem, DEFAULT_RESOLUTION).map_err(|e| format!("{tag}: {e}"))?;
            let gap = rel(sdr.p_loss, o.objective);
            if gap > 1e-4 {
                return Err(format!("{tag}: relaxation {:e} vs brute force {:e}", sdr.p_loss, o.objective));
            }
            Ok(gap)
        })
        .collect();
    let failures: Vec<String> = results.iter().filter_map(|r| r.as_ref().err().cloned()).collect();
    let worst = results.iter().filter_map(|r| r.as_ref().ok()).copied().fold(0.0, f64::max);
    outcome(
        9,
        "brute-force agreement",
        &failures,
        format!("{} random constrained systems; worst rel objective gap {worst:.2e} (tol 1e-4)", systems.len()),
    )
}

/// All criteria in order.
pub fn run_acceptance() -> Vec<CriterionOutcome> {
    let sweeps = reference_sweeps();
    vec![
        siso_collapse(),
        convex_chain(),
        tightness(&sweeps),
        nonnegativity(&sweeps),
        degradation(&sweeps),
        pim_eigensystems(),
        kkt_and_duality(&sweeps),
        load_optimization(),
        oracle_agreement(),
    ]
}

/// Identity checks on every preset at a few receiver angles.
pub fn identity_suite() -> Vec<(String, IdentityReport)> {
    let mut out = Vec::new();
    for preset in Preset::ALL {
        for theta in [0.0, 18.0, 60.0] {
            let tag = format!("{preset} θ={theta}");
            match preset_system(preset, 0.1, theta) {
                Ok(z) => out.push((tag, verify_identities(z.entries(), z.frequency_hz(), None))),
                Err(e) => {
                    let mut r = IdentityReport::default();
                    r.checks.push(crate::oracle::IdentityCheck {
                        name: format!("build system ({e})"),
                        residual: f64::INFINITY,
                        tolerance: 0.0,
                        passed: false,
                    });
                    out.push((tag, r));
                }
            }
        }
    }
    out
}
