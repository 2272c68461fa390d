//! Solve and sweep drivers with reproducible JSON and CSV output.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::circuit::{build_loop_system, GeometrySpec, ImpedanceFile, ImpedanceMatrix, Preset, DEFAULT_FREQUENCY_HZ};
use crate::closed_form::{solve_closed_form, ReactiveElement};
use crate::error::{Error, Result};
use crate::pipeline::{default_load_bounds, full_pipeline, optimize_load, PipelineOptions, PipelineResult};

pub const WORKERS_ENV: &str = "MISO_WPT_WORKERS";

/// Hex SHA-256 of the canonical JSON serialization of a matrix.
pub fn matrix_hash(z: &ImpedanceMatrix) -> String {
    let json = serde_json::to_string(&ImpedanceFile::from_matrix(z)).expect("matrix serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

fn text_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "policy", content = "ohms", rename_all = "snake_case")]
pub enum LoadPolicy {
    /// The efficiency-optimal load of the closed form.
    Auto,
    Fixed(f64),
    /// Outer search over the load with the constrained pipeline.
    Optimize,
}

impl std::str::FromStr for LoadPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(LoadPolicy::Auto),
            "optimize" => Ok(LoadPolicy::Optimize),
            other => match other.parse::<f64>() {
                Ok(r) if r > 0.0 && r.is_finite() => Ok(LoadPolicy::Fixed(r)),
                _ => Err(Error::InvalidArgument(format!(
                    "load must be 'auto', 'optimize' or a positive resistance, got '{other}'"
                ))),
            },
        }
    }
}

impl std::fmt::Display for LoadPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LoadPolicy::Auto => f.write_str("auto"),
            LoadPolicy::Fixed(r) => write!(f, "{r}"),
            LoadPolicy::Optimize => f.write_str("optimize"),
        }
    }
}

/// Runs the pipeline at the load chosen by `policy`.
pub fn solve_with_policy(z: &ImpedanceMatrix, policy: LoadPolicy, options: &PipelineOptions) -> Result<PipelineResult> {
    match policy {
        LoadPolicy::Fixed(r) => full_pipeline(z, r, options),
        LoadPolicy::Auto => {
            let cf = solve_closed_form(z, None)?;
            full_pipeline(z, cf.r_l_opt, options)
        }
        LoadPolicy::Optimize => {
            let cf = solve_closed_form(z, None)?;
            Ok(optimize_load(z, default_load_bounds(&cf), 1e-6, options)?.result)
        }
    }
}

/// Machine-readable record of one solve.
#[derive(Debug, Clone, Serialize)]
pub struct SolveRecord {
    pub inputs_hash: String,
    pub matrix_hash: String,
    pub n_ports: usize,
    pub load_policy: LoadPolicy,
    pub constraints: String,
    pub r_l: f64,
    pub r_l_opt: f64,
    pub u: f64,
    pub z_o: [f64; 2],
    pub eta_max: f64,
    pub eta_closed_form: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub skipped: bool,
    pub tight: bool,
    pub transmit_powers: Vec<f64>,
    pub closed_form_powers: Vec<f64>,
    pub currents_re: Vec<f64>,
    pub currents_im: Vec<f64>,
    pub x_r: f64,
    pub c_r: Option<f64>,
    pub receiver_element: ReactiveElement,
    pub iterations: usize,
    pub status: String,
    pub delta_eta_db: f64,
    pub delta_cr_rel: f64,
}

impl SolveRecord {
    pub fn new(z: &ImpedanceMatrix, policy: LoadPolicy, res: &PipelineResult) -> Self {
        let matrix_hash = matrix_hash(z);
        let inputs_hash = text_hash(&format!("{matrix_hash}|{policy}|{}", res.constraints));
        let cf = &res.closed_form;
        let sdr = &res.sdr;
        Self {
            inputs_hash,
            matrix_hash,
            n_ports: z.n_ports(),
            load_policy: policy,
            constraints: res.constraints.to_string(),
            r_l: res.r_l,
            r_l_opt: cf.r_l_opt,
            u: cf.u,
            z_o: [cf.z_o.re, cf.z_o.im],
            eta_max: cf.eta_max,
            eta_closed_form: cf.eta_res,
            eta: sdr.eta,
            epsilon: sdr.epsilon,
            skipped: sdr.skipped,
            tight: sdr.tight,
            transmit_powers: sdr.transmit_powers.clone(),
            closed_form_powers: cf.transmit_powers().to_vec(),
            currents_re: sdr.currents.iter().map(|c| c.re).collect(),
            currents_im: sdr.currents.iter().map(|c| c.im).collect(),
            x_r: sdr.x_r,
            c_r: res.receiver_element.capacitance(),
            receiver_element: res.receiver_element,
            iterations: sdr.iterations,
            status: sdr.status.map_or("skipped".to_string(), |s| s.to_string()),
            delta_eta_db: res.delta_eta_db,
            delta_cr_rel: res.delta_cr_rel,
        }
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "ports           {}", self.n_ports);
        let _ = writeln!(s, "constraints     {}", self.constraints);
        let _ = writeln!(s, "U               {:.6}", self.u);
        let _ = writeln!(s, "eta_max         {:.6}", self.eta_max);
        let _ = writeln!(s, "R_L* (ohm)      {:.6e}", self.r_l_opt);
        let _ = writeln!(s, "R_L used (ohm)  {:.6e}", self.r_l);
        let _ = writeln!(s, "eta closed form {:.6}", self.eta_closed_form);
        let _ = writeln!(s, "eta             {:.6}", self.eta);
        let _ = writeln!(s, "relaxation      {}", if self.skipped { "skipped (closed form feasible)" } else { &self.status });
        if !self.skipped {
            let _ = writeln!(s, "tightness error {:.3e}", self.epsilon);
            let _ = writeln!(s, "iterations      {}", self.iterations);
            let _ = writeln!(s, "delta eta (dB)  {:.6}", self.delta_eta_db);
        }
        match self.receiver_element {
            ReactiveElement::Capacitor(c) => {
                let _ = writeln!(s, "C_r (F)         {c:.6e}");
            }
            ReactiveElement::Inductor(l) => {
                let _ = writeln!(s, "L_r (H)         {l:.6e}");
            }
            ReactiveElement::Short => {
                let _ = writeln!(s, "receiver        short");
            }
        }
        for (n, (p, q)) in self.transmit_powers.iter().zip(&self.closed_form_powers).enumerate() {
            let _ = writeln!(s, "P_t{} (W)        {p:.6e}  (closed form {q:.6e})", n + 1);
        }
        s
    }
}

/// Inclusive angle range in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AngleRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl AngleRange {
    pub fn single(theta: f64) -> Self {
        Self {
            start: theta,
            stop: theta,
            step: 1.0,
        }
    }

    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0) || !(self.stop >= self.start) || !self.start.is_finite() || !self.stop.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "angle range {}:{}:{} must be non-empty with a positive step",
                self.start, self.step, self.stop
            )));
        }
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| self.start + i as f64 * self.step).collect())
    }
}

impl std::str::FromStr for AngleRange {
    type Err = Error;

    /// `start:step:stop` or a single angle.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidArgument(format!("malformed angle range '{s}'")))?;
        let range = match parts[..] {
            [t] => AngleRange::single(t),
            [start, step, stop] => AngleRange { start, stop, step },
            _ => return Err(Error::InvalidArgument(format!("angle range '{s}' must be start:step:stop"))),
        };
        range.values()?;
        Ok(range)
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub preset: Preset,
    pub frequency_hz: f64,
    pub theta: AngleRange,
    /// Receiver distances as fractions of the wavelength.
    pub distances: Vec<f64>,
    pub load: LoadPolicy,
    pub options: PipelineOptions,
}

impl SweepSpec {
    pub fn new(preset: Preset) -> Self {
        Self {
            preset,
            frequency_hz: DEFAULT_FREQUENCY_HZ,
            theta: AngleRange {
                start: -90.0,
                stop: 90.0,
                step: 2.0,
            },
            distances: vec![0.1],
            load: LoadPolicy::Auto,
            options: PipelineOptions::default(),
        }
    }

    fn points(&self) -> Result<Vec<(f64, f64)>> {
        if self.distances.is_empty() || self.distances.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::InvalidArgument("distance list must be non-empty and positive".into()));
        }
        let thetas = self.theta.values()?;
        Ok(self
            .distances
            .iter()
            .flat_map(|&d| thetas.iter().map(move |&t| (d, t)))
            .collect())
    }

    fn provenance(&self) -> Vec<(&'static str, String)> {
        let sdr = &self.options.sdr;
        let d: Vec<String> = self.distances.iter().map(|d| d.to_string()).collect();
        vec![
            ("tool", format!("miso-wpt {}", env!("CARGO_PKG_VERSION"))),
            ("preset", self.preset.to_string()),
            ("frequency_hz", self.frequency_hz.to_string()),
            ("theta_deg", format!("{}:{}:{}", self.theta.start, self.theta.step, self.theta.stop)),
            ("d_over_lambda", d.join(";")),
            ("load", self.load.to_string()),
            ("constraints", self.options.constraints.to_string()),
            ("form", sdr.form.to_string()),
            ("facial_reduction", sdr.facial_reduction.to_string()),
            ("tol", num(sdr.sdp.tolerance)),
            ("force_relaxation", self.options.force_relaxation.to_string()),
        ]
    }
}

/// One sweep point; `error` is set (and numeric fields NaN) when the solve failed.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub index: usize,
    pub theta_deg: f64,
    pub d_over_lambda: f64,
    pub matrix_hash: String,
    pub r_l: f64,
    pub u: f64,
    pub eta_max: f64,
    pub eta_closed_form: f64,
    pub eta: f64,
    pub closed_form_powers: Vec<f64>,
    pub transmit_powers: Vec<f64>,
    pub c_r: f64,
    pub epsilon: f64,
    pub skipped: bool,
    pub tight: bool,
    pub iterations: usize,
    pub delta_eta_db: f64,
    pub delta_cr_rel: f64,
    pub error: Option<String>,
}

impl SweepRow {
    fn failed(index: usize, theta_deg: f64, d: f64, n_tx: usize, hash: String, e: &Error) -> Self {
        Self {
            index,
            theta_deg,
            d_over_lambda: d,
            matrix_hash: hash,
            r_l: f64::NAN,
            u: f64::NAN,
            eta_max: f64::NAN,
            eta_closed_form: f64::NAN,
            eta: f64::NAN,
            closed_form_powers: vec![f64::NAN; n_tx],
            transmit_powers: vec![f64::NAN; n_tx],
            c_r: f64::NAN,
            epsilon: f64::NAN,
            skipped: false,
            tight: false,
            iterations: 0,
            delta_eta_db: f64::NAN,
            delta_cr_rel: f64::NAN,
            error: Some(e.to_string()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub header: Vec<(&'static str, String)>,
    pub n_tx: usize,
    pub rows: Vec<SweepRow>,
}

fn solve_point(spec: &SweepSpec, index: usize, d: f64, theta_deg: f64) -> SweepRow {
    let n_tx = spec.preset.n_tx();
    let geometry = GeometrySpec::preset(spec.preset, spec.frequency_hz, d, theta_deg.to_radians());
    let z = match build_loop_system(&geometry, spec.frequency_hz) {
        Ok(z) => z,
        Err(e) => return SweepRow::failed(index, theta_deg, d, n_tx, String::new(), &e),
    };
    let hash = matrix_hash(&z);
    match solve_with_policy(&z, spec.load, &spec.options) {
        Ok(res) => SweepRow {
            index,
            theta_deg,
            d_over_lambda: d,
            matrix_hash: hash,
            r_l: res.r_l,
            u: res.closed_form.u,
            eta_max: res.closed_form.eta_max,
            eta_closed_form: res.closed_form.eta_res,
            eta: res.sdr.eta,
            closed_form_powers: res.closed_form.transmit_powers().to_vec(),
            transmit_powers: res.sdr.transmit_powers.clone(),
            c_r: res.receiver_element.capacitance().unwrap_or(f64::NAN),
            epsilon: res.sdr.epsilon,
            skipped: res.sdr.skipped,
            tight: res.sdr.tight,
            iterations: res.sdr.iterations,
            delta_eta_db: res.delta_eta_db,
            delta_cr_rel: res.delta_cr_rel,
            error: None,
        },
        Err(e) => SweepRow::failed(index, theta_deg, d, n_tx, hash, &e),
    }
}

/// Worker count from the environment, if set to a positive integer.
pub fn workers_from_env() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Solves every sweep point in parallel; rows come back in sweep order.
pub fn run_sweep(spec: &SweepSpec, workers: Option<usize>) -> Result<SweepReport> {
    let points = spec.points()?;
    let work = || -> Vec<SweepRow> {
        points
            .par_iter()
            .enumerate()
            .map(|(i, &(d, t))| solve_point(spec, i, d, t))
            .collect()
    };
    let rows = match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?
            .install(work),
        None => work(),
    };
    let mut header = spec.provenance();
    let inputs: Vec<String> = header.iter().map(|(k, v)| format!("{k}={v}")).collect();
    header.insert(0, ("inputs_hash", text_hash(&inputs.join("\n"))));
    Ok(SweepReport {
        header,
        n_tx: spec.preset.n_tx(),
        rows,
    })
}

/// Shortest round-trip representation; scientific outside `[1e-4, 1e7)`.
fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-4..1e7).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

impl SweepReport {
    pub fn columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = [
            "index", "theta_deg", "d_over_lambda", "r_l", "constraints", "matrix_hash", "u", "eta_max",
            "eta_closed_form", "eta",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        cols.extend((1..=self.n_tx).map(|n| format!("p_cf_{n}")));
        cols.extend((1..=self.n_tx).map(|n| format!("p_t_{n}")));
        cols.extend(
            [
                "c_r", "epsilon", "skipped", "tight", "iterations", "delta_eta_db", "delta_cr_rel", "error",
            ]
            .iter()
            .map(|s| s.to_string()),
        );
        cols
    }

    fn constraints(&self) -> &str {
        self.header
            .iter()
            .find(|(k, _)| *k == "constraints")
            .map_or("", |(_, v)| v.as_str())
    }

    fn write_header(&self, out: &mut impl Write) -> Result<()> {
        for (k, v) in &self.header {
            writeln!(out, "# {k}={v}")?;
        }
        Ok(())
    }

    /// One row per point, preceded by `# key=value` provenance lines.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        self.write_header(&mut out)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.columns()).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![
                r.index.to_string(),
                num(r.theta_deg),
                num(r.d_over_lambda),
                num(r.r_l),
                self.constraints().to_string(),
                r.matrix_hash.clone(),
                num(r.u),
                num(r.eta_max),
                num(r.eta_closed_form),
                num(r.eta),
            ];
            rec.extend(r.closed_form_powers.iter().map(|&p| num(p)));
            rec.extend(r.transmit_powers.iter().map(|&p| num(p)));
            rec.extend([
                num(r.c_r),
                num(r.epsilon),
                r.skipped.to_string(),
                r.tight.to_string(),
                r.iterations.to_string(),
                num(r.delta_eta_db),
                num(r.delta_cr_rel),
                r.error.clone().unwrap_or_default(),
            ]);
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Long-form polar data: one line per (point, series) with the angle in
    /// degrees and radians, the magnitude as radius and its sign.
    pub fn write_pattern_csv(&self, mut out: impl Write) -> Result<()> {
        self.write_header(&mut out)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["d_over_lambda", "theta_deg", "theta_rad", "series", "radius", "sign"])
            .map_err(csv_err)?;
        for r in &self.rows {
            let mut series = vec![("eta_max".to_string(), r.eta_max), ("eta".to_string(), r.eta)];
            series.extend(r.closed_form_powers.iter().enumerate().map(|(n, &p)| (format!("p_cf_{}", n + 1), p)));
            series.extend(r.transmit_powers.iter().enumerate().map(|(n, &p)| (format!("p_t_{}", n + 1), p)));
            for (name, v) in series {
                let sign = if v < 0.0 { "-1" } else { "1" };
                w.write_record([
                    num(r.d_over_lambda),
                    num(r.theta_deg),
                    num(r.theta_deg.to_radians()),
                    name,
                    num(v.abs()),
                    sign.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}
