//! Real-valued QCQP over `c = [i_t′; i_r′; i_t″]` (the receiver current's
//! imaginary part is fixed to zero) and its lifted conic data.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::circuit::{partition, ImpedanceMatrix};
use crate::error::{Error, Result};
use crate::linalg::{hermitian_defect, to_complex, CMatrix, CVector};
use crate::pim::unloaded_port_impedance_matrices;

/// Which transmit-power constraints are imposed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    None,
    /// Every transmitter delivers nonnegative power.
    NonNegative,
    /// Nonnegative power bounded above by a per-transmitter cap (W).
    Caps(Vec<f64>),
}

impl ConstraintMode {
    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ConstraintMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintMode::None => f.write_str("none"),
            ConstraintMode::NonNegative => f.write_str("nonneg"),
            ConstraintMode::Caps(c) => {
                let parts: Vec<String> = c.iter().map(|x| format!("{x}")).collect();
                write!(f, "caps={}", parts.join(","))
            }
        }
    }
}

impl FromStr for ConstraintMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ConstraintMode::None),
            "nonneg" | "nonnegative" => Ok(ConstraintMode::NonNegative),
            _ => {
                let list = s.strip_prefix("caps=").ok_or_else(|| {
                    Error::InvalidArgument(format!("constraint mode '{s}' (expected none, nonneg or caps=<w,...>)"))
                })?;
                let caps = list
                    .split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::InvalidArgument(format!("bad power cap '{t}'")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(ConstraintMode::Caps(caps))
            }
        }
    }
}

/// `c ∈ ℝᴹ`, `M = 2N − 1`: minimize `cᵀQ₀c` subject to `Ac = b` and the
/// transmit-power constraints on `cᵀQₙc`.
#[derive(Debug, Clone, PartialEq)]
pub struct QcqpProblem {
    pub n_ports: usize,
    pub r_l: f64,
    pub q0: DMatrix<f64>,
    /// One matrix per transmitter.
    pub q: Vec<DMatrix<f64>>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// First row of `A`; `K₀ = kkᵀ`.
    pub k: DVector<f64>,
    pub r: DMatrix<f64>,
    pub constraints: ConstraintMode,
    /// Adds the `Kₘ` equalities to the lifted problem.
    pub redundant_equalities: bool,
}

/// Leading `M×M` block of `½[[T′, −T″], [T″, T′]]`.
pub fn realify(t: &CMatrix) -> Result<DMatrix<f64>> {
    let n = t.nrows();
    if n == 0 || t.ncols() != n {
        return Err(Error::Dimension(format!("realify needs a square matrix, got {}×{}", n, t.ncols())));
    }
    let scale = t.norm().max(f64::MIN_POSITIVE);
    let defect = hermitian_defect(t);
    if defect > 1e-10 * scale {
        return Err(Error::InvalidArgument(format!(
            "matrix is not Hermitian (defect {defect:e})"
        )));
    }
    let m = 2 * n - 1;
    Ok(DMatrix::from_fn(m, m, |i, j| {
        let (bi, ri) = (i / n, i % n);
        let (bj, rj) = (j / n, j % n);
        let entry = t[(ri, rj)];
        0.5 * match (bi, bj) {
            (0, 0) | (1, 1) => entry.re,
            (0, 1) => -entry.im,
            _ => entry.im,
        }
    }))
}

/// Real coordinates of a current vector; the receiver current must be real.
pub fn to_real(currents: &CVector) -> Result<DVector<f64>> {
    let n = currents.len();
    if n == 0 {
        return Err(Error::Dimension("empty current vector".into()));
    }
    let i_r = currents[n - 1];
    if i_r.im.abs() > 1e-12 * i_r.norm().max(1.0) {
        return Err(Error::InvalidArgument("receiver current must be real".into()));
    }
    Ok(DVector::from_fn(2 * n - 1, |k, _| {
        if k < n {
            currents[k].re
        } else {
            currents[k - n].im
        }
    }))
}

/// Complex currents from real coordinates (receiver current real).
pub fn to_currents(c: &DVector<f64>) -> Result<CVector> {
    let m = c.len();
    if m % 2 == 0 {
        return Err(Error::Dimension(format!("real coordinate vector has even length {m}")));
    }
    let n = (m + 1) / 2;
    Ok(CVector::from_fn(n, |k, _| {
        let im = if k + 1 < n { c[n + k] } else { 0.0 };
        Complex64::new(c[k], im)
    }))
}

/// `[z_tr′, z_r′ + R_L, −z_tr″]` and the fixed receiver-current row.
pub fn build_affine(z: &ImpedanceMatrix, r_l: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_load(r_l)?;
    let p = partition(z)?;
    let n = z.n_ports();
    let t = n - 1;
    let m = 2 * n - 1;
    let mut a = DMatrix::zeros(2, m);
    for i in 0..t {
        a[(0, i)] = p.z_tr[i].re;
        a[(0, n + i)] = -p.z_tr[i].im;
    }
    a[(0, t)] = p.z_r.re + r_l;
    a[(1, t)] = 1.0;
    Ok((a, DVector::from_vec(vec![0.0, (2.0 / r_l).sqrt()])))
}

/// `K₀ = kkᵀ`, all `Kₘ = uₘkᵀ + kuₘᵀ`, and `R`.
pub fn build_conic(z: &ImpedanceMatrix, r_l: f64) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>, DMatrix<f64>)> {
    let (a, _) = build_affine(z, r_l)?;
    let k = a.row(0).transpose();
    let m = k.len();
    let k0 = &k * k.transpose();
    let km = (0..m).map(|i| redundant_matrix(&k, i)).collect();
    Ok((k0, km, load_matrix(z.n_ports(), r_l)))
}

fn redundant_matrix(k: &DVector<f64>, i: usize) -> DMatrix<f64> {
    let m = k.len();
    let mut out = DMatrix::zeros(m, m);
    for j in 0..m {
        out[(i, j)] += k[j];
        out[(j, i)] += k[j];
    }
    out
}

fn load_matrix(n_ports: usize, r_l: f64) -> DMatrix<f64> {
    let m = 2 * n_ports - 1;
    let mut r = DMatrix::zeros(m, m);
    r[(n_ports - 1, n_ports - 1)] = 0.5 * r_l;
    r
}

fn check_load(r_l: f64) -> Result<()> {
    if r_l.is_finite() && r_l > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("load resistance must be positive, got {r_l}")))
    }
}

/// Objective and constraint values of a candidate point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub objective: f64,
    /// `cᵀQₙc` per transmitter (its transmit power).
    pub powers: Vec<f64>,
    /// `kᵀc`, the real part of the receiver voltage.
    pub kvl_residual: f64,
    /// `½R_L c_r² − 1`.
    pub pl_residual: f64,
}

impl Evaluation {
    /// Largest violation of any constraint under `mode`.
    pub fn max_violation(&self, mode: &ConstraintMode) -> f64 {
        let mut worst = self.kvl_residual.abs().max(self.pl_residual.abs());
        match mode {
            ConstraintMode::None => {}
            ConstraintMode::NonNegative => {
                for &p in &self.powers {
                    worst = worst.max(-p);
                }
            }
            ConstraintMode::Caps(caps) => {
                for (&p, &cap) in self.powers.iter().zip(caps) {
                    worst = worst.max(-p).max(p - cap);
                }
            }
        }
        worst
    }
}

impl QcqpProblem {
    pub fn build(z: &ImpedanceMatrix, r_l: f64, constraints: ConstraintMode) -> Result<Self> {
        let n = z.n_ports();
        if n < 2 {
            return Err(Error::Dimension(format!("need at least one transmitter, got N = {n}")));
        }
        if let ConstraintMode::Caps(caps) = &constraints {
            if caps.len() != n - 1 {
                return Err(Error::InvalidArgument(format!(
                    "{} power caps for {} transmitters",
                    caps.len(),
                    n - 1
                )));
            }
            if caps.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
                return Err(Error::InvalidArgument("power caps must be finite and nonnegative".into()));
            }
        }
        let (a, b) = build_affine(z, r_l)?;
        let q0 = realify(&to_complex(&z.resistance()))?;
        let q = unloaded_port_impedance_matrices(z.entries())
            .iter()
            .take(n - 1)
            .map(|t| realify(&t.matrix))
            .collect::<Result<Vec<_>>>()?;
        let k = a.row(0).transpose();
        Ok(Self {
            n_ports: n,
            r_l,
            q0,
            q,
            a,
            b,
            k,
            r: load_matrix(n, r_l),
            constraints,
            redundant_equalities: true,
        })
    }

    pub fn dim(&self) -> usize {
        2 * self.n_ports - 1
    }

    /// Index of `i_r′` in `c`.
    pub fn receiver_index(&self) -> usize {
        self.n_ports - 1
    }

    pub fn k0(&self) -> DMatrix<f64> {
        &self.k * self.k.transpose()
    }

    pub fn km(&self, m: usize) -> DMatrix<f64> {
        redundant_matrix(&self.k, m)
    }

    pub fn evaluate(&self, c: &DVector<f64>) -> Result<Evaluation> {
        if c.len() != self.dim() {
            return Err(Error::Dimension(format!("point of length {} for M = {}", c.len(), self.dim())));
        }
        let quad = |q: &DMatrix<f64>| c.dot(&(q * c));
        let residual = &self.a * c - &self.b;
        let c_r = c[self.receiver_index()];
        Ok(Evaluation {
            objective: quad(&self.q0),
            powers: self.q.iter().map(quad).collect(),
            kvl_residual: residual[0],
            pl_residual: 0.5 * self.r_l * c_r * c_r - 1.0,
        })
    }

    pub fn dump(&self) -> QcqpDump {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
        };
        QcqpDump {
            n_ports: self.n_ports,
            r_l: self.r_l,
            q0: rows(&self.q0),
            q: self.q.iter().map(rows).collect(),
            a: rows(&self.a),
            b: self.b.iter().copied().collect(),
            constraints: self.constraints.clone(),
            redundant_equalities: self.redundant_equalities,
        }
    }

    pub fn restore(d: &QcqpDump) -> Result<Self> {
        let n = d.n_ports;
        if n < 2 {
            return Err(Error::Schema("n_ports must be at least 2".into()));
        }
        check_load(d.r_l)?;
        let m = 2 * n - 1;
        let mat = |name: &str, rows: &Vec<Vec<f64>>, r: usize, c: usize| -> Result<DMatrix<f64>> {
            if rows.len() != r || rows.iter().any(|row| row.len() != c) {
                return Err(Error::Schema(format!("'{name}' must be {r}×{c}")));
            }
            Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
        };
        let q0 = mat("q0", &d.q0, m, m)?;
        if d.q.len() != n - 1 {
            return Err(Error::Schema(format!("expected {} power matrices", n - 1)));
        }
        let q = d.q.iter().map(|x| mat("q", x, m, m)).collect::<Result<Vec<_>>>()?;
        let a = mat("a", &d.a, 2, m)?;
        if d.b.len() != 2 {
            return Err(Error::Schema("'b' must have two entries".into()));
        }
        let k = a.row(0).transpose();
        Ok(Self {
            n_ports: n,
            r_l: d.r_l,
            q0,
            q,
            a,
            b: DVector::from_column_slice(&d.b),
            k,
            r: load_matrix(n, d.r_l),
            constraints: d.constraints.clone(),
            redundant_equalities: d.redundant_equalities,
        })
    }
}

/// Serializable form of a problem with row-major matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QcqpDump {
    pub n_ports: usize,
    pub r_l: f64,
    pub q0: Vec<Vec<f64>>,
    pub q: Vec<Vec<Vec<f64>>>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub constraints: ConstraintMode,
    pub redundant_equalities: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn system() -> ImpedanceMatrix {
        let z = CMatrix::from_row_slice(
            3,
            3,
            &[
                c(1.0, 40.0), c(0.3, 5.0), c(0.2, -3.0),
                c(0.3, 5.0), c(1.2, 38.0), c(-0.1, 6.0),
                c(0.2, -3.0), c(-0.1, 6.0), c(0.9, 35.0),
            ],
        );
        ImpedanceMatrix::new(z, 1e7).unwrap()
    }

    #[test]
    fn realify_real_input_is_block_diagonal() {
        let t = to_complex(&DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]));
        let r = realify(&t).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.0, 0.5, 1.5, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(r, expected);
    }

    #[test]
    fn realify_rejects_non_hermitian() {
        let t = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 1.0), c(0.0, 1.0), c(1.0, 0.0)]);
        assert!(realify(&t).is_err());
    }

    #[test]
    fn quadratic_form_equivalence() {
        let z = system();
        let pims = unloaded_port_impedance_matrices(z.entries());
        let i = CVector::from_vec(vec![c(0.4, -1.1), c(-0.7, 0.2), c(1.3, 0.0)]);
        let x = to_real(&i).unwrap();
        for t in &pims {
            let direct = crate::linalg::half_quadratic_form(&t.matrix, &i);
            let real = x.dot(&(realify(&t.matrix).unwrap() * &x));
            assert!((direct - real).abs() < 1e-14);
        }
        assert_eq!(to_currents(&x).unwrap(), i);
    }

    #[test]
    fn affine_and_conic_shapes() {
        let z = system();
        let (a, b) = build_affine(&z, 2.0).unwrap();
        assert_eq!(a.shape(), (2, 5));
        assert_eq!(b[1], 1.0);
        let (k0, km, r) = build_conic(&z, 2.0).unwrap();
        assert_eq!(km.len(), 5);
        assert_eq!(r.trace(), 1.0);
        let k = a.row(0).transpose();
        let x = DVector::from_vec(vec![0.1, -0.4, 2.0, 0.3, 0.8]);
        assert!(((x.transpose() * &k0 * &x)[0] - k.dot(&x).powi(2)).abs() < 1e-12);
        assert!(((x.transpose() * &r * &x)[0] - x[2] * x[2]).abs() < 1e-15);
    }

    #[test]
    fn constraint_mode_parsing() {
        assert_eq!("none".parse::<ConstraintMode>().unwrap(), ConstraintMode::None);
        assert_eq!("nonneg".parse::<ConstraintMode>().unwrap(), ConstraintMode::NonNegative);
        assert_eq!(
            "caps=1.5,2".parse::<ConstraintMode>().unwrap(),
            ConstraintMode::Caps(vec![1.5, 2.0])
        );
        assert!("caps=x".parse::<ConstraintMode>().is_err());
        assert!("bogus".parse::<ConstraintMode>().is_err());
        let mode = ConstraintMode::Caps(vec![0.5, 3.0]);
        assert_eq!(mode.to_string().parse::<ConstraintMode>().unwrap(), mode);
    }

    #[test]
    fn dump_restore_round_trip() {
        let p = QcqpProblem::build(&system(), 1.7, ConstraintMode::NonNegative).unwrap();
        let json = serde_json::to_string(&p.dump()).unwrap();
        let back = QcqpProblem::restore(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn cap_count_is_checked() {
        assert!(QcqpProblem::build(&system(), 1.0, ConstraintMode::Caps(vec![1.0])).is_err());
        assert!(QcqpProblem::build(&system(), 1.0, ConstraintMode::Caps(vec![1.0, -1.0])).is_err());
    }
}
