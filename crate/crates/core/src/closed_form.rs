//! Analytic optimum of the unconstrained problem: minimum-loss output
//! impedance, mutual coupling quality factor, optimal currents, reactance,
//! load and efficiency.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::circuit::{apply_loading, partition, ImpedanceMatrix, Loading, Partition};
use crate::error::{Error, Result};
use crate::linalg::CVector;
use crate::pim::{port_impedance_matrices, port_powers};

/// Reactive element that realizes a receiver reactance at the operating frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ReactiveElement {
    /// Farads.
    Capacitor(f64),
    /// Henries.
    Inductor(f64),
    /// Zero reactance.
    Short,
}

impl ReactiveElement {
    pub fn for_reactance(x: f64, omega: f64) -> Self {
        if x < 0.0 {
            ReactiveElement::Capacitor(-1.0 / (omega * x))
        } else if x > 0.0 {
            ReactiveElement::Inductor(x / omega)
        } else {
            ReactiveElement::Short
        }
    }

    pub fn capacitance(&self) -> Option<f64> {
        match *self {
            ReactiveElement::Capacitor(c) => Some(c),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedFormSolution {
    pub z_o: Complex64,
    pub u: f64,
    /// Transmitter currents (A), receiver current excluded.
    pub i_t: CVector,
    /// Receiver current `√(2/R_L)` giving 1 W in the load.
    pub i_r: f64,
    pub x_r: f64,
    /// Load resistance the solution was computed for.
    pub r_l: f64,
    pub r_l_opt: f64,
    pub eta_res: f64,
    pub eta_max: f64,
    /// Loss per watt delivered.
    pub p_loss: f64,
    /// Real power entering each port of the loaded network (receiver last, zero).
    pub port_powers: Vec<f64>,
    pub receiver_element: ReactiveElement,
}

impl ClosedFormSolution {
    pub fn currents(&self) -> CVector {
        let t = self.i_t.len();
        let mut i = CVector::zeros(t + 1);
        i.rows_mut(0, t).copy_from(&self.i_t);
        i[t] = Complex64::new(self.i_r, 0.0);
        i
    }

    pub fn transmit_powers(&self) -> &[f64] {
        &self.port_powers[..self.i_t.len()]
    }

    pub fn min_transmit_power(&self) -> f64 {
        self.transmit_powers().iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn loading(&self) -> Loading {
        Loading::receiver(self.i_t.len() + 1, self.x_r, self.r_l).expect("positive load")
    }

    /// Stacked real transmitter currents `[i_t′; i_t″]`.
    pub fn real_transmit_currents(&self) -> DVector<f64> {
        let t = self.i_t.len();
        DVector::from_fn(2 * t, |k, _| if k < t { self.i_t[k].re } else { self.i_t[k - t].im })
    }
}

fn tx_resistance_inverse(p: &Partition) -> Result<DMatrix<f64>> {
    p.tx_resistance()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::NotPassive {
            what: "Z_t′",
            eigenvalue: f64::NAN,
        })
}

fn bilinear(a: &CVector, g: &DMatrix<f64>, b: &CVector) -> Complex64 {
    let gc = g.map(|x| Complex64::new(x, 0.0));
    (a.transpose() * gc * b)[(0, 0)]
}

/// `z_o = z_r − z_trᵀ (Z_t′)⁻¹ z_tr′`.
pub fn output_impedance(z: &ImpedanceMatrix) -> Result<Complex64> {
    let p = partition(z)?;
    let g = tx_resistance_inverse(&p)?;
    let re = p.coupling_re().map(|x| Complex64::new(x, 0.0));
    Ok(p.z_r - bilinear(&p.z_tr, &g, &re))
}

/// `U = √(z_trᴴ (Z_t′)⁻¹ z_tr / z_o′)`; zero when nothing couples to the receiver.
pub fn mutual_q(z: &ImpedanceMatrix) -> Result<f64> {
    let p = partition(z)?;
    let g = tx_resistance_inverse(&p)?;
    let z_o = output_impedance(z)?;
    let num = bilinear(&p.z_tr.map(|c| c.conj()), &g, &p.z_tr).re;
    if !(num > 0.0) {
        return Ok(0.0);
    }
    Ok((num / z_o.re).sqrt())
}

/// Physical efficiency limit `U² / (1 + √(1 + U²))²`.
pub fn max_pte(u: f64) -> f64 {
    let s = (1.0 + u * u).sqrt();
    u * u / ((1.0 + s) * (1.0 + s))
}

/// `R_L* = z_o′ √(1 + U²)`.
pub fn optimal_load(z_o: Complex64, u: f64) -> f64 {
    z_o.re * (1.0 + u * u).sqrt()
}

/// Efficiency at the optimal reactance for an arbitrary load resistance.
pub fn resonant_pte(z_o: Complex64, u: f64, r_l: f64) -> f64 {
    let ro = z_o.re;
    let u2 = u * u;
    u2 / (1.0 + r_l / ro + u2) * (r_l / (r_l + ro))
}

fn check_load(r_l: f64) -> Result<()> {
    if r_l.is_finite() && r_l > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("load resistance must be positive, got {r_l}")))
    }
}

/// Loss-optimal transmitter currents at `x_r = −z_o″` for unit load power.
pub fn optimal_currents(z: &ImpedanceMatrix, r_l: f64) -> Result<CVector> {
    check_load(r_l)?;
    let p = partition(z)?;
    let g = tx_resistance_inverse(&p)?;
    let z_o = output_impedance(z)?;
    let u = mutual_q(z)?;
    if u == 0.0 {
        return Err(Error::NoCoupling);
    }
    let i_r = (2.0 / r_l).sqrt();
    let weight = (z_o.re + r_l) / (z_o.re * u * u);
    let rhs: CVector = p.z_tr.map(|c| Complex64::new(c.re, 0.0) + c.conj() * weight);
    let gc = g.map(|x| Complex64::new(x, 0.0));
    Ok(-(gc * rhs) * Complex64::new(i_r, 0.0))
}

/// Solution of the equality-constrained loss-minimization QP.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    /// `[i_t′; i_t″]`
    pub c_t: DVector<f64>,
    pub p_loss: f64,
    pub eta: f64,
    /// Multiplier of the receiver KVL row.
    pub multiplier: f64,
}

/// Minimizes `½c_tᵀHc_t + gᵀc_t + z_r′/R_L` subject to the real part of the
/// receiver KVL, by a direct solve of the Lagrangian system.
pub fn solve_min_loss_qp(z: &ImpedanceMatrix, r_l: f64) -> Result<QpSolution> {
    check_load(r_l)?;
    let p = partition(z)?;
    let t = p.z_tr.len();
    let a_re = p.coupling_re();
    let a_im = p.coupling_im();
    if a_re.norm() == 0.0 && a_im.norm() == 0.0 {
        return Err(Error::NoCoupling);
    }
    let i_r = (2.0 / r_l).sqrt();
    let g_mat = p.tx_resistance();
    let dim = 2 * t;
    let mut kkt = DMatrix::<f64>::zeros(dim + 1, dim + 1);
    kkt.view_mut((0, 0), (t, t)).copy_from(&g_mat);
    kkt.view_mut((t, t), (t, t)).copy_from(&g_mat);
    let mut row = DVector::<f64>::zeros(dim);
    row.rows_mut(0, t).copy_from(&a_re);
    row.rows_mut(t, t).copy_from(&(-&a_im));
    for k in 0..dim {
        kkt[(k, dim)] = row[k];
        kkt[(dim, k)] = row[k];
    }
    let mut grad = DVector::<f64>::zeros(dim);
    grad.rows_mut(0, t).copy_from(&(&a_re * i_r));
    let mut rhs = DVector::<f64>::zeros(dim + 1);
    rhs.rows_mut(0, dim).copy_from(&(-&grad));
    rhs[dim] = -i_r * (p.z_r.re + r_l);
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Solver("singular Lagrangian system".into()))?;
    let c_t = sol.rows(0, dim).into_owned();
    let h_c = DVector::from_fn(dim, |k, _| {
        let (blk, off) = if k < t { (0, 0) } else { (t, t) };
        (0..t).map(|j| g_mat[(k - off, j)] * c_t[blk + j]).sum::<f64>()
    });
    let p_loss = 0.5 * c_t.dot(&h_c) + grad.dot(&c_t) + p.z_r.re / r_l;
    Ok(QpSolution {
        c_t,
        p_loss,
        eta: 1.0 / (1.0 + p_loss),
        multiplier: sol[dim],
    })
}

/// Real power `½ iᴴ Tₙ i` entering each port of the loaded network.
pub fn transmit_powers(z: &ImpedanceMatrix, loading: &Loading, currents: &CVector) -> Result<Vec<f64>> {
    if currents.len() != z.n_ports() {
        return Err(Error::Dimension(format!(
            "{} currents for {} ports",
            currents.len(),
            z.n_ports()
        )));
    }
    let loaded = apply_loading(z, loading)?;
    Ok(port_powers(&port_impedance_matrices(&loaded), currents))
}

/// Full closed-form operating point; `r_l = None` selects `R_L*`.
pub fn solve_closed_form(z: &ImpedanceMatrix, r_l: Option<f64>) -> Result<ClosedFormSolution> {
    let z_o = output_impedance(z)?;
    let u = mutual_q(z)?;
    if u == 0.0 {
        return Err(Error::NoCoupling);
    }
    let r_l_opt = optimal_load(z_o, u);
    let r_l = r_l.unwrap_or(r_l_opt);
    let i_t = optimal_currents(z, r_l)?;
    let i_r = (2.0 / r_l).sqrt();
    let x_r = -z_o.im;
    let eta_res = resonant_pte(z_o, u, r_l);
    let n = z.n_ports();
    let loading = Loading::receiver(n, x_r, r_l)?;
    let mut currents = CVector::zeros(n);
    currents.rows_mut(0, n - 1).copy_from(&i_t);
    currents[n - 1] = Complex64::new(i_r, 0.0);
    let port_powers = transmit_powers(z, &loading, &currents)?;
    Ok(ClosedFormSolution {
        z_o,
        u,
        i_t,
        i_r,
        x_r,
        r_l,
        r_l_opt,
        eta_res,
        eta_max: max_pte(u),
        p_loss: 1.0 / eta_res - 1.0,
        port_powers,
        receiver_element: ReactiveElement::for_reactance(x_r, z.omega()),
    })
}
