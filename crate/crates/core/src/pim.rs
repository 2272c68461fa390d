//! Port impedance matrices (PIMs): Hermitian matrices whose quadratic forms
//! give the real power entering each port, with their closed-form rank-two
//! eigensystems and positive/negative semidefinite splits.

use num_complex::Complex64;

use crate::circuit::LoadedImpedanceMatrix;
use crate::error::{Error, Result};
use crate::linalg::{half_quadratic_form, CMatrix, CVector};

#[derive(Debug, Clone, PartialEq)]
pub struct PortImpedanceMatrix {
    pub port: usize,
    pub matrix: CMatrix,
    /// Built from a loaded matrix (the receiver PIM then includes `R_L`).
    pub loaded: bool,
}

/// Closed-form eigensystem of a PIM. The eigenvalues are `+λ⁺` and `−λ⁻`;
/// all others vanish.
#[derive(Debug, Clone, PartialEq)]
pub struct PimEigensystem {
    pub port: usize,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub v_plus: CVector,
    /// `None` when the port is uncoupled (`S = 0`) and the PIM has rank one.
    pub v_minus: Option<CVector>,
    /// Self resistance `R` (diagonal entry of the PIM).
    pub r: f64,
    /// Coupling magnitude `S = √Σ_{m≠n} |Z_{n,m}|²`.
    pub s: f64,
}

impl PimEigensystem {
    pub fn rank_one(&self) -> bool {
        self.v_minus.is_none()
    }
}

/// `T = ½(eₙeₙᵀZ + Zᴴeₙeₙᵀ)` for an arbitrary square matrix.
pub fn pim_from_entries(z: &CMatrix, port: usize, loaded: bool) -> PortImpedanceMatrix {
    let n = z.nrows();
    let mut t = CMatrix::zeros(n, n);
    for m in 0..n {
        t[(port, m)] += z[(port, m)] * 0.5;
        t[(m, port)] += z[(port, m)].conj() * 0.5;
    }
    PortImpedanceMatrix {
        port,
        matrix: t,
        loaded,
    }
}

pub fn port_impedance_matrices(z: &LoadedImpedanceMatrix) -> Vec<PortImpedanceMatrix> {
    (0..z.n_ports())
        .map(|n| pim_from_entries(z.entries(), n, true))
        .collect()
}

/// PIMs of the unloaded matrix.
pub fn unloaded_port_impedance_matrices(z: &CMatrix) -> Vec<PortImpedanceMatrix> {
    (0..z.nrows()).map(|n| pim_from_entries(z, n, false)).collect()
}

pub fn pim_eigensystem(z: &CMatrix, port: usize) -> Result<PimEigensystem> {
    if port >= z.nrows() {
        return Err(Error::Dimension(format!("port {port} of {}", z.nrows())));
    }
    Ok(pim_from_entries(z, port, false).eigensystem())
}

impl PortImpedanceMatrix {
    pub fn eigensystem(&self) -> PimEigensystem {
        let n = self.port;
        let t = &self.matrix;
        let r = t[(n, n)].re;
        // Column n off the diagonal holds ½·conj(Z_{n,m}).
        let mut half_coupling = t.column(n).into_owned();
        half_coupling[n] = Complex64::new(0.0, 0.0);
        let s = 2.0 * half_coupling.norm();
        let root = r.hypot(s);
        let lambda_plus = 0.5 * (r.abs() + root);
        // Both roots of λ² − Rλ − S²/4 without cancellation.
        let (lp, lm) = if r >= 0.0 {
            let lp = lambda_plus;
            (lp, if lp > 0.0 { s * s / (4.0 * lp) } else { 0.0 })
        } else {
            let lm = lambda_plus;
            (if lm > 0.0 { s * s / (4.0 * lm) } else { 0.0 }, lm)
        };
        let eigvec = |lambda: f64| {
            let mut v = half_coupling.clone();
            v[n] = Complex64::new(lambda, 0.0);
            let norm = v.norm();
            v / Complex64::new(norm, 0.0)
        };
        let unit = |_: ()| {
            let mut e = CVector::zeros(t.nrows());
            e[n] = Complex64::new(1.0, 0.0);
            e
        };
        if s == 0.0 {
            let v = unit(());
            let (lambda_plus, lambda_minus, v_plus) = if r >= 0.0 { (r, 0.0, v) } else { (0.0, -r, v) };
            return PimEigensystem {
                port: n,
                lambda_plus,
                lambda_minus,
                v_plus,
                v_minus: None,
                r,
                s,
            };
        }
        PimEigensystem {
            port: n,
            lambda_plus: lp,
            lambda_minus: lm,
            v_plus: eigvec(lp),
            v_minus: Some(eigvec(-lm)),
            r,
            s,
        }
    }
}

/// `T = T⁺ − T⁻` with `T± = λ±·v vᴴ / (vᴴv)`, both positive semidefinite.
pub fn pim_split(t: &PortImpedanceMatrix) -> (CMatrix, CMatrix) {
    let eig = t.eigensystem();
    let dim = t.matrix.nrows();
    let outer = |v: &CVector, lambda: f64| {
        let vv = v.norm_squared();
        (v * v.adjoint()) * Complex64::new(lambda / vv, 0.0)
    };
    let plus = if eig.lambda_plus > 0.0 {
        outer(&eig.v_plus, eig.lambda_plus)
    } else {
        CMatrix::zeros(dim, dim)
    };
    let minus = match &eig.v_minus {
        Some(v) => outer(v, eig.lambda_minus),
        None if eig.lambda_minus > 0.0 => outer(&eig.v_plus, eig.lambda_minus),
        None => CMatrix::zeros(dim, dim),
    };
    (plus, minus)
}

/// Real power `½ iᴴ Tₙ i` entering each port.
pub fn port_powers(pims: &[PortImpedanceMatrix], currents: &CVector) -> Vec<f64> {
    pims.iter()
        .map(|t| half_quadratic_form(&t.matrix, currents))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{herm_eigen, real_part};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn two_port_example() {
        let z = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 2.0), c(0.0, 2.0), c(3.0, 0.0)]);
        let t = pim_from_entries(&z, 0, true);
        let expected = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(0.0, 0.0)]);
        assert!((t.matrix - expected).norm() < 1e-15);
    }

    #[test]
    fn per_port_power_matches_voltage_current_product() {
        let z = CMatrix::from_row_slice(
            3,
            3,
            &[
                c(1.0, 4.0), c(0.2, -1.0), c(0.1, 0.5),
                c(0.2, -1.0), c(2.0, 1.0), c(-0.1, 2.0),
                c(0.1, 0.5), c(-0.1, 2.0), c(1.5, -3.0),
            ],
        );
        let i = CVector::from_vec(vec![c(0.3, -1.2), c(2.0, 0.7), c(-0.4, 0.1)]);
        let v = &z * &i;
        for (n, t) in unloaded_port_impedance_matrices(&z).iter().enumerate() {
            let direct = 0.5 * (v[n] * i[n].conj()).re;
            assert!((half_quadratic_form(&t.matrix, &i) - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn lossless_port_has_symmetric_spectrum() {
        let z = CMatrix::from_row_slice(2, 2, &[c(0.0, 5.0), c(0.0, 3.0), c(0.0, 3.0), c(1.0, 5.0)]);
        let e = pim_eigensystem(&z, 0).unwrap();
        assert!((e.lambda_plus - 1.5).abs() < 1e-15);
        assert!((e.lambda_minus - 1.5).abs() < 1e-15);
    }

    #[test]
    fn two_port_eigenvalues() {
        let z = CMatrix::from_row_slice(2, 2, &[c(1.0, 9.0), c(0.0, 2.0), c(0.0, 2.0), c(1.0, 9.0)]);
        let e = pim_eigensystem(&z, 0).unwrap();
        let r5 = 5.0f64.sqrt();
        assert!((e.lambda_plus - (1.0 + r5) / 2.0).abs() < 1e-15);
        assert!((e.lambda_minus - (r5 - 1.0) / 2.0).abs() < 1e-15);
        assert!(!e.rank_one());
    }

    #[test]
    fn uncoupled_port_is_rank_one() {
        let z = CMatrix::from_row_slice(2, 2, &[c(2.0, 9.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 9.0)]);
        let t = pim_from_entries(&z, 0, false);
        let e = t.eigensystem();
        assert!(e.rank_one());
        assert_eq!(e.lambda_minus, 0.0);
        assert_eq!(e.lambda_plus, 2.0);
        let (plus, minus) = pim_split(&t);
        assert_eq!(minus, CMatrix::zeros(2, 2));
        assert!((plus - &t.matrix).norm() < 1e-15);
    }

    #[test]
    fn random_five_port_signature_and_split() {
        let n = 5;
        let mut z = CMatrix::zeros(n, n);
        let mut seed = 0.5f64;
        let mut next = || {
            seed = (seed * 9301.0 + 49297.0) % 233280.0;
            seed / 233280.0 - 0.5
        };
        for i in 0..n {
            for j in 0..=i {
                let v = c(next(), next() * 4.0);
                z[(i, j)] = v;
                z[(j, i)] = v;
            }
            z[(i, i)].re += 3.0;
        }
        let re = real_part(&z);
        assert!(crate::linalg::min_eigenvalue(&re) > 0.0);
        let mut total = CMatrix::zeros(n, n);
        for t in unloaded_port_impedance_matrices(&z) {
            let (values, _) = herm_eigen(&t.matrix);
            let norm = t.matrix.norm();
            let pos = values.iter().filter(|&&v| v > 1e-10 * norm).count();
            let neg = values.iter().filter(|&&v| v < -1e-10 * norm).count();
            assert_eq!((pos, neg), (1, 1));

            let eig = t.eigensystem();
            assert!((values[n - 1] - eig.lambda_plus).abs() < 1e-12 * norm);
            assert!((values[0] + eig.lambda_minus).abs() < 1e-12 * norm);
            let (plus, minus) = pim_split(&t);
            assert!((&plus - &minus - &t.matrix).norm() < 1e-12 * norm);
            let tr = (plus.trace() - minus.trace()).re;
            assert!((tr - eig.r).abs() < 1e-12 * norm);
            total += &t.matrix;
        }
        let re_c = re.map(|x| c(x, 0.0));
        assert!((total - re_c).norm() < 1e-13);
    }
}
