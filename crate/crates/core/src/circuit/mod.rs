//! Impedance-matrix circuit model of a multi-transmitter, single-receiver
//! wireless power transfer system. The receiver is always the last port.

mod file;
mod geometry;
pub mod inductance;

pub use file::{load_impedance_file, save_impedance_file, ImpedanceFile, Ingested};
pub use geometry::{build_loop_system, GeometrySpec, Preset, DEFAULT_FREQUENCY_HZ};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, real_part, CMatrix, CVector};

/// Unloaded, reciprocal, passive impedance matrix `Z` (ohms).
#[derive(Debug, Clone, PartialEq)]
pub struct ImpedanceMatrix {
    entries: CMatrix,
    frequency_hz: f64,
}

impl ImpedanceMatrix {
    /// Validates symmetry (exact), passivity of `Z′`, `Z_t′` and `z_r′`.
    pub fn new(entries: CMatrix, frequency_hz: f64) -> Result<Self> {
        check_square(&entries)?;
        if !(frequency_hz.is_finite() && frequency_hz > 0.0) {
            return Err(Error::InvalidArgument(format!("frequency {frequency_hz} Hz")));
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidArgument("non-finite impedance entry".into()));
        }
        let n = entries.nrows();
        for i in 0..n {
            for j in 0..i {
                if entries[(i, j)] != entries[(j, i)] {
                    let scale = crate::linalg::max_abs(&entries);
                    return Err(Error::Asymmetric(
                        (entries[(i, j)] - entries[(j, i)]).norm() / scale,
                    ));
                }
            }
        }
        check_passive(&entries)?;
        Ok(Self {
            entries,
            frequency_hz,
        })
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn frequency_hz(&self) -> f64 {
        self.frequency_hz
    }

    pub fn omega(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.frequency_hz
    }

    pub fn n_ports(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_tx(&self) -> usize {
        self.n_ports() - 1
    }

    /// Real (resistive) part `Z′`.
    pub fn resistance(&self) -> DMatrix<f64> {
        real_part(&self.entries)
    }
}

fn check_square(entries: &CMatrix) -> Result<()> {
    if entries.nrows() == 0 || entries.nrows() != entries.ncols() {
        return Err(Error::Dimension(format!(
            "impedance matrix must be square and non-empty, got {}×{}",
            entries.nrows(),
            entries.ncols()
        )));
    }
    Ok(())
}

fn check_passive(entries: &CMatrix) -> Result<()> {
    let n = entries.nrows();
    let re = real_part(entries);
    let full = min_eigenvalue(&crate::linalg::symmetrize(&re));
    if !(full > 0.0) {
        return Err(Error::NotPassive {
            what: "Z′",
            eigenvalue: full,
        });
    }
    if n >= 2 {
        let zt = re.view((0, 0), (n - 1, n - 1)).into_owned();
        let tx = min_eigenvalue(&crate::linalg::symmetrize(&zt));
        if !(tx > 0.0) {
            return Err(Error::NotPassive {
                what: "Z_t′",
                eigenvalue: tx,
            });
        }
    }
    let zr = re[(n - 1, n - 1)];
    if !(zr > 0.0) {
        return Err(Error::NotPassive {
            what: "z_r′",
            eigenvalue: zr,
        });
    }
    Ok(())
}

/// Port reactances and receiver load resistance.
#[derive(Debug, Clone, PartialEq)]
pub struct Loading {
    pub reactances: Vec<f64>,
    pub load_resistance: f64,
}

impl Loading {
    pub fn new(reactances: Vec<f64>, load_resistance: f64) -> Result<Self> {
        if !(load_resistance.is_finite() && load_resistance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "load resistance must be positive, got {load_resistance}"
            )));
        }
        if reactances.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite reactance".into()));
        }
        Ok(Self {
            reactances,
            load_resistance,
        })
    }

    /// Only the receiver reactance is set; transmitter reactances are zero.
    pub fn receiver(n_ports: usize, x_r: f64, load_resistance: f64) -> Result<Self> {
        let mut reactances = vec![0.0; n_ports];
        reactances[n_ports - 1] = x_r;
        Self::new(reactances, load_resistance)
    }
}

/// `Ẑ = Z + jX + R_L` with the load at the receiver entry.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedImpedanceMatrix {
    entries: CMatrix,
    loading: Loading,
    frequency_hz: f64,
}

impl LoadedImpedanceMatrix {
    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn loading(&self) -> &Loading {
        &self.loading
    }

    pub fn load_resistance(&self) -> f64 {
        self.loading.load_resistance
    }

    pub fn n_ports(&self) -> usize {
        self.entries.nrows()
    }

    pub fn frequency_hz(&self) -> f64 {
        self.frequency_hz
    }

    /// Port voltages `v = Ẑ i`.
    pub fn voltages(&self, currents: &CVector) -> CVector {
        &self.entries * currents
    }
}

pub fn apply_loading(z: &ImpedanceMatrix, loading: &Loading) -> Result<LoadedImpedanceMatrix> {
    let n = z.n_ports();
    if loading.reactances.len() != n {
        return Err(Error::Dimension(format!(
            "{} reactances for {} ports",
            loading.reactances.len(),
            n
        )));
    }
    let loading = Loading::new(loading.reactances.clone(), loading.load_resistance)?;
    let mut entries = z.entries.clone();
    for (i, &x) in loading.reactances.iter().enumerate() {
        entries[(i, i)] += Complex64::new(0.0, x);
    }
    entries[(n - 1, n - 1)] += Complex64::new(loading.load_resistance, 0.0);
    check_passive(&entries)?;
    Ok(LoadedImpedanceMatrix {
        entries,
        loading,
        frequency_hz: z.frequency_hz,
    })
}

/// Transmitter block `Z_t`, coupling vector `z_tr` and receiver self-impedance `z_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub z_t: CMatrix,
    pub z_tr: CVector,
    pub z_r: Complex64,
}

impl Partition {
    pub fn reassemble(&self) -> CMatrix {
        let t = self.z_t.nrows();
        let mut out = CMatrix::zeros(t + 1, t + 1);
        out.view_mut((0, 0), (t, t)).copy_from(&self.z_t);
        for i in 0..t {
            out[(i, t)] = self.z_tr[i];
            out[(t, i)] = self.z_tr[i];
        }
        out[(t, t)] = self.z_r;
        out
    }

    /// `z_tr′`
    pub fn coupling_re(&self) -> DVector<f64> {
        self.z_tr.map(|z| z.re)
    }

    /// `z_tr″`
    pub fn coupling_im(&self) -> DVector<f64> {
        self.z_tr.map(|z| z.im)
    }

    /// `Z_t′`
    pub fn tx_resistance(&self) -> DMatrix<f64> {
        real_part(&self.z_t)
    }
}

pub fn partition(z: &ImpedanceMatrix) -> Result<Partition> {
    let n = z.n_ports();
    if n < 2 {
        return Err(Error::Dimension(format!(
            "partition needs at least one transmitter and a receiver, got N = {n}"
        )));
    }
    let t = n - 1;
    Ok(Partition {
        z_t: z.entries.view((0, 0), (t, t)).into_owned(),
        z_tr: z.entries.view((0, t), (t, 1)).column(0).into_owned(),
        z_r: z.entries[(t, t)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::to_complex;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn two_port() -> ImpedanceMatrix {
        let z = CMatrix::from_row_slice(2, 2, &[c(1.0, 10.0), c(0.0, 2.0), c(0.0, 2.0), c(1.0, 10.0)]);
        ImpedanceMatrix::new(z, 1e6).unwrap()
    }

    #[test]
    fn loading_adds_load_only_at_receiver() {
        let z = ImpedanceMatrix::new(CMatrix::from_element(1, 1, c(0.1, 5.0)), 1e6).unwrap();
        let loaded = apply_loading(&z, &Loading::new(vec![0.0], 1.0).unwrap()).unwrap();
        assert_eq!(loaded.entries()[(0, 0)], c(1.1, 5.0));
    }

    #[test]
    fn cancelling_reactances_zero_the_diagonal_imaginary_part() {
        let z = two_port();
        let loaded = apply_loading(&z, &Loading::new(vec![-10.0, -10.0], 3.0).unwrap()).unwrap();
        for i in 0..2 {
            assert_eq!(loaded.entries()[(i, i)].im, 0.0);
        }
        assert_eq!(loaded.entries()[(0, 1)], loaded.entries()[(1, 0)]);
    }

    #[test]
    fn nonpositive_load_is_rejected() {
        let z = two_port();
        assert!(apply_loading(&z, &Loading { reactances: vec![0.0; 2], load_resistance: 0.0 }).is_err());
        assert!(Loading::new(vec![0.0; 2], -1.0).is_err());
        assert!(apply_loading(&z, &Loading::new(vec![0.0; 3], 1.0).unwrap()).is_err());
    }

    #[test]
    fn partition_round_trip_is_exact() {
        let z = two_port();
        let p = partition(&z).unwrap();
        assert_eq!(p.z_t.shape(), (1, 1));
        assert_eq!(p.z_tr.len(), 1);
        assert_eq!(p.reassemble(), *z.entries());
        let single = ImpedanceMatrix::new(CMatrix::from_element(1, 1, c(1.0, 1.0)), 1e6).unwrap();
        assert!(matches!(partition(&single), Err(Error::Dimension(_))));
    }

    #[test]
    fn rejects_non_passive_and_asymmetric() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match ImpedanceMatrix::new(to_complex(&bad), 1e6) {
            Err(Error::NotPassive { what, eigenvalue }) => {
                assert_eq!(what, "Z′");
                assert!((eigenvalue + 1.0).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
        let asym = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 1.0), c(0.0, 1.1), c(1.0, 0.0)]);
        assert!(matches!(ImpedanceMatrix::new(asym, 1e6), Err(Error::Asymmetric(_))));
    }
}
