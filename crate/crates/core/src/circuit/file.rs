//! JSON ingestion and emission of impedance matrices.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::ImpedanceMatrix;
use crate::error::{Error, Result};
use crate::linalg::{max_abs, CMatrix};

/// Relative asymmetry above which ingestion symmetrizes with a warning.
pub const ASYMMETRY_WARN: f64 = 1e-9;
/// Relative asymmetry above which ingestion fails.
pub const ASYMMETRY_REJECT: f64 = 1e-3;

/// On-disk schema: row-major real and imaginary parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpedanceFile {
    pub frequency_hz: f64,
    pub n_ports: usize,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

/// A validated matrix plus what ingestion had to do to it.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub matrix: ImpedanceMatrix,
    /// `max|Zᵢⱼ − Zⱼᵢ| / max|Zᵢⱼ|` of the raw data.
    pub asymmetry: f64,
    pub symmetrized: bool,
}

impl ImpedanceFile {
    pub fn from_matrix(z: &ImpedanceMatrix) -> Self {
        let n = z.n_ports();
        let rows = |f: fn(&Complex64) -> f64| {
            (0..n)
                .map(|i| (0..n).map(|j| f(&z.entries()[(i, j)])).collect())
                .collect()
        };
        Self {
            frequency_hz: z.frequency_hz(),
            n_ports: n,
            re: rows(|c| c.re),
            im: rows(|c| c.im),
        }
    }

    pub fn ingest(&self) -> Result<Ingested> {
        let n = self.n_ports;
        if n == 0 {
            return Err(Error::Schema("n_ports must be at least 1".into()));
        }
        for (name, rows) in [("re", &self.re), ("im", &self.im)] {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(Error::Schema(format!("'{name}' must be a {n}×{n} array")));
            }
        }
        let raw = CMatrix::from_fn(n, n, |i, j| Complex64::new(self.re[i][j], self.im[i][j]));
        let scale = max_abs(&raw);
        let mut defect = 0.0f64;
        for i in 0..n {
            for j in 0..i {
                defect = defect.max((raw[(i, j)] - raw[(j, i)]).norm());
            }
        }
        let asymmetry = if scale > 0.0 { defect / scale } else { 0.0 };
        if asymmetry > ASYMMETRY_REJECT {
            return Err(Error::Asymmetric(asymmetry));
        }
        if asymmetry > ASYMMETRY_WARN {
            log::warn!("impedance matrix asymmetric by {asymmetry:e} (relative); symmetrizing");
        }
        let symmetrized = defect > 0.0;
        let entries = if symmetrized {
            (&raw + raw.transpose()) * Complex64::new(0.5, 0.0)
        } else {
            raw
        };
        Ok(Ingested {
            matrix: ImpedanceMatrix::new(entries, self.frequency_hz)?,
            asymmetry,
            symmetrized,
        })
    }
}

pub fn load_impedance_file(path: impl AsRef<Path>) -> Result<ImpedanceMatrix> {
    let text = fs::read_to_string(path)?;
    let file: ImpedanceFile =
        serde_json::from_str(&text).map_err(|e| Error::Schema(e.to_string()))?;
    Ok(file.ingest()?.matrix)
}

pub fn save_impedance_file(z: &ImpedanceMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&ImpedanceFile::from_matrix(z))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(re: [[f64; 2]; 2], im: [[f64; 2]; 2]) -> ImpedanceFile {
        ImpedanceFile {
            frequency_hz: 40e6,
            n_ports: 2,
            re: re.iter().map(|r| r.to_vec()).collect(),
            im: im.iter().map(|r| r.to_vec()).collect(),
        }
    }

    #[test]
    fn accepts_well_formed_two_port() {
        let got = file([[1.0, 0.0], [0.0, 1.0]], [[10.0, 2.0], [2.0, 10.0]]).ingest().unwrap();
        assert_eq!(got.matrix.n_ports(), 2);
        assert!(!got.symmetrized);
    }

    #[test]
    fn slight_asymmetry_is_symmetrized() {
        let got = file([[1.0, 0.0], [0.0, 1.0]], [[10.0, 2.0], [2.0 + 1e-5, 10.0]]).ingest().unwrap();
        assert!(got.symmetrized);
        let scale = 101.0f64.sqrt();
        assert!((got.asymmetry - 1e-5 / scale).abs() < 1e-12);
        assert!(got.asymmetry > ASYMMETRY_WARN && got.asymmetry < ASYMMETRY_REJECT);
        let z = got.matrix.entries();
        assert_eq!(z[(0, 1)], z[(1, 0)]);
        assert!((z[(0, 1)].im - (2.0 + 0.5e-5)).abs() < 1e-15);
    }

    #[test]
    fn gross_asymmetry_is_rejected() {
        let err = file([[1.0, 0.0], [0.0, 1.0]], [[10.0, 2.0], [3.0, 10.0]]).ingest().unwrap_err();
        assert!(matches!(err, Error::Asymmetric(_)));
    }

    #[test]
    fn non_passive_names_eigenvalue() {
        let err = file([[1.0, 3.0], [3.0, 1.0]], [[0.0; 2]; 2]).ingest().unwrap_err();
        match err {
            Error::NotPassive { eigenvalue, .. } => assert!((eigenvalue + 2.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        assert!(err_text(file([[1.0, 3.0], [3.0, 1.0]], [[0.0; 2]; 2])).contains("-2"));
    }

    fn err_text(f: ImpedanceFile) -> String {
        f.ingest().unwrap_err().to_string()
    }

    #[test]
    fn schema_violations() {
        let mut f = file([[1.0, 0.0], [0.0, 1.0]], [[0.0; 2]; 2]);
        f.n_ports = 3;
        assert!(matches!(f.ingest(), Err(Error::Schema(_))));
        let extra = r#"{"frequency_hz":1,"n_ports":1,"re":[[1]],"im":[[0]],"x":0}"#;
        assert!(serde_json::from_str::<ImpedanceFile>(extra).is_err());
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let f = file([[0.123456789012345678, 1e-17], [1e-17, 3.0]], [[10.0 / 3.0, -2.0 / 7.0], [-2.0 / 7.0, 1e5]]);
        let z = f.ingest().unwrap().matrix;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.json");
        save_impedance_file(&z, &path).unwrap();
        assert_eq!(load_impedance_file(&path).unwrap(), z);
    }
}
