//! Loop-array geometries and the analytic quasi-static impedance model.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::inductance::{
    mutual_radiation_resistance, neumann_mutual_inductance, self_inductance, skin_resistance,
    Filament, SPEED_OF_LIGHT,
};
use super::ImpedanceMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_FREQUENCY_HZ: f64 = 40.0e6;
const COPPER_CONDUCTIVITY: f64 = 5.8e7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "SISO")]
    Siso,
    #[serde(rename = "MISO-2p")]
    Miso2Planar,
    #[serde(rename = "MISO-3p")]
    Miso3Planar,
    #[serde(rename = "MISO-2c")]
    Miso2Coaxial,
    #[serde(rename = "MISO-3c")]
    Miso3Coaxial,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Siso,
        Preset::Miso2Planar,
        Preset::Miso3Planar,
        Preset::Miso2Coaxial,
        Preset::Miso3Coaxial,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Siso => "SISO",
            Preset::Miso2Planar => "MISO-2p",
            Preset::Miso3Planar => "MISO-3p",
            Preset::Miso2Coaxial => "MISO-2c",
            Preset::Miso3Coaxial => "MISO-3c",
        }
    }

    pub fn n_tx(self) -> usize {
        match self {
            Preset::Siso => 1,
            Preset::Miso2Planar | Preset::Miso2Coaxial => 2,
            Preset::Miso3Planar | Preset::Miso3Coaxial => 3,
        }
    }

    pub fn is_miso(self) -> bool {
        self.n_tx() > 1
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown preset '{s}' (expected SISO, MISO-2p, MISO-3p, MISO-2c or MISO-3c)"
                ))
            })
    }
}

/// Transmitter loops plus a receiver loop placed at distance `d` and angle
/// `θ` from the origin in the xz-plane. All loops are parallel to the xy-plane
/// and share one loop and wire radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    /// Transmitter loop centres (m).
    pub transmitters: Vec<[f64; 3]>,
    pub loop_radius: f64,
    pub wire_radius: f64,
    pub conductivity: f64,
    pub receiver_distance: f64,
    /// Radians from the z-axis towards +x.
    pub receiver_angle: f64,
    /// Include the off-diagonal radiation resistance between loops.
    #[serde(default = "default_true")]
    pub mutual_radiation: bool,
}

fn default_true() -> bool {
    true
}

impl GeometrySpec {
    /// Preset array at `frequency_hz` with the receiver at `d_over_lambda`
    /// wavelengths and angle `theta` (radians).
    pub fn preset(preset: Preset, frequency_hz: f64, d_over_lambda: f64, theta: f64) -> Self {
        let lambda = SPEED_OF_LIGHT / frequency_hz;
        let loop_radius = lambda / 100.0;
        let wire_radius = loop_radius / 10.0;
        // Side-by-side loops sit with their wires just touching.
        let dx = 2.0 * (loop_radius + wire_radius);
        let dz = lambda / 100.0;
        let transmitters = match preset {
            Preset::Siso => vec![[0.0, 0.0, 0.0]],
            Preset::Miso2Planar => vec![[-dx / 2.0, 0.0, 0.0], [dx / 2.0, 0.0, 0.0]],
            Preset::Miso3Planar => vec![[-dx, 0.0, 0.0], [0.0, 0.0, 0.0], [dx, 0.0, 0.0]],
            Preset::Miso2Coaxial => vec![[0.0, 0.0, -dz / 2.0], [0.0, 0.0, dz / 2.0]],
            Preset::Miso3Coaxial => vec![[0.0, 0.0, -dz], [0.0, 0.0, 0.0], [0.0, 0.0, dz]],
        };
        Self {
            preset: Some(preset),
            transmitters,
            loop_radius,
            wire_radius,
            conductivity: COPPER_CONDUCTIVITY,
            receiver_distance: d_over_lambda * lambda,
            receiver_angle: theta,
            mutual_radiation: true,
        }
    }

    pub fn receiver_position(&self) -> [f64; 3] {
        let (s, c) = self.receiver_angle.sin_cos();
        [self.receiver_distance * s, 0.0, self.receiver_distance * c]
    }

    /// All loop centres, receiver last.
    pub fn positions(&self) -> Vec<[f64; 3]> {
        let mut all = self.transmitters.clone();
        all.push(self.receiver_position());
        all
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |x: f64| x.is_finite();
        if !(finite(self.loop_radius) && self.loop_radius > 0.0) {
            return Err(Error::Geometry(format!("loop radius {}", self.loop_radius)));
        }
        if !(finite(self.wire_radius) && self.wire_radius > 0.0 && self.wire_radius < self.loop_radius) {
            return Err(Error::Geometry(format!(
                "wire radius {} must lie in (0, loop radius)",
                self.wire_radius
            )));
        }
        if !(finite(self.conductivity) && self.conductivity > 0.0) {
            return Err(Error::Geometry(format!("conductivity {}", self.conductivity)));
        }
        if !(finite(self.receiver_distance) && self.receiver_distance > 0.0) {
            return Err(Error::Geometry(format!(
                "receiver distance {} must be positive",
                self.receiver_distance
            )));
        }
        if !finite(self.receiver_angle) {
            return Err(Error::Geometry("receiver angle is not finite".into()));
        }
        if self.transmitters.is_empty() {
            return Err(Error::Geometry("at least one transmitter is required".into()));
        }
        let loops = self.filaments();
        for (i, a) in loops.iter().enumerate() {
            if a.center.iter().any(|x| !x.is_finite()) {
                return Err(Error::Geometry(format!("loop {i} has a non-finite position")));
            }
            for (j, b) in loops.iter().enumerate().take(i) {
                if a.center == b.center {
                    return Err(Error::Geometry(format!("loops {j} and {i} coincide")));
                }
                let gap = a.clearance(b);
                if gap < 2.0 * self.wire_radius * (1.0 - 1e-9) {
                    return Err(Error::Geometry(format!(
                        "loops {j} and {i} overlap (clearance {gap:e} m < two wire radii)"
                    )));
                }
            }
        }
        Ok(())
    }

    fn filaments(&self) -> Vec<Filament> {
        self.positions()
            .into_iter()
            .map(|c| Filament::new(c, self.loop_radius))
            .collect()
    }
}

/// Quasi-static impedance matrix of the loop array: diagonal `R + jωL_self`,
/// off-diagonal `jωM` (Neumann) plus, optionally, mutual radiation resistance.
pub fn build_loop_system(geometry: &GeometrySpec, frequency_hz: f64) -> Result<ImpedanceMatrix> {
    if !(frequency_hz.is_finite() && frequency_hz > 0.0) {
        return Err(Error::InvalidArgument(format!("frequency {frequency_hz} Hz")));
    }
    geometry.validate()?;
    let omega = 2.0 * std::f64::consts::PI * frequency_hz;
    let wavelength = SPEED_OF_LIGHT / frequency_hz;
    let loops = geometry.filaments();
    let n = loops.len();

    let r_self = skin_resistance(geometry.loop_radius, geometry.wire_radius, geometry.conductivity, omega)
        + mutual_radiation_resistance(&loops[0], &loops[0], wavelength);
    let l_self = self_inductance(geometry.loop_radius, geometry.wire_radius);

    let mut z = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for i in 0..n {
        z[(i, i)] = Complex64::new(r_self, omega * l_self);
        for j in 0..i {
            let m = neumann_mutual_inductance(&loops[i], &loops[j]);
            let r = if geometry.mutual_radiation {
                mutual_radiation_resistance(&loops[i], &loops[j], wavelength)
            } else {
                0.0
            };
            let zij = Complex64::new(r, omega * m);
            z[(i, j)] = zij;
            z[(j, i)] = zij;
        }
    }
    ImpedanceMatrix::new(z, frequency_hz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::inductance::radiation_resistance;
    use crate::linalg::min_eigenvalue;

    fn lambda() -> f64 {
        SPEED_OF_LIGHT / DEFAULT_FREQUENCY_HZ
    }

    #[test]
    fn preset_names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
            let json = serde_json::to_string(&p).unwrap();
            assert_eq!(json, format!("\"{}\"", p.name()));
        }
        assert!("MISO-4x".parse::<Preset>().is_err());
    }

    #[test]
    fn diagonal_matches_loss_and_inductance_formulas() {
        let g = GeometrySpec::preset(Preset::Siso, DEFAULT_FREQUENCY_HZ, 0.1, 0.0);
        let z = build_loop_system(&g, DEFAULT_FREQUENCY_HZ).unwrap();
        let omega = z.omega();
        let expected_r = skin_resistance(g.loop_radius, g.wire_radius, g.conductivity, omega)
            + radiation_resistance(g.loop_radius, lambda());
        let expected_x = omega * self_inductance(g.loop_radius, g.wire_radius);
        for i in 0..2 {
            assert!((z.entries()[(i, i)].re - expected_r).abs() < 1e-12 * expected_r);
            assert!((z.entries()[(i, i)].im - expected_x).abs() < 1e-12 * expected_x);
        }
    }

    #[test]
    fn coaxial_presets_are_passive() {
        for p in [Preset::Miso2Coaxial, Preset::Miso3Coaxial] {
            let g = GeometrySpec::preset(p, DEFAULT_FREQUENCY_HZ, 0.1, 0.0);
            let z = build_loop_system(&g, DEFAULT_FREQUENCY_HZ).unwrap();
            assert!(min_eigenvalue(&z.resistance()) > 0.0);
            assert_eq!(z.n_ports(), p.n_tx() + 1);
        }
    }

    #[test]
    fn rejects_coincident_and_overlapping_loops() {
        let mut g = GeometrySpec::preset(Preset::Miso2Coaxial, DEFAULT_FREQUENCY_HZ, 0.1, 0.0);
        g.transmitters[1] = g.transmitters[0];
        assert!(matches!(build_loop_system(&g, DEFAULT_FREQUENCY_HZ), Err(Error::Geometry(_))));
        g.transmitters[1] = [g.transmitters[0][0], 0.0, g.transmitters[0][2] + g.wire_radius];
        assert!(matches!(build_loop_system(&g, DEFAULT_FREQUENCY_HZ), Err(Error::Geometry(_))));
        let mut g = GeometrySpec::preset(Preset::Siso, DEFAULT_FREQUENCY_HZ, 0.1, 0.0);
        g.receiver_distance = 0.0;
        assert!(build_loop_system(&g, DEFAULT_FREQUENCY_HZ).is_err());
        g.receiver_distance = 1.0;
        g.wire_radius = g.loop_radius;
        assert!(build_loop_system(&g, DEFAULT_FREQUENCY_HZ).is_err());
    }

    #[test]
    fn receiver_lies_in_xz_plane() {
        let g = GeometrySpec::preset(Preset::Siso, DEFAULT_FREQUENCY_HZ, 0.1, std::f64::consts::FRAC_PI_2);
        let p = g.receiver_position();
        assert!((p[0] - 0.1 * lambda()).abs() < 1e-15);
        assert_eq!(p[1], 0.0);
        assert!(p[2].abs() < 1e-15);
    }

    #[test]
    fn spec_json_round_trip() {
        let g = GeometrySpec::preset(Preset::Miso3Planar, DEFAULT_FREQUENCY_HZ, 0.2, 0.3);
        let back: GeometrySpec = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
        assert_eq!(back, g);
    }
}
