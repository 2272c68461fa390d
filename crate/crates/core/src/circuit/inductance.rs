//! Quasi-static loop physics: Neumann mutual inductance, self inductance and
//! loss resistances of thin circular loops lying parallel to the xy-plane.

use std::f64::consts::PI;

use crate::quadrature::{self, Tolerance};

/// Vacuum permeability (H/m).
pub const MU0: f64 = 4.0e-7 * PI;
/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// A single-turn circular filament parallel to the xy-plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Filament {
    pub center: [f64; 3],
    pub radius: f64,
}

impl Filament {
    pub fn new(center: [f64; 3], radius: f64) -> Self {
        Self { center, radius }
    }

    fn point(&self, phi: f64) -> [f64; 3] {
        [
            self.center[0] + self.radius * phi.cos(),
            self.center[1] + self.radius * phi.sin(),
            self.center[2],
        ]
    }

    /// Shortest distance between the two filaments.
    pub fn clearance(&self, other: &Filament) -> f64 {
        let dx = other.center[0] - self.center[0];
        let dy = other.center[1] - self.center[1];
        let dz = other.center[2] - self.center[2];
        let lateral = dx.hypot(dy);
        let in_plane = (lateral - self.radius - other.radius)
            .max((self.radius - other.radius).abs() - lateral)
            .max(0.0);
        in_plane.hypot(dz)
    }
}

/// Relative tolerance of the outer Neumann quadrature.
pub const NEUMANN_RTOL: f64 = 1e-8;

/// Mutual inductance (H) by adaptive quadrature of the Neumann double line
/// integral `μ₀/4π ∮∮ dl₁·dl₂ / |r₁ − r₂|`.
pub fn neumann_mutual_inductance(a: &Filament, b: &Filament) -> f64 {
    let span = distance(&a.center, &b.center) + a.radius + b.radius;
    // Integrand magnitude is bounded by r₁r₂/clearance; the absolute floors
    // only matter where the coupling itself is near a zero crossing.
    let scale = a.radius * b.radius / span;
    let inner_tol = Tolerance::new(1e-11, 1e-14 * scale);
    let outer_tol = Tolerance::new(NEUMANN_RTOL, 1e-12 * scale);
    let integral = quadrature::integrate(
        |phi1| {
            let p1 = a.point(phi1);
            quadrature::integrate(
                |phi2| {
                    let p2 = b.point(phi2);
                    (phi1 - phi2).cos() / distance(&p1, &p2)
                },
                0.0,
                2.0 * PI,
                inner_tol,
            )
            .value
        },
        0.0,
        2.0 * PI,
        outer_tol,
    );
    MU0 / (4.0 * PI) * a.radius * b.radius * integral.value
}

/// External self inductance of a thin loop, `μ₀ r (ln(8r/a) − 2)`.
pub fn self_inductance(loop_radius: f64, wire_radius: f64) -> f64 {
    MU0 * loop_radius * ((8.0 * loop_radius / wire_radius).ln() - 2.0)
}

/// Skin-effect loss resistance `(r/a)·√(ωμ₀/(2σ))`.
pub fn skin_resistance(loop_radius: f64, wire_radius: f64, conductivity: f64, omega: f64) -> f64 {
    loop_radius / wire_radius * (omega * MU0 / (2.0 * conductivity)).sqrt()
}

/// Radiation resistance of an electrically small loop, `20π²(C/λ)⁴`.
pub fn radiation_resistance(loop_radius: f64, wavelength: f64) -> f64 {
    let c_over_lambda = 2.0 * PI * loop_radius / wavelength;
    20.0 * PI * PI * c_over_lambda.powi(4)
}

/// Mutual radiation resistance of two small z-directed loops: the real part
/// of the retarded magnetic-dipole mutual impedance. Tends to the
/// self radiation resistance as the separation vanishes.
pub fn mutual_radiation_resistance(a: &Filament, b: &Filament, wavelength: f64) -> f64 {
    let k = 2.0 * PI / wavelength;
    // ωμ₀A₁A₂/4π, normalized so the coincident limit is exactly the
    // small-loop formula above (which rounds η₀ to 120π).
    let self_scale =
        (radiation_resistance(a.radius, wavelength) * radiation_resistance(b.radius, wavelength)).sqrt();
    let prefactor = 1.5 * self_scale / k.powi(3);
    let r = distance(&a.center, &b.center);
    let kr = k * r;
    if kr < 1e-3 {
        // Series of the closed form about r = 0.
        let cos2 = if r > 0.0 {
            let dz = b.center[2] - a.center[2];
            (dz / r).powi(2)
        } else {
            1.0
        };
        let sin2 = 1.0 - cos2;
        let b3 = 3.0 * cos2 - 1.0;
        let k3 = k.powi(3);
        return prefactor * k3 * (2.0 / 3.0 - kr * kr * (b3 / 30.0 + sin2 / 6.0));
    }
    let cos_a = (b.center[2] - a.center[2]) / r;
    let sin2 = 1.0 - cos_a * cos_a;
    let b3 = 3.0 * cos_a * cos_a - 1.0;
    prefactor
        * (kr.sin() * (k * k * sin2 / r + b3 / r.powi(3)) - b3 * k * kr.cos() / (r * r))
}

fn distance(p: &[f64; 3], q: &[f64; 3]) -> f64 {
    let d = [q[0] - p[0], q[1] - p[1], q[2] - p[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Complete elliptic integrals K(m), E(m) with parameter m = k², by the
    /// arithmetic-geometric mean.
    fn elliptic_ke(m: f64) -> (f64, f64) {
        let mut a = 1.0;
        let mut g = (1.0 - m).sqrt();
        let mut c_sum = 0.5 * m;
        let mut pow2 = 0.5;
        for _ in 0..60 {
            let c = 0.5 * (a - g);
            let an = 0.5 * (a + g);
            g = (a * g).sqrt();
            a = an;
            pow2 *= 2.0;
            c_sum += pow2 * c * c;
            if c.abs() < 1e-17 {
                break;
            }
        }
        let k = PI / (2.0 * a);
        (k, k * (1.0 - c_sum))
    }

    /// Maxwell's closed form for coaxial circular filaments.
    fn coaxial_mutual(r1: f64, r2: f64, h: f64) -> f64 {
        let m = 4.0 * r1 * r2 / ((r1 + r2).powi(2) + h * h);
        let k = m.sqrt();
        let (kk, ee) = elliptic_ke(m);
        MU0 * (r1 * r2).sqrt() * ((2.0 / k - k) * kk - 2.0 / k * ee)
    }

    #[test]
    fn elliptic_reference_values() {
        let (k, e) = elliptic_ke(0.5);
        assert!((k - 1.854_074_677_301_372).abs() < 1e-14);
        assert!((e - 1.350_643_881_047_675_5).abs() < 1e-14);
    }

    #[test]
    fn neumann_matches_maxwell_coaxial_formula() {
        for &(r1, r2, h) in &[(0.075, 0.075, 0.075), (0.075, 0.05, 0.3), (0.1, 0.075, 0.02)] {
            let a = Filament::new([0.0, 0.0, 0.0], r1);
            let b = Filament::new([0.0, 0.0, h], r2);
            let numeric = neumann_mutual_inductance(&a, &b);
            let exact = coaxial_mutual(r1, r2, h);
            assert!(((numeric - exact) / exact).abs() < 1e-8, "{numeric} vs {exact}");
        }
    }

    #[test]
    fn mirror_separation_gives_same_coupling() {
        let a = Filament::new([0.0, 0.0, 0.0], 0.075);
        let up = Filament::new([0.0, 0.0, 0.2], 0.075);
        let down = Filament::new([0.0, 0.0, -0.2], 0.075);
        let m_up = neumann_mutual_inductance(&a, &up);
        let m_down = neumann_mutual_inductance(&a, &down);
        assert!(((m_up - m_down) / m_up).abs() < 1e-12);
    }

    #[test]
    fn self_inductance_matches_offset_filament_integral() {
        // The external inductance equals the coupling of the loop to a copy
        // displaced by one wire radius.
        let r = 0.075;
        let wire = r / 10.0;
        let a = Filament::new([0.0, 0.0, 0.0], r);
        let b = Filament::new([0.0, 0.0, wire], r);
        let numeric = neumann_mutual_inductance(&a, &b);
        let closed = self_inductance(r, wire);
        assert!(((numeric - closed) / closed).abs() < 0.02, "{numeric} vs {closed}");
    }

    #[test]
    fn mutual_radiation_resistance_limit_is_self_value() {
        let lambda = SPEED_OF_LIGHT / 40e6;
        let r = lambda / 100.0;
        let a = Filament::new([0.0, 0.0, 0.0], r);
        let self_r = radiation_resistance(r, lambda);
        for centre in [[0.0, 0.0, 0.0], [1e-6, 0.0, 0.0], [0.0, 0.0, 1e-6]] {
            let b = Filament::new(centre, r);
            let mutual = mutual_radiation_resistance(&a, &b, lambda);
            assert!(((mutual - self_r) / self_r).abs() < 1e-9, "{mutual} vs {self_r}");
        }
        // Continuity across the series / closed-form switch.
        let kr_switch = 1e-3 * lambda / (2.0 * PI);
        for dir in [[1.0, 0.0, 0.0], [0.6, 0.0, 0.8]] {
            let below = Filament::new([dir[0] * kr_switch * 0.999, 0.0, dir[2] * kr_switch * 0.999], r);
            let above = Filament::new([dir[0] * kr_switch * 1.001, 0.0, dir[2] * kr_switch * 1.001], r);
            let lo = mutual_radiation_resistance(&a, &below, lambda);
            let hi = mutual_radiation_resistance(&a, &above, lambda);
            assert!(((lo - hi) / self_r).abs() < 1e-6, "{lo} vs {hi}");
        }
    }

    #[test]
    fn clearance_of_coplanar_and_stacked_loops() {
        let a = Filament::new([0.0, 0.0, 0.0], 1.0);
        assert!((a.clearance(&Filament::new([3.0, 0.0, 0.0], 1.0)) - 1.0).abs() < 1e-15);
        assert!((a.clearance(&Filament::new([0.0, 0.0, 0.5], 1.0)) - 0.5).abs() < 1e-15);
        assert!((a.clearance(&Filament::new([0.0, 0.0, 0.0], 0.25)) - 0.75).abs() < 1e-15);
    }
}
