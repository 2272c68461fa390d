use miso_wpt::circuit::inductance::SPEED_OF_LIGHT;
use miso_wpt::circuit::{build_loop_system, GeometrySpec, Preset, DEFAULT_FREQUENCY_HZ};
use miso_wpt::closed_form::solve_closed_form;
use miso_wpt::pipeline::PipelineOptions;
use miso_wpt::report::{run_sweep, SweepReport, SweepSpec};

fn sweep(preset: Preset) -> SweepReport {
    let report = run_sweep(&SweepSpec::new(preset), None).unwrap();
    assert_eq!(report.failures(), 0);
    report
}

#[test]
fn preset_geometry_uses_the_reference_setup() {
    assert_eq!(DEFAULT_FREQUENCY_HZ, 40e6);
    let lambda = SPEED_OF_LIGHT / 40e6;
    let g = GeometrySpec::preset(Preset::Miso3Coaxial, DEFAULT_FREQUENCY_HZ, 0.1, 0.0);
    assert!((g.loop_radius - lambda / 100.0).abs() < 1e-15);
    assert!((g.wire_radius - g.loop_radius / 10.0).abs() < 1e-15);
    assert_eq!(g.conductivity, 5.8e7);
    assert!((g.transmitters[1][2] - g.transmitters[0][2] - lambda / 100.0).abs() < 1e-15);
    let r = g.receiver_position();
    assert!((r[2] - 0.1 * lambda).abs() < 1e-15);
}

#[test]
fn siso_power_spikes_at_the_weak_coupling_angles() {
    let report = sweep(Preset::Siso);
    let power: Vec<(f64, f64)> = report.rows.iter().map(|r| (r.theta_deg, r.closed_form_powers[0])).collect();
    let broadside = power.iter().find(|p| p.0 == 0.0).unwrap().1;
    for side in [-1.0, 1.0] {
        let peak = power
            .iter()
            .filter(|p| p.0 * side > 0.0)
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert!((40.0..75.0).contains(&peak.0.abs()), "spike at {}", peak.0);
        assert!(peak.1 > 20.0 * broadside, "{} vs {broadside}", peak.1);
    }
}

#[test]
fn planar_arrays_beat_the_single_transmitter_at_every_angle() {
    let siso = sweep(Preset::Siso);
    for preset in [Preset::Miso2Planar, Preset::Miso3Planar] {
        let miso = sweep(preset);
        for (m, s) in miso.rows.iter().zip(&siso.rows) {
            assert_eq!(m.theta_deg, s.theta_deg);
            assert!(m.eta_max >= s.eta_max, "{preset} θ={}: {} < {}", m.theta_deg, m.eta_max, s.eta_max);
            assert!(m.eta >= s.eta, "{preset} θ={}: constrained {} < {}", m.theta_deg, m.eta, s.eta);
        }
    }
}

#[test]
fn some_coaxial_points_need_no_relaxation() {
    let report = sweep(Preset::Miso2Coaxial);
    assert!(report.rows.iter().any(|r| r.skipped));
    assert!(report.rows.iter().any(|r| !r.skipped));
}

#[test]
fn three_coaxial_loops_harvest_power_at_eighteen_degrees() {
    let g = GeometrySpec::preset(Preset::Miso3Coaxial, DEFAULT_FREQUENCY_HZ, 0.1, 18f64.to_radians());
    let z = build_loop_system(&g, DEFAULT_FREQUENCY_HZ).unwrap();
    let cf = solve_closed_form(&z, None).unwrap();
    assert!(cf.min_transmit_power() < 0.0);
    let res = miso_wpt::pipeline::full_pipeline(&z, cf.r_l_opt, &PipelineOptions::default()).unwrap();
    assert!(res.sdr.transmit_powers.iter().all(|&p| p >= -1e-9));
    assert!(res.delta_eta_db <= 0.0);
}
