//! End-to-end runs through the public simulation API.

use ftdrive::converter::Device;
use ftdrive::sim::{presets, run_scenario};

#[test]
fn healthy_drive_settles_and_stays_balanced() {
    let out = run_scenario::<f64>(&presets::healthy()).unwrap();
    let s = &out.summary;
    assert!(s.aborted.is_none());
    assert!(s.detections.is_empty());
    assert_eq!(s.final_mode, "normal");
    let settle = s.speed_settle_time_s.expect("speed settles");
    assert!(settle < 1.0, "{settle}");
    let w = s.analysis.prefault.as_ref().unwrap();
    assert!(w.negative_ratio < 0.01);
    assert!((w.speed_mean - presets::RATED_SPEED).abs() < 1.0);
    assert!((w.torque_mean - presets::RATED_LOAD).abs() < 0.5);
    for r in &out.trace {
        assert!((r.ia + r.ib + r.ic).abs() < 1e-9);
        assert_eq!(r.i_mid, 0.0);
    }
}

#[test]
fn open_switch_reconfigures_onto_remaining_legs() {
    let out = run_scenario::<f64>(&presets::open_switch(Device::S3)).unwrap();
    let s = &out.summary;
    assert_eq!(s.detections.len(), 1);
    assert_eq!(s.detections[0].device, "S3");
    assert_eq!(s.final_mode, "postfault:c");
    let last = out.trace.last().unwrap();
    assert_eq!(last.ic, 0.0);
    // neutral path carries the remaining phases' sum
    assert!((last.i_mid + last.ia + last.ib).abs() < 1e-9);
    assert!(last.health.contains('O'));
}

#[test]
fn delay_compensation_reduces_torque_ripple() {
    let ripple = |comp| {
        let out = run_scenario::<f64>(&presets::slow_control(comp)).unwrap();
        out.summary.analysis.prefault.as_ref().unwrap().torque_ripple_std
    };
    let (with, without) = (ripple(true), ripple(false));
    assert!(with < 0.6 * without, "{with} vs {without}");
}

#[test]
fn dcdc_switch_fault_swaps_in_the_redundant_switch() {
    let out = run_scenario::<f64>(&presets::dcdc_fault()).unwrap();
    let s = &out.summary;
    assert!(s.aborted.is_none());
    assert_eq!(s.final_mode, "normal");
    assert!(!s.actions.is_empty());
    let last = out.trace.last().unwrap();
    assert!((last.v_dc1 + last.v_dc2 - 300.0).abs() < 15.0);
}
