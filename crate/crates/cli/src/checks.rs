//! Pass/fail thresholds applied by `--check`.

use ftdrive::fault::FaultTarget;
use ftdrive::sim::{ComparisonReport, RunSummary, Scenario, WindowAnalysis};

pub const HEALTHY_NEGATIVE_RATIO: f64 = 0.01;
pub const POSTFAULT_NEGATIVE_RATIO: f64 = 0.05;
pub const MAX_CIRCULARITY: f64 = 1.10;
pub const MAX_FLUX_ERROR: f64 = 0.02;
/// Accepted band for the remaining-phase amplitude ratio around √3.
pub const REMAINING_RATIO_BAND: [f64; 2] = [1.64, 1.78];

fn flux_failures(label: &str, w: &WindowAnalysis, out: &mut Vec<String>) {
    if !(w.flux_circularity <= MAX_CIRCULARITY) {
        out.push(format!("{label}: flux circularity {:.4} > {MAX_CIRCULARITY}", w.flux_circularity));
    }
    if !(w.flux_mean_error <= MAX_FLUX_ERROR) {
        out.push(format!("{label}: flux magnitude error {:.4} > {MAX_FLUX_ERROR}", w.flux_mean_error));
    }
}

pub fn healthy_failures(w: &WindowAnalysis) -> Vec<String> {
    let mut out = Vec::new();
    if !(w.negative_ratio <= HEALTHY_NEGATIVE_RATIO) {
        out.push(format!("prefault: negative-sequence ratio {:.4} > {HEALTHY_NEGATIVE_RATIO}", w.negative_ratio));
    }
    flux_failures("prefault", w, &mut out);
    out
}

pub fn postfault_failures(w: &WindowAnalysis) -> Vec<String> {
    let mut out = Vec::new();
    if !(w.negative_ratio <= POSTFAULT_NEGATIVE_RATIO) {
        out.push(format!("postfault: negative-sequence ratio {:.4} > {POSTFAULT_NEGATIVE_RATIO}", w.negative_ratio));
    }
    flux_failures("postfault", w, &mut out);
    out
}

fn ratio_failures(ratio: f64, out: &mut Vec<String>) {
    let [lo, hi] = REMAINING_RATIO_BAND;
    if !(lo..=hi).contains(&ratio) {
        out.push(format!("remaining-phase amplitude ratio {ratio:.4} outside [{lo}, {hi}]"));
    }
}

pub fn comparison_failures(c: &ComparisonReport) -> Vec<String> {
    let mut out = healthy_failures(&c.prefault);
    out.extend(postfault_failures(&c.postfault));
    ratio_failures(c.remaining_phase_ratio, &mut out);
    out
}

/// Checks a finished run against what its scenario should achieve. The
/// postfault thresholds only apply when the postfault strategy is enabled.
pub fn summary_failures(s: &Scenario, sum: &RunSummary) -> Vec<String> {
    let mut out: Vec<String> = sum.analysis.errors.iter().map(|e| format!("analysis: {e}")).collect();
    if let Some(a) = &sum.aborted {
        out.push(format!("run aborted: {}", a.reason));
    }
    if let Some(w) = &sum.analysis.prefault {
        out.extend(healthy_failures(w));
    }
    let inverter_faults: Vec<_> =
        s.faults.events.iter().filter(|e| matches!(e.target, FaultTarget::Inverter(_))).collect();
    if inverter_faults.is_empty() || !s.faults.reconfigure {
        return out;
    }
    for e in &inverter_faults {
        let name = e.target.to_string();
        if !sum.detections.iter().any(|d| d.device == name && d.time >= e.time) {
            out.push(format!("fault on {name} at {} s was never detected", e.time));
        }
    }
    if sum.detections.iter().any(|d| d.fault_time.is_none()) {
        out.push("detection without a matching fault".into());
    }
    if let Some(w) = &sum.analysis.postfault {
        out.extend(postfault_failures(w));
    }
    if let Some(r) = sum.analysis.remaining_phase_ratio {
        ratio_failures(r, &mut out);
    }
    out
}
