//! Post-processing of traces: fundamental phasors, symmetrical components,
//! flux locus shape and speed settling.

use std::f64::consts::PI;

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::trace::TraceRecord;
use crate::fault::fundamental_coefficients;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("window [{0}, {1}] holds too few samples")]
    EmptyWindow(f64, f64),
    #[error("flux does not rotate within the window")]
    NoRotation,
    #[error("flux angle covers {0:.3} rad, less than one revolution")]
    InsufficientCoverage(f64),
}

/// Fundamental phasor `A·e^{jφ}` of exactly one period of uniform samples,
/// for `x[k] = A·cos(2πk/n + φ)`.
pub fn fundamental_phasor(samples: &[f64]) -> Complex<f64> {
    let (a1, b1) = fundamental_coefficients(samples);
    Complex::new(a1, -b1)
}

/// Fundamental phasor at `freq_hz` of samples `(t, x)`, truncated to a
/// whole number of periods from the first sample.
pub fn window_phasor(times: &[f64], values: &[f64], freq_hz: f64) -> Option<Complex<f64>> {
    let t0 = *times.first()?;
    let span = times.last()? - t0;
    let periods = (span * freq_hz).floor();
    if periods < 1.0 {
        return None;
    }
    let end = t0 + periods / freq_hz;
    let w = 2.0 * PI * freq_hz;
    let (mut a, mut b, mut n) = (0.0, 0.0, 0usize);
    for (&t, &x) in times.iter().zip(values) {
        if t >= end {
            break;
        }
        a += x * (w * t).cos();
        b += x * (w * t).sin();
        n += 1;
    }
    let scale = 2.0 / n as f64;
    Some(Complex::new(a * scale, -b * scale))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceComponents {
    pub positive: Complex<f64>,
    pub negative: Complex<f64>,
    pub zero: Complex<f64>,
}

fn rot120() -> Complex<f64> {
    Complex::from_polar(1.0, 2.0 * PI / 3.0)
}

/// Symmetrical components of a phasor triple.
pub fn sequence_components(p: [Complex<f64>; 3]) -> SequenceComponents {
    let a = rot120();
    let a2 = a * a;
    SequenceComponents {
        positive: (p[0] + a * p[1] + a2 * p[2]) / 3.0,
        negative: (p[0] + a2 * p[1] + a * p[2]) / 3.0,
        zero: (p[0] + p[1] + p[2]) / 3.0,
    }
}

/// Phasor triple rebuilt from its symmetrical components.
pub fn phasors_from_sequence(s: &SequenceComponents) -> [Complex<f64>; 3] {
    let a = rot120();
    let a2 = a * a;
    [
        s.zero + s.positive + s.negative,
        s.zero + a2 * s.positive + a * s.negative,
        s.zero + a * s.positive + a2 * s.negative,
    ]
}

/// Unwrapped angle sequence of a rotating vector.
fn unwrapped_angles(v: &[Complex<f64>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len());
    let mut offset = 0.0;
    let mut prev: Option<f64> = None;
    for z in v {
        let a = z.arg();
        if let Some(p) = prev {
            let d = a - p;
            if d > PI {
                offset -= 2.0 * PI;
            } else if d < -PI {
                offset += 2.0 * PI;
            }
        }
        prev = Some(a);
        out.push(a + offset);
    }
    out
}

/// Rotation frequency (Hz) from a least-squares fit of the unwrapped angle.
pub fn rotation_frequency(times: &[f64], v: &[Complex<f64>]) -> Option<f64> {
    if times.len() < 3 || times.len() != v.len() {
        return None;
    }
    let ang = unwrapped_angles(v);
    let n = times.len() as f64;
    let mt = times.iter().sum::<f64>() / n;
    let ma = ang.iter().sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (t, a) in times.iter().zip(&ang) {
        num += (t - mt) * (a - ma);
        den += (t - mt) * (t - mt);
    }
    if den <= 0.0 {
        return None;
    }
    let f = num / den / (2.0 * PI);
    (f.abs() > 1e-9).then_some(f.abs())
}

/// Ratio of largest to smallest flux magnitude over at least one full
/// revolution.
pub fn flux_circularity(v: &[Complex<f64>]) -> Result<f64, AnalysisError> {
    let ang = unwrapped_angles(v);
    let (lo, hi) = ang.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| (lo.min(a), hi.max(a)));
    let coverage = if ang.is_empty() { 0.0 } else { hi - lo };
    if coverage < 2.0 * PI {
        return Err(AnalysisError::InsufficientCoverage(coverage));
    }
    let (min, max) = v.iter().fold((f64::INFINITY, 0.0f64), |(mn, mx), z| (mn.min(z.norm()), mx.max(z.norm())));
    Ok(max / min)
}

/// Time after which `|ω − ω_ref|` stays within `band` times the largest
/// reference magnitude, up to `until`.
pub fn speed_settle_time(records: &[TraceRecord], band: f64, until: f64) -> Option<f64> {
    let scale = records.iter().map(|r| r.omega_ref.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return None;
    }
    let mut settled: Option<f64> = None;
    for r in records.iter().take_while(|r| r.t <= until) {
        if (r.omega_m - r.omega_ref).abs() > band * scale {
            settled = None;
        } else if settled.is_none() {
            settled = Some(r.t);
        }
    }
    settled
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasorSummary {
    pub amplitude: f64,
    pub phase_rad: f64,
}

impl From<Complex<f64>> for PhasorSummary {
    fn from(z: Complex<f64>) -> Self {
        Self { amplitude: z.norm(), phase_rad: z.arg() }
    }
}

/// Steady-state figures over one window of a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowAnalysis {
    pub t0: f64,
    pub t1: f64,
    pub frequency_hz: f64,
    pub phases: [PhasorSummary; 3],
    pub positive_sequence: f64,
    pub negative_sequence: f64,
    pub zero_sequence: f64,
    /// `|I₋| / |I₊|`.
    pub negative_ratio: f64,
    pub flux_circularity: f64,
    /// Mean of `| |ψs| − ψ* |` relative to `ψ*`.
    pub flux_mean_error: f64,
    pub torque_mean: f64,
    pub torque_ripple_std: f64,
    pub speed_mean: f64,
}

pub fn analyze_window(records: &[TraceRecord], window: [f64; 2], flux_ref: f64) -> Result<WindowAnalysis, AnalysisError> {
    let [t0, t1] = window;
    let rows: Vec<&TraceRecord> = records.iter().filter(|r| r.t >= t0 && r.t <= t1).collect();
    if rows.len() < 16 {
        return Err(AnalysisError::EmptyWindow(t0, t1));
    }
    let times: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let flux: Vec<Complex<f64>> = rows.iter().map(|r| Complex::new(r.psis_alpha, r.psis_beta)).collect();
    let f1 = rotation_frequency(&times, &flux).ok_or(AnalysisError::NoRotation)?;
    let phase = |k: usize| {
        let vals: Vec<f64> = rows.iter().map(|r| r.currents()[k]).collect();
        window_phasor(&times, &vals, f1)
    };
    let p = match (phase(0), phase(1), phase(2)) {
        (Some(a), Some(b), Some(c)) => [a, b, c],
        _ => return Err(AnalysisError::InsufficientCoverage(2.0 * PI * f1 * (t1 - t0))),
    };
    let seq = sequence_components(p);
    let circularity = flux_circularity(&flux)?;
    let n = rows.len() as f64;
    let flux_mean_error = flux.iter().map(|z| (z.norm() - flux_ref).abs()).sum::<f64>() / n / flux_ref;
    let torque_mean = rows.iter().map(|r| r.te).sum::<f64>() / n;
    let torque_ripple_std = (rows.iter().map(|r| (r.te - torque_mean).powi(2)).sum::<f64>() / n).sqrt();
    let speed_mean = rows.iter().map(|r| r.omega_m).sum::<f64>() / n;
    let pos = seq.positive.norm();
    Ok(WindowAnalysis {
        t0,
        t1,
        frequency_hz: f1,
        phases: p.map(PhasorSummary::from),
        positive_sequence: pos,
        negative_sequence: seq.negative.norm(),
        zero_sequence: seq.zero.norm(),
        negative_ratio: if pos > 0.0 { seq.negative.norm() / pos } else { f64::INFINITY },
        flux_circularity: circularity,
        flux_mean_error,
        torque_mean,
        torque_ripple_std,
        speed_mean,
    })
}

/// Pre/post comparison of two steady-state windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub prefault: WindowAnalysis,
    pub postfault: WindowAnalysis,
    /// Postfault over prefault fundamental amplitude per phase.
    pub amplitude_ratio: [f64; 3],
    /// Mean ratio over the phases still carrying current after the fault.
    pub remaining_phase_ratio: f64,
}

pub fn compare_windows(
    records: &[TraceRecord],
    prefault: [f64; 2],
    postfault: [f64; 2],
    flux_ref: f64,
) -> Result<ComparisonReport, AnalysisError> {
    let pre = analyze_window(records, prefault, flux_ref)?;
    let post = analyze_window(records, postfault, flux_ref)?;
    let ratio: [f64; 3] = std::array::from_fn(|k| post.phases[k].amplitude / pre.phases[k].amplitude);
    let remaining: Vec<f64> = (0..3)
        .filter(|&k| post.phases[k].amplitude > 0.05 * pre.phases[k].amplitude)
        .map(|k| ratio[k])
        .collect();
    let remaining_phase_ratio =
        if remaining.is_empty() { 0.0 } else { remaining.iter().sum::<f64>() / remaining.len() as f64 };
    Ok(ComparisonReport { prefault: pre, postfault: post, amplitude_ratio: ratio, remaining_phase_ratio })
}
