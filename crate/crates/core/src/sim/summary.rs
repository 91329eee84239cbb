//! Run summary written next to the trace.

use serde::{Deserialize, Serialize};

use super::analysis::WindowAnalysis;
use crate::converter::Leg;
use crate::fault::{Action, FaultKind, Transition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedAction {
    pub time: f64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub time: f64,
    pub device: String,
    pub kind: FaultKind,
    /// Injection time of the matching fault, if one was scheduled.
    pub fault_time: Option<f64>,
    pub latency_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuseBlow {
    pub leg: Leg,
    pub time: f64,
    /// Continuous shoot-through time before the element opened.
    pub shoot_through_s: f64,
    /// Melting time predicted by the closed-form Joule integral.
    pub predicted_melt_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortRecord {
    pub step: u64,
    pub time: f64,
    pub reason: String,
    pub mode: String,
    pub health: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SummaryAnalysis {
    pub prefault: Option<WindowAnalysis>,
    pub postfault: Option<WindowAnalysis>,
    pub remaining_phase_ratio: Option<f64>,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: u32,
    pub name: String,
    pub steps: u64,
    pub records: usize,
    pub duration: f64,
    /// Speed within 5 % of the reference from this time until the first
    /// fault (or the end of the run).
    pub speed_settle_time_s: Option<f64>,
    pub final_mode: String,
    pub transitions: Vec<Transition>,
    pub actions: Vec<TimedAction>,
    pub detections: Vec<Detection>,
    /// Detector windows that flagged more than one phase.
    pub multi_fault_flags: u64,
    pub fuse_blows: Vec<FuseBlow>,
    /// Steps in which a capacitor voltage was clamped at zero.
    pub clamp_events: u64,
    pub analysis: SummaryAnalysis,
    pub aborted: Option<AbortRecord>,
}

impl RunSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}
