//! Fault injection records, open-switch detection from the normalized DC
//! component of the phase currents, first-stage inductor slope check and
//! the reconfiguration state machine.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::converter::{Device, Leg};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FaultError {
    #[error("unknown device `{0}` (expected S1..S6, Q1 or Q2)")]
    UnknownDevice(String),
    #[error("fault time must be finite and non-negative, got {0}")]
    NegativeTime(f64),
    #[error("detection latency must be non-negative, got {0}")]
    NegativeLatency(f64),
    #[error("detector window needs at least 16 samples per period, got {0}")]
    WindowTooShort(usize),
    #[error("invalid transition from {mode} on {event}")]
    InvalidTransition { mode: String, event: String },
}

/// First-stage switches; each has a redundant twin behind an isolation relay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DcdcSwitch {
    Q1,
    Q2,
}

impl DcdcSwitch {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Any switch a fault can be injected into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FaultTarget {
    Inverter(Device),
    Dcdc(DcdcSwitch),
}

impl fmt::Display for FaultTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultTarget::Inverter(d) => write!(f, "{d}"),
            FaultTarget::Dcdc(q) => write!(f, "Q{}", q.index() + 1),
        }
    }
}

impl FromStr for FaultTarget {
    type Err = FaultError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = match s {
            "Q1" => FaultTarget::Dcdc(DcdcSwitch::Q1),
            "Q2" => FaultTarget::Dcdc(DcdcSwitch::Q2),
            _ => {
                let n: usize = s
                    .strip_prefix('S')
                    .and_then(|d| d.parse().ok())
                    .filter(|n| (1..=6).contains(n))
                    .ok_or_else(|| FaultError::UnknownDevice(s.to_owned()))?;
                FaultTarget::Inverter(Device::ALL[n - 1])
            }
        };
        Ok(t)
    }
}

impl TryFrom<String> for FaultTarget {
    type Error = FaultError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<FaultTarget> for String {
    fn from(t: FaultTarget) -> String {
        t.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    OpenCircuit,
    ShortCircuit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub time: f64,
    #[serde(rename = "device")]
    pub target: FaultTarget,
    pub kind: FaultKind,
}

impl FaultEvent {
    pub fn validate(&self) -> Result<(), FaultError> {
        if !(self.time.is_finite() && self.time >= 0.0) {
            return Err(FaultError::NegativeTime(self.time));
        }
        Ok(())
    }
}

/// Time at which the short-circuit protection reports the fault.
pub fn sc_detection_event(fault: &FaultEvent, latency: f64) -> Result<f64, FaultError> {
    if !(latency >= 0.0) {
        return Err(FaultError::NegativeLatency(latency));
    }
    Ok(fault.time + latency)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Normalized DC current magnitude that flags an open switch.
    pub threshold: f64,
    pub samples_per_period: usize,
    /// Fundamental amplitude (A) below which a phase is indeterminate.
    pub epsilon_amp: f64,
    /// Short-circuit detection latency (s).
    pub sc_latency: f64,
    /// Open-switch classification is suppressed before this time (s).
    pub arm_time: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { threshold: 0.45, samples_per_period: 64, epsilon_amp: 0.2, sc_latency: 2e-6, arm_time: 0.0 }
    }
}

/// Single-bin Fourier coefficients `(A1, B1)` of one period of samples,
/// normalized so that `√(A1² + B1²)` is the fundamental peak amplitude.
pub fn fundamental_coefficients<T: Scalar>(samples: &[T]) -> (T, T) {
    let n = samples.len();
    let step = T::lit(2.0 * std::f64::consts::PI / n as f64);
    let (mut a, mut b) = (T::zero(), T::zero());
    for (m, &x) in samples.iter().enumerate() {
        let ang = step * T::lit(m as f64);
        a += x * ang.cos();
        b += x * ang.sin();
    }
    let scale = T::lit(2.0 / n as f64);
    (a * scale, b * scale)
}

/// Sliding one-period window of phase-current samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorWindow<T> {
    n: usize,
    phases: [VecDeque<T>; 3],
}

impl<T: Scalar> DetectorWindow<T> {
    pub fn new(n: usize) -> Result<Self, FaultError> {
        if n < 16 {
            return Err(FaultError::WindowTooShort(n));
        }
        let buf = || VecDeque::with_capacity(n);
        Ok(Self { n, phases: [buf(), buf(), buf()] })
    }

    pub fn len(&self) -> usize {
        self.phases[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_full(&self) -> bool {
        self.len() == self.n
    }

    pub fn push(&mut self, i_abc: [T; 3]) {
        for (buf, x) in self.phases.iter_mut().zip(i_abc) {
            if buf.len() == self.n {
                buf.pop_front();
            }
            buf.push_back(x);
        }
    }

    pub fn clear(&mut self) {
        self.phases.iter_mut().for_each(VecDeque::clear);
    }

    pub fn phase(&self, k: usize) -> Vec<T> {
        self.phases[k].iter().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseDc<T> {
    pub chi: T,
    pub avg: T,
    pub amplitude: T,
}

/// Outcome per phase: `None` when the fundamental is below `epsilon_amp`.
pub type PhaseDcResult<T> = Option<PhaseDc<T>>;

pub fn normalized_dc_phase<T: Scalar>(samples: &[T], epsilon_amp: T) -> PhaseDcResult<T> {
    let n = T::lit(samples.len() as f64);
    let avg = samples.iter().fold(T::zero(), |s, &x| s + x) / n;
    let (a1, b1) = fundamental_coefficients(samples);
    let amplitude = a1.hypot(b1);
    (amplitude >= epsilon_amp && amplitude > T::zero()).then(|| PhaseDc { chi: avg / amplitude, avg, amplitude })
}

/// Normalized DC current of each phase over a full window.
pub fn normalized_dc_current<T: Scalar>(window: &DetectorWindow<T>, epsilon_amp: T) -> Option<[PhaseDcResult<T>; 3]> {
    window.is_full().then(|| [0, 1, 2].map(|k| normalized_dc_phase(&window.phase(k), epsilon_amp)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Healthy,
    Faulty(Device),
    /// More than one phase over threshold; no single-device verdict.
    MultiFault,
}

/// Maps per-phase normalized DC currents to the faulty device: a negative
/// DC offset means the upper switch of that phase no longer conducts, a
/// positive one the lower.
pub fn classify_open_switch<T: Scalar>(phases: &[PhaseDcResult<T>; 3], threshold: T) -> Classification {
    let over: Vec<(usize, PhaseDc<T>)> =
        phases.iter().enumerate().filter_map(|(k, p)| p.filter(|p| p.chi.abs() > threshold).map(|p| (k, p))).collect();
    match over.as_slice() {
        [] => Classification::Healthy,
        [(k, p)] => {
            let leg = Leg::from_index(*k);
            Classification::Faulty(if p.avg <= T::zero() { leg.upper() } else { leg.lower() })
        }
        _ => Classification::MultiFault,
    }
}

/// Open-switch detector sampling the phase currents at fixed steps of the
/// flux angle, so one window always spans one fundamental period.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenSwitchDetector<T> {
    pub config: DetectorConfig,
    window: DetectorWindow<T>,
    last_angle: Option<T>,
    travelled: T,
}

impl<T: Scalar> OpenSwitchDetector<T> {
    pub fn new(config: DetectorConfig) -> Result<Self, FaultError> {
        Ok(Self { window: DetectorWindow::new(config.samples_per_period)?, config, last_angle: None, travelled: T::zero() })
    }

    pub fn reset(&mut self) {
        self.window.clear();
        self.last_angle = None;
        self.travelled = T::zero();
    }

    pub fn window(&self) -> &DetectorWindow<T> {
        &self.window
    }

    /// Feeds one control-instant observation; returns a classification each
    /// time a new sample completes a full window.
    pub fn observe(&mut self, t: f64, angle: T, i_abc: [T; 3]) -> Option<Classification> {
        let step = T::lit(2.0 * std::f64::consts::PI / self.config.samples_per_period as f64);
        let Some(last) = self.last_angle.replace(angle) else {
            self.window.push(i_abc);
            return None;
        };
        let pi = T::PI();
        let mut d = angle - last;
        if d > pi {
            d -= T::lit(2.0) * pi;
        } else if d < -pi {
            d += T::lit(2.0) * pi;
        }
        self.travelled += d.abs();
        let mut pushed = false;
        while self.travelled >= step {
            self.travelled -= step;
            self.window.push(i_abc);
            pushed = true;
        }
        if !pushed || t < self.config.arm_time {
            return None;
        }
        normalized_dc_current(&self.window, T::lit(self.config.epsilon_amp))
            .map(|phases| classify_open_switch(&phases, T::lit(self.config.threshold)))
    }
}

/// Least-squares slope of `(t, i)` samples; `None` with fewer than three
/// samples or no time spread.
pub fn estimate_slope<T: Scalar>(samples: &[(T, T)]) -> Option<T> {
    if samples.len() < 3 {
        return None;
    }
    let n = T::lit(samples.len() as f64);
    let tm = samples.iter().fold(T::zero(), |s, p| s + p.0) / n;
    let im = samples.iter().fold(T::zero(), |s, p| s + p.1) / n;
    let (mut sxy, mut sxx) = (T::zero(), T::zero());
    for &(t, i) in samples {
        sxy += (t - tm) * (i - im);
        sxx += (t - tm) * (t - tm);
    }
    (sxx > T::zero()).then(|| sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlopeVerdict {
    Consistent,
    OpenSuspect,
    ShortSuspect,
}

/// Instantaneous comparison of inductor slope against the gate command.
pub fn dcdc_slope_check<T: Scalar>(slope: T, gate_on: bool, deadband: T) -> SlopeVerdict {
    if gate_on && slope <= -deadband {
        SlopeVerdict::OpenSuspect
    } else if !gate_on && slope >= deadband {
        SlopeVerdict::ShortSuspect
    } else {
        SlopeVerdict::Consistent
    }
}

/// Declares a fault once an inconsistent slope persists for a full
/// switching period. Open and short suspicion are tracked separately and
/// each is cleared only by a consistent sample in its own gate state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeMonitor<T> {
    pub period: T,
    pub deadband: T,
    open_since: Option<T>,
    short_since: Option<T>,
}

impl<T: Scalar> SlopeMonitor<T> {
    /// Deadband is 10% of the healthy on-state slope.
    pub fn new(period: T, healthy_on_slope: T) -> Self {
        Self { period, deadband: healthy_on_slope.abs() * T::lit(0.1), open_since: None, short_since: None }
    }

    pub fn update(&mut self, t: T, slope: T, gate_on: bool) -> SlopeVerdict {
        let (tracker, suspect) = if gate_on {
            (&mut self.open_since, SlopeVerdict::OpenSuspect)
        } else {
            (&mut self.short_since, SlopeVerdict::ShortSuspect)
        };
        if dcdc_slope_check(slope, gate_on, self.deadband) == SlopeVerdict::Consistent {
            *tracker = None;
            return SlopeVerdict::Consistent;
        }
        let since = *tracker.get_or_insert(t);
        if t - since >= self.period {
            suspect
        } else {
            SlopeVerdict::Consistent
        }
    }
}

/// Piecewise-linear inductor current of the first stage: rising while the
/// switch is on, falling while off. A fault from `fault_time` freezes the
/// slope at the off-state value (open) or the on-state value (short).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InductorWaveform {
    pub period: f64,
    pub duty: f64,
    pub rise_slope: f64,
    pub fall_slope: f64,
    pub fault: Option<(f64, FaultKind)>,
}

impl InductorWaveform {
    pub fn gate_on(&self, t: f64) -> bool {
        (t / self.period).fract() < self.duty
    }

    /// Current relative to the value at `t = 0`, the start of an on-interval.
    pub fn current(&self, t: f64) -> f64 {
        let healthy = |t: f64| {
            let cycles = (t / self.period).floor();
            let per_cycle = self.rise_slope * self.duty * self.period + self.fall_slope * (1.0 - self.duty) * self.period;
            let tau = t - cycles * self.period;
            let within = if tau < self.duty * self.period {
                self.rise_slope * tau
            } else {
                self.rise_slope * self.duty * self.period + self.fall_slope * (tau - self.duty * self.period)
            };
            cycles * per_cycle + within
        };
        match self.fault {
            Some((tf, kind)) if t > tf => {
                let slope = match kind {
                    FaultKind::OpenCircuit => self.fall_slope,
                    FaultKind::ShortCircuit => self.rise_slope,
                };
                healthy(tf) + slope * (t - tf)
            }
            _ => healthy(t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "at", rename_all = "snake_case")]
pub enum DriveMode {
    Normal,
    FaultDetected(Device),
    Isolating(Device),
    PostFault(Leg),
    Shutdown,
}

impl fmt::Display for DriveMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DriveMode::Normal => f.write_str("normal"),
            DriveMode::FaultDetected(d) => write!(f, "fault_detected:{d}"),
            DriveMode::Isolating(d) => write!(f, "isolating:{d}"),
            DriveMode::PostFault(l) => write!(f, "postfault:{l}"),
            DriveMode::Shutdown => f.write_str("shutdown"),
        }
    }
}

impl DriveMode {
    /// Edges of the declared transition graph.
    pub fn may_transition_to(self, next: DriveMode) -> bool {
        use DriveMode::*;
        match (self, next) {
            (Normal, FaultDetected(_)) => true,
            (FaultDetected(a), Isolating(b)) => a == b,
            (FaultDetected(a), PostFault(l)) | (Isolating(a), PostFault(l)) => a.leg() == l,
            (Shutdown, _) => false,
            (_, Shutdown) => true,
            _ => false,
        }
    }
}

/// Inputs to the state machine at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsmEvent {
    SwitchFault { device: Device, kind: FaultKind },
    DcdcFault(DcdcSwitch),
    FuseBlown(Leg),
}

impl FsmEvent {
    /// Detections sort before status reports at equal timestamps.
    fn priority(&self) -> u8 {
        match self {
            FsmEvent::SwitchFault { .. } | FsmEvent::DcdcFault(_) => 0,
            FsmEvent::FuseBlown(_) => 1,
        }
    }
}

impl fmt::Display for FsmEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FsmEvent::SwitchFault { device, kind } => write!(f, "{kind:?}({device})"),
            FsmEvent::DcdcFault(q) => write!(f, "dcdc_fault(Q{})", q.index() + 1),
            FsmEvent::FuseBlown(l) => write!(f, "fuse_blown({l})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", content = "target", rename_all = "snake_case")]
pub enum Action {
    BlockGate(Device),
    GateOn(Device),
    CloseNeutralRelay,
    UsePostfaultTable(Leg),
    #[serde(with = "dcdc_name")]
    OpenIsolationRelay(DcdcSwitch),
    #[serde(with = "dcdc_name")]
    EnableRedundant(DcdcSwitch),
    BlockAll,
}

mod dcdc_name {
    use super::DcdcSwitch;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(q: &DcdcSwitch, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(match q {
            DcdcSwitch::Q1 => "Q1",
            DcdcSwitch::Q2 => "Q2",
        })
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DcdcSwitch, D::Error> {
        match String::deserialize(d)?.as_str() {
            "Q1" => Ok(DcdcSwitch::Q1),
            "Q2" => Ok(DcdcSwitch::Q2),
            other => Err(serde::de::Error::custom(format!("unknown first-stage switch {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub time: f64,
    pub from: DriveMode,
    pub to: DriveMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FsmConfig {
    /// Apply the postfault strategy. When off, an open switch only blocks
    /// its complementary device and the drive continues on two wires.
    pub reconfigure: bool,
}

impl Default for FsmConfig {
    fn default() -> Self {
        Self { reconfigure: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FsmState {
    pub mode: DriveMode,
    pub entered_at: f64,
    pub isolated_legs: [bool; 3],
    pub neutral_closed: bool,
    pub redundant_enabled: [bool; 2],
    /// Devices known to be open or blocked; never gated on again.
    pub disabled: [bool; 6],
    pub log: Vec<Transition>,
}

impl Default for FsmState {
    fn default() -> Self {
        Self {
            mode: DriveMode::Normal,
            entered_at: 0.0,
            isolated_legs: [false; 3],
            neutral_closed: false,
            redundant_enabled: [false; 2],
            disabled: [false; 6],
            log: Vec::new(),
        }
    }
}

impl FsmState {
    fn enter(&mut self, to: DriveMode, t: f64) {
        self.log.push(Transition { time: t, from: self.mode, to });
        self.mode = to;
        self.entered_at = t;
    }

    fn invalid(&self, ev: &FsmEvent) -> FaultError {
        FaultError::InvalidTransition { mode: self.mode.to_string(), event: ev.to_string() }
    }

    /// Open-circuit action set for `faulty`: block the partner, and with
    /// reconfiguration tie the neutral to the midpoint and swap tables.
    fn isolate(&mut self, faulty: Device, t: f64, cfg: &FsmConfig, out: &mut Vec<Action>) {
        let leg = faulty.leg();
        let partner = faulty.complementary();
        out.push(Action::BlockGate(partner));
        self.disabled[partner.index()] = true;
        self.disabled[faulty.index()] = true;
        self.isolated_legs[leg.index()] = true;
        if cfg.reconfigure {
            if !self.neutral_closed {
                out.push(Action::CloseNeutralRelay);
                self.neutral_closed = true;
            }
            out.push(Action::UsePostfaultTable(leg));
            self.enter(DriveMode::PostFault(leg), t);
        }
    }

    fn apply(&mut self, ev: FsmEvent, t: f64, cfg: &FsmConfig, out: &mut Vec<Action>) -> Result<(), FaultError> {
        use DriveMode::*;
        if self.mode == Shutdown {
            return Ok(());
        }
        match ev {
            FsmEvent::DcdcFault(q) => {
                if self.redundant_enabled[q.index()] {
                    return Err(self.invalid(&ev));
                }
                out.push(Action::OpenIsolationRelay(q));
                out.push(Action::EnableRedundant(q));
                self.redundant_enabled[q.index()] = true;
            }
            FsmEvent::SwitchFault { device, kind } => {
                let leg = device.leg();
                if self.isolated_legs[leg.index()] {
                    return Err(self.invalid(&ev));
                }
                match self.mode {
                    Normal => {
                        self.enter(FaultDetected(device), t);
                        match kind {
                            FaultKind::OpenCircuit => self.isolate(device, t, cfg, out),
                            FaultKind::ShortCircuit => {
                                let partner = device.complementary();
                                out.push(Action::GateOn(partner));
                                self.disabled[device.index()] = true;
                                self.enter(Isolating(device), t);
                            }
                        }
                    }
                    _ => {
                        out.push(Action::BlockAll);
                        self.enter(Shutdown, t);
                    }
                }
            }
            FsmEvent::FuseBlown(leg) => match self.mode {
                Isolating(d) if d.leg() == leg => {
                    // the leg is open now; stop gating the shoot-through partner
                    self.isolate(d, t, cfg, out);
                    if !cfg.reconfigure {
                        self.enter(PostFault(leg), t);
                    }
                }
                _ if self.isolated_legs[leg.index()] => {}
                _ => return Err(self.invalid(&ev)),
            },
        }
        Ok(())
    }
}

/// Processes all events of one instant, detections first, and returns the
/// actions to execute in order.
pub fn fsm_step(state: &FsmState, events: &[FsmEvent], t: f64, cfg: &FsmConfig) -> Result<(FsmState, Vec<Action>), FaultError> {
    let mut next = state.clone();
    let mut ordered = events.to_vec();
    ordered.sort_by_key(FsmEvent::priority);
    let mut actions = Vec::new();
    for ev in ordered {
        next.apply(ev, t, cfg, &mut actions)?;
    }
    Ok((next, actions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn fault_target_names() {
        for (s, t) in [
            ("S1", FaultTarget::Inverter(Device::S1)),
            ("S6", FaultTarget::Inverter(Device::S6)),
            ("Q2", FaultTarget::Dcdc(DcdcSwitch::Q2)),
        ] {
            assert_eq!(s.parse::<FaultTarget>().unwrap(), t);
            assert_eq!(t.to_string(), s);
        }
        assert!("S7".parse::<FaultTarget>().is_err());
        assert!("Q3".parse::<FaultTarget>().is_err());
        let ev: FaultEvent = serde_json::from_str(r#"{"time": 2.0, "device": "S4", "kind": "short_circuit"}"#).unwrap();
        assert_eq!(ev.target, FaultTarget::Inverter(Device::S4));
        assert_eq!(ev.kind, FaultKind::ShortCircuit);
        let bad = FaultEvent { time: -1.0, ..ev };
        assert!(bad.validate().is_err());
    }

    fn sine(n: usize, amp: f64, phase: f64, offset: f64) -> Vec<f64> {
        (0..n).map(|m| offset + amp * (2.0 * PI * m as f64 / n as f64 + phase).sin()).collect()
    }

    #[test]
    fn pure_sine_has_no_dc() {
        for (amp, ph) in [(1.0, 0.0), (12.5, 1.1), (0.3, -2.7)] {
            let p = normalized_dc_phase(&sine(64, amp, ph, 0.0), 0.01).unwrap();
            assert!(p.chi.abs() < 1e-10);
            assert!((p.amplitude - amp).abs() < 1e-10);
        }
    }

    #[test]
    fn half_wave_rectified_sine() {
        let n = 4096;
        let s: Vec<f64> = sine(n, 7.0, 0.0, 0.0).into_iter().map(|x| x.max(0.0)).collect();
        let p = normalized_dc_phase(&s, 0.01).unwrap();
        assert!((p.chi - 2.0 / PI).abs() < 1e-6, "chi {}", p.chi);
    }

    #[test]
    fn dc_window_is_indeterminate() {
        assert_eq!(normalized_dc_phase(&[3.0; 64], 0.2), None);
        assert_eq!(normalized_dc_phase(&[0.0; 64], 0.2), None);
    }

    proptest! {
        #[test]
        fn zero_mean_periodic_window_gives_zero_chi(
            h in proptest::collection::vec((0.1..5.0f64, -PI..PI), 1..5), n in 16usize..128
        ) {
            let s: Vec<f64> = (0..n)
                .map(|m| {
                    let x = 2.0 * PI * m as f64 / n as f64;
                    h.iter().enumerate().map(|(k, (a, ph))| a * ((k + 1) as f64 * x + ph).sin()).sum::<f64>()
                })
                .collect();
            if let Some(p) = normalized_dc_phase(&s, 1e-3) {
                prop_assert!(p.chi.abs() < 1e-10);
            }
        }
    }

    fn phase_dc(chi: f64, avg: f64) -> PhaseDcResult<f64> {
        Some(PhaseDc { chi, avg, amplitude: 1.0 })
    }

    #[test]
    fn classification_table() {
        let zero = phase_dc(0.01, 0.0);
        assert_eq!(classify_open_switch(&[phase_dc(-0.64, -3.0), zero, zero], 0.45), Classification::Faulty(Device::S1));
        assert_eq!(classify_open_switch(&[zero, phase_dc(0.64, 3.0), zero], 0.45), Classification::Faulty(Device::S5));
        assert_eq!(classify_open_switch(&[zero, zero, phase_dc(-0.5, -1.0)], 0.45), Classification::Faulty(Device::S3));
        assert_eq!(classify_open_switch(&[phase_dc(0.5, 1.0), zero, zero], 0.45), Classification::Faulty(Device::S4));
        assert_eq!(classify_open_switch(&[zero, zero, zero], 0.45), Classification::Healthy);
        assert_eq!(classify_open_switch(&[None, zero, None], 0.45), Classification::Healthy);
        assert_eq!(
            classify_open_switch(&[phase_dc(0.6, 1.0), phase_dc(-0.6, -1.0), zero], 0.45),
            Classification::MultiFault
        );
    }

    #[test]
    fn window_rules() {
        assert!(DetectorWindow::<f64>::new(8).is_err());
        let mut w = DetectorWindow::<f64>::new(16).unwrap();
        for k in 0..20 {
            w.push([k as f64, 0.0, 0.0]);
        }
        assert!(w.is_full());
        assert_eq!(w.phase(0)[0], 4.0);
        assert_eq!(normalized_dc_current(&DetectorWindow::<f64>::new(16).unwrap(), 0.1), None);
    }

    #[test]
    fn detector_names_open_upper_switch() {
        let cfg = DetectorConfig { samples_per_period: 64, ..DetectorConfig::default() };
        let mut det = OpenSwitchDetector::<f64>::new(cfg).unwrap();
        let w = 2.0 * PI * 10.0;
        let dt = 1e-4;
        let mut found = None;
        let mut t = 0.0;
        while t < 0.5 && found.is_none() {
            let th = w * t;
            let mut i = [0.0, -2.0 * PI / 3.0, 2.0 * PI / 3.0].map(|s| 8.0 * (th + s).cos());
            if t > 0.2 {
                // upper switch of phase a lost: only negative current remains
                i[0] = i[0].min(0.0);
            }
            if let Some(Classification::Faulty(d)) = det.observe(t, (th + PI).rem_euclid(2.0 * PI) - PI, i) {
                found = Some((d, t));
            }
            t += dt;
        }
        let (d, at) = found.expect("detected");
        assert_eq!(d, Device::S1);
        assert!(at - 0.2 < 1.5 * 0.1, "latency {}", at - 0.2);
    }

    #[test]
    fn detector_respects_arm_time() {
        let cfg = DetectorConfig { samples_per_period: 16, arm_time: 10.0, ..DetectorConfig::default() };
        let mut det = OpenSwitchDetector::<f64>::new(cfg).unwrap();
        for k in 0..1000 {
            let th = k as f64 * 0.1;
            assert_eq!(det.observe(k as f64 * 1e-3, th.sin().atan2(th.cos()), [th.cos().min(0.0), 0.0, 0.0]), None);
        }
    }

    #[test]
    fn slope_estimate() {
        assert_eq!(estimate_slope(&[(0.0f64, 1.0f64), (1.0, 2.0)]), None);
        let s = estimate_slope(&[(0.0f64, 1.0f64), (1.0, 3.0), (2.0, 5.0), (3.0, 7.0)]).unwrap();
        assert!((s - 2.0).abs() < 1e-12);
        assert_eq!(estimate_slope(&[(1.0f64, 1.0f64), (1.0, 3.0), (1.0, 5.0)]), None);
    }

    #[test]
    fn slope_check_examples() {
        assert_eq!(dcdc_slope_check(1000.0, true, 100.0), SlopeVerdict::Consistent);
        assert_eq!(dcdc_slope_check(-1000.0, true, 100.0), SlopeVerdict::OpenSuspect);
        assert_eq!(dcdc_slope_check(1000.0, false, 100.0), SlopeVerdict::ShortSuspect);
        assert_eq!(dcdc_slope_check(-50.0, true, 100.0), SlopeVerdict::Consistent);
        assert_eq!(dcdc_slope_check(50.0, false, 100.0), SlopeVerdict::Consistent);
    }

    /// Runs the monitor over a sampled waveform; returns the first verdict
    /// other than consistent and its time.
    fn monitor(wave: &InductorWaveform, t_end: f64) -> Option<(SlopeVerdict, f64)> {
        let fs = 2e6;
        let mut mon = SlopeMonitor::new(wave.period, wave.rise_slope);
        let mut hist: Vec<(f64, f64)> = Vec::new();
        let mut gate_prev = None;
        let n = (t_end * fs) as usize;
        for k in 0..n {
            let t = k as f64 / fs;
            let g = wave.gate_on(t);
            if gate_prev != Some(g) {
                hist.clear();
                gate_prev = Some(g);
            }
            hist.push((t, wave.current(t)));
            if hist.len() > 4 {
                hist.remove(0);
            }
            if let Some(s) = estimate_slope(&hist) {
                let v = mon.update(t, s, g);
                if v != SlopeVerdict::Consistent {
                    return Some((v, t));
                }
            }
        }
        None
    }

    fn wave(fault: Option<(f64, FaultKind)>) -> InductorWaveform {
        InductorWaveform { period: 50e-6, duty: 0.5, rise_slope: 3e4, fall_slope: -3e4, fault }
    }

    #[test]
    fn slope_monitor_on_synthesized_waveforms() {
        assert_eq!(monitor(&wave(None), 2e-3), None);
        let (v, t) = monitor(&wave(Some((1e-3, FaultKind::OpenCircuit))), 2e-3).unwrap();
        assert_eq!(v, SlopeVerdict::OpenSuspect);
        assert!((1e-3 + 50e-6..=1e-3 + 2.0 * 50e-6).contains(&t), "t {t}");
        let (v, t) = monitor(&wave(Some((1e-3, FaultKind::ShortCircuit))), 2e-3).unwrap();
        assert_eq!(v, SlopeVerdict::ShortSuspect);
        assert!((1e-3 + 50e-6..=1e-3 + 2.0 * 50e-6).contains(&t), "t {t}");
    }

    #[test]
    fn sc_latency() {
        let ev = FaultEvent { time: 1.5, target: FaultTarget::Inverter(Device::S4), kind: FaultKind::ShortCircuit };
        assert_eq!(sc_detection_event(&ev, 0.0).unwrap(), 1.5);
        assert_eq!(sc_detection_event(&ev, 2e-6).unwrap(), 1.5 + 2e-6);
        assert!(sc_detection_event(&ev, -1.0).is_err());
        // a latency below one control period lands inside the same period
        let ts = 20e-6;
        let t = sc_detection_event(&ev, 2e-6).unwrap();
        assert_eq!((t / ts).floor(), (ev.time / ts).floor());
    }

    fn oc(d: Device) -> FsmEvent {
        FsmEvent::SwitchFault { device: d, kind: FaultKind::OpenCircuit }
    }

    fn sc(d: Device) -> FsmEvent {
        FsmEvent::SwitchFault { device: d, kind: FaultKind::ShortCircuit }
    }

    #[test]
    fn open_circuit_sequence() {
        let cfg = FsmConfig::default();
        let (s, a) = fsm_step(&FsmState::default(), &[oc(Device::S1)], 2.0, &cfg).unwrap();
        assert_eq!(s.mode, DriveMode::PostFault(Leg::A));
        assert_eq!(a, vec![Action::BlockGate(Device::S4), Action::CloseNeutralRelay, Action::UsePostfaultTable(Leg::A)]);
        assert_eq!(s.log.len(), 2);
        assert_eq!(s.log[0].to, DriveMode::FaultDetected(Device::S1));
        let (s2, a2) = fsm_step(&s, &[oc(Device::S2)], 2.5, &cfg).unwrap();
        assert_eq!(s2.mode, DriveMode::Shutdown);
        assert_eq!(a2, vec![Action::BlockAll]);
        let err = fsm_step(&s, &[oc(Device::S4)], 2.5, &cfg);
        assert!(matches!(err, Err(FaultError::InvalidTransition { .. })));
    }

    #[test]
    fn short_circuit_sequence() {
        let cfg = FsmConfig::default();
        let (s, a) = fsm_step(&FsmState::default(), &[sc(Device::S4)], 1.0, &cfg).unwrap();
        assert_eq!(s.mode, DriveMode::Isolating(Device::S4));
        assert_eq!(a, vec![Action::GateOn(Device::S1)]);
        let (s, a) = fsm_step(&s, &[FsmEvent::FuseBlown(Leg::A)], 1.001, &cfg).unwrap();
        assert_eq!(s.mode, DriveMode::PostFault(Leg::A));
        assert_eq!(a, vec![Action::BlockGate(Device::S1), Action::CloseNeutralRelay, Action::UsePostfaultTable(Leg::A)]);
    }

    #[test]
    fn dcdc_fault_keeps_mode() {
        let cfg = FsmConfig::default();
        let (s, a) = fsm_step(&FsmState::default(), &[FsmEvent::DcdcFault(DcdcSwitch::Q2)], 1.0, &cfg).unwrap();
        assert_eq!(s.mode, DriveMode::Normal);
        assert_eq!(a, vec![Action::OpenIsolationRelay(DcdcSwitch::Q2), Action::EnableRedundant(DcdcSwitch::Q2)]);
    }

    #[test]
    fn no_strategy_only_blocks_partner() {
        let cfg = FsmConfig { reconfigure: false };
        let (s, a) = fsm_step(&FsmState::default(), &[oc(Device::S2)], 1.0, &cfg).unwrap();
        assert_eq!(a, vec![Action::BlockGate(Device::S5)]);
        assert_eq!(s.mode, DriveMode::FaultDetected(Device::S2));
        assert!(!s.neutral_closed);
    }

    #[test]
    fn detections_processed_before_fuse_reports() {
        let cfg = FsmConfig::default();
        let (s, a) = fsm_step(&FsmState::default(), &[FsmEvent::FuseBlown(Leg::B), sc(Device::S2)], 1.0, &cfg).unwrap();
        assert_eq!(s.mode, DriveMode::PostFault(Leg::B));
        assert_eq!(a[0], Action::GateOn(Device::S5));
    }

    #[test]
    fn mode_serialization() {
        let j = serde_json::to_string(&DriveMode::PostFault(Leg::A)).unwrap();
        assert_eq!(j, r#"{"mode":"post_fault","at":"a"}"#);
        let a = serde_json::to_string(&Action::EnableRedundant(DcdcSwitch::Q1)).unwrap();
        assert_eq!(a, r#"{"action":"enable_redundant","target":"Q1"}"#);
        let back: Action = serde_json::from_str(&a).unwrap();
        assert_eq!(back, Action::EnableRedundant(DcdcSwitch::Q1));
    }

    fn all_events() -> Vec<FsmEvent> {
        let mut v = Vec::new();
        for d in Device::ALL {
            v.push(oc(d));
            v.push(sc(d));
        }
        for l in Leg::ALL {
            v.push(FsmEvent::FuseBlown(l));
        }
        v.push(FsmEvent::DcdcFault(DcdcSwitch::Q1));
        v.push(FsmEvent::DcdcFault(DcdcSwitch::Q2));
        v
    }

    /// Exhaustive enumeration of every event sequence up to length 3 under
    /// both configurations.
    #[test]
    fn model_check_small_scenarios() {
        let events = all_events();
        let mut explored = 0usize;
        for cfg in [FsmConfig { reconfigure: true }, FsmConfig { reconfigure: false }] {
            let mut frontier = vec![FsmState::default()];
            for depth in 0..3 {
                let mut next_frontier = Vec::new();
                for s in &frontier {
                    for ev in &events {
                        explored += 1;
                        let Ok((n, actions)) = fsm_step(s, &[*ev], depth as f64, &cfg) else {
                            continue;
                        };
                        for tr in &n.log[s.log.len()..] {
                            assert!(tr.from.may_transition_to(tr.to), "{} -> {} on {ev}", tr.from, tr.to);
                        }
                        let mut closes = usize::from(s.neutral_closed);
                        for a in &actions {
                            match a {
                                Action::GateOn(d) => {
                                    assert!(!s.disabled[d.index()], "gate-on of disabled {d}");
                                    assert!(!s.isolated_legs[d.leg().index()], "gate-on in isolated leg {d}");
                                }
                                Action::CloseNeutralRelay => closes += 1,
                                _ => {}
                            }
                        }
                        assert!(closes <= 1, "neutral relay closed twice");
                        for k in 0..3 {
                            assert!(!s.isolated_legs[k] || n.isolated_legs[k], "isolation undone");
                        }
                        if s.mode == DriveMode::Shutdown {
                            assert_eq!(n.mode, DriveMode::Shutdown);
                        }
                        next_frontier.push(n);
                    }
                }
                frontier = next_frontier;
            }
        }
        assert!(explored > 1000);
    }
}
