//! Scenario file: machine, DC link, controller, detector, fault schedule,
//! reference profiles and run settings.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::converter::Device;
use crate::fault::{DetectorConfig, FaultEvent, FaultKind, FaultTarget};
use crate::machine::{Integrator, MachineParams};
use crate::mpc::PiConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("unsupported schema version {0} (expected 1)")]
    Schema(u32),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("malformed scenario: {0}")]
    Parse(String),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { field, reason: reason.into() }
}

/// Piecewise-linear profile; held constant outside its breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Profile(pub Vec<[f64; 2]>);

impl Profile {
    pub fn constant(v: f64) -> Self {
        Self(vec![[0.0, v]])
    }

    pub fn validate(&self, field: &'static str) -> Result<(), ScenarioError> {
        if self.0.is_empty() {
            return Err(invalid(field, "needs at least one point"));
        }
        if self.0.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(invalid(field, "non-finite point"));
        }
        if self.0.windows(2).any(|w| w[0][0] >= w[1][0]) {
            return Err(invalid(field, "times must be strictly ascending"));
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> f64 {
        let pts = &self.0;
        if t <= pts[0][0] {
            return pts[0][1];
        }
        for w in pts.windows(2) {
            let ([t0, v0], [t1, v1]) = (w[0], w[1]);
            if t <= t1 {
                return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
            }
        }
        pts[pts.len() - 1][1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalancerSection {
    /// Closed-loop corner (rad/s).
    pub bandwidth: f64,
    pub max_source_current: f64,
    #[serde(default = "half")]
    pub duty: f64,
    #[serde(default = "twenty_khz")]
    pub switching_frequency: f64,
}

fn half() -> f64 {
    0.5
}

fn twenty_khz() -> f64 {
    20e3
}

/// Shoot-through loop and the leg fuse it must clear.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LegFuseSection {
    #[serde(rename = "Rf")]
    pub rf: f64,
    pub alpha: f64,
    pub omega_d: f64,
    pub rated_i2t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DcLinkSection {
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    pub v_ref_total: f64,
    pub balancer: BalancerSection,
    pub fuse: LegFuseSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    #[serde(rename = "Ts")]
    pub ts: f64,
    /// Defaults to `Tn/ψn` of the machine.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Defaults to the machine's nominal flux.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flux_ref: Option<f64>,
    #[serde(default = "yes")]
    pub delay_compensation: bool,
    #[serde(default = "one")]
    pub flux_term_multiplier: f64,
    /// Speed-loop corner used when `pi` is absent (rad/s).
    #[serde(default = "twenty")]
    pub speed_bandwidth: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<PiConfig<f64>>,
}

fn yes() -> bool {
    true
}

fn one() -> f64 {
    1.0
}

fn twenty() -> f64 {
    20.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSection {
    /// Apply the postfault strategy after an inverter fault.
    #[serde(default = "yes")]
    pub reconfigure: bool,
    #[serde(default)]
    pub events: Vec<FaultEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    /// Mechanical speed reference (rad/s).
    pub speed: Profile,
    /// Load torque (N·m).
    pub load: Profile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    pub duration: f64,
    #[serde(default = "ten")]
    pub decimation: u32,
    /// The selected vector takes effect one control period later.
    #[serde(default = "yes")]
    pub actuation_delay: bool,
    #[serde(default)]
    pub integrator: Integrator,
    /// Steady-state windows analysed into the summary, `[t0, t1]` (s).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefault_window: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub postfault_window: Option<[f64; 2]>,
}

fn ten() -> u32 {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    #[serde(default)]
    pub name: String,
    pub machine: MachineParams<f64>,
    pub dc_link: DcLinkSection,
    pub controller: ControllerSection,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default = "no_faults")]
    pub faults: FaultSection,
    pub profiles: ProfileSection,
    pub sim: SimSection,
}

fn no_faults() -> FaultSection {
    FaultSection { reconfigure: true, events: Vec::new() }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Number of simulation steps per control period.
    pub fn control_ratio(&self) -> u64 {
        (self.controller.ts / self.sim.dt).round() as u64
    }

    pub fn steps(&self) -> u64 {
        (self.sim.duration / self.sim.dt).round() as u64
    }

    pub fn flux_ref(&self) -> f64 {
        self.controller.flux_ref.unwrap_or(self.machine.nominal_flux)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.schema != SCHEMA_VERSION {
            return Err(ScenarioError::Schema(self.schema));
        }
        self.machine.validate().map_err(|e| invalid("machine", e.to_string()))?;
        crate::machine::derive_params(&self.machine).map_err(|e| invalid("machine", e.to_string()))?;
        let d = &self.dc_link;
        for (name, v) in [("dc_link.C1", d.c1), ("dc_link.C2", d.c2), ("dc_link.v_ref_total", d.v_ref_total)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, "must be positive"));
            }
        }
        if !(d.balancer.bandwidth > 0.0 && d.balancer.max_source_current >= 0.0 && d.balancer.switching_frequency > 0.0) {
            return Err(invalid("dc_link.balancer", "bandwidth and switching frequency must be positive"));
        }
        if !(d.fuse.rf > 0.0 && d.fuse.alpha >= 0.0 && d.fuse.omega_d > 0.0 && d.fuse.rated_i2t > 0.0) {
            return Err(invalid("dc_link.fuse", "Rf, omega_d and rated_i2t must be positive, alpha non-negative"));
        }
        let c = &self.controller;
        if !(c.ts > 0.0) {
            return Err(invalid("controller.Ts", "must be positive"));
        }
        if c.lambda.is_some_and(|l| !(l >= 0.0)) {
            return Err(invalid("controller.lambda", "must be non-negative"));
        }
        if c.flux_ref.is_some_and(|f| !(f > 0.0)) {
            return Err(invalid("controller.flux_ref", "must be positive"));
        }
        if !(c.speed_bandwidth > 0.0) {
            return Err(invalid("controller.speed_bandwidth", "must be positive"));
        }
        if let Some(pi) = &c.pi {
            pi.validate().map_err(|e| invalid("controller.pi", e.to_string()))?;
        }
        if self.detector.samples_per_period < 16 {
            return Err(invalid("detector.samples_per_period", "must be at least 16"));
        }
        if !(self.detector.sc_latency >= 0.0) {
            return Err(invalid("detector.sc_latency", "must be non-negative"));
        }
        if !(self.detector.epsilon_amp >= 0.0 && self.detector.threshold > 0.0) {
            return Err(invalid("detector", "threshold must be positive and epsilon_amp non-negative"));
        }
        let mut seen: HashSet<FaultTarget> = HashSet::new();
        for ev in &self.faults.events {
            ev.validate().map_err(|e| invalid("faults.events", e.to_string()))?;
            if !seen.insert(ev.target) {
                return Err(invalid("faults.events", format!("more than one fault on {}", ev.target)));
            }
            if matches!(ev.target, FaultTarget::Dcdc(_)) && ev.kind == FaultKind::ShortCircuit {
                // handled identically to an open switch: the redundant branch takes over
            }
        }
        self.profiles.speed.validate("profiles.speed")?;
        self.profiles.load.validate("profiles.load")?;
        let s = &self.sim;
        if !(s.dt > 0.0 && s.dt.is_finite()) {
            return Err(invalid("sim.dt", "must be positive"));
        }
        if !(s.duration >= 0.0 && s.duration.is_finite()) {
            return Err(invalid("sim.duration", "must be non-negative"));
        }
        if s.decimation == 0 {
            return Err(invalid("sim.decimation", "must be at least 1"));
        }
        let ratio = c.ts / s.dt;
        if ratio.round() < 1.0 || (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return Err(invalid("controller.Ts", "must be an integer multiple of sim.dt"));
        }
        for (name, w) in [("sim.prefault_window", s.prefault_window), ("sim.postfault_window", s.postfault_window)] {
            if let Some([a, b]) = w {
                if !(a >= 0.0 && b > a) {
                    return Err(invalid(name, "needs 0 <= t0 < t1"));
                }
            }
        }
        Ok(())
    }
}

/// Built-in scenarios used by the shipped files and the acceptance suite.
pub mod presets {
    use super::*;

    /// Speed at which the four-vector postfault set still covers the flux
    /// locus with margin on a 300 V bus.
    pub const POSTFAULT_SPEED: f64 = 60.0;
    /// Load the two-wire drive (no postfault strategy) can still carry, so
    /// fault scenarios with and without the strategy share one operating point.
    pub const POSTFAULT_LOAD: f64 = 5.0;
    pub const RATED_SPEED: f64 = 100.0;
    pub const RATED_LOAD: f64 = 10.0;

    fn base(name: &str, speed: f64, duration: f64) -> Scenario {
        let load = if speed == RATED_SPEED { RATED_LOAD } else { POSTFAULT_LOAD };
        Scenario {
            schema: SCHEMA_VERSION,
            name: name.to_owned(),
            machine: MachineParams::reference_1p5kw(),
            dc_link: DcLinkSection {
                c1: 3600e-6,
                c2: 3600e-6,
                v_ref_total: 300.0,
                balancer: BalancerSection { bandwidth: 2000.0, max_source_current: 50.0, duty: 0.5, switching_frequency: 20e3 },
                fuse: LegFuseSection { rf: 0.5, alpha: 50.0, omega_d: 1000.0, rated_i2t: 50.0 },
            },
            controller: ControllerSection {
                ts: 20e-6,
                lambda: None,
                flux_ref: None,
                delay_compensation: true,
                flux_term_multiplier: 3.0,
                speed_bandwidth: 20.0,
                pi: None,
            },
            detector: DetectorConfig { arm_time: 1.0, ..DetectorConfig::default() },
            faults: no_faults(),
            profiles: ProfileSection {
                speed: Profile(vec![[0.0, 0.0], [0.05, 0.0], [0.4, speed]]),
                load: Profile(vec![[0.0, 0.0], [0.5, 0.0], [0.7, load]]),
            },
            sim: SimSection {
                dt: 5e-6,
                duration,
                decimation: 10,
                actuation_delay: true,
                integrator: Integrator::Rk4,
                prefault_window: None,
                postfault_window: None,
            },
        }
    }

    /// Healthy drive at rated speed and load.
    pub fn healthy() -> Scenario {
        let mut s = base("healthy", RATED_SPEED, 2.0);
        s.profiles.speed = Profile(vec![[0.0, 0.0], [0.05, 0.0], [0.3, RATED_SPEED]]);
        s.sim.prefault_window = Some([1.2, 2.0]);
        s
    }

    /// Open switch S1 at 2 s, detected on line, postfault strategy on.
    pub fn postfault() -> Scenario {
        let mut s = base("postfault", POSTFAULT_SPEED, 4.0);
        s.faults.events.push(FaultEvent { time: 2.0, target: FaultTarget::Inverter(Device::S1), kind: FaultKind::OpenCircuit });
        s.sim.prefault_window = Some([1.5, 1.95]);
        s.sim.postfault_window = Some([3.0, 4.0]);
        s
    }

    /// Same fault with the strategy disabled: the phase is simply lost.
    pub fn no_strategy() -> Scenario {
        let mut s = postfault();
        s.name = "no_strategy".to_owned();
        s.faults.reconfigure = false;
        s
    }

    /// Single open switch at 1.5 s with the detector armed from 0.5 s.
    pub fn open_switch(device: Device) -> Scenario {
        let mut s = base(&format!("open_{device}"), POSTFAULT_SPEED, 1.9);
        s.detector.arm_time = 0.5;
        s.faults.events.push(FaultEvent { time: 1.5, target: FaultTarget::Inverter(device), kind: FaultKind::OpenCircuit });
        s
    }

    /// Shorted lower switch of leg a cleared by shoot-through and fuse.
    pub fn short_circuit() -> Scenario {
        let mut s = base("short_s4", POSTFAULT_SPEED, 2.5);
        s.faults.events.push(FaultEvent { time: 1.5, target: FaultTarget::Inverter(Device::S4), kind: FaultKind::ShortCircuit });
        s.sim.prefault_window = Some([1.0, 1.45]);
        s.sim.postfault_window = Some([2.0, 2.5]);
        s
    }

    /// 100 µs control period, healthy, with or without delay compensation.
    pub fn slow_control(delay_compensation: bool) -> Scenario {
        let mut s = base(if delay_compensation { "slow_control" } else { "slow_control_uncompensated" }, POSTFAULT_SPEED, 1.5);
        s.controller.ts = 100e-6;
        s.controller.delay_compensation = delay_compensation;
        // fault-free ripple comparison; the uncompensated loop's ripple would
        // otherwise trip the open-switch detector
        s.detector.arm_time = s.sim.duration;
        s.sim.prefault_window = Some([1.0, 1.5]);
        s
    }

    /// First-stage switch failure replaced by its redundant twin.
    pub fn dcdc_fault() -> Scenario {
        let mut s = base("dcdc_q1", POSTFAULT_SPEED, 1.5);
        s.faults.events.push(FaultEvent {
            time: 1.0,
            target: FaultTarget::Dcdc(crate::fault::DcdcSwitch::Q1),
            kind: FaultKind::OpenCircuit,
        });
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_interpolation() {
        let p = Profile(vec![[0.0, 0.0], [1.0, 10.0], [2.0, 10.0]]);
        assert_eq!(p.at(-1.0), 0.0);
        assert_eq!(p.at(0.5), 5.0);
        assert_eq!(p.at(5.0), 10.0);
        assert!(Profile(vec![]).validate("x").is_err());
        assert!(Profile(vec![[1.0, 0.0], [1.0, 2.0]]).validate("x").is_err());
    }

    #[test]
    fn presets_validate_and_round_trip() {
        for s in [
            presets::healthy(),
            presets::postfault(),
            presets::no_strategy(),
            presets::open_switch(Device::S6),
            presets::short_circuit(),
            presets::slow_control(true),
            presets::slow_control(false),
            presets::dcdc_fault(),
        ] {
            s.validate().unwrap();
            let back = Scenario::from_json(&s.to_json()).unwrap();
            assert_eq!(back, s);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let mut s = presets::healthy();
        s.schema = 2;
        assert_eq!(s.validate(), Err(ScenarioError::Schema(2)));
        let mut s = presets::healthy();
        s.controller.ts = 12e-6;
        assert!(s.validate().is_err());
        let mut s = presets::postfault();
        s.faults.events.push(s.faults.events[0]);
        assert!(s.validate().is_err());
        let text = presets::healthy().to_json().replace("\"sim\"", "\"simulation\"");
        assert!(matches!(Scenario::from_json(&text), Err(ScenarioError::Parse(_))));
    }

    #[test]
    fn defaults_fill_optional_fields() {
        let s = presets::healthy();
        let mut v: serde_json::Value = serde_json::from_str(&s.to_json()).unwrap();
        v.as_object_mut().unwrap().remove("detector");
        v.as_object_mut().unwrap().remove("faults");
        v["sim"].as_object_mut().unwrap().remove("decimation");
        let back = Scenario::from_json(&v.to_string()).unwrap();
        assert_eq!(back.sim.decimation, 10);
        assert_eq!(back.detector, DetectorConfig::default());
        assert!(back.faults.reconfigure);
    }
}
