//! Switched model of the two-stage converter: split DC link, six-switch
//! inverter with per-device health, neutral relay, leg fuses and an averaged
//! first-stage balancer.

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{clamp_abs, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConverterError {
    #[error("leg {0} is isolated while the neutral relay is open: no current path")]
    FloatingNeutralWithIsolatedLeg(Leg),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Leg {
    A,
    B,
    C,
}

impl Leg {
    pub const ALL: [Leg; 3] = [Leg::A, Leg::B, Leg::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Leg {
        Leg::ALL[i]
    }

    pub fn upper(self) -> Device {
        Device::ALL[self.index()]
    }

    pub fn lower(self) -> Device {
        Device::ALL[self.index() + 3]
    }

    /// Unit vector of the phase winding axis in the αβ plane.
    pub fn axis<T: Scalar>(self) -> Complex<T> {
        let half = T::lit(0.5);
        let s = T::lit(3.0f64.sqrt() / 2.0);
        match self {
            Leg::A => Complex::new(T::one(), T::zero()),
            Leg::B => Complex::new(-half, s),
            Leg::C => Complex::new(-half, -s),
        }
    }
}

impl std::fmt::Display for Leg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Leg::A => "a",
            Leg::B => "b",
            Leg::C => "c",
        };
        f.write_str(s)
    }
}

/// Inverter switches. S1..S3 are the upper devices of legs a..c, S4..S6 the
/// lower ones, so `S1`/`S4` share leg a.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Device {
    S1,
    S2,
    S3,
    S4,
    S5,
    S6,
}

impl Device {
    pub const ALL: [Device; 6] = [Device::S1, Device::S2, Device::S3, Device::S4, Device::S5, Device::S6];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn leg(self) -> Leg {
        Leg::from_index(self.index() % 3)
    }

    pub fn is_upper(self) -> bool {
        self.index() < 3
    }

    /// The other device of the same leg.
    pub fn complementary(self) -> Device {
        Device::ALL[(self.index() + 3) % 6]
    }
}

impl std::fmt::Display for Device {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "S{}", self.index() + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceHealth {
    #[default]
    Healthy,
    OpenFault,
    ShortFault,
    GateBlocked,
}

impl DeviceHealth {
    pub fn code(self) -> char {
        match self {
            DeviceHealth::Healthy => 'H',
            DeviceHealth::OpenFault => 'O',
            DeviceHealth::ShortFault => 'S',
            DeviceHealth::GateBlocked => 'B',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelayState {
    #[default]
    Open,
    Closed,
}

/// How a leg is tied to the DC bus during one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LegConduction {
    Upper,
    Lower,
    Floating,
}

/// Gate commands, device health, leg isolation and the neutral relay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SwitchingState {
    /// Logic level per leg; `true` commands the upper device on and the lower off.
    pub legs: [bool; 3],
    pub health: [DeviceHealth; 6],
    /// Leg disconnected by a blown fuse or by blocking both of its devices.
    pub isolated: [bool; 3],
    pub neutral_relay: RelayState,
}

impl SwitchingState {
    pub fn with_levels(legs: [bool; 3]) -> Self {
        Self { legs, ..Self::default() }
    }

    pub fn device_health(&self, d: Device) -> DeviceHealth {
        self.health[d.index()]
    }

    /// Whether the device carries current in its switch direction this step.
    fn actively_on(&self, d: Device) -> bool {
        match self.device_health(d) {
            DeviceHealth::ShortFault => true,
            DeviceHealth::Healthy => self.legs[d.leg().index()] == d.is_upper(),
            DeviceHealth::OpenFault | DeviceHealth::GateBlocked => false,
        }
    }

    /// Both devices of the leg conducting at once.
    pub fn shoot_through(&self, leg: Leg) -> bool {
        !self.isolated[leg.index()] && self.actively_on(leg.upper()) && self.actively_on(leg.lower())
    }

    /// Resolves the leg connection. With no device switched on, the
    /// freewheeling diode set by the current direction conducts; a leg with
    /// zero (or unknown) current and no active device floats.
    pub fn conduction<T: Scalar>(&self, leg: Leg, current: Option<T>) -> LegConduction {
        if self.isolated[leg.index()] {
            return LegConduction::Floating;
        }
        let up = self.actively_on(leg.upper());
        let down = self.actively_on(leg.lower());
        match (up, down) {
            (true, false) => LegConduction::Upper,
            (false, true) => LegConduction::Lower,
            (true, true) => {
                // shoot-through: the shorted device dominates the pole
                if self.device_health(leg.lower()) == DeviceHealth::ShortFault {
                    LegConduction::Lower
                } else {
                    LegConduction::Upper
                }
            }
            (false, false) => match current {
                Some(i) if i > T::zero() => LegConduction::Lower,
                Some(i) if i < T::zero() => LegConduction::Upper,
                _ => LegConduction::Floating,
            },
        }
    }

    pub fn health_summary(&self) -> String {
        self.health.iter().map(|h| h.code()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcLinkState<T> {
    pub v_dc1: T,
    pub v_dc2: T,
    pub c1: T,
    pub c2: T,
    #[serde(default)]
    pub i_mid: T,
}

impl<T: Scalar> DcLinkState<T> {
    pub fn balanced(total: T, c1: T, c2: T) -> Self {
        let half = total / T::lit(2.0);
        Self { v_dc1: half, v_dc2: half, c1, c2, i_mid: T::zero() }
    }
}

fn pole_voltage<T: Scalar>(c: LegConduction, dc: &DcLinkState<T>) -> Option<T> {
    match c {
        LegConduction::Upper => Some(dc.v_dc1),
        LegConduction::Lower => Some(-dc.v_dc2),
        LegConduction::Floating => None,
    }
}

/// Leg voltages with respect to the DC midpoint for complementary
/// switching; `None` marks a floating leg.
pub fn pole_voltages<T: Scalar>(sw: &SwitchingState, dc: &DcLinkState<T>) -> [Option<T>; 3] {
    Leg::ALL.map(|leg| pole_voltage(sw.conduction::<T>(leg, None), dc))
}

/// Leg voltages accounting for faulted devices and diode conduction set by
/// the phase currents `i_abc` (positive out of the leg).
pub fn pole_voltages_with_currents<T: Scalar>(sw: &SwitchingState, dc: &DcLinkState<T>, i_abc: [T; 3]) -> [Option<T>; 3] {
    Leg::ALL.map(|leg| pole_voltage(sw.conduction(leg, Some(i_abc[leg.index()])), dc))
}

/// Phase voltages at the machine terminals with respect to the machine
/// neutral. With the neutral relay closed the neutral sits at the DC
/// midpoint and an isolated phase reads zero; with it open the neutral
/// floats and the common mode is removed.
pub fn machine_phase_voltages<T: Scalar>(poles: [Option<T>; 3], relay: RelayState) -> Result<[T; 3], ConverterError> {
    match relay {
        RelayState::Closed => Ok(poles.map(|p| p.unwrap_or_else(T::zero))),
        RelayState::Open => {
            let mut v = [T::zero(); 3];
            for (k, p) in poles.iter().enumerate() {
                v[k] = p.ok_or(ConverterError::FloatingNeutralWithIsolatedLeg(Leg::from_index(k)))?;
            }
            let mean = (v[0] + v[1] + v[2]) / T::lit(3.0);
            Ok(v.map(|x| x - mean))
        }
    }
}

/// Phase voltages when one leg is open and the neutral floats: the two
/// remaining poles drive their windings in series. The floating pole takes
/// the mean of the other two, which leaves the open phase at zero; with more
/// than one open leg nothing is driven.
pub fn open_phase_voltages<T: Scalar>(poles: [Option<T>; 3]) -> [T; 3] {
    let driven: Vec<T> = poles.iter().flatten().copied().collect();
    match driven.len() {
        3 => {
            let v = poles.map(|p| p.unwrap_or_else(T::zero));
            let mean = (v[0] + v[1] + v[2]) / T::lit(3.0);
            v.map(|x| x - mean)
        }
        2 => {
            let fill = (driven[0] + driven[1]) / T::lit(2.0);
            let v = poles.map(|p| p.unwrap_or(fill));
            let mean = (v[0] + v[1] + v[2]) / T::lit(3.0);
            v.map(|x| x - mean)
        }
        _ => [T::zero(); 3],
    }
}

/// Amplitude-invariant Clarke transform.
#[inline]
pub fn clarke<T: Scalar>(a: T, b: T, c: T) -> Complex<T> {
    let two_thirds = T::lit(2.0 / 3.0);
    let half = T::lit(0.5);
    let inv_sqrt3 = T::lit(1.0 / 3.0f64.sqrt());
    Complex::new(two_thirds * (a - half * b - half * c), inv_sqrt3 * (b - c))
}

/// Zero-sequence component `(a + b + c)/3`.
#[inline]
pub fn zero_sequence<T: Scalar>(a: T, b: T, c: T) -> T {
    (a + b + c) / T::lit(3.0)
}

/// Inverse Clarke producing a zero-mean triple.
#[inline]
pub fn inverse_clarke<T: Scalar>(v: Complex<T>) -> [T; 3] {
    inverse_clarke_with_zero(v, T::zero())
}

#[inline]
pub fn inverse_clarke_with_zero<T: Scalar>(v: Complex<T>, zero: T) -> [T; 3] {
    let half = T::lit(0.5);
    let s = T::lit(3.0f64.sqrt() / 2.0);
    [v.re + zero, -half * v.re + s * v.im + zero, -half * v.re - s * v.im + zero]
}

/// Gate pattern of one candidate; `true` = upper device on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GatePattern(pub [bool; 3]);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VectorCandidate<T> {
    pub pattern: GatePattern,
    pub vector: Complex<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VectorTableMode {
    Normal,
    PostFault(Leg),
}

/// Candidate voltage vectors available to the predictive controller.
///
/// Normal mode lists the eight states in binary order of `(a, b, c)`. A
/// post-fault table lists the four states of the two remaining legs in the
/// order `(0,0), (0,1), (1,0), (1,1)` with the isolated phase held at zero by
/// the neutral connection.
pub fn voltage_vector_table<T: Scalar>(mode: VectorTableMode, dc: &DcLinkState<T>) -> Vec<VectorCandidate<T>> {
    let level = |on: bool| if on { dc.v_dc1 } else { -dc.v_dc2 };
    match mode {
        VectorTableMode::Normal => (0..8u8)
            .map(|idx| {
                let legs = [idx & 4 != 0, idx & 2 != 0, idx & 1 != 0];
                let poles = legs.map(|on| Some(level(on)));
                let v = machine_phase_voltages(poles, RelayState::Open).expect("all legs driven");
                VectorCandidate { pattern: GatePattern(legs), vector: clarke(v[0], v[1], v[2]) }
            })
            .collect(),
        VectorTableMode::PostFault(faulted) => {
            let remaining: Vec<usize> = (0..3).filter(|&k| k != faulted.index()).collect();
            (0..4u8)
                .map(|idx| {
                    let mut legs = [false; 3];
                    legs[remaining[0]] = idx & 2 != 0;
                    legs[remaining[1]] = idx & 1 != 0;
                    let mut poles = legs.map(|on| Some(level(on)));
                    poles[faulted.index()] = None;
                    let v = machine_phase_voltages(poles, RelayState::Closed).expect("closed relay");
                    VectorCandidate { pattern: GatePattern(legs), vector: clarke(v[0], v[1], v[2]) }
                })
                .collect()
        }
    }
}

/// Source currents delivered by the first stage into each half of the bus.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SourceCurrents<T> {
    pub upper: T,
    pub lower: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcLinkStep<T> {
    pub state: DcLinkState<T>,
    /// A capacitor voltage went negative and was clamped to zero.
    pub clamped: bool,
}

/// Charge balance on both capacitors over `dt`.
///
/// `i_upper_rail` leaves the positive rail into the legs, `i_lower_rail`
/// returns into the negative rail from the legs; `i_mid` is recorded only.
pub fn dc_link_step<T: Scalar>(
    dc: &DcLinkState<T>,
    i_upper_rail: T,
    i_lower_rail: T,
    i_mid: T,
    source: SourceCurrents<T>,
    dt: T,
) -> DcLinkStep<T> {
    debug_assert!(dt > T::zero());
    let mut v1 = dc.v_dc1 + (source.upper - i_upper_rail) * dt / dc.c1;
    let mut v2 = dc.v_dc2 + (source.lower - i_lower_rail) * dt / dc.c2;
    let mut clamped = false;
    if v1 < T::zero() {
        v1 = T::zero();
        clamped = true;
    }
    if v2 < T::zero() {
        v2 = T::zero();
        clamped = true;
    }
    DcLinkStep { state: DcLinkState { v_dc1: v1, v_dc2: v2, c1: dc.c1, c2: dc.c2, i_mid }, clamped }
}

/// Averaged first-stage regulator holding each half bus at half the total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct DcdcBalancerConfig<T> {
    pub v_ref_total: T,
    /// Closed-loop corner (rad/s).
    pub bandwidth: T,
    pub max_source_current: T,
    #[serde(default = "default_duty")]
    pub duty: T,
    /// First-stage switching frequency (Hz).
    #[serde(default = "default_switching_frequency")]
    pub switching_frequency: T,
}

fn default_duty<T: Scalar>() -> T {
    T::lit(0.5)
}

fn default_switching_frequency<T: Scalar>() -> T {
    T::lit(20e3)
}

/// Source currents for a first-order relaxation of each half-bus voltage
/// towards `v_ref_total / 2`. The gain is chosen so that an unloaded
/// capacitor follows the exact discrete exponential with time constant
/// `1 / bandwidth`.
pub fn dcdc_balancer_step<T: Scalar>(dc: &DcLinkState<T>, cfg: &DcdcBalancerConfig<T>, dt: T) -> SourceCurrents<T> {
    debug_assert!(dt > T::zero());
    let target = cfg.v_ref_total / T::lit(2.0);
    let gain = -(-cfg.bandwidth * dt).exp_m1() / dt;
    SourceCurrents {
        upper: clamp_abs(dc.c1 * gain * (target - dc.v_dc1), cfg.max_source_current),
        lower: clamp_abs(dc.c2 * gain * (target - dc.v_dc2), cfg.max_source_current),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FuseState {
    #[default]
    Intact,
    Blown,
}

/// Runtime Joule-integral fuse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FuseElement<T> {
    pub rated_i2t: T,
    pub accumulated_i2t: T,
    pub state: FuseState,
}

impl<T: Scalar> FuseElement<T> {
    pub fn new(rated_i2t: T) -> Self {
        Self { rated_i2t, accumulated_i2t: T::zero(), state: FuseState::Intact }
    }

    pub fn is_blown(&self) -> bool {
        self.state == FuseState::Blown
    }
}

/// Accumulates `i²·dt`; the fuse blows once the rating is reached and then
/// never changes again.
pub fn fuse_step<T: Scalar>(f: &FuseElement<T>, i: T, dt: T) -> FuseElement<T> {
    debug_assert!(dt > T::zero());
    if f.is_blown() {
        return *f;
    }
    let accumulated = f.accumulated_i2t + i * i * dt;
    let state = if accumulated >= f.rated_i2t { FuseState::Blown } else { FuseState::Intact };
    FuseElement { rated_i2t: f.rated_i2t, accumulated_i2t: accumulated, state }
}
