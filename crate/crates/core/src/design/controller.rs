//! Integral double-lead voltage controller of the first stage and the
//! resulting loop gain.

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tf::RationalTransferFunction;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthesisError {
    #[error("corner frequencies must be positive")]
    NonPositive,
    #[error("pole {pole} rad/s must lie above zero {zero} rad/s")]
    PoleBelowZero { zero: f64, pole: f64 },
}

/// Op-amp network: feedback `1/sC2 ∥ (R2 + 1/sC1)`, input
/// `RA∥RB + R1 ∥ (R3 + 1/sC3)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ControllerComponents<T> {
    pub R1: T,
    pub R2: T,
    pub R3: T,
    pub RA: T,
    pub RB: T,
    pub C1: T,
    pub C2: T,
    pub C3: T,
}

impl<T: Scalar> ControllerComponents<T> {
    /// Thevenin resistance of the input divider.
    pub fn h11(&self) -> T {
        self.RA * self.RB / (self.RA + self.RB)
    }

    fn all_positive(&self) -> bool {
        [self.R1, self.R2, self.R3, self.RA, self.RB, self.C1, self.C2, self.C3].iter().all(|v| *v > T::zero())
    }

    pub fn feedback_impedance(&self, s: Complex<T>) -> Complex<T> {
        let one = Complex::new(T::one(), T::zero());
        let zc2 = one / (s * self.C2);
        let branch = one / (s * self.C1) + self.R2;
        zc2 * branch / (zc2 + branch)
    }

    pub fn input_impedance(&self, s: Complex<T>) -> Complex<T> {
        let one = Complex::new(T::one(), T::zero());
        let branch = one / (s * self.C3) + self.R3;
        let r1 = Complex::new(self.R1, T::zero());
        r1 * branch / (r1 + branch) + self.h11()
    }
}

/// Factored controller `F(s+zc1)(s+zc2) / [s(s+pc1)(s+pc2)]`, rad/s.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerDesign<T> {
    pub tf: RationalTransferFunction<T>,
    pub gain: T,
    pub zc1: T,
    pub zc2: T,
    pub pc1: T,
    pub pc2: T,
}

pub fn controller_tf<T: Scalar>(c: &ControllerComponents<T>) -> ControllerDesign<T> {
    debug_assert!(c.all_positive());
    let h = c.h11();
    let s = c.R1 + c.R3;
    let p = c.R1 * c.R3 + h * s;
    let gain = s / (c.C2 * p);
    let zc1 = T::one() / (c.R2 * c.C1);
    let pc1 = (c.C1 + c.C2) / (c.R2 * c.C1 * c.C2);
    let zc2 = T::one() / (s * c.C3);
    let pc2 = (c.R1 + h) / (c.C3 * p);
    let re = |x: T| Complex::new(-x, T::zero());
    let tf = RationalTransferFunction {
        gain,
        zeros: vec![re(zc1), re(zc2)],
        poles: vec![Complex::new(T::zero(), T::zero()), re(pc1), re(pc2)],
    };
    ControllerDesign { tf, gain, zc1, zc2, pc1, pc2 }
}

/// Component values realizing the requested gain and corners (rad/s).
/// `r1_seed` fixes the impedance level; `R3` is placed so that the input
/// divider resistance stays positive, and `RA = RB`.
pub fn synthesize_components<T: Scalar>(
    gain: T,
    zc1: T,
    zc2: T,
    pc1: T,
    pc2: T,
    r1_seed: T,
) -> Result<ControllerComponents<T>, SynthesisError> {
    if ![gain, zc1, zc2, pc1, pc2, r1_seed].iter().all(|v| *v > T::zero()) {
        return Err(SynthesisError::NonPositive);
    }
    for (z, p) in [(zc1, pc1), (zc2, pc2)] {
        if p <= z {
            return Err(SynthesisError::PoleBelowZero { zero: z.as_f64(), pole: p.as_f64() });
        }
    }
    let two = T::lit(2.0);
    let r1 = r1_seed;
    let ratio = pc2 / zc2;
    let r3 = r1 / (two * (ratio - T::one()));
    let s = r1 + r3;
    let h = r1 * (r1 / two) / (s * (ratio - T::one()));
    let c3 = T::one() / (zc2 * s);
    let p = r1 * r3 + h * s;
    let c2 = s / (gain * p);
    let c1 = c2 * (pc1 / zc1 - T::one());
    let r2 = T::one() / (zc1 * c1);
    Ok(ControllerComponents { R1: r1, R2: r2, R3: r3, RA: two * h, RB: two * h, C1: c1, C2: c2, C3: c3 })
}

/// Loop-gain data: frequencies in Hz except `omega_0` (rad/s) and `gain`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct LoopGainParams<T> {
    pub beta: T,
    /// Controller gain (rad/s).
    #[serde(rename = "F")]
    pub gain: T,
    pub f_zc: T,
    pub f_pc: T,
    pub f_zn: T,
    pub f_zp: T,
    pub zeta: T,
    pub omega_0: T,
    /// Modulator gain (1/V).
    #[serde(rename = "Tm")]
    pub tm: T,
    /// Lumped plant constant multiplying the reference dynamics.
    pub plant_gain: T,
    #[serde(default = "negative_one")]
    pub dc_gain_sign: T,
}

fn negative_one<T: Scalar>() -> T {
    -T::one()
}

impl<T: Scalar> LoopGainParams<T> {
    /// Reference controller and plant corners; `omega_0` and `plant_gain`
    /// are caller-supplied because they are not part of that data.
    pub fn reference_design(omega_0: T, plant_gain: T) -> Self {
        Self {
            beta: T::lit(0.125),
            gain: T::lit(2.708e6),
            f_zc: T::lit(330.851),
            f_pc: T::lit(12.09e3),
            f_zn: T::lit(21.09e3),
            f_zp: T::lit(9.88e3),
            zeta: T::lit(0.261),
            omega_0,
            tm: T::lit(0.2),
            plant_gain,
            dc_gain_sign: -T::one(),
        }
    }
}

/// `sign·K(s+ωzc)²(s+ωzn)(s−ωzp) / [s(s+ωpc)²(s²+2ζω0 s+ω0²)]`
/// with `K = β·F·Tm·plant_gain`.
pub fn loop_gain<T: Scalar>(p: &LoopGainParams<T>) -> RationalTransferFunction<T> {
    let w = |f: T| T::lit(2.0) * T::PI() * f;
    let k = p.beta * p.gain * p.tm * p.plant_gain * p.dc_gain_sign;
    let re = |x: T| Complex::new(x, T::zero());
    let wzc = w(p.f_zc);
    let wpc = w(p.f_pc);
    let sigma = p.zeta * p.omega_0;
    let wd = p.omega_0 * (T::one() - p.zeta * p.zeta).sqrt();
    RationalTransferFunction {
        gain: k,
        zeros: vec![re(-wzc), re(-wzc), re(-w(p.f_zn)), re(w(p.f_zp))],
        poles: vec![re(T::zero()), re(-wpc), re(-wpc), Complex::new(-sigma, wd), Complex::new(-sigma, -wd)],
    }
}
