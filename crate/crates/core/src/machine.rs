//! Squirrel-cage induction machine in the stationary αβ frame.
//!
//! State is `(i_s, ψ_r, ω_m)`; stator flux is derived through
//! [`stator_flux_from`]. Space vectors are carried as `Complex<T>` with the
//! real part on the α axis.

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MachineError {
    #[error("machine parameter `{0}` must be strictly positive")]
    NonPositive(&'static str),
    #[error("leakage coefficient {sigma} outside (0, 1): Lm^2 must stay below Ls*Lr")]
    Singular { sigma: f64 },
    #[error("pole pair count must be at least 1")]
    PolePairs,
    #[error("negative integration step {0}")]
    NegativeStep(f64),
    #[error("integration diverged (non-finite state)")]
    Diverged,
}

/// Electrical and mechanical nameplate data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MachineParams<T> {
    #[serde(rename = "Rs")]
    pub rs: T,
    #[serde(rename = "Rr")]
    pub rr: T,
    #[serde(rename = "Ls")]
    pub ls: T,
    #[serde(rename = "Lr")]
    pub lr: T,
    #[serde(rename = "Lm")]
    pub lm: T,
    #[serde(rename = "p")]
    pub pole_pairs: u32,
    /// Total inertia (kg·m²).
    #[serde(rename = "J")]
    pub inertia: T,
    #[serde(rename = "Tn")]
    pub nominal_torque: T,
    #[serde(rename = "psi_n")]
    pub nominal_flux: T,
}

impl<T: Scalar> MachineParams<T> {
    /// The 1.5 kW, two pole-pair laboratory machine.
    pub fn reference_1p5kw() -> Self {
        Self {
            rs: T::lit(1.4),
            rr: T::lit(1.1),
            ls: T::lit(0.175),
            lr: T::lit(0.175),
            lm: T::lit(0.170),
            pole_pairs: 2,
            inertia: T::lit(0.06),
            nominal_torque: T::lit(15.0),
            nominal_flux: T::lit(0.6),
        }
    }

    pub fn validate(&self) -> Result<(), MachineError> {
        let positive = [
            ("Rs", self.rs),
            ("Rr", self.rr),
            ("Ls", self.ls),
            ("Lr", self.lr),
            ("Lm", self.lm),
            ("J", self.inertia),
        ];
        for (name, v) in positive {
            if !(v > T::zero()) {
                return Err(MachineError::NonPositive(name));
            }
        }
        if self.pole_pairs < 1 {
            return Err(MachineError::PolePairs);
        }
        Ok(())
    }

    pub fn pole_pairs_scalar(&self) -> T {
        T::lit(self.pole_pairs as f64)
    }

    /// Weighting factor `Tn / ψn` used by the predictive cost.
    pub fn nominal_weight(&self) -> T {
        self.nominal_torque / self.nominal_flux
    }
}

/// Quantities derived once from [`MachineParams`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedParams<T> {
    /// Rotor coupling factor `Lm / Lr`.
    pub kr: T,
    /// Equivalent resistance `Rs + Rr·kr²`.
    pub r_sigma: T,
    /// Rotor time constant `Lr / Rr`.
    pub tau_r: T,
    /// Total leakage coefficient `1 − Lm²/(Ls·Lr)`.
    pub sigma: T,
    /// Transient time constant `σ·Ls / R_σ`.
    pub tau_sigma: T,
}

pub fn derive_params<T: Scalar>(params: &MachineParams<T>) -> Result<DerivedParams<T>, MachineError> {
    params.validate()?;
    let sigma = T::one() - params.lm * params.lm / (params.ls * params.lr);
    if !(sigma > T::zero() && sigma < T::one()) {
        return Err(MachineError::Singular { sigma: sigma.as_f64() });
    }
    let kr = params.lm / params.lr;
    let r_sigma = params.rs + params.rr * kr * kr;
    let tau_r = params.lr / params.rr;
    let tau_sigma = sigma * params.ls / r_sigma;
    Ok(DerivedParams { kr, r_sigma, tau_r, sigma, tau_sigma })
}

/// Stator flux from stator current and rotor flux: `ψs = kr·ψr + σ·Ls·is`.
#[inline]
pub fn stator_flux_from<T: Scalar>(
    is: Complex<T>,
    psir: Complex<T>,
    d: &DerivedParams<T>,
    params: &MachineParams<T>,
) -> Complex<T> {
    psir * d.kr + is * (d.sigma * params.ls)
}

/// Rotor flux from stator flux and current; exact inverse of [`stator_flux_from`].
#[inline]
pub fn rotor_flux_from<T: Scalar>(psis: Complex<T>, is: Complex<T>, params: &MachineParams<T>) -> Complex<T> {
    psis * (params.lr / params.lm) + is * (params.lm - params.lr * params.ls / params.lm)
}

/// Electromagnetic torque `1.5·p·(ψα·iβ − ψβ·iα)`.
#[inline]
pub fn torque<T: Scalar>(psis: Complex<T>, is: Complex<T>, pole_pairs: T) -> T {
    T::lit(1.5) * pole_pairs * (psis.re * is.im - psis.im * is.re)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MachineState<T> {
    pub is: Complex<T>,
    pub psir: Complex<T>,
    pub omega_m: T,
}

impl<T: Scalar> MachineState<T> {
    pub fn zero() -> Self {
        Self {
            is: Complex::new(T::zero(), T::zero()),
            psir: Complex::new(T::zero(), T::zero()),
            omega_m: T::zero(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.is.re.is_finite()
            && self.is.im.is_finite()
            && self.psir.re.is_finite()
            && self.psir.im.is_finite()
            && self.omega_m.is_finite()
    }

    /// `self + rate·h`
    #[inline]
    fn advanced(&self, rate: &Self, h: T) -> Self {
        Self {
            is: self.is + rate.is * h,
            psir: self.psir + rate.psir * h,
            omega_m: self.omega_m + rate.omega_m * h,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineInputs<T> {
    pub vs: Complex<T>,
    pub load_torque: T,
}

/// Restriction on the stator current imposed by open converter legs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CurrentConstraint<T> {
    Free,
    /// Current component along this unit vector is held at zero (one open
    /// phase with a floating neutral).
    Orthogonal(Complex<T>),
    /// No stator current can flow.
    Blocked,
}

impl<T: Scalar> CurrentConstraint<T> {
    /// Projects a stator current (or its rate) onto the admissible subspace.
    pub fn project(&self, v: Complex<T>) -> Complex<T> {
        match *self {
            CurrentConstraint::Free => v,
            CurrentConstraint::Orthogonal(u) => {
                let along = v.re * u.re + v.im * u.im;
                v - u * along
            }
            CurrentConstraint::Blocked => Complex::new(T::zero(), T::zero()),
        }
    }
}

/// Time derivative of the machine state.
pub fn derivatives<T: Scalar>(
    state: &MachineState<T>,
    u: &MachineInputs<T>,
    params: &MachineParams<T>,
    d: &DerivedParams<T>,
) -> MachineState<T> {
    let p = params.pole_pairs_scalar();
    let omega = p * state.omega_m;
    let j = Complex::new(T::zero(), T::one());
    let rotor_emf = state.psir * Complex::new(T::one() / d.tau_r, -omega) * (d.kr / d.r_sigma);
    let dis = (rotor_emf + u.vs / d.r_sigma - state.is) / d.tau_sigma;
    let dpsir = (state.is * params.lm - state.psir) / d.tau_r + j * state.psir * omega;
    let psis = stator_flux_from(state.is, state.psir, d, params);
    let te = torque(psis, state.is, p);
    let domega = (te - u.load_torque) / params.inertia;
    MachineState { is: dis, psir: dpsir, omega_m: domega }
}

/// [`derivatives`] with the stator current rate projected onto `constraint`.
pub fn derivatives_constrained<T: Scalar>(
    state: &MachineState<T>,
    u: &MachineInputs<T>,
    params: &MachineParams<T>,
    d: &DerivedParams<T>,
    constraint: CurrentConstraint<T>,
) -> MachineState<T> {
    let mut rate = derivatives(state, u, params, d);
    rate.is = constraint.project(rate.is);
    rate
}

/// Stator voltage actually present at the terminals when `constraint` is
/// active: the applied voltage plus whatever the open phase induces.
pub fn terminal_voltage<T: Scalar>(
    state: &MachineState<T>,
    u: &MachineInputs<T>,
    params: &MachineParams<T>,
    d: &DerivedParams<T>,
    constraint: CurrentConstraint<T>,
) -> Complex<T> {
    if constraint == CurrentConstraint::Free {
        return u.vs;
    }
    let free = derivatives(state, u, params, d).is;
    let held = constraint.project(free);
    u.vs + (held - free) * (d.r_sigma * d.tau_sigma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Euler,
    #[default]
    Rk4,
}

/// One explicit step with inputs held over `dt`.
pub fn integrate_step<T: Scalar>(
    state: &MachineState<T>,
    u: &MachineInputs<T>,
    params: &MachineParams<T>,
    d: &DerivedParams<T>,
    dt: T,
    method: Integrator,
) -> Result<MachineState<T>, MachineError> {
    integrate_step_constrained(state, u, params, d, dt, method, CurrentConstraint::Free)
}

pub fn integrate_step_constrained<T: Scalar>(
    state: &MachineState<T>,
    u: &MachineInputs<T>,
    params: &MachineParams<T>,
    d: &DerivedParams<T>,
    dt: T,
    method: Integrator,
    constraint: CurrentConstraint<T>,
) -> Result<MachineState<T>, MachineError> {
    if dt < T::zero() {
        return Err(MachineError::NegativeStep(dt.as_f64()));
    }
    let f = |s: &MachineState<T>| derivatives_constrained(s, u, params, d, constraint);
    let next = match method {
        Integrator::Euler => state.advanced(&f(state), dt),
        Integrator::Rk4 => {
            let half = dt / T::lit(2.0);
            let k1 = f(state);
            let k2 = f(&state.advanced(&k1, half));
            let k3 = f(&state.advanced(&k2, half));
            let k4 = f(&state.advanced(&k3, dt));
            let two = T::lit(2.0);
            let sixth = dt / T::lit(6.0);
            MachineState {
                is: state.is + (k1.is + k2.is * two + k3.is * two + k4.is) * sixth,
                psir: state.psir + (k1.psir + k2.psir * two + k3.psir * two + k4.psir) * sixth,
                omega_m: state.omega_m + (k1.omega_m + two * k2.omega_m + two * k3.omega_m + k4.omega_m) * sixth,
            }
        }
    };
    if next.is_finite() {
        Ok(next)
    } else {
        Err(MachineError::Diverged)
    }
}

/// Parameters and derived constants bundled for repeated use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InductionMachine<T> {
    pub params: MachineParams<T>,
    pub derived: DerivedParams<T>,
}

impl<T: Scalar> InductionMachine<T> {
    pub fn new(params: MachineParams<T>) -> Result<Self, MachineError> {
        let derived = derive_params(&params)?;
        Ok(Self { params, derived })
    }

    pub fn stator_flux(&self, state: &MachineState<T>) -> Complex<T> {
        stator_flux_from(state.is, state.psir, &self.derived, &self.params)
    }

    pub fn torque(&self, state: &MachineState<T>) -> T {
        torque(self.stator_flux(state), state.is, self.params.pole_pairs_scalar())
    }

    pub fn derivatives(&self, state: &MachineState<T>, u: &MachineInputs<T>) -> MachineState<T> {
        derivatives(state, u, &self.params, &self.derived)
    }

    pub fn step(
        &self,
        state: &MachineState<T>,
        u: &MachineInputs<T>,
        dt: T,
        method: Integrator,
        constraint: CurrentConstraint<T>,
    ) -> Result<MachineState<T>, MachineError> {
        integrate_step_constrained(state, u, &self.params, &self.derived, dt, method, constraint)
    }
}
