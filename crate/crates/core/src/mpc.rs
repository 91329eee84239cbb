//! Finite-control-set predictive torque and flux control with an outer PI
//! speed loop.

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::converter::VectorCandidate;
use crate::machine::{rotor_flux_from, torque, DerivedParams, InductionMachine, MachineParams};
use crate::scalar::{clamp_abs, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MpcError {
    #[error("controller parameter `{0}` out of range")]
    Invalid(&'static str),
    #[error("empty voltage vector table")]
    EmptyTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig<T> {
    /// Control period (s).
    #[serde(rename = "Ts")]
    pub ts: T,
    /// Flux weighting (N·m/Wb).
    pub lambda: T,
    /// Stator flux magnitude reference (Wb).
    pub flux_ref: T,
    pub delay_compensation: bool,
    /// Extra factor on the flux term; 3 gives the uncompensated cost variant.
    pub flux_term_multiplier: T,
}

impl<T: Scalar> MpcConfig<T> {
    /// Nominal weighting `Tn/ψn`, rated flux reference and delay compensation on.
    pub fn for_machine(params: &MachineParams<T>, ts: T) -> Self {
        Self {
            ts,
            lambda: params.nominal_weight(),
            flux_ref: params.nominal_flux,
            delay_compensation: true,
            flux_term_multiplier: T::one(),
        }
    }

    pub fn validate(&self) -> Result<(), MpcError> {
        if !(self.ts > T::zero()) {
            return Err(MpcError::Invalid("Ts"));
        }
        if !(self.lambda >= T::zero()) {
            return Err(MpcError::Invalid("lambda"));
        }
        if !(self.flux_ref > T::zero()) {
            return Err(MpcError::Invalid("flux_ref"));
        }
        if !(self.flux_term_multiplier >= T::zero()) {
            return Err(MpcError::Invalid("flux_term_multiplier"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EstimatorState<T> {
    pub psis_hat: Complex<T>,
    pub last_vs: Complex<T>,
}

/// Voltage-model flux update `ψ(k) = ψ(k−1) + Ts·vs − Rs·Ts·is(k)`.
#[inline]
pub fn estimate_stator_flux<T: Scalar>(est: &EstimatorState<T>, vs: Complex<T>, is: Complex<T>, rs: T, ts: T) -> EstimatorState<T> {
    EstimatorState { psis_hat: est.psis_hat + vs * ts - is * (rs * ts), last_vs: vs }
}

/// One-step stator flux prediction for a candidate voltage.
#[inline]
pub fn predict_stator_flux<T: Scalar>(psis: Complex<T>, vs: Complex<T>, is: Complex<T>, rs: T, ts: T) -> Complex<T> {
    psis + vs * ts - is * (rs * ts)
}

/// Semi-implicit one-step stator current prediction; `omega_e` is the
/// electrical rotor speed.
#[inline]
pub fn predict_current<T: Scalar>(
    is: Complex<T>,
    psir: Complex<T>,
    vs: Complex<T>,
    omega_e: T,
    d: &DerivedParams<T>,
    ts: T,
) -> Complex<T> {
    let h = ts / d.tau_sigma;
    let emf = psir * Complex::new(T::one() / d.tau_r, -omega_e) * d.kr;
    (is + (emf + vs) * (h / d.r_sigma)) / (T::one() + h)
}

#[inline]
pub fn predict_torque<T: Scalar>(psis: Complex<T>, is: Complex<T>, pole_pairs: T) -> T {
    torque(psis, is, pole_pairs)
}

/// `|Te* − Te| + m·λ·| |ψ*| − |ψ| |`
#[inline]
pub fn cost<T: Scalar>(te_ref: T, te_pred: T, flux_ref: T, flux_pred_mag: T, cfg: &MpcConfig<T>) -> T {
    (te_ref - te_pred).abs() + cfg.flux_term_multiplier * cfg.lambda * (flux_ref - flux_pred_mag).abs()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurements<T> {
    pub is: Complex<T>,
    pub omega_m: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct References<T> {
    pub torque: T,
    pub flux: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection<T> {
    pub index: usize,
    pub costs: Vec<T>,
}

/// Predicted state one control period ahead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction<T> {
    pub psis: Complex<T>,
    pub is: Complex<T>,
    pub torque: T,
}

/// Advances flux and current one period under `vs`.
pub fn predict_step<T: Scalar>(
    machine: &InductionMachine<T>,
    psis: Complex<T>,
    is: Complex<T>,
    vs: Complex<T>,
    omega_m: T,
    ts: T,
) -> Prediction<T> {
    let p = machine.params.pole_pairs_scalar();
    let psir = rotor_flux_from(psis, is, &machine.params);
    let next_psis = predict_stator_flux(psis, vs, is, machine.params.rs, ts);
    let next_is = predict_current(is, psir, vs, p * omega_m, &machine.derived, ts);
    Prediction { psis: next_psis, is: next_is, torque: predict_torque(next_psis, next_is, p) }
}

/// Chooses the candidate minimizing the cost at the prediction horizon.
///
/// With `committed` set (delay compensation), the state is first advanced
/// over the period in which that vector is already applied, and candidates
/// are scored one period later. Ties resolve to the lowest index.
pub fn select_vector<T: Scalar>(
    est: &EstimatorState<T>,
    meas: &Measurements<T>,
    refs: &References<T>,
    vectors: &[VectorCandidate<T>],
    cfg: &MpcConfig<T>,
    machine: &InductionMachine<T>,
    committed: Option<Complex<T>>,
) -> Result<Selection<T>, MpcError> {
    if vectors.is_empty() {
        return Err(MpcError::EmptyTable);
    }
    let (psis, is) = match committed {
        Some(v) => {
            let first = predict_step(machine, est.psis_hat, meas.is, v, meas.omega_m, cfg.ts);
            (first.psis, first.is)
        }
        None => (est.psis_hat, meas.is),
    };
    let costs: Vec<T> = vectors
        .iter()
        .map(|c| {
            let pr = predict_step(machine, psis, is, c.vector, meas.omega_m, cfg.ts);
            cost(refs.torque, pr.torque, refs.flux, pr.psis.norm(), cfg)
        })
        .collect();
    let mut index = 0;
    for (k, g) in costs.iter().enumerate() {
        if *g < costs[index] {
            index = k;
        }
    }
    Ok(Selection { index, costs })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiConfig<T> {
    pub kp: T,
    pub ki: T,
    pub t_max: T,
}

impl<T: Scalar> PiConfig<T> {
    /// Inertia-scaled tuning `kp = 4·J·bw`, `ki = J·bw²`, limit `1.5·Tn`.
    pub fn for_machine(params: &MachineParams<T>, bandwidth: T) -> Self {
        Self {
            kp: T::lit(4.0) * params.inertia * bandwidth,
            ki: params.inertia * bandwidth * bandwidth,
            t_max: T::lit(1.5) * params.nominal_torque,
        }
    }

    pub fn validate(&self) -> Result<(), MpcError> {
        if !(self.kp >= T::zero()) {
            return Err(MpcError::Invalid("kp"));
        }
        if !(self.ki >= T::zero()) {
            return Err(MpcError::Invalid("ki"));
        }
        if !(self.t_max > T::zero()) {
            return Err(MpcError::Invalid("t_max"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PiState<T> {
    pub integral: T,
}

/// PI speed regulator; the integrator holds while the output is clamped.
pub fn pi_speed_step<T: Scalar>(omega_ref: T, omega_m: T, state: &PiState<T>, cfg: &PiConfig<T>, dt: T) -> (T, PiState<T>) {
    let e = omega_ref - omega_m;
    let integral = state.integral + e * dt;
    let raw = cfg.kp * e + cfg.ki * integral;
    if raw.abs() > cfg.t_max {
        (clamp_abs(cfg.kp * e + cfg.ki * state.integral, cfg.t_max), *state)
    } else {
        (raw, PiState { integral })
    }
}

/// Number of control periods over which the torque reference ramps in.
pub const STARTUP_RAMP_PERIODS: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput<T> {
    pub index: usize,
    pub torque_ref: T,
    pub psis_hat: Complex<T>,
}

/// Controller state owned by one run: estimator, speed loop and the vector
/// committed for the current period.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveController<T> {
    pub machine: InductionMachine<T>,
    pub mpc: MpcConfig<T>,
    pub pi: PiConfig<T>,
    pub estimator: EstimatorState<T>,
    pub pi_state: PiState<T>,
    pub committed: Option<Complex<T>>,
    periods: u32,
}

impl<T: Scalar> DriveController<T> {
    pub fn new(machine: InductionMachine<T>, mpc: MpcConfig<T>, pi: PiConfig<T>) -> Result<Self, MpcError> {
        mpc.validate()?;
        pi.validate()?;
        Ok(Self {
            machine,
            mpc,
            pi,
            estimator: EstimatorState::default(),
            pi_state: PiState::default(),
            committed: None,
            periods: 0,
        })
    }

    /// One control period: estimator update with the voltage applied over
    /// the past period, speed loop, vector selection.
    ///
    /// `committed` is the vector that will be applied during the coming
    /// period regardless of this decision (actuation delay); pass `None`
    /// when the decision takes effect immediately or compensation is off.
    pub fn step(
        &mut self,
        meas: &Measurements<T>,
        omega_ref: T,
        applied_vs: Complex<T>,
        vectors: &[VectorCandidate<T>],
        committed: Option<Complex<T>>,
    ) -> Result<ControlOutput<T>, MpcError> {
        let ts = self.mpc.ts;
        self.estimator = estimate_stator_flux(&self.estimator, applied_vs, meas.is, self.machine.params.rs, ts);
        let (te, pi_state) = pi_speed_step(omega_ref, meas.omega_m, &self.pi_state, &self.pi, ts);
        self.pi_state = pi_state;
        self.periods = self.periods.saturating_add(1);
        let ramp = T::lit(self.periods.min(STARTUP_RAMP_PERIODS) as f64 / STARTUP_RAMP_PERIODS as f64);
        let refs = References { torque: te * ramp, flux: self.mpc.flux_ref };
        let committed = if self.mpc.delay_compensation { committed } else { None };
        self.committed = committed;
        let sel = select_vector(&self.estimator, meas, &refs, vectors, &self.mpc, &self.machine, committed)?;
        Ok(ControlOutput { index: sel.index, torque_ref: refs.torque, psis_hat: self.estimator.psis_hat })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::converter::{voltage_vector_table, DcLinkState, GatePattern, Leg, VectorTableMode};
    use crate::machine::{integrate_step, stator_flux_from, Integrator, MachineInputs, MachineState};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    fn machine() -> InductionMachine<f64> {
        InductionMachine::new(MachineParams::reference_1p5kw()).unwrap()
    }

    fn cfg(delay: bool) -> MpcConfig<f64> {
        let mut c = MpcConfig::for_machine(&MachineParams::reference_1p5kw(), 20e-6);
        c.delay_compensation = delay;
        c
    }

    #[test]
    fn estimator_examples() {
        let e = estimate_stator_flux(&EstimatorState::default(), c(100.0, 0.0), c(0.0, 0.0), 1.4, 1e-4);
        assert!((e.psis_hat - c(0.01, 0.0)).norm() < 1e-15);
        let start = EstimatorState { psis_hat: c(0.3, -0.2), last_vs: c(0.0, 0.0) };
        let is = c(3.0, -1.0);
        let e = estimate_stator_flux(&start, is * 1.4, is, 1.4, 20e-6);
        assert!((e.psis_hat - start.psis_hat).norm() < 1e-15);
    }

    #[test]
    fn estimator_tracks_machine_flux_over_a_period() {
        let m = machine();
        let (p, d) = (m.params, m.derived);
        let f = 25.0;
        let w = 2.0 * PI * f;
        let amp = 0.6 * w;
        let dt = 5e-6;
        let ts = 20e-6;
        let mut s = MachineState::zero();
        let mut t = 0.0;
        let v_at = |t: f64| Complex::from_polar(amp, w * t);
        // settle to steady state
        while t < 1.5 {
            s = integrate_step(&s, &MachineInputs { vs: v_at(t), load_torque: 0.0 }, &p, &d, dt, Integrator::Rk4).unwrap();
            t += dt;
        }
        let mut est = EstimatorState { psis_hat: m.stator_flux(&s), last_vs: c(0.0, 0.0) };
        let periods = (1.0 / f / ts).round() as usize;
        for _ in 0..periods {
            let mut v_avg = c(0.0, 0.0);
            for _ in 0..4 {
                let vs = v_at(t);
                v_avg += vs / 4.0;
                s = integrate_step(&s, &MachineInputs { vs, load_torque: 0.0 }, &p, &d, dt, Integrator::Rk4).unwrap();
                t += dt;
            }
            est = estimate_stator_flux(&est, v_avg, s.is, p.rs, ts);
        }
        let truth = m.stator_flux(&s);
        assert!((est.psis_hat - truth).norm() < 0.01 * truth.norm(), "{:?} vs {:?}", est.psis_hat, truth);
    }

    #[test]
    fn flux_prediction_examples() {
        let psi = c(0.2, 0.5);
        assert_eq!(predict_stator_flux(psi, c(0.0, 0.0), c(0.0, 0.0), 1.4, 20e-6), psi);
        let is = c(2.0, 1.0);
        let base = predict_stator_flux(psi, c(0.0, 0.0), is, 1.4, 20e-6);
        let a = predict_stator_flux(psi, c(120.0, -30.0), is, 1.4, 20e-6) - base;
        let b = predict_stator_flux(psi, c(-40.0, 77.0), is, 1.4, 20e-6) - base;
        let ab = predict_stator_flux(psi, c(80.0, 47.0), is, 1.4, 20e-6) - base;
        assert!((ab - a - b).norm() < 1e-15);
    }

    #[test]
    fn flux_prediction_matches_machine_over_one_step() {
        let m = machine();
        let s = MachineState { is: c(4.0, 7.0), psir: c(0.55, -0.1), omega_m: 100.0 };
        let psis = m.stator_flux(&s);
        let vs = c(-200.0, 60.0);
        let ts = 20e-6;
        let mut x = s;
        for _ in 0..200 {
            x = m.step(&x, &MachineInputs { vs, load_torque: 10.0 }, ts / 200.0, Integrator::Rk4, crate::machine::CurrentConstraint::Free).unwrap();
        }
        let pred = predict_stator_flux(psis, vs, s.is, m.params.rs, ts);
        assert!((pred - m.stator_flux(&x)).norm() < 1e-3 * 0.6);
    }

    #[test]
    fn current_prediction_examples() {
        let d = machine().derived;
        let z = c(0.0, 0.0);
        assert_eq!(predict_current(z, z, z, 0.0, &d, 20e-6), z);
        let i = predict_current(z, z, c(100.0, 0.0), 0.0, &d, 20e-6);
        assert!((i.re - 0.2018998).abs() < 1e-6 && i.im == 0.0, "{i}");
        let closed = 20e-6 / (20e-6 + d.tau_sigma) * 100.0 / d.r_sigma;
        assert!((i.re - closed).abs() < 1e-12);
    }

    /// Max stator current error of the discrete predictor iterated over 1 ms
    /// against a fine rk4 trajectory at constant speed.
    pub(crate) fn predictor_error(ts: f64) -> f64 {
        let mut m = machine();
        m.params.inertia = 1e12;
        let (p, d) = (m.params, m.derived);
        let s0 = MachineState { is: c(3.0, -2.0), psir: c(0.5, 0.2), omega_m: 40.0 };
        let vs = c(150.0, 90.0);
        let u = MachineInputs { vs, load_torque: 0.0 };
        let n = (1e-3 / ts).round() as usize;
        let sub = 50;
        let mut truth = s0;
        let mut psis = m.stator_flux(&s0);
        let mut is = s0.is;
        let mut worst: f64 = 0.0;
        for _ in 0..n {
            for _ in 0..sub {
                truth = integrate_step(&truth, &u, &p, &d, ts / sub as f64, Integrator::Rk4).unwrap();
            }
            let next = predict_step(&m, psis, is, vs, s0.omega_m, ts);
            psis = next.psis;
            is = next.is;
            worst = worst.max((is - truth.is).norm());
        }
        worst
    }

    #[test]
    fn current_prediction_is_first_order() {
        let ratio = predictor_error(20e-6) / predictor_error(10e-6);
        assert!((1.9..=2.2).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn torque_prediction_matches_machine_torque() {
        assert!((predict_torque(c(0.6, 0.0), c(0.0, 10.0), 2.0) - 18.0).abs() < 1e-12);
        assert!(predict_torque(c(0.3, 0.4), c(3.0, 4.0), 2.0).abs() < 1e-12);
        let (psi, i) = (c(0.45, -0.3), c(-2.0, 6.5));
        let cross = 1.5 * 2.0 * (psi.re * i.im - psi.im * i.re);
        assert_eq!(predict_torque(psi, i, 2.0), cross);
    }

    #[test]
    fn cost_examples() {
        let k = cfg(true);
        assert_eq!(cost(10.0, 10.0, 0.6, 0.6, &k), 0.0);
        assert!((cost(10.0, 9.0, 0.6, 0.56, &k) - 2.0).abs() < 1e-12);
        let mut k2 = k;
        k2.lambda *= 2.0;
        let base = cost(10.0, 9.0, 0.6, 0.56, &k);
        let doubled = cost(10.0, 9.0, 0.6, 0.56, &k2);
        assert!((doubled - 1.0 - 2.0 * (base - 1.0)).abs() < 1e-12);
    }

    fn candidate(v: Complex<f64>) -> VectorCandidate<f64> {
        VectorCandidate { pattern: GatePattern([false; 3]), vector: v }
    }

    #[test]
    fn exact_candidate_is_selected() {
        let m = machine();
        let k = cfg(false);
        let est = EstimatorState { psis_hat: c(0.58, 0.05), last_vs: c(0.0, 0.0) };
        let meas = Measurements { is: c(2.0, 4.0), omega_m: 50.0 };
        let target = c(180.0, 40.0);
        let pr = predict_step(&m, est.psis_hat, meas.is, target, meas.omega_m, k.ts);
        let refs = References { torque: pr.torque, flux: pr.psis.norm() };
        let table: Vec<_> = [c(-200.0, 0.0), c(0.0, 0.0), target, c(0.0, 200.0)].map(candidate).to_vec();
        let sel = select_vector(&est, &meas, &refs, &table, &k, &m, None).unwrap();
        assert_eq!(sel.index, 2);
        assert!(sel.costs[2] < 1e-12);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let m = machine();
        let d = DcLinkState::balanced(300.0, 3600e-6, 3600e-6);
        let table = voltage_vector_table(VectorTableMode::Normal, &d);
        let est = EstimatorState { psis_hat: c(0.6, 0.0), last_vs: c(0.0, 0.0) };
        let meas = Measurements { is: c(0.0, 0.0), omega_m: 0.0 };
        // zero vectors 0 and 7 tie and win when nothing should change
        let pr = predict_step(&m, est.psis_hat, meas.is, c(0.0, 0.0), 0.0, 20e-6);
        let refs = References { torque: pr.torque, flux: pr.psis.norm() };
        let sel = select_vector(&est, &meas, &refs, &table, &cfg(false), &m, None).unwrap();
        assert_eq!(sel.costs[0].to_bits(), sel.costs[7].to_bits());
        assert_eq!(sel.index, 0);
    }

    #[test]
    fn empty_table_is_rejected() {
        let m = machine();
        let est = EstimatorState::default();
        let meas = Measurements { is: c(0.0, 0.0), omega_m: 0.0 };
        let refs = References { torque: 0.0, flux: 0.6 };
        assert_eq!(select_vector(&est, &meas, &refs, &[], &cfg(false), &m, None), Err(MpcError::EmptyTable));
    }

    /// Independent restatement of the prediction chain for brute-force checks.
    fn oracle_step(psis: Complex<f64>, is: Complex<f64>, v: Complex<f64>, wm: f64, ts: f64) -> (Complex<f64>, Complex<f64>, f64) {
        let (rs, rr, ls, lr, lm, p) = (1.4, 1.1, 0.175, 0.175, 0.17, 2.0);
        let kr = lm / lr;
        let rsig = rs + rr * kr * kr;
        let sigma = 1.0 - lm * lm / (ls * lr);
        let tsig = sigma * ls / rsig;
        let tr = lr / rr;
        let psir = (psis - is * sigma * ls) / kr;
        let psis1 = psis + v * ts - is * rs * ts;
        let a = ts / tsig;
        let rhs = is + (psir * c(1.0 / tr, -p * wm) * kr + v) * (a / rsig);
        let is1 = rhs / (1.0 + a);
        let te = 1.5 * p * (psis1.re * is1.im - psis1.im * is1.re);
        (psis1, is1, te)
    }

    fn brute_force(
        psis: Complex<f64>,
        is: Complex<f64>,
        wm: f64,
        refs: &References<f64>,
        table: &[VectorCandidate<f64>],
        k: &MpcConfig<f64>,
        committed: Option<usize>,
    ) -> usize {
        let g = |te: f64, psi: Complex<f64>| (refs.torque - te).abs() + k.flux_term_multiplier * k.lambda * (refs.flux - psi.norm()).abs();
        let mut best = (f64::INFINITY, usize::MAX);
        match committed {
            None => {
                for (j, cand) in table.iter().enumerate() {
                    let (psi, _, te) = oracle_step(psis, is, cand.vector, wm, k.ts);
                    if g(te, psi) < best.0 {
                        best = (g(te, psi), j);
                    }
                }
            }
            Some(first) => {
                // all sequences; only those starting with the committed vector are admissible
                for (i0, c0) in table.iter().enumerate() {
                    for (j, c1) in table.iter().enumerate() {
                        let (psi1, is1, _) = oracle_step(psis, is, c0.vector, wm, k.ts);
                        let (psi2, _, te2) = oracle_step(psi1, is1, c1.vector, wm, k.ts);
                        if i0 == first && g(te2, psi2) < best.0 {
                            best = (g(te2, psi2), j);
                        }
                    }
                }
            }
        }
        best.1
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]
        #[test]
        fn selection_matches_brute_force(
            v1 in 100.0..200.0f64, v2 in 100.0..200.0f64,
            psi_mag in 0.3..0.8f64, psi_ang in -PI..PI,
            i_re in -15.0..15.0f64, i_im in -15.0..15.0f64,
            wm in -150.0..150.0f64, te_ref in -20.0..20.0f64, flux_ref in 0.4..0.7f64,
            postfault in any::<bool>(), delay in any::<bool>(), committed_pick in 0usize..8,
        ) {
            let m = machine();
            let k = cfg(delay);
            let d = DcLinkState { v_dc1: v1, v_dc2: v2, c1: 1e-3, c2: 1e-3, i_mid: 0.0 };
            let mode = if postfault { VectorTableMode::PostFault(Leg::A) } else { VectorTableMode::Normal };
            let table = voltage_vector_table(mode, &d);
            let committed = committed_pick % table.len();
            let est = EstimatorState { psis_hat: Complex::from_polar(psi_mag, psi_ang), last_vs: c(0.0, 0.0) };
            let meas = Measurements { is: c(i_re, i_im), omega_m: wm };
            let refs = References { torque: te_ref, flux: flux_ref };
            let commit = delay.then(|| table[committed].vector);
            let sel = select_vector(&est, &meas, &refs, &table, &k, &m, commit).unwrap();
            let want = brute_force(est.psis_hat, meas.is, wm, &refs, &table, &k, delay.then_some(committed));
            prop_assert_eq!(sel.index, want);
        }

        #[test]
        fn cost_ignores_candidate_labels(perm_seed in 0usize..24, te in -20.0..20.0f64) {
            let m = machine();
            let k = cfg(false);
            let d = DcLinkState::balanced(300.0, 1e-3, 1e-3);
            let table = voltage_vector_table(VectorTableMode::PostFault(Leg::B), &d);
            let mut order: Vec<usize> = (0..4).collect();
            let mut s = perm_seed;
            for i in (1..4).rev() {
                order.swap(i, s % (i + 1));
                s /= i + 1;
            }
            let shuffled: Vec<_> = order.iter().map(|&i| table[i]).collect();
            let est = EstimatorState { psis_hat: c(0.5, 0.3), last_vs: c(0.0, 0.0) };
            let meas = Measurements { is: c(3.0, -5.0), omega_m: 60.0 };
            let refs = References { torque: te, flux: 0.6 };
            let a = select_vector(&est, &meas, &refs, &table, &k, &m, None).unwrap();
            let b = select_vector(&est, &meas, &refs, &shuffled, &k, &m, None).unwrap();
            for (pos, &orig) in order.iter().enumerate() {
                prop_assert_eq!(b.costs[pos].to_bits(), a.costs[orig].to_bits());
            }
        }
    }

    fn pi() -> PiConfig<f64> {
        PiConfig::for_machine(&MachineParams::reference_1p5kw(), 20.0)
    }

    #[test]
    fn pi_defaults() {
        let k = pi();
        assert!((k.kp - 4.8).abs() < 1e-12 && (k.ki - 24.0).abs() < 1e-12 && (k.t_max - 22.5).abs() < 1e-12);
    }

    #[test]
    fn pi_examples() {
        let k = pi();
        let (out, st) = pi_speed_step(10.0, 10.0, &PiState::default(), &k, 1e-4);
        assert_eq!(out, 0.0);
        assert_eq!(st.integral, 0.0);
        let (out, st) = pi_speed_step(1000.0, 0.0, &PiState::default(), &k, 1e-4);
        assert_eq!(out, k.t_max);
        assert_eq!(st.integral, 0.0);
        let (out, _) = pi_speed_step(-1000.0, 0.0, &PiState::default(), &k, 1e-4);
        assert_eq!(out, -k.t_max);
        let e = 0.5;
        let dt = 1e-3;
        let mut st = PiState::default();
        let mut out = 0.0;
        for _ in 0..200 {
            (out, st) = pi_speed_step(e, 0.0, &st, &k, dt);
        }
        assert!((out - (k.kp * e + k.ki * e * 0.2)).abs() < 1e-9);
    }

    #[test]
    fn controller_ramps_torque_reference() {
        let m = machine();
        let d = DcLinkState::balanced(300.0, 1e-3, 1e-3);
        let table = voltage_vector_table(VectorTableMode::Normal, &d);
        let mut ctl = DriveController::new(m, cfg(false), pi()).unwrap();
        let meas = Measurements { is: c(0.0, 0.0), omega_m: 0.0 };
        let first = ctl.step(&meas, 1000.0, c(0.0, 0.0), &table, None).unwrap();
        assert!((first.torque_ref - pi().t_max / 10.0).abs() < 1e-12);
        for _ in 0..20 {
            ctl.step(&meas, 1000.0, c(0.0, 0.0), &table, None).unwrap();
        }
        let later = ctl.step(&meas, 1000.0, c(0.0, 0.0), &table, None).unwrap();
        assert_eq!(later.torque_ref, pi().t_max);
    }

    #[test]
    fn controller_rejects_bad_config() {
        let mut k = cfg(true);
        k.ts = 0.0;
        assert!(DriveController::new(machine(), k, pi()).is_err());
        let mut k = cfg(true);
        k.flux_ref = -1.0;
        assert!(k.validate().is_err());
    }

    #[test]
    fn rotor_flux_round_trip_used_by_predictor() {
        let m = machine();
        let s = MachineState { is: c(1.0, 2.0), psir: c(0.4, 0.1), omega_m: 0.0 };
        let psis = stator_flux_from(s.is, s.psir, &m.derived, &m.params);
        assert!((rotor_flux_from(psis, s.is, &m.params) - s.psir).norm() < 1e-14);
    }
}
