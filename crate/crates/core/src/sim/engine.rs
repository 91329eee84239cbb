//! Fixed-step closed-loop simulation of the complete drive.
//!
//! Every simulation step: inject scheduled faults, run the detector and the
//! state machine, run the controller on control instants, record, then
//! advance the power stage (inverter, machine, fuses, DC link).

use num_complex::Complex;

use super::analysis::{analyze_window, speed_settle_time};
use super::scenario::{Scenario, ScenarioError};
use super::summary::{AbortRecord, Detection, FuseBlow, RunSummary, SummaryAnalysis, TimedAction};
use super::trace::TraceRecord;
use crate::converter::{
    clarke, dc_link_step, dcdc_balancer_step, fuse_step, inverse_clarke, inverse_clarke_with_zero, machine_phase_voltages,
    open_phase_voltages, pole_voltages_with_currents, voltage_vector_table, DcLinkState, DcdcBalancerConfig, Device,
    DeviceHealth, FuseElement, GatePattern, Leg, LegConduction, RelayState, SwitchingState, VectorCandidate,
    VectorTableMode,
};
use crate::design::{fault_current, melt_time, FuseDesignParams};
use crate::fault::{
    fsm_step, sc_detection_event, Action, Classification, DriveMode, FaultKind, FaultTarget, FsmConfig,
    FsmEvent, FsmState, OpenSwitchDetector,
};
use crate::machine::{terminal_voltage, CurrentConstraint, InductionMachine, MachineInputs, MachineParams, MachineState};
use crate::mpc::{DriveController, Measurements, MpcConfig, PiConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub trace: Vec<TraceRecord>,
    pub summary: RunSummary,
}

/// Runs a validated scenario. Failures during the run end it early and are
/// reported in `summary.aborted`; the partial trace is kept.
pub fn run_scenario<T: Scalar>(scenario: &Scenario) -> Result<RunOutput, ScenarioError> {
    scenario.validate()?;
    let mut engine = Engine::<T>::new(scenario)?;
    for k in 0..scenario.steps() {
        if let Err(reason) = engine.step(k) {
            engine.abort(k, reason);
            break;
        }
    }
    Ok(engine.finish())
}

fn cast_machine<T: Scalar>(p: &MachineParams<f64>) -> MachineParams<T> {
    MachineParams {
        rs: T::lit(p.rs),
        rr: T::lit(p.rr),
        ls: T::lit(p.ls),
        lr: T::lit(p.lr),
        lm: T::lit(p.lm),
        pole_pairs: p.pole_pairs,
        inertia: T::lit(p.inertia),
        nominal_torque: T::lit(p.nominal_torque),
        nominal_flux: T::lit(p.nominal_flux),
    }
}

struct PendingDetection {
    time: f64,
    event: FsmEvent,
}

struct Engine<'a, T> {
    s: &'a Scenario,
    dt: T,
    ratio: u64,
    machine: InductionMachine<T>,
    state: MachineState<T>,
    dc: DcLinkState<T>,
    balancer: DcdcBalancerConfig<T>,
    sw: SwitchingState,
    /// Leg level forced by the state machine (shoot-through on a short).
    forced: [Option<bool>; 3],
    fuses: [FuseElement<T>; 3],
    fuse_loop: FuseDesignParams<T>,
    shoot_through_time: [T; 3],
    dcdc_failed: [bool; 2],
    dcdc_replaced: [bool; 2],
    fsm: FsmState,
    fsm_cfg: FsmConfig,
    ctl: DriveController<T>,
    detector: OpenSwitchDetector<T>,
    table_mode: VectorTableMode,
    applied: VectorCandidate<T>,
    pending: Option<VectorCandidate<T>>,
    vector_index: usize,
    te_ref: T,
    v_sum: Complex<T>,
    v_count: u32,
    i_abc: [T; 3],
    injected: Vec<bool>,
    scheduled: Vec<PendingDetection>,
    blown_unreported: Vec<Leg>,
    trace: Vec<TraceRecord>,
    actions: Vec<TimedAction>,
    detections: Vec<Detection>,
    multi_fault_flags: u64,
    fuse_blows: Vec<FuseBlow>,
    clamp_events: u64,
    aborted: Option<AbortRecord>,
    steps_done: u64,
}

impl<'a, T: Scalar> Engine<'a, T> {
    fn new(s: &'a Scenario) -> Result<Self, ScenarioError> {
        let bad = |field: &'static str| move |e: String| ScenarioError::Invalid { field, reason: e };
        let params = cast_machine::<T>(&s.machine);
        let machine = InductionMachine::new(params).map_err(|e| bad("machine")(e.to_string()))?;
        let c = &s.controller;
        let mut mpc = MpcConfig::for_machine(&params, T::lit(c.ts));
        if let Some(l) = c.lambda {
            mpc.lambda = T::lit(l);
        }
        mpc.flux_ref = T::lit(s.flux_ref());
        mpc.delay_compensation = c.delay_compensation;
        mpc.flux_term_multiplier = T::lit(c.flux_term_multiplier);
        let pi = match &c.pi {
            Some(p) => PiConfig { kp: T::lit(p.kp), ki: T::lit(p.ki), t_max: T::lit(p.t_max) },
            None => PiConfig::for_machine(&params, T::lit(c.speed_bandwidth)),
        };
        let ctl = DriveController::new(machine, mpc, pi).map_err(|e| bad("controller")(e.to_string()))?;
        let detector = OpenSwitchDetector::new(s.detector).map_err(|e| bad("detector")(e.to_string()))?;
        let d = &s.dc_link;
        let dc = DcLinkState::balanced(T::lit(d.v_ref_total), T::lit(d.c1), T::lit(d.c2));
        let balancer = DcdcBalancerConfig {
            v_ref_total: T::lit(d.v_ref_total),
            bandwidth: T::lit(d.balancer.bandwidth),
            max_source_current: T::lit(d.balancer.max_source_current),
            duty: T::lit(d.balancer.duty),
            switching_frequency: T::lit(d.balancer.switching_frequency),
        };
        let fuse_loop = FuseDesignParams {
            vdc: T::lit(d.v_ref_total),
            rf: T::lit(d.fuse.rf),
            alpha: T::lit(d.fuse.alpha),
            omega_d: T::lit(d.fuse.omega_d),
            catalog: Vec::new(),
        };
        fuse_loop.validate().map_err(|e| bad("dc_link.fuse")(e.to_string()))?;
        let zero = VectorCandidate { pattern: GatePattern([false; 3]), vector: Complex::new(T::zero(), T::zero()) };
        Ok(Self {
            s,
            dt: T::lit(s.sim.dt),
            ratio: s.control_ratio(),
            machine,
            state: MachineState::zero(),
            dc,
            balancer,
            sw: SwitchingState::default(),
            forced: [None; 3],
            fuses: [FuseElement::new(T::lit(d.fuse.rated_i2t)); 3],
            fuse_loop,
            shoot_through_time: [T::zero(); 3],
            dcdc_failed: [false; 2],
            dcdc_replaced: [false; 2],
            fsm: FsmState::default(),
            fsm_cfg: FsmConfig { reconfigure: s.faults.reconfigure },
            ctl,
            detector,
            table_mode: VectorTableMode::Normal,
            applied: zero,
            pending: None,
            vector_index: 0,
            te_ref: T::zero(),
            v_sum: Complex::new(T::zero(), T::zero()),
            v_count: 0,
            i_abc: [T::zero(); 3],
            injected: vec![false; s.faults.events.len()],
            scheduled: Vec::new(),
            blown_unreported: Vec::new(),
            trace: Vec::new(),
            actions: Vec::new(),
            detections: Vec::new(),
            multi_fault_flags: 0,
            fuse_blows: Vec::new(),
            clamp_events: 0,
            aborted: None,
            steps_done: 0,
        })
    }

    fn time(&self, k: u64) -> f64 {
        k as f64 * self.s.sim.dt
    }

    fn step(&mut self, k: u64) -> Result<(), String> {
        let t = self.time(k);
        self.inject_faults(t)?;
        let control = k.is_multiple_of(self.ratio);
        let mut events = Vec::new();
        if control && self.fsm.mode == DriveMode::Normal {
            self.run_detector(t, &mut events);
        }
        self.collect_due(t, &mut events);
        if !events.is_empty() {
            self.run_fsm(t, &events)?;
        }
        if control {
            self.control(t)?;
        }
        if k.is_multiple_of(u64::from(self.s.sim.decimation)) {
            self.record(t);
        }
        self.advance_power_stage(t)?;
        self.steps_done = k + 1;
        Ok(())
    }

    fn inject_faults(&mut self, t: f64) -> Result<(), String> {
        for (n, ev) in self.s.faults.events.iter().enumerate() {
            if self.injected[n] || ev.time > t {
                continue;
            }
            self.injected[n] = true;
            match ev.target {
                FaultTarget::Inverter(d) => {
                    self.sw.health[d.index()] = match ev.kind {
                        FaultKind::OpenCircuit => DeviceHealth::OpenFault,
                        FaultKind::ShortCircuit => DeviceHealth::ShortFault,
                    };
                    if ev.kind == FaultKind::ShortCircuit {
                        let at = sc_detection_event(ev, self.s.detector.sc_latency).map_err(|e| e.to_string())?;
                        self.scheduled.push(PendingDetection {
                            time: at,
                            event: FsmEvent::SwitchFault { device: d, kind: FaultKind::ShortCircuit },
                        });
                    }
                }
                FaultTarget::Dcdc(q) => {
                    self.dcdc_failed[q.index()] = true;
                    // the slope check needs one switching period to confirm
                    let at = ev.time + 1.0 / self.s.dc_link.balancer.switching_frequency;
                    self.scheduled.push(PendingDetection { time: at, event: FsmEvent::DcdcFault(q) });
                }
            }
            self.update_isolation();
        }
        Ok(())
    }

    fn fault_time_of(&self, target: FaultTarget) -> Option<f64> {
        self.s.faults.events.iter().find(|e| e.target == target).map(|e| e.time)
    }

    fn log_detection(&mut self, t: f64, target: FaultTarget, kind: FaultKind) {
        let fault_time = self.fault_time_of(target).filter(|&ft| ft <= t);
        self.detections.push(Detection {
            time: t,
            device: target.to_string(),
            kind,
            fault_time,
            latency_s: fault_time.map(|ft| t - ft),
        });
    }

    fn run_detector(&mut self, t: f64, events: &mut Vec<FsmEvent>) {
        let angle = self.ctl.estimator.psis_hat.arg();
        match self.detector.observe(t, angle, self.i_abc) {
            Some(Classification::Faulty(d)) => {
                self.log_detection(t, FaultTarget::Inverter(d), FaultKind::OpenCircuit);
                events.push(FsmEvent::SwitchFault { device: d, kind: FaultKind::OpenCircuit });
            }
            Some(Classification::MultiFault) => self.multi_fault_flags += 1,
            _ => {}
        }
    }

    fn collect_due(&mut self, t: f64, events: &mut Vec<FsmEvent>) {
        let mut due = Vec::new();
        self.scheduled.retain(|p| {
            if p.time <= t {
                due.push(p.event);
                false
            } else {
                true
            }
        });
        for ev in due {
            match ev {
                FsmEvent::SwitchFault { device, kind } => self.log_detection(t, FaultTarget::Inverter(device), kind),
                FsmEvent::DcdcFault(q) => self.log_detection(t, FaultTarget::Dcdc(q), FaultKind::OpenCircuit),
                FsmEvent::FuseBlown(_) => {}
            }
            events.push(ev);
        }
        events.extend(self.blown_unreported.drain(..).map(FsmEvent::FuseBlown));
    }

    fn run_fsm(&mut self, t: f64, events: &[FsmEvent]) -> Result<(), String> {
        let before = self.fsm.mode;
        let (next, actions) = fsm_step(&self.fsm, events, t, &self.fsm_cfg).map_err(|e| e.to_string())?;
        self.fsm = next;
        for a in actions {
            self.apply_action(a);
            self.actions.push(TimedAction { time: t, action: a });
        }
        self.update_isolation();
        self.refresh_currents();
        if self.fsm.mode != before {
            self.detector.reset();
        }
        Ok(())
    }

    fn block(&mut self, d: Device) {
        let h = &mut self.sw.health[d.index()];
        if *h == DeviceHealth::Healthy {
            *h = DeviceHealth::GateBlocked;
        }
        let leg = d.leg().index();
        if self.forced[leg] == Some(d.is_upper()) {
            self.forced[leg] = None;
        }
    }

    fn apply_action(&mut self, a: Action) {
        match a {
            Action::BlockGate(d) => self.block(d),
            Action::GateOn(d) => self.forced[d.leg().index()] = Some(d.is_upper()),
            Action::CloseNeutralRelay => self.sw.neutral_relay = RelayState::Closed,
            Action::UsePostfaultTable(leg) => self.table_mode = VectorTableMode::PostFault(leg),
            Action::OpenIsolationRelay(_) => {}
            Action::EnableRedundant(q) => self.dcdc_replaced[q.index()] = true,
            Action::BlockAll => Device::ALL.into_iter().for_each(|d| self.block(d)),
        }
    }

    /// A leg is out of circuit once its fuse is open or neither device can
    /// conduct in switch direction.
    fn update_isolation(&mut self) {
        for leg in Leg::ALL {
            let dead = |d: Device| matches!(self.sw.health[d.index()], DeviceHealth::OpenFault | DeviceHealth::GateBlocked);
            if self.fuses[leg.index()].is_blown() || (dead(leg.upper()) && dead(leg.lower())) {
                self.sw.isolated[leg.index()] = true;
            }
        }
    }

    fn control(&mut self, t: f64) -> Result<(), String> {
        let table = voltage_vector_table(self.table_mode, &self.dc);
        let applied_vs = if self.v_count > 0 {
            self.v_sum / T::lit(f64::from(self.v_count))
        } else {
            Complex::new(T::zero(), T::zero())
        };
        let meas = Measurements { is: self.state.is, omega_m: self.state.omega_m };
        let omega_ref = T::lit(self.s.profiles.speed.at(t));
        let delayed = self.s.sim.actuation_delay;
        let committed = if delayed { self.pending.map(|p| p.vector) } else { None };
        let out = self.ctl.step(&meas, omega_ref, applied_vs, &table, committed).map_err(|e| e.to_string())?;
        let chosen = table[out.index];
        if delayed {
            if let Some(p) = self.pending.replace(chosen) {
                self.applied = p;
            }
        } else {
            self.applied = chosen;
        }
        self.vector_index = out.index;
        self.te_ref = out.torque_ref;
        self.v_sum = Complex::new(T::zero(), T::zero());
        self.v_count = 0;
        Ok(())
    }

    fn record(&mut self, t: f64) {
        let psis = self.machine.stator_flux(&self.state);
        let hat = self.ctl.estimator.psis_hat;
        self.trace.push(TraceRecord {
            t,
            ia: self.i_abc[0].as_f64(),
            ib: self.i_abc[1].as_f64(),
            ic: self.i_abc[2].as_f64(),
            i_mid: self.dc.i_mid.as_f64(),
            v_dc1: self.dc.v_dc1.as_f64(),
            v_dc2: self.dc.v_dc2.as_f64(),
            psis_alpha: psis.re.as_f64(),
            psis_beta: psis.im.as_f64(),
            psis_hat_alpha: hat.re.as_f64(),
            psis_hat_beta: hat.im.as_f64(),
            te: self.machine.torque(&self.state).as_f64(),
            te_ref: self.te_ref.as_f64(),
            omega_m: self.state.omega_m.as_f64(),
            omega_ref: self.s.profiles.speed.at(t),
            vector: self.vector_index,
            mode: self.fsm.mode.to_string(),
            health: self.sw.health_summary(),
        });
    }

    fn advance_power_stage(&mut self, t: f64) -> Result<(), String> {
        let dt = self.dt;
        let mut levels = self.applied.pattern.0;
        for (l, f) in levels.iter_mut().zip(self.forced) {
            if let Some(v) = f {
                *l = v;
            }
        }
        self.sw.legs = levels;
        let conduction = Leg::ALL.map(|l| self.sw.conduction(l, Some(self.i_abc[l.index()])));
        let poles = pole_voltages_with_currents(&self.sw, &self.dc, self.i_abc);
        let floating: Vec<usize> = (0..3).filter(|&k| poles[k].is_none()).collect();
        let relay = self.sw.neutral_relay;
        let to_ab = |v: [T; 3]| clarke(v[0], v[1], v[2]);
        let (vs, constraint) = match (relay, floating.len()) {
            (_, 0) | (RelayState::Closed, 1) => {
                let v = machine_phase_voltages(poles, relay).map_err(|e| e.to_string())?;
                (to_ab(v), CurrentConstraint::Free)
            }
            (RelayState::Open, 1) => {
                let axis = Leg::from_index(floating[0]).axis::<T>();
                (to_ab(open_phase_voltages(poles)), CurrentConstraint::Orthogonal(axis))
            }
            _ => (Complex::new(T::zero(), T::zero()), CurrentConstraint::Blocked),
        };
        if constraint != CurrentConstraint::Free {
            // an opened winding interrupts its current at once
            self.state.is = constraint.project(self.state.is);
        }
        let u = MachineInputs { vs, load_torque: T::lit(self.s.profiles.load.at(t)) };
        let m = &self.machine;
        self.v_sum += terminal_voltage(&self.state, &u, &m.params, &m.derived, constraint);
        self.v_count += 1;

        let (mut i_upper, mut i_lower) = (T::zero(), T::zero());
        for (c, &i) in conduction.iter().zip(&self.i_abc) {
            match c {
                LegConduction::Upper => i_upper += i,
                LegConduction::Lower => i_lower -= i,
                LegConduction::Floating => {}
            }
        }

        for leg in Leg::ALL {
            let k = leg.index();
            if self.fuses[k].is_blown() || !self.sw.shoot_through(leg) {
                self.shoot_through_time[k] = T::zero();
                continue;
            }
            self.shoot_through_time[k] += dt;
            let mid = self.shoot_through_time[k] - dt / T::lit(2.0);
            let i = fault_current(mid, &self.fuse_loop).map_err(|e| e.to_string())?;
            self.fuses[k] = fuse_step(&self.fuses[k], i, dt);
            if self.fuses[k].is_blown() {
                self.sw.isolated[k] = true;
                self.forced[k] = None;
                self.blown_unreported.push(leg);
                self.fuse_blows.push(FuseBlow {
                    leg,
                    time: t + self.s.sim.dt,
                    shoot_through_s: self.shoot_through_time[k].as_f64(),
                    predicted_melt_s: melt_time(self.fuses[k].rated_i2t, &self.fuse_loop).ok().map(Scalar::as_f64),
                });
            }
        }

        self.state = self
            .machine
            .step(&self.state, &u, dt, self.s.sim.integrator, constraint)
            .map_err(|e| format!("machine integration failed: {e}"))?;

        let mut source = dcdc_balancer_step(&self.dc, &self.balancer, dt);
        if self.dcdc_failed[0] && !self.dcdc_replaced[0] {
            source.upper = T::zero();
        }
        if self.dcdc_failed[1] && !self.dcdc_replaced[1] {
            source.lower = T::zero();
        }
        let step = dc_link_step(&self.dc, i_upper, i_lower, self.dc.i_mid, source, dt);
        if step.clamped {
            self.clamp_events += 1;
        }
        self.dc = step.state;

        self.refresh_currents();
        if !self.dc.v_dc1.is_finite() || !self.dc.v_dc2.is_finite() {
            return Err("DC link voltage diverged".into());
        }
        Ok(())
    }

    /// Phase and midpoint currents implied by the αβ state and the present
    /// connection: with the neutral tied to the midpoint an isolated phase
    /// carries nothing and the rest returns through the neutral.
    fn refresh_currents(&mut self) {
        let is = self.state.is;
        let isolated = (0..3).find(|&k| self.sw.isolated[k]);
        self.i_abc = match (self.sw.neutral_relay, isolated) {
            (RelayState::Closed, Some(k)) => {
                let along = (is * Leg::from_index(k).axis::<T>().conj()).re;
                let mut i = inverse_clarke_with_zero(is, -along);
                i[k] = T::zero();
                i
            }
            _ => inverse_clarke(is),
        };
        self.dc.i_mid = match self.sw.neutral_relay {
            RelayState::Closed => -(self.i_abc[0] + self.i_abc[1] + self.i_abc[2]),
            RelayState::Open => T::zero(),
        };
    }

    fn abort(&mut self, k: u64, reason: String) {
        self.aborted = Some(AbortRecord {
            step: k,
            time: self.time(k),
            reason,
            mode: self.fsm.mode.to_string(),
            health: self.sw.health_summary(),
        });
    }

    fn finish(self) -> RunOutput {
        let s = self.s;
        let first_fault = s.faults.events.iter().map(|e| e.time).fold(f64::INFINITY, f64::min);
        let until = first_fault.min(s.sim.duration);
        let mut analysis = SummaryAnalysis::default();
        let flux_ref = s.flux_ref();
        let mut window = |w: Option<[f64; 2]>| {
            w.and_then(|w| match analyze_window(&self.trace, w, flux_ref) {
                Ok(a) => Some(a),
                Err(e) => {
                    analysis.errors.push(format!("[{}, {}]: {e}", w[0], w[1]));
                    None
                }
            })
        };
        let pre = window(s.sim.prefault_window);
        let post = window(s.sim.postfault_window);
        if let (Some(a), Some(b)) = (&pre, &post) {
            let ratios: Vec<f64> = (0..3)
                .filter(|&k| b.phases[k].amplitude > 0.05 * a.phases[k].amplitude)
                .map(|k| b.phases[k].amplitude / a.phases[k].amplitude)
                .collect();
            if !ratios.is_empty() {
                analysis.remaining_phase_ratio = Some(ratios.iter().sum::<f64>() / ratios.len() as f64);
            }
        }
        analysis.prefault = pre;
        analysis.postfault = post;
        let summary = RunSummary {
            schema: 1,
            name: s.name.clone(),
            steps: self.steps_done,
            records: self.trace.len(),
            duration: s.sim.duration,
            speed_settle_time_s: speed_settle_time(&self.trace, 0.05, until),
            final_mode: self.fsm.mode.to_string(),
            transitions: self.fsm.log.clone(),
            actions: self.actions,
            detections: self.detections,
            multi_fault_flags: self.multi_fault_flags,
            fuse_blows: self.fuse_blows,
            clamp_events: self.clamp_events,
            analysis,
            aborted: self.aborted,
        };
        RunOutput { trace: self.trace, summary }
    }
}
