//! Fault-tolerant induction motor drive: machine and converter models,
//! predictive torque control, fault handling, design tools and a simulation
//! harness.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod converter;
pub mod design;
pub mod fault;
pub mod machine;
pub mod mpc;
pub mod scalar;
pub mod sim;

pub use scalar::Scalar;

pub type MachineParamsF64 = machine::MachineParams<f64>;
pub type MachineParamsF32 = machine::MachineParams<f32>;
pub type InductionMachineF64 = machine::InductionMachine<f64>;
pub type InductionMachineF32 = machine::InductionMachine<f32>;
pub type DriveControllerF64 = mpc::DriveController<f64>;
pub type DriveControllerF32 = mpc::DriveController<f32>;
pub type DcLinkStateF64 = converter::DcLinkState<f64>;
pub type DcLinkStateF32 = converter::DcLinkState<f32>;
pub type OpenSwitchDetectorF64 = fault::OpenSwitchDetector<f64>;
pub type OpenSwitchDetectorF32 = fault::OpenSwitchDetector<f32>;
