//! Offline design calculators for the first-stage voltage loop, the
//! shoot-through fuse and the semiconductor overrating comparison.

pub mod controller;
pub mod fuse;
pub mod nof;
pub mod tf;

pub use controller::{controller_tf, loop_gain, synthesize_components, ControllerComponents, ControllerDesign, LoopGainParams};
pub use fuse::{
    fault_current, joule_integral, melt_time, nominal_melt_energy, select_fuse, FuseDesignParams, FuseError, WithstandCurve,
};
pub use nof::{nof, DeviceKind, DeviceRating, DeviceRatingSheet, NofError};
pub use tf::{margins, MarginError, Margins, RationalTransferFunction};
