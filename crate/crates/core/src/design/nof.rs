//! Total semiconductor rating of a topology relative to the plain
//! six-switch inverter.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum NofError {
    #[error("baseline sheet has no rating")]
    EmptyBaseline,
    #[error("ratings and counts must be positive (row {0})")]
    BadRow(usize),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKind {
    Switch,
    Diode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceRating<T> {
    pub kind: DeviceKind,
    pub blocking_v: T,
    pub peak_a: T,
    pub count: u32,
}

impl<T: Scalar> DeviceRating<T> {
    /// Rating in VA; diodes count at half.
    pub fn va(&self) -> T {
        let weight = match self.kind {
            DeviceKind::Switch => T::one(),
            DeviceKind::Diode => T::lit(0.5),
        };
        weight * T::lit(self.count as f64) * self.blocking_v * self.peak_a
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DeviceRatingSheet<T> {
    pub devices: Vec<DeviceRating<T>>,
}

impl<T: Scalar> DeviceRatingSheet<T> {
    pub fn validate(&self) -> Result<(), NofError> {
        for (k, d) in self.devices.iter().enumerate() {
            if !(d.blocking_v > T::zero() && d.peak_a > T::zero() && d.count > 0) {
                return Err(NofError::BadRow(k + 1));
            }
        }
        Ok(())
    }

    pub fn total_va(&self) -> T {
        self.devices.iter().fold(T::zero(), |s, d| s + d.va())
    }

    /// Six switches each blocking the bus and carrying the peak phase current.
    pub fn six_switch(bus_v: T, peak_a: T) -> Self {
        Self { devices: vec![DeviceRating { kind: DeviceKind::Switch, blocking_v: bus_v, peak_a, count: 6 }] }
    }

    /// Best-effort rating assumptions for the fault-tolerant two-stage
    /// topology: inverter switches sized for the √3 postfault current, four
    /// first-stage switches (two of them redundant) at half bus and half
    /// current, three neutral-path diodes at half bus and full current, five
    /// first-stage diodes at half bus and `1/√3` current.
    pub fn fault_tolerant_two_stage(bus_v: T, peak_a: T) -> Self {
        let half_v = bus_v / T::lit(2.0);
        let sqrt3 = T::lit(3.0f64.sqrt());
        let row = |kind, blocking_v, peak_a, count| DeviceRating { kind, blocking_v, peak_a, count };
        Self {
            devices: vec![
                row(DeviceKind::Switch, bus_v, sqrt3 * peak_a, 6),
                row(DeviceKind::Switch, half_v, peak_a / T::lit(2.0), 4),
                row(DeviceKind::Diode, half_v, peak_a, 3),
                row(DeviceKind::Diode, half_v, peak_a / sqrt3, 5),
            ],
        }
    }
}

impl DeviceRatingSheet<f64> {
    /// Reads `kind,blocking_v,peak_a,count` rows.
    pub fn from_csv_path(path: &Path) -> Result<Self, NofError> {
        let mut rd = csv::Reader::from_path(path)?;
        let devices = rd.deserialize().collect::<Result<Vec<DeviceRating<f64>>, _>>()?;
        let sheet = Self { devices };
        sheet.validate()?;
        Ok(sheet)
    }
}

/// `Σ VA(sheet) / Σ VA(baseline)` with diodes at half weight.
pub fn nof<T: Scalar>(sheet: &DeviceRatingSheet<T>, baseline: &DeviceRatingSheet<T>) -> Result<T, NofError> {
    sheet.validate()?;
    baseline.validate()?;
    let base = baseline.total_va();
    if !(base > T::zero()) {
        return Err(NofError::EmptyBaseline);
    }
    Ok(sheet.total_va() / base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn baseline_is_unity() {
        let b = DeviceRatingSheet::six_switch(300.0, 10.0);
        assert_eq!(nof(&b, &b).unwrap(), 1.0);
        assert!(matches!(nof(&b, &DeviceRatingSheet::default()), Err(NofError::EmptyBaseline)));
    }

    #[test]
    fn proposed_topology() {
        let b = DeviceRatingSheet::six_switch(300.0, 10.0);
        let p = DeviceRatingSheet::fault_tolerant_two_stage(300.0, 10.0);
        let v: f64 = nof(&p, &b).unwrap();
        assert!((v - 2.144).abs() < 0.01, "{v}");
        // independent tally in units of V·I
        let s3 = 3.0f64.sqrt();
        let tally = (6.0 * s3 + 4.0 * 0.25 + 0.5 * (3.0 * 0.5 + 5.0 * 0.5 / s3)) / 6.0;
        assert!((v - tally).abs() < 1e-12);
        let counts: (u32, u32) = p.devices.iter().fold((0, 0), |(s, d), r| match r.kind {
            DeviceKind::Switch => (s + r.count, d),
            DeviceKind::Diode => (s, d + r.count),
        });
        assert_eq!(counts, (10, 8));
    }

    #[test]
    fn invalid_rows_rejected() {
        let mut s = DeviceRatingSheet::six_switch(300.0, 10.0);
        s.devices[0].count = 0;
        assert!(matches!(s.validate(), Err(NofError::BadRow(1))));
    }

    fn sheet() -> impl Strategy<Value = DeviceRatingSheet<f64>> {
        proptest::collection::vec(
            (any::<bool>(), 1u32..1000, 1u32..100, 1u32..8).prop_map(|(sw, v, i, n)| DeviceRating {
                kind: if sw { DeviceKind::Switch } else { DeviceKind::Diode },
                blocking_v: v as f64,
                peak_a: i as f64,
                count: n,
            }),
            1..10,
        )
        .prop_map(|devices| DeviceRatingSheet { devices })
    }

    proptest! {
        #[test]
        fn permutation_invariant(s in sheet(), rot in 0usize..10) {
            let b = DeviceRatingSheet::six_switch(300.0, 10.0);
            let mut r = s.clone();
            let k = rot % r.devices.len();
            r.devices.rotate_left(k);
            r.devices.reverse();
            prop_assert_eq!(nof(&s, &b).unwrap(), nof(&r, &b).unwrap());
        }

        #[test]
        fn additive_over_concatenation(a in sheet(), c in sheet()) {
            let b = DeviceRatingSheet::six_switch(256.0, 8.0);
            let mut both = a.clone();
            both.devices.extend(c.devices.iter().copied());
            // integer ratings keep the totals exact
            prop_assert_eq!(both.total_va(), a.total_va() + c.total_va());
            let sum = nof(&a, &b).unwrap() + nof(&c, &b).unwrap();
            prop_assert!((nof(&both, &b).unwrap() - sum).abs() <= 1e-15 * sum);
        }

        #[test]
        fn doubling_ratings_doubles(a in sheet()) {
            let b = DeviceRatingSheet::six_switch(256.0, 8.0);
            let mut d = a.clone();
            d.devices.iter_mut().for_each(|r| r.blocking_v *= 2.0);
            prop_assert_eq!(nof(&d, &b).unwrap(), 2.0 * nof(&a, &b).unwrap());
        }
    }
}
