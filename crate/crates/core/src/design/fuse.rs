//! Shoot-through fault current, its Joule integral and fuse sizing.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum FuseError {
    #[error("only the underdamped regime is supported (omega_d must be > 0)")]
    NotUnderdamped,
    #[error("parameter `{0}` out of range")]
    Invalid(&'static str),
    #[error("time {0} s outside the withstand curve")]
    OutsideCurve(f64),
    #[error("withstand curve needs ascending times and factors >= 1")]
    BadCurve,
    #[error("no catalog rating at or below {0} A²s")]
    NoFeasibleFuse(f64),
    #[error("catalog must be non-empty and ascending")]
    BadCatalog,
    #[error("the fault current never reaches {0} A²s")]
    NeverMelts(f64),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuseDesignParams<T> {
    #[serde(rename = "Vdc")]
    pub vdc: T,
    /// Fault-loop resistance (Ω).
    #[serde(rename = "Rf")]
    pub rf: T,
    /// Damping constant (1/s).
    pub alpha: T,
    /// Damped angular frequency (rad/s).
    pub omega_d: T,
    /// Standard I²t ratings, ascending (A²s).
    #[serde(default)]
    pub catalog: Vec<T>,
}

impl<T: Scalar> FuseDesignParams<T> {
    /// Takes the damping literally as `1/(4·Rf)` and derives `ω_d` from the
    /// loop's natural frequency. The damping expression is not
    /// dimensionally consistent, so prefer supplying `alpha` directly.
    pub fn from_literal_damping(vdc: T, rf: T, omega_0: T, catalog: Vec<T>) -> Result<Self, FuseError> {
        let alpha = T::one() / (T::lit(4.0) * rf);
        let wd2 = omega_0 * omega_0 - alpha * alpha;
        if !(wd2 > T::zero()) {
            return Err(FuseError::NotUnderdamped);
        }
        Ok(Self { vdc, rf, alpha, omega_d: wd2.sqrt(), catalog })
    }

    pub fn validate(&self) -> Result<(), FuseError> {
        if !(self.omega_d > T::zero()) {
            return Err(FuseError::NotUnderdamped);
        }
        if !(self.rf > T::zero()) {
            return Err(FuseError::Invalid("Rf"));
        }
        if !(self.alpha >= T::zero()) {
            return Err(FuseError::Invalid("alpha"));
        }
        Ok(())
    }

    /// Initial fault current `Vdc/(2·Rf)`.
    pub fn peak(&self) -> T {
        self.vdc / (T::lit(2.0) * self.rf)
    }
}

/// Damped-oscillatory loop current after a shoot-through at `t = 0`.
pub fn fault_current<T: Scalar>(t: T, p: &FuseDesignParams<T>) -> Result<T, FuseError> {
    p.validate()?;
    let a = p.peak();
    let wt = p.omega_d * t;
    Ok((-p.alpha * t).exp() * (a * wt.cos() + a * p.alpha / p.omega_d * wt.sin()))
}

/// Closed-form `∫₀ᵗ i_F² dτ`.
///
/// With `i_F = e^{−αt}(A cos ωt + B sin ωt)` the square expands to a decaying
/// constant plus decaying `cos 2ωt` and `sin 2ωt` terms, each integrated
/// exactly.
pub fn joule_integral<T: Scalar>(t: T, p: &FuseDesignParams<T>) -> Result<T, FuseError> {
    p.validate()?;
    if !(t >= T::zero()) {
        return Err(FuseError::Invalid("t"));
    }
    let two = T::lit(2.0);
    let a_amp = p.peak();
    let b_amp = a_amp * p.alpha / p.omega_d;
    let a = two * p.alpha;
    let b = two * p.omega_d;
    let decay = (-a * t).exp();
    let i_const = if a > T::zero() { -(-a * t).exp_m1() / a } else { t };
    let den = a * a + b * b;
    let (sn, cs) = (b * t).sin_cos();
    let i_cos = (decay * (-a * cs + b * sn) + a) / den;
    let i_sin = (decay * (-a * sn - b * cs) + b) / den;
    let sq_sum = (a_amp * a_amp + b_amp * b_amp) / two;
    let sq_diff = (a_amp * a_amp - b_amp * b_amp) / two;
    Ok(sq_sum * i_const + sq_diff * i_cos + a_amp * b_amp * i_sin)
}

/// Joule integral reached as `t → ∞` (infinite without damping).
pub fn joule_integral_limit<T: Scalar>(p: &FuseDesignParams<T>) -> Result<T, FuseError> {
    p.validate()?;
    if p.alpha == T::zero() {
        return Ok(T::infinity());
    }
    let two = T::lit(2.0);
    let a_amp = p.peak();
    let b_amp = a_amp * p.alpha / p.omega_d;
    let a = two * p.alpha;
    let b = two * p.omega_d;
    let den = a * a + b * b;
    Ok((a_amp * a_amp + b_amp * b_amp) / two / a + (a_amp * a_amp - b_amp * b_amp) / two * a / den + a_amp * b_amp * b / den)
}

/// Earliest time at which the Joule integral reaches `i2t`.
pub fn melt_time<T: Scalar>(i2t: T, p: &FuseDesignParams<T>) -> Result<T, FuseError> {
    if !(i2t > T::zero()) {
        return Err(FuseError::Invalid("i2t"));
    }
    if joule_integral_limit(p)? <= i2t {
        return Err(FuseError::NeverMelts(i2t.as_f64()));
    }
    let j = |t: T| joule_integral(t, p);
    let mut hi = T::lit(1e-9);
    while j(hi)? < i2t {
        hi *= T::lit(2.0);
    }
    let mut lo = T::zero();
    for _ in 0..200 {
        let mid = (lo + hi) / T::lit(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if j(mid)? < i2t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WithstandPoint<T> {
    pub time_s: T,
    pub fw: T,
}

/// Withstand factor versus pulse duration, interpolated linearly in log time.
#[derive(Debug, Clone, PartialEq)]
pub struct WithstandCurve<T> {
    points: Vec<WithstandPoint<T>>,
}

impl<T: Scalar> WithstandCurve<T> {
    pub fn new(points: Vec<WithstandPoint<T>>) -> Result<Self, FuseError> {
        let ok = points.len() >= 2
            && points.iter().all(|p| p.time_s > T::zero() && p.fw >= T::one())
            && points.windows(2).all(|w| w[0].time_s < w[1].time_s);
        if !ok {
            return Err(FuseError::BadCurve);
        }
        Ok(Self { points })
    }

    /// Generic shape shipped for examples; not vendor data.
    pub fn placeholder() -> Self {
        let p = |t: f64, f: f64| WithstandPoint { time_s: T::lit(t), fw: T::lit(f) };
        Self { points: vec![p(1e-3, 4.0), p(10e-3, 2.0), p(0.1, 1.3), p(1.0, 1.0)] }
    }

    pub fn points(&self) -> &[WithstandPoint<T>] {
        &self.points
    }

    pub fn factor(&self, t: T) -> Result<T, FuseError> {
        let first = self.points[0];
        let last = self.points[self.points.len() - 1];
        if !(t >= first.time_s && t <= last.time_s) {
            return Err(FuseError::OutsideCurve(t.as_f64()));
        }
        let k = self.points.windows(2).position(|w| t <= w[1].time_s).unwrap_or(self.points.len() - 2);
        let (a, b) = (self.points[k], self.points[k + 1]);
        let x = (t.ln() - a.time_s.ln()) / (b.time_s.ln() - a.time_s.ln());
        Ok(a.fw + (b.fw - a.fw) * x)
    }
}

impl WithstandCurve<f64> {
    /// Reads `time_s,fw` rows.
    pub fn from_csv_path(path: &Path) -> Result<Self, FuseError> {
        let mut rd = csv::Reader::from_path(path)?;
        let points = rd.deserialize().collect::<Result<Vec<WithstandPoint<f64>>, _>>()?;
        Self::new(points)
    }
}

/// Nominal melt rating `J(t0) / F_w(t0)` for a target clearing time `t0`.
pub fn nominal_melt_energy<T: Scalar>(t0: T, p: &FuseDesignParams<T>, w: &WithstandCurve<T>) -> Result<T, FuseError> {
    let fw = w.factor(t0)?;
    Ok(joule_integral(t0, p)? / fw)
}

/// Largest catalog rating not above `i2t_nominal`.
pub fn select_fuse<T: Scalar>(i2t_nominal: T, catalog: &[T]) -> Result<T, FuseError> {
    if catalog.is_empty() || catalog.windows(2).any(|w| w[0] >= w[1]) {
        return Err(FuseError::BadCatalog);
    }
    catalog
        .iter()
        .copied()
        .take_while(|c| *c <= i2t_nominal)
        .last()
        .ok_or(FuseError::NoFeasibleFuse(i2t_nominal.as_f64()))
}

/// Reads a single-column catalog CSV with header `i2t`.
pub fn read_catalog_csv(path: &Path) -> Result<Vec<f64>, FuseError> {
    #[derive(Deserialize)]
    struct Row {
        i2t: f64,
    }
    let mut rd = csv::Reader::from_path(path)?;
    let rows = rd.deserialize().collect::<Result<Vec<Row>, _>>()?;
    Ok(rows.into_iter().map(|r| r.i2t).collect())
}
