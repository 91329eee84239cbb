//! Factored rational transfer functions and stability margins.

use num_complex::Complex;
use serde::Serialize;
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarginError {
    #[error("root {0} has no conjugate partner")]
    UnpairedRoot(String),
    #[error("frequency range must satisfy 0 < f_lo < f_hi")]
    BadRange,
    #[error("no unity-gain crossover between {f_lo} Hz and {f_hi} Hz")]
    NoCrossover { f_lo: f64, f_hi: f64 },
}

/// `gain · Π(s − z) / Π(s − p)` with roots in rad/s.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalTransferFunction<T> {
    pub gain: T,
    pub zeros: Vec<Complex<T>>,
    pub poles: Vec<Complex<T>>,
}

fn check_pairs<T: Scalar>(roots: &[Complex<T>]) -> Result<(), MarginError> {
    for r in roots {
        if r.im == T::zero() {
            continue;
        }
        let own = roots.iter().filter(|x| **x == *r).count();
        let partners = roots.iter().filter(|x| **x == r.conj()).count();
        if own != partners {
            return Err(MarginError::UnpairedRoot(format!("{r}")));
        }
    }
    Ok(())
}

/// Phase of `(jω − r)` in degrees, continuous in ω.
fn factor_phase_deg<T: Scalar>(w: T, r: Complex<T>) -> T {
    let mut a = (w - r.im).atan2(-r.re).to_degrees();
    if r.re > T::zero() && a < T::zero() {
        a += T::lit(360.0);
    }
    a
}

impl<T: Scalar> RationalTransferFunction<T> {
    pub fn new(gain: T, zeros: Vec<Complex<T>>, poles: Vec<Complex<T>>) -> Result<Self, MarginError> {
        check_pairs(&zeros)?;
        check_pairs(&poles)?;
        Ok(Self { gain, zeros, poles })
    }

    pub fn eval(&self, s: Complex<T>) -> Complex<T> {
        let num = self.zeros.iter().fold(Complex::new(self.gain, T::zero()), |acc, z| acc * (s - z));
        self.poles.iter().fold(num, |acc, p| acc / (s - p))
    }

    pub fn eval_jw(&self, w: T) -> Complex<T> {
        self.eval(Complex::new(T::zero(), w))
    }

    pub fn magnitude_db(&self, w: T) -> T {
        let mut db = T::lit(20.0) * self.gain.abs().log10();
        let s = Complex::new(T::zero(), w);
        for z in &self.zeros {
            db += T::lit(20.0) * (s - z).norm().log10();
        }
        for p in &self.poles {
            db -= T::lit(20.0) * (s - p).norm().log10();
        }
        db
    }

    /// Unwrapped phase in degrees: per-factor angles summed, minus 180° for
    /// a negative gain.
    pub fn phase_deg(&self, w: T) -> T {
        let mut ph = if self.gain < T::zero() { T::lit(-180.0) } else { T::zero() };
        for z in &self.zeros {
            ph += factor_phase_deg(w, *z);
        }
        for p in &self.poles {
            ph -= factor_phase_deg(w, *p);
        }
        ph
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Margins {
    /// `None` when the phase never reaches −180° in range (infinite margin).
    pub gain_margin_db: Option<f64>,
    pub phase_margin_deg: f64,
    pub gain_crossovers_hz: Vec<f64>,
    pub phase_crossovers_hz: Vec<f64>,
    /// More than one unity-gain or −180° crossing; the worst case is reported.
    pub multiple_crossovers: bool,
}

pub const SCAN_POINTS_PER_DECADE: usize = 64;

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let flo = f(lo);
    while (hi - lo) > 1e-9 * hi {
        let mid = (lo * hi).sqrt();
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo * hi).sqrt()
}

/// Wraps an angle into (−180°, 180°].
fn wrap_deg(a: f64) -> f64 {
    let r = (a + 180.0).rem_euclid(360.0) - 180.0;
    if r == -180.0 {
        180.0
    } else {
        r
    }
}

/// Gain and phase margins over `[f_lo, f_hi]` (Hz) by log-spaced pre-scan
/// and bisection.
pub fn margins<T: Scalar>(tf: &RationalTransferFunction<T>, f_lo: f64, f_hi: f64) -> Result<Margins, MarginError> {
    if !(f_lo > 0.0 && f_hi > f_lo) {
        return Err(MarginError::BadRange);
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let mag = |f: f64| tf.magnitude_db(T::lit(two_pi * f)).as_f64();
    let phase = |f: f64| tf.phase_deg(T::lit(two_pi * f)).as_f64();
    let turns = |f: f64| (phase(f) + 180.0) / 360.0;

    let decades = (f_hi / f_lo).log10();
    let n = ((decades * SCAN_POINTS_PER_DECADE as f64).ceil() as usize).max(2);
    let grid: Vec<f64> = (0..=n).map(|k| f_lo * (f_hi / f_lo).powf(k as f64 / n as f64)).collect();

    let mut gain_x = Vec::new();
    let mut phase_x = Vec::new();
    for w in grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (ma, mb) = (mag(a), mag(b));
        if ma == 0.0 {
            gain_x.push(a);
        } else if (ma > 0.0) != (mb > 0.0) && mb != 0.0 {
            gain_x.push(bisect(a, b, mag));
        }
        let (ta, tb) = (turns(a), turns(b));
        let (na, nb) = (ta.floor(), tb.floor());
        if na != nb {
            let level = na.max(nb);
            phase_x.push(bisect(a, b, |f| turns(f) - level));
        }
    }
    if let Some(&last) = grid.last() {
        if mag(last) == 0.0 {
            gain_x.push(last);
        }
    }
    if gain_x.is_empty() {
        return Err(MarginError::NoCrossover { f_lo, f_hi });
    }
    let phase_margin_deg = gain_x.iter().map(|&f| wrap_deg(180.0 + phase(f))).fold(f64::INFINITY, f64::min);
    let gain_margin_db = phase_x.iter().map(|&f| -mag(f)).reduce(f64::min);
    Ok(Margins {
        gain_margin_db,
        phase_margin_deg,
        multiple_crossovers: gain_x.len() > 1 || phase_x.len() > 1,
        gain_crossovers_hz: gain_x,
        phase_crossovers_hz: phase_x,
    })
}
