//! The generating family `f_delta` and its schedule.
//!
//! `f_delta` is the two-component Maxwellian mixture
//!
//! ```text
//! f_delta(v) = delta M_{1/(2 d delta)}(v) + (1 - delta) M_{1/(2 d (1-delta))}(v)
//! ```
//!
//! with `M_a(v) = (2 pi a)^{-d/2} exp(-|v|^2 / (2a))`.  The component
//! variances are rigged so that `int |v|^2 f_delta dv = 1` exactly, which
//! makes `E = N` the natural energy of the N-particle sphere.  The weight
//! is later scheduled as `delta_N = N^{-(1-eta)}` with `eta` constrained to
//! an explicit admissible window depending on an auxiliary exponent `beta`.

use crate::{KacError, Result};
use rand::Rng;
use rand_distr::StandardNormal;

/// Two-component Maxwellian mixture with weight `delta` in dimension `d`.
///
/// `delta` is restricted to (0, 1/2): the analysis behind the schedule
/// repeatedly needs `delta < 1 - delta`, and 1/2 is the degenerate point
/// where both components coincide.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GeneratingFunction {
    d: u32,
    delta: f64,
}

impl GeneratingFunction {
    pub fn new(d: u32, delta: f64) -> Result<Self> {
        if d < 2 {
            return Err(KacError::InvalidParameter(format!(
                "dimension must be >= 2, got {d}"
            )));
        }
        if !(delta > 0.0 && delta < 0.5) {
            return Err(KacError::InvalidParameter(format!(
                "mixture weight must lie in (0, 1/2), got {delta}"
            )));
        }
        Ok(GeneratingFunction { d, delta })
    }

    pub fn d(&self) -> u32 {
        self.d
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Variance parameter of the broad component, `1/(2 d delta)`.
    pub fn a1(&self) -> f64 {
        1.0 / (2.0 * f64::from(self.d) * self.delta)
    }

    /// Variance parameter of the narrow component, `1/(2 d (1-delta))`.
    pub fn a2(&self) -> f64 {
        1.0 / (2.0 * f64::from(self.d) * (1.0 - self.delta))
    }

    pub fn log_pdf(&self, v: &[f64]) -> f64 {
        assert_eq!(v.len(), self.d as usize, "point dimension mismatch");
        let t1 = self.delta.ln() + log_maxwellian_unchecked(v, self.a1());
        let t2 = (1.0 - self.delta).ln() + log_maxwellian_unchecked(v, self.a2());
        // two-term log-sum-exp; either component may underflow on its own
        let (hi, lo) = if t1 >= t2 { (t1, t2) } else { (t2, t1) };
        hi + (lo - hi).exp().ln_1p()
    }

    pub fn pdf(&self, v: &[f64]) -> f64 {
        self.log_pdf(v).exp()
    }

    /// `Var(|V|^2) = (d+2)/(4 d delta (1-delta)) - 1`, the energy-direction
    /// spread that scales the Gaussian surrogate.
    pub fn sigma_sq(&self) -> f64 {
        sigma_sq_formula(self.d, self.delta)
    }

    /// `E|V|^4 = (d+2)/(4 d delta (1-delta))`.
    pub fn fourth_moment(&self) -> f64 {
        let d = f64::from(self.d);
        (d + 2.0) / (4.0 * d * self.delta * (1.0 - self.delta))
    }

    /// One draw from the mixture.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let a = if rng.gen::<f64>() < self.delta {
            self.a1()
        } else {
            self.a2()
        };
        let sd = a.sqrt();
        (0..self.d)
            .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

/// `M_a(v)` for `v` in R^d with `d = v.len()`.
pub fn maxwellian_pdf(v: &[f64], a: f64) -> Result<f64> {
    Ok(log_maxwellian_pdf(v, a)?.exp())
}

/// `log M_a(v)`; the only checked failure is a nonpositive variance.
pub fn log_maxwellian_pdf(v: &[f64], a: f64) -> Result<f64> {
    if a <= 0.0 {
        return Err(KacError::InvalidParameter(format!(
            "Maxwellian variance parameter must be positive, got {a}"
        )));
    }
    Ok(log_maxwellian_unchecked(v, a))
}

fn log_maxwellian_unchecked(v: &[f64], a: f64) -> f64 {
    let d = v.len() as f64;
    let sq: f64 = v.iter().map(|x| x * x).sum();
    -0.5 * d * (2.0 * std::f64::consts::PI * a).ln() - sq / (2.0 * a)
}

/// `(d+2)/(4 d delta (1-delta)) - 1` with no range validation, so boundary
/// values (for instance `delta = 1/2`, which a [`GeneratingFunction`]
/// rejects) stay testable.
pub fn sigma_sq_formula(d: u32, delta: f64) -> f64 {
    let d = f64::from(d);
    (d + 2.0) / (4.0 * d * delta * (1.0 - delta)) - 1.0
}

/// Admissible open interval for the schedule exponent `eta`:
///
/// ```text
/// 2 beta / (1 + 2 beta)  <  eta  <  (3 + d) beta / (1 + 3 beta + d/2 + d beta)
/// ```
///
/// The interval is nonempty for every `beta > 0`, `d >= 2`.
pub fn eta_window(beta: f64, d: u32) -> Result<(f64, f64)> {
    if !(beta > 0.0) {
        return Err(KacError::InvalidParameter(format!(
            "beta must be positive, got {beta}"
        )));
    }
    if d < 2 {
        return Err(KacError::InvalidParameter(format!(
            "dimension must be >= 2, got {d}"
        )));
    }
    let df = f64::from(d);
    let lo = 2.0 * beta / (1.0 + 2.0 * beta);
    let hi = (3.0 + df) * beta / (1.0 + 3.0 * beta + df / 2.0 + df * beta);
    Ok((lo, hi))
}

/// Midpoint of [`eta_window`], the default schedule exponent.
pub fn eta_mid(beta: f64, d: u32) -> Result<f64> {
    let (lo, hi) = eta_window(beta, d)?;
    Ok(0.5 * (lo + hi))
}

/// `delta_N = N^{-(1-eta)}`.
///
/// Fails when the result would leave (0, 1/2), naming the smallest N that
/// is admissible for this `eta`.
pub fn delta_schedule(n: u64, eta: f64) -> Result<f64> {
    if n < 2 {
        return Err(KacError::InvalidParameter(format!("need N >= 2, got {n}")));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(KacError::InvalidParameter(format!(
            "eta must lie in (0,1), got {eta}"
        )));
    }
    let delta = (n as f64).powf(-(1.0 - eta));
    if delta >= 0.5 {
        let n_min = (2.0f64.powf(1.0 / (1.0 - eta))).floor() as u64 + 1;
        return Err(KacError::Domain(format!(
            "delta_N = {delta:.6} >= 1/2 at N = {n}; smallest admissible N for eta = {eta} is {n_min}"
        )));
    }
    Ok(delta)
}

/// A fully validated point on the schedule: the weight `delta_N` with its
/// exponents and the induced energy spread.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct ScheduleParams {
    pub n: u64,
    pub d: u32,
    pub eta: f64,
    pub beta: f64,
    pub delta_n: f64,
    pub sigma_sq: f64,
}

impl ScheduleParams {
    pub fn new(n: u64, d: u32, eta: f64, beta: f64) -> Result<Self> {
        let (lo, hi) = eta_window(beta, d)?;
        if !(eta > lo && eta < hi) {
            return Err(KacError::InvalidParameter(format!(
                "eta = {eta} outside the admissible window ({lo:.6}, {hi:.6}) for beta = {beta}, d = {d}"
            )));
        }
        let delta_n = delta_schedule(n, eta)?;
        Ok(ScheduleParams {
            n,
            d,
            eta,
            beta,
            delta_n,
            sigma_sq: sigma_sq_formula(d, delta_n),
        })
    }

    pub fn generating_function(&self) -> GeneratingFunction {
        // delta_n already validated in (0, 1/2)
        GeneratingFunction::new(self.d, self.delta_n).expect("schedule produced invalid weight")
    }
}
