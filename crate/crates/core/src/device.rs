//! Memristor device model: parameter-to-conductance mapping, write
//! quantization, and process-variation perturbation.
//!
//! A device is a programmable conductance bounded to `[sigma_min, sigma_max]`.
//! Trainable parameters are unconstrained reals mapped onto that interval by a
//! logistic curve, so the range constraint holds by construction and the map
//! stays differentiable for backpropagation. All conductances are in µS.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the differential signal pair is regenerated between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regeneration {
    /// Two cascaded inverters per hidden neuron (the physical circuit).
    TwoInverter,
    /// Ideal negation of the first inverter's output; ablation only.
    Idealized,
}

impl std::fmt::Display for Regeneration {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Regeneration::TwoInverter => write!(f, "two-inverter"),
            Regeneration::Idealized => write!(f, "idealized"),
        }
    }
}

impl std::str::FromStr for Regeneration {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-inverter" => Ok(Regeneration::TwoInverter),
            "idealized" => Ok(Regeneration::Idealized),
            other => Err(Error::InvalidParameter(format!(
                "unknown regeneration mode {other:?}"
            ))),
        }
    }
}

/// Memristor and circuit constants shared across the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceParams {
    /// Minimum programmable conductance (µS).
    pub sigma_min: f64,
    /// Maximum programmable conductance (µS).
    pub sigma_max: f64,
    /// Supply voltage (V); signals live in [-vdd/2, +vdd/2].
    pub vdd: f64,
    /// Slope parameter of the inverter transfer curve (1/V).
    pub vtc_gain: f64,
    /// Device write threshold (V); informational, not simulated.
    pub write_threshold: f64,
    /// Differential regeneration mode between layers.
    pub regeneration: Regeneration,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self {
            sigma_min: 0.12,
            sigma_max: 7.9,
            vdd: 0.5,
            vtc_gain: 20.0,
            write_threshold: 4.0,
            regeneration: Regeneration::TwoInverter,
        }
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < sigma_min < sigma_max, got [{}, {}]",
                self.sigma_min, self.sigma_max
            )));
        }
        if !(self.vdd > 0.0) {
            return Err(Error::InvalidParameter(format!("vdd must be > 0, got {}", self.vdd)));
        }
        if !(self.vtc_gain > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "vtc_gain must be > 0, got {}",
                self.vtc_gain
            )));
        }
        Ok(())
    }

    /// Half-supply rail: the magnitude of the bias inputs and signal bound.
    pub fn rail(&self) -> f64 {
        self.vdd / 2.0
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Unchecked logistic range map; hot path for training.
#[inline]
pub(crate) fn g1(theta: f64, p: &DeviceParams) -> f64 {
    p.sigma_min + (p.sigma_max - p.sigma_min) * logistic(theta)
}

/// Unchecked derivative of [`g1`]; always positive.
#[inline]
pub(crate) fn g1_prime(theta: f64, p: &DeviceParams) -> f64 {
    let s = logistic(theta);
    (p.sigma_max - p.sigma_min) * s * (1.0 - s)
}

/// Map an unconstrained parameter to a conductance in (sigma_min, sigma_max).
pub fn theta_to_conductance(theta: f64, params: &DeviceParams) -> Result<f64> {
    if !theta.is_finite() {
        return Err(Error::InvalidParameter(format!("non-finite theta {theta}")));
    }
    Ok(g1(theta, params))
}

/// Analytic derivative dσ/dθ of [`theta_to_conductance`].
pub fn conductance_derivative(theta: f64, params: &DeviceParams) -> Result<f64> {
    if !theta.is_finite() {
        return Err(Error::InvalidParameter(format!("non-finite theta {theta}")));
    }
    Ok(g1_prime(theta, params))
}

/// Spacing of the write-quantization grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantScale {
    /// Levels uniform in conductance (default).
    Linear,
    /// Levels uniform in log-conductance.
    Log,
}

/// Result of snapping a conductance to the write grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantized {
    pub value: f64,
    /// True when the input lay outside the programmable range and was clamped.
    pub clamped: bool,
}

/// Snap a conductance to the nearest of 2^bits levels spanning
/// [sigma_min, sigma_max], endpoints included. Idempotent.
pub fn quantize_conductance(
    sigma: f64,
    bits: u32,
    params: &DeviceParams,
    scale: QuantScale,
) -> Result<Quantized> {
    if !(1..=24).contains(&bits) {
        return Err(Error::InvalidParameter(format!(
            "quantization bits must be in 1..=24, got {bits}"
        )));
    }
    if !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("non-finite conductance {sigma}")));
    }
    let (lo, hi) = (params.sigma_min, params.sigma_max);
    let clamped = sigma < lo || sigma > hi;
    let s = sigma.clamp(lo, hi);
    let levels = (1u64 << bits) as f64;
    let steps = levels - 1.0;
    let (a, b, x) = match scale {
        QuantScale::Linear => (lo, hi, s),
        QuantScale::Log => (lo.ln(), hi.ln(), s.ln()),
    };
    let idx = ((x - a) / (b - a) * steps).round().clamp(0.0, steps);
    // endpoints pinned exactly so repeated quantization is stable
    let value = if idx == 0.0 {
        lo
    } else if idx == steps {
        hi
    } else {
        match scale {
            QuantScale::Linear => a + (b - a) * (idx / steps),
            QuantScale::Log => (a + (b - a) * (idx / steps)).exp(),
        }
    };
    Ok(Quantized { value, clamped })
}

/// Multiplicative Gaussian process variation: σ' = σ(1 + ε), ε ~ N(0, rel_noise),
/// clamped to the programmable range. Deterministic per RNG stream.
pub fn perturb_conductance<R: Rng + ?Sized>(
    sigma: f64,
    rel_noise: f64,
    params: &DeviceParams,
    rng: &mut R,
) -> Result<f64> {
    if !(rel_noise.is_finite() && rel_noise >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "relative noise must be >= 0, got {rel_noise}"
        )));
    }
    if rel_noise == 0.0 {
        return Ok(sigma);
    }
    let eps = Normal::new(0.0, rel_noise)
        .map_err(|e| Error::InvalidParameter(format!("bad noise level: {e}")))?
        .sample(rng);
    Ok((sigma * (1.0 + eps)).clamp(params.sigma_min, params.sigma_max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn dp() -> DeviceParams {
        DeviceParams::default()
    }

    #[test]
    fn midpoint_at_theta_zero() {
        assert_relative_eq!(theta_to_conductance(0.0, &dp()).unwrap(), 4.01, epsilon = 1e-12);
    }

    #[test]
    fn saturates_at_extremes() {
        let p = dp();
        assert!(theta_to_conductance(60.0, &p).unwrap() > 7.9 - 1e-9);
        assert!(theta_to_conductance(-60.0, &p).unwrap() < 0.12 + 1e-9);
        // strictly inside the open interval in the working range
        for t in [-30.0, -5.0, 0.0, 5.0, 30.0] {
            let s = theta_to_conductance(t, &p).unwrap();
            assert!(s > p.sigma_min && s < p.sigma_max, "theta {t} gave {s}");
        }
    }

    #[test]
    fn matches_independent_formula() {
        // oracle: logistic written via tanh instead of exp
        let p = dp();
        let mut r = rng::stream(11);
        for _ in 0..10 {
            let t: f64 = r.random_range(-8.0..8.0);
            let expected = p.sigma_min
                + (p.sigma_max - p.sigma_min) * 0.5 * (1.0 + (t / 2.0).tanh());
            assert_relative_eq!(theta_to_conductance(t, &p).unwrap(), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_non_finite_theta() {
        assert!(theta_to_conductance(f64::NAN, &dp()).is_err());
        assert!(conductance_derivative(f64::INFINITY, &dp()).is_err());
    }

    #[test]
    fn derivative_at_zero_is_quarter_range() {
        assert_relative_eq!(
            conductance_derivative(0.0, &dp()).unwrap(),
            (7.9 - 0.12) / 4.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let p = dp();
        let h = 1e-6;
        let mut r = rng::stream(3);
        for _ in 0..100 {
            let t: f64 = r.random_range(-6.0..6.0);
            let fd = (g1(t + h, &p) - g1(t - h, &p)) / (2.0 * h);
            let an = conductance_derivative(t, &p).unwrap();
            assert!(an > 0.0);
            assert_relative_eq!(an, fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn derivative_vanishes_in_tails() {
        assert!(conductance_derivative(20.0, &dp()).unwrap() < 1e-7);
        assert!(conductance_derivative(-20.0, &dp()).unwrap() < 1e-7);
    }

    #[test]
    fn monotone_in_theta() {
        let p = dp();
        let mut r = rng::stream(5);
        for _ in 0..200 {
            let a: f64 = r.random_range(-15.0..15.0);
            let b: f64 = r.random_range(-15.0..15.0);
            if a == b {
                continue;
            }
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            assert!(g1(lo, &p) < g1(hi, &p), "not monotone at {lo}, {hi}");
        }
    }

    #[test]
    fn quantize_keeps_endpoints() {
        let p = dp();
        for bits in 1..=8 {
            for scale in [QuantScale::Linear, QuantScale::Log] {
                let q = quantize_conductance(p.sigma_min, bits, &p, scale).unwrap();
                assert_eq!(q.value, p.sigma_min);
                assert!(!q.clamped);
                let q = quantize_conductance(p.sigma_max, bits, &p, scale).unwrap();
                assert_eq!(q.value, p.sigma_max);
            }
        }
    }

    #[test]
    fn one_bit_snaps_to_nearest_extreme() {
        let p = dp();
        let q = quantize_conductance(1.0, 1, &p, QuantScale::Linear).unwrap();
        assert_eq!(q.value, p.sigma_min);
        let q = quantize_conductance(7.0, 1, &p, QuantScale::Linear).unwrap();
        assert_eq!(q.value, p.sigma_max);
    }

    #[test]
    fn four_bit_error_bound_over_sweep() {
        // 16 levels: worst-case error is half a step = (range)/30
        let p = dp();
        let bound = (p.sigma_max - p.sigma_min) / 30.0;
        let mut worst = 0.0f64;
        for i in 0..10_000 {
            let s = p.sigma_min + (p.sigma_max - p.sigma_min) * (i as f64 / 9_999.0);
            let q = quantize_conductance(s, 4, &p, QuantScale::Linear).unwrap();
            worst = worst.max((q.value - s).abs());
        }
        assert!(worst <= bound * (1.0 + 1e-12), "worst {worst} > {bound}");
    }

    #[test]
    fn quantize_is_idempotent() {
        let p = dp();
        let mut r = rng::stream(17);
        for bits in 1..=8 {
            for scale in [QuantScale::Linear, QuantScale::Log] {
                for _ in 0..200 {
                    let s: f64 = r.random_range(p.sigma_min..p.sigma_max);
                    let once = quantize_conductance(s, bits, &p, scale).unwrap().value;
                    let twice = quantize_conductance(once, bits, &p, scale).unwrap();
                    assert_eq!(once, twice.value, "bits {bits} scale {scale:?} sigma {s}");
                    assert!(!twice.clamped);
                }
            }
        }
    }

    #[test]
    fn out_of_range_clamps_with_flag() {
        let p = dp();
        let q = quantize_conductance(9.5, 4, &p, QuantScale::Linear).unwrap();
        assert!(q.clamped);
        assert_eq!(q.value, p.sigma_max);
        let q = quantize_conductance(0.01, 4, &p, QuantScale::Linear).unwrap();
        assert!(q.clamped);
        assert_eq!(q.value, p.sigma_min);
    }

    #[test]
    fn zero_noise_is_identity() {
        let p = dp();
        let mut r = rng::stream(1);
        assert_eq!(perturb_conductance(3.3, 0.0, &p, &mut r).unwrap(), 3.3);
    }

    #[test]
    fn negative_noise_rejected() {
        let p = dp();
        let mut r = rng::stream(1);
        assert!(perturb_conductance(3.3, -0.1, &p, &mut r).is_err());
    }

    #[test]
    fn noise_statistics_match_level() {
        // 10k draws at sigma = 4 µS, 25% relative noise: recovered epsilon
        // std within 3% of 0.25 (clamping at ±3.9 std is negligible)
        let p = dp();
        let mut r = rng::stream(99);
        let sigma = 4.0;
        let eps: Vec<f64> = (0..10_000)
            .map(|_| perturb_conductance(sigma, 0.25, &p, &mut r).unwrap() / sigma - 1.0)
            .collect();
        let mean = eps.iter().sum::<f64>() / eps.len() as f64;
        let var = eps.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / eps.len() as f64;
        let std = var.sqrt();
        assert!((std - 0.25).abs() < 0.25 * 0.03, "std {std}");
        assert!(mean.abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn perturbed_values_stay_in_range() {
        let p = dp();
        let mut r = rng::stream(42);
        for _ in 0..5_000 {
            let s: f64 = r.random_range(p.sigma_min..p.sigma_max);
            let v = perturb_conductance(s, 0.5, &p, &mut r).unwrap();
            assert!(v >= p.sigma_min && v <= p.sigma_max);
        }
    }

    #[test]
    fn perturbation_reproducible_per_seed() {
        let p = dp();
        let a = perturb_conductance(4.0, 0.1, &p, &mut rng::stream(7)).unwrap();
        let b = perturb_conductance(4.0, 0.1, &p, &mut rng::stream(7)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn validate_rejects_bad_params() {
        let mut p = dp();
        p.sigma_min = 8.0;
        assert!(p.validate().is_err());
        let mut p = dp();
        p.vdd = 0.0;
        assert!(p.validate().is_err());
    }
}
