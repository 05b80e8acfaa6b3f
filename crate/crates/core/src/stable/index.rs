use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

/// Stability index `α ∈ (1, 2)` together with its symbol constant `C_α`.
///
/// `C_α` is computed once at construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct StabilityIndex {
    alpha: f64,
    c_alpha: f64,
}

impl StabilityIndex {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 1.0 && alpha < 2.0) {
            return Err(Error::InvalidStabilityIndex(alpha));
        }
        Ok(Self { alpha, c_alpha: stable_constant(alpha) })
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.alpha
    }

    /// `C_α = ∫_0^∞ (1 - cos u) u^{-1-α} du`.
    #[inline]
    pub fn c_alpha(self) -> f64 {
        self.c_alpha
    }
}

impl TryFrom<f64> for StabilityIndex {
    type Error = Error;
    fn try_from(a: f64) -> Result<Self> {
        Self::new(a)
    }
}

impl From<StabilityIndex> for f64 {
    fn from(a: StabilityIndex) -> f64 {
        a.alpha
    }
}

// (1 - cos u) / u^2, evaluated without cancellation near 0.
fn versine_ratio(u: f64) -> f64 {
    if u.abs() < 1e-2 {
        let u2 = u * u;
        0.5 - u2 / 24.0 + u2 * u2 / 720.0 - u2 * u2 * u2 / 40320.0
    } else {
        let s = (0.5 * u).sin();
        2.0 * s * s / (u * u)
    }
}

/// `∫_0^∞ (1 - cos u) u^{-1-α} du` for `0 < α < 2` by quadrature.
///
/// On `[0, 1]` the substitution `u = v^{1/(2-α)}` removes the `u^{1-α}`
/// singularity. On `[1, ∞)` the oscillatory part is integrated by parts twice
/// and the remaining `∫ cos u · u^{-α-3}` is summed over half periods.
pub fn stable_constant(alpha: f64) -> f64 {
    let p = 1.0 / (2.0 - alpha);
    let (head, _) = quad::integrate(|v: f64| versine_ratio(v.powf(p)), 0.0, 1.0, 1e-15, 1e-14, 500);
    let head = p * head;

    // ∫_1^∞ cos u u^{-a} du = -sin 1 + a (cos 1 - (a + 1) ∫_1^∞ cos u u^{-a-2} du), a = 1 + α
    let a = 1.0 + alpha;
    let mut rest = 0.0;
    let mut lo = 1.0;
    let step = std::f64::consts::PI;
    for _ in 0..400 {
        let hi = lo + step;
        let (v, _) = quad::integrate(|u: f64| u.cos() * u.powf(-a - 2.0), lo, hi, 1e-18, 1e-15, 50);
        rest += v;
        lo = hi;
    }
    let cos_part = -1f64.sin() + a * (1f64.cos() - (a + 1.0) * rest);
    head + 1.0 / alpha - cos_part
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range() {
        for a in [0.9, 1.0, 2.0, 2.5, f64::NAN] {
            assert!(StabilityIndex::new(a).is_err());
        }
        assert!(StabilityIndex::new(1.5).is_ok());
    }

    #[test]
    fn alpha_one_limit_is_half_pi() {
        // ∫ (1 - cos u) / u² du = π/2; the routine itself accepts α = 1.
        assert!((stable_constant(1.0) - std::f64::consts::FRAC_PI_2).abs() < 1e-11);
    }

    #[test]
    fn serde_round_trip_via_f64() {
        let a = StabilityIndex::new(1.7).unwrap();
        let s = serde_json::to_string(&a).unwrap();
        assert_eq!(s, "1.7");
        let b: StabilityIndex = serde_json::from_str(&s).unwrap();
        assert_eq!(a, b);
        assert!(serde_json::from_str::<StabilityIndex>("0.5").is_err());
    }
}
