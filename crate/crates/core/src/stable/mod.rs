//! Symmetric α-stable noise described by a finite atomic spectral measure.
//!
//! The Lévy measure is `ν(dy) = μ(dŷ) |y|^{-α-1} d|y|` with `μ` a finite
//! symmetric measure on the unit sphere. For symmetric `μ` the Lévy symbol
//! is real:
//!
//! ```text
//! ψ(ξ) = -C_α Σ_k λ_k |⟨ξ, φ_k⟩|^α,   C_α = ∫_0^∞ (1 - cos u) u^{-1-α} du
//! ```

mod bounds;
mod index;
mod measure;
mod sample;

pub use bounds::{validate, NondegeneracyBounds};
pub use index::{stable_constant, StabilityIndex};
pub use measure::{pushforward, Atom, NoiseAtom, NoiseSpec, SpectralMeasure};
pub use sample::{
    sample_increment, sample_large_jumps, sample_stable_1d, JumpEvent, JumpSampler, NoiseSampler,
};

/// Lévy symbol `ψ(ξ)` of the stable process with spectral measure `mu`.
pub fn levy_symbol(xi: &[f64], mu: &SpectralMeasure, alpha: StabilityIndex) -> f64 {
    debug_assert_eq!(xi.len(), mu.dim());
    let a = alpha.value();
    let s: f64 = mu
        .atoms()
        .iter()
        .map(|atom| atom.weight * dot(xi, &atom.dir).abs().powf(a))
        .sum();
    -alpha.c_alpha() * s
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cross() -> SpectralMeasure {
        SpectralMeasure::from_pairs(2, vec![(vec![1.0, 0.0], 1.0), (vec![0.0, 1.0], 1.0)]).unwrap()
    }

    #[test]
    fn symbol_vanishes_at_origin() {
        let a = StabilityIndex::new(1.5).unwrap();
        assert_eq!(levy_symbol(&[0.0, 0.0], &cross(), a), 0.0);
    }

    #[test]
    fn symbol_single_axis_pair() {
        let a = StabilityIndex::new(1.5).unwrap();
        let mu = SpectralMeasure::from_pairs(2, vec![(vec![1.0, 0.0], 1.0)]).unwrap();
        let expected = -a.c_alpha() * 2.0 * 2f64.powf(1.5);
        assert!((levy_symbol(&[2.0, 7.0], &mu, a) - expected).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn symbol_is_even_nonpositive_and_homogeneous(
            x in -5.0f64..5.0, y in -5.0f64..5.0, c in -4.0f64..4.0, alpha in 1.05f64..1.95
        ) {
            let a = StabilityIndex::new(alpha).unwrap();
            let mu = SpectralMeasure::from_pairs(
                2,
                vec![(vec![1.0, 0.0], 0.7), (vec![0.6, 0.8], 1.3)],
            ).unwrap();
            let p = levy_symbol(&[x, y], &mu, a);
            prop_assert!(p <= 0.0);
            prop_assert!((levy_symbol(&[-x, -y], &mu, a) - p).abs() <= 1e-12 * (1.0 + p.abs()));
            let scaled = levy_symbol(&[c * x, c * y], &mu, a);
            let want = c.abs().powf(alpha) * p;
            prop_assert!((scaled - want).abs() <= 1e-10 * (1.0 + want.abs()));
        }

        #[test]
        fn symbol_respects_nondegeneracy_bounds(x in -5.0f64..5.0, y in -5.0f64..5.0) {
            let a = StabilityIndex::new(1.5).unwrap();
            let mu = SpectralMeasure::from_pairs(
                2,
                vec![(vec![1.0, 0.0], 0.7), (vec![0.6, 0.8], 1.3)],
            ).unwrap();
            let b = validate(&mu, a).unwrap();
            let r = (x * x + y * y).sqrt().powf(1.5) * a.c_alpha();
            let p = -levy_symbol(&[x, y], &mu, a);
            prop_assert!(p >= b.c1 * r * (1.0 - 1e-9) - 1e-300);
            prop_assert!(p <= b.c2 * r * (1.0 + 1e-9) + 1e-300);
        }
    }
}
