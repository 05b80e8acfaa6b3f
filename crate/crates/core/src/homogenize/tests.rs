use super::*;
use crate::corrector::{discretize_generator, GeneratorOptions};
use crate::ergodic::TorusHistogram;
use crate::grid::TorusGrid;
use crate::periodic::{family_f1, CoefficientSpec, Lattice, SigmaSpec};
use crate::stable::validate;
use nalgebra::DMatrix;

fn alpha() -> StabilityIndex {
    StabilityIndex::new(1.5).unwrap()
}

fn cross(w: f64) -> SpectralMeasure {
    SpectralMeasure::from_pairs(2, vec![(vec![1.0, 0.0], w), (vec![0.0, 1.0], w)]).unwrap()
}

fn skew() -> SpectralMeasure {
    SpectralMeasure::from_pairs(2, vec![(vec![1.0, 0.0], 0.4), (vec![1.0, 2.0], 0.3), (vec![-1.0, 1.0], 0.2)]).unwrap()
}

// A lopsided probability vector on an m x m grid.
fn lopsided(m: usize) -> InvariantEstimate {
    let grid = TorusGrid::new(Lattice::unit(2), m).unwrap();
    let counts = (0..grid.len()).map(|i| 1.0 + (i % 7) as f64 + 0.1 * (i % 3) as f64).collect();
    InvariantEstimate {
        histogram: TorusHistogram::from_counts(grid, counts).unwrap(),
        method: InvariantMethod::Occupation,
        burn_in: 0.0,
        diagnostics: Default::default(),
    }
}

fn diag_sigma(s: [f64; 2]) -> PeriodicCoefficients {
    CoefficientSpec {
        sigma: SigmaSpec { base: Some(vec![vec![s[0], 0.0], vec![0.0, s[1]]]), diag_modes: vec![] },
        ..CoefficientSpec::constant(vec![0.0, 0.0])
    }
    .build()
    .unwrap()
}

fn same_measure(a: &SpectralMeasure, b: &SpectralMeasure, tol: f64) {
    assert_eq!(a.atoms().len(), b.atoms().len());
    for x in a.atoms() {
        let y = b
            .atoms()
            .iter()
            .find(|y| y.dir.iter().zip(&x.dir).all(|(p, q)| (p - q).abs() < 1e-9))
            .unwrap_or_else(|| panic!("no atom along {:?}", x.dir));
        assert!((x.weight - y.weight).abs() <= tol, "{} vs {}", x.weight, y.weight);
    }
}

fn f1_invariant(m: usize) -> (PeriodicCoefficients, InvariantEstimate) {
    let c = family_f1().build().unwrap();
    let g = discretize_generator(&c, &cross(0.1), alpha(), m, &GeneratorOptions::default()).unwrap();
    let inv = g.invariant_estimate(1e-12).unwrap();
    (c, inv)
}

#[test]
fn constant_sigma_is_a_single_pushforward() {
    let c = diag_sigma([2.0, 1.0]);
    for mu in [cross(1.0), skew()] {
        let law = homogenized_measure(&c, &mu, alpha(), &lopsided(8)).unwrap();
        let push = pushforward(&mu, alpha(), &DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0])).unwrap();
        same_measure(&law.mu_bar, &push, 1e-10);
        // weights λ |σ0 φ|^α directly
        for atom in mu.atoms() {
            let img = [2.0 * atom.dir[0], atom.dir[1]];
            let len = img[0].hypot(img[1]);
            let dir = [img[0] / len, img[1] / len];
            let w = law
                .mu_bar
                .atoms()
                .iter()
                .find(|a| (a.dir[0] - dir[0]).abs() < 1e-9 && (a.dir[1] - dir[1]).abs() < 1e-9)
                .unwrap()
                .weight;
            assert!((w - atom.weight * len.powf(1.5)).abs() < 1e-10);
        }
    }
}

#[test]
fn identity_sigma_returns_the_noise() {
    let c = CoefficientSpec::constant(vec![0.2, 0.1]).build().unwrap();
    let law = homogenized_measure(&c, &skew(), alpha(), &lopsided(6)).unwrap();
    same_measure(&law.mu_bar, &skew(), 1e-12);
}

#[test]
fn total_mass_matches_direct_double_sum() {
    let (c, inv) = f1_invariant(16);
    let law = homogenized_measure(&c, &skew(), alpha(), &inv).unwrap();
    assert!((law.mu_bar.total_mass() - law.provenance.direct_total_mass).abs() < 1e-10);
    assert_eq!(law.provenance.raw_pairs, 256 * 3);
}

#[test]
fn f1_diagonal_sigma_keeps_the_axes() {
    let (c, inv) = f1_invariant(16);
    let law = homogenized_measure(&c, &cross(0.1), alpha(), &inv).unwrap();
    assert_eq!(law.mu_bar.atoms().len(), 4);
    assert!(validate(&law.mu_bar, alpha()).unwrap().c1 > 0.0);
}

#[test]
fn symbol_trivial_cases() {
    let mu = skew();
    let c = CoefficientSpec {
        sigma: SigmaSpec { base: Some(vec![vec![2.0, 0.0], vec![0.0, 2.0]]), diag_modes: vec![] },
        ..CoefficientSpec::constant(vec![0.0, 0.0])
    }
    .build()
    .unwrap();
    let law = homogenized_measure(&c, &mu, alpha(), &lopsided(4)).unwrap();
    assert_eq!(homogenized_symbol(&[0.0, 0.0], &law), 0.0);
    for xi in [[1.0, 0.0], [0.3, -2.0], [5.0, 4.0]] {
        let want = 2f64.powf(1.5) * levy_symbol(&xi, &mu, alpha());
        assert!((homogenized_symbol(&xi, &law) - want).abs() < 1e-12 * want.abs());
    }
}

#[test]
fn f1_symbol_exchanges_summation() {
    let (c, inv) = f1_invariant(16);
    let mu = skew();
    let law = homogenized_measure(&c, &mu, alpha(), &inv).unwrap();
    let g = inv.grid();
    for k in 0..10 {
        let t = k as f64 * 0.7;
        let xi = [3.0 * t.cos() * (1.0 + k as f64 * 0.3), 2.0 * t.sin() - 0.5];
        let direct: f64 = (0..g.len())
            .map(|j| {
                let s = c.eval_sigma(&g.center(j));
                let st = s.transpose() * nalgebra::DVector::from_column_slice(&xi);
                inv.probs()[j] * levy_symbol(st.as_slice(), &mu, alpha())
            })
            .sum();
        let got = homogenized_symbol(&xi, &law);
        assert!((got - direct).abs() < 1e-10 * direct.abs().max(1.0), "{got} vs {direct}");
    }
}

#[test]
fn f1_tail_count_oracle() {
    let (c, inv) = f1_invariant(32);
    let mu = cross(0.1);
    let law = homogenized_measure(&c, &mu, alpha(), &inv).unwrap();
    for r in [1.0, 3.0] {
        let o = tail_count_oracle(&law, &c, &mu, &inv, r, 1_000_000, 11).unwrap();
        assert!(o.z_score().abs() < 3.0, "{o:?}");
    }
}

#[test]
fn refinement_changes_little() {
    let mu = skew();
    let (c, inv32) = f1_invariant(32);
    let (_, inv64) = f1_invariant(64);
    let a = homogenized_measure(&c, &mu, alpha(), &inv32).unwrap();
    let b = homogenized_measure(&c, &mu, alpha(), &inv64).unwrap();
    assert!((a.mu_bar.total_mass() / b.mu_bar.total_mass() - 1.0).abs() < 0.01);
    for xi in [[1.0, 0.0], [0.0, 2.0], [1.5, -1.5], [0.25, 3.0]] {
        let (x, y) = (homogenized_symbol(&xi, &a), homogenized_symbol(&xi, &b));
        assert!((x / y - 1.0).abs() < 0.01);
    }
}

#[test]
fn limit_of_pure_noise_is_the_noise() {
    use crate::stable::NoiseSampler;
    let c = CoefficientSpec::constant(vec![0.0, 0.0]).build().unwrap();
    let mu = cross(1.0);
    let law = homogenized_measure(&c, &mu, alpha(), &lopsided(4)).unwrap();
    let mut r1 = rng::stream(5);
    let mut r2 = rng::stream(5);
    let direct = NoiseSampler::new(&mu, alpha());
    let mut y = vec![0.0; 2];
    for _ in 0..100 {
        direct.sample_into(0.7, &mut r2, &mut y);
        assert_eq!(sample_limit(&law, 0.7, &mut r1), y);
    }
}

#[test]
fn json_round_trip_and_sphere_histogram() {
    let (c, inv) = f1_invariant(8);
    let law = homogenized_measure(&c, &skew(), alpha(), &inv).unwrap();
    let js = law.to_json().unwrap();
    assert!(js.get("alpha").is_some() && js.get("atoms").is_some() && js.get("provenance").is_some());
    let back = HomogenizedLaw::from_json(&js).unwrap();
    assert_eq!(back.provenance, law.provenance);
    assert!((back.mu_bar.total_mass() - law.mu_bar.total_mass()).abs() < 1e-12);

    let mut buf = Vec::new();
    law.write_sphere_histogram(&mut buf, 36).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let total: f64 = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
    assert_eq!(text.lines().count(), 37);
    assert!((total - law.mu_bar.total_mass()).abs() < 1e-12);
}

#[test]
fn dimension_mismatch_is_rejected() {
    let c = CoefficientSpec::constant(vec![0.0]).build().unwrap();
    assert!(matches!(
        homogenized_measure(&c, &cross(1.0), alpha(), &lopsided(4)),
        Err(Error::DimensionMismatch { .. })
    ));
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn limit_symbol_is_even_negative_homogeneous(
            x in -5.0f64..5.0, y in -5.0f64..5.0, c in 0.1f64..10.0,
        ) {
            let (c1, inv) = (diag_sigma([1.3, 0.7]), lopsided(4));
            let law = homogenized_measure(&c1, &skew(), alpha(), &inv).unwrap();
            let p = homogenized_symbol(&[x, y], &law);
            prop_assert!(p <= 0.0);
            prop_assert!((homogenized_symbol(&[-x, -y], &law) - p).abs() <= 1e-12 * p.abs().max(1.0));
            let q = homogenized_symbol(&[c * x, c * y], &law);
            prop_assert!((q - c.powf(1.5) * p).abs() <= 1e-10 * q.abs().max(1.0));
        }
    }
}
