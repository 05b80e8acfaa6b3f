//! Fixtures shared by the benchmarks.

use lvhg_core::periodic::{family_f1, PeriodicCoefficients};
use lvhg_core::sim::Model;
use lvhg_core::stable::{NoiseAtom, NoiseSpec};

/// Atoms `±e1, ±e2` of weight `w` at `α = 1.5`.
pub fn cross_noise(w: f64) -> NoiseSpec {
    let atom = |dir: [f64; 2]| NoiseAtom { dir: dir.to_vec(), w };
    NoiseSpec { alpha: 1.5, atoms: vec![atom([1.0, 0.0]), atom([-1.0, 0.0]), atom([0.0, 1.0]), atom([0.0, -1.0])] }
}

pub fn f1_coefficients() -> PeriodicCoefficients {
    family_f1().build().expect("F1 builds")
}

pub fn f1_model() -> Model {
    let (mu, alpha) = cross_noise(0.1).build().expect("noise builds");
    Model::new(f1_coefficients(), mu, alpha).expect("model builds")
}
