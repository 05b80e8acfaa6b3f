//! Lattices and lattice-periodic coefficient fields.
//!
//! Coefficients come from a declarative trigonometric family:
//!
//! ```text
//! b_i(x)  = β_i + Σ_m a_{im} cos(2π⟨k_m, B^{-1}x⟩ + θ_{im})
//! σ(x)    = S_0 · diag(1 + Σ_m s_{im} sin(2π⟨k_m, B^{-1}x⟩ + θ_{im}))
//! ```
//!
//! with `Σ_m |s_{im}| ≤ 0.9` for every component, so `σ(x)` is always
//! invertible. Members of the family are smooth, hence Lipschitz.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_SIGMA_AMPLITUDE: f64 = 0.9;

/// Lattice `Λ = B Z^d`, columns of `B` are the generators.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    dim: usize,
    basis: Vec<f64>,
    inverse: Vec<f64>,
}

impl Lattice {
    pub fn unit(dim: usize) -> Self {
        let mut id = vec![0.0; dim * dim];
        for i in 0..dim {
            id[i * dim + i] = 1.0;
        }
        Self { dim, basis: id.clone(), inverse: id }
    }

    /// Builds a lattice from its generators (each inner vector is one column
    /// of `B`).
    pub fn from_generators(generators: &[Vec<f64>]) -> Result<Self> {
        let dim = generators.len();
        if dim == 0 || generators.iter().any(|g| g.len() != dim) {
            return Err(Error::InvalidCoefficients("lattice must have d generators of length d".into()));
        }
        let b = DMatrix::from_fn(dim, dim, |i, j| generators[j][i]);
        let det = b.determinant();
        if !(det.abs() > 1e-12) {
            return Err(Error::SingularMatrix(f64::INFINITY));
        }
        let inv = b.clone().try_inverse().ok_or(Error::SingularMatrix(f64::INFINITY))?;
        let row_major = |m: &DMatrix<f64>| (0..dim * dim).map(|k| m[(k / dim, k % dim)]).collect();
        Ok(Self { dim, basis: row_major(&b), inverse: row_major(&inv) })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_unit(&self) -> bool {
        *self == Self::unit(self.dim)
    }

    pub fn basis(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.basis)
    }

    pub fn generators(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|j| (0..self.dim).map(|i| self.basis[i * self.dim + j]).collect()).collect()
    }

    /// Reduced coordinates `u = B^{-1} x`.
    #[inline]
    pub fn to_reduced(&self, x: &[f64], u: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            u[i] = (0..d).map(|j| self.inverse[i * d + j] * x[j]).sum();
        }
    }

    /// Physical coordinates `x = B u`.
    #[inline]
    pub fn to_physical(&self, u: &[f64], x: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            x[i] = (0..d).map(|j| self.basis[i * d + j] * u[j]).sum();
        }
    }

    /// Applies `B^{-1}` to a displacement.
    #[inline]
    pub fn reduce_displacement(&self, v: &[f64], out: &mut [f64]) {
        self.to_reduced(v, out)
    }

    /// `x - B floor(B^{-1} x)`, the representative in the fundamental domain.
    pub fn wrap(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        self.wrap_in_place(&mut out);
        out
    }

    pub fn wrap_in_place(&self, x: &mut [f64]) {
        let d = self.dim;
        if self.is_unit_fast() {
            for v in x.iter_mut() {
                *v = wrap_unit(*v);
            }
            return;
        }
        let mut u = [0.0f64; 8];
        let u = &mut u[..d.min(8)];
        if d > 8 {
            let mut uu = vec![0.0; d];
            self.to_reduced(x, &mut uu);
            for v in uu.iter_mut() {
                *v = wrap_unit(*v);
            }
            self.to_physical(&uu, x);
            return;
        }
        self.to_reduced(x, u);
        let floors: Vec<f64> = u.iter().map(|v| v.floor()).collect();
        if floors.iter().all(|f| *f == 0.0) {
            return;
        }
        let mut shift = vec![0.0; d];
        self.to_physical(&floors, &mut shift);
        for (xi, s) in x.iter_mut().zip(&shift) {
            *xi -= s;
        }
        self.to_reduced(x, u);
        if u.iter().any(|v| !(*v >= 0.0 && *v < 1.0)) {
            for v in u.iter_mut() {
                *v = wrap_unit(*v);
            }
            let uu = u.to_vec();
            self.to_physical(&uu, x);
        }
    }

    #[inline]
    fn is_unit_fast(&self) -> bool {
        self.basis.iter().enumerate().all(|(k, &v)| v == if k / self.dim == k % self.dim { 1.0 } else { 0.0 })
    }
}

/// `v - floor(v)` forced into `[0, 1)`.
#[inline]
pub fn wrap_unit(v: f64) -> f64 {
    let r = v - v.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Wraps `x` into the fundamental domain of `lattice`.
pub fn wrap(x: &[f64], lattice: &Lattice) -> Vec<f64> {
    lattice.wrap(x)
}

/// One trigonometric mode acting on a single component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub component: usize,
    /// Integer wave vector in reduced coordinates.
    pub k: Vec<i64>,
    pub amp: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DriftSpec {
    #[serde(rename = "const")]
    pub constant: Vec<f64>,
    #[serde(default)]
    pub modes: Vec<Mode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SigmaSpec {
    /// Constant left factor `S_0` given as rows; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub diag_modes: Vec<Mode>,
}

/// Declarative description of a coefficient family member.
///
/// JSON: `{"lattice": [[..]], "b": {"const": [..], "modes": [..]},
/// "sigma": {"diag_modes": [..]}}`; each lattice entry is one generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<Vec<Vec<f64>>>,
    pub b: DriftSpec,
    #[serde(default)]
    pub sigma: SigmaSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl CoefficientSpec {
    /// `b ≡ β`, `σ ≡ I` on the unit lattice.
    pub fn constant(beta: Vec<f64>) -> Self {
        Self {
            lattice: None,
            b: DriftSpec { constant: beta, modes: vec![] },
            sigma: SigmaSpec::default(),
            name: Some("constant".into()),
        }
    }

    pub fn build(&self) -> Result<PeriodicCoefficients> {
        PeriodicCoefficients::new(self.clone())
    }
}

#[derive(Debug, Clone)]
struct CompiledMode {
    component: usize,
    k: Vec<f64>,
    amp: f64,
    phase: f64,
}

fn compile(modes: &[Mode], dim: usize) -> Result<Vec<CompiledMode>> {
    modes
        .iter()
        .map(|m| {
            if m.component >= dim || m.k.len() != dim {
                return Err(Error::InvalidCoefficients(format!(
                    "mode {m:?} does not fit dimension {dim}"
                )));
            }
            if !m.amp.is_finite() || !m.phase.is_finite() {
                return Err(Error::InvalidCoefficients("non-finite mode parameter".into()));
            }
            Ok(CompiledMode {
                component: m.component,
                k: m.k.iter().map(|&v| v as f64).collect(),
                amp: m.amp,
                phase: m.phase,
            })
        })
        .collect()
}

/// Λ-periodic drift `b` and matrix field `σ`.
#[derive(Debug, Clone)]
pub struct PeriodicCoefficients {
    spec: CoefficientSpec,
    lattice: Lattice,
    beta: Vec<f64>,
    b_modes: Vec<CompiledMode>,
    s_modes: Vec<CompiledMode>,
    base: Option<Vec<f64>>,
}

impl PeriodicCoefficients {
    pub fn new(spec: CoefficientSpec) -> Result<Self> {
        let dim = spec.b.constant.len();
        if dim == 0 {
            return Err(Error::InvalidCoefficients("b.const must have length d >= 1".into()));
        }
        let lattice = match &spec.lattice {
            Some(g) => Lattice::from_generators(g)?,
            None => Lattice::unit(dim),
        };
        if lattice.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: lattice.dim() });
        }
        let b_modes = compile(&spec.b.modes, dim)?;
        let s_modes = compile(&spec.sigma.diag_modes, dim)?;
        let mut amp_sum = vec![0.0; dim];
        for m in &s_modes {
            amp_sum[m.component] += m.amp.abs();
        }
        if let Some(c) = amp_sum.iter().position(|&s| s > MAX_SIGMA_AMPLITUDE + 1e-15) {
            return Err(Error::InvalidCoefficients(format!(
                "sigma amplitudes of component {c} sum to {} > {MAX_SIGMA_AMPLITUDE}",
                amp_sum[c]
            )));
        }
        let base = match &spec.sigma.base {
            None => None,
            Some(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(Error::InvalidCoefficients("sigma.base must be d x d".into()));
                }
                let m = DMatrix::from_fn(dim, dim, |i, j| rows[i][j]);
                let sv = m.singular_values();
                if !(sv.min() > 0.0 && sv.max() / sv.min() < 1e12) {
                    return Err(Error::SingularSigma(m.determinant().abs()));
                }
                Some(rows.iter().flatten().copied().collect())
            }
        };
        if spec.b.constant.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCoefficients("non-finite drift constant".into()));
        }
        Ok(Self { beta: spec.b.constant.clone(), spec, lattice, b_modes, s_modes, base })
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim()
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn spec(&self) -> &CoefficientSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        self.spec.name.as_deref().unwrap_or("custom")
    }

    /// True when `σ` does not depend on `x`.
    pub fn sigma_is_constant(&self) -> bool {
        self.s_modes.iter().all(|m| m.amp == 0.0)
    }

    pub fn drift_is_constant(&self) -> bool {
        self.b_modes.iter().all(|m| m.amp == 0.0)
    }

    #[inline]
    fn phase_arg(&self, m: &CompiledMode, u: &[f64]) -> f64 {
        TAU * m.k.iter().zip(u).map(|(k, u)| k * u).sum::<f64>() + m.phase
    }

    /// `b(x)` written into `out`.
    #[inline]
    pub fn b_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.beta);
        if self.b_modes.is_empty() {
            return;
        }
        let mut buf = [0.0f64; 8];
        let d = self.dim();
        let mut heap;
        let u: &mut [f64] = if d <= 8 {
            &mut buf[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        self.lattice.to_reduced(x, u);
        for m in &self.b_modes {
            out[m.component] += m.amp * self.phase_arg(m, u).cos();
        }
    }

    /// `σ(x)` in row-major order written into `out` (length `d*d`).
    #[inline]
    pub fn sigma_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let mut diag = [1.0f64; 8];
        let mut heap_diag;
        let diag: &mut [f64] = if d <= 8 {
            &mut diag[..d]
        } else {
            heap_diag = vec![1.0; d];
            &mut heap_diag
        };
        if !self.s_modes.is_empty() {
            let mut buf = [0.0f64; 8];
            let mut heap;
            let u: &mut [f64] = if d <= 8 {
                &mut buf[..d]
            } else {
                heap = vec![0.0; d];
                &mut heap
            };
            self.lattice.to_reduced(x, u);
            for m in &self.s_modes {
                diag[m.component] += m.amp * self.phase_arg(m, u).sin();
            }
        }
        match &self.base {
            None => {
                out.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..d {
                    out[i * d + i] = diag[i];
                }
            }
            Some(s0) => {
                for i in 0..d {
                    for j in 0..d {
                        out[i * d + j] = s0[i * d + j] * diag[j];
                    }
                }
            }
        }
    }

    pub fn eval_b(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.b_into(x, &mut out);
        out
    }

    pub fn eval_sigma(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d * d];
        self.sigma_into(x, &mut out);
        DMatrix::from_row_slice(d, d, &out)
    }
}

/// Grid diagnostics of the coefficient field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellposednessReport {
    pub grid_n: usize,
    pub min_abs_det_sigma: f64,
    pub lipschitz_b: f64,
    /// Lipschitz constant of `x ↦ σ(x) y`, uniform over `|y| = 1`.
    pub lipschitz_sigma: f64,
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// Finite-difference diagnostics on the `grid_n^d` vertex grid `B·(i/grid_n)`.
pub fn check_wellposed(coeffs: &PeriodicCoefficients, grid_n: usize) -> Result<WellposednessReport> {
    if grid_n < 8 {
        return Err(Error::InvalidConfig(format!("grid_n = {grid_n} < 8")));
    }
    let d = coeffs.dim();
    if d > 3 {
        return Err(Error::UnsupportedDimension(d));
    }
    let total = grid_n.pow(d as u32);
    let lat = coeffs.lattice();
    let mut min_det = f64::INFINITY;
    let mut lip_b: f64 = 0.0;
    let mut lip_s: f64 = 0.0;
    let mut u = vec![0.0; d];
    let mut x = vec![0.0; d];
    let mut xs = vec![0.0; d];
    let mut step = vec![0.0; d];
    for idx in 0..total {
        let mut rem = idx;
        for c in u.iter_mut() {
            *c = (rem % grid_n) as f64 / grid_n as f64;
            rem /= grid_n;
        }
        lat.to_physical(&u, &mut x);
        let s = coeffs.eval_sigma(&x);
        min_det = min_det.min(s.determinant().abs());
        let b = coeffs.eval_b(&x);
        for axis in 0..d {
            let mut e = vec![0.0; d];
            e[axis] = 1.0 / grid_n as f64;
            lat.to_physical(&e, &mut step);
            let h = step.iter().map(|v| v * v).sum::<f64>().sqrt();
            for k in 0..d {
                xs[k] = x[k] + step[k];
            }
            let db = coeffs.eval_b(&xs).iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            lip_b = lip_b.max(db / h);
            lip_s = lip_s.max(spectral_norm(&(coeffs.eval_sigma(&xs) - &s)) / h);
        }
    }
    if min_det < 1e-6 {
        return Err(Error::SingularSigma(min_det));
    }
    Ok(WellposednessReport { grid_n, min_abs_det_sigma: min_det, lipschitz_b: lip_b, lipschitz_sigma: lip_s })
}

/// The two-dimensional acceptance family F1:
/// `b = (0.3 + 0.2 cos 2πx₁, 0.1 sin 2πx₂)`,
/// `σ = diag(1 + 0.5 sin 2πx₁, 1 + 0.5 cos 2πx₂)`.
pub fn family_f1() -> CoefficientSpec {
    use std::f64::consts::FRAC_PI_2;
    CoefficientSpec {
        lattice: None,
        b: DriftSpec {
            constant: vec![0.3, 0.0],
            modes: vec![
                Mode { component: 0, k: vec![1, 0], amp: 0.2, phase: 0.0 },
                Mode { component: 1, k: vec![0, 1], amp: 0.1, phase: -FRAC_PI_2 },
            ],
        },
        sigma: SigmaSpec {
            base: None,
            diag_modes: vec![
                Mode { component: 0, k: vec![1, 0], amp: 0.5, phase: 0.0 },
                Mode { component: 1, k: vec![0, 1], amp: 0.5, phase: FRAC_PI_2 },
            ],
        },
        name: Some("F1".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wrap_unit_lattice_examples() {
        let lat = Lattice::unit(2);
        assert_eq!(wrap(&[1.25, -0.5], &lat), vec![0.25, 0.5]);
        assert_eq!(wrap(&[3.0, -2.0], &lat), vec![0.0, 0.0]);
        assert_eq!(wrap_unit(-1e-18), 0.0);
    }

    #[test]
    fn wrap_general_lattice_point_goes_to_origin() {
        let lat = Lattice::from_generators(&[vec![1.0, 0.5], vec![0.2, 2.0]]).unwrap();
        let w = lat.wrap(&[3.0 * 1.0 - 2.0 * 0.2, 3.0 * 0.5 - 2.0 * 2.0]);
        assert!(w.iter().all(|v| v.abs() < 1e-12), "{w:?}");
    }

    proptest! {
        #[test]
        fn wrap_is_idempotent_and_lands_in_domain(
            x in -50.0f64..50.0, y in -50.0f64..50.0,
            a in 0.5f64..2.0, b in -0.5f64..0.5, c in -0.5f64..0.5, d in 0.5f64..2.0
        ) {
            let lat = Lattice::from_generators(&[vec![a, c], vec![b, d]]).unwrap();
            let w = lat.wrap(&[x, y]);
            let mut u = vec![0.0; 2];
            lat.to_reduced(&w, &mut u);
            prop_assert!(u.iter().all(|v| *v >= -1e-12 && *v < 1.0 + 1e-12));
            let ww = lat.wrap(&w);
            prop_assert!((ww[0] - w[0]).abs() < 1e-9 && (ww[1] - w[1]).abs() < 1e-9);
        }

        #[test]
        fn coefficients_are_periodic(
            x in -3.0f64..3.0, y in -3.0f64..3.0, k1 in -20i64..20, k2 in -20i64..20
        ) {
            let c = family_f1().build().unwrap();
            let p = [x, y];
            let q = [x + k1 as f64, y + k2 as f64];
            let (bp, bq) = (c.eval_b(&p), c.eval_b(&q));
            prop_assert!((bp[0] - bq[0]).abs() < 1e-10 && (bp[1] - bq[1]).abs() < 1e-10);
            prop_assert!((c.eval_sigma(&p) - c.eval_sigma(&q)).abs().max() < 1e-10);
            let w = wrap(&p, c.lattice());
            prop_assert!((c.eval_sigma(&w) - c.eval_sigma(&p)).abs().max() < 1e-10);
        }
    }

    #[test]
    fn zero_amplitudes_give_constant_fields() {
        let mut spec = family_f1();
        spec.b.modes.iter_mut().for_each(|m| m.amp = 0.0);
        spec.sigma.diag_modes.iter_mut().for_each(|m| m.amp = 0.0);
        let c = spec.build().unwrap();
        for x in [[0.1, 0.7], [3.3, -1.2]] {
            assert_eq!(c.eval_b(&x), vec![0.3, 0.0]);
            assert_eq!(c.eval_sigma(&x), DMatrix::identity(2, 2));
        }
    }

    #[test]
    fn one_dimensional_sine_drift() {
        let spec = CoefficientSpec {
            lattice: None,
            b: DriftSpec {
                constant: vec![0.0],
                modes: vec![Mode { component: 0, k: vec![1], amp: 1.0, phase: -std::f64::consts::FRAC_PI_2 }],
            },
            sigma: SigmaSpec::default(),
            name: None,
        };
        let c = spec.build().unwrap();
        assert!((c.eval_b(&[0.25])[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn f1_matches_closed_form() {
        let c = family_f1().build().unwrap();
        let x = [0.17, 0.83];
        let b = c.eval_b(&x);
        assert!((b[0] - (0.3 + 0.2 * (TAU * 0.17).cos())).abs() < 1e-15);
        assert!((b[1] - 0.1 * (TAU * 0.83).sin()).abs() < 1e-15);
        let s = c.eval_sigma(&x);
        assert!((s[(0, 0)] - (1.0 + 0.5 * (TAU * 0.17).sin())).abs() < 1e-15);
        assert!((s[(1, 1)] - (1.0 + 0.5 * (TAU * 0.83).cos())).abs() < 1e-15);
        assert_eq!(s[(0, 1)], 0.0);
    }

    fn sigma_one_axis(amp: f64) -> CoefficientSpec {
        CoefficientSpec {
            lattice: None,
            b: DriftSpec { constant: vec![0.0, 0.0], modes: vec![] },
            sigma: SigmaSpec {
                base: None,
                diag_modes: vec![Mode { component: 0, k: vec![1, 0], amp, phase: 0.0 }],
            },
            name: None,
        }
    }

    #[test]
    fn wellposed_min_det_on_vertex_grid() {
        let c = sigma_one_axis(0.5).build().unwrap();
        let r = check_wellposed(&c, 64).unwrap();
        assert!((r.min_abs_det_sigma - 0.5).abs() < 1e-12);
        // refinement can only lower the minimum on nested grids
        let r2 = check_wellposed(&c, 128).unwrap();
        assert!(r2.min_abs_det_sigma <= r.min_abs_det_sigma + 1e-8);
        // Lipschitz constant of 0.5 sin(2πx) is π; forward differences approach it from below
        assert!(r.lipschitz_sigma <= std::f64::consts::PI + 1e-9 && r.lipschitz_sigma > 3.1);
    }

    #[test]
    fn wellposed_identity() {
        let c = CoefficientSpec::constant(vec![0.0, 0.0]).build().unwrap();
        let r = check_wellposed(&c, 8).unwrap();
        assert_eq!(r.min_abs_det_sigma, 1.0);
        assert_eq!(r.lipschitz_sigma, 0.0);
        assert_eq!(r.lipschitz_b, 0.0);
        assert!(check_wellposed(&c, 4).is_err());
    }

    #[test]
    fn rejects_large_sigma_amplitude() {
        assert!(matches!(sigma_one_axis(1.0).build(), Err(Error::InvalidCoefficients(_))));
        assert!(sigma_one_axis(0.9).build().is_ok());
    }

    #[test]
    fn json_schema_round_trip() {
        let spec = family_f1();
        let js = serde_json::to_string(&spec).unwrap();
        assert!(js.contains("\"const\"") && js.contains("\"diag_modes\""));
        let back: CoefficientSpec = serde_json::from_str(&js).unwrap();
        assert_eq!(back, spec);
        let minimal = r#"{"lattice": [[1, 0], [0, 1]], "b": {"const": [0.1, 0], "modes": []}, "sigma": {"diag_modes": []}}"#;
        let c: CoefficientSpec = serde_json::from_str(minimal).unwrap();
        assert!(c.build().unwrap().lattice().is_unit());
    }
}
