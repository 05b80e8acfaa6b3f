//! Discrete generator on the torus, Poisson solvers and the corrector
//! martingale diagnostic.
//!
//! For a symmetric spectral measure the jump part of the generator is
//!
//! ```text
//! Σ_k λ_k ∫_0^∞ [u(x + r σ(x)φ_k) - u(x)] r^{-1-α} dr     (principal value)
//! ```
//!
//! where the gradient compensator cancels between `±φ_k`. Per atom the
//! radial integral is split in three:
//!
//! * core `r < r_min`: second-order Taylor term `½ λ vᵀHv r_min^{2-α}/(2-α)`
//!   with a central-difference Hessian, `v = σ(x)φ`;
//! * shells `r_min ≤ r ≤ r_max`: one node per radial shell carrying the exact
//!   ν-mass of the shell, off-grid values by periodic multilinear
//!   interpolation;
//! * tail `r > r_max`: mean-field closure `λ r_max^{-α}/α (ū - u(x))` with `ū`
//!   the cell average, which adds a rank-one dense term.
//!
//! The drift part uses central differences. All differences act on reduced
//! coordinates `u = B^{-1}x`.

mod mc;
mod qv;

pub use mc::{solve_poisson_mc, McSettings};
pub use qv::{k_martingale_qv, QvPoint, QvReport};

use std::f64::consts::TAU;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ergodic::{InvariantEstimate, InvariantMethod, TorusHistogram};
use crate::grid::{GridFunction, GridSpec, TorusGrid};
use crate::linalg::gmres;
use crate::periodic::PeriodicCoefficients;
use crate::stable::{SpectralMeasure, StabilityIndex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorOptions {
    /// Core radius in units of grid cells along the dominant axis of `σφ`.
    pub core_cells: f64,
    /// Fixed core radius overriding `core_cells`.
    pub r_min: Option<f64>,
    /// Fixed tail radius overriding the automatic choice.
    pub r_max: Option<f64>,
    /// Relative error budget of core and tail at the fundamental frequency.
    pub tol: f64,
    /// Geometric growth of the radial shells.
    pub shell_ratio: f64,
    pub include_drift: bool,
    pub include_jumps: bool,
}

impl Default for GeneratorOptions {
    fn default() -> Self {
        Self {
            core_cells: 2.0,
            r_min: None,
            r_max: None,
            tol: 1e-3,
            shell_ratio: 1.25,
            include_drift: true,
            include_jumps: true,
        }
    }
}

/// One radial shell `[a, b]` with node `r` and ν-mass `λ ∫_a^b r^{-1-α} dr`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shell {
    pub a: f64,
    pub b: f64,
    pub node: f64,
    pub mass: f64,
}

/// Shells covering `[r_min, r_max]`: geometric with ratio `q` until the width
/// reaches `max_width`, uniform after. Nodes match the second moment of the
/// shell so that quadratic integrands are integrated exactly.
pub fn radial_shells(lambda: f64, alpha: f64, r_min: f64, r_max: f64, q: f64, max_width: f64) -> Vec<Shell> {
    let mut out = Vec::new();
    let mut a = r_min;
    while a < r_max * (1.0 - 1e-14) {
        let b = (a * q).min(a + max_width).min(r_max);
        let m0 = (a.powf(-alpha) - b.powf(-alpha)) / alpha;
        let m2 = (b.powf(2.0 - alpha) - a.powf(2.0 - alpha)) / (2.0 - alpha);
        out.push(Shell { a, b, node: (m2 / m0).sqrt(), mass: lambda * m0 });
        a = b;
    }
    out
}

/// Relative error estimates of the core surrogate and the tail closure for
/// one atom at angular frequency `omega`.
fn core_tail_errors(omega: f64, r_min: f64, r_max: f64, alpha: f64, c_alpha: f64) -> (f64, f64) {
    let core = (omega * r_min).powf(4.0 - alpha) / (24.0 * c_alpha * (4.0 - alpha));
    let tail = 2.0 / (c_alpha * (omega * r_max).powf(1.0 + alpha));
    (core, tail)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureReport {
    pub nnz: usize,
    pub max_core_rel_error: f64,
    pub max_tail_rel_error: f64,
    pub min_r_min: f64,
    pub max_r_max: f64,
    pub max_shells: usize,
}

/// Sparse-plus-rank-one operator `A_h u = S u + c · mean(u)`.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    pub grid: TorusGrid,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    dense: Vec<f64>,
    pub report: QuadratureReport,
}

struct RowOut {
    entries: Vec<(u32, f64)>,
    dense: f64,
    core_err: f64,
    tail_err: f64,
    r_min: f64,
    r_max: f64,
    shells: usize,
}

struct Scratch {
    acc: Vec<f64>,
    seen: Vec<bool>,
    touched: Vec<usize>,
}

impl Scratch {
    fn add(&mut self, j: usize, v: f64) {
        if !self.seen[j] {
            self.seen[j] = true;
            self.touched.push(j);
        }
        self.acc[j] += v;
    }
}

/// Per-row radii of one atom.
pub(crate) fn atom_radii(v_red_inf: f64, m: usize, alpha: StabilityIndex, opts: &GeneratorOptions) -> (f64, f64) {
    let a = alpha.value();
    let c = alpha.c_alpha();
    let omega = TAU * v_red_inf;
    let r_min = opts.r_min.unwrap_or_else(|| {
        let cells = opts.core_cells / (m as f64 * v_red_inf);
        let exact = (24.0 * c * (4.0 - a) * opts.tol).powf(1.0 / (4.0 - a)) / omega;
        cells.min(exact)
    });
    let r_max = opts.r_max.unwrap_or_else(|| (2.0 / (c * opts.tol)).powf(1.0 / (1.0 + a)) / omega);
    (r_min, r_max.max(r_min))
}

pub fn discretize_generator(
    coeffs: &PeriodicCoefficients,
    mu: &SpectralMeasure,
    alpha: StabilityIndex,
    m: usize,
    opts: &GeneratorOptions,
) -> Result<GeneratorMatrix> {
    let d = coeffs.dim();
    if d != mu.dim() {
        return Err(Error::DimensionMismatch { expected: d, got: mu.dim() });
    }
    if !m.is_power_of_two() || m < 4 {
        return Err(Error::InvalidConfig(format!("grid resolution {m} must be a power of two >= 4")));
    }
    let grid = TorusGrid::new(coeffs.lattice().clone(), m)?;
    let n = grid.len();
    let a = alpha.value();
    let lat = coeffs.lattice();
    let mf = m as f64;

    let rows: Vec<RowOut> = (0..n)
        .into_par_iter()
        .map_init(
            || Scratch { acc: vec![0.0; n], seen: vec![false; n], touched: Vec::new() },
            |sc, i| {
                let mut mi = [0usize; 3];
                grid.multi_index(i, &mut mi[..d]);
                let neighbor = |offs: &[i64]| -> usize {
                    let mut idx = [0usize; 3];
                    for k in 0..d {
                        idx[k] = ((mi[k] as i64 + offs[k]).rem_euclid(m as i64)) as usize;
                    }
                    grid.flat_index(&idx[..d])
                };
                let x = grid.center(i);
                let mut u = vec![0.0; d];
                grid.center_reduced(i, &mut u);
                let mut out = RowOut {
                    entries: Vec::new(),
                    dense: 0.0,
                    core_err: 0.0,
                    tail_err: 0.0,
                    r_min: f64::INFINITY,
                    r_max: 0.0,
                    shells: 0,
                };
                let mut diag = 0.0;
                if opts.include_drift {
                    let b = coeffs.eval_b(&x);
                    let mut bt = vec![0.0; d];
                    lat.reduce_displacement(&b, &mut bt);
                    for k in 0..d {
                        let mut e = [0i64; 3];
                        e[k] = 1;
                        sc.add(neighbor(&e[..d]), 0.5 * mf * bt[k]);
                        e[k] = -1;
                        sc.add(neighbor(&e[..d]), -0.5 * mf * bt[k]);
                    }
                }
                if opts.include_jumps {
                    let mut sig = vec![0.0; d * d];
                    coeffs.sigma_into(&x, &mut sig);
                    let mut v = vec![0.0; d];
                    let mut vt = vec![0.0; d];
                    let mut p = vec![0.0; d];
                    for atom in mu.atoms() {
                        for r in 0..d {
                            v[r] = (0..d).map(|c| sig[r * d + c] * atom.dir[c]).sum();
                        }
                        lat.reduce_displacement(&v, &mut vt);
                        let vinf = vt.iter().fold(0.0f64, |s, x| s.max(x.abs()));
                        let (r_min, r_max) = atom_radii(vinf, m, alpha, opts);
                        let (ce, te) = core_tail_errors(TAU * vinf, r_min, r_max, a, alpha.c_alpha());
                        out.core_err = out.core_err.max(ce);
                        out.tail_err = out.tail_err.max(te);
                        out.r_min = out.r_min.min(r_min);
                        out.r_max = out.r_max.max(r_max);
                        // core: ½ λ vᵀHv r_min^{2-α}/(2-α), Hessian in reduced coordinates
                        let kc = 0.5 * atom.weight * r_min.powf(2.0 - a) / (2.0 - a) * mf * mf;
                        for k in 0..d {
                            let mut e = [0i64; 3];
                            let ck = kc * vt[k] * vt[k];
                            e[k] = 1;
                            sc.add(neighbor(&e[..d]), ck);
                            e[k] = -1;
                            sc.add(neighbor(&e[..d]), ck);
                            diag -= 2.0 * ck;
                            for l in k + 1..d {
                                let cl = kc * 2.0 * vt[k] * vt[l] / 4.0;
                                let mut e = [0i64; 3];
                                for (sk, sl, s) in [(1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)] {
                                    e[k] = sk;
                                    e[l] = sl;
                                    sc.add(neighbor(&e[..d]), s * cl);
                                }
                            }
                        }
                        let shells = radial_shells(atom.weight, a, r_min, r_max, opts.shell_ratio, 1.0 / (mf * vinf));
                        out.shells = out.shells.max(shells.len());
                        for s in &shells {
                            for k in 0..d {
                                p[k] = u[k] + s.node * vt[k];
                            }
                            grid.interp_weights(&p, |j, w| sc.add(j, s.mass * w));
                            diag -= s.mass;
                        }
                        let tail = atom.weight * r_max.powf(-a) / a;
                        diag -= tail;
                        out.dense += tail;
                    }
                }
                sc.add(i, diag);
                sc.touched.sort_unstable();
                out.entries = sc.touched.iter().map(|&j| (j as u32, sc.acc[j])).collect();
                for &j in &sc.touched {
                    sc.acc[j] = 0.0;
                    sc.seen[j] = false;
                }
                sc.touched.clear();
                out
            },
        )
        .collect();

    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    let nnz: usize = rows.iter().map(|r| r.entries.len()).sum();
    let mut cols = Vec::with_capacity(nnz);
    let mut vals = Vec::with_capacity(nnz);
    let mut dense = Vec::with_capacity(n);
    let mut report = QuadratureReport {
        nnz,
        max_core_rel_error: 0.0,
        max_tail_rel_error: 0.0,
        min_r_min: f64::INFINITY,
        max_r_max: 0.0,
        max_shells: 0,
    };
    for r in rows {
        for (c, v) in r.entries {
            cols.push(c);
            vals.push(v);
        }
        row_ptr.push(cols.len());
        dense.push(r.dense);
        report.max_core_rel_error = report.max_core_rel_error.max(r.core_err);
        report.max_tail_rel_error = report.max_tail_rel_error.max(r.tail_err);
        report.min_r_min = report.min_r_min.min(r.r_min);
        report.max_r_max = report.max_r_max.max(r.r_max);
        report.max_shells = report.max_shells.max(r.shells);
    }
    if opts.include_jumps && (report.max_core_rel_error > opts.tol || report.max_tail_rel_error > opts.tol) {
        return Err(Error::QuadratureUnderResolved(format!(
            "core error {:.2e}, tail error {:.2e} exceed {:.0e} at the fundamental frequency",
            report.max_core_rel_error, report.max_tail_rel_error, opts.tol
        )));
    }
    Ok(GeneratorMatrix { grid, row_ptr, cols, vals, dense, report })
}

impl GeneratorMatrix {
    pub fn len(&self) -> usize {
        self.dense.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dense.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `out = A_h u`.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        let mean = u.iter().sum::<f64>() / u.len() as f64;
        for (i, o) in out.iter_mut().enumerate() {
            let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let mut acc = self.dense[i] * mean;
            for k in s..e {
                acc += self.vals[k] * u[self.cols[k] as usize];
            }
            *o = acc;
        }
    }

    /// `out = A_hᵀ v`.
    pub fn apply_transpose(&self, v: &[f64], out: &mut [f64]) {
        let n = self.len();
        let c = self.dense.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        out.iter_mut().for_each(|o| *o = c);
        for i in 0..n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[self.cols[k] as usize] += self.vals[k] * v[i];
            }
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let d = (self.row_ptr[i]..self.row_ptr[i + 1])
                    .find(|&k| self.cols[k] as usize == i)
                    .map_or(0.0, |k| self.vals[k]);
                d + self.dense[i] / n as f64
            })
            .collect()
    }

    pub fn apply_fn(&self, u: &GridFunction) -> GridFunction {
        let mut out = vec![0.0; self.len()];
        self.apply(&u.values, &mut out);
        GridFunction { grid: self.grid.clone(), values: out }
    }

    /// Discrete invariant density: `A_hᵀ π = 0`, `Σ π = 1`.
    pub fn stationary(&self, tol: f64) -> Result<Vec<f64>> {
        let n = self.len();
        let mut diag = self.diagonal();
        diag.push(1.0);
        let mut rhs = vec![0.0; n + 1];
        rhs[n] = 1.0;
        let mut x = vec![1.0 / n as f64; n + 1];
        x[n] = 0.0;
        let mut tmp = vec![0.0; n];
        let info = gmres(
            |v: &[f64], out: &mut [f64]| {
                self.apply_transpose(&v[..n], &mut tmp);
                for i in 0..n {
                    out[i] = tmp[i] + v[n];
                }
                out[n] = v[..n].iter().sum();
            },
            &diag,
            &rhs,
            &mut x,
            tol,
            200,
            20_000,
        );
        if !info.converged {
            return Err(Error::SolverDivergence { residual: info.residual, iterations: info.iterations });
        }
        x.truncate(n);
        Ok(x)
    }

    /// [`Self::stationary`] packaged as an invariant estimate on the same grid.
    pub fn invariant_estimate(&self, tol: f64) -> Result<InvariantEstimate> {
        let pi = self.stationary(tol)?;
        let counts = pi.iter().map(|p| p.max(0.0)).collect();
        Ok(InvariantEstimate {
            histogram: TorusHistogram::from_counts(self.grid.clone(), counts)?,
            method: InvariantMethod::Generator,
            burn_in: 0.0,
            diagnostics: Default::default(),
        })
    }
}

/// Solution of `A_h ψ = f` with `Σ π_h ψ = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonSolution {
    pub psi: GridFunction,
    pub residual_inf: f64,
    pub mean: f64,
    pub iterations: usize,
}

/// Solves the bordered system `[A_h 1; π_hᵀ 0][ψ; c] = [f; 0]`.
pub fn solve_poisson(genmat: &GeneratorMatrix, pi_h: &[f64], f: &GridFunction, tol: f64) -> Result<PoissonSolution> {
    let n = genmat.len();
    if f.values.len() != n || pi_h.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: f.values.len() });
    }
    let fbar: f64 = pi_h.iter().zip(&f.values).map(|(a, b)| a * b).sum();
    if fbar.abs() > 1e-6 {
        return Err(Error::NotCentered(fbar));
    }
    let mut diag = genmat.diagonal();
    diag.push(1.0);
    let mut rhs = f.values.clone();
    rhs.push(0.0);
    let mut x = vec![0.0; n + 1];
    let mut tmp = vec![0.0; n];
    let bordered = |v: &[f64], out: &mut [f64], tmp: &mut [f64]| {
        genmat.apply(&v[..n], tmp);
        for i in 0..n {
            out[i] = tmp[i] + v[n];
        }
        out[n] = pi_h.iter().zip(&v[..n]).map(|(a, b)| a * b).sum();
    };
    // the 2-norm target leaves room for the ∞-norm check below
    let target = tol / (n as f64).sqrt().max(1.0) * 0.5;
    let mut iterations = 0;
    let mut residual_inf = f64::INFINITY;
    for _ in 0..10 {
        let info = gmres(|v, out| bordered(v, out, &mut tmp), &diag, &rhs, &mut x, target, 300, 30_000);
        iterations += info.iterations;
        let mut r = vec![0.0; n];
        genmat.apply(&x[..n], &mut r);
        residual_inf = r.iter().zip(&f.values).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if residual_inf <= tol {
            break;
        }
        if !info.converged && info.iterations == 0 {
            break;
        }
    }
    if !(residual_inf <= tol) {
        return Err(Error::SolverDivergence { residual: residual_inf, iterations });
    }
    x.truncate(n);
    let mean = pi_h.iter().zip(&x).map(|(a, b)| a * b).sum();
    Ok(PoissonSolution { psi: GridFunction { grid: genmat.grid.clone(), values: x }, residual_inf, mean, iterations })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectorMethod {
    Pde,
    MonteCarlo,
}

/// Vector corrector `ψ` solving `A ψ = b - Π(b)` componentwise.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectorField {
    pub method: CorrectorMethod,
    pub components: Vec<GridFunction>,
    /// `‖A_h ψ - f‖_∞` over components (PDE method).
    pub residual_inf: f64,
    /// `Π_h(ψ)` per component.
    pub mean: Vec<f64>,
    /// `Π_h(b)` used for centering.
    pub mean_drift: Vec<f64>,
    /// Largest per-cell standard error (Monte Carlo method).
    pub stat_error: Option<f64>,
    /// Bound on the time-truncation error (Monte Carlo method).
    pub truncation_bound: Option<f64>,
    pub iterations: usize,
}

impl CorrectorField {
    pub fn grid(&self) -> &TorusGrid {
        &self.components[0].grid
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn sup_norm(&self) -> f64 {
        self.components.iter().map(|c| c.sup_norm()).fold(0.0, f64::max)
    }

    /// `ψ(x)` by periodic interpolation.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.grid().dim();
        let mut u = [0.0; 3];
        self.grid().lattice().to_reduced(x, &mut u[..d]);
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.interpolate_reduced(&u[..d]);
        }
    }

    pub fn zero(grid: TorusGrid, dim: usize, method: CorrectorMethod) -> Self {
        Self {
            method,
            components: (0..dim).map(|_| GridFunction::constant(grid.clone(), 0.0)).collect(),
            residual_inf: 0.0,
            mean: vec![0.0; dim],
            mean_drift: vec![0.0; dim],
            stat_error: None,
            truncation_bound: None,
            iterations: 0,
        }
    }

    /// `cell,c0..,psi0..` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let g = self.grid();
        let d = g.dim();
        let mut header = String::from("cell");
        for k in 0..d {
            header.push_str(&format!(",c{k}"));
        }
        for k in 0..self.dim() {
            header.push_str(&format!(",psi{k}"));
        }
        writeln!(w, "{header}")?;
        for i in 0..g.len() {
            let mut line = format!("{i}");
            for c in g.center(i) {
                line.push_str(&format!(",{c}"));
            }
            for comp in &self.components {
                line.push_str(&format!(",{:e}", comp.values[i]));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(CorrectorFile {
            method: self.method,
            grid: GridSpec::from(self.grid()),
            residual_inf: self.residual_inf,
            mean: self.mean.clone(),
            mean_drift: self.mean_drift.clone(),
            stat_error: self.stat_error,
            truncation_bound: self.truncation_bound,
            iterations: self.iterations,
            psi: self.components.iter().map(|c| c.values.clone()).collect(),
        })?)
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let f: CorrectorFile = serde_json::from_value(v.clone())?;
        let grid = TorusGrid::try_from(&f.grid)?;
        let components = f
            .psi
            .into_iter()
            .map(|vals| GridFunction::new(grid.clone(), vals))
            .collect::<Result<Vec<_>>>()?;
        if components.is_empty() {
            return Err(Error::Format("corrector without components".into()));
        }
        Ok(Self {
            method: f.method,
            components,
            residual_inf: f.residual_inf,
            mean: f.mean,
            mean_drift: f.mean_drift,
            stat_error: f.stat_error,
            truncation_bound: f.truncation_bound,
            iterations: f.iterations,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CorrectorFile {
    method: CorrectorMethod,
    grid: GridSpec,
    residual_inf: f64,
    mean: Vec<f64>,
    mean_drift: Vec<f64>,
    stat_error: Option<f64>,
    truncation_bound: Option<f64>,
    iterations: usize,
    psi: Vec<Vec<f64>>,
}

/// PDE corrector: `π_h` from the discrete generator, `f = b - Π_h(b)`,
/// one bordered solve per component.
pub fn pde_corrector(genmat: &GeneratorMatrix, coeffs: &PeriodicCoefficients, tol: f64) -> Result<(CorrectorField, Vec<f64>)> {
    let pi_h = genmat.stationary(1e-13)?;
    let g = genmat.grid.clone();
    let d = coeffs.dim();
    let centers = g.centers();
    let b: Vec<Vec<f64>> = centers.iter().map(|x| coeffs.eval_b(x)).collect();
    let mean_drift: Vec<f64> = (0..d).map(|k| b.iter().zip(&pi_h).map(|(bx, p)| bx[k] * p).sum()).collect();
    let mut comps = Vec::with_capacity(d);
    let mut residual: f64 = 0.0;
    let mut means = Vec::with_capacity(d);
    let mut iterations = 0;
    for k in 0..d {
        let f = GridFunction { grid: g.clone(), values: b.iter().map(|bx| bx[k] - mean_drift[k]).collect() };
        if f.sup_norm() < 1e-14 {
            comps.push(GridFunction::constant(g.clone(), 0.0));
            means.push(0.0);
            continue;
        }
        let sol = solve_poisson(genmat, &pi_h, &f, tol)?;
        residual = residual.max(sol.residual_inf);
        iterations += sol.iterations;
        means.push(sol.mean);
        comps.push(sol.psi);
    }
    Ok((
        CorrectorField {
            method: CorrectorMethod::Pde,
            components: comps,
            residual_inf: residual,
            mean: means,
            mean_drift,
            stat_error: None,
            truncation_bound: None,
            iterations,
        },
        pi_h,
    ))
}
