//! Predictable quadratic variation of the corrector martingale
//!
//! ```text
//! K^{(n)}_t = n^{-1/α} ∫_0^{nt}∫ [ψ(X_{s-} + σ y) - ψ(X_{s-})] Ñ(dy, ds)
//! ⟨K^{(n)}⟩_t = ∫_0^{nt} J_n(X_s) ds,
//! J_n(x) = ∫ |h(n^{-1/α}(ψ(x + σ(x)y) - ψ(x)))|² ν(dy),   h(z) = z 1_{|z|<1}.
//! ```
//!
//! `J_n` is tabulated on the corrector grid with the generator's radial
//! quadrature and interpolated along simulated paths.

use serde::{Deserialize, Serialize};

use super::{atom_radii, radial_shells, CorrectorField, GeneratorOptions};
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::rng::derive_seed;
use crate::sim::{collect_results, drive, par_indexed, Model, SimConfig};
use crate::stats::{linear_fit, LinearFit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QvPoint {
    pub n: u64,
    /// `(t', mean QV up to t')` for `t' = t/4, t/2, 3t/4, t`.
    pub curve: Vec<(f64, f64)>,
    pub qv: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QvReport {
    pub t: f64,
    pub points: Vec<QvPoint>,
    pub slope: Option<LinearFit>,
    pub expected_slope: f64,
}

#[inline]
fn h_sq(z: &[f64]) -> f64 {
    let n2: f64 = z.iter().map(|v| v * v).sum();
    if n2 < 1.0 {
        n2
    } else {
        0.0
    }
}

/// Tabulates `J_n` at the cell centers of the corrector grid.
pub fn jump_qv_density(model: &Model, psi: &CorrectorField, n: u64, opts: &GeneratorOptions) -> GridFunction {
    let grid = psi.grid().clone();
    let d = grid.dim();
    let m = grid.m();
    let mf = m as f64;
    let a = model.alpha.value();
    let nc = psi.dim();
    let scale = (n as f64).powf(-1.0 / a);
    let lat = grid.lattice().clone();
    let len = grid.len();
    let values = par_indexed(len, |i| {
        let x = grid.center(i);
        let mut u = vec![0.0; d];
        grid.center_reduced(i, &mut u);
        let psi_x: Vec<f64> = psi.components.iter().map(|c| c.values[i]).collect();
        let mut mi = [0usize; 3];
        grid.multi_index(i, &mut mi[..d]);
        // reduced-coordinate gradient of every component
        let mut grad = vec![0.0; nc * d];
        for k in 0..d {
            let mut up = mi;
            let mut dn = mi;
            up[k] = (mi[k] + 1) % m;
            dn[k] = (mi[k] + m - 1) % m;
            let (iu, id) = (grid.flat_index(&up[..d]), grid.flat_index(&dn[..d]));
            for (c, comp) in psi.components.iter().enumerate() {
                grad[c * d + k] = 0.5 * mf * (comp.values[iu] - comp.values[id]);
            }
        }
        let mut sig = vec![0.0; d * d];
        model.coeffs.sigma_into(&x, &mut sig);
        let mut v = vec![0.0; d];
        let mut vt = vec![0.0; d];
        let mut p = vec![0.0; d];
        let mut dpsi = vec![0.0; nc];
        let mut total = 0.0;
        for atom in model.mu.atoms() {
            for r in 0..d {
                v[r] = (0..d).map(|c| sig[r * d + c] * atom.dir[c]).sum();
            }
            lat.reduce_displacement(&v, &mut vt);
            let vinf = vt.iter().fold(0.0f64, |s, x| s.max(x.abs()));
            let (r_min, r_max) = atom_radii(vinf, m, model.alpha, opts);
            for c in 0..nc {
                dpsi[c] = scale * (0..d).map(|k| grad[c * d + k] * vt[k]).sum::<f64>();
            }
            // |h(r Dψ v)|² = r² |Dψ v|² on the core when r_min |Dψ v| < 1
            let g2: f64 = dpsi.iter().map(|z| z * z).sum();
            if g2 * r_min * r_min < 1.0 {
                total += atom.weight * g2 * r_min.powf(2.0 - a) / (2.0 - a);
            }
            for s in radial_shells(atom.weight, a, r_min, r_max, opts.shell_ratio, 1.0 / (mf * vinf)) {
                for k in 0..d {
                    p[k] = u[k] + s.node * vt[k];
                }
                for (c, comp) in psi.components.iter().enumerate() {
                    dpsi[c] = scale * (comp.interpolate_reduced(&p) - psi_x[c]);
                }
                total += s.mass * h_sq(&dpsi);
            }
            let tail_mass = atom.weight * r_max.powf(-a) / a;
            let mut mean_field = 0.0;
            for j in 0..len {
                for (c, comp) in psi.components.iter().enumerate() {
                    dpsi[c] = scale * (comp.values[j] - psi_x[c]);
                }
                mean_field += h_sq(&dpsi);
            }
            total += tail_mass * mean_field / len as f64;
        }
        total
    });
    GridFunction { grid, values }
}

/// Mean `⟨K^{(n)}⟩_t` over `n_paths` paths from `cfg.x0`, shared across `n`.
pub fn k_martingale_qv(
    model: &Model,
    cfg: &SimConfig,
    psi: &CorrectorField,
    ns: &[u64],
    t: f64,
    n_paths: usize,
    opts: &GeneratorOptions,
) -> Result<QvReport> {
    if ns.is_empty() || n_paths < 2 || !(t > 0.0) {
        return Err(Error::InvalidConfig("QV needs n values, t > 0 and at least two paths".into()));
    }
    let densities: Vec<GridFunction> = ns.iter().map(|&n| jump_qv_density(model, psi, n, opts)).collect();
    let n_max = *ns.iter().max().expect("nonempty");
    let run = SimConfig { horizon: n_max as f64 * t, ..cfg.clone() };
    run.validate(model.dim())?;
    let n_steps = run.n_steps();
    let checkpoints = [0.25, 0.5, 0.75, 1.0];
    let nn = ns.len();
    let results = par_indexed(n_paths, |i| {
        let mut acc = vec![0.0; nn * checkpoints.len()];
        drive(model, &run, &run.x0, derive_seed(run.seed, i as u64), &mut |k: usize, s: f64, _x: &[f64], w: &[f64]| {
            if k >= n_steps {
                return;
            }
            let h = run.grid_time(k + 1) - s;
            for (j, (&n, dens)) in ns.iter().zip(&densities).enumerate() {
                let end = n as f64 * t;
                if s >= end - 1e-12 {
                    continue;
                }
                let val = dens.interpolate(w) * h;
                for (c, frac) in checkpoints.iter().enumerate() {
                    if s < frac * end - 1e-12 {
                        acc[j * checkpoints.len() + c] += val;
                    }
                }
            }
        })
        .map(|_| acc)
    });
    let (vals, _) = collect_results(results)?;
    let np = vals.len() as f64;
    let mut points = Vec::with_capacity(nn);
    for (j, &n) in ns.iter().enumerate() {
        let col = |c: usize| vals.iter().map(move |v| v[j * checkpoints.len() + c]);
        let curve: Vec<(f64, f64)> =
            checkpoints.iter().enumerate().map(|(c, f)| (f * t, col(c).sum::<f64>() / np)).collect();
        let last = checkpoints.len() - 1;
        let qv = curve[last].1;
        let var = col(last).map(|v| (v - qv).powi(2)).sum::<f64>() / (np - 1.0);
        points.push(QvPoint { n, curve, qv, stderr: (var / np).sqrt() });
    }
    let slope = if points.len() >= 2 && points.iter().all(|p| p.qv > 0.0) {
        let x: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
        let y: Vec<f64> = points.iter().map(|p| p.qv.ln()).collect();
        Some(linear_fit(&x, &y)?)
    } else {
        None
    };
    Ok(QvReport { t, points, slope, expected_slope: 1.0 - 2.0 / model.alpha.value() })
}
