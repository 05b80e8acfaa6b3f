//! Monte Carlo corrector `ψ(x) = -∫_0^T E f(X_s^x) ds`.
//!
//! With the generator sign `A u = ⟨b,∇u⟩ + ∫[u(x+σy) - u(x) - …]ν(dy)` one
//! has `A ∫_0^∞ S_s f ds = -f`, hence the minus sign.

use serde::{Deserialize, Serialize};

use super::{CorrectorField, CorrectorMethod};
use crate::error::{Error, Result};
use crate::ergodic::MixingEstimate;
use crate::grid::{GridFunction, TorusGrid};
use crate::rng::derive_seed;
use crate::sim::{drive, par_indexed, Model, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSettings {
    pub horizon: f64,
    pub paths_per_cell: usize,
    pub m: usize,
}

/// `f` is written into its output slice at the wrapped state; `n_comp` is the
/// number of components. `pi` (cell weights on the same grid) sets the
/// reported mean, uniform weights when absent.
pub fn solve_poisson_mc(
    model: &Model,
    cfg: &SimConfig,
    f: &(dyn Fn(&[f64], &mut [f64]) + Sync),
    n_comp: usize,
    settings: &McSettings,
    mixing: Option<&MixingEstimate>,
    pi: Option<&[f64]>,
) -> Result<CorrectorField> {
    if settings.paths_per_cell < 2 {
        return Err(Error::InvalidConfig("need at least two paths per cell".into()));
    }
    if let Some(mx) = mixing {
        if settings.horizon < 5.0 / mx.gamma {
            return Err(Error::InvalidConfig(format!(
                "horizon {} below 5/gamma = {}",
                settings.horizon,
                5.0 / mx.gamma
            )));
        }
    }
    let grid = TorusGrid::new(model.coeffs.lattice().clone(), settings.m)?;
    let run = SimConfig { horizon: settings.horizon, ..cfg.clone() };
    run.validate(model.dim())?;
    let n_steps = run.n_steps();
    let n = settings.paths_per_cell;
    let cells = par_indexed(grid.len(), |cell| -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let x0 = grid.center(cell);
        let cell_seed = derive_seed(run.seed, cell as u64);
        let mut sum = vec![0.0; n_comp];
        let mut sum2 = vec![0.0; n_comp];
        let mut fx = vec![0.0; n_comp];
        let mut fmax: f64 = 0.0;
        let mut ok = 0usize;
        for j in 0..n {
            let mut acc = vec![0.0; n_comp];
            let res = drive(model, &run, &x0, derive_seed(cell_seed, j as u64), &mut |k: usize, s: f64, _x: &[f64], w: &[f64]| {
                if k < n_steps {
                    f(w, &mut fx);
                    let h = run.grid_time(k + 1) - s;
                    for c in 0..n_comp {
                        acc[c] -= fx[c] * h;
                        fmax = fmax.max(fx[c].abs());
                    }
                }
            });
            if res.is_ok() {
                ok += 1;
                for c in 0..n_comp {
                    sum[c] += acc[c];
                    sum2[c] += acc[c] * acc[c];
                }
            }
        }
        if ok * 100 < n * 99 {
            return Err(Error::EnsembleFailure { failed: n - ok, total: n });
        }
        let okf = ok as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / okf).collect();
        let se: Vec<f64> = (0..n_comp)
            .map(|c| ((sum2[c] / okf - mean[c] * mean[c]).max(0.0) / (okf - 1.0)).sqrt())
            .collect();
        Ok((mean, se, fmax))
    });
    let cells = cells.into_iter().collect::<Result<Vec<_>>>()?;
    let len = grid.len();
    let weights: Vec<f64> = match pi {
        Some(p) if p.len() == len => p.to_vec(),
        Some(p) => return Err(Error::DimensionMismatch { expected: len, got: p.len() }),
        None => vec![1.0 / len as f64; len],
    };
    let components: Vec<GridFunction> = (0..n_comp)
        .map(|c| GridFunction { grid: grid.clone(), values: cells.iter().map(|(m, _, _)| m[c]).collect() })
        .collect();
    let mean = components.iter().map(|g| g.values.iter().zip(&weights).map(|(a, b)| a * b).sum()).collect();
    let stat_error = cells.iter().flat_map(|(_, se, _)| se.iter().copied()).fold(0.0, f64::max);
    let f_sup = cells.iter().map(|c| c.2).fold(0.0, f64::max);
    let truncation_bound = mixing.map(|mx| mx.k * f_sup * (-mx.gamma * settings.horizon).exp() / mx.gamma);
    Ok(CorrectorField {
        method: CorrectorMethod::MonteCarlo,
        components,
        residual_inf: f64::NAN,
        mean,
        mean_drift: vec![],
        stat_error: Some(stat_error),
        truncation_bound,
        iterations: 0,
    })
}
