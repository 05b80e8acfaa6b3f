//! Invariant measure, ergodic means and mixing diagnostics of the
//! torus-projected process.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridFunction, GridSpec, TorusGrid};
use crate::periodic::PeriodicCoefficients;
use crate::rng::{derive_seed, stream};
use crate::sim::{collect_results, drive, par_indexed, Model, SimConfig};
use crate::stats::{linear_fit, total_variation, LinearFit};

/// Tolerance on the TV distance between the two halves of an occupation run.
pub const STATIONARITY_TOL: f64 = 0.05;
/// Cells per axis used by the stationarity check.
pub const STATIONARITY_CELLS: usize = 8;

/// Probability vector over the cells of a [`TorusGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct TorusHistogram {
    pub grid: TorusGrid,
    pub counts: Vec<f64>,
    pub probs: Vec<f64>,
}

impl TorusHistogram {
    pub fn from_counts(grid: TorusGrid, counts: Vec<f64>) -> Result<Self> {
        if counts.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: counts.len() });
        }
        let total: f64 = counts.iter().sum();
        if !(total > 0.0) || counts.iter().any(|c| *c < 0.0) {
            return Err(Error::InvalidConfig("histogram needs nonnegative counts with positive total".into()));
        }
        let probs = normalize(counts.iter().map(|c| c / total).collect());
        Ok(Self { grid, counts, probs })
    }

    pub fn uniform(grid: TorusGrid) -> Self {
        let n = grid.len();
        Self { grid, counts: vec![1.0; n], probs: vec![1.0 / n as f64; n] }
    }

    pub fn m(&self) -> usize {
        self.grid.m()
    }

    pub fn tv(&self, other: &TorusHistogram) -> Result<f64> {
        if self.probs.len() != other.probs.len() {
            return Err(Error::DimensionMismatch { expected: self.probs.len(), got: other.probs.len() });
        }
        Ok(total_variation(&self.probs, &other.probs))
    }

    /// Aggregates to a grid with `m / factor` cells per axis.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if self.grid.offset() != 0.0 {
            return Err(Error::InvalidConfig("cannot coarsen a shifted grid".into()));
        }
        self.coarsen_any(factor)
    }

    /// As [`coarsen`](Self::coarsen); a shifted grid keeps its offset in
    /// units of the fine cells.
    fn coarsen_any(&self, factor: usize) -> Result<Self> {
        let m = self.grid.m();
        if factor == 0 || m % factor != 0 {
            return Err(Error::InvalidConfig(format!("cannot coarsen m={m} by {factor}")));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let coarse = TorusGrid::with_offset(self.grid.lattice().clone(), m / factor, self.grid.offset() / factor as f64)?;
        let d = self.grid.dim();
        let mut counts = vec![0.0; coarse.len()];
        let mut mi = vec![0usize; d];
        for (i, c) in self.counts.iter().enumerate() {
            self.grid.multi_index(i, &mut mi);
            mi.iter_mut().for_each(|v| *v /= factor);
            counts[coarse.flat_index(&mi)] += c;
        }
        Self::from_counts(coarse, counts)
    }
}

/// Coarsening factor for the half-sample stationarity check: the check runs
/// on at most `STATIONARITY_CELLS` cells per axis, where the TV noise of an
/// honest sample is well below the tolerance.
fn stationarity_factor(m: usize) -> usize {
    (1..=m).find(|f| m % f == 0 && m / f <= STATIONARITY_CELLS).unwrap_or(m)
}

/// Rescales a probability vector so that it sums to 1 to rounding.
fn normalize(mut p: Vec<f64>) -> Vec<f64> {
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InvariantMethod {
    Occupation,
    GridChain,
    /// Left null vector of the discretized generator.
    Generator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct InvariantDiagnostics {
    /// TV distance between the first and second half of the occupation sample.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tv_halves: Option<f64>,
    /// TV distance to the estimate of the other method, when compared.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tv_between_methods: Option<f64>,
    /// Effective sample size of `Σ_k cos 2πu_k` (batch means).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effective_sample_size: Option<f64>,
    /// `‖πP - π‖₁` of the grid chain.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_point_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power_iterations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvariantEstimate {
    pub histogram: TorusHistogram,
    pub method: InvariantMethod,
    pub burn_in: f64,
    pub diagnostics: InvariantDiagnostics,
}

impl InvariantEstimate {
    pub fn probs(&self) -> &[f64] {
        &self.histogram.probs
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.histogram.grid
    }

    /// Samples a point from the piecewise-uniform density of the histogram.
    pub fn sample<R: rand::RngCore + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        use rand::Rng;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut cell = self.probs().len() - 1;
        for (i, p) in self.probs().iter().enumerate() {
            acc += p;
            if u < acc {
                cell = i;
                break;
            }
        }
        point_in_cell(self.grid(), cell, rng)
    }
}

/// Uniform point of a cell, physical coordinates.
pub fn point_in_cell<R: rand::RngCore + ?Sized>(grid: &TorusGrid, cell: usize, rng: &mut R) -> Vec<f64> {
    use rand::Rng;
    let d = grid.dim();
    let mut u = vec![0.0; d];
    grid.center_reduced(cell, &mut u);
    for c in u.iter_mut() {
        *c += (rng.random::<f64>() - 0.5) / grid.m() as f64;
    }
    let mut x = vec![0.0; d];
    grid.lattice().to_physical(&u, &mut x);
    x
}

fn reduced_cos_sum(grid: &TorusGrid, w: &[f64]) -> f64 {
    let mut u = [0.0; 3];
    let d = grid.dim();
    grid.lattice().to_reduced(w, &mut u[..d]);
    u[..d].iter().map(|v| (TAU * v).cos()).sum()
}

/// Batch-means effective sample size of an equally weighted series.
fn effective_sample_size(series: &[f64], batches: usize) -> Option<f64> {
    let n = series.len();
    if n < batches * 2 {
        return None;
    }
    let size = n / batches;
    let used = &series[..size * batches];
    let var = crate::stats::variance(used);
    let means: Vec<f64> = used.chunks(size).map(crate::stats::mean).collect();
    let var_means = crate::stats::variance(&means);
    if var_means <= 0.0 {
        return Some(n as f64);
    }
    Some((var / var_means * batches as f64).min(n as f64))
}

/// Holding-time weighted histogram of the wrapped states after `burn_in`.
pub fn estimate_invariant_occupation(
    model: &Model,
    cfg: &SimConfig,
    total_time: f64,
    burn_in: f64,
    grid: TorusGrid,
) -> Result<InvariantEstimate> {
    if !(burn_in >= 0.0 && total_time >= 10.0 * burn_in && total_time > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "occupation run needs total_time >= 10 burn_in (got {total_time}, {burn_in})"
        )));
    }
    let run = SimConfig { horizon: total_time, ..cfg.clone() };
    run.validate(model.dim())?;
    let n_steps = run.n_steps();
    let mid = burn_in + 0.5 * (total_time - burn_in);
    let mut first = vec![0.0; grid.len()];
    let mut second = vec![0.0; grid.len()];
    let mut series = Vec::new();
    let stride = (n_steps / 200_000).max(1);
    drive(model, &run, &run.x0, run.seed, &mut |k: usize, t: f64, _x: &[f64], w: &[f64]| {
        if k >= n_steps || t < burn_in {
            return;
        }
        let h = run.grid_time(k + 1) - t;
        let cell = grid.cell_of(w);
        if t < mid {
            first[cell] += h;
        } else {
            second[cell] += h;
        }
        if k % stride == 0 {
            series.push(reduced_cos_sum(&grid, w));
        }
    })?;
    let factor = stationarity_factor(grid.m());
    let h1 = TorusHistogram::from_counts(grid.clone(), first.clone())?.coarsen_any(factor)?;
    let h2 = TorusHistogram::from_counts(grid.clone(), second.clone())?.coarsen_any(factor)?;
    let tv_halves = h1.tv(&h2)?;
    if tv_halves > STATIONARITY_TOL {
        return Err(Error::NonStationary(tv_halves));
    }
    let counts: Vec<f64> = first.iter().zip(&second).map(|(a, b)| a + b).collect();
    Ok(InvariantEstimate {
        histogram: TorusHistogram::from_counts(grid, counts)?,
        method: InvariantMethod::Occupation,
        burn_in,
        diagnostics: InvariantDiagnostics {
            tv_halves: Some(tv_halves),
            effective_sample_size: effective_sample_size(&series, 50),
            ..Default::default()
        },
    })
}

/// Empirical cell-to-cell transition matrix at lag `t0`, sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl TransitionMatrix {
    /// `out = p P`.
    pub fn left_apply(&self, p: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                out[j] += p[i] * w;
            }
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|(_, w)| w).sum()).collect()
    }
}

/// Transition matrix of the torus cells at lag `t0`: each row from
/// `n_samples` paths started uniformly in the cell.
pub fn empirical_transition_matrix(
    model: &Model,
    cfg: &SimConfig,
    t0: f64,
    grid: &TorusGrid,
    n_samples: usize,
) -> Result<TransitionMatrix> {
    if grid.len() > 100_000 {
        return Err(Error::InvalidConfig(format!("m^d = {} exceeds 1e5", grid.len())));
    }
    if n_samples < 100 {
        return Err(Error::InvalidConfig(format!("n_samples = {n_samples} < 100")));
    }
    let run = SimConfig { horizon: t0, ..cfg.clone() };
    run.validate(model.dim())?;
    let results = par_indexed(grid.len(), |cell| -> Result<Vec<(usize, f64)>> {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        let cell_seed = derive_seed(run.seed, cell as u64);
        let mut start_rng = stream(derive_seed(cell_seed, u64::MAX));
        let mut failed = 0usize;
        for j in 0..n_samples {
            let x0 = point_in_cell(grid, cell, &mut start_rng);
            let mut last = None;
            let res = drive(model, &run, &x0, derive_seed(cell_seed, j as u64), &mut |_: usize, _: f64, _: &[f64], w: &[f64]| {
                last = Some(grid.cell_of(w));
            });
            match (res, last) {
                (Ok(()), Some(c)) => *counts.entry(c).or_default() += 1,
                _ => failed += 1,
            }
        }
        if failed * 100 > n_samples {
            return Err(Error::EnsembleFailure { failed, total: n_samples });
        }
        let total = (n_samples - failed) as f64;
        Ok(counts.into_iter().map(|(c, k)| (c, k as f64 / total)).collect())
    });
    let rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(TransitionMatrix { rows })
}

/// Stationary vector of the empirical cell chain by power iteration.
pub fn estimate_invariant_grid_chain(
    model: &Model,
    cfg: &SimConfig,
    t0: f64,
    grid: TorusGrid,
    n_samples: usize,
) -> Result<InvariantEstimate> {
    let p = empirical_transition_matrix(model, cfg, t0, &grid, n_samples)?;
    let (pi, residual, iterations) = stationary_vector(&p, 1e-10, 1_000_000)?;
    Ok(InvariantEstimate {
        histogram: TorusHistogram { counts: pi.clone(), probs: pi, grid },
        method: InvariantMethod::GridChain,
        burn_in: 0.0,
        diagnostics: InvariantDiagnostics {
            fixed_point_residual: Some(residual),
            power_iterations: Some(iterations),
            ..Default::default()
        },
    })
}

/// Power iteration `π ← πP` until `‖πP - π‖₁ < tol`.
pub fn stationary_vector(p: &TransitionMatrix, tol: f64, max_iter: usize) -> Result<(Vec<f64>, f64, usize)> {
    let n = p.rows.len();
    let mut visited = vec![false; n];
    for row in &p.rows {
        for &(j, _) in row {
            visited[j] = true;
        }
    }
    if let Some(cell) = visited.iter().position(|v| !v) {
        return Err(Error::ReducibleChainEstimate(cell));
    }
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        p.left_apply(&pi, &mut next);
        next = normalize(next);
        residual = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        if residual < tol {
            // report the fixed-point residual of the returned vector
            p.left_apply(&pi, &mut next);
            let r: f64 = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
            return Ok((pi, r, it));
        }
    }
    Err(Error::SolverDivergence { residual, iterations: max_iter })
}

/// `Π(f) = Σ_cells f(center) π(cell)`.
pub fn mean_pi(f: &GridFunction, inv: &InvariantEstimate) -> Result<f64> {
    if f.values.len() != inv.probs().len() {
        return Err(Error::DimensionMismatch { expected: inv.probs().len(), got: f.values.len() });
    }
    Ok(f.values.iter().zip(inv.probs()).map(|(a, b)| a * b).sum())
}

/// `Π(g)` for a function evaluated at the cell centers.
pub fn mean_pi_fn<F: Fn(&[f64]) -> f64>(f: F, inv: &InvariantEstimate) -> f64 {
    let g = inv.grid();
    (0..g.len()).map(|i| f(&g.center(i)) * inv.probs()[i]).sum()
}

/// `Π(b)` by the midpoint rule on the histogram grid.
pub fn mean_drift(coeffs: &PeriodicCoefficients, inv: &InvariantEstimate) -> Vec<f64> {
    let g = inv.grid();
    let d = coeffs.dim();
    let mut acc = vec![0.0; d];
    let mut b = vec![0.0; d];
    for (i, p) in inv.probs().iter().enumerate() {
        coeffs.b_into(&g.center(i), &mut b);
        for k in 0..d {
            acc[k] += p * b[k];
        }
    }
    acc
}

/// Components of `b - Π(b)` sampled at the cell centers.
pub fn centered_drift(coeffs: &PeriodicCoefficients, inv: &InvariantEstimate) -> Vec<GridFunction> {
    let pb = mean_drift(coeffs, inv);
    let g = inv.grid().clone();
    (0..coeffs.dim())
        .map(|k| GridFunction::from_fn(g.clone(), |x| coeffs.eval_b(x)[k] - pb[k]))
        .collect()
}

/// Autocorrelation-decay settings for [`estimate_spectral_gap`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSettings {
    pub total_time: f64,
    pub burn_in: f64,
    /// Lags as multiples of `dt`-rounded times.
    pub lags: Vec<f64>,
    #[serde(default = "default_batches")]
    pub batches: usize,
}

fn default_batches() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionFit {
    pub name: String,
    pub gamma: f64,
    pub k: f64,
    pub points: usize,
    pub residual: f64,
    /// `(lag, normalized autocorrelation, standard error)`.
    pub correlations: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingEstimate {
    pub gamma: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub fit_residual: f64,
    pub per_function: Vec<FunctionFit>,
}

/// Named test function of the wrapped state.
pub struct TestFunction<'a> {
    pub name: String,
    pub f: Box<dyn Fn(&[f64]) -> f64 + Sync + 'a>,
}

/// `cos 2πu_k` and `sin 2πu_k` for every reduced axis `k`.
pub fn fourier_test_functions(lattice: &crate::periodic::Lattice) -> Vec<TestFunction<'_>> {
    let d = lattice.dim();
    let mut out = Vec::new();
    for k in 0..d {
        for (name, trig) in [("cos", f64::cos as fn(f64) -> f64), ("sin", f64::sin as fn(f64) -> f64)] {
            out.push(TestFunction {
                name: format!("{name}(2pi u{k})"),
                f: Box::new(move |w: &[f64]| {
                    let mut u = [0.0; 3];
                    lattice.to_reduced(w, &mut u[..d]);
                    trig(TAU * u[k])
                }),
            });
        }
    }
    out
}

/// Fits `|Corr(f(X_{s+τ}), f(X_s))| ≈ K e^{-γτ}` along one stationary path.
///
/// Only lags whose autocorrelation exceeds five batch-means standard errors
/// enter the fit; `γ̂` is the smallest and `K̂` the largest over test
/// functions.
pub fn estimate_spectral_gap(
    model: &Model,
    cfg: &SimConfig,
    test_fns: &[TestFunction<'_>],
    settings: &GapSettings,
) -> Result<MixingEstimate> {
    if test_fns.is_empty() || settings.lags.is_empty() {
        return Err(Error::InvalidConfig("spectral gap needs test functions and lags".into()));
    }
    let run = SimConfig { horizon: settings.total_time, ..cfg.clone() };
    run.validate(model.dim())?;
    let lag_steps: Vec<usize> = settings.lags.iter().map(|l| (l / run.dt).round().max(1.0) as usize).collect();
    let burn_steps = (settings.burn_in / run.dt).ceil() as usize;
    let nf = test_fns.len();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); nf];
    drive(model, &run, &run.x0, run.seed, &mut |k: usize, _t: f64, _x: &[f64], w: &[f64]| {
        if k >= burn_steps {
            for (v, tf) in values.iter_mut().zip(test_fns) {
                v.push((tf.f)(w));
            }
        }
    })?;
    let max_lag = *lag_steps.iter().max().expect("nonempty");
    let mut fits = Vec::new();
    for (tf, series) in test_fns.iter().zip(&values) {
        let n = series.len();
        if n < (max_lag + 1) * settings.batches * 4 {
            return Err(Error::InvalidConfig("stationary run too short for the lag grid".into()));
        }
        let m = crate::stats::mean(series);
        let var = series.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
        if var <= 0.0 {
            continue;
        }
        let mut corr = Vec::new();
        for (&ls, &lag) in lag_steps.iter().zip(&settings.lags) {
            let usable = n - ls;
            let size = usable / settings.batches;
            let batch: Vec<f64> = (0..settings.batches)
                .map(|b| {
                    let r = b * size..(b + 1) * size;
                    r.map(|i| (series[i] - m) * (series[i + ls] - m)).sum::<f64>() / size as f64 / var
                })
                .collect();
            let c = crate::stats::mean(&batch);
            let se = (crate::stats::variance(&batch) / settings.batches as f64).sqrt();
            corr.push((lag, c, se));
        }
        let sig: Vec<&(f64, f64, f64)> = corr.iter().filter(|(_, c, se)| c.abs() > 5.0 * se).collect();
        if sig.len() < 2 {
            fits.push(FunctionFit {
                name: tf.name.clone(),
                gamma: f64::NAN,
                k: f64::NAN,
                points: sig.len(),
                residual: f64::NAN,
                correlations: corr,
            });
            continue;
        }
        let x: Vec<f64> = sig.iter().map(|p| p.0).collect();
        let y: Vec<f64> = sig.iter().map(|p| p.1.abs().ln()).collect();
        let LinearFit { intercept, slope, rms_residual, .. } = linear_fit(&x, &y)?;
        fits.push(FunctionFit {
            name: tf.name.clone(),
            gamma: -slope,
            k: intercept.exp(),
            points: sig.len(),
            residual: rms_residual,
            correlations: corr,
        });
    }
    let good: Vec<&FunctionFit> = fits.iter().filter(|f| f.points >= 2 && f.gamma.is_finite()).collect();
    if good.is_empty() {
        return Err(Error::InsufficientDecaySignal("no test function has two significant lags".into()));
    }
    let gamma = good.iter().map(|f| f.gamma).fold(f64::INFINITY, f64::min);
    if !(gamma > 0.0) {
        return Err(Error::InsufficientDecaySignal(format!("fitted gamma = {gamma} is not positive")));
    }
    let k = good.iter().map(|f| f.k).fold(0.0f64, f64::max).max(1.0);
    let fit_residual = good.iter().map(|f| f.residual).fold(0.0f64, f64::max);
    Ok(MixingEstimate { gamma, k, fit_residual, per_function: fits })
}

/// `q(z) = κ Σ_k λ_k |σ(z)φ_k|^α` with `κ = 1/(2-α) + 1/α`, the jump
/// activity `∫ min(|σ(z)y|², 1) ν(dy)`, centered under `π`.
pub fn centered_jump_activity(model: &Model, inv: &InvariantEstimate) -> GridFunction {
    let a = model.alpha.value();
    let kappa = 1.0 / (2.0 - a) + 1.0 / a;
    let d = model.dim();
    let g = inv.grid().clone();
    let mut q = GridFunction::from_fn(g, |z| {
        let mut sig = vec![0.0; d * d];
        model.coeffs.sigma_into(z, &mut sig);
        kappa
            * model
                .mu
                .atoms()
                .iter()
                .map(|atom| {
                    let n2: f64 = (0..d)
                        .map(|i| (0..d).map(|j| sig[i * d + j] * atom.dir[j]).sum::<f64>().powi(2))
                        .sum();
                    atom.weight * n2.powf(a / 2.0)
                })
                .sum::<f64>()
    });
    let mean: f64 = q.values.iter().zip(inv.probs()).map(|(a, b)| a * b).sum();
    q.values.iter_mut().for_each(|v| *v -= mean);
    q
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariancePoint {
    pub n: u64,
    pub variance: f64,
    /// Standard error of the variance estimate.
    pub stderr: f64,
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceDecay {
    pub t: f64,
    pub points: Vec<VariancePoint>,
    pub slope: Option<LinearFit>,
}

/// `Var[∫_0^t p(X_{ns}) ds]` for each `n`, started after a burn-in of
/// `burn_in` time units from `cfg.x0`.
pub fn ergodic_variance_decay(
    model: &Model,
    cfg: &SimConfig,
    p: &GridFunction,
    inv: &InvariantEstimate,
    t: f64,
    ns: &[u64],
    n_paths: usize,
    burn_in: f64,
) -> Result<VarianceDecay> {
    let centered = mean_pi(p, inv)?;
    if centered.abs() > 1e-6 {
        return Err(Error::NotCentered(centered));
    }
    if n_paths < 2 {
        return Err(Error::InvalidConfig("variance needs at least two paths".into()));
    }
    let mut points = Vec::with_capacity(ns.len());
    for (ni, &n) in ns.iter().enumerate() {
        let run = SimConfig {
            horizon: burn_in + n as f64 * t,
            seed: derive_seed(cfg.seed, ni as u64),
            ..cfg.clone()
        };
        run.validate(model.dim())?;
        let n_steps = run.n_steps();
        let results = par_indexed(n_paths, |i| {
            let mut acc = 0.0;
            drive(model, &run, &run.x0, derive_seed(run.seed, i as u64), &mut |k: usize, s: f64, _x: &[f64], w: &[f64]| {
                if k < n_steps && s >= burn_in - 1e-12 {
                    acc += p.interpolate(w) * (run.grid_time(k + 1) - s);
                }
            })
            .map(|_| acc / n as f64)
        });
        let (vals, _) = collect_results(results)?;
        let var = crate::stats::variance(&vals);
        let m = crate::stats::mean(&vals);
        let m4 = vals.iter().map(|v| (v - m).powi(4)).sum::<f64>() / vals.len() as f64;
        let stderr = ((m4 - var * var).max(0.0) / vals.len() as f64).sqrt();
        points.push(VariancePoint { n, variance: var, stderr, bound: None });
    }
    let slope = if points.len() >= 2 && points.iter().all(|p| p.variance > 0.0) {
        let x: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
        let y: Vec<f64> = points.iter().map(|p| p.variance.ln()).collect();
        Some(linear_fit(&x, &y)?)
    } else {
        None
    };
    Ok(VarianceDecay { t, points, slope })
}

impl VarianceDecay {
    /// Attaches `2 K ‖p‖²_sup t / (n γ) · (1 + slack)` to each point.
    pub fn with_bound(mut self, mixing: &MixingEstimate, p_sup: f64, slack: f64) -> Self {
        for pt in &mut self.points {
            pt.bound = Some(2.0 * mixing.k * p_sup * p_sup * self.t / (pt.n as f64 * mixing.gamma) * (1.0 + slack));
        }
        self
    }

    pub fn within_bound(&self) -> bool {
        self.points.iter().all(|p| p.bound.is_none_or(|b| p.variance <= b))
    }
}

#[derive(Serialize, Deserialize)]
struct HistogramFile {
    grid: GridSpec,
    method: InvariantMethod,
    burn_in: f64,
    probs: Vec<f64>,
    counts: Vec<f64>,
    diagnostics: InvariantDiagnostics,
}

impl InvariantEstimate {
    pub fn to_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(HistogramFile {
            grid: GridSpec::from(&self.histogram.grid),
            method: self.method,
            burn_in: self.burn_in,
            probs: self.histogram.probs.clone(),
            counts: self.histogram.counts.clone(),
            diagnostics: self.diagnostics.clone(),
        })?)
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let f: HistogramFile = serde_json::from_value(v.clone())?;
        let grid = TorusGrid::try_from(&f.grid)?;
        if f.probs.len() != grid.len() || f.counts.len() != grid.len() {
            return Err(Error::Format("histogram length does not match its grid".into()));
        }
        let s: f64 = f.probs.iter().sum();
        if f.probs.iter().any(|p| !(*p >= 0.0)) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::Format("histogram is not a probability vector".into()));
        }
        Ok(Self {
            histogram: TorusHistogram { grid, counts: f.counts, probs: f.probs },
            method: f.method,
            burn_in: f.burn_in,
            diagnostics: f.diagnostics,
        })
    }

    /// `cell,c0..,probability` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let g = self.grid();
        let mut header = String::from("cell");
        for k in 0..g.dim() {
            header.push_str(&format!(",c{k}"));
        }
        writeln!(w, "{header},probability")?;
        for (i, p) in self.probs().iter().enumerate() {
            let c = g.center(i);
            let coords: Vec<String> = c.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{i},{},{p:e}", coords.join(","))?;
        }
        Ok(())
    }
}
