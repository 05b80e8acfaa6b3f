//! Path simulation of `dX = b(X) dt + σ(X⁻) dL`.
//!
//! Two schemes are available:
//!
//! * increment Euler: `X_{k+1} = X_k + b(X_k) dt + σ(X_k) ΔL_k` with `ΔL_k`
//!   drawn exactly from the stable law;
//! * jump-adapted: jumps with `|y| > ε` are placed at their Poisson times and
//!   applied as `X ← X + σ(X⁻) y`; between jumps the drift is integrated by
//!   Euler steps and the compensated small jumps are either dropped or
//!   replaced by a Gaussian with matching covariance.
//!
//! Every path owns a ChaCha stream seeded by its `path_seed`, so ensembles
//! are bit-identical regardless of how rayon schedules them.

mod io;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use io::{read_csv, read_lvhg1, write_csv, write_lvhg1};

use crate::error::{Error, Result};
use crate::periodic::PeriodicCoefficients;
use crate::rng::{derive_seed, stream, Stream};
use crate::stable::{JumpSampler, NoiseSampler, SpectralMeasure, StabilityIndex};

/// `|σ(X⁻) ΔL|` above this is reported as an overflow.
pub const MAX_JUMP: f64 = 1e9;
/// `|X|` above this is reported as an overflow.
pub const MAX_STATE: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    IncrementEuler,
    JumpAdapted,
}

/// Treatment of the compensated jumps with `|y| ≤ ε` in the jump-adapted scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SmallJumps {
    #[default]
    Drop,
    Gaussian,
}

/// Which grid states are stored in a [`Path`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "every")]
pub enum Record {
    /// Every grid time, plus jump times for the jump-adapted scheme.
    #[default]
    Full,
    /// Every k-th grid time and the final time.
    Stride(usize),
    /// Only `t = 0` and `t = T`.
    Endpoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    #[serde(default)]
    pub scheme: Scheme,
    pub dt: f64,
    /// Small-jump radius; defaults to `dt^{1/α}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    /// Overridden by every driver that sets its own horizon.
    #[serde(default = "unit_horizon")]
    pub horizon: f64,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub small_jumps: SmallJumps,
    #[serde(default)]
    pub record: Record,
}

fn unit_horizon() -> f64 {
    1.0
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64, x0: Vec<f64>, seed: u64) -> Self {
        Self {
            scheme: Scheme::IncrementEuler,
            dt,
            eps: None,
            horizon,
            x0,
            seed,
            small_jumps: SmallJumps::Drop,
            record: Record::Full,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return Err(Error::InvalidConfig(format!("dt = {} must lie in (0, 0.1]", self.dt)));
        }
        if let Some(eps) = self.eps {
            if !(eps > 0.0 && eps <= 1.0) {
                return Err(Error::InvalidConfig(format!("eps = {eps} must lie in (0, 1]")));
            }
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidConfig(format!("horizon = {} must be positive", self.horizon)));
        }
        if self.x0.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: self.x0.len() });
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("x0 must be finite".into()));
        }
        if let Record::Stride(0) = self.record {
            return Err(Error::InvalidConfig("record stride must be positive".into()));
        }
        Ok(())
    }

    pub fn eps_for(&self, alpha: StabilityIndex) -> f64 {
        self.eps.unwrap_or_else(|| self.dt.powf(1.0 / alpha.value()).min(1.0))
    }

    /// Number of grid steps; the last step is shortened to land on `horizon`.
    pub fn n_steps(&self) -> usize {
        ((self.horizon / self.dt) - 1e-9).ceil().max(1.0) as usize
    }

    #[inline]
    pub fn grid_time(&self, k: usize) -> f64 {
        if k >= self.n_steps() {
            self.horizon
        } else {
            k as f64 * self.dt
        }
    }
}

/// Coefficients and noise with their precomputed samplers.
#[derive(Debug, Clone)]
pub struct Model {
    pub coeffs: PeriodicCoefficients,
    pub mu: SpectralMeasure,
    pub alpha: StabilityIndex,
    sampler: NoiseSampler,
}

impl Model {
    pub fn new(coeffs: PeriodicCoefficients, mu: SpectralMeasure, alpha: StabilityIndex) -> Result<Self> {
        if coeffs.dim() != mu.dim() {
            return Err(Error::DimensionMismatch { expected: coeffs.dim(), got: mu.dim() });
        }
        let sampler = NoiseSampler::new(&mu, alpha);
        Ok(Self { coeffs, mu, alpha, sampler })
    }

    pub fn dim(&self) -> usize {
        self.coeffs.dim()
    }

    /// Per-unit-time variance `∫_{|y|≤ε} |y|² ν(dy)` of the small jumps.
    pub fn small_jump_variance(&self, eps: f64) -> f64 {
        let a = self.alpha.value();
        self.mu.total_mass() * eps.powf(2.0 - a) / (2.0 - a)
    }
}

/// Receives the simulated states. `step` is the grid index (`0..=n_steps`),
/// `x` the unwrapped state and `w` its torus representative.
pub trait Observer {
    fn observe(&mut self, step: usize, t: f64, x: &[f64], w: &[f64]);

    /// Called at every large jump of the jump-adapted scheme.
    fn jump(&mut self, _t: f64, _pre: &[f64], _post: &[f64], _w_post: &[f64]) {}
}

impl<F: FnMut(usize, f64, &[f64], &[f64])> Observer for F {
    fn observe(&mut self, step: usize, t: f64, x: &[f64], w: &[f64]) {
        self(step, t, x, w)
    }
}

struct State {
    x: Vec<f64>,
    w: Vec<f64>,
    b: Vec<f64>,
    s: Vec<f64>,
    dl: Vec<f64>,
    dx: Vec<f64>,
}

impl State {
    fn new(x0: &[f64], model: &Model) -> Self {
        let d = x0.len();
        Self {
            x: x0.to_vec(),
            w: model.coeffs.lattice().wrap(x0),
            b: vec![0.0; d],
            s: vec![0.0; d * d],
            dl: vec![0.0; d],
            dx: vec![0.0; d],
        }
    }

    /// `dx = σ(w) dl`, checked against [`MAX_JUMP`].
    #[inline]
    fn noise_displacement(&mut self, model: &Model, t: f64) -> Result<()> {
        let d = self.x.len();
        model.coeffs.sigma_into(&self.w, &mut self.s);
        let mut n2 = 0.0;
        for i in 0..d {
            let v: f64 = (0..d).map(|j| self.s[i * d + j] * self.dl[j]).sum();
            self.dx[i] = v;
            n2 += v * v;
        }
        if !(n2.sqrt() <= MAX_JUMP) {
            return Err(Error::NumericOverflow { time: t, magnitude: n2.sqrt() });
        }
        Ok(())
    }

    #[inline]
    fn apply(&mut self, model: &Model, t: f64) -> Result<()> {
        let mut n2 = 0.0;
        for i in 0..self.x.len() {
            self.x[i] += self.dx[i];
            self.w[i] += self.dx[i];
            n2 += self.x[i] * self.x[i];
        }
        if !(n2.sqrt() <= MAX_STATE) {
            return Err(Error::NumericOverflow { time: t, magnitude: n2.sqrt() });
        }
        model.coeffs.lattice().wrap_in_place(&mut self.w);
        Ok(())
    }

    #[inline]
    fn drift(&mut self, model: &Model, h: f64) {
        model.coeffs.b_into(&self.w, &mut self.b);
        for i in 0..self.dx.len() {
            self.dx[i] = self.b[i] * h;
        }
    }
}

/// Runs one path from `x0` and streams its states into `obs`.
pub fn drive<O: Observer + ?Sized>(
    model: &Model,
    cfg: &SimConfig,
    x0: &[f64],
    path_seed: u64,
    obs: &mut O,
) -> Result<()> {
    let mut rng = stream(path_seed);
    match cfg.scheme {
        Scheme::IncrementEuler => drive_euler(model, cfg, x0, &mut rng, obs),
        Scheme::JumpAdapted => drive_jump_adapted(model, cfg, x0, &mut rng, obs),
    }
}

fn drive_euler<O: Observer + ?Sized>(
    model: &Model,
    cfg: &SimConfig,
    x0: &[f64],
    rng: &mut Stream,
    obs: &mut O,
) -> Result<()> {
    let mut st = State::new(x0, model);
    let n = cfg.n_steps();
    obs.observe(0, 0.0, &st.x, &st.w);
    for k in 0..n {
        let (t0, t1) = (cfg.grid_time(k), cfg.grid_time(k + 1));
        let h = t1 - t0;
        model.sampler.sample_into(h, rng, &mut st.dl);
        // σ and b at the left endpoint
        st.noise_displacement(model, t1)?;
        model.coeffs.b_into(&st.w, &mut st.b);
        for i in 0..st.dx.len() {
            st.dx[i] += st.b[i] * h;
        }
        st.apply(model, t1)?;
        obs.observe(k + 1, t1, &st.x, &st.w);
    }
    Ok(())
}

fn drive_jump_adapted<O: Observer + ?Sized>(
    model: &Model,
    cfg: &SimConfig,
    x0: &[f64],
    rng: &mut Stream,
    obs: &mut O,
) -> Result<()> {
    let eps = cfg.eps_for(model.alpha);
    let jumps = JumpSampler::new(&model.mu, model.alpha, eps);
    let gauss_sd: Vec<(Vec<f64>, f64)> = match cfg.small_jumps {
        SmallJumps::Drop => vec![],
        SmallJumps::Gaussian => {
            let a = model.alpha.value();
            let c = eps.powf(2.0 - a) / (2.0 - a);
            model
                .mu
                .pairs()
                .iter()
                .map(|&(i, _)| {
                    let atom = &model.mu.atoms()[i];
                    (atom.dir.clone(), (2.0 * atom.weight * c).sqrt())
                })
                .collect()
        }
    };
    let mut st = State::new(x0, model);
    let mut pre = vec![0.0; x0.len()];
    let n = cfg.n_steps();
    obs.observe(0, 0.0, &st.x, &st.w);

    let continuous = |st: &mut State, h: f64, t: f64, rng: &mut Stream| -> Result<()> {
        if h <= 0.0 {
            return Ok(());
        }
        if !gauss_sd.is_empty() {
            st.dl.iter_mut().for_each(|v| *v = 0.0);
            for (dir, sd) in &gauss_sd {
                let z: f64 = StandardNormal.sample(rng);
                let z = z * sd * h.sqrt();
                for (o, d) in st.dl.iter_mut().zip(dir) {
                    *o += d * z;
                }
            }
            st.noise_displacement(model, t)?;
            model.coeffs.b_into(&st.w, &mut st.b);
            for i in 0..st.dx.len() {
                st.dx[i] += st.b[i] * h;
            }
        } else {
            st.drift(model, h);
        }
        st.apply(model, t)
    };

    for k in 0..n {
        let (t0, t1) = (cfg.grid_time(k), cfg.grid_time(k + 1));
        let mut t = t0;
        for ev in jumps.sample(t0, t1, rng) {
            continuous(&mut st, ev.time - t, ev.time, rng)?;
            t = ev.time;
            pre.copy_from_slice(&st.x);
            st.dl.copy_from_slice(&ev.jump);
            st.noise_displacement(model, t)?;
            st.apply(model, t)?;
            obs.jump(t, &pre, &st.x, &st.w);
        }
        continuous(&mut st, t1 - t, t1, rng)?;
        obs.observe(k + 1, t1, &st.x, &st.w);
    }
    Ok(())
}

/// Pre- and post-jump states at a large jump.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpRecord {
    pub time: f64,
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
}

/// Sampled skeleton of one càdlàg path.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub dim: usize,
    pub path_seed: u64,
    pub times: Vec<f64>,
    /// Unwrapped states, row-major `times.len() × dim`.
    pub states: Vec<f64>,
    /// Torus representatives of `states`.
    pub wrapped: Vec<f64>,
    pub jumps: Vec<JumpRecord>,
}

impl Path {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn wrapped_state(&self, i: usize) -> &[f64] {
        &self.wrapped[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }
}

struct Recorder<'a> {
    cfg: &'a SimConfig,
    n_steps: usize,
    path: Path,
}

impl Recorder<'_> {
    fn push(&mut self, t: f64, x: &[f64], w: &[f64]) {
        if let Some(&last) = self.path.times.last() {
            if t <= last {
                // a jump exactly on a grid time: keep the later (post-jump) state
                let n = self.path.times.len() - 1;
                let d = self.path.dim;
                self.path.states[n * d..].copy_from_slice(x);
                self.path.wrapped[n * d..].copy_from_slice(w);
                return;
            }
        }
        self.path.times.push(t);
        self.path.states.extend_from_slice(x);
        self.path.wrapped.extend_from_slice(w);
    }
}

impl Observer for Recorder<'_> {
    fn observe(&mut self, step: usize, t: f64, x: &[f64], w: &[f64]) {
        let keep = match self.cfg.record {
            Record::Full => true,
            Record::Stride(s) => step % s == 0 || step == self.n_steps,
            Record::Endpoints => step == 0 || step == self.n_steps,
        };
        if keep {
            self.push(t, x, w);
        }
    }

    fn jump(&mut self, t: f64, pre: &[f64], post: &[f64], w_post: &[f64]) {
        self.path.jumps.push(JumpRecord { time: t, pre: pre.to_vec(), post: post.to_vec() });
        if self.cfg.record == Record::Full {
            self.push(t, post, w_post);
        }
    }
}

fn simulate_from(model: &Model, cfg: &SimConfig, x0: &[f64], path_seed: u64) -> Result<Path> {
    cfg.validate(model.dim())?;
    let n_steps = cfg.n_steps();
    let cap = match cfg.record {
        Record::Full => n_steps + 1,
        Record::Stride(s) => n_steps / s + 2,
        Record::Endpoints => 2,
    };
    let d = model.dim();
    let mut rec = Recorder {
        cfg,
        n_steps,
        path: Path {
            dim: d,
            path_seed,
            times: Vec::with_capacity(cap),
            states: Vec::with_capacity(cap * d),
            wrapped: Vec::with_capacity(cap * d),
            jumps: Vec::new(),
        },
    };
    drive(model, cfg, x0, path_seed, &mut rec)?;
    Ok(rec.path)
}

/// Increment-Euler path on the grid `{k dt}` starting at `cfg.x0`.
pub fn simulate_euler(model: &Model, cfg: &SimConfig, path_seed: u64) -> Result<Path> {
    let cfg = SimConfig { scheme: Scheme::IncrementEuler, ..cfg.clone() };
    simulate_from(model, &cfg, &cfg.x0, path_seed)
}

/// Jump-adapted path on the union of the grid and the large-jump times.
pub fn simulate_jump_adapted(model: &Model, cfg: &SimConfig, path_seed: u64) -> Result<Path> {
    let cfg = SimConfig { scheme: Scheme::JumpAdapted, ..cfg.clone() };
    simulate_from(model, &cfg, &cfg.x0, path_seed)
}

/// Simulates with the scheme selected in `cfg`.
pub fn simulate(model: &Model, cfg: &SimConfig, path_seed: u64) -> Result<Path> {
    simulate_from(model, cfg, &cfg.x0, path_seed)
}

/// `n^{-1/α}(X_{nt} - nt Π(b) - x_0)` for `t ∈ [0, t_target]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledPath {
    pub n: u64,
    pub dim: usize,
    pub times: Vec<f64>,
    pub states: Vec<f64>,
}

impl RescaledPath {
    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.times.len() - 1)
    }
}

pub fn rescale(
    path: &Path,
    n: u64,
    alpha: StabilityIndex,
    mean_drift: &[f64],
    t_target: f64,
) -> Result<RescaledPath> {
    let nt = n as f64 * t_target;
    if n == 0 {
        return Err(Error::InvalidConfig("rescaling factor n must be positive".into()));
    }
    if path.horizon() < nt * (1.0 - 1e-12) {
        return Err(Error::HorizonTooShort { have: path.horizon(), need: nt });
    }
    if mean_drift.len() != path.dim {
        return Err(Error::DimensionMismatch { expected: path.dim, got: mean_drift.len() });
    }
    let scale = (n as f64).powf(-1.0 / alpha.value());
    let x0 = path.state(0).to_vec();
    let mut times = Vec::new();
    let mut states = Vec::new();
    for (i, &t) in path.times.iter().enumerate() {
        if t > nt * (1.0 + 1e-12) {
            break;
        }
        times.push(t / n as f64);
        for (k, &x) in path.state(i).iter().enumerate() {
            states.push(scale * (x - t * mean_drift[k] - x0[k]));
        }
    }
    Ok(RescaledPath { n, dim: path.dim, times, states })
}

/// One failed path of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct PathFailure {
    pub index: usize,
    pub error: Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub dim: usize,
    pub seed: u64,
    /// Successful paths in index order.
    pub paths: Vec<Path>,
    pub failures: Vec<PathFailure>,
}

impl PathEnsemble {
    /// Final states of all successful paths.
    pub fn terminal_states(&self) -> Vec<Vec<f64>> {
        self.paths.iter().map(|p| p.last_state().to_vec()).collect()
    }
}

/// Maps `f` over path indices `0..n` in parallel, preserving index order.
pub fn par_indexed<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}

/// Splits per-path results into successes and failures; fails when more than
/// 1% of the paths failed.
pub fn collect_results<T>(results: Vec<Result<T>>) -> Result<(Vec<T>, Vec<PathFailure>)> {
    let total = results.len();
    let mut ok = Vec::with_capacity(total);
    let mut failures = Vec::new();
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => ok.push(v),
            Err(error) => failures.push(PathFailure { index, error }),
        }
    }
    if failures.len() * 100 > total {
        return Err(Error::EnsembleFailure { failed: failures.len(), total });
    }
    Ok((ok, failures))
}

/// `n_paths` independent paths; path `i` uses `derive_seed(cfg.seed, i)`.
pub fn run_ensemble(model: &Model, cfg: &SimConfig, n_paths: usize) -> Result<PathEnsemble> {
    if n_paths == 0 {
        return Err(Error::InvalidConfig("n_paths must be at least 1".into()));
    }
    cfg.validate(model.dim())?;
    let results = par_indexed(n_paths, |i| simulate(model, cfg, derive_seed(cfg.seed, i as u64)));
    let (paths, failures) = collect_results(results)?;
    Ok(PathEnsemble { dim: model.dim(), seed: cfg.seed, paths, failures })
}

/// Final states `X_T` of `n_paths` paths without storing the skeletons.
pub fn terminal_states(model: &Model, cfg: &SimConfig, n_paths: usize) -> Result<(Vec<Vec<f64>>, Vec<PathFailure>)> {
    cfg.validate(model.dim())?;
    let results = par_indexed(n_paths, |i| {
        let mut last = cfg.x0.clone();
        drive(model, cfg, &cfg.x0, derive_seed(cfg.seed, i as u64), &mut |_: usize, _: f64, x: &[f64], _: &[f64]| {
            last.copy_from_slice(x)
        })
        .map(|_| last)
    });
    collect_results(results)
}
