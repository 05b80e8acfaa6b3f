//! Distributional comparison of the rescaled process with its stable limit.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::homogenize::{homogenized_symbol, HomogenizedLaw};
use crate::quad;
use crate::rng;
use crate::sim::{terminal_states, Model, PathFailure, Record, SimConfig};
use crate::stable::SpectralMeasure;
use crate::stats::{ks_one_sample, linear_fit};

pub const MIN_CF_SAMPLES: usize = 100;
pub const MIN_ALPHA_SAMPLES: usize = 10_000;
pub const DEFAULT_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfPoint {
    pub xi: Vec<f64>,
    pub re: f64,
    pub im: f64,
    pub stderr: f64,
}

/// Empirical characteristic function on a list of frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CFGrid {
    pub n_samples: usize,
    pub points: Vec<CfPoint>,
}

impl CFGrid {
    /// `max_ξ |CF(ξ) - target(ξ)|` and the standard error at the maximizer.
    pub fn max_distance<F: Fn(&[f64]) -> (f64, f64)>(&self, target: F) -> (f64, f64) {
        self.points.iter().fold((0.0, 0.0), |(best, se), p| {
            let (tr, ti) = target(&p.xi);
            let d = (p.re - tr).hypot(p.im - ti);
            if d > best {
                (d, p.stderr)
            } else {
                (best, se)
            }
        })
    }
}

/// Mean of `e^{i⟨ξ, X⟩}` per frequency.
///
/// The standard error is the jackknife estimate for a sample mean, which
/// reduces to `sqrt((Var cos + Var sin) / n)`.
pub fn empirical_cf(samples: &[Vec<f64>], xi: &[Vec<f64>]) -> Result<CFGrid> {
    let n = samples.len();
    if n < MIN_CF_SAMPLES {
        return Err(Error::InvalidConfig(format!("empirical CF needs at least {MIN_CF_SAMPLES} samples, got {n}")));
    }
    let d = samples[0].len();
    if let Some(bad) = samples.iter().find(|s| s.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
    }
    let mut points = Vec::with_capacity(xi.len());
    for f in xi {
        if f.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: f.len() });
        }
        let (mut sc, mut ss, mut sc2, mut ss2) = (0.0, 0.0, 0.0, 0.0);
        for x in samples {
            let a: f64 = f.iter().zip(x).map(|(p, q)| p * q).sum();
            let (s, c) = a.sin_cos();
            sc += c;
            ss += s;
            sc2 += c * c;
            ss2 += s * s;
        }
        let nf = n as f64;
        let (re, im) = (sc / nf, ss / nf);
        let var = ((sc2 / nf - re * re) + (ss2 / nf - im * im)).max(0.0) * nf / (nf - 1.0);
        points.push(CfPoint { xi: f.clone(), re, im, stderr: (var / nf).sqrt() });
    }
    Ok(CFGrid { n_samples: n, points })
}

/// Default frequency grid: 25 points cycling through the atom directions
/// (one per `±` pair) and the coordinate diagonals, with radii log-spaced in
/// `[0.25, 4]`.
pub fn default_xi_grid(mu: &SpectralMeasure) -> Vec<Vec<f64>> {
    let d = mu.dim();
    let mut dirs: Vec<Vec<f64>> = mu.pairs().iter().map(|&(i, _)| mu.atoms()[i].dir.clone()).collect();
    if d > 1 {
        // all sign patterns (1, ±1, .., ±1)/√d
        for mask in 0..(1usize << (d - 1)) {
            let v: Vec<f64> = (0..d)
                .map(|k| if k > 0 && mask >> (k - 1) & 1 == 1 { -1.0 } else { 1.0 } / (d as f64).sqrt())
                .collect();
            if !dirs.iter().any(|u| u.iter().zip(&v).all(|(a, b)| (a - b).abs() < 1e-9 || (a + b).abs() < 1e-9)) {
                dirs.push(v);
            }
        }
    }
    (0..25)
        .map(|i| {
            let r = 0.25 * 16f64.powf(i as f64 / 24.0);
            dirs[i % dirs.len()].iter().map(|x| r * x).collect()
        })
        .collect()
}

/// CDF of the projection `⟨v, X*_t⟩`, a symmetric stable law with
/// characteristic function `exp(-c |s|^α)`, `c = -t ψ̄(v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalCdf {
    alpha: f64,
    scale: f64,
}

// Beyond this standardized abscissa the tail series is used.
const SERIES_CUTOFF: f64 = 20.0;

impl MarginalCdf {
    pub fn new(law: &HomogenizedLaw, v: &[f64], t: f64) -> Result<Self> {
        let nv: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (nv - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("direction must be a unit vector, |v| = {nv}")));
        }
        if !(t > 0.0) {
            return Err(Error::InvalidConfig("t must be positive".into()));
        }
        let c = -t * homogenized_symbol(v, law);
        if !(c > 0.0) {
            return Err(Error::QuadratureFailure(format!("projection has zero scale along {v:?}")));
        }
        let alpha = law.alpha.value();
        Ok(Self { alpha, scale: c.powf(1.0 / alpha) })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Gil-Pelaez inversion `1/2 + (1/π) ∫_0^∞ sin(uz) e^{-u^α} / u du` at the
    /// standardized point `z = x / scale`, with the large-`|z|` series
    /// `1 - F(z) = (1/π) Σ_k (-1)^{k+1} Γ(αk)/k! sin(kπα/2) z^{-αk}`.
    pub fn eval(&self, x: f64) -> Result<f64> {
        let z = x / self.scale;
        if z == 0.0 {
            return Ok(0.5);
        }
        let a = z.abs();
        let upper = if a > SERIES_CUTOFF { self.tail_series(a) } else { 0.5 - self.gil_pelaez(a)? };
        Ok(if z > 0.0 { 1.0 - upper } else { upper })
    }

    fn gil_pelaez(&self, z: f64) -> Result<f64> {
        let a = self.alpha;
        // e^{-u^α} < 1e-17 beyond this
        let top = 40f64.powf(1.0 / a);
        let f = |u: f64| if u == 0.0 { z } else { (u * z).sin() / u * (-u.powf(a)).exp() };
        let pieces = ((top * z / PI).ceil() as usize).max(1);
        let h = top / pieces as f64;
        let mut total = 0.0;
        let mut err = 0.0;
        for k in 0..pieces {
            let (v, e) = quad::integrate(f, k as f64 * h, (k + 1) as f64 * h, 1e-12, 1e-12, 50);
            total += v;
            err += e;
        }
        if !(err < 1e-8) || !total.is_finite() {
            return Err(Error::QuadratureFailure(format!("Gil-Pelaez error estimate {err:e} at z = {z}")));
        }
        Ok(total / PI)
    }

    fn tail_series(&self, z: f64) -> f64 {
        let a = self.alpha;
        let mut sum = 0.0;
        let mut prev = f64::INFINITY;
        for k in 1..40 {
            let kf = k as f64;
            let size = (ln_gamma(a * kf) - ln_gamma(kf + 1.0) - a * kf * z.ln()).exp();
            // asymptotic series: stop once terms grow
            if size > prev {
                break;
            }
            prev = size;
            let term = size * (kf * PI * a / 2.0).sin();
            sum += if k % 2 == 1 { term } else { -term };
            if size < 1e-16 {
                break;
            }
        }
        sum / PI
    }
}

/// CDF of `⟨v, X*_t⟩` on a grid of abscissae.
pub fn limit_marginal_cdf(law: &HomogenizedLaw, v: &[f64], t: f64, xs: &[f64]) -> Result<Vec<f64>> {
    let cdf = MarginalCdf::new(law, v, t)?;
    xs.iter().map(|&x| cdf.eval(x)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaEstimate {
    pub alpha: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Frequencies bounding the regression window.
    pub xi_low: f64,
    pub xi_high: f64,
    pub n_points: usize,
}

const WINDOW_POINTS: usize = 12;
const BOOTSTRAP: usize = 100;

fn cf_sym(samples: &[f64], xi: f64) -> f64 {
    samples.iter().map(|x| (xi * x).cos()).sum::<f64>() / samples.len() as f64
}

fn window_fit(samples: &[f64], xis: &[f64]) -> Option<f64> {
    let mut lx = Vec::with_capacity(xis.len());
    let mut ly = Vec::with_capacity(xis.len());
    for &xi in xis {
        let c = cf_sym(samples, xi).abs();
        if c > 0.0 && c < 1.0 {
            lx.push(xi.ln());
            ly.push((-c.ln()).ln());
        }
    }
    if lx.len() < 3 {
        return None;
    }
    linear_fit(&lx, &ly).ok().map(|f| f.slope)
}

/// Regression of `log(-log |CF(ξ)|)` on `log ξ` where `|CF| ∈ [0.2, 0.8]`.
///
/// The window is located on a coarse log grid, then refit on
/// [`WINDOW_POINTS`] log-spaced frequencies. The 95% interval comes from a
/// percentile bootstrap seeded by `seed`.
pub fn stability_index_estimate(samples: &[f64], seed: u64) -> Result<AlphaEstimate> {
    if samples.len() < MIN_ALPHA_SAMPLES {
        return Err(Error::InvalidConfig(format!(
            "stability index estimate needs at least {MIN_ALPHA_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let mut abs: Vec<f64> = samples.iter().map(|x| x.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let med = abs[abs.len() / 2];
    if !(med > 0.0) || !med.is_finite() {
        return Err(Error::WindowEmpty);
    }
    let coarse: Vec<f64> = (0..=120).map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / 120.0) / med).collect();
    let inside: Vec<f64> = coarse
        .iter()
        .copied()
        .filter(|&xi| {
            let c = cf_sym(samples, xi).abs();
            (0.2..=0.8).contains(&c)
        })
        .collect();
    if inside.len() < 2 {
        return Err(Error::WindowEmpty);
    }
    let (lo, hi) = (inside[0], inside[inside.len() - 1]);
    let xis: Vec<f64> = (0..WINDOW_POINTS)
        .map(|i| lo * (hi / lo).powf(i as f64 / (WINDOW_POINTS - 1) as f64))
        .collect();
    let alpha = window_fit(samples, &xis).ok_or(Error::WindowEmpty)?;
    let mut r = rng::stream(seed);
    let n = samples.len();
    let mut resample = vec![0.0; n];
    let mut boots = Vec::with_capacity(BOOTSTRAP);
    for _ in 0..BOOTSTRAP {
        for v in resample.iter_mut() {
            *v = samples[r.random_range(0..n)];
        }
        if let Some(a) = window_fit(&resample, &xis) {
            boots.push(a);
        }
    }
    boots.sort_by(f64::total_cmp);
    let (ci_low, ci_high) = if boots.len() >= 10 {
        let q = |p: f64| boots[((p * (boots.len() - 1) as f64).round() as usize).min(boots.len() - 1)];
        (q(0.025), q(0.975))
    } else {
        (alpha, alpha)
    };
    Ok(AlphaEstimate { alpha, ci_low, ci_high, xi_low: lo, xi_high: hi, n_points: WINDOW_POINTS })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub ns: Vec<u64>,
    pub n_paths: usize,
    #[serde(default = "one")]
    pub t: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Frequencies; the default grid of the noise when absent.
    #[serde(default)]
    pub xi: Option<Vec<Vec<f64>>>,
    /// Skip the stability index estimate (it needs 10^4 samples).
    #[serde(default)]
    pub skip_alpha: bool,
}

fn one() -> f64 {
    1.0
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: u64,
    pub d_n: f64,
    pub stderr: f64,
    /// KS distance of each coordinate projection to the limit marginal.
    pub ks: Vec<f64>,
    /// Stability index estimate of each coordinate projection.
    pub alpha_hat: Vec<AlphaEstimate>,
    pub failures: usize,
    pub cf: CFGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub alpha: f64,
    pub t: f64,
    pub n_paths: usize,
    pub threshold: f64,
    pub mean_drift: Vec<f64>,
    pub points: Vec<SweepPoint>,
    /// `D_n` nonincreasing up to twice the combined standard error.
    pub monotone: bool,
    pub pass: bool,
}

/// For each `n`: simulate to `n t`, rescale by `n^{-1/α}` after removing
/// `x_0 + n t Π(b)`, and compare with `X*_t`.
///
/// Ensembles for different `n` use the seeds `derive_seed(cfg.seed, n)`.
pub fn convergence_sweep(
    model: &Model,
    cfg: &SimConfig,
    law: &HomogenizedLaw,
    mean_drift: &[f64],
    settings: &SweepSettings,
) -> Result<ConvergenceReport> {
    let d = model.dim();
    if mean_drift.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: mean_drift.len() });
    }
    if settings.ns.is_empty() || settings.ns.contains(&0) || !(settings.t > 0.0) {
        return Err(Error::InvalidConfig("sweep needs positive n values and t > 0".into()));
    }
    let xi = settings.xi.clone().unwrap_or_else(|| default_xi_grid(&model.mu));
    let t = settings.t;
    let a = model.alpha.value();
    let target = |f: &[f64]| ((t * homogenized_symbol(f, law)).exp(), 0.0);
    let cdfs: Vec<MarginalCdf> = (0..d)
        .map(|k| {
            let mut e = vec![0.0; d];
            e[k] = 1.0;
            MarginalCdf::new(law, &e, t)
        })
        .collect::<Result<_>>()?;
    let mut points = Vec::with_capacity(settings.ns.len());
    for &n in &settings.ns {
        let nt = n as f64 * t;
        let run = SimConfig {
            horizon: nt,
            seed: rng::derive_seed(cfg.seed, n),
            record: Record::Endpoints,
            ..cfg.clone()
        };
        let (finals, failures): (Vec<Vec<f64>>, Vec<PathFailure>) = terminal_states(model, &run, settings.n_paths)?;
        let scale = (n as f64).powf(-1.0 / a);
        let ys: Vec<Vec<f64>> = finals
            .iter()
            .map(|x| (0..d).map(|k| scale * (x[k] - cfg.x0[k] - nt * mean_drift[k])).collect())
            .collect();
        let cf = empirical_cf(&ys, &xi)?;
        let (d_n, stderr) = cf.max_distance(target);
        let mut ks = Vec::with_capacity(d);
        let mut alpha_hat = Vec::new();
        for (k, cdf) in cdfs.iter().enumerate() {
            let proj: Vec<f64> = ys.iter().map(|y| y[k]).collect();
            let err = std::cell::RefCell::new(None);
            let dist = ks_one_sample(&proj, |x| {
                cdf.eval(x).unwrap_or_else(|e| {
                    err.borrow_mut().get_or_insert(e);
                    f64::NAN
                })
            });
            if let Some(e) = err.into_inner() {
                return Err(e);
            }
            ks.push(dist);
            if !settings.skip_alpha {
                alpha_hat.push(stability_index_estimate(&proj, rng::derive_seed(run.seed, k as u64))?);
            }
        }
        points.push(SweepPoint { n, d_n, stderr, ks, alpha_hat, failures: failures.len(), cf });
    }
    let monotone = points
        .windows(2)
        .all(|w| w[1].d_n <= w[0].d_n + 2.0 * w[0].stderr.hypot(w[1].stderr));
    let last = points.last().map(|p| p.d_n).unwrap_or(f64::INFINITY);
    Ok(ConvergenceReport {
        alpha: a,
        t,
        n_paths: settings.n_paths,
        threshold: settings.threshold,
        mean_drift: mean_drift.to_vec(),
        monotone,
        pass: monotone && last < settings.threshold,
        points,
    })
}

impl ConvergenceReport {
    pub fn to_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        Ok(serde_json::from_value(v.clone())?)
    }

    /// One row per `n`: `n,d_n,stderr,ks0..,alpha0..,failures`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.mean_drift.len();
        let mut header = String::from("n,d_n,stderr");
        for k in 0..d {
            header.push_str(&format!(",ks{k}"));
        }
        for k in 0..d {
            header.push_str(&format!(",alpha{k}"));
        }
        writeln!(w, "{header},failures")?;
        for p in &self.points {
            let mut row = format!("{},{:e},{:e}", p.n, p.d_n, p.stderr);
            for v in &p.ks {
                row.push_str(&format!(",{v:e}"));
            }
            for k in 0..d {
                match p.alpha_hat.get(k) {
                    Some(a) => row.push_str(&format!(",{}", a.alpha)),
                    None => row.push(','),
                }
            }
            writeln!(w, "{row},{}", p.failures)?;
        }
        Ok(())
    }

    /// Plot data `n,d_n,stderr,alpha_hat,ks`, reporting the coordinate
    /// farthest from the configured index and the largest KS distance.
    pub fn write_plot_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,d_n,stderr,alpha_hat,ks")?;
        for p in &self.points {
            let ks = p.ks.iter().copied().fold(0.0, f64::max);
            let ah = p
                .alpha_hat
                .iter()
                .map(|a| a.alpha)
                .max_by(|x, y| (x - self.alpha).abs().total_cmp(&(y - self.alpha).abs()));
            let ah = ah.map(|v| v.to_string()).unwrap_or_default();
            writeln!(w, "{},{:e},{:e},{ah},{ks:e}", p.n, p.d_n, p.stderr)?;
        }
        Ok(())
    }
}
