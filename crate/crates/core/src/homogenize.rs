//! Averaged jump measure `ν̄ = ∫ ν ∘ F_x^{-1} π(dx)`, `F_x y = σ(x) y`, and
//! the limit process it generates.

use std::io::Write;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ergodic::{InvariantEstimate, InvariantMethod};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::periodic::PeriodicCoefficients;
use crate::rng;
use crate::stable::{
    levy_symbol, pushforward, sample_increment, JumpSampler, NoiseSampler, NoiseSpec, SpectralMeasure, StabilityIndex,
};

/// Atoms whose directions are closer than this are merged.
pub const MERGE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub grid: GridSpec,
    pub invariant_method: InvariantMethod,
    /// Number of `±` atom pairs before merging.
    pub raw_pairs: usize,
    /// `Σ_j π_j Σ_k λ_k |σ(x_j) φ_k|^α` evaluated directly.
    pub direct_total_mass: f64,
}

/// Law of the limit process `X*`: index `α` and spectral measure `μ̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogenizedLaw {
    pub alpha: StabilityIndex,
    pub mu_bar: SpectralMeasure,
    pub provenance: Provenance,
}

/// Averages the pushforwards `ν ∘ F_x^{-1}` over the cell centers of `inv`.
///
/// Every cell `x_j` with `π_j > 0` and every atom `(φ, λ)` contributes the
/// atom `(σ(x_j)φ / |σ(x_j)φ|, π_j λ |σ(x_j)φ|^α)`. Near-identical
/// directions are merged in (cell, atom) order.
pub fn homogenized_measure(
    coeffs: &PeriodicCoefficients,
    mu: &SpectralMeasure,
    alpha: StabilityIndex,
    inv: &InvariantEstimate,
) -> Result<HomogenizedLaw> {
    let d = coeffs.dim();
    if mu.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: mu.dim() });
    }
    if inv.grid().dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: inv.grid().dim() });
    }
    let grid = inv.grid();
    let probs = inv.probs();
    let a = alpha.value();
    let per_cell: Vec<Result<Vec<(Vec<f64>, f64)>>> = (0..grid.len())
        .into_par_iter()
        .map(|j| {
            if probs[j] == 0.0 {
                return Ok(Vec::new());
            }
            let s = coeffs.eval_sigma(&grid.center(j));
            let push = pushforward(mu, alpha, &s).map_err(|e| match e {
                Error::SingularMatrix(c) => Error::SingularSigma(c),
                e => e,
            })?;
            Ok(push
                .pairs()
                .iter()
                .map(|&(i, _)| {
                    let atom = &push.atoms()[i];
                    (atom.dir.clone(), probs[j] * atom.weight)
                })
                .collect())
        })
        .collect();
    let mut half = Vec::new();
    for cell in per_cell {
        half.extend(cell?);
    }
    let raw_pairs = half.len();
    let direct_total_mass = direct_mass(coeffs, mu, a, inv);
    let mu_bar = SpectralMeasure::from_pairs(d, half)?.merged(MERGE_TOL)?;
    Ok(HomogenizedLaw {
        alpha,
        mu_bar,
        provenance: Provenance {
            grid: GridSpec::from(grid),
            invariant_method: inv.method,
            raw_pairs,
            direct_total_mass,
        },
    })
}

fn direct_mass(coeffs: &PeriodicCoefficients, mu: &SpectralMeasure, a: f64, inv: &InvariantEstimate) -> f64 {
    let grid = inv.grid();
    let d = coeffs.dim();
    let mut s = vec![0.0; d * d];
    let mut img = vec![0.0; d];
    let mut total = 0.0;
    for (j, p) in inv.probs().iter().enumerate() {
        coeffs.sigma_into(&grid.center(j), &mut s);
        for atom in mu.atoms() {
            for r in 0..d {
                img[r] = (0..d).map(|c| s[r * d + c] * atom.dir[c]).sum();
            }
            let len = img.iter().map(|x| x * x).sum::<f64>().sqrt();
            total += p * atom.weight * len.powf(a);
        }
    }
    total
}

/// `ψ̄(ξ) = -C_α Σ w |⟨ξ, φ⟩|^α` over the atoms of `μ̄`.
pub fn homogenized_symbol(xi: &[f64], law: &HomogenizedLaw) -> f64 {
    levy_symbol(xi, &law.mu_bar, law.alpha)
}

/// One draw of `X*_t`.
pub fn sample_limit<R: RngCore + ?Sized>(law: &HomogenizedLaw, t: f64, rng: &mut R) -> Vec<f64> {
    sample_increment(t, &law.mu_bar, law.alpha, rng)
}

/// Reusable sampler of `X*_t` for large sample counts.
pub fn limit_sampler(law: &HomogenizedLaw) -> NoiseSampler {
    NoiseSampler::new(&law.mu_bar, law.alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailOracle {
    pub radius: f64,
    pub draws: usize,
    /// `ν̄({|y| > R})` from `μ̄`.
    pub predicted: f64,
    pub estimate: f64,
    pub stderr: f64,
}

impl TailOracle {
    pub fn z_score(&self) -> f64 {
        (self.estimate - self.predicted) / self.stderr
    }
}

/// Monte Carlo estimate of `ν̄({|y| > R})`.
///
/// Draws a cell with probability `π_j`, a jump `y` of `ν` restricted to
/// `|y| > r0`, and counts `|σ(x_j) y| > R`. `r0` is `R / sup‖σ‖` over the
/// cell centers, so no contributing jump is lost.
pub fn tail_count_oracle(
    law: &HomogenizedLaw,
    coeffs: &PeriodicCoefficients,
    mu: &SpectralMeasure,
    inv: &InvariantEstimate,
    radius: f64,
    draws: usize,
    seed: u64,
) -> Result<TailOracle> {
    if !(radius > 0.0) || draws == 0 {
        return Err(Error::InvalidConfig("tail oracle needs R > 0 and at least one draw".into()));
    }
    let d = coeffs.dim();
    let grid = inv.grid();
    let sigmas: Vec<Vec<f64>> = (0..grid.len())
        .map(|j| {
            let mut s = vec![0.0; d * d];
            coeffs.sigma_into(&grid.center(j), &mut s);
            s
        })
        .collect();
    let smax = sigmas
        .iter()
        .map(|s| nalgebra::DMatrix::from_row_slice(d, d, s).norm())
        .fold(0.0, f64::max);
    let r0 = radius / smax;
    let sampler = JumpSampler::new(mu, law.alpha, r0);
    let mut cdf = Vec::with_capacity(grid.len());
    let mut acc = 0.0;
    for p in inv.probs() {
        acc += p;
        cdf.push(acc);
    }
    const CHUNKS: usize = 64;
    let hits: Vec<usize> = (0..CHUNKS)
        .into_par_iter()
        .map(|c| {
            let n = draws / CHUNKS + usize::from(c < draws % CHUNKS);
            let mut r = rng::stream(rng::derive_seed(seed, c as u64));
            let mut y = vec![0.0; d];
            let mut hit = 0;
            for _ in 0..n {
                let u = rng::open01(&mut r) * acc;
                let j = cdf.partition_point(|&v| v < u).min(cdf.len() - 1);
                sampler.draw_jump_into(&mut r, &mut y);
                let s = &sigmas[j];
                let len2: f64 = (0..d)
                    .map(|row| {
                        let v: f64 = (0..d).map(|col| s[row * d + col] * y[col]).sum();
                        v * v
                    })
                    .sum();
                if len2 > radius * radius {
                    hit += 1;
                }
            }
            hit
        })
        .collect();
    let hits: usize = hits.iter().sum();
    let q = hits as f64 / draws as f64;
    let scale = sampler.rate();
    Ok(TailOracle {
        radius,
        draws,
        predicted: law.mu_bar.tail_mass(law.alpha, radius),
        estimate: scale * q,
        stderr: scale * (q * (1.0 - q) / draws as f64).sqrt().max(1.0 / draws as f64),
    })
}

#[derive(Serialize, Deserialize)]
struct LawFile {
    #[serde(flatten)]
    noise: NoiseSpec,
    provenance: Provenance,
}

impl HomogenizedLaw {
    /// Noise JSON schema of `μ̄` plus a `provenance` block.
    pub fn to_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(LawFile {
            noise: NoiseSpec::from_measure(&self.mu_bar, self.alpha),
            provenance: self.provenance.clone(),
        })?)
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let f: LawFile = serde_json::from_value(v.clone())?;
        let (mu_bar, alpha) = f.noise.build()?;
        Ok(Self { alpha, mu_bar, provenance: f.provenance })
    }

    /// Weight of `μ̄` binned on the sphere.
    ///
    /// `d = 1`: bins `-1` and `+1`. `d = 2`: `bins` equal angle sectors of
    /// `[0, 2π)`. `d = 3`: `bins × 2·bins` cells in (polar, azimuth).
    pub fn write_sphere_histogram<W: Write>(&self, mut w: W, bins: usize) -> Result<()> {
        use std::f64::consts::{PI, TAU};
        let bins = bins.max(1);
        match self.mu_bar.dim() {
            1 => {
                writeln!(w, "bin,direction,weight")?;
                let mut acc = [0.0; 2];
                for a in self.mu_bar.atoms() {
                    acc[usize::from(a.dir[0] > 0.0)] += a.weight;
                }
                writeln!(w, "0,-1,{:e}", acc[0])?;
                writeln!(w, "1,1,{:e}", acc[1])?;
            }
            2 => {
                writeln!(w, "bin,theta_lo,theta_hi,weight")?;
                let mut acc = vec![0.0; bins];
                for a in self.mu_bar.atoms() {
                    let t = a.dir[1].atan2(a.dir[0]).rem_euclid(TAU);
                    acc[((t / TAU * bins as f64) as usize).min(bins - 1)] += a.weight;
                }
                let h = TAU / bins as f64;
                for (i, v) in acc.iter().enumerate() {
                    writeln!(w, "{i},{},{},{v:e}", i as f64 * h, (i + 1) as f64 * h)?;
                }
            }
            3 => {
                writeln!(w, "bin,theta_lo,theta_hi,phi_lo,phi_hi,weight")?;
                let nphi = 2 * bins;
                let mut acc = vec![0.0; bins * nphi];
                for a in self.mu_bar.atoms() {
                    let th = a.dir[2].clamp(-1.0, 1.0).acos();
                    let ph = a.dir[1].atan2(a.dir[0]).rem_euclid(TAU);
                    let i = ((th / PI * bins as f64) as usize).min(bins - 1);
                    let k = ((ph / TAU * nphi as f64) as usize).min(nphi - 1);
                    acc[i * nphi + k] += a.weight;
                }
                let (ht, hp) = (PI / bins as f64, TAU / nphi as f64);
                for i in 0..bins {
                    for k in 0..nphi {
                        writeln!(
                            w,
                            "{},{},{},{},{},{:e}",
                            i * nphi + k,
                            i as f64 * ht,
                            (i + 1) as f64 * ht,
                            k as f64 * hp,
                            (k + 1) as f64 * hp,
                            acc[i * nphi + k]
                        )?;
                    }
                }
            }
            d => return Err(Error::UnsupportedDimension(d)),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
