use rand::{Rng, RngCore};
use rand_distr::{Distribution, Exp1, Poisson};

use super::{SpectralMeasure, StabilityIndex};
use crate::rng::open01;

/// One jump `y` of the driving noise at `time` (before multiplication by σ).
#[derive(Debug, Clone, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub jump: Vec<f64>,
}

/// Symmetric α-stable draw with characteristic function `exp(-scale^α |ξ|^α)`
/// (Chambers-Mallows-Stuck). Consumes one uniform and one unit exponential.
#[inline]
pub fn sample_stable_1d<R: RngCore + ?Sized>(alpha: StabilityIndex, scale: f64, rng: &mut R) -> f64 {
    scale * standard_stable(alpha.value(), rng)
}

#[inline]
fn standard_stable<R: RngCore + ?Sized>(a: f64, rng: &mut R) -> f64 {
    let v = std::f64::consts::PI * (open01(rng) - 0.5);
    let w: f64 = Exp1.sample(rng);
    let cos_v = v.cos();
    (a * v).sin() / cos_v.powf(1.0 / a) * (((1.0 - a) * v).cos() / w).powf((1.0 - a) / a)
}

/// Precomputed increment sampler for a fixed noise.
///
/// The increment over `dt` is `Σ_k φ_k S_k` over the `±` pairs, where `S_k`
/// is symmetric stable with scale `(2 λ_k C_α dt)^{1/α}`; its characteristic
/// function is exactly `exp(dt ψ(ξ))`.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    dim: usize,
    alpha: f64,
    dirs: Vec<f64>,
    unit_scales: Vec<f64>,
}

impl NoiseSampler {
    pub fn new(mu: &SpectralMeasure, alpha: StabilityIndex) -> Self {
        let a = alpha.value();
        let mut dirs = Vec::with_capacity(mu.pairs().len() * mu.dim());
        let mut unit_scales = Vec::with_capacity(mu.pairs().len());
        for &(i, _) in mu.pairs() {
            let atom = &mu.atoms()[i];
            dirs.extend_from_slice(&atom.dir);
            unit_scales.push((2.0 * atom.weight * alpha.c_alpha()).powf(1.0 / a));
        }
        Self { dim: mu.dim(), alpha: a, dirs, unit_scales }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Writes an increment over a step of length `dt` into `out`.
    #[inline]
    pub fn sample_into<R: RngCore + ?Sized>(&self, dt: f64, rng: &mut R, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        let t = dt.powf(1.0 / self.alpha);
        for (k, &s) in self.unit_scales.iter().enumerate() {
            let z = s * t * standard_stable(self.alpha, rng);
            let dir = &self.dirs[k * self.dim..(k + 1) * self.dim];
            for (o, d) in out.iter_mut().zip(dir) {
                *o += d * z;
            }
        }
    }
}

/// One draw of `L_{t+dt} - L_t`.
pub fn sample_increment<R: RngCore + ?Sized>(
    dt: f64,
    mu: &SpectralMeasure,
    alpha: StabilityIndex,
    rng: &mut R,
) -> Vec<f64> {
    let s = NoiseSampler::new(mu, alpha);
    let mut out = vec![0.0; mu.dim()];
    s.sample_into(dt, rng, &mut out);
    out
}

/// Sampler of the jumps of `L` with `|y| > ε`.
#[derive(Debug, Clone)]
pub struct JumpSampler {
    dim: usize,
    alpha: f64,
    eps: f64,
    rate: f64,
    cumulative: Vec<f64>,
    dirs: Vec<f64>,
}

impl JumpSampler {
    pub fn new(mu: &SpectralMeasure, alpha: StabilityIndex, eps: f64) -> Self {
        let total = mu.total_mass();
        let mut acc = 0.0;
        let mut cumulative = Vec::with_capacity(mu.atoms().len());
        let mut dirs = Vec::with_capacity(mu.atoms().len() * mu.dim());
        for atom in mu.atoms() {
            acc += atom.weight / total;
            cumulative.push(acc);
            dirs.extend_from_slice(&atom.dir);
        }
        Self {
            dim: mu.dim(),
            alpha: alpha.value(),
            eps,
            rate: mu.tail_mass(alpha, eps),
            cumulative,
            dirs,
        }
    }

    /// Jump intensity `ν({|y| > ε})` per unit time.
    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Draws one jump: direction `φ_k` w.p. `λ_k / Σλ`, radius from the Pareto
    /// law `α ε^α r^{-α-1}` on `r > ε`.
    #[inline]
    pub fn draw_jump_into<R: RngCore + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let u = open01(rng);
        let k = self.cumulative.partition_point(|&c| c < u).min(self.cumulative.len() - 1);
        let r = self.eps * open01(rng).powf(-1.0 / self.alpha);
        let dir = &self.dirs[k * self.dim..(k + 1) * self.dim];
        for (o, d) in out.iter_mut().zip(dir) {
            *o = r * d;
        }
    }

    /// All jumps in `(t0, t1]`, sorted by time.
    pub fn sample<R: RngCore + ?Sized>(&self, t0: f64, t1: f64, rng: &mut R) -> Vec<JumpEvent> {
        let mean = (t1 - t0) * self.rate;
        let count = if mean > 0.0 {
            Poisson::new(mean).map(|p| p.sample(rng) as usize).unwrap_or(0)
        } else {
            0
        };
        let mut events: Vec<JumpEvent> = (0..count)
            .map(|_| {
                let time = t1 - (t1 - t0) * rng.random::<f64>();
                let mut jump = vec![0.0; self.dim];
                self.draw_jump_into(rng, &mut jump);
                JumpEvent { time, jump }
            })
            .collect();
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        events
    }
}

/// Jumps of `L` in `(t0, t1]` with `|y| > eps`.
pub fn sample_large_jumps<R: RngCore + ?Sized>(
    t0: f64,
    t1: f64,
    eps: f64,
    mu: &SpectralMeasure,
    alpha: StabilityIndex,
    rng: &mut R,
) -> Vec<JumpEvent> {
    JumpSampler::new(mu, alpha, eps).sample(t0, t1, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::stable::levy_symbol;

    fn cross(w: f64) -> SpectralMeasure {
        SpectralMeasure::from_pairs(2, vec![(vec![1.0, 0.0], w), (vec![0.0, 1.0], w)]).unwrap()
    }

    // (Re, Im, standard error) of the empirical CF of 1-d samples at u.
    fn ecf_1d(xs: &[f64], u: f64) -> (f64, f64, f64) {
        let n = xs.len() as f64;
        let (c, s): (f64, f64) = xs.iter().fold((0.0, 0.0), |(c, s), x| (c + (u * x).cos(), s + (u * x).sin()));
        let (c, s) = (c / n, s / n);
        let var: f64 = xs
            .iter()
            .map(|x| ((u * x).cos() - c).powi(2) + ((u * x).sin() - s).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        (c, s, (var / n).sqrt())
    }

    #[test]
    fn stable_1d_characteristic_function() {
        let a = StabilityIndex::new(1.5).unwrap();
        let mut rng = stream(11);
        let xs: Vec<f64> = (0..100_000).map(|_| sample_stable_1d(a, 1.0, &mut rng)).collect();
        for u in [0.5, 1.0, 2.0] {
            let (c, s, se) = ecf_1d(&xs, u);
            let want = (-(u as f64).powf(1.5)).exp();
            let dev = ((c - want).powi(2) + s * s).sqrt();
            assert!(dev < 3.0 * se, "u={u}: dev {dev} se {se}");
        }
        // finite mean for α > 1, zero by symmetry
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 4.0 * sd / n.sqrt(), "mean {mean}");
    }

    #[test]
    fn stable_1d_scales_linearly() {
        let a = StabilityIndex::new(1.5).unwrap();
        for seed in 0..20 {
            let x1 = sample_stable_1d(a, 1.0, &mut stream(seed));
            let x3 = sample_stable_1d(a, 3.7, &mut stream(seed));
            assert!((x3 - 3.7 * x1).abs() <= 1e-12 * x3.abs().max(1.0));
        }
    }

    fn increments(dt: f64, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let a = StabilityIndex::new(1.5).unwrap();
        let mu = cross(1.0);
        let s = NoiseSampler::new(&mu, a);
        let mut rng = stream(seed);
        (0..n)
            .map(|_| {
                let mut v = vec![0.0; 2];
                s.sample_into(dt, &mut rng, &mut v);
                v
            })
            .collect()
    }

    fn ecf_2d(xs: &[Vec<f64>], xi: [f64; 2]) -> (f64, f64, f64) {
        let proj: Vec<f64> = xs.iter().map(|x| x[0] * xi[0] + x[1] * xi[1]).collect();
        ecf_1d(&proj, 1.0)
    }

    #[test]
    fn increment_cf_matches_symbol_on_grid() {
        let a = StabilityIndex::new(1.5).unwrap();
        let mu = cross(1.0);
        let dt = 0.3;
        let xs = increments(dt, 100_000, 5);
        let vals = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let mut worst: f64 = 0.0;
        for &x in &vals {
            for &y in &vals {
                let (c, s, se) = ecf_2d(&xs, [x, y]);
                let want = (dt * levy_symbol(&[x, y], &mu, a)).exp();
                let dev = ((c - want).powi(2) + s * s).sqrt();
                assert!(dev < 3.0 * se.max(1e-12) || dev < 1e-12, "xi=({x},{y}) dev {dev} se {se}");
                worst = worst.max(dev);
            }
        }
        assert!(worst < 4.0 / (100_000f64).sqrt());
    }

    #[test]
    fn increments_are_additive_and_self_similar() {
        let n = 50_000;
        let one = increments(2.0, n, 1);
        let a = increments(1.0, n, 2);
        let b = increments(1.0, n, 3);
        let sum: Vec<Vec<f64>> = a.iter().zip(&b).map(|(p, q)| vec![p[0] + q[0], p[1] + q[1]]).collect();
        let big = increments(16.0 * 0.1, n, 4);
        let small = increments(0.1, n, 6);
        let rescaled: Vec<Vec<f64>> =
            big.iter().map(|v| v.iter().map(|x| x * 16f64.powf(-1.0 / 1.5)).collect()).collect();
        for xi in [[0.3, 0.0], [0.5, 0.5], [1.0, -0.4], [0.0, 1.5]] {
            let (c1, s1, e1) = ecf_2d(&one, xi);
            let (c2, s2, e2) = ecf_2d(&sum, xi);
            let dev = ((c1 - c2).powi(2) + (s1 - s2).powi(2)).sqrt();
            assert!(dev < 4.0 * (e1 * e1 + e2 * e2).sqrt(), "additivity {xi:?}");
            let (c1, s1, e1) = ecf_2d(&rescaled, xi);
            let (c2, s2, e2) = ecf_2d(&small, xi);
            let dev = ((c1 - c2).powi(2) + (s1 - s2).powi(2)).sqrt();
            assert!(dev < 4.0 * (e1 * e1 + e2 * e2).sqrt(), "self-similarity {xi:?}");
        }
    }

    #[test]
    fn large_jump_count_and_shape() {
        let a = StabilityIndex::new(1.5).unwrap();
        let mu = cross(1.0);
        // ν({|y| > 1}) = 4 / 1.5 per unit time, over a horizon of 3
        let js = JumpSampler::new(&mu, a, 1.0);
        assert!((3.0 * js.rate() - 8.0).abs() < 1e-12);
        let mut rng = stream(9);
        let runs = 10_000;
        let mut counts = Vec::with_capacity(runs);
        for _ in 0..runs {
            let ev = js.sample(2.0, 5.0, &mut rng);
            for w in ev.windows(2) {
                assert!(w[0].time < w[1].time);
            }
            for e in &ev {
                assert!(e.time > 2.0 && e.time <= 5.0);
                let r = (e.jump[0].powi(2) + e.jump[1].powi(2)).sqrt();
                assert!(r > 1.0);
            }
            counts.push(ev.len() as f64);
        }
        let m = counts.iter().sum::<f64>() / runs as f64;
        let sd = (counts.iter().map(|c| (c - m).powi(2)).sum::<f64>() / (runs as f64 - 1.0)).sqrt();
        assert!((m - 8.0).abs() < 3.0 * sd / (runs as f64).sqrt(), "mean count {m}");
    }

    #[test]
    fn huge_threshold_gives_no_jumps() {
        let a = StabilityIndex::new(1.5).unwrap();
        let mu = cross(1.0);
        let mut rng = stream(3);
        for _ in 0..1000 {
            assert!(sample_large_jumps(0.0, 1.0, 1e6, &mu, a, &mut rng).is_empty());
        }
    }

    #[test]
    fn samplers_are_deterministic() {
        let a = StabilityIndex::new(1.5).unwrap();
        let mu = cross(1.0);
        let x = sample_increment(0.1, &mu, a, &mut stream(42));
        let y = sample_increment(0.1, &mu, a, &mut stream(42));
        assert_eq!(x, y);
        let j1 = sample_large_jumps(0.0, 5.0, 0.5, &mu, a, &mut stream(1));
        let j2 = sample_large_jumps(0.0, 5.0, 0.5, &mu, a, &mut stream(1));
        assert_eq!(j1, j2);
    }
}
