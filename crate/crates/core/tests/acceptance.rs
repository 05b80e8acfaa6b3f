//! Desk-scale acceptance run. Prints one line per criterion and exits with a
//! failure status if any criterion fails. Pass criterion numbers as
//! arguments to run a subset: `cargo test --test acceptance -- 3 5`.

use std::f64::consts::TAU;
use std::time::Instant;

use lvhg_core::corrector::{
    discretize_generator, k_martingale_qv, pde_corrector, solve_poisson, solve_poisson_mc, GeneratorOptions,
    McSettings,
};
use lvhg_core::ergodic::{
    centered_jump_activity, ergodic_variance_decay, estimate_invariant_grid_chain, estimate_invariant_occupation,
    estimate_spectral_gap, fourier_test_functions, mean_drift, GapSettings, InvariantEstimate, InvariantMethod,
    TorusHistogram,
};
use lvhg_core::grid::{GridFunction, TorusGrid};
use lvhg_core::homogenize::{homogenized_measure, tail_count_oracle, HomogenizedLaw};
use lvhg_core::periodic::{family_f1, CoefficientSpec, Lattice, PeriodicCoefficients, SigmaSpec};
use lvhg_core::sim::{terminal_states, Model, SimConfig};
use lvhg_core::stable::{levy_symbol, pushforward};
use lvhg_core::verify::{convergence_sweep, default_xi_grid, empirical_cf, SweepSettings};
use lvhg_core::{Result, SpectralMeasure, StabilityIndex};

struct Outcome {
    pass: bool,
    detail: String,
}

fn alpha() -> StabilityIndex {
    StabilityIndex::new(1.5).unwrap()
}

fn cross(w: f64) -> SpectralMeasure {
    SpectralMeasure::from_pairs(2, vec![(vec![1.0, 0.0], w), (vec![0.0, 1.0], w)]).unwrap()
}

fn f1() -> (PeriodicCoefficients, SpectralMeasure, Model) {
    let c = family_f1().build().unwrap();
    let mu = cross(0.1);
    let m = Model::new(c.clone(), mu.clone(), alpha()).unwrap();
    (c, mu, m)
}

fn uniform_inv(m: usize) -> InvariantEstimate {
    InvariantEstimate {
        histogram: TorusHistogram::uniform(TorusGrid::new(Lattice::unit(2), m).unwrap()),
        method: InvariantMethod::Occupation,
        burn_in: 0.0,
        diagnostics: Default::default(),
    }
}

/// Generator-based π̂ on an m × m grid for F1.
fn f1_invariant(m: usize) -> InvariantEstimate {
    let (c, mu, _) = f1();
    let g = discretize_generator(&c, &mu, alpha(), m, &GeneratorOptions::default()).unwrap();
    g.invariant_estimate(1e-13).unwrap()
}

fn criterion_1() -> Result<(Outcome, String)> {
    let mu = cross(1.0);
    let c = CoefficientSpec::constant(vec![0.0, 0.0]).build()?;
    let model = Model::new(c, mu.clone(), alpha())?;
    let xi = default_xi_grid(&mu);
    let a = alpha().value();
    let mut worst: f64 = 0.0;
    let mut report = Vec::new();
    for n in [1u64, 8, 64] {
        let cfg = SimConfig { seed: 100 + n, ..SimConfig::new(0.1, n as f64, vec![0.0, 0.0], 0) };
        let (finals, _) = terminal_states(&model, &cfg, 10_000)?;
        let s = (n as f64).powf(-1.0 / a);
        let ys: Vec<Vec<f64>> = finals.iter().map(|x| x.iter().map(|v| s * v).collect()).collect();
        let cf = empirical_cf(&ys, &xi)?;
        for p in &cf.points {
            let want = levy_symbol(&p.xi, &mu, alpha()).exp();
            worst = worst.max((p.re - want).hypot(p.im) / p.stderr);
        }
        report.push(cf);
    }
    let json = serde_json::to_string(&report).unwrap();
    Ok((Outcome { pass: worst < 3.0, detail: format!("max |CF - exp(psi)| / stderr = {worst:.2} (< 3)") }, json))
}

fn criterion_2() -> Result<(Outcome, String)> {
    let mu = cross(1.0);
    let spec = CoefficientSpec {
        sigma: SigmaSpec { base: Some(vec![vec![2.0, 0.0], vec![0.0, 1.0]]), diag_modes: vec![] },
        ..CoefficientSpec::constant(vec![0.0, 0.0])
    };
    let c = spec.build()?;
    let inv = uniform_inv(8);
    let law = homogenized_measure(&c, &mu, alpha(), &inv)?;
    let push = pushforward(&mu, alpha(), &c.eval_sigma(&[0.0, 0.0]))?;
    let mut weight_err: f64 = 0.0;
    for atom in mu.atoms() {
        let img = [2.0 * atom.dir[0], atom.dir[1]];
        let len = img[0].hypot(img[1]);
        let expect = atom.weight * len.powf(1.5);
        let found = law
            .mu_bar
            .atoms()
            .iter()
            .find(|b| (b.dir[0] - img[0] / len).abs() < 1e-9 && (b.dir[1] - img[1] / len).abs() < 1e-9)
            .map(|b| b.weight)
            .unwrap_or(f64::NAN);
        let pf = push
            .atoms()
            .iter()
            .find(|b| (b.dir[0] - img[0] / len).abs() < 1e-9 && (b.dir[1] - img[1] / len).abs() < 1e-9)
            .map(|b| b.weight)
            .unwrap_or(f64::NAN);
        weight_err = weight_err.max((found - expect).abs()).max((pf - expect).abs());
    }
    let same_size = law.mu_bar.atoms().len() == push.atoms().len();
    let oracle = tail_count_oracle(&law, &c, &mu, &inv, 2.0, 1_000_000, 7)?;
    let z = oracle.z_score();
    let pass = weight_err.is_finite() && weight_err < 1e-10 && same_size && z.abs() < 3.0;
    let json = serde_json::to_string(&(law.to_json()?, &oracle)).unwrap();
    Ok((
        Outcome { pass, detail: format!("weight error {weight_err:.1e} (< 1e-10), tail oracle z = {z:.2} (|z| < 3)") },
        json,
    ))
}

fn criterion_3() -> Result<Outcome> {
    let mu = cross(1.0);
    let grid = TorusGrid::new(Lattice::unit(2), 16)?;
    let pure = Model::new(CoefficientSpec::constant(vec![0.0, 0.0]).build()?, mu, alpha())?;
    let cfg = SimConfig::new(0.02, 1.0, vec![0.1, 0.2], 31);
    let occ = estimate_invariant_occupation(&pure, &cfg, 20_000.0, 10.0, grid.clone())?;
    let tv_uniform = occ.histogram.tv(&TorusHistogram::uniform(grid.clone()))?;

    let (_, _, model) = f1();
    let cfg = SimConfig::new(0.01, 1.0, vec![0.1, 0.2], 32);
    let occ = estimate_invariant_occupation(&model, &cfg, 100_000.0, 10.0, grid.clone())?;
    let chain = estimate_invariant_grid_chain(&model, &cfg, 1.0, grid, 2_000)?;
    let tv_methods = occ.histogram.tv(&chain.histogram)?;
    Ok(Outcome {
        pass: tv_uniform < 0.02 && tv_methods < 0.03,
        detail: format!("pure noise TV to uniform {tv_uniform:.4} (< 0.02), F1 occupation vs grid chain TV {tv_methods:.4} (< 0.03)"),
    })
}

fn criterion_4() -> Result<Outcome> {
    // manufactured solution on F1
    let (c, mu, model) = f1();
    let opts = GeneratorOptions::default();
    let g = discretize_generator(&c, &mu, alpha(), 32, &opts)?;
    let pi = g.stationary(1e-13)?;
    let mut target =
        GridFunction::from_fn(g.grid.clone(), |x| (TAU * x[0]).sin() * (TAU * x[1]).cos() + 0.3 * (TAU * x[1]).sin());
    let mean: f64 = target.values.iter().zip(&pi).map(|(a, b)| a * b).sum();
    target.values.iter_mut().for_each(|v| *v -= mean);
    let sol = solve_poisson(&g, &pi, &g.apply_fn(&target), 1e-11)?;
    let manu = sol.psi.values.iter().zip(&target.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    // Fourier mode, d = 1, m = 256
    let line = SpectralMeasure::from_pairs(1, vec![(vec![1.0], 1.0)])?;
    let c1 = CoefficientSpec::constant(vec![0.0]).build()?;
    let g1 = discretize_generator(&c1, &line, alpha(), 256, &opts)?;
    let u = GridFunction::from_fn(g1.grid.clone(), |x| (TAU * x[0]).cos());
    let au = g1.apply_fn(&u);
    let lam = levy_symbol(&[TAU], &line, alpha());
    let eig = au
        .values
        .iter()
        .zip(&u.values)
        .map(|(v, c)| (v - lam * c).abs() / lam.abs())
        .fold(0.0, f64::max);

    // PDE (m = 64) against Monte Carlo at the centers of an 8 x 8 grid
    let gf = discretize_generator(&c, &mu, alpha(), 64, &opts)?;
    let (psi, _) = pde_corrector(&gf, &c, 1e-10)?;
    let pi8 = gf.invariant_estimate(1e-13)?.histogram.coarsen(8)?.probs;
    let pb = psi.mean_drift.clone();
    let cc = c.clone();
    let f = move |w: &[f64], out: &mut [f64]| {
        let b = cc.eval_b(w);
        for k in 0..2 {
            out[k] = b[k] - pb[k];
        }
    };
    let cfg = SimConfig::new(0.01, 1.0, vec![0.0, 0.0], 41);
    let settings = McSettings { horizon: 1.5, paths_per_cell: 30_000, m: 8 };
    let mc = solve_poisson_mc(&model, &cfg, &f, 2, &settings, None, Some(&pi8))?;
    let mut rel: f64 = 0.0;
    for k in 0..2 {
        let sup = psi.components[k].sup_norm();
        let diff = mc
            .grid()
            .centers()
            .iter()
            .enumerate()
            .map(|(i, x)| (mc.components[k].values[i] - mc.mean[k] - psi.components[k].interpolate(x)).abs())
            .fold(0.0, f64::max);
        rel = rel.max(diff / sup);
    }
    Ok(Outcome {
        pass: manu < 1e-7 && eig < 0.02 && rel < 0.10,
        detail: format!(
            "manufactured error {manu:.1e} (< 1e-7), Fourier eigenvalue error {:.2}% (< 2%), PDE vs MC sup difference {:.1}% (< 10%)",
            100.0 * eig,
            100.0 * rel
        ),
    })
}

fn criterion_5() -> Result<Outcome> {
    let (c, mu, model) = f1();
    let opts = GeneratorOptions::default();
    let g = discretize_generator(&c, &mu, alpha(), 32, &opts)?;
    let (psi, _) = pde_corrector(&g, &c, 1e-10)?;
    let cfg = SimConfig::new(0.02, 1.0, vec![0.0, 0.0], 51);
    let r = k_martingale_qv(&model, &cfg, &psi, &[16, 64, 256, 1024], 1.0, 1_000, &opts)?;
    let slope = r.slope.as_ref().map(|s| s.slope).unwrap_or(f64::NAN);
    Ok(Outcome {
        pass: (slope - r.expected_slope).abs() <= 0.15,
        detail: format!("QV slope {slope:.3} vs {:.3} (within 0.15)", r.expected_slope),
    })
}

fn criterion_6() -> Result<Outcome> {
    let (_, _, model) = f1();
    let inv = f1_invariant(64);
    let p = centered_jump_activity(&model, &inv);
    let cfg = SimConfig::new(0.01, 1.0, vec![0.0, 0.0], 61);
    let gap = GapSettings {
        total_time: 20_000.0,
        burn_in: 10.0,
        lags: vec![0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.6],
        batches: 50,
    };
    let tfs = fourier_test_functions(model.coeffs.lattice());
    let mixing = estimate_spectral_gap(&model, &cfg, &tfs, &gap)?;
    let decay = ergodic_variance_decay(&model, &cfg, &p, &inv, 1.0, &[4, 16, 64, 256], 2_000, 2.0)?
        .with_bound(&mixing, p.sup_norm(), 0.5);
    let slope = decay.slope.as_ref().map(|s| s.slope).unwrap_or(f64::NAN);
    Ok(Outcome {
        pass: (slope + 1.0).abs() <= 0.2 && decay.within_bound(),
        detail: format!(
            "variance slope {slope:.3} (-1 +/- 0.2), gamma {:.2}, K {:.2}, bound respected: {}",
            mixing.gamma,
            mixing.k,
            decay.within_bound()
        ),
    })
}

fn criterion_7() -> Result<Outcome> {
    let (c, mu, model) = f1();
    let inv = f1_invariant(64);
    let law: HomogenizedLaw = homogenized_measure(&c, &mu, alpha(), &inv)?;
    let pb = mean_drift(&c, &inv);
    let cfg = SimConfig::new(0.02, 1.0, vec![0.0, 0.0], 71);
    let settings = SweepSettings { ns: vec![8, 64, 512], n_paths: 20_000, t: 1.0, threshold: 0.05, xi: None, skip_alpha: false };
    let r = convergence_sweep(&model, &cfg, &law, &pb, &settings)?;
    let last = r.points.last().unwrap();
    let ks = last.ks.iter().copied().fold(0.0, f64::max);
    let alpha_ok = last.alpha_hat.iter().all(|a| (1.45..=1.55).contains(&a.alpha));
    let ds: Vec<String> = r.points.iter().map(|p| format!("D_{}={:.4}", p.n, p.d_n)).collect();
    let ah: Vec<String> = last.alpha_hat.iter().map(|a| format!("{:.3}", a.alpha)).collect();
    Ok(Outcome {
        pass: r.pass && ks < 0.03 && alpha_ok,
        detail: format!(
            "{} (monotone {}, last < 0.05), KS {ks:.4} (< 0.03), alpha_hat [{}] (in [1.45, 1.55])",
            ds.join(" "),
            r.monotone,
            ah.join(", ")
        ),
    })
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

fn criterion_8() -> Result<Outcome> {
    let (_, r1a) = in_pool(1, criterion_1)?;
    let (_, r1b) = in_pool(4, criterion_1)?;
    let (_, r2a) = in_pool(1, criterion_2)?;
    let (_, r2b) = in_pool(4, criterion_2)?;
    let same1 = r1a == r1b;
    let same2 = r2a == r2b;
    Ok(Outcome {
        pass: same1 && same2,
        detail: format!("criterion 1 reports identical at 1/4 threads: {same1}, criterion 2: {same2}"),
    })
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |k: u32| wanted.is_empty() || wanted.contains(&k);
    let criteria: [(u32, &str, fn() -> Result<Outcome>); 8] = [
        (1, "noise exactness", || criterion_1().map(|r| r.0)),
        (2, "pushforward oracle", || criterion_2().map(|r| r.0)),
        (3, "invariant measure", criterion_3),
        (4, "corrector correctness", criterion_4),
        (5, "no enhancement of diffusivity", criterion_5),
        (6, "ergodic L2 decay", criterion_6),
        (7, "limit law", criterion_7),
        (8, "determinism", criterion_8),
    ];
    let mut failed = 0;
    for (k, name, f) in criteria {
        if !run(k) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match f() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let secs = start.elapsed().as_secs_f64();
        println!("criterion {k} ({name}): {} [{secs:.0}s] {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
