use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use lvhg_core::corrector::{discretize_generator, k_martingale_qv, pde_corrector, solve_poisson_mc, CorrectorField};
use lvhg_core::ergodic::{
    centered_jump_activity, ergodic_variance_decay, estimate_invariant_grid_chain, estimate_invariant_occupation,
    estimate_spectral_gap, fourier_test_functions, mean_drift, InvariantEstimate, MixingEstimate,
};
use lvhg_core::grid::TorusGrid;
use lvhg_core::homogenize::homogenized_measure;
use lvhg_core::periodic::{check_wellposed, PeriodicCoefficients};
use lvhg_core::sim::{run_ensemble, write_lvhg1, Model, Record};
use lvhg_core::stable::{validate, NoiseSpec, StabilityIndex};
use lvhg_core::verify::convergence_sweep;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::PiSource;
use crate::output::{read_envelope, Run, VERSION};
use crate::Failure;

pub const INVARIANT_FILE: &str = "invariant.json";
const CORRECTOR_RESIDUAL_LIMIT: f64 = 1e-6;

#[derive(Debug, Serialize)]
struct Check {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn check(id: &'static str, r: std::result::Result<String, String>) -> Check {
    match r {
        Ok(detail) => Check { id, pass: true, detail },
        Err(detail) => Check { id, pass: false, detail },
    }
}

/// Builds the model, mapping input problems to exit code 2.
fn model(run: &Run) -> Result<Model> {
    let (mu, alpha) = run.cfg.noise.build().map_err(Failure::from_core)?;
    let coeffs = run.cfg.coefficients.build().map_err(Failure::from_core)?;
    Model::new(coeffs, mu, alpha).map_err(|e| Failure::from_core(e).into())
}

/// Assumption checks; returns whether all of them hold.
pub fn cmd_validate(run: &Run) -> Result<bool> {
    let noise = &run.cfg.noise;
    let a1 = StabilityIndex::new(noise.alpha);
    let mut checks = vec![check("A1", a1.as_ref().map(|a| format!("alpha = {}", a.value())).map_err(|e| e.to_string()))];
    // A2 does not depend on α; build with a placeholder index if A1 failed
    let placeholder = NoiseSpec { alpha: a1.as_ref().map(|a| a.value()).unwrap_or(1.5), ..noise.clone() };
    let built = placeholder.build();
    checks.push(check(
        "A2",
        built.as_ref().map(|(mu, _)| format!("{} atoms in symmetric pairs", mu.atoms().len())).map_err(|e| e.to_string()),
    ));
    let mut bounds = Value::Null;
    let a3 = match &built {
        Ok((mu, alpha)) => validate(mu, *alpha).map(|b| {
            bounds = serde_json::to_value(&b).expect("bounds serialize");
            format!("c1 = {:.6}, c2 = {:.6}", b.c1, b.c2)
        }),
        Err(_) => Err(lvhg_core::Error::MalformedMeasure("measure did not build".into())),
    };
    checks.push(check("A3", a3.map_err(|e| e.to_string())));
    let coeffs = run.cfg.coefficients.build();
    checks.push(check(
        "A4",
        coeffs
            .as_ref()
            .map(|c| format!("lattice generators {:?}", c.lattice().generators()))
            .map_err(|e| e.to_string()),
    ));
    let mut wellposed = Value::Null;
    let a5 = match &coeffs {
        Ok(c) => {
            let dims = built.as_ref().map(|(mu, _)| mu.dim()).unwrap_or(c.dim());
            if dims != c.dim() {
                Err(format!("noise dimension {dims} differs from coefficient dimension {}", c.dim()))
            } else {
                check_wellposed(c, 64).map_err(|e| e.to_string()).map(|r| {
                    wellposed = serde_json::to_value(&r).expect("report serializes");
                    format!(
                        "min |det sigma| = {:.4}, Lip(b) = {:.3}, Lip(sigma) = {:.3}",
                        r.min_abs_det_sigma, r.lipschitz_b, r.lipschitz_sigma
                    )
                })
            }
        }
        Err(e) => Err(e.to_string()),
    };
    checks.push(check("A5", a5));
    let sim = run.cfg.sim_config().validate(run.cfg.coefficients.b.constant.len());
    checks.push(check("sim", sim.map(|_| "simulation settings valid".to_string()).map_err(|e| e.to_string())));
    let pass = checks.iter().all(|c| c.pass);
    for c in &checks {
        println!("{:>4}: {} {}", c.id, if c.pass { "PASS" } else { "FAIL" }, c.detail);
    }
    run.write_json(
        "validate.json",
        "validate",
        json!({ "pass": pass, "checks": checks, "bounds": bounds, "wellposedness": wellposed }),
    )?;
    Ok(pass)
}

fn generator_invariant(run: &Run, model: &Model, m: usize) -> Result<InvariantEstimate> {
    let opts = run.cfg.corrector.as_ref().map(|c| c.generator.clone()).unwrap_or_default();
    let g = discretize_generator(&model.coeffs, &model.mu, model.alpha, m, &opts)?;
    Ok(g.invariant_estimate(1e-13)?)
}

fn write_invariant(run: &Run, stem: &str, inv: &InvariantEstimate) -> Result<()> {
    run.write_json(&format!("{stem}.json"), "invariant", inv.to_json()?)?;
    run.write_csv(&format!("{stem}.csv"), |w| inv.write_csv(w))
}

/// Both Monte Carlo estimators of π, their TV distance, and the optional
/// mixing and variance-decay diagnostics.
pub fn cmd_invariant(run: &Run) -> Result<()> {
    let settings = run
        .cfg
        .invariant
        .as_ref()
        .ok_or_else(|| Failure::validation("config has no \"invariant\" section with simulation budgets"))?;
    let model = model(run)?;
    let cfg = run.cfg.sim_config();
    let grid = TorusGrid::new(model.coeffs.lattice().clone(), settings.m).map_err(Failure::from_core)?;
    let occ = estimate_invariant_occupation(
        &model,
        &cfg,
        settings.occupation.total_time,
        settings.occupation.burn_in,
        grid.clone(),
    )?;
    let chain = estimate_invariant_grid_chain(&model, &cfg, settings.grid_chain.t0, grid, settings.grid_chain.n_samples)?;
    let tv = occ.histogram.tv(&chain.histogram)?;
    let mut occ = occ;
    let mut chain = chain;
    occ.diagnostics.tv_between_methods = Some(tv);
    chain.diagnostics.tv_between_methods = Some(tv);
    println!("occupation vs grid chain TV = {tv:.4}");
    write_invariant(run, "invariant_occupation", &occ)?;
    write_invariant(run, "invariant_grid_chain", &chain)?;
    let downstream = match settings.use_for_downstream {
        PiSource::Occupation => occ.clone(),
        PiSource::GridChain => chain.clone(),
        PiSource::Generator => generator_invariant(run, &model, settings.generator_m)?,
    };
    write_invariant(run, "invariant", &downstream)?;
    let pb = mean_drift(&model.coeffs, &downstream);
    let mut summary = json!({
        "tv_between_methods": tv,
        "tv_halves": occ.diagnostics.tv_halves,
        "effective_sample_size": occ.diagnostics.effective_sample_size,
        "fixed_point_residual": chain.diagnostics.fixed_point_residual,
        "downstream": settings.use_for_downstream,
        "mean_drift": pb,
    });
    if let Some(erg) = &run.cfg.ergodic {
        if let Some(gap) = &erg.gap {
            let tfs = fourier_test_functions(model.coeffs.lattice());
            let mixing = estimate_spectral_gap(&model, &cfg, &tfs, gap)?;
            println!("gamma = {:.4}, K = {:.4}", mixing.gamma, mixing.k);
            run.write_json("mixing.json", "invariant", serde_json::to_value(&mixing)?)?;
            summary["gamma"] = json!(mixing.gamma);
            summary["K"] = json!(mixing.k);
            if let Some(v) = &erg.variance {
                let p = centered_jump_activity(&model, &downstream);
                let decay = ergodic_variance_decay(&model, &cfg, &p, &downstream, v.t, &v.ns, v.n_paths, v.burn_in)?
                    .with_bound(&mixing, p.sup_norm(), v.slack);
                summary["variance_slope"] = json!(decay.slope.as_ref().map(|s| s.slope));
                summary["variance_within_bound"] = json!(decay.within_bound());
                run.write_json("variance_decay.json", "invariant", serde_json::to_value(&decay)?)?;
            }
        }
    }
    run.write_json("invariant_summary.json", "invariant", summary)?;
    Ok(())
}

fn load_mixing(run: &Run) -> Result<Option<MixingEstimate>> {
    let path = run.path("mixing.json");
    if !path.exists() {
        return Ok(None);
    }
    let env = read_envelope(&path, Some(&run.hash))?;
    Ok(Some(serde_json::from_value(env.data).map_err(|e| Failure::validation(format!("mixing.json: {e}")))?))
}

/// Loads `invariant.json` from the output directory, or computes π on the
/// generator grid when it is absent.
fn load_or_compute_invariant(run: &Run, model: &Model, m: usize) -> Result<InvariantEstimate> {
    let path = run.path(INVARIANT_FILE);
    if path.exists() {
        let env = read_envelope(&path, Some(&run.hash))?;
        let inv = InvariantEstimate::from_json(&env.data)
            .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
        if inv.grid().dim() != model.dim() {
            return Err(Failure::validation(format!("{} has the wrong dimension", path.display())).into());
        }
        return Ok(inv);
    }
    let inv = generator_invariant(run, model, m)?;
    write_invariant(run, "invariant", &inv)?;
    Ok(inv)
}

fn write_field(run: &Run, stem: &str, field: &CorrectorField) -> Result<()> {
    run.write_json(&format!("{stem}.json"), "corrector", field.to_json()?)?;
    run.write_csv(&format!("{stem}.csv"), |w| field.write_csv(w))
}

/// PDE corrector, optional Monte Carlo corrector and QV of the corrector
/// martingale. Returns whether the residual contract holds.
pub fn cmd_corrector(run: &Run) -> Result<bool> {
    let settings = run
        .cfg
        .corrector
        .as_ref()
        .ok_or_else(|| Failure::validation("config has no \"corrector\" section"))?;
    let model = model(run)?;
    let cfg = run.cfg.sim_config();
    let genmat = discretize_generator(&model.coeffs, &model.mu, model.alpha, settings.m, &settings.generator)?;
    let (psi, _) = pde_corrector(&genmat, &model.coeffs, settings.tol)?;
    println!("PDE corrector: residual {:.2e}, sup {:.4e}", psi.residual_inf, psi.sup_norm());
    write_field(run, "psi_pde", &psi)?;
    let mut summary = json!({
        "m": settings.m,
        "residual_inf": psi.residual_inf,
        "sup_norm": psi.sup_norm(),
        "mean": psi.mean,
        "mean_drift": psi.mean_drift,
        "quadrature": genmat.report,
        "nnz": genmat.nnz(),
    });
    if let Some(mc) = &settings.mc {
        let mixing = load_mixing(run)?;
        let coeffs: PeriodicCoefficients = model.coeffs.clone();
        let pb = psi.mean_drift.clone();
        let f = move |w: &[f64], out: &mut [f64]| {
            coeffs.b_into(w, out);
            for (o, p) in out.iter_mut().zip(&pb) {
                *o -= p;
            }
        };
        let coarse = if settings.m % mc.m == 0 {
            Some(genmat.invariant_estimate(1e-13)?.histogram.coarsen(settings.m / mc.m)?.probs)
        } else {
            None
        };
        let field = solve_poisson_mc(&model, &cfg, &f, model.dim(), mc, mixing.as_ref(), coarse.as_deref())?;
        let mut diff: f64 = 0.0;
        for (k, comp) in field.components.iter().enumerate() {
            for (i, x) in field.grid().centers().iter().enumerate() {
                diff = diff.max((comp.values[i] - field.mean[k] - psi.components[k].interpolate(x)).abs());
            }
        }
        let rel = diff / psi.sup_norm().max(f64::MIN_POSITIVE);
        println!("Monte Carlo corrector: sup difference to PDE {:.2}%", 100.0 * rel);
        write_field(run, "psi_mc", &field)?;
        summary["mc_sup_difference"] = json!(diff);
        summary["mc_relative_difference"] = json!(rel);
        summary["mc_stat_error"] = json!(field.stat_error);
        summary["mc_truncation_bound"] = json!(field.truncation_bound);
    }
    if let Some(qv) = &settings.qv {
        let report = k_martingale_qv(&model, &cfg, &psi, &qv.ns, qv.t, qv.n_paths, &settings.generator)?;
        let slope = report.slope.as_ref().map(|s| s.slope);
        println!("QV slope {:?} (expected {:.4})", slope, report.expected_slope);
        summary["qv_slope"] = json!(slope);
        summary["qv_expected_slope"] = json!(report.expected_slope);
        run.write_json("qv.json", "corrector", serde_json::to_value(&report)?)?;
    }
    let pass = psi.residual_inf < CORRECTOR_RESIDUAL_LIMIT;
    summary["pass"] = json!(pass);
    run.write_json("corrector.json", "corrector", summary)?;
    Ok(pass)
}

/// Homogenized law and convergence sweep. Returns the sweep verdict.
pub fn cmd_verify(run: &Run) -> Result<bool> {
    let settings = run
        .cfg
        .verify
        .as_ref()
        .ok_or_else(|| Failure::validation("config has no \"verify\" section"))?;
    let model = model(run)?;
    let cfg = run.cfg.sim_config();
    let inv = load_or_compute_invariant(run, &model, settings.pi_m)?;
    let law = homogenized_measure(&model.coeffs, &model.mu, model.alpha, &inv)?;
    run.write_json("law.json", "verify", law.to_json()?)?;
    run.write_csv("law_sphere.csv", |w| law.write_sphere_histogram(w, 72))?;
    let pb = mean_drift(&model.coeffs, &inv);
    let report = convergence_sweep(&model, &cfg, &law, &pb, &settings.sweep)?;
    for p in &report.points {
        println!("n = {:>6}: D_n = {:.4} (se {:.4}), KS {:?}", p.n, p.d_n, p.stderr, p.ks);
    }
    println!("verdict: {}", if report.pass { "PASS" } else { "FAIL" });
    run.write_json("convergence.json", "verify", report.to_json()?)?;
    run.write_csv("convergence.csv", |w| report.write_csv(w))?;
    run.write_csv("convergence_plot.csv", |w| report.write_plot_csv(w))?;
    if settings.save_paths > 0 {
        let n_max = settings.sweep.ns.iter().copied().max().unwrap_or(1);
        let horizon = n_max as f64 * settings.sweep.t;
        let stride = ((horizon / cfg.dt) / 1000.0).ceil().max(1.0) as usize;
        let ens_cfg = lvhg_core::sim::SimConfig { horizon, record: Record::Stride(stride), ..cfg };
        let ens = run_ensemble(&model, &ens_cfg, settings.save_paths)?;
        let path = run.path("paths.lvhg1");
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
        write_lvhg1(&ens, &mut f)?;
        run.write_json(
            "paths.lvhg1.json",
            "verify",
            json!({ "file": "paths.lvhg1", "paths": settings.save_paths, "horizon": horizon, "stride": stride }),
        )?;
    }
    Ok(report.pass)
}

/// Merges every JSON artifact of `dir` into `report.json` plus a CSV index.
/// Returns false when an artifact carries a different config hash.
pub fn cmd_report(run: &Run, dir: &Path) -> Result<bool> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))
        .map_err(|e| Failure::validation(format!("{e:#}")))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".json") && n != "report.json")
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Failure::validation(format!("{} contains no artifacts", dir.display())).into());
    }
    let mut artifacts = BTreeMap::new();
    let mut mismatched = Vec::new();
    let mut rows = Vec::new();
    for name in &names {
        let env = read_envelope(&dir.join(name), None)?;
        let ok = env.config_hash == run.hash;
        if !ok {
            mismatched.push(name.clone());
        }
        rows.push((name.clone(), env.command.clone(), env.config_hash.clone(), ok));
        artifacts.insert(name.clone(), json!({ "command": env.command, "config_hash": env.config_hash, "data": env.data }));
    }
    let pass = mismatched.is_empty();
    for m in &mismatched {
        println!("hash mismatch: {m}");
    }
    let versions = json!({ "lvhg": VERSION, "lvhg-core": VERSION });
    run.write_json(
        "report.json",
        "report",
        json!({ "versions": versions, "hash_mismatch": mismatched, "artifacts": artifacts }),
    )?;
    run.write_csv("report.csv", |w| {
        writeln!(w, "file,command,config_hash,hash_matches")?;
        for (n, c, h, ok) in &rows {
            writeln!(w, "{n},{c},{h},{ok}")?;
        }
        Ok(())
    })?;
    Ok(pass)
}
