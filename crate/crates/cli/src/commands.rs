use std::fs;
use std::path::Path;

use fastphase::instance::{Instance, SchwarzSpec};
use fastphase::pipeline::{fast_phase_retrieve, matching_optimum, rmse_db, FprConfig, WindingChoice};
use fastphase::schwarz::{schwarz_init as init, SchwarzConfig};
use fastphase::tensor::write_tensor;
use fastphase::trustregion::TrustRegionConfig;
use fastphase::winding::{winding_with_rule, DEFAULT_THRESHOLD};
use fastphase::wirtinger::basin_check;
use serde::Serialize;
use serde_json::json;

use crate::{CliResult, Failure, GenArgs, SchwarzInitArgs, SolveArgs, SolverArgs, WindingArgs};

pub fn winding_choice(name: &str) -> Result<WindingChoice, Failure> {
    match name {
        "mirrored" => Ok(WindingChoice::Mirrored {
            threshold: DEFAULT_THRESHOLD,
        }),
        "box" => Ok(WindingChoice::Box),
        other => Err(Failure::Usage(format!(
            "unknown winding rule `{other}`; expected `mirrored` or `box`"
        ))),
    }
}

impl SolverArgs {
    pub fn config(&self) -> Result<FprConfig, Failure> {
        if !(self.epsilon >= 0.0) {
            return Err(Failure::Usage("--epsilon must be non-negative".into()));
        }
        let trust_region = TrustRegionConfig {
            cost_tol: self.epsilon,
            max_outer: self.max_outer,
            use_preconditioner: !self.no_precond,
            ..TrustRegionConfig::default()
        };
        trust_region.validate()?;
        SchwarzConfig::with_factor(self.factor)?;
        Ok(FprConfig {
            oversample_factor: self.factor,
            winding: winding_choice(&self.winding_rule)?,
            lambda: self.lambda,
            trust_region,
            restarts: self.restarts,
            candidates: self.candidates,
            ..FprConfig::default()
        })
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Io(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

pub fn create_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

pub fn gen(a: GenArgs) -> CliResult {
    if a.oversampling < 2 {
        return Err(Failure::Usage("--oversampling must be at least 2".into()));
    }
    let spec = SchwarzSpec::new(a.shape, a.w, a.rho, a.seed.seed)?;
    let instance = Instance::generate(&spec, a.oversampling, a.snr)?;
    instance.save(&a.out)?;
    Ok(())
}

fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        serde_json::Value::Null
    }
}

pub fn solve(a: SolveArgs) -> CliResult {
    let cfg = a.solver.config()?;
    let instance = Instance::load(&a.instance)?;
    let out_dir = a.out.clone().unwrap_or_else(|| a.instance.clone());
    let outcome = fast_phase_retrieve(&instance.y, &instance.support, &cfg)?;
    let r = &outcome.report;

    let (basin, rmse) = match &instance.truth {
        Some(truth) => {
            let x_opt = matching_optimum(truth, &instance.meta.w, outcome.w());
            let basin = basin_check(&outcome.x0, &x_opt, &instance.y, outcome.w())?;
            (Some(basin.inside), Some(rmse_db(&outcome.x, truth)?))
        }
        None => (None, None),
    };
    let report = json!({
        "w": outcome.w().to_string(),
        "winding_tie": outcome.winding_tie(),
        "converged": r.converged,
        "stop": r.stop,
        "iterations": r.iterations,
        "cg_iters_total": r.cg_iters_total,
        "final_cost": r.final_cost(),
        "cost_trace": r.cost_trace,
        "grad_norm_trace": r.grad_norm_trace,
        "restarts_used": outcome.restarts_used,
        "fit_residual": finite_or_null(outcome.fit_residual),
        "basin_inside": basin,
        "rmse_db": rmse.map(finite_or_null),
        "wall_seconds": r.wall_seconds,
    });
    create_dir(&out_dir)?;
    write_tensor(out_dir.join("xhat.fpt"), &outcome.x)?;
    write_json(&out_dir.join("report.json"), &report)?;
    if outcome.winding_tie() {
        eprintln!("fastphase: warning: winding estimate is tied with another index");
    }
    if r.converged {
        Ok(())
    } else {
        Err(Failure::NotConverged(format!(
            "solver stopped without converging ({:?} after {} iterations)",
            r.stop, r.iterations
        )))
    }
}

pub fn winding(a: WindingArgs) -> CliResult {
    let rule = winding_choice(&a.winding_rule)?;
    let instance = Instance::load(&a.instance)?;
    let result = winding_with_rule(&instance.y, &instance.support, rule.into())?;
    let ranked: Vec<String> = result.ranked().iter().take(a.top).map(|w| w.to_string()).collect();
    let out = json!({
        "w": result.w.to_string(),
        "tie": result.tie,
        "ranked": ranked,
    });
    println!("{}", serde_json::to_string_pretty(&out).map_err(|e| Failure::Io(e.to_string()))?);
    Ok(())
}

pub fn schwarz_init(a: SchwarzInitArgs) -> CliResult {
    let cfg = SchwarzConfig::with_factor(a.factor)?;
    let instance = Instance::load(&a.instance)?;
    let w = match a.w {
        Some(w) => w,
        None => winding_with_rule(&instance.y, &instance.support, Default::default())?.w,
    };
    let x0 = init(&instance.y, &w, &instance.support, cfg)?;
    write_tensor(&a.out, &x0)?;
    Ok(())
}
