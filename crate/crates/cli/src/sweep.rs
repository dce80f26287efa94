use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use fastphase::pipeline::{
    median, noise_sweep, quadrature_study, summarize_noise, wf_comparison, write_rows_csv,
    ExperimentRow, NoiseSweepConfig, QuadratureConfig, WfComparisonConfig, WF_SUCCESS_THRESHOLD,
};
use fastphase::wirtinger::{condition_study, StudyCost};
use fastphase::{MultiIndex, Shape};
use serde_json::json;

use crate::commands::{create_dir, write_json};
use crate::{CliResult, Failure, SeedArg, SolverArgs};

#[derive(Debug, Subcommand)]
pub enum SweepCommand {
    /// RMSE against SNR for objects with a bright impulse.
    Noise(NoiseArgs),
    /// Schwarz-transform error against the resampling factor.
    Quadrature(QuadratureArgs),
    /// Wirtinger Flow from random starts against the fast solver.
    Wf(WfArgs),
    /// Hessian condition number against the dominance ratio.
    Condition(ConditionArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Record real wall-clock times in the CSV (otherwise written as 0 so
    /// reruns are byte-identical).
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    #[command(flatten)]
    pub common: Common,
    /// JSON sweep configuration; overrides the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Support box.
    #[arg(long, default_value = "32x32")]
    pub shape: Shape,
    /// Impulse position.
    #[arg(long, default_value = "0,0")]
    pub impulse_at: MultiIndex,
    /// Impulse magnitude; defaults to N, the number of entries.
    #[arg(long)]
    pub brightness: Option<f64>,
    /// SNR levels in dB; `inf` adds a noiseless control.
    #[arg(long, value_delimiter = ',', default_value = "10,20,30,40,50,60,inf")]
    pub snr: Vec<f64>,
    /// Trials per SNR level.
    #[arg(long, default_value_t = 25)]
    pub trials: usize,
    /// Full scale: 128x128, brightness 128², 100 trials.
    #[arg(long)]
    pub full_scale: bool,
    #[command(flatten)]
    pub seed: SeedArg,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct QuadratureArgs {
    #[command(flatten)]
    pub common: Common,
    /// Support box; measurements are taken on twice this grid.
    #[arg(long, default_value = "8x8")]
    pub shape: Shape,
    /// Resampling factors.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pub factors: Vec<usize>,
    /// Factor of the converged reference transform.
    #[arg(long, default_value_t = 32)]
    pub reference: usize,
    /// Objects per run.
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    /// Dominance ratio of the objects.
    #[arg(long, default_value_t = fastphase::instance::DEFAULT_RHO)]
    pub rho: f64,
    /// Fixed index; drawn uniformly per object when absent.
    #[arg(long)]
    pub w: Option<MultiIndex>,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct WfArgs {
    #[command(flatten)]
    pub common: Common,
    /// Square side lengths.
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,5")]
    pub sides: Vec<usize>,
    /// Random Wirtinger Flow starts per side, spread over the instances.
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    /// Schwarz instances per side.
    #[arg(long, default_value_t = 50)]
    pub instances: usize,
    /// Wirtinger Flow iteration cap.
    #[arg(long, default_value_t = 3000)]
    pub wf_iters: usize,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct ConditionArgs {
    #[command(flatten)]
    pub common: Common,
    /// Support box, at most 256 entries.
    #[arg(long, default_value = "4x4")]
    pub shape: Shape,
    /// Dominance ratios of the entry at the origin.
    #[arg(long, value_delimiter = ',', default_value = "2,10,100,10000,1000000")]
    pub ratios: Vec<f64>,
    /// Cost: `ls`, `reg` or `normalized`.
    #[arg(long, default_value = "normalized")]
    pub cost: String,
    #[command(flatten)]
    pub seed: SeedArg,
}

pub fn run(cmd: SweepCommand) -> CliResult {
    match cmd {
        SweepCommand::Noise(a) => noise(a),
        SweepCommand::Quadrature(a) => quadrature(a),
        SweepCommand::Wf(a) => wf(a),
        SweepCommand::Condition(a) => condition(a),
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, Failure> {
    let file = File::create(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file)))
}

fn csv_failure(e: impl std::fmt::Display) -> Failure {
    Failure::Io(format!("csv: {e}"))
}

fn write_rows(path: &Path, rows: &[ExperimentRow], timings: bool) -> CliResult {
    let file = File::create(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    write_rows_csv(BufWriter::new(file), rows, timings)?;
    Ok(())
}

fn check_jobs(c: &Common) -> CliResult {
    if c.jobs == 0 {
        return Err(Failure::Usage("--jobs must be at least 1".into()));
    }
    create_dir(&c.out)
}

fn noise(a: NoiseArgs) -> CliResult {
    let cfg = match &a.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<NoiseSweepConfig>(&text)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None if a.full_scale => NoiseSweepConfig {
            support: Shape::new([128, 128])?,
            brightness: 128.0 * 128.0,
            trials: 100,
            seed: a.seed.seed,
            solver: a.solver.config()?,
            ..NoiseSweepConfig::desk_scale(a.seed.seed)
        },
        None => NoiseSweepConfig {
            brightness: a.brightness.unwrap_or(a.shape.len() as f64),
            support: a.shape.clone(),
            impulse_at: a.impulse_at.clone(),
            snr_db: a.snr.iter().map(|&s| s.is_finite().then_some(s)).collect(),
            trials: a.trials,
            seed: a.seed.seed,
            solver: a.solver.config()?,
            ..NoiseSweepConfig::desk_scale(a.seed.seed)
        },
    };
    check_jobs(&a.common)?;
    let rows = noise_sweep(&cfg, a.common.jobs)?;
    write_rows(&a.common.out.join("rows.csv"), &rows, a.common.timings)?;
    let levels = summarize_noise(&rows, &cfg);
    let mut medians: Vec<f64> = levels.iter().filter(|l| l.snr_db.is_some()).map(|l| l.median_rmse_db).collect();
    let monotone = medians.windows(2).all(|p| p[1] < p[0]);
    let summary = json!({
        "config": cfg,
        "levels": levels,
        "median_strictly_decreasing": monotone,
        "overall_median_rmse_db": median(&mut medians),
        "rows": rows.len(),
    });
    write_json(&a.common.out.join("summary.json"), &summary)
}

fn quadrature(a: QuadratureArgs) -> CliResult {
    check_jobs(&a.common)?;
    let cfg = QuadratureConfig {
        support: a.shape,
        factors: a.factors,
        reference_factor: a.reference,
        instances: a.instances,
        rho: a.rho,
        seed: a.seed.seed,
        w: a.w,
    };
    let rows = quadrature_study(&cfg, a.common.jobs)?;
    let mut wtr = csv_writer(&a.common.out.join("quadrature.csv"))?;
    wtr.write_record(["instance", "seed", "w", "factor", "identity_error", "reference_error"])
        .map_err(csv_failure)?;
    for r in &rows {
        wtr.write_record([
            r.instance.to_string(),
            r.seed.to_string(),
            r.w.to_string(),
            r.factor.to_string(),
            format!("{:.6e}", r.identity_error),
            format!("{:.6e}", r.reference_error),
        ])
        .map_err(csv_failure)?;
    }
    wtr.flush().map_err(csv_failure)?;
    let per_factor: Vec<_> = cfg
        .factors
        .iter()
        .map(|&f| {
            let mut id: Vec<f64> = rows.iter().filter(|r| r.factor == f).map(|r| r.identity_error).collect();
            let mut rf: Vec<f64> = rows.iter().filter(|r| r.factor == f).map(|r| r.reference_error).collect();
            json!({
                "factor": f,
                "median_identity_error": median(&mut id),
                "max_identity_error": id.iter().copied().fold(0.0, f64::max),
                "median_reference_error": median(&mut rf),
                "max_reference_error": rf.iter().copied().fold(0.0, f64::max),
            })
        })
        .collect();
    write_json(
        &a.common.out.join("summary.json"),
        &json!({ "config": cfg, "factors": per_factor }),
    )
}

fn wf(a: WfArgs) -> CliResult {
    check_jobs(&a.common)?;
    if a.instances == 0 || a.trials == 0 {
        return Err(Failure::Usage("--trials and --instances must be positive".into()));
    }
    let mut cfg = WfComparisonConfig::new(a.sides, a.instances, a.trials.div_ceil(a.instances), a.seed.seed);
    cfg.wirtinger_flow.max_iter = a.wf_iters;
    let (summary, details) = wf_comparison(&cfg, a.common.jobs)?;
    let rows: Vec<ExperimentRow> = details
        .iter()
        .enumerate()
        .map(|(i, d)| ExperimentRow {
            instance_id: i,
            ..d.fpr.clone()
        })
        .collect();
    write_rows(&a.common.out.join("rows.csv"), &rows, a.common.timings)?;
    let mut wtr = csv_writer(&a.common.out.join("wf.csv"))?;
    wtr.write_record(["side", "instance", "seed", "init", "relative_error", "success"])
        .map_err(csv_failure)?;
    for d in &details {
        for (k, e) in d.wf_errors.iter().enumerate() {
            wtr.write_record([
                d.side.to_string(),
                d.instance.to_string(),
                d.seed.to_string(),
                k.to_string(),
                format!("{e:.6e}"),
                (*e <= WF_SUCCESS_THRESHOLD).to_string(),
            ])
            .map_err(csv_failure)?;
        }
    }
    wtr.flush().map_err(csv_failure)?;
    write_json(
        &a.common.out.join("summary.json"),
        &json!({ "config": cfg, "sides": summary }),
    )
}

fn condition(a: ConditionArgs) -> CliResult {
    check_jobs(&a.common)?;
    let cost = match a.cost.as_str() {
        "ls" => StudyCost::Ls,
        "reg" => StudyCost::Reg,
        "normalized" => StudyCost::Normalized,
        other => return Err(Failure::Usage(format!("unknown cost `{other}`"))),
    };
    let plain = condition_study(&a.ratios, &a.shape, cost, false, a.seed.seed)?;
    let scaled = condition_study(&a.ratios, &a.shape, cost, true, a.seed.seed)?;
    let mut wtr = csv_writer(&a.common.out.join("condition.csv"))?;
    wtr.write_record(["ratio", "unpreconditioned", "preconditioned"])
        .map_err(csv_failure)?;
    for (p, s) in plain.iter().zip(&scaled) {
        wtr.write_record([
            p.ratio.to_string(),
            format!("{:.6e}", p.condition_number),
            format!("{:.6e}", s.condition_number),
        ])
        .map_err(csv_failure)?;
    }
    wtr.flush().map_err(csv_failure)?;
    let never_worse = plain
        .iter()
        .zip(&scaled)
        .all(|(p, s)| s.condition_number <= p.condition_number);
    write_json(
        &a.common.out.join("summary.json"),
        &json!({
            "shape": a.shape.to_string(),
            "cost": a.cost,
            "unpreconditioned": plain,
            "preconditioned": scaled,
            "preconditioning_never_worse": never_worse,
        }),
    )
}
