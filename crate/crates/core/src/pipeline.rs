//! End-to-end recovery, the two-measurement masked variant, symmetry-aware
//! error metrics and the experiment drivers.

use std::io::Write;
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{
    add_gaussian_noise, build_decay_mask, complex_normal_grid, generate_schwarz_object, measure,
    rng_from_seed, DecayMask, SchwarzSpec, NOISE_STREAM,
};
use crate::schwarz::{discrete_schwarz_transform, exactness_deviation, schwarz_init, SchwarzConfig};
use crate::tensor::{
    circular_shift, fftn, ifftn, ComplexGrid, Grid, MultiIndex, RealGrid, Shape,
};
use crate::trustregion::{minimize, wirtinger_flow, SolveReport, StopReason, TrustRegionConfig, WirtingerFlowConfig};
use crate::winding::{winding_with_rule, WindingResult, WindingRule};
use crate::wirtinger::{basin_check, CostKind, DEFAULT_LAMBDA};

/// Everything the maskless solver needs besides the measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FprConfig {
    pub oversample_factor: usize,
    pub winding: WindingChoice,
    pub lambda: f64,
    pub trust_region: TrustRegionConfig,
    /// Extra starts tried when `w` is its own reflection.
    pub restarts: usize,
    /// Perturbation size relative to the RMS entry of the initial guess.
    pub restart_scale: f64,
    /// `max|(|F x̂|² − y)| / max y` at or below which no restart is needed.
    pub restart_residual: f64,
    pub restart_seed: u64,
    /// Ranked winding candidates tried, up to reflection, while the fit
    /// residual stays above `restart_residual`.
    pub candidates: usize,
    /// Energy mismatch factor beyond which the guess is rescaled to `Σy`.
    pub energy_band: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum WindingChoice {
    Box,
    Mirrored { threshold: f64 },
}

impl From<WindingChoice> for WindingRule {
    fn from(c: WindingChoice) -> Self {
        match c {
            WindingChoice::Box => WindingRule::Box,
            WindingChoice::Mirrored { threshold } => WindingRule::Mirrored { threshold },
        }
    }
}

impl Default for FprConfig {
    fn default() -> Self {
        FprConfig {
            oversample_factor: 1,
            winding: WindingChoice::Mirrored {
                threshold: crate::winding::DEFAULT_THRESHOLD,
            },
            lambda: DEFAULT_LAMBDA,
            trust_region: TrustRegionConfig::default(),
            restarts: 10,
            restart_scale: 0.01,
            restart_residual: 1e-6,
            restart_seed: 0x5eed,
            candidates: 2,
            energy_band: 4.0,
        }
    }
}

impl FprConfig {
    pub fn schwarz(&self) -> Result<SchwarzConfig> {
        SchwarzConfig::with_factor(self.oversample_factor)
    }
}

#[derive(Clone, Debug)]
pub struct FprOutcome {
    pub x: ComplexGrid,
    pub x0: ComplexGrid,
    pub report: SolveReport,
    pub w: MultiIndex,
    /// The estimate behind `w`; absent when the index was given.
    pub winding: Option<WindingResult>,
    /// Perturbed restarts that were run.
    pub restarts_used: usize,
    pub fit_residual: f64,
}

impl FprOutcome {
    pub fn w(&self) -> &MultiIndex {
        &self.w
    }

    pub fn winding_tie(&self) -> bool {
        self.winding.as_ref().is_some_and(|r| r.tie)
    }
}

/// `max|(|F x|² − y)| / max y`.
pub fn fit_residual(x: &ComplexGrid, y: &RealGrid) -> Result<f64> {
    let fit = measure(x, y.shape())?;
    Ok(fit.zip_map(y, |a, b| (a - b).abs()).max() / y.max())
}

/// Rescale `x0` to the energy `Σy` when its energy is off by more than a
/// factor `band` either way. Noise in `log y` can blow the guess up.
pub fn energy_matched(x0: ComplexGrid, y: &RealGrid, band: f64) -> ComplexGrid {
    let have = x0.norm_sqr();
    let want = y.sum();
    if have > 0.0 && want > 0.0 && (have > band * want || have * band < want) {
        x0.scale((want / have).sqrt())
    } else {
        x0
    }
}

/// Winding estimate, Schwarz initial guess, trust-region refinement.
///
/// When `w` is fixed by the reflection the initial guess is equidistant
/// from the object and its reflection, and the iteration can stall on the
/// symmetric subspace. Small seeded perturbations of the guess break the tie.
pub fn fast_phase_retrieve(y: &RealGrid, support: &Shape, cfg: &FprConfig) -> Result<FprOutcome> {
    let winding = winding_with_rule(y, support, cfg.winding.into())?;
    let mut best = retrieve_at_index(y, support, &winding.w, cfg)?;
    // On very small supports the score can favour a neighbour of the true
    // index; the next candidates are cheap to try.
    let mut tried = vec![winding.w.clone()];
    for w in winding.ranked() {
        if !needs_retry(&best, cfg) || tried.len() >= cfg.candidates {
            break;
        }
        if tried.iter().any(|t| *t == w || *t == w.reflected(support)) {
            continue;
        }
        let out = retrieve_at_index(y, support, &w, cfg)?;
        tried.push(w);
        if out.fit_residual * CANDIDATE_GAIN < best.fit_residual {
            best = out;
        }
    }
    best.winding = Some(winding);
    Ok(best)
}

/// Fit improvement a later winding candidate needs to replace the first;
/// on noisy data every candidate fits imperfectly.
pub const CANDIDATE_GAIN: f64 = 10.0;

/// A poor fit is retried unless the caller asked to stop at a cost.
fn needs_retry(out: &FprOutcome, cfg: &FprConfig) -> bool {
    out.fit_residual > cfg.restart_residual && out.report.stop != StopReason::CostTolerance
}

/// The solver with the dominant index already known.
pub fn retrieve_at_index(y: &RealGrid, support: &Shape, w: &MultiIndex, cfg: &FprConfig) -> Result<FprOutcome> {
    if !(cfg.restart_scale >= 0.0) || !(cfg.restart_residual >= 0.0) {
        return Err(Error::Parameter("restart scale and residual must be non-negative".into()));
    }
    let x0 = energy_matched(schwarz_init(y, w, support, cfg.schwarz()?)?, y, cfg.energy_band);
    let kind = CostKind::Normalized {
        lambda: cfg.lambda,
        w: w.clone(),
    };
    let mut report = minimize(y, &x0, &kind, &cfg.trust_region)?;
    let mut residual = fit_residual(&report.x_final, y)?;
    let mut restarts_used = 0;
    if *w == w.reflected(support) && residual > cfg.restart_residual && report.stop != StopReason::CostTolerance {
        let mut rng = rng_from_seed(cfg.restart_seed);
        let size = cfg.restart_scale * x0.norm() / (support.len() as f64).sqrt();
        while restarts_used < cfg.restarts && residual > cfg.restart_residual {
            restarts_used += 1;
            let nudge = complex_normal_grid(support, &mut rng);
            let start = x0.axpy(size, &nudge);
            let attempt = minimize(y, &start, &kind, &cfg.trust_region)?;
            if attempt.final_cost() < report.final_cost() {
                residual = fit_residual(&attempt.x_final, y)?;
                report = attempt;
            }
        }
    }
    Ok(FprOutcome {
        x: report.x_final.clone(),
        x0,
        report,
        w: w.clone(),
        winding: None,
        restarts_used,
        fit_residual: residual,
    })
}

/// How the decay mask anchor is chosen from `|x|`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskAnchor {
    /// Entry of largest magnitude.
    Argmax,
    /// Corner of the support box that admits the largest base `r`.
    BestCorner,
}

/// Smallest mask value tolerated before division.
pub const MASK_UNDERFLOW: f64 = 1e-300;

pub fn choose_decay_mask(abs_x: &RealGrid, margin: f64, anchor: MaskAnchor) -> Result<DecayMask> {
    let support = abs_x.shape();
    let mask = match anchor {
        MaskAnchor::Argmax => {
            let (k, _) = abs_x
                .data()
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best });
            build_decay_mask(abs_x, &MultiIndex(support.unravel(k)), margin)?
        }
        MaskAnchor::BestCorner => {
            let mut best: Option<DecayMask> = None;
            let mut last_err = None;
            for c in 0..(1usize << support.ndim()) {
                let corner = MultiIndex(
                    support
                        .dims()
                        .iter()
                        .enumerate()
                        .map(|(ax, &n)| if c >> ax & 1 == 1 { n - 1 } else { 0 })
                        .collect(),
                );
                match build_decay_mask(abs_x, &corner, margin) {
                    Ok(m) if best.as_ref().is_none_or(|b| m.base > b.base) => best = Some(m),
                    Ok(_) => {}
                    Err(e) => last_err = Some(e),
                }
            }
            match (best, last_err) {
                (Some(m), _) => m,
                (None, Some(e)) => return Err(e),
                (None, None) => unreachable!("at least one corner"),
            }
        }
    };
    if mask.values.min() < MASK_UNDERFLOW {
        return Err(Error::Infeasible(format!(
            "mask value {:.3e} underflows; a larger base r is needed",
            mask.values.min()
        )));
    }
    Ok(mask)
}

/// The two measurements of the masked scheme: `|x|` and `|F{D x}|²`.
pub fn masked_measurements(x: &ComplexGrid, m: &Shape, margin: f64, anchor: MaskAnchor) -> Result<(RealGrid, RealGrid, DecayMask)> {
    let abs_x = x.abs();
    let mask = choose_decay_mask(&abs_x, margin, anchor)?;
    let y2 = measure(&mask.apply(x), m)?;
    Ok((abs_x, y2, mask))
}

/// Recover `x` (up to a global phase) from `|x|` and `|F{D x}|²`.
pub fn masked_fast_phase(
    abs_x: &RealGrid,
    y2: &RealGrid,
    margin: f64,
    anchor: MaskAnchor,
    cfg: &FprConfig,
) -> Result<ComplexGrid> {
    let mask = choose_decay_mask(abs_x, margin, anchor)?;
    let support = abs_x.shape();
    if y2.shape().dims().iter().zip(support.dims()).any(|(&m, &n)| m < 2 * n) {
        return Err(Error::Dimension(format!("measurement {} must be at least twice {support}", y2.shape())));
    }
    // the mask makes its anchor dominant, so the index is known
    let outcome = retrieve_at_index(y2, support, &mask.anchor, cfg)?;
    // a centred anchor may still come back reflected
    let direct = mask.unapply(&outcome.x);
    let reflected = mask.unapply(&conj_reflect(&outcome.x));
    let mismatch = |c: &ComplexGrid| {
        c.abs()
            .zip_map(abs_x, |a, b| (a - b) * (a - b))
            .sum()
    };
    Ok(if mismatch(&reflected) < mismatch(&direct) { reflected } else { direct })
}

/// `x'_i = conj(x_{n−1−i})`, the reflection that leaves `|F x|²` unchanged.
pub fn conj_reflect(x: &ComplexGrid) -> ComplexGrid {
    let n = x.shape();
    Grid::from_fn(n.clone(), |k| {
        let r: Vec<usize> = k.iter().zip(n.dims()).map(|(&i, &d)| d - 1 - i).collect();
        x.get(&r).conj()
    })
}

#[derive(Clone, Debug)]
pub struct AlignmentResult {
    pub aligned: ComplexGrid,
    /// Circular shift applied on the support grid.
    pub shift: MultiIndex,
    pub phase: Complex64,
    pub flipped: bool,
    pub residual: f64,
}

/// Best match of `candidate` to `truth` over global phase, circular shift
/// and conjugate reflection, all on the support grid.
pub fn align(candidate: &ComplexGrid, truth: &ComplexGrid) -> Result<AlignmentResult> {
    if candidate.shape() != truth.shape() {
        return Err(Error::Dimension("candidate and truth differ in shape".into()));
    }
    let n = truth.shape();
    let t_hat = fftn(truth);
    let mut best: Option<AlignmentResult> = None;
    for flipped in [false, true] {
        let cand = if flipped {
            Grid::from_fn(n.clone(), |k| {
                let neg: Vec<i64> = k.iter().map(|&i| -(i as i64)).collect();
                candidate.data()[n.ravel_wrapped(&neg)].conj()
            })
        } else {
            candidate.clone()
        };
        let corr = ifftn(&t_hat.zip_map(&fftn(&cand), |a, b| a * b.conj()));
        let (k, _) = corr
            .data()
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, z)| if z.norm() > acc.1 { (k, z.norm()) } else { acc });
        let shift = n.unravel(k);
        let offsets: Vec<i64> = shift.iter().map(|&s| s as i64).collect();
        let moved = circular_shift(&cand, &offsets);
        let ip = moved.inner(truth);
        let phase = if ip.norm() > 0.0 { ip / ip.norm() } else { Complex64::new(1.0, 0.0) };
        let aligned = moved.map(|z| z * phase);
        let residual = aligned.sub(truth).norm();
        if best.as_ref().is_none_or(|b| residual < b.residual) {
            best = Some(AlignmentResult {
                aligned,
                shift: MultiIndex(shift),
                phase,
                flipped,
                residual,
            });
        }
    }
    Ok(best.expect("two candidates tried"))
}

pub const RMSE_FLOOR_DB: f64 = -300.0;

/// `10·log₁₀(‖x̂ − x‖ / ‖x‖)` after alignment, floored at −300 dB.
pub fn rmse_db(candidate: &ComplexGrid, truth: &ComplexGrid) -> Result<f64> {
    let norm = truth.norm();
    if !(norm > 0.0) {
        return Err(Error::Domain("truth has zero norm".into()));
    }
    let rel = align(candidate, truth)?.residual / norm;
    Ok(relative_to_db(rel))
}

pub fn relative_to_db(rel: f64) -> f64 {
    if rel > 0.0 {
        (10.0 * rel.log10()).max(RMSE_FLOOR_DB)
    } else {
        RMSE_FLOOR_DB
    }
}

pub fn aligned_relative_error(candidate: &ComplexGrid, truth: &ComplexGrid) -> Result<f64> {
    Ok(align(candidate, truth)?.residual / truth.norm())
}

/// One solved instance of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub instance_id: usize,
    pub seed: u64,
    /// `inf` for noiseless rows.
    pub snr_db: f64,
    pub winding_w: String,
    pub basin_inside: bool,
    pub iterations: usize,
    pub rmse_db: f64,
    pub wall_seconds: f64,
    pub status: String,
}

pub const CSV_HEADER: [&str; 9] = [
    "instance_id",
    "seed",
    "snr_db",
    "w",
    "basin_inside",
    "iterations",
    "rmse_db",
    "wall_seconds",
    "status",
];

/// Serialize rows with the fixed header, LF line endings.
pub fn write_rows_csv<W: Write>(out: W, rows: &[ExperimentRow], timings: bool) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let io = |e: csv::Error| Error::Meta(format!("csv: {e}"));
    wtr.write_record(CSV_HEADER).map_err(io)?;
    for r in rows {
        let snr = if r.snr_db.is_finite() { format!("{}", r.snr_db) } else { "inf".into() };
        let wall = if timings { format!("{:.6}", r.wall_seconds) } else { "0".into() };
        wtr.write_record([
            r.instance_id.to_string(),
            r.seed.to_string(),
            snr,
            r.winding_w.clone(),
            r.basin_inside.to_string(),
            r.iterations.to_string(),
            format!("{:.6}", r.rmse_db),
            wall,
            r.status.clone(),
        ])
        .map_err(io)?;
    }
    wtr.flush().map_err(|e| Error::Meta(format!("csv: {e}")))
}

/// `x_opt` matching the estimated index: the truth, or its reflection when
/// the estimate landed on the mirrored index.
pub fn matching_optimum(truth: &ComplexGrid, true_w: &MultiIndex, w: &MultiIndex) -> ComplexGrid {
    if w != true_w && *w == true_w.reflected(truth.shape()) {
        conj_reflect(truth)
    } else {
        truth.clone()
    }
}

/// Run `f` over `0..count` on `jobs` threads, results in index order.
pub fn run_indexed<T: Send>(count: usize, jobs: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    if jobs <= 1 {
        return (0..count).map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| (0..count).into_par_iter().map(&f).collect()),
        Err(_) => (0..count).map(f).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSweepConfig {
    pub support: Shape,
    pub oversampling: usize,
    pub impulse_at: MultiIndex,
    pub brightness: f64,
    /// `None` entries are noiseless controls.
    pub snr_db: Vec<Option<f64>>,
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub solver: FprConfig,
}

impl NoiseSweepConfig {
    /// 32×32 objects, impulse of brightness 32² at the origin, SNR 10–60 dB
    /// plus a noiseless control, 25 trials per level.
    pub fn desk_scale(seed: u64) -> Self {
        NoiseSweepConfig {
            support: Shape::new([32, 32]).unwrap(),
            oversampling: 2,
            impulse_at: MultiIndex(vec![0, 0]),
            brightness: 1024.0,
            snr_db: vec![Some(10.0), Some(20.0), Some(30.0), Some(40.0), Some(50.0), Some(60.0), None],
            trials: 25,
            seed,
            solver: FprConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.support.contains(&self.impulse_at) {
            return Err(Error::Parameter("impulse lies outside the support".into()));
        }
        if self.oversampling < 2 {
            return Err(Error::Parameter("oversampling must be at least 2".into()));
        }
        if !(self.brightness > 0.0) {
            return Err(Error::Parameter("brightness must be positive".into()));
        }
        if self.trials == 0 {
            return Err(Error::Parameter("trials must be positive".into()));
        }
        Ok(())
    }
}

/// Complex Gaussian object with a real impulse of the given brightness.
pub fn impulse_object(support: &Shape, at: &MultiIndex, brightness: f64, seed: u64) -> ComplexGrid {
    let mut rng = rng_from_seed(seed);
    let mut x = complex_normal_grid(support, &mut rng);
    *x.get_mut(&at.0) = Complex64::new(brightness, 0.0);
    x
}

fn solve_row(
    instance_id: usize,
    seed: u64,
    snr_db: Option<f64>,
    truth: &ComplexGrid,
    true_w: &MultiIndex,
    y: &RealGrid,
    cfg: &FprConfig,
) -> (ExperimentRow, Option<FprOutcome>) {
    let start = Instant::now();
    let snr = snr_db.unwrap_or(f64::INFINITY);
    match fast_phase_retrieve(y, truth.shape(), cfg) {
        Ok(out) => {
            let x_opt = matching_optimum(truth, true_w, out.w());
            let inside = basin_check(&out.x0, &x_opt, y, out.w()).map(|b| b.inside).unwrap_or(false);
            let rmse = rmse_db(&out.x, truth).unwrap_or(f64::NAN);
            let row = ExperimentRow {
                instance_id,
                seed,
                snr_db: snr,
                winding_w: out.w().to_string(),
                basin_inside: inside,
                iterations: out.report.iterations,
                rmse_db: rmse,
                wall_seconds: start.elapsed().as_secs_f64(),
                status: if out.report.converged { "ok".into() } else { "unconverged".into() },
            };
            (row, Some(out))
        }
        Err(e) => {
            let row = ExperimentRow {
                instance_id,
                seed,
                snr_db: snr,
                winding_w: String::new(),
                basin_inside: false,
                iterations: 0,
                rmse_db: f64::NAN,
                wall_seconds: start.elapsed().as_secs_f64(),
                status: format!("error: {e}"),
            };
            (row, None)
        }
    }
}

/// Rows ordered by SNR level, then trial. Trial `t` uses object seed
/// `seed + t` at every SNR level.
pub fn noise_sweep(cfg: &NoiseSweepConfig, jobs: usize) -> Result<Vec<ExperimentRow>> {
    cfg.validate()?;
    let m = cfg.support.scaled(cfg.oversampling);
    let levels = cfg.snr_db.len();
    Ok(run_indexed(levels * cfg.trials, jobs, |id| {
        let (level, trial) = (id / cfg.trials, id % cfg.trials);
        let seed = cfg.seed.wrapping_add(trial as u64);
        let truth = impulse_object(&cfg.support, &cfg.impulse_at, cfg.brightness, seed);
        let clean = measure(&truth, &m).expect("oversampling validated");
        let snr = cfg.snr_db[level];
        let y = match snr {
            Some(s) => add_gaussian_noise(&clean, s, truth.norm_sqr(), seed ^ NOISE_STREAM ^ (level as u64 + 1)),
            None => clean,
        };
        solve_row(id, seed, snr, &truth, &cfg.impulse_at, &y, &cfg.solver).0
    }))
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnrSummary {
    /// `None` for the noiseless control.
    pub snr_db: Option<f64>,
    pub median_rmse_db: f64,
    pub min_rmse_db: f64,
    pub max_rmse_db: f64,
    pub failures: usize,
}

pub fn summarize_noise(rows: &[ExperimentRow], cfg: &NoiseSweepConfig) -> Vec<SnrSummary> {
    cfg.snr_db
        .iter()
        .enumerate()
        .map(|(level, &snr)| {
            let chunk = &rows[level * cfg.trials..(level + 1) * cfg.trials];
            let mut values: Vec<f64> = chunk.iter().map(|r| r.rmse_db).collect();
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            SnrSummary {
                snr_db: snr,
                median_rmse_db: median(&mut values),
                min_rmse_db: min,
                max_rmse_db: max,
                failures: chunk.iter().filter(|r| r.status != "ok").count(),
            }
        })
        .collect()
}

/// Aligned relative error at or below which a recovery counts as a success.
pub const WF_SUCCESS_THRESHOLD: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WfComparisonConfig {
    pub sides: Vec<usize>,
    /// Schwarz instances per side.
    pub instances: usize,
    /// Random Wirtinger Flow starts per instance.
    pub inits_per_instance: usize,
    pub rho: f64,
    pub seed: u64,
    #[serde(default)]
    pub wirtinger_flow: WirtingerFlowConfig,
    #[serde(default)]
    pub solver: FprConfig,
}

impl WfComparisonConfig {
    pub fn new(sides: Vec<usize>, instances: usize, inits_per_instance: usize, seed: u64) -> Self {
        WfComparisonConfig {
            sides,
            instances,
            inits_per_instance,
            rho: crate::instance::DEFAULT_RHO,
            seed,
            wirtinger_flow: WirtingerFlowConfig::default(),
            solver: FprConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WfSideSummary {
    pub side: usize,
    pub instances: usize,
    pub wf_trials: usize,
    pub wf_successes: usize,
    pub wf_success_rate: f64,
    pub fpr_successes: usize,
    pub fpr_success_rate: f64,
    /// Largest `max|(|F x̂|² − y)| / max y` over the fast recoveries.
    pub fpr_max_residual: f64,
    pub success_threshold: f64,
}

#[derive(Clone, Debug)]
pub struct WfInstanceResult {
    pub side: usize,
    pub instance: usize,
    pub seed: u64,
    pub w: MultiIndex,
    pub fpr: ExperimentRow,
    pub fpr_relative_error: f64,
    pub fpr_residual: f64,
    pub wf_errors: Vec<f64>,
}

/// Schwarz instance `index` of a given side; `w` is drawn uniformly.
pub fn wf_instance(side: usize, rho: f64, seed: u64) -> Result<(ComplexGrid, MultiIndex)> {
    let support = Shape::new([side, side])?;
    let mut rng = rng_from_seed(seed ^ 0x5eed_0f_57de);
    let w = MultiIndex(vec![
        rand::Rng::random_range(&mut rng, 0..side),
        rand::Rng::random_range(&mut rng, 0..side),
    ]);
    let x = generate_schwarz_object(&SchwarzSpec::new(support, w.clone(), rho, seed)?)?;
    Ok((x, w))
}

pub fn wf_comparison(cfg: &WfComparisonConfig, jobs: usize) -> Result<(Vec<WfSideSummary>, Vec<WfInstanceResult>)> {
    if cfg.instances == 0 || cfg.inits_per_instance == 0 {
        return Err(Error::Parameter("instances and inits must be positive".into()));
    }
    let mut summaries = Vec::new();
    let mut details = Vec::new();
    for (side_index, &side) in cfg.sides.iter().enumerate() {
        if side == 0 {
            return Err(Error::Parameter("side lengths must be positive".into()));
        }
        let base = cfg.seed.wrapping_add((side_index as u64) << 32);
        let results = run_indexed(cfg.instances, jobs, |i| -> Result<WfInstanceResult> {
            let seed = base.wrapping_add(i as u64);
            let (truth, w) = wf_instance(side, cfg.rho, seed)?;
            let support = truth.shape().clone();
            let m = support.scaled(2);
            let y = measure(&truth, &m)?;
            let (fpr, out) = solve_row(i, seed, None, &truth, &w, &y, &cfg.solver);
            let (fpr_err, residual) = match out {
                Some(out) => (aligned_relative_error(&out.x, &truth)?, out.fit_residual),
                None => (f64::INFINITY, f64::INFINITY),
            };
            let mut rng = rng_from_seed(seed ^ 0xa11_1417);
            let energy = (y.sum() / support.len() as f64).sqrt();
            let wf_errors = (0..cfg.inits_per_instance)
                .map(|_| {
                    let x0 = complex_normal_grid(&support, &mut rng).scale(energy);
                    let rep = wirtinger_flow(&y, &x0, &CostKind::Ls, &cfg.wirtinger_flow)?;
                    aligned_relative_error(&rep.x_final, &truth)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(WfInstanceResult {
                side,
                instance: i,
                seed,
                w,
                fpr,
                fpr_relative_error: fpr_err,
                fpr_residual: residual,
                wf_errors,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let wf_trials = cfg.instances * cfg.inits_per_instance;
        let wf_successes = results
            .iter()
            .flat_map(|r| &r.wf_errors)
            .filter(|&&e| e <= WF_SUCCESS_THRESHOLD)
            .count();
        let fpr_successes = results.iter().filter(|r| r.fpr_relative_error <= WF_SUCCESS_THRESHOLD).count();
        summaries.push(WfSideSummary {
            side,
            instances: cfg.instances,
            wf_trials,
            wf_successes,
            wf_success_rate: wf_successes as f64 / wf_trials as f64,
            fpr_successes,
            fpr_success_rate: fpr_successes as f64 / cfg.instances as f64,
            fpr_max_residual: results.iter().map(|r| r.fpr_residual).fold(0.0, f64::max),
            success_threshold: WF_SUCCESS_THRESHOLD,
        });
        details.extend(results);
    }
    Ok((summaries, details))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRow {
    pub instance: usize,
    pub seed: u64,
    pub w: MultiIndex,
    pub factor: usize,
    /// Deviation from samples of `X + X†_{−w}`.
    pub identity_error: f64,
    /// Deviation from the transform computed at the reference factor.
    pub reference_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub support: Shape,
    pub factors: Vec<usize>,
    pub reference_factor: usize,
    pub instances: usize,
    pub rho: f64,
    pub seed: u64,
    /// Fixed index for every instance; `None` draws it uniformly.
    pub w: Option<MultiIndex>,
}

/// Error of the Schwarz transform as the resampling factor grows.
pub fn quadrature_study(cfg: &QuadratureConfig, jobs: usize) -> Result<Vec<QuadratureRow>> {
    if cfg.factors.contains(&0) || cfg.reference_factor == 0 {
        return Err(Error::Parameter("factors must be at least 1".into()));
    }
    let m = cfg.support.scaled(2);
    let rows = run_indexed(cfg.instances, jobs, |i| -> Result<Vec<QuadratureRow>> {
        let seed = cfg.seed.wrapping_add(i as u64);
        let w = match &cfg.w {
            Some(w) => w.clone(),
            None => {
                let mut rng = rng_from_seed(seed ^ 0x9a_d0);
                MultiIndex(
                    cfg.support
                        .dims()
                        .iter()
                        .map(|&n| rand::Rng::random_range(&mut rng, 0..n))
                        .collect(),
                )
            }
        };
        let x = generate_schwarz_object(&SchwarzSpec::new(cfg.support.clone(), w.clone(), cfg.rho, seed)?)?;
        let y = measure(&x, &m)?;
        let reference = discrete_schwarz_transform(&y, &w, SchwarzConfig::with_factor(cfg.reference_factor)?)?
            .map(|z| (0.5 * z).exp());
        cfg.factors
            .iter()
            .map(|&factor| {
                let sc = SchwarzConfig::with_factor(factor)?;
                let here = discrete_schwarz_transform(&y, &w, sc)?.map(|z| (0.5 * z).exp());
                Ok(QuadratureRow {
                    instance: i,
                    seed,
                    w: w.clone(),
                    factor,
                    identity_error: exactness_deviation(&x, &w, &m, sc)?,
                    reference_error: crate::schwarz::max_relative_gap(&here, &reference),
                })
            })
            .collect()
    });
    Ok(rows.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect())
}
