//! Trust-region Newton-CG (Steihaug) over the real-imaginary stacked
//! parameterization, and a fixed-step Wirtinger Flow baseline.

use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ComplexGrid, Grid, RealGrid};
use crate::wirtinger::{CostKind, Objective, StackedDiagonal, PRECONDITIONER_FLOOR};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrustRegionConfig {
    /// Initial radius; `None` means `0.1·‖x₀‖`.
    pub delta0: Option<f64>,
    /// Radius cap; `None` means `10·‖x₀‖`.
    pub delta_max: Option<f64>,
    pub eta_accept: f64,
    pub shrink: f64,
    pub grow: f64,
    /// CG forcing term; `None` means `min(0.5, √‖g‖)`.
    pub cg_tol_rel: Option<f64>,
    pub cg_max_iter: usize,
    /// Gradient tolerance relative to `‖y‖`.
    pub grad_tol_rel: f64,
    /// Accepted interior steps shorter than `step_tol_rel·‖x‖` end the solve.
    pub step_tol_rel: f64,
    /// Accepted steps lowering the cost by at most `stall_tol_rel·f` end the
    /// solve; this is what stops noisy problems whose minimum is not zero.
    pub stall_tol_rel: f64,
    /// Absolute cost tolerance ε.
    pub cost_tol: f64,
    pub max_outer: usize,
    pub use_preconditioner: bool,
}

impl Default for TrustRegionConfig {
    fn default() -> Self {
        TrustRegionConfig {
            delta0: None,
            delta_max: None,
            eta_accept: 0.1,
            shrink: 0.25,
            grow: 2.0,
            cg_tol_rel: None,
            cg_max_iter: 250,
            grad_tol_rel: 1e-15,
            step_tol_rel: 1e-15,
            stall_tol_rel: 1e-13,
            cost_tol: 0.0,
            max_outer: 500,
            use_preconditioner: true,
        }
    }
}

impl TrustRegionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Parameter(what.to_string()));
        if let Some(d) = self.delta0 {
            if !(d > 0.0) {
                return bad("delta0 must be positive");
            }
        }
        if let Some(d) = self.delta_max {
            if !(d > 0.0) {
                return bad("delta_max must be positive");
            }
        }
        if !(self.eta_accept > 0.0 && self.eta_accept < 0.25) {
            return bad("eta_accept must lie in (0, 1/4)");
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad("shrink must lie in (0, 1)");
        }
        if !(self.grow > 1.0) {
            return bad("grow must exceed 1");
        }
        if self.cg_max_iter == 0 || self.max_outer == 0 {
            return bad("iteration limits must be positive");
        }
        if !(self.grad_tol_rel >= 0.0 && self.step_tol_rel >= 0.0 && self.stall_tol_rel >= 0.0 && self.cost_tol >= 0.0) {
            return bad("tolerances must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    CostTolerance,
    GradientTolerance,
    StepTolerance,
    Stagnation,
    RadiusCollapse,
    MaxIterations,
    ZeroGradient,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub x_final: ComplexGrid,
    /// Cost at the start and after every outer iteration.
    pub cost_trace: Vec<f64>,
    /// Stacked gradient norm at every visited iterate.
    pub grad_norm_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    pub cg_iters_total: usize,
    pub wall_seconds: f64,
}

impl SolveReport {
    pub fn final_cost(&self) -> f64 {
        *self.cost_trace.last().expect("trace starts with the initial cost")
    }
}

#[derive(Clone, Debug)]
pub struct SteihaugStep {
    pub step: ComplexGrid,
    pub boundary_hit: bool,
    pub neg_curv: bool,
    pub iterations: usize,
}

/// Largest `τ ≥ 0` with `‖s + τd‖ = radius`.
fn to_boundary(s: &ComplexGrid, d: &ComplexGrid, radius: f64) -> ComplexGrid {
    let a = d.real_inner(d);
    let b = 2.0 * s.real_inner(d);
    let c = s.real_inner(s) - radius * radius;
    let disc = (b * b - 4.0 * a * c).max(0.0).sqrt();
    // the root is computed without cancellation
    let tau = if b >= 0.0 { -2.0 * c / (b + disc) } else { (-b + disc) / (2.0 * a) };
    s.axpy(tau.max(0.0), d)
}

fn finite(g: &ComplexGrid) -> bool {
    g.data().iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Preconditioned Steihaug CG for `H s = −g` in the ball `‖s‖ ≤ radius`.
///
/// `grad` is the stacked gradient and `hvp` the stacked Hessian action, both
/// written as complex grids (real part, imaginary part).
pub fn steihaug_cg(
    grad: &ComplexGrid,
    mut hvp: impl FnMut(&ComplexGrid) -> ComplexGrid,
    radius: f64,
    precond: Option<&StackedDiagonal>,
    tol: f64,
    max_iter: usize,
) -> Result<SteihaugStep> {
    if !(radius > 0.0) {
        return Err(Error::Parameter(format!("trust radius {radius} must be positive")));
    }
    let apply_m = |r: &ComplexGrid| match precond {
        Some(p) => p.solve(r),
        None => r.clone(),
    };
    let mut s: ComplexGrid = Grid::zeros(grad.shape().clone());
    let mut r = grad.clone();
    let mut z = apply_m(&r);
    let mut d = z.scale(-1.0);
    let mut rz = r.real_inner(&z);
    let g_norm = grad.norm();
    if g_norm == 0.0 {
        return Ok(SteihaugStep {
            step: s,
            boundary_hit: false,
            neg_curv: false,
            iterations: 0,
        });
    }
    for it in 1..=max_iter {
        let hd = hvp(&d);
        if !finite(&hd) {
            return Err(Error::Numeric {
                reason: "non-finite Hessian product in CG".into(),
                trace: Vec::new(),
            });
        }
        let dhd = d.real_inner(&hd);
        if dhd <= 0.0 {
            return Ok(SteihaugStep {
                step: to_boundary(&s, &d, radius),
                boundary_hit: true,
                neg_curv: true,
                iterations: it,
            });
        }
        let alpha = rz / dhd;
        let next = s.axpy(alpha, &d);
        if next.norm() >= radius {
            return Ok(SteihaugStep {
                step: to_boundary(&s, &d, radius),
                boundary_hit: true,
                neg_curv: false,
                iterations: it,
            });
        }
        s = next;
        r = r.axpy(alpha, &hd);
        if r.norm() <= tol * g_norm {
            return Ok(SteihaugStep {
                step: s,
                boundary_hit: false,
                neg_curv: false,
                iterations: it,
            });
        }
        z = apply_m(&r);
        let rz_next = r.real_inner(&z);
        d = d.scale(rz_next / rz).axpy(-1.0, &z);
        rz = rz_next;
    }
    Ok(SteihaugStep {
        step: s,
        boundary_hit: false,
        neg_curv: false,
        iterations: max_iter,
    })
}

fn numeric(reason: &str, trace: &[f64]) -> Error {
    Error::Numeric {
        reason: reason.into(),
        trace: trace.to_vec(),
    }
}

/// Classical trust-region loop on `f(·; y, kind)` starting at `x0`.
pub fn minimize(y: &RealGrid, x0: &ComplexGrid, kind: &CostKind, cfg: &TrustRegionConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let start = Instant::now();
    let objective = Objective::new(y, x0.shape(), kind.clone())?;
    let x0_norm = x0.norm();
    let scale = if x0_norm > 0.0 { x0_norm } else { y.sum().max(f64::MIN_POSITIVE).sqrt() };
    let mut delta = cfg.delta0.unwrap_or(0.1 * scale);
    let delta_max = cfg.delta_max.unwrap_or(10.0 * scale).max(delta);
    let grad_tol = cfg.grad_tol_rel * y.norm();

    let mut x = x0.clone();
    let (mut f, mut g) = objective.cost_and_gradient(&x)?;
    let mut cost_trace = vec![f];
    let mut grad_norm_trace = Vec::new();
    let mut cg_total = 0;
    let mut iterations = 0;
    if !f.is_finite() {
        return Err(numeric("initial cost is not finite", &cost_trace));
    }

    let stop = loop {
        let stacked = g.scale(2.0);
        let g_norm = stacked.norm();
        grad_norm_trace.push(g_norm);
        if f <= cfg.cost_tol {
            break StopReason::CostTolerance;
        }
        if g_norm <= grad_tol {
            break if g_norm == 0.0 { StopReason::ZeroGradient } else { StopReason::GradientTolerance };
        }
        if iterations >= cfg.max_outer {
            break StopReason::MaxIterations;
        }
        if delta <= f64::EPSILON * x.norm().max(f64::MIN_POSITIVE) {
            break StopReason::RadiusCollapse;
        }
        iterations += 1;

        let hess = objective.hessian_at(&x)?;
        let precond = cfg
            .use_preconditioner
            .then(|| hess.stacked_diagonal().floored(PRECONDITIONER_FLOOR));
        let tol = cfg.cg_tol_rel.unwrap_or_else(|| g_norm.sqrt().min(0.5));
        let step = steihaug_cg(&stacked, |u| hess.apply(u), delta, precond.as_ref(), tol, cfg.cg_max_iter)
            .map_err(|e| match e {
                Error::Numeric { reason, .. } => numeric(&reason, &cost_trace),
                other => other,
            })?;
        cg_total += step.iterations;

        let s = &step.step;
        let predicted = -(stacked.real_inner(s) + 0.5 * s.real_inner(&hess.apply(s)));
        let candidate = x.axpy(1.0, s);
        let (f_new, g_new) = objective.cost_and_gradient(&candidate)?;
        if !f_new.is_finite() && !f.is_finite() {
            return Err(numeric("cost became non-finite", &cost_trace));
        }
        let ratio = if predicted > 0.0 && f_new.is_finite() { (f - f_new) / predicted } else { -1.0 };
        let s_norm = s.norm();

        if ratio < 0.25 {
            delta = cfg.shrink * if s_norm > 0.0 { s_norm.min(delta) } else { delta };
        } else if ratio > 0.75 && step.boundary_hit {
            delta = (cfg.grow * delta).min(delta_max);
        }
        if ratio > cfg.eta_accept {
            let stalled = f - f_new <= cfg.stall_tol_rel * f;
            x = candidate;
            f = f_new;
            g = g_new;
            cost_trace.push(f);
            if !step.boundary_hit && s_norm <= cfg.step_tol_rel * x.norm() {
                grad_norm_trace.push(g.norm() * 2.0);
                break StopReason::StepTolerance;
            }
            if stalled {
                grad_norm_trace.push(g.norm() * 2.0);
                break StopReason::Stagnation;
            }
        } else {
            cost_trace.push(f);
        }
    };

    let converged = matches!(
        stop,
        StopReason::CostTolerance | StopReason::GradientTolerance | StopReason::StepTolerance | StopReason::Stagnation
    );
    Ok(SolveReport {
        x_final: x,
        cost_trace,
        grad_norm_trace,
        iterations,
        converged,
        stop,
        cg_iters_total: cg_total,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WirtingerFlowConfig {
    /// Initial step; `None` means `1/(2·max y)`.
    pub step_size: Option<f64>,
    pub max_iter: usize,
    /// Success when the cost drops below this fraction of `f(0)`.
    pub cost_tol_rel: f64,
    /// Stop (unconverged) once the stacked gradient falls below this
    /// fraction of `‖y‖`.
    pub grad_tol_rel: f64,
}

impl Default for WirtingerFlowConfig {
    fn default() -> Self {
        WirtingerFlowConfig {
            step_size: None,
            max_iter: 3000,
            cost_tol_rel: 1e-24,
            grad_tol_rel: 1e-15,
        }
    }
}

/// Gradient descent `x ← x − μ ∇_x̄ f` with step halving whenever the cost
/// would increase.
pub fn wirtinger_flow(y: &RealGrid, x0: &ComplexGrid, kind: &CostKind, cfg: &WirtingerFlowConfig) -> Result<SolveReport> {
    let start = Instant::now();
    let objective = Objective::new(y, x0.shape(), kind.clone())?;
    let mut mu = cfg.step_size.unwrap_or(0.5 / y.max());
    if !(mu > 0.0) {
        return Err(Error::Parameter(format!("step size {mu} must be positive")));
    }
    let zero: ComplexGrid = Grid::zeros(x0.shape().clone());
    let cost_tol = cfg.cost_tol_rel * objective.cost(&zero)?;
    let grad_tol = cfg.grad_tol_rel * y.norm();

    let mut x = x0.clone();
    let (mut f, mut g) = objective.cost_and_gradient(&x)?;
    let mut cost_trace = vec![f];
    let mut grad_norm_trace = Vec::new();
    let mut iterations = 0;
    let stop = loop {
        let g_norm = 2.0 * g.norm();
        grad_norm_trace.push(g_norm);
        if f <= cost_tol {
            break StopReason::CostTolerance;
        }
        if g_norm <= grad_tol {
            break if g_norm == 0.0 { StopReason::ZeroGradient } else { StopReason::GradientTolerance };
        }
        if iterations >= cfg.max_iter {
            break StopReason::MaxIterations;
        }
        iterations += 1;
        loop {
            let candidate = x.axpy(-mu, &g);
            let (f_new, g_new) = objective.cost_and_gradient(&candidate)?;
            if f_new.is_finite() && f_new <= f {
                x = candidate;
                f = f_new;
                g = g_new;
                break;
            }
            mu *= 0.5;
            if mu < f64::MIN_POSITIVE {
                return Err(numeric("step size underflow in Wirtinger Flow", &cost_trace));
            }
        }
        cost_trace.push(f);
    };
    Ok(SolveReport {
        x_final: x,
        cost_trace,
        grad_norm_trace,
        iterations,
        converged: stop == StopReason::CostTolerance,
        stop,
        cg_iters_total: 0,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Dense stacked vector of a complex grid: real parts then imaginary parts.
pub fn stack(g: &ComplexGrid) -> Vec<f64> {
    g.data().iter().map(|z| z.re).chain(g.data().iter().map(|z| z.im)).collect()
}

/// Inverse of [`stack`].
pub fn unstack(v: &[f64], like: &ComplexGrid) -> ComplexGrid {
    let n = like.len();
    Grid::new(
        like.shape().clone(),
        (0..n).map(|i| Complex64::new(v[i], v[i + n])).collect(),
    )
    .expect("length matches")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::complex_normal;
    use crate::tensor::Shape;

    fn vec2(re: f64, im: f64) -> ComplexGrid {
        Grid::new(Shape::new([1]).unwrap(), vec![Complex64::new(re, im)]).unwrap()
    }

    #[test]
    fn identity_hessian_gives_negative_gradient() {
        let g = vec2(0.3, -1.2);
        let step = steihaug_cg(&g, |u| u.clone(), 1e6, None, 1e-12, 10).unwrap();
        assert_eq!(step.iterations, 1);
        assert!(step.step.sub(&g.scale(-1.0)).norm() < 1e-15);
        assert!(!step.boundary_hit);
    }

    #[test]
    fn negative_curvature_goes_to_boundary() {
        let g = vec2(0.0, 1.0);
        let hess = |u: &ComplexGrid| u.map(|z| Complex64::new(z.re, -z.im));
        let step = steihaug_cg(&g, hess, 2.0, None, 1e-12, 10).unwrap();
        assert!(step.neg_curv && step.boundary_hit);
        assert!((step.step.norm() - 2.0).abs() < 1e-12);
        assert!(step.step.data()[0].im < 0.0);
    }

    #[test]
    fn radius_must_be_positive() {
        assert!(steihaug_cg(&vec2(1.0, 0.0), |u| u.clone(), 0.0, None, 0.1, 3).is_err());
    }

    #[test]
    fn stacking_round_trips() {
        let g = Grid::from_fn(Shape::new([2, 2]).unwrap(), |k| Complex64::new(k[0] as f64, k[1] as f64 + 2.0));
        assert_eq!(unstack(&stack(&g), &g), g);
    }

    use crate::instance::{complex_normal_grid, generate_schwarz_object, measure, rng_from_seed, SchwarzSpec};
    use crate::schwarz::{schwarz_init, SchwarzConfig};
    use crate::tensor::MultiIndex;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn spd_step_matches_direct_solve() {
        let shape = Shape::new([3]).unwrap();
        let n = 2 * shape.len();
        let mut rng = rng_from_seed(3);
        let a = DMatrix::from_fn(n, n, |_, _| complex_normal(&mut rng).re);
        let spd = &a * a.transpose() + DMatrix::identity(n, n);
        let g = complex_normal_grid(&shape, &mut rng);
        let hess = |u: &ComplexGrid| unstack((&spd * DVector::from_vec(stack(u))).as_slice(), u);
        let step = steihaug_cg(&g, hess, 1e9, None, 1e-12, 50).unwrap();
        let direct = spd.lu().solve(&(-DVector::from_vec(stack(&g)))).unwrap();
        let got = DVector::from_vec(stack(&step.step));
        assert!((got - &direct).norm() <= 1e-9 * direct.norm());
    }

    #[test]
    fn step_never_leaves_the_ball() {
        let shape = Shape::new([4]).unwrap();
        let mut rng = rng_from_seed(5);
        for radius in [1e-3, 0.1, 1.0, 10.0] {
            let g = complex_normal_grid(&shape, &mut rng);
            let hess = |u: &ComplexGrid| u.map(|z| Complex64::new(0.3 * z.re, -0.1 * z.im));
            let step = steihaug_cg(&g, hess, radius, None, 1e-10, 100).unwrap();
            assert!(step.step.norm() <= radius + 1e-12);
        }
    }

    fn schwarz_problem(side: usize, seed: u64) -> (ComplexGrid, RealGrid, MultiIndex) {
        let n = Shape::new([side, side]).unwrap();
        let w = MultiIndex(vec![1, 0]);
        let x = generate_schwarz_object(&SchwarzSpec::new(n.clone(), w.clone(), 2.0, seed).unwrap()).unwrap();
        let y = measure(&x, &n.scaled(2)).unwrap();
        (x, y, w)
    }

    #[test]
    fn exact_start_stops_immediately() {
        let (x, y, w) = schwarz_problem(4, 1);
        let cfg = TrustRegionConfig {
            cost_tol: 1e-20,
            ..Default::default()
        };
        let rep = minimize(&y, &x, &CostKind::normalized(w), &cfg).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 0);
        assert!(rep.final_cost() <= 1e-20);
    }

    #[test]
    fn solves_are_deterministic_and_monotone() {
        let (x, y, w) = schwarz_problem(6, 2);
        let x0 = schwarz_init(&y, &w, x.shape(), SchwarzConfig::default()).unwrap();
        let kind = CostKind::normalized(w);
        let a = minimize(&y, &x0, &kind, &TrustRegionConfig::default()).unwrap();
        let b = minimize(&y, &x0, &kind, &TrustRegionConfig::default()).unwrap();
        assert_eq!(a.cost_trace, b.cost_trace);
        assert_eq!(a.grad_norm_trace, b.grad_norm_trace);
        assert_eq!(a.x_final, b.x_final);
        assert!(a.cost_trace.windows(2).all(|p| p[1] <= p[0]));
        assert!(a.converged);
    }

    #[test]
    fn cost_tolerance_is_honoured() {
        let (x, y, w) = schwarz_problem(6, 3);
        let x0 = schwarz_init(&y, &w, x.shape(), SchwarzConfig::default()).unwrap();
        let cfg = TrustRegionConfig {
            cost_tol: 1e-4,
            ..Default::default()
        };
        let rep = minimize(&y, &x0, &CostKind::normalized(w), &cfg).unwrap();
        assert_eq!(rep.stop, StopReason::CostTolerance);
        assert!(rep.final_cost() <= 1e-4);
    }

    #[test]
    fn rejects_bad_config() {
        let bad = TrustRegionConfig {
            eta_accept: 0.3,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Parameter(_))));
    }

    #[test]
    fn wirtinger_flow_stays_at_the_origin_saddle() {
        let (x, y, _) = schwarz_problem(3, 4);
        let zero: ComplexGrid = Grid::zeros(x.shape().clone());
        let rep = wirtinger_flow(&y, &zero, &CostKind::Ls, &WirtingerFlowConfig::default()).unwrap();
        assert_eq!(rep.stop, StopReason::ZeroGradient);
        assert!(!rep.converged);
        assert_eq!(rep.x_final, zero);
    }

    #[test]
    fn wirtinger_flow_converges_from_the_schwarz_guess() {
        let (x, y, w) = schwarz_problem(3, 5);
        let x0 = schwarz_init(&y, &w, x.shape(), SchwarzConfig::default()).unwrap();
        let cfg = WirtingerFlowConfig {
            max_iter: 20_000,
            ..Default::default()
        };
        let rep = wirtinger_flow(&y, &x0, &CostKind::Ls, &cfg).unwrap();
        assert!(rep.final_cost() <= 1e-6, "{}", rep.final_cost());
        assert!(rep.cost_trace.windows(2).all(|p| p[1] <= p[0]));
    }
}
