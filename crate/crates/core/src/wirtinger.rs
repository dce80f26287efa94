//! Least-squares phase-retrieval costs with their Wirtinger gradients and
//! Hessian actions, plus the basin and Lyapunov diagnostics.
//!
//! Scalings, with `X = F x` and `r = |X|² − y`:
//!
//! | kind        | cost                         | `∇_x̄ f`                  |
//! |-------------|------------------------------|--------------------------|
//! | LS          | `¼‖r‖²`                      | `½ F†[r ⊙ X]`            |
//! | REG         | LS + `(λ/2) Im(x_w)²`        | LS + `(jλ/2) Im(x_w) e_w` |
//! | NORMALIZED  | `⅛‖r/√y‖²` + `(λ/2) Im(x_w)²` | `¼ F†[(r/y) ⊙ X]` + reg   |
//!
//! In the real-imaginary stacked basis the gradient is `2∇_x̄ f` and the
//! Hessian maps `u` to `2(H_xx[u] + H_x̄x[u])`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{generate_schwarz_object, measure, SchwarzSpec};
use crate::tensor::{dft_adjoint, dft_oversampled, ifftn, ComplexGrid, Grid, MultiIndex, RealGrid, Shape};

pub const DEFAULT_LAMBDA: f64 = 1.0;
/// Preconditioner entries are clamped below at this fraction of the largest.
pub const PRECONDITIONER_FLOOR: f64 = 1e-8;
/// Largest support for dense Hessian assembly.
pub const DENSE_LIMIT: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "UPPERCASE")]
pub enum CostKind {
    Ls,
    Reg { lambda: f64, w: MultiIndex },
    Normalized { lambda: f64, w: MultiIndex },
}

impl CostKind {
    pub fn normalized(w: MultiIndex) -> Self {
        CostKind::Normalized {
            lambda: DEFAULT_LAMBDA,
            w,
        }
    }

    pub fn reg(w: MultiIndex) -> Self {
        CostKind::Reg {
            lambda: DEFAULT_LAMBDA,
            w,
        }
    }

    fn regularizer(&self) -> Option<(f64, &MultiIndex)> {
        match self {
            CostKind::Ls => None,
            CostKind::Reg { lambda, w } | CostKind::Normalized { lambda, w } => Some((*lambda, w)),
        }
    }

    fn is_normalized(&self) -> bool {
        matches!(self, CostKind::Normalized { .. })
    }

    /// Prefactor of the data term in the gradient and Hessian blocks.
    fn alpha(&self) -> f64 {
        if self.is_normalized() {
            0.25
        } else {
            0.5
        }
    }
}

/// A cost bound to its measurement and support.
#[derive(Clone, Debug)]
pub struct Objective<'a> {
    y: &'a RealGrid,
    support: Shape,
    kind: CostKind,
    reg_at: Option<(f64, usize)>,
}

impl<'a> Objective<'a> {
    pub fn new(y: &'a RealGrid, support: &Shape, kind: CostKind) -> Result<Self> {
        if !support.fits_in(y.shape()) {
            return Err(Error::Dimension(format!(
                "support {support} does not fit in measurement grid {}",
                y.shape()
            )));
        }
        if kind.is_normalized() && y.data().iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Domain("normalized cost needs strictly positive y".into()));
        }
        let reg_at = match kind.regularizer() {
            Some((lambda, w)) => {
                if !(lambda >= 0.0) {
                    return Err(Error::Parameter(format!("lambda = {lambda} must be nonnegative")));
                }
                if !support.contains(w) {
                    return Err(Error::Parameter(format!("w = ({w}) outside support {support}")));
                }
                Some((lambda, support.ravel(&w.0)))
            }
            None => None,
        };
        Ok(Objective {
            y,
            support: support.clone(),
            kind,
            reg_at,
        })
    }

    pub fn kind(&self) -> &CostKind {
        &self.kind
    }

    pub fn support(&self) -> &Shape {
        &self.support
    }

    pub fn measurement(&self) -> &RealGrid {
        self.y
    }

    fn check(&self, x: &ComplexGrid) -> Result<()> {
        if x.shape() != &self.support {
            return Err(Error::Dimension(format!(
                "object shape {} differs from support {}",
                x.shape(),
                self.support
            )));
        }
        Ok(())
    }

    fn spectrum(&self, x: &ComplexGrid) -> ComplexGrid {
        dft_oversampled(x, self.y.shape()).expect("support checked at construction")
    }

    fn adjoint(&self, v: &ComplexGrid) -> ComplexGrid {
        dft_adjoint(v, &self.support).expect("support checked at construction")
    }

    fn data_term(&self, spectrum: &ComplexGrid) -> f64 {
        let y = self.y.data();
        let sum: f64 = spectrum
            .data()
            .iter()
            .zip(y)
            .map(|(z, &v)| {
                let r = z.norm_sqr() - v;
                if self.kind.is_normalized() {
                    r * r / v
                } else {
                    r * r
                }
            })
            .sum();
        if self.kind.is_normalized() {
            sum / 8.0
        } else {
            sum / 4.0
        }
    }

    fn reg_term(&self, x: &ComplexGrid) -> f64 {
        self.reg_at
            .map(|(lambda, at)| 0.5 * lambda * x.data()[at].im.powi(2))
            .unwrap_or(0.0)
    }

    pub fn cost(&self, x: &ComplexGrid) -> Result<f64> {
        self.check(x)?;
        Ok(self.data_term(&self.spectrum(x)) + self.reg_term(x))
    }

    /// Cost and conjugate cogradient `∇_x̄ f` from one forward transform.
    pub fn cost_and_gradient(&self, x: &ComplexGrid) -> Result<(f64, ComplexGrid)> {
        self.check(x)?;
        let spectrum = self.spectrum(x);
        let cost = self.data_term(&spectrum) + self.reg_term(x);
        let alpha = self.kind.alpha();
        let weighted = Grid::new(
            spectrum.shape().clone(),
            spectrum
                .data()
                .iter()
                .zip(self.y.data())
                .map(|(z, &v)| {
                    let r = z.norm_sqr() - v;
                    let r = if self.kind.is_normalized() { r / v } else { r };
                    z * (alpha * r)
                })
                .collect(),
        )?;
        let mut g = self.adjoint(&weighted);
        if let Some((lambda, at)) = self.reg_at {
            let im = x.data()[at].im;
            g.data_mut()[at] += Complex64::new(0.0, 0.5 * lambda * im);
        }
        Ok((cost, g))
    }

    pub fn gradient(&self, x: &ComplexGrid) -> Result<ComplexGrid> {
        Ok(self.cost_and_gradient(x)?.1)
    }

    /// Hessian at `x`, ready for repeated products.
    pub fn hessian_at(&self, x: &ComplexGrid) -> Result<HessianAt> {
        self.check(x)?;
        let spectrum = self.spectrum(x);
        let alpha = self.kind.alpha();
        let norm = self.kind.is_normalized();
        let (mut diag_w, mut cross_w) = (Vec::with_capacity(spectrum.len()), Vec::with_capacity(spectrum.len()));
        for (z, &v) in spectrum.data().iter().zip(self.y.data()) {
            if norm {
                diag_w.push(alpha * (2.0 * z.norm_sqr() / v - 1.0));
                cross_w.push(z * z * (alpha / v));
            } else {
                diag_w.push(alpha * (2.0 * z.norm_sqr() - v));
                cross_w.push(z * z * alpha);
            }
        }
        let m = spectrum.shape().clone();
        Ok(HessianAt {
            support: self.support.clone(),
            diag_weights: Grid::new(m.clone(), diag_w)?,
            cross_weights: Grid::new(m, cross_w)?,
            reg_at: self.reg_at,
        })
    }
}

/// Hessian blocks frozen at one point.
#[derive(Clone, Debug)]
pub struct HessianAt {
    support: Shape,
    diag_weights: RealGrid,
    cross_weights: ComplexGrid,
    reg_at: Option<(f64, usize)>,
}

impl HessianAt {
    /// `(H_xx[u], H_x̄x[u])`; their sum is the derivative of `∇_x̄ f` along `u`.
    pub fn blocks(&self, u: &ComplexGrid) -> (ComplexGrid, ComplexGrid) {
        let m = self.diag_weights.shape();
        let big_u = dft_oversampled(u, m).expect("support fits");
        let a_spec = big_u.zip_map(&self.diag_weights, |z, w| z * w);
        let b_spec = big_u.zip_map(&self.cross_weights, |z, c| c * z.conj());
        let mut a = dft_adjoint(&a_spec, &self.support).expect("support fits");
        let mut b = dft_adjoint(&b_spec, &self.support).expect("support fits");
        if let Some((lambda, at)) = self.reg_at {
            let uw = u.data()[at];
            a.data_mut()[at] += uw * (0.25 * lambda);
            b.data_mut()[at] -= uw.conj() * (0.25 * lambda);
        }
        (a, b)
    }

    /// Stacked-basis Hessian action, returned in complex form: `2(H_xx[u] + H_x̄x[u])`.
    pub fn apply(&self, u: &ComplexGrid) -> ComplexGrid {
        let (a, b) = self.blocks(u);
        a.zip_map(&b, |p, q| (p + q) * 2.0)
    }

    /// Exact diagonal of the stacked Hessian, from the circulant structure.
    pub fn stacked_diagonal(&self) -> StackedDiagonal {
        let m = self.diag_weights.shape();
        let mean = self.diag_weights.sum() / m.len() as f64;
        // (1/M)·Σ_k c_k e^{+2πj k·l/m}
        let spread = ifftn(&self.cross_weights).scale(1.0 / (m.len() as f64).sqrt());
        let mut re = Grid::zeros(self.support.clone());
        let mut im = Grid::zeros(self.support.clone());
        for (k, idx) in self.support.indices().enumerate() {
            let doubled: Vec<i64> = idx.iter().map(|&i| 2 * i as i64).collect();
            let b = spread.data()[m.ravel_wrapped(&doubled)].re;
            re.data_mut()[k] = 2.0 * (mean + b);
            im.data_mut()[k] = 2.0 * (mean - b);
        }
        if let Some((lambda, at)) = self.reg_at {
            im.data_mut()[at] += lambda;
        }
        StackedDiagonal { re, im }
    }
}

/// Diagonal of the stacked Hessian, split into the real and imaginary halves.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedDiagonal {
    pub re: RealGrid,
    pub im: RealGrid,
}

impl StackedDiagonal {
    pub fn max(&self) -> f64 {
        self.re.max().max(self.im.max())
    }

    /// Clamp every entry below at `floor·max`.
    pub fn floored(&self, floor: f64) -> StackedDiagonal {
        let lo = floor * self.max().max(0.0);
        let lo = if lo > 0.0 { lo } else { f64::MIN_POSITIVE };
        StackedDiagonal {
            re: self.re.map(|&v| v.max(lo)),
            im: self.im.map(|&v| v.max(lo)),
        }
    }

    /// `D⁻¹ v` in the stacked basis.
    pub fn solve(&self, v: &ComplexGrid) -> ComplexGrid {
        Grid::new(
            v.shape().clone(),
            v.data()
                .iter()
                .zip(self.re.data().iter().zip(self.im.data()))
                .map(|(z, (a, b))| Complex64::new(z.re / a, z.im / b))
                .collect(),
        )
        .expect("same shape")
    }

    /// Stacked layout `[re…, im…]`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.re.data().iter().chain(self.im.data()).copied().collect()
    }
}

pub fn cost(x: &ComplexGrid, y: &RealGrid, kind: &CostKind) -> Result<f64> {
    Objective::new(y, x.shape(), kind.clone())?.cost(x)
}

pub fn gradient(x: &ComplexGrid, y: &RealGrid, kind: &CostKind) -> Result<ComplexGrid> {
    Objective::new(y, x.shape(), kind.clone())?.gradient(x)
}

pub fn hvp(x: &ComplexGrid, u: &ComplexGrid, y: &RealGrid, kind: &CostKind) -> Result<(ComplexGrid, ComplexGrid)> {
    if u.shape() != x.shape() {
        return Err(Error::Dimension("direction and point differ in shape".into()));
    }
    Ok(Objective::new(y, x.shape(), kind.clone())?.hessian_at(x)?.blocks(u))
}

/// Floored stacked diagonal, used as a Jacobi preconditioner.
pub fn diag_preconditioner(x: &ComplexGrid, y: &RealGrid, kind: &CostKind) -> Result<StackedDiagonal> {
    Ok(Objective::new(y, x.shape(), kind.clone())?
        .hessian_at(x)?
        .stacked_diagonal()
        .floored(PRECONDITIONER_FLOOR))
}

fn unit(shape: &Shape, j: usize) -> ComplexGrid {
    let n = shape.len();
    let mut u: ComplexGrid = Grid::zeros(shape.clone());
    u.data_mut()[j % n] = if j < n {
        Complex64::new(1.0, 0.0)
    } else {
        Complex64::new(0.0, 1.0)
    };
    u
}

/// Full `2N × 2N` stacked Hessian (real parts first, then imaginary parts).
pub fn hessian_dense(x: &ComplexGrid, y: &RealGrid, kind: &CostKind) -> Result<DMatrix<f64>> {
    let n = x.len();
    if n > DENSE_LIMIT {
        return Err(Error::SizeGuard(format!(
            "dense Hessian needs N <= {DENSE_LIMIT}, got {n}"
        )));
    }
    let h = Objective::new(y, x.shape(), kind.clone())?.hessian_at(x)?;
    let mut mat = DMatrix::zeros(2 * n, 2 * n);
    for j in 0..2 * n {
        let col = h.apply(&unit(x.shape(), j));
        for (i, z) in col.data().iter().enumerate() {
            mat[(i, j)] = z.re;
            mat[(i + n, j)] = z.im;
        }
    }
    Ok(mat)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasinReport {
    pub lhs: f64,
    pub rhs: f64,
    pub inside: bool,
    pub vdot: f64,
}

struct ErrorSpectra {
    e: ComplexGrid,
    r: RealGrid,
}

fn error_spectra(eps: &ComplexGrid, x_opt: &ComplexGrid, m: &Shape) -> Result<ErrorSpectra> {
    let e = dft_oversampled(eps, m)?;
    let star = dft_oversampled(x_opt, m)?;
    let r = e.zip_map(&star, |a, b| (a * b.conj()).re);
    Ok(ErrorSpectra { e, r })
}

/// Basin test for `ε = x₀ − x_opt` and the Lyapunov derivative
/// `V̇ = −(‖E‖₄⁴ + 3⟨|E|², R⟩ + 2‖R‖² + Im(ε_w)²)` with `R = Re(E·conj X*)`.
pub fn basin_check(x0: &ComplexGrid, x_opt: &ComplexGrid, y: &RealGrid, w: &MultiIndex) -> Result<BasinReport> {
    if x0.shape() != x_opt.shape() {
        return Err(Error::Dimension("x0 and x_opt differ in shape".into()));
    }
    if !x0.shape().contains(w) {
        return Err(Error::Parameter(format!("w = ({w}) outside support")));
    }
    let eps = x0.sub(x_opt);
    let ErrorSpectra { e, r } = error_spectra(&eps, x_opt, y.shape())?;
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    let mut cross = 0.0;
    let mut rr = 0.0;
    for (z, &rk) in e.data().iter().zip(r.data()) {
        let e2 = z.norm_sqr();
        lhs += e2 * e2;
        rhs += e2 * rk.abs();
        cross += e2 * rk;
        rr += rk * rk;
    }
    let eps_w = eps.get(&w.0).im;
    let vdot = -(lhs + 3.0 * cross + 2.0 * rr + eps_w * eps_w);
    let zero = eps.data().iter().all(|z| *z == Complex64::default());
    Ok(BasinReport {
        lhs,
        rhs,
        inside: zero || lhs < rhs,
        vdot,
    })
}

/// `|p + g − 2‖|E|² − |R|‖²|` with `p = ‖E‖₄⁴ − 3⟨|E|²,|R|⟩ + 2‖R‖²` and
/// `g = ‖E‖₄⁴ − ⟨|E|²,|R|⟩`, evaluated on the grid `m`.
pub fn sos_identity_residual(eps: &ComplexGrid, x_opt: &ComplexGrid, w: &MultiIndex, m: &Shape) -> Result<f64> {
    if eps.shape() != x_opt.shape() {
        return Err(Error::Dimension("eps and x_opt differ in shape".into()));
    }
    if !eps.shape().contains(w) {
        return Err(Error::Parameter(format!("w = ({w}) outside support")));
    }
    let ErrorSpectra { e, r } = error_spectra(eps, x_opt, m)?;
    let (mut e4, mut er, mut r2, mut sq) = (0.0, 0.0, 0.0, 0.0);
    for (z, &rk) in e.data().iter().zip(r.data()) {
        let e2 = z.norm_sqr();
        e4 += e2 * e2;
        er += e2 * rk.abs();
        r2 += rk * rk;
        sq += (e2 - rk.abs()).powi(2);
    }
    let p = e4 - 3.0 * er + 2.0 * r2;
    let g = e4 - er;
    Ok((p + g - 2.0 * sq).abs())
}

/// Which cost the condition study assembles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyCost {
    Ls,
    Reg,
    Normalized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub ratio: f64,
    pub condition_number: f64,
}

/// Spectral condition number of a symmetric matrix; infinite unless
/// positive definite.
pub fn condition_number(mat: DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(mat).eigenvalues;
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// Condition number of the stacked Hessian at a noiseless solution whose
/// entry at the origin dominates with each given ratio.
pub fn condition_study(
    ratios: &[f64],
    shape: &Shape,
    cost: StudyCost,
    precond: bool,
    seed: u64,
) -> Result<Vec<ConditionRow>> {
    if shape.len() > DENSE_LIMIT {
        return Err(Error::SizeGuard(format!(
            "condition study needs N <= {DENSE_LIMIT}, got {}",
            shape.len()
        )));
    }
    let w = MultiIndex::zeros(shape.ndim());
    let kind = match cost {
        StudyCost::Ls => CostKind::Ls,
        StudyCost::Reg => CostKind::reg(w.clone()),
        StudyCost::Normalized => CostKind::normalized(w.clone()),
    };
    ratios
        .iter()
        .map(|&ratio| {
            let spec = SchwarzSpec::new(shape.clone(), w.clone(), ratio, seed)?;
            let x = generate_schwarz_object(&spec)?;
            let y = measure(&x, &shape.scaled(2))?;
            let mut h = hessian_dense(&x, &y, &kind)?;
            if precond {
                let d = diag_preconditioner(&x, &y, &kind)?.to_vec();
                for i in 0..h.nrows() {
                    for j in 0..h.ncols() {
                        h[(i, j)] /= (d[i] * d[j]).sqrt();
                    }
                }
            }
            Ok(ConditionRow {
                ratio,
                condition_number: condition_number(h),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{complex_normal_grid, rng_from_seed};

    fn kinds(w: &MultiIndex) -> Vec<CostKind> {
        vec![CostKind::Ls, CostKind::reg(w.clone()), CostKind::normalized(w.clone())]
    }

    /// Random point away from any solution, with a measurement from another object.
    fn setup(seed: u64) -> (ComplexGrid, RealGrid, MultiIndex) {
        let n = Shape::new([3, 4]).unwrap();
        let mut rng = rng_from_seed(seed);
        let truth = complex_normal_grid(&n, &mut rng);
        let y = measure(&truth, &n.scaled(2)).unwrap().map(|&v| v + 0.1);
        let x = complex_normal_grid(&n, &mut rng);
        (x, y, MultiIndex(vec![1, 2]))
    }

    fn fd_step(x: &ComplexGrid) -> f64 {
        1e-6 * (1.0 + x.max_abs())
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (x, y, w) = setup(1);
        let mut rng = rng_from_seed(2);
        let h = fd_step(&x);
        for kind in kinds(&w) {
            let g = gradient(&x, &y, &kind).unwrap();
            for _ in 0..20 {
                let d = complex_normal_grid(x.shape(), &mut rng);
                let fd = (cost(&x.axpy(h, &d), &y, &kind).unwrap() - cost(&x.axpy(-h, &d), &y, &kind).unwrap()) / (2.0 * h);
                let exact = 2.0 * g.real_inner(&d);
                assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1.0), "{kind:?}: {fd} vs {exact}");
            }
        }
    }

    #[test]
    fn hessian_action_matches_gradient_differences() {
        let (x, y, w) = setup(3);
        let mut rng = rng_from_seed(4);
        let h = fd_step(&x);
        for kind in kinds(&w) {
            for _ in 0..5 {
                let u = complex_normal_grid(x.shape(), &mut rng);
                let (a, b) = hvp(&x, &u, &y, &kind).unwrap();
                let exact = a.zip_map(&b, |p, q| p + q);
                let fd = gradient(&x.axpy(h, &u), &y, &kind)
                    .unwrap()
                    .sub(&gradient(&x.axpy(-h, &u), &y, &kind).unwrap())
                    .scale(0.5 / h);
                assert!(fd.sub(&exact).norm() <= 1e-5 * exact.norm(), "{kind:?}");
            }
        }
    }

    #[test]
    fn dense_hessian_is_symmetric_and_its_diagonal_is_closed_form() {
        let (x, y, w) = setup(5);
        for kind in kinds(&w) {
            let h = hessian_dense(&x, &y, &kind).unwrap();
            assert!((&h - h.transpose()).norm() < 1e-10, "{kind:?}");
            let diag = Objective::new(&y, x.shape(), kind.clone())
                .unwrap()
                .hessian_at(&x)
                .unwrap()
                .stacked_diagonal()
                .to_vec();
            for (i, d) in diag.iter().enumerate() {
                assert!((h[(i, i)] - d).abs() < 1e-10 * (1.0 + d.abs()), "{kind:?} entry {i}");
            }
        }
    }

    fn strictly_dominant(h: &DMatrix<f64>) -> bool {
        (0..h.nrows()).all(|i| {
            let off: f64 = (0..h.ncols()).filter(|&j| j != i).map(|j| h[(i, j)].abs()).sum();
            h[(i, i)] > off
        })
    }

    #[test]
    fn solutions_are_stationary_and_positive_definite() {
        for (seed, w, rho) in [(7u64, vec![0, 0], 2.0), (8, vec![1, 2], 2.0), (9, vec![3, 3], 4.0), (10, vec![2, 1], 10.0)] {
            let n = Shape::new([4, 4]).unwrap();
            let w = MultiIndex(w);
            let x = generate_schwarz_object(&SchwarzSpec::new(n.clone(), w.clone(), rho, seed).unwrap()).unwrap();
            let y = measure(&x, &n.scaled(2)).unwrap();
            for kind in kinds(&w) {
                assert!(gradient(&x, &y, &kind).unwrap().norm() < 1e-10 * y.norm());
                if kind == CostKind::Ls {
                    continue;
                }
                let lo = SymmetricEigen::new(hessian_dense(&x, &y, &kind).unwrap()).eigenvalues.min();
                assert!(lo > 0.0, "{kind:?}: min eigenvalue {lo}");
            }
        }
    }

    #[test]
    fn normalized_hessian_is_dominant_when_a_corner_dominates() {
        for side in 2..=4usize {
            let n = Shape::new([side, side]).unwrap();
            for (k, corner) in [[0, 0], [0, side - 1], [side - 1, 0], [side - 1, side - 1]].into_iter().enumerate() {
                let w = MultiIndex(corner.to_vec());
                for rho in [2.0, 10.0] {
                    let spec = SchwarzSpec::new(n.clone(), w.clone(), rho, 30 + k as u64).unwrap();
                    let x = generate_schwarz_object(&spec).unwrap();
                    let y = measure(&x, &n.scaled(2)).unwrap();
                    assert!(strictly_dominant(&hessian_dense(&x, &y, &CostKind::normalized(w.clone())).unwrap()));
                }
            }
        }
    }

    #[test]
    fn interior_index_breaks_dominance() {
        let n = Shape::new([4, 4]).unwrap();
        let w = MultiIndex(vec![1, 2]);
        let x = generate_schwarz_object(&SchwarzSpec::new(n.clone(), w.clone(), 2.0, 8).unwrap()).unwrap();
        let y = measure(&x, &n.scaled(2)).unwrap();
        assert!(!strictly_dominant(&hessian_dense(&x, &y, &CostKind::normalized(w)).unwrap()));
    }

    #[test]
    fn noiseless_normalized_diagonal_sums_to_one() {
        let n = Shape::new([3, 3]).unwrap();
        let w = MultiIndex(vec![1, 0]);
        let x = generate_schwarz_object(&SchwarzSpec::new(n.clone(), w.clone(), 3.0, 2).unwrap()).unwrap();
        let y = measure(&x, &n.scaled(2)).unwrap();
        let d = Objective::new(&y, &n, CostKind::normalized(w.clone()))
            .unwrap()
            .hessian_at(&x)
            .unwrap()
            .stacked_diagonal();
        for k in 0..n.len() {
            let extra = if k == n.ravel(&w.0) { DEFAULT_LAMBDA } else { 0.0 };
            assert!((d.re.data()[k] + d.im.data()[k] - 1.0 - extra).abs() < 1e-12);
        }
    }

    #[test]
    fn lyapunov_derivative_is_the_gradient_flow_rate() {
        let n = Shape::new([4, 3]).unwrap();
        let w = MultiIndex(vec![2, 1]);
        let x_opt = generate_schwarz_object(&SchwarzSpec::new(n.clone(), w.clone(), 2.0, 11).unwrap()).unwrap();
        let y = measure(&x_opt, &n.scaled(2)).unwrap();
        let mut rng = rng_from_seed(12);
        for _ in 0..10 {
            let eps = complex_normal_grid(&n, &mut rng).scale(0.3);
            let x0 = x_opt.zip_map(&eps, |a, b| a + b);
            let report = basin_check(&x0, &x_opt, &y, &w).unwrap();
            // d(½‖ε‖²)/dt along the stacked steepest descent of the regularized cost
            let g = gradient(&x0, &y, &CostKind::reg(w.clone())).unwrap();
            let oracle = -2.0 * eps.real_inner(&g);
            assert!((report.vdot - oracle).abs() < 1e-9 * oracle.abs().max(1.0), "{} vs {oracle}", report.vdot);
        }
    }

    #[test]
    fn basin_accepts_zero_error() {
        let n = Shape::new([2, 2]).unwrap();
        let x = generate_schwarz_object(&SchwarzSpec::new(n.clone(), MultiIndex(vec![0, 0]), 2.0, 1).unwrap()).unwrap();
        let y = measure(&x, &n.scaled(2)).unwrap();
        let b = basin_check(&x, &x, &y, &MultiIndex(vec![0, 0])).unwrap();
        assert!(b.inside);
        assert_eq!(b.vdot, 0.0);
    }

    #[test]
    fn sos_identity_holds_and_is_quartic() {
        let n = Shape::new([3, 3]).unwrap();
        let m = n.scaled(2);
        let w = MultiIndex(vec![1, 1]);
        let mut rng = rng_from_seed(21);
        for _ in 0..10 {
            let eps = complex_normal_grid(&n, &mut rng);
            let x_opt = complex_normal_grid(&n, &mut rng);
            let scale = eps.norm() + x_opt.norm();
            assert!(sos_identity_residual(&eps, &x_opt, &w, &m).unwrap() < 1e-9 * scale.powi(4));
        }
        let zero: ComplexGrid = Grid::zeros(n.clone());
        let x_opt = complex_normal_grid(&n, &mut rng);
        assert_eq!(sos_identity_residual(&zero, &x_opt, &w, &m).unwrap(), 0.0);
    }

    #[test]
    fn dense_assembly_refuses_large_supports() {
        let n = Shape::new([17, 16]).unwrap();
        let x: ComplexGrid = Grid::zeros(n.clone());
        let y = Grid::new(n.scaled(2), vec![1.0; n.scaled(2).len()]).unwrap();
        assert!(matches!(hessian_dense(&x, &y, &CostKind::Ls), Err(Error::SizeGuard(_))));
    }

    #[test]
    fn preconditioning_never_hurts_and_is_bounded_when_dominant() {
        let n = Shape::new([3, 3]).unwrap();
        let ratios = [2.0, 10.0, 1e2, 1e4, 1e6];
        let plain = condition_study(&ratios, &n, StudyCost::Normalized, false, 4).unwrap();
        let scaled = condition_study(&ratios, &n, StudyCost::Normalized, true, 4).unwrap();
        for (p, s) in plain.iter().zip(&scaled) {
            assert!(s.condition_number <= p.condition_number);
        }
        assert!(scaled.last().unwrap().condition_number < 1.01);
        // the unscaled regularized cost degrades like ρ²
        let reg = condition_study(&ratios, &n, StudyCost::Reg, false, 4).unwrap();
        assert!(reg.windows(2).all(|p| p[1].condition_number > p[0].condition_number));
    }
}
