//! Winding-index estimation from a measurement, and the winding number of a
//! known object as a cross-check.
//!
//! The measurement cannot separate an object from its conjugate reflection
//! `x'_i = conj(x_{n−1−i})`, which is a Schwarz object at `n−1−w`. The index
//! is therefore only identifiable up to `w ↔ n−1−w`; the tie flag ignores
//! that pair.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::{fftn, idft, ComplexGrid, Grid, MultiIndex, RealGrid, Shape};

/// How lags of the autocorrelation are pooled into a per-index score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WindingRule {
    /// Convolve `|F⁻¹y|` with the indicator of the support box and take the
    /// real part.
    Box,
    /// Subtract `threshold·max_{l≠0}|F⁻¹y|` from the magnitudes, then sum
    /// each lag in `(k − box) ∪ (box − k)` once.
    Mirrored { threshold: f64 },
}

pub const DEFAULT_THRESHOLD: f64 = 0.1;

impl Default for WindingRule {
    fn default() -> Self {
        WindingRule::Mirrored {
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

/// Relative tolerance under which two scores count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct WindingResult {
    pub w: MultiIndex,
    /// Scores over the support box; `w` is their argmax.
    pub score_grid: RealGrid,
    /// Another index outside `{w, n−1−w}` reaches the maximum.
    pub tie: bool,
}

impl WindingResult {
    /// Support indices by decreasing score, lexicographic among equals.
    pub fn ranked(&self) -> Vec<MultiIndex> {
        let shape = self.score_grid.shape();
        let mut order: Vec<usize> = (0..shape.len()).collect();
        let s = self.score_grid.data();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
        order.into_iter().map(|k| MultiIndex(shape.unravel(k))).collect()
    }
}

pub fn winding_from_measurement(y: &RealGrid, support: &Shape) -> Result<WindingResult> {
    winding_with_rule(y, support, WindingRule::default())
}

pub fn winding_with_rule(y: &RealGrid, support: &Shape, rule: WindingRule) -> Result<WindingResult> {
    let m = y.shape();
    if support.ndim() != m.ndim() || support.dims().iter().zip(m.dims()).any(|(n, m)| *m < 2 * n) {
        return Err(Error::Dimension(format!(
            "measurement grid {m} must be at least twice the support {support}"
        )));
    }
    if y.data().iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Domain("measurement must be strictly positive".into()));
    }
    let c = idft(&ComplexGrid::from_real(y)).abs();
    let scores = match rule {
        WindingRule::Box => box_scores(&c, support),
        WindingRule::Mirrored { threshold } => mirrored_scores(&c, support, threshold),
    };
    Ok(pick(scores, support))
}

fn box_convolution(c: &RealGrid, support: &Shape) -> RealGrid {
    let m = c.shape();
    let h = Grid::from_fn(m.clone(), |k| {
        let inside = k.iter().zip(support.dims()).all(|(i, n)| i < n);
        Complex64::new(if inside { 1.0 } else { 0.0 }, 0.0)
    });
    let prod = fftn(&h).zip_map(&fftn(&ComplexGrid::from_real(c)), |a, b| a * b);
    let root_m = (m.len() as f64).sqrt();
    idft(&prod).map(|z| z.re * root_m)
}

fn box_scores(c: &RealGrid, support: &Shape) -> RealGrid {
    box_convolution(c, support).truncated(support).expect("support inside grid")
}

fn mirrored_scores(c: &RealGrid, support: &Shape, threshold: f64) -> RealGrid {
    let m = c.shape().clone();
    let peak = c.data()[1..].iter().copied().fold(0.0, f64::max);
    let tau = threshold * peak;
    let shifted = c.map(|v| v - tau);
    let conv = box_convolution(&shifted, support);
    Grid::from_fn(support.clone(), |k| {
        let half: Vec<i64> = k
            .iter()
            .zip(support.dims())
            .map(|(&ki, &ni)| ki.min(ni - 1 - ki) as i64)
            .collect();
        let both = centred_box_sum(&shifted, &m, &half);
        2.0 * conv.data()[m.ravel(k)] - both
    })
}

/// Sum over lags `|l_i| ≤ half_i`, wrapped onto the grid.
fn centred_box_sum(c: &RealGrid, m: &Shape, half: &[i64]) -> f64 {
    let box_shape = Shape::new(half.iter().map(|&h| (2 * h + 1) as usize).collect::<Vec<_>>())
        .expect("nonempty box");
    (0..box_shape.len())
        .map(|f| {
            let lag: Vec<i64> = box_shape
                .unravel(f)
                .iter()
                .zip(half)
                .map(|(&i, &h)| i as i64 - h)
                .collect();
            c.data()[m.ravel_wrapped(&lag)]
        })
        .sum()
}

fn pick(scores: RealGrid, support: &Shape) -> WindingResult {
    let mut best = 0;
    for (k, &v) in scores.data().iter().enumerate() {
        if v > scores.data()[best] {
            best = k;
        }
    }
    let top = scores.data()[best];
    let w = MultiIndex(support.unravel(best));
    let mirror = w.reflected(support);
    let tol = TIE_TOLERANCE * top.abs().max(f64::MIN_POSITIVE);
    let tie = scores.data().iter().enumerate().any(|(k, &v)| {
        let idx = MultiIndex(support.unravel(k));
        idx != w && idx != mirror && v >= top - tol
    });
    WindingResult {
        w,
        score_grid: scores,
        tie,
    }
}

/// Points per axis used by [`winding_of_object`] when the caller has no
/// preference: 16 per oversampled grid point at `m = 2n`.
pub fn default_samples(support: &Shape, axis: usize) -> usize {
    16 * 2 * support.dims()[axis]
}

/// Winding number of `X(z)` around 0 along axis `axis`, every other
/// variable fixed at 1.
pub fn winding_of_object(x: &ComplexGrid, axis: usize, samples: usize) -> Result<i64> {
    let shape = x.shape();
    if axis >= shape.ndim() {
        return Err(Error::Parameter(format!("axis {axis} out of range")));
    }
    if samples < 3 {
        return Err(Error::Parameter("need at least 3 samples".into()));
    }
    let len = shape.dims()[axis];
    let mut coeffs = vec![Complex64::default(); len];
    for (k, z) in x.data().iter().enumerate() {
        coeffs[shape.unravel(k)[axis]] += z;
    }
    let values: Vec<Complex64> = (0..samples)
        .map(|s| {
            let z = Complex64::from_polar(1.0, 2.0 * PI * s as f64 / samples as f64);
            coeffs.iter().rev().fold(Complex64::default(), |acc, &c| acc * z + c)
        })
        .collect();
    let peak = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if let Some(s) = values.iter().position(|v| v.norm() <= 1e-10 * peak || peak == 0.0) {
        return Err(Error::SingularPath(format!(
            "|X| nearly vanishes at sample {s} of {samples}"
        )));
    }
    let total: f64 = (0..samples)
        .map(|s| (values[(s + 1) % samples] / values[s]).arg())
        .sum();
    Ok((total / (2.0 * PI)).round() as i64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::measure;

    fn grid1(v: &[f64]) -> ComplexGrid {
        Grid::new(
            Shape::new([v.len()]).unwrap(),
            v.iter().map(|&a| Complex64::new(a, 0.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn impulse_at_origin_gives_zero_index() {
        let n = Shape::new([4, 4]).unwrap();
        let x = Grid::from_fn(n.clone(), |k| {
            Complex64::new(if k == [0, 0] { 5.0 } else { 0.0 }, 0.0)
        });
        let y = measure(&x, &n.scaled(2)).unwrap();
        for rule in [WindingRule::Box, WindingRule::default()] {
            let r = winding_with_rule(&y, &n, rule).unwrap();
            assert!(r.w == MultiIndex(vec![0, 0]) || r.w == MultiIndex(vec![3, 3]));
        }
    }

    #[test]
    fn object_winding_examples() {
        assert_eq!(winding_of_object(&grid1(&[0.0, 0.0, 1.0, 0.0]), 0, 64).unwrap(), 2);
        assert_eq!(winding_of_object(&grid1(&[1.0, 0.1]), 0, 64).unwrap(), 0);
        assert_eq!(winding_of_object(&grid1(&[0.1, 1.0]), 0, 64).unwrap(), 1);
        assert!(matches!(
            winding_of_object(&grid1(&[1.0, 1.0]), 0, 64),
            Err(Error::SingularPath(_))
        ));
    }

    #[test]
    fn nonpositive_measurement_is_rejected() {
        let y = Grid::new(Shape::new([4]).unwrap(), vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        assert!(matches!(
            winding_from_measurement(&y, &Shape::new([2]).unwrap()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn ranking_starts_at_argmax() {
        let n = Shape::new([3, 3]).unwrap();
        let scores = Grid::from_fn(n.clone(), |k| (k[0] * 3 + k[1]) as f64 % 4.0);
        let r = pick(scores, &n);
        assert_eq!(r.ranked()[0], r.w);
        assert_eq!(r.w, MultiIndex(vec![1, 0]));
    }
}
