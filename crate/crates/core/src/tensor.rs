//! Row-major multi-index grids, the oversampled unitary DFT and circular shifts.
//!
//! Every grid stores its data with the last axis varying fastest. The DFT
//! wrappers own their scaling: forward and inverse are both unitary, so
//! `‖fftn(g)‖ = ‖g‖` for every grid.

use std::cell::RefCell;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod fpt;

pub use fpt::{read_tensor, write_tensor, FptElement};

/// Axis lengths of a grid. At least one axis, every axis at least one long.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() {
            return Err(Error::Dimension("shape needs at least one axis".into()));
        }
        if let Some(ax) = dims.iter().position(|&d| d == 0) {
            return Err(Error::Dimension(format!("axis {ax} has length 0")));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Dimension("total size overflows".into()))?;
        Ok(Shape(dims))
    }

    /// Square (hyper-cube) shape with `d` axes of length `side`.
    pub fn cube(side: usize, d: usize) -> Result<Self> {
        Shape::new(vec![side; d])
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn ndim(&self) -> usize {
        self.0.len()
    }

    /// Total number of entries.
    pub fn len(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.0.len()];
        for ax in (0..self.0.len().saturating_sub(1)).rev() {
            s[ax] = s[ax + 1] * self.0[ax + 1];
        }
        s
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.0.len());
        idx.iter()
            .zip(&self.0)
            .fold(0, |acc, (&i, &d)| acc * d + i)
    }

    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.0.len()];
        for ax in (0..self.0.len()).rev() {
            idx[ax] = flat % self.0[ax];
            flat /= self.0[ax];
        }
        idx
    }

    /// Ravel an index after wrapping every coordinate modulo the axis length.
    pub fn ravel_wrapped(&self, idx: &[i64]) -> usize {
        idx.iter().zip(&self.0).fold(0, |acc, (&i, &d)| {
            acc * d + i.rem_euclid(d as i64) as usize
        })
    }

    /// Elementwise `self ≤ other`.
    pub fn fits_in(&self, other: &Shape) -> bool {
        self.ndim() == other.ndim() && self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    pub fn contains(&self, idx: &MultiIndex) -> bool {
        idx.0.len() == self.0.len() && idx.0.iter().zip(&self.0).all(|(i, d)| i < d)
    }

    pub fn scaled(&self, factor: usize) -> Shape {
        Shape(self.0.iter().map(|d| d * factor).collect())
    }

    /// All multi-indices in row-major order.
    pub fn indices(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.len()).map(move |f| self.unravel(f))
    }
}

impl TryFrom<Vec<usize>> for Shape {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Shape::new(v)
    }
}

impl From<Shape> for Vec<usize> {
    fn from(s: Shape) -> Self {
        s.0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        f.write_str(&parts.join("x"))
    }
}

impl FromStr for Shape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let dims = s
            .split('x')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Parameter(format!("bad shape `{s}`, expected e.g. 8x8")))
            })
            .collect::<Result<Vec<_>>>()?;
        Shape::new(dims)
    }
}

/// A point on a grid, one coordinate per axis.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(pub Vec<usize>);

impl MultiIndex {
    pub fn zeros(d: usize) -> Self {
        MultiIndex(vec![0; d])
    }

    pub fn coords(&self) -> &[usize] {
        &self.0
    }

    pub fn as_offsets(&self) -> Vec<i64> {
        self.0.iter().map(|&c| c as i64).collect()
    }

    pub fn negated_offsets(&self) -> Vec<i64> {
        self.0.iter().map(|&c| -(c as i64)).collect()
    }

    /// `(self + by) mod shape`, per axis.
    pub fn wrapping_add(&self, by: &[i64], shape: &Shape) -> MultiIndex {
        MultiIndex(
            self.0
                .iter()
                .zip(by)
                .zip(shape.dims())
                .map(|((&c, &b), &d)| (c as i64 + b).rem_euclid(d as i64) as usize)
                .collect(),
        )
    }

    /// Index mirrored through the centre of the box: `n − 1 − w`.
    pub fn reflected(&self, support: &Shape) -> MultiIndex {
        MultiIndex(
            self.0
                .iter()
                .zip(support.dims())
                .map(|(&c, &n)| n - 1 - c)
                .collect(),
        )
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for MultiIndex {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        s.split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Parameter(format!("bad index `{s}`, expected e.g. 1,1")))
            })
            .collect::<Result<Vec<_>>>()
            .map(MultiIndex)
    }
}

/// Dense row-major grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    shape: Shape,
    data: Vec<T>,
}

pub type ComplexGrid = Grid<Complex64>;
pub type RealGrid = Grid<f64>;

impl<T> Grid<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::Dimension(format!(
                "data length {} does not match shape {shape} ({} entries)",
                data.len(),
                shape.len()
            )));
        }
        Ok(Grid { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(&[usize]) -> T) -> Self {
        let data = (0..shape.len()).map(|k| f(&shape.unravel(k))).collect();
        Grid { shape, data }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, idx: &[usize]) -> &T {
        &self.data[self.shape.ravel(idx)]
    }

    pub fn get_mut(&mut self, idx: &[usize]) -> &mut T {
        let k = self.shape.ravel(idx);
        &mut self.data[k]
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            shape: self.shape.clone(),
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Combine two grids of the same shape entrywise.
    pub fn zip_map<U, V>(&self, other: &Grid<U>, mut f: impl FnMut(&T, &U) -> V) -> Grid<V> {
        assert_eq!(self.shape, other.shape, "zip_map on mismatched shapes");
        Grid {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(a, b)).collect(),
        }
    }
}

impl<T: Clone + Default> Grid<T> {
    pub fn zeros(shape: Shape) -> Self {
        let data = vec![T::default(); shape.len()];
        Grid { shape, data }
    }

    /// Zero-pad into the larger box `m`, keeping entries at the same indices.
    pub fn padded(&self, m: &Shape) -> Result<Self> {
        if !self.shape.fits_in(m) {
            return Err(Error::Dimension(format!(
                "cannot pad shape {} into {m}",
                self.shape
            )));
        }
        let mut out = Grid::zeros(m.clone());
        for (k, v) in self.data.iter().enumerate() {
            let idx = self.shape.unravel(k);
            out.data[m.ravel(&idx)] = v.clone();
        }
        Ok(out)
    }

    /// Keep only the leading box `n`.
    pub fn truncated(&self, n: &Shape) -> Result<Self> {
        if !n.fits_in(&self.shape) {
            return Err(Error::Dimension(format!(
                "cannot truncate shape {} to {n}",
                self.shape
            )));
        }
        Ok(Grid::from_fn(n.clone(), |idx| self.get(idx).clone()))
    }
}

impl ComplexGrid {
    pub fn from_real(g: &RealGrid) -> Self {
        g.map(|&v| Complex64::new(v, 0.0))
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `⟨self, other⟩ = Σ conj(selfᵢ)·otherᵢ`.
    pub fn inner(&self, other: &ComplexGrid) -> Complex64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Inner product of the real-imaginary stacked vectors.
    pub fn real_inner(&self, other: &ComplexGrid) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }

    pub fn scale(&self, s: f64) -> ComplexGrid {
        self.map(|z| z * s)
    }

    /// `self + s·other`
    pub fn axpy(&self, s: f64, other: &ComplexGrid) -> ComplexGrid {
        self.zip_map(other, |a, b| a + b * s)
    }

    pub fn sub(&self, other: &ComplexGrid) -> ComplexGrid {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn abs(&self) -> RealGrid {
        self.map(|z| z.norm())
    }

    pub fn abs_sqr(&self) -> RealGrid {
        self.map(|z| z.norm_sqr())
    }

    pub fn real_part(&self) -> RealGrid {
        self.map(|z| z.re)
    }
}

impl RealGrid {
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// In-place unnormalized transform along every axis.
fn transform_axes(data: &mut [Complex64], shape: &Shape, direction: FftDirection) {
    let dims = shape.dims();
    let strides = shape.strides();
    let total = data.len();
    PLANNER.with(|p| {
        let mut planner = p.borrow_mut();
        for (ax, &len) in dims.iter().enumerate() {
            if len == 1 {
                continue;
            }
            let fft = planner.plan_fft(len, direction);
            let stride = strides[ax];
            if stride == 1 {
                fft.process(data);
                continue;
            }
            let mut lane = vec![Complex64::default(); len];
            let block = len * stride;
            for start in (0..total).step_by(block) {
                for inner in 0..stride {
                    let base = start + inner;
                    for (i, v) in lane.iter_mut().enumerate() {
                        *v = data[base + i * stride];
                    }
                    fft.process(&mut lane);
                    for (i, v) in lane.iter().enumerate() {
                        data[base + i * stride] = *v;
                    }
                }
            }
        }
    });
}

/// Unitary forward DFT on the grid's own shape: `(1/√M) Σ gᵢ e^{−2πj k·i/m}`.
pub fn fftn(g: &ComplexGrid) -> ComplexGrid {
    let mut out = g.clone();
    transform_axes(&mut out.data, &out.shape, FftDirection::Forward);
    let s = 1.0 / (out.len() as f64).sqrt();
    out.data.iter_mut().for_each(|z| *z *= s);
    out
}

/// Unitary inverse DFT on the grid's own shape.
pub fn ifftn(g: &ComplexGrid) -> ComplexGrid {
    let mut out = g.clone();
    transform_axes(&mut out.data, &out.shape, FftDirection::Inverse);
    let s = 1.0 / (out.len() as f64).sqrt();
    out.data.iter_mut().for_each(|z| *z *= s);
    out
}

/// Oversampled unitary DFT: zero-pad `x` to `m`, then transform.
pub fn dft_oversampled(x: &ComplexGrid, m: &Shape) -> Result<ComplexGrid> {
    Ok(fftn(&x.padded(m)?))
}

/// Unitary inverse DFT. Inverts [`dft_oversampled`] on the support box.
pub fn idft(spectrum: &ComplexGrid) -> ComplexGrid {
    ifftn(spectrum)
}

/// Adjoint of [`dft_oversampled`]: inverse transform, then keep the box `n`.
pub fn dft_adjoint(spectrum: &ComplexGrid, n: &Shape) -> Result<ComplexGrid> {
    ifftn(spectrum).truncated(n)
}

/// `out[(k + offset) mod shape] = g[k]`.
pub fn circular_shift<T: Clone>(g: &Grid<T>, offset: &[i64]) -> Grid<T> {
    let shape = g.shape();
    assert_eq!(offset.len(), shape.ndim(), "shift rank mismatch");
    let mut data = g.data.clone();
    for k in 0..g.len() {
        let idx = shape.unravel(k);
        let target: Vec<i64> = idx
            .iter()
            .zip(offset)
            .map(|(&i, &o)| i as i64 + o)
            .collect();
        data[shape.ravel_wrapped(&target)] = g.data[k].clone();
    }
    Grid {
        shape: shape.clone(),
        data,
    }
}
