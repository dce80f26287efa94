//! Discrete Schwarz transform of a log-measurement, trigonometric
//! resampling of `y`, and the initial guess built from them.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::instance::POSITIVITY_FLOOR;
use crate::tensor::{
    circular_shift, dft_oversampled, fftn, idft, ifftn, ComplexGrid, Grid, MultiIndex, RealGrid,
    Shape,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SchwarzConfig {
    /// Per-axis resampling multiplier applied before the transform.
    pub oversample_factor: usize,
}

impl Default for SchwarzConfig {
    fn default() -> Self {
        SchwarzConfig {
            oversample_factor: 1,
        }
    }
}

impl SchwarzConfig {
    pub fn with_factor(oversample_factor: usize) -> Result<Self> {
        if oversample_factor == 0 {
            return Err(Error::Parameter("oversample factor must be at least 1".into()));
        }
        Ok(SchwarzConfig { oversample_factor })
    }
}

/// Wrapped frequency of index `k` on an axis of length `m`, or `None` for
/// the Nyquist bin of an even axis.
fn signed_frequency(k: usize, m: usize) -> Option<i64> {
    if 2 * k < m {
        Some(k as i64)
    } else if 2 * k == m {
        None
    } else {
        Some(k as i64 - m as i64)
    }
}

/// Evaluate the trigonometric interpolant of `y` on a grid `factor` times finer.
pub fn resample_measurement(y: &RealGrid, factor: usize) -> Result<RealGrid> {
    if factor == 0 {
        return Err(Error::Parameter("resampling factor must be at least 1".into()));
    }
    if factor == 1 {
        return Ok(y.clone());
    }
    let m = y.shape();
    let fine = m.scaled(factor);
    let coeffs = idft(&ComplexGrid::from_real(y));
    let mut padded: ComplexGrid = Grid::zeros(fine.clone());
    for (k, c) in coeffs.data().iter().enumerate() {
        let idx = m.unravel(k);
        // a Nyquist coefficient is split evenly between ±m/2
        let mut targets: Vec<Vec<i64>> = vec![Vec::new()];
        for (&i, &mi) in idx.iter().zip(m.dims()) {
            let options: Vec<i64> = match signed_frequency(i, mi) {
                Some(f) => vec![f],
                None => vec![mi as i64 / 2, -(mi as i64) / 2],
            };
            targets = targets
                .into_iter()
                .flat_map(|t| {
                    options.iter().map(move |&o| {
                        let mut t = t.clone();
                        t.push(o);
                        t
                    })
                })
                .collect();
        }
        let share = 1.0 / targets.len() as f64;
        for t in targets {
            padded.data_mut()[fine.ravel_wrapped(&t)] += c * share;
        }
    }
    let scale = (fine.len() as f64 / m.len() as f64).sqrt();
    Ok(fftn(&padded).map(|z| z.re * scale))
}

/// Mask over shifted coefficient positions: 2 on `[0, ⌈mᵢ/2⌉)` per axis,
/// 1 at `w`, 0 elsewhere.
fn analytic_mask(m: &Shape, w: &MultiIndex) -> RealGrid {
    Grid::from_fn(m.clone(), |k| {
        if k == w.coords() {
            1.0
        } else if k.iter().zip(m.dims()).all(|(&i, &mi)| i < mi.div_ceil(2)) {
            2.0
        } else {
            0.0
        }
    })
}

/// Index-`w` discrete Schwarz transform of `log y`.
pub fn discrete_schwarz_transform(y: &RealGrid, w: &MultiIndex, cfg: SchwarzConfig) -> Result<ComplexGrid> {
    if y.data().iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Domain("measurement must be strictly positive".into()));
    }
    if w.coords().len() != y.shape().ndim() {
        return Err(Error::Dimension(format!("index ({w}) has the wrong rank")));
    }
    let factor = cfg.oversample_factor.max(1);
    let work = if factor > 1 {
        let fine = resample_measurement(y, factor)?;
        let floor = POSITIVITY_FLOOR * fine.max();
        fine.map(|&v| v.max(floor))
    } else {
        y.clone()
    };
    let grid = work.shape().clone();
    let logs = work.map(|&v| Complex64::new(v.ln(), 0.0));
    let shifted = circular_shift(&ifftn(&logs), &w.as_offsets());
    let mask = analytic_mask(&grid, w);
    let kept = shifted.zip_map(&mask, |z, s| z * s);
    let out = fftn(&circular_shift(&kept, &w.negated_offsets()));
    if factor == 1 {
        return Ok(out);
    }
    let m = y.shape();
    Ok(Grid::from_fn(m.clone(), |k| {
        let fine_idx: Vec<usize> = k.iter().map(|&i| i * factor).collect();
        *out.get(&fine_idx)
    }))
}

/// `x₀ = shift_w(F⁻¹{exp(½ S_w{log y})})` restricted to the support box.
pub fn schwarz_init(y: &RealGrid, w: &MultiIndex, support: &Shape, cfg: SchwarzConfig) -> Result<ComplexGrid> {
    if !support.contains(w) {
        return Err(Error::Parameter(format!("w = ({w}) outside support {support}")));
    }
    if !support.fits_in(y.shape()) {
        return Err(Error::Dimension(format!(
            "support {support} exceeds measurement grid {}",
            y.shape()
        )));
    }
    let s = discrete_schwarz_transform(y, w, cfg)?;
    let boundary = s.map(|z| (0.5 * z).exp());
    circular_shift(&idft(&boundary), &w.as_offsets()).truncated(support)
}

/// Coefficients of `X_{−w}` reflected about `w` and conjugated, kept where
/// the reflection lands inside the support box.
pub fn conj_flip(x: &ComplexGrid, w: &MultiIndex) -> ComplexGrid {
    let n = x.shape();
    let mut out: ComplexGrid = Grid::zeros(n.clone());
    for (k, z) in x.data().iter().enumerate() {
        let idx = n.unravel(k);
        if idx == w.coords() {
            continue;
        }
        let target: Vec<i64> = idx
            .iter()
            .zip(w.coords())
            .map(|(&i, &c)| 2 * c as i64 - i as i64)
            .collect();
        let inside = target
            .iter()
            .zip(n.dims())
            .all(|(&t, &d)| t >= 0 && (t as usize) < d);
        if inside {
            let t: Vec<usize> = target.iter().map(|&t| t as usize).collect();
            *out.get_mut(&t) = z.conj();
        }
    }
    out
}

/// Samples of `X(z) + X†_{−w}(z)` at the roots of unity of `m`, multiplied
/// by `z^{−w}/√M` so they line up with `exp(½ S_w{log y})`.
pub fn exactness_target(x: &ComplexGrid, w: &MultiIndex, m: &Shape) -> Result<ComplexGrid> {
    let sum = x.zip_map(&conj_flip(x, w), |a, b| a + b);
    let spectrum = dft_oversampled(&sum, m)?;
    Ok(Grid::from_fn(m.clone(), |k| {
        let phase: f64 = k
            .iter()
            .zip(w.coords())
            .zip(m.dims())
            .map(|((&ki, &wi), &mi)| 2.0 * std::f64::consts::PI * (ki * wi) as f64 / mi as f64)
            .sum();
        *spectrum.get(k) * Complex64::from_polar(1.0, phase)
    }))
}

/// `max|exp(½S) − target| / max|target|` for a noiseless object.
pub fn exactness_deviation(x: &ComplexGrid, w: &MultiIndex, m: &Shape, cfg: SchwarzConfig) -> Result<f64> {
    let y = crate::instance::measure(x, m)?;
    let s = discrete_schwarz_transform(&y, w, cfg)?;
    let target = exactness_target(x, w, m)?;
    Ok(max_relative_gap(&s.map(|z| (0.5 * z).exp()), &target))
}

pub(crate) fn max_relative_gap(a: &ComplexGrid, b: &ComplexGrid) -> f64 {
    let gap = a.sub(b).max_abs();
    gap / b.max_abs()
}
