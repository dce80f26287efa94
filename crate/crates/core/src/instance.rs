//! Problem instances: Schwarz-object generation, measurement, noise and the
//! decay mask of the two-measurement scheme.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    dft_oversampled, read_tensor, write_tensor, ComplexGrid, Grid, MultiIndex, RealGrid, Shape,
};

pub const DEFAULT_RHO: f64 = 2.0;
/// Oversampling per axis used by [`check_schwarz`] when sampling the torus.
pub const TORUS_OVERSAMPLING: usize = 8;
/// Noisy measurements are clamped below at this fraction of `max(y)`.
pub const POSITIVITY_FLOOR: f64 = 1e-12;

/// Deterministic generator shared by every seeded routine in the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard complex normal: real and imaginary parts i.i.d. N(0, ½).
pub fn complex_normal(rng: &mut ChaCha8Rng) -> Complex64 {
    let half = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).unwrap();
    Complex64::new(half.sample(rng), half.sample(rng))
}

pub fn complex_normal_grid(shape: &Shape, rng: &mut ChaCha8Rng) -> ComplexGrid {
    Grid::from_fn(shape.clone(), |_| complex_normal(rng))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchwarzSpec {
    pub support: Shape,
    pub w: MultiIndex,
    pub rho: f64,
    pub seed: u64,
}

impl SchwarzSpec {
    pub fn new(support: Shape, w: MultiIndex, rho: f64, seed: u64) -> Result<Self> {
        let spec = SchwarzSpec {
            support,
            w,
            rho,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 2.0) {
            return Err(Error::Parameter(format!(
                "dominance ratio rho = {} must satisfy rho >= 2",
                self.rho
            )));
        }
        if !self.support.contains(&self.w) {
            return Err(Error::Parameter(format!(
                "w = ({}) lies outside the support {}",
                self.w, self.support
            )));
        }
        Ok(())
    }
}

/// Random object whose entry at `w` dominates the rest in 1-norm by `rho`.
pub fn generate_schwarz_object(spec: &SchwarzSpec) -> Result<ComplexGrid> {
    spec.validate()?;
    let mut rng = rng_from_seed(spec.seed);
    let at = spec.support.ravel(&spec.w.0);
    if spec.support.len() == 1 {
        return Grid::new(spec.support.clone(), vec![Complex64::new(1.0, 0.0)]);
    }
    loop {
        let mut x = complex_normal_grid(&spec.support, &mut rng);
        x.data_mut()[at] = Complex64::default();
        let off: f64 = x.data().iter().map(|z| z.norm()).sum();
        if off > 0.0 {
            x.data_mut()[at] = Complex64::new(spec.rho * off, 0.0);
            return Ok(x);
        }
    }
}

/// `|x_w| ≥ 2·max|X_{−w}(z)|` with the max taken over an 8× oversampled torus.
pub fn check_schwarz(x: &ComplexGrid, w: &MultiIndex) -> bool {
    let n = x.shape();
    if !n.contains(w) {
        return false;
    }
    let at = n.ravel(&w.0);
    let xw = x.data()[at].norm();
    let mut rest = x.clone();
    rest.data_mut()[at] = Complex64::default();
    let fine = n.scaled(TORUS_OVERSAMPLING);
    let spectrum = dft_oversampled(&rest, &fine).expect("fine grid contains support");
    let max = spectrum.max_abs() * (fine.len() as f64).sqrt();
    xw >= 2.0 * max
}

/// `y = |F x|²` on the oversampled grid `m ≥ 2n`.
pub fn measure(x: &ComplexGrid, m: &Shape) -> Result<RealGrid> {
    let n = x.shape();
    if n.ndim() != m.ndim() || n.dims().iter().zip(m.dims()).any(|(a, b)| *b < 2 * a) {
        return Err(Error::Dimension(format!(
            "measurement grid {m} must be at least twice the support {n} on every axis"
        )));
    }
    Ok(dft_oversampled(x, m)?.abs_sqr())
}

/// Adds i.i.d. Gaussian noise with `σ² = ‖x‖² / 10^(snr/10)`, then clamps
/// to the positivity floor. An infinite SNR leaves `y` untouched.
pub fn add_gaussian_noise(y: &RealGrid, snr_db: f64, truth_norm_sq: f64, seed: u64) -> RealGrid {
    if snr_db == f64::INFINITY {
        return y.clone();
    }
    let sigma = noise_sigma(snr_db, truth_norm_sq);
    let floor = POSITIVITY_FLOOR * y.max();
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut rng = rng_from_seed(seed);
    y.map(|&v| (v + normal.sample(&mut rng)).max(floor))
}

pub fn noise_sigma(snr_db: f64, truth_norm_sq: f64) -> f64 {
    (truth_norm_sq / 10f64.powf(snr_db / 10.0)).sqrt()
}

/// Exponentially decaying diagonal mask `r^{‖k−w‖₁}`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayMask {
    pub base: f64,
    pub anchor: MultiIndex,
    pub values: RealGrid,
}

impl DecayMask {
    pub fn new(support: &Shape, anchor: MultiIndex, base: f64) -> Self {
        let values = Grid::from_fn(support.clone(), |k| base.powi(l1_distance(k, &anchor.0) as i32));
        DecayMask {
            base,
            anchor,
            values,
        }
    }

    pub fn apply(&self, x: &ComplexGrid) -> ComplexGrid {
        x.zip_map(&self.values, |z, d| z * d)
    }

    pub fn unapply(&self, x: &ComplexGrid) -> ComplexGrid {
        x.zip_map(&self.values, |z, d| z / d)
    }

    /// `|x̃_w| − margin·Σ_{k≠w}|x̃_k|` for the masked magnitudes.
    pub fn dominance_slack(&self, magnitudes: &RealGrid, margin: f64) -> f64 {
        let at = magnitudes.shape().ravel(&self.anchor.0);
        let off: f64 = magnitudes
            .data()
            .iter()
            .zip(self.values.data())
            .enumerate()
            .filter(|(k, _)| *k != at)
            .map(|(_, (a, d))| a * d)
            .sum();
        magnitudes.data()[at] - margin * off
    }
}

fn l1_distance(a: &[usize], b: &[usize]) -> usize {
    a.iter().zip(b).map(|(x, y)| x.abs_diff(*y)).sum()
}

const BISECTION_STEPS: usize = 200;
const SMALLEST_BASE: f64 = 1e-12;

/// Largest base `r ∈ (0, 1]` for which the masked magnitudes satisfy the
/// 1-norm dominance bound with the given margin.
pub fn build_decay_mask(magnitudes: &RealGrid, w: &MultiIndex, margin: f64) -> Result<DecayMask> {
    let support = magnitudes.shape();
    if !support.contains(w) {
        return Err(Error::Parameter(format!("anchor ({w}) outside support {support}")));
    }
    if !(margin >= 2.0) {
        return Err(Error::Parameter(format!("margin {margin} must be at least 2")));
    }
    if magnitudes.data().iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::Domain("magnitudes must be nonnegative".into()));
    }
    let at_w = magnitudes.data()[support.ravel(&w.0)];
    if !(at_w > 0.0) {
        return Err(Error::Infeasible(format!("|x| vanishes at the anchor ({w})")));
    }
    let feasible = |r: f64| DecayMask::new(support, w.clone(), r).dominance_slack(magnitudes, margin) >= 0.0;
    if feasible(1.0) {
        return Ok(DecayMask::new(support, w.clone(), 1.0));
    }
    if !feasible(SMALLEST_BASE) {
        return Err(Error::Infeasible(format!(
            "no base above {SMALLEST_BASE} makes the anchor dominant"
        )));
    }
    let (mut lo, mut hi) = (SMALLEST_BASE, 1.0);
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Ok(DecayMask::new(support, w.clone(), lo))
}

/// A phase-retrieval problem as stored on disk.
#[derive(Clone, Debug)]
pub struct Instance {
    pub y: RealGrid,
    pub support: Shape,
    pub truth: Option<ComplexGrid>,
    pub meta: InstanceMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub support: Shape,
    pub m: Shape,
    pub seed: u64,
    /// `null` for noiseless instances.
    pub snr_db: Option<f64>,
    pub rho: f64,
    pub w: MultiIndex,
}

impl Instance {
    /// Noiseless or noisy Schwarz instance with `m = oversampling·n`.
    pub fn generate(spec: &SchwarzSpec, oversampling: usize, snr_db: Option<f64>) -> Result<Self> {
        let x = generate_schwarz_object(spec)?;
        let m = spec.support.scaled(oversampling);
        let clean = measure(&x, &m)?;
        let y = match snr_db {
            Some(snr) => add_gaussian_noise(&clean, snr, x.norm_sqr(), spec.seed ^ NOISE_STREAM),
            None => clean,
        };
        Ok(Instance {
            y,
            support: spec.support.clone(),
            truth: Some(x),
            meta: InstanceMeta {
                support: spec.support.clone(),
                m,
                seed: spec.seed,
                snr_db,
                rho: spec.rho,
                w: spec.w.clone(),
            },
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_tensor(dir.join("y.fpt"), &self.y)?;
        if let Some(t) = &self.truth {
            write_tensor(dir.join("truth.fpt"), t)?;
        }
        let meta = serde_json::to_string_pretty(&self.meta).map_err(|e| Error::Meta(e.to_string()))?;
        let path = dir.join("meta.json");
        fs::write(&path, meta + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("meta.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: InstanceMeta =
            serde_json::from_str(&text).map_err(|e| Error::Meta(format!("{}: {e}", path.display())))?;
        let y: RealGrid = read_tensor(dir.join("y.fpt"))?;
        if y.shape() != &meta.m {
            return Err(Error::Meta(format!(
                "y.fpt has shape {} but meta.json declares m = {}",
                y.shape(),
                meta.m
            )));
        }
        let truth_path = dir.join("truth.fpt");
        let truth = if truth_path.exists() {
            let t: ComplexGrid = read_tensor(&truth_path)?;
            if t.shape() != &meta.support {
                return Err(Error::Meta(format!(
                    "truth.fpt has shape {} but meta.json declares support {}",
                    t.shape(),
                    meta.support
                )));
            }
            Some(t)
        } else {
            None
        };
        Ok(Instance {
            y,
            support: meta.support.clone(),
            truth,
            meta,
        })
    }
}

/// Mixed into a seed so the noise stream differs from the object stream.
pub const NOISE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(d: &[usize]) -> Shape {
        Shape::new(d.to_vec()).unwrap()
    }

    #[test]
    fn generator_is_deterministic_and_dominant() {
        let spec = SchwarzSpec::new(shape(&[4, 4]), MultiIndex(vec![0, 0]), 2.0, 1).unwrap();
        let a = generate_schwarz_object(&spec).unwrap();
        let b = generate_schwarz_object(&spec).unwrap();
        assert_eq!(a, b);
        assert!(check_schwarz(&a, &spec.w));
        assert!(a.data()[0].im == 0.0 && a.data()[0].re > 0.0);
    }

    #[test]
    fn rho_below_two_is_rejected() {
        let err = SchwarzSpec::new(shape(&[4, 4]), MultiIndex(vec![0, 0]), 1.5, 1).unwrap_err();
        assert!(matches!(err, Error::Parameter(_)));
    }

    #[test]
    fn check_schwarz_examples() {
        let delta = Grid::from_fn(shape(&[3, 3]), |k| {
            if k == [1, 1] { Complex64::new(2.0, 0.0) } else { Complex64::default() }
        });
        assert!(check_schwarz(&delta, &MultiIndex(vec![1, 1])));
        let pair = Grid::new(shape(&[2]), vec![Complex64::new(1.0, 0.0); 2]).unwrap();
        assert!(!check_schwarz(&pair, &MultiIndex(vec![0])));
    }

    #[test]
    fn delta_measurement_is_flat() {
        let a = 3.0;
        let x = Grid::from_fn(shape(&[4]), |k| {
            if k[0] == 0 { Complex64::new(a, 0.0) } else { Complex64::default() }
        });
        let y = measure(&x, &shape(&[8])).unwrap();
        assert!(y.data().iter().all(|v| (v - a * a / 8.0).abs() < 1e-14));
        assert!(measure(&x, &shape(&[7])).is_err());
    }

    #[test]
    fn noise_variance_formula() {
        assert!((noise_sigma(20.0, 100.0) - 1.0).abs() < 1e-12);
        let y = Grid::new(shape(&[4]), vec![1.0; 4]).unwrap();
        assert_eq!(add_gaussian_noise(&y, f64::INFINITY, 1.0, 3), y);
    }

    #[test]
    fn decay_mask_examples() {
        let w = MultiIndex(vec![0]);
        let delta = Grid::new(shape(&[8]), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(build_decay_mask(&delta, &w, 2.0).unwrap().base, 1.0);

        let uniform = Grid::new(shape(&[8]), vec![1.0; 8]).unwrap();
        let mask = build_decay_mask(&uniform, &w, 2.0).unwrap();
        assert!(mask.base < 1.0);
        assert!(mask.dominance_slack(&uniform, 2.0) >= 0.0);
        assert!(mask.values.data().iter().all(|&v| v > 0.0 && v <= 1.0));

        let mut hole = uniform.clone();
        hole.data_mut()[0] = 0.0;
        assert!(matches!(build_decay_mask(&hole, &w, 2.0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn instance_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SchwarzSpec::new(shape(&[4, 4]), MultiIndex(vec![1, 2]), 3.0, 9).unwrap();
        let inst = Instance::generate(&spec, 2, Some(30.0)).unwrap();
        inst.save(dir.path()).unwrap();
        let back = Instance::load(dir.path()).unwrap();
        assert_eq!(back.y, inst.y);
        assert_eq!(back.truth, inst.truth);
        assert_eq!(back.meta, inst.meta);
    }
}
