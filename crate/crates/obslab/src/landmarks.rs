//! Landmark configuration, the stacked output matrix, measurement generation
//! and sensor noise.
//!
//! Each landmark at inertial position `p_i` is observed in the body frame as
//! `q_i = R p_i - P`. Stacking the `q_i` gives `Y = C X` with one `2 x 6` row
//! block `[-I2, p_i1 I2, p_i2 I2]` per landmark.

use nalgebra::{DMatrix, DVector, Matrix6, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::se2::{Pose, VelocityInput};

#[derive(Debug, Error)]
pub enum LandmarkError {
    #[error("landmark set is empty")]
    Empty,
    #[error("landmark {index} has a non-finite coordinate")]
    NonFinite { index: usize },
}

/// Inertial-frame landmark positions.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: Vec<Vector2<f64>>,
}

impl LandmarkSet {
    pub fn new(points: Vec<Vector2<f64>>) -> Result<Self, LandmarkError> {
        if points.is_empty() {
            return Err(LandmarkError::Empty);
        }
        for (index, p) in points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite()) {
                return Err(LandmarkError::NonFinite { index });
            }
        }
        Ok(Self { points })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self, LandmarkError> {
        Self::new(pairs.iter().map(|&(x, y)| Vector2::new(x, y)).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector2<f64>] {
        &self.points
    }

    /// True when the points do not all lie on a single straight line.
    /// Computed from the second eigenvalue of the centered scatter matrix.
    pub fn is_non_collinear(&self) -> bool {
        if self.points.len() < 3 {
            return false;
        }
        let n = self.points.len() as f64;
        let mean = self.points.iter().sum::<Vector2<f64>>() / n;
        let mut scatter = nalgebra::Matrix2::<f64>::zeros();
        let mut scale = 0.0f64;
        for p in &self.points {
            let d = p - mean;
            scatter += d * d.transpose();
            scale = scale.max(d.norm_squared());
        }
        if scale == 0.0 {
            return false;
        }
        let eigs = scatter.symmetric_eigenvalues();
        eigs.min() > 1e-12 * scale
    }
}

/// The stacked `2N x 6` output matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputMatrix {
    c: DMatrix<f64>,
}

impl OutputMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }
}

/// Builds `C` row-block-wise as `[-I2, p_i1 I2, p_i2 I2]`.
pub fn build_output_matrix(landmarks: &LandmarkSet) -> OutputMatrix {
    let n = landmarks.len();
    let mut c = DMatrix::zeros(2 * n, 6);
    for (i, p) in landmarks.points().iter().enumerate() {
        for r in 0..2 {
            c[(2 * i + r, r)] = -1.0;
            c[(2 * i + r, 2 + r)] = p.x;
            c[(2 * i + r, 4 + r)] = p.y;
        }
    }
    OutputMatrix { c }
}

/// Stacked body-frame measurements `q_i = R p_i - P`.
pub fn measure(pose: &Pose, landmarks: &LandmarkSet) -> DVector<f64> {
    let mut y = DVector::zeros(2 * landmarks.len());
    let r = pose.rotation.matrix();
    for (i, p) in landmarks.points().iter().enumerate() {
        let q = r * p - pose.position;
        y[2 * i] = q.x;
        y[2 * i + 1] = q.y;
    }
    y
}

/// Outcome of the landmark observability test on `C^T C`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservabilityReport {
    pub ok: bool,
    pub rank: usize,
    pub min_eigenvalue: f64,
}

/// Numerical rank of `C^T C` with a relative `1e-8` eigenvalue cutoff.
/// Full rank (6) requires at least three non-collinear landmarks.
pub fn observability_check(landmarks: &LandmarkSet) -> ObservabilityReport {
    let c = build_output_matrix(landmarks);
    let ctc: Matrix6<f64> = nalgebra::convert::<_, Matrix6<f64>>(
        (c.matrix().transpose() * c.matrix()).fixed_view::<6, 6>(0, 0).into_owned(),
    );
    let eigs = ctc.symmetric_eigenvalues();
    let max = eigs.iter().cloned().fold(0.0f64, f64::max);
    let tol = 1e-8 * max.max(f64::MIN_POSITIVE);
    let rank = eigs.iter().filter(|&&l| l > tol).count();
    ObservabilityReport {
        ok: rank == 6,
        rank,
        min_eigenvalue: eigs.min(),
    }
}

/// Additive white Gaussian sensor noise with a fixed 64-bit seed.
///
/// Draws come from a ChaCha12 stream through the ziggurat-based standard
/// normal of `rand_distr`, so a given seed reproduces the exact sequence.
/// Landmark noise perturbs every measurement component; velocity noise
/// perturbs only the linear velocity reading.
#[derive(Debug, Clone)]
pub struct MeasurementNoise {
    rng: ChaCha12Rng,
    pub sigma_landmark: f64,
    pub sigma_velocity: f64,
}

impl MeasurementNoise {
    pub fn new(seed: u64, sigma_landmark: f64, sigma_velocity: f64) -> Self {
        assert!(sigma_landmark >= 0.0 && sigma_velocity >= 0.0);
        Self {
            rng: ChaCha12Rng::seed_from_u64(seed),
            sigma_landmark,
            sigma_velocity,
        }
    }

    /// Perturbs one measurement/velocity sample in place.
    pub fn apply(&mut self, y: &mut DVector<f64>, v: &mut VelocityInput) {
        if self.sigma_landmark > 0.0 {
            let normal = Normal::new(0.0, self.sigma_landmark).unwrap();
            for i in 0..y.len() {
                y[i] += normal.sample(&mut self.rng);
            }
        }
        if self.sigma_velocity > 0.0 {
            let normal = Normal::new(0.0, self.sigma_velocity).unwrap();
            v.v.x += normal.sample(&mut self.rng);
            v.v.y += normal.sample(&mut self.rng);
        }
    }
}

/// One-shot noise application, deterministic in the seed.
pub fn add_noise(
    y: &DVector<f64>,
    v: &VelocityInput,
    rng_seed: u64,
    sigma_landmark: f64,
    sigma_velocity: f64,
) -> (DVector<f64>, VelocityInput) {
    let mut noise = MeasurementNoise::new(rng_seed, sigma_landmark, sigma_velocity);
    let mut y2 = y.clone();
    let mut v2 = *v;
    noise.apply(&mut y2, &mut v2);
    (y2, v2)
}
