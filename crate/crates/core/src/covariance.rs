//! Temporally and frame-weighted covariance descriptors.
//!
//! Every frame `i` of a stream carries a feature vector `f_i` and a frame
//! weight `xi_i`. At time `t` its effective weight is
//! `psi_i = xi_i * decay^(t - i)`, and the descriptor is the weighted
//! covariance
//!
//! ```text
//! mu_t = sum(psi_i f_i) / W_t
//! C_t  = 1 / (1 - S_t) * sum(psi_i / W_t (f_i - mu_t)(f_i - mu_t)^T)
//! W_t  = sum(psi_i),   S_t = sum((psi_i / W_t)^2)
//! ```
//!
//! [`batch_weighted_covariance`] evaluates these sums directly and costs
//! `O(t d^2)`. [`WeightedCovarianceState::update`] carries
//! `(C_t, mu_t, W_t, S_t)` forward one frame at a time in `O(d^2)` without
//! revisiting history.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Lower bound applied to every frame weight.
pub const MIN_FRAME_WEIGHT: f64 = 1e-3;

/// Weight `decay^age` of a frame observed `age` frames ago.
///
/// Returns 1 for `age == 0`, so the newest frame always carries full weight.
#[inline]
pub fn temporal_weight(decay: f64, age: usize) -> f64 {
    if age == 0 {
        return 1.0;
    }
    match i32::try_from(age) {
        Ok(a) => decay.powi(a),
        Err(_) => decay.powf(age as f64),
    }
}

/// A feature vector paired with its discriminative weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedFrame {
    pub feature: DVector<f64>,
    pub frame_weight: f64,
}

impl WeightedFrame {
    /// Builds a frame, flooring the weight at [`MIN_FRAME_WEIGHT`].
    pub fn new(feature: DVector<f64>, frame_weight: f64) -> Self {
        WeightedFrame {
            feature,
            frame_weight: frame_weight.max(MIN_FRAME_WEIGHT),
        }
    }

    /// A frame with weight 1, i.e. frame weighting disabled.
    pub fn unweighted(feature: DVector<f64>) -> Self {
        WeightedFrame {
            feature,
            frame_weight: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.feature.len()
    }
}

/// Result of evaluating the weighted statistics from their definitions.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchCovariance {
    pub cov: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub weight_sum: f64,
    pub weight_sq_sum: f64,
}

fn check_decay(decay: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&decay) {
        return Err(Error::InvalidConfig(format!(
            "decay must lie in [0, 1], got {decay}"
        )));
    }
    Ok(())
}

fn check_frame(frame: &WeightedFrame, dim: usize) -> Result<()> {
    if frame.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: frame.dim(),
        });
    }
    if !frame.frame_weight.is_finite() || frame.feature.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFault("non-finite frame".into()));
    }
    if frame.frame_weight <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "frame weight must be positive, got {}",
            frame.frame_weight
        )));
    }
    Ok(())
}

/// Weighted covariance, mean and weight sums of `frames` computed directly
/// from the definitions. The last frame has age 0.
pub fn batch_weighted_covariance(frames: &[WeightedFrame], decay: f64) -> Result<BatchCovariance> {
    check_decay(decay)?;
    let t = frames.len();
    if t < 2 {
        return Err(Error::InsufficientFrames { needed: 2, got: t });
    }
    let dim = frames[0].dim();
    for frame in frames {
        check_frame(frame, dim)?;
    }

    let psi: Vec<f64> = frames
        .iter()
        .enumerate()
        .map(|(i, fr)| fr.frame_weight * temporal_weight(decay, t - 1 - i))
        .collect();
    let weight_sum: f64 = psi.iter().sum();
    if !(weight_sum > 0.0) {
        return Err(Error::DegenerateWeights);
    }
    let weight_sq_sum: f64 = psi.iter().map(|p| (p / weight_sum).powi(2)).sum();
    let spread = 1.0 - weight_sq_sum;
    if !(spread > 1e-12) {
        return Err(Error::DegenerateWeights);
    }

    let mut mean = DVector::zeros(dim);
    for (fr, &p) in frames.iter().zip(&psi) {
        mean.axpy(p, &fr.feature, 1.0);
    }
    mean /= weight_sum;

    let mut cov = DMatrix::zeros(dim, dim);
    for (fr, &p) in frames.iter().zip(&psi) {
        let centered = &fr.feature - &mean;
        cov.ger(p / weight_sum, &centered, &centered, 1.0);
    }
    cov /= spread;
    symmetrize_from_upper(&mut cov);

    Ok(BatchCovariance {
        cov,
        mean,
        weight_sum,
        weight_sq_sum,
    })
}

/// Unbiased sample covariance `1/(n-1) sum (s_i - s_bar)(s_i - s_bar)^T`.
pub fn sample_covariance(samples: &[DVector<f64>]) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InsufficientFrames { needed: 2, got: n });
    }
    let dim = samples[0].len();
    let mut mean = DVector::zeros(dim);
    for s in samples {
        if s.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: s.len(),
            });
        }
        mean += s;
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(dim, dim);
    for s in samples {
        let c = s - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= (n - 1) as f64;
    Ok((cov, mean))
}

fn symmetrize_from_upper(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            m[(i, j)] = m[(j, i)];
        }
    }
}

/// Running weighted covariance of a feature stream.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedCovarianceState {
    cov: DMatrix<f64>,
    mean: DVector<f64>,
    weight_sum: f64,
    weight_sq_sum: f64,
    decay: f64,
    frame_count: usize,
}

impl WeightedCovarianceState {
    /// Initializes the state from the first `t0 >= 2` frames by direct
    /// evaluation. Later frames go through [`update`](Self::update).
    pub fn initialize(frames: &[WeightedFrame], decay: f64) -> Result<Self> {
        let batch = batch_weighted_covariance(frames, decay)?;
        Ok(WeightedCovarianceState {
            cov: batch.cov,
            mean: batch.mean,
            weight_sum: batch.weight_sum,
            weight_sq_sum: batch.weight_sq_sum,
            decay,
            frame_count: frames.len(),
        })
    }

    /// Folds one frame into the running statistics.
    ///
    /// With `a = decay * W_t` and `xi` the new frame weight:
    ///
    /// ```text
    /// C'  = [a (1 - S_t)(xi + a) C_t + a xi v v^T] / [2 a xi + a^2 (1 - S_t)]
    /// mu' = (a mu_t + xi f) / (a + xi)
    /// W'  = a + xi
    /// S'  = (a^2 S_t + xi^2) / (a + xi)^2
    /// ```
    ///
    /// where `v = f - mu_t`. The rank-one coefficient is the reduced form of
    /// `a (xi^2 + a xi) / (a + xi)`.
    pub fn update(&mut self, frame: &WeightedFrame) -> Result<()> {
        check_frame(frame, self.dim())?;
        let xi = frame.frame_weight;
        let a = self.decay * self.weight_sum;
        let spread = 1.0 - self.weight_sq_sum;
        let denom = 2.0 * a * xi + a * a * spread;
        if !(denom > 0.0) {
            return Err(Error::DegenerateState(denom));
        }

        let scale = a * spread * (xi + a) / denom;
        let rank_one = a * xi / denom;
        let v = &frame.feature - &self.mean;
        let d = self.dim();
        for j in 0..d {
            let vj = v[j] * rank_one;
            for i in 0..=j {
                let c = scale * self.cov[(i, j)] + v[i] * vj;
                self.cov[(i, j)] = c;
                self.cov[(j, i)] = c;
            }
        }

        let total = a + xi;
        self.mean *= a / total;
        self.mean.axpy(xi / total, &frame.feature, 1.0);
        self.weight_sq_sum = (a * a * self.weight_sq_sum + xi * xi) / (total * total);
        self.weight_sum = total;
        self.frame_count += 1;

        if !self.weight_sum.is_finite() || !self.weight_sq_sum.is_finite() {
            return Err(Error::NumericalFault("weight sums overflowed".into()));
        }
        Ok(())
    }

    /// Consuming form of [`update`](Self::update).
    pub fn updated(mut self, frame: &WeightedFrame) -> Result<Self> {
        self.update(frame)?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn weight_sum(&self) -> f64 {
        self.weight_sum
    }

    pub fn weight_sq_sum(&self) -> f64 {
        self.weight_sq_sum
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }
}
