//! Seeded synthetic action classes shaped as skeleton streams.
//!
//! Each class owns a Gaussian generator (mean and covariance) over the free
//! joint coordinates. An instance of `T` frames performs the action over its
//! first `A` frames, following an envelope that starts and ends at the shared
//! neutral pose, then holds the neutral pose for the remaining `T - A`:
//!
//! ```text
//! f_j = neutral + sin(pi (j + 1/2) / A) * (mu_class + L_class z_j) + noise   (j < A)
//! f_j = neutral + noise                                                     (j >= A)
//! ```
//!
//! The spine and shoulder-center joints stay fixed one unit apart, so the
//! frames can be written as raw skeletons (random body scale and hip
//! position per instance) that normalize back to exactly `f_j`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::recognizer::{Label, LabeledInstance};
use crate::skeleton::{FeatureVector, JointLayout, NeutralPose, SkeletonFrame};
use crate::spd::{stein_divergence, SpdMatrix};

const SPINE: [f64; 3] = [0.0, 0.4, 0.0];
const SHOULDER_CENTER: [f64; 3] = [0.0, 1.4, 0.0];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub classes: usize,
    /// Normalized feature dimension `(K - 1) * 3`; a multiple of 3, at
    /// least 9.
    pub dim: usize,
    pub frames_per_instance: usize,
    pub instances_per_class: usize,
    pub seed: u64,
    /// Minimum pairwise Stein divergence between class covariances.
    pub separation_floor: f64,
    /// Standard deviation of the isotropic per-frame noise.
    pub noise: f64,
    /// Standard deviation of the class mean offsets.
    pub mean_scale: f64,
    /// Typical standard deviation of the class generators.
    pub spread: f64,
    pub max_attempts: usize,
    /// Fraction of each instance spent holding the neutral pose after the
    /// action.
    pub rest_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 3,
            dim: 21,
            frames_per_instance: 40,
            instances_per_class: 5,
            seed: 0,
            separation_floor: 2.0,
            noise: 0.02,
            mean_scale: 0.3,
            spread: 0.25,
            max_attempts: 200,
            rest_fraction: 0.3,
        }
    }
}

#[derive(Debug, Clone)]
struct ClassGenerator {
    label: Label,
    mean: DVector<f64>,
    /// Cholesky-style factor of the class covariance.
    factor: DMatrix<f64>,
}

/// Fixed class generators plus the shared skeleton geometry.
#[derive(Debug, Clone)]
pub struct SyntheticClasses {
    config: SynthConfig,
    layout: JointLayout,
    neutral_free: DVector<f64>,
    generators: Vec<ClassGenerator>,
    min_separation: f64,
}

fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

impl SyntheticClasses {
    /// Draws class generators until every pair is separated by at least the
    /// configured floor.
    pub fn new(config: SynthConfig) -> Result<Self> {
        if config.classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 classes, got {}",
                config.classes
            )));
        }
        if config.dim < 9 || !config.dim.is_multiple_of(3) {
            return Err(Error::InvalidConfig(format!(
                "feature dimension must be a multiple of 3 and at least 9, got {}",
                config.dim
            )));
        }
        if !(0.0..1.0).contains(&config.rest_fraction) {
            return Err(Error::InvalidConfig(format!(
                "rest fraction must lie in [0, 1), got {}",
                config.rest_fraction
            )));
        }
        let layout = JointLayout::generic(config.dim / 3 + 1)?;
        let free = config.dim - 6;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let neutral_free = DVector::from_fn(free, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            0.5 * z
        });

        for _ in 0..config.max_attempts {
            let mut generators = Vec::with_capacity(config.classes);
            let mut covs = Vec::with_capacity(config.classes);
            for c in 0..config.classes {
                let q = random_orthogonal(free, &mut rng);
                let sd = DVector::from_fn(free, |_, _| {
                    config.spread * rng.random_range(-1.2f64..1.2).exp()
                });
                let factor = &q * DMatrix::from_diagonal(&sd);
                let cov = &factor * factor.transpose();
                covs.push(SpdMatrix::new((&cov + cov.transpose()) * 0.5)?);
                let mean = DVector::from_fn(free, |_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    config.mean_scale * z
                });
                generators.push(ClassGenerator {
                    label: c as Label + 1,
                    mean,
                    factor,
                });
            }
            let mut min_sep = f64::INFINITY;
            for a in 0..covs.len() {
                for b in (a + 1)..covs.len() {
                    min_sep = min_sep.min(stein_divergence(&covs[a], &covs[b])?);
                }
            }
            if min_sep >= config.separation_floor {
                return Ok(SyntheticClasses {
                    config,
                    layout,
                    neutral_free,
                    generators,
                    min_separation: min_sep,
                });
            }
        }
        Err(Error::InseparableSynthesis {
            floor: config.separation_floor,
            attempts: config.max_attempts,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    pub fn layout(&self) -> &JointLayout {
        &self.layout
    }

    pub fn labels(&self) -> Vec<Label> {
        self.generators.iter().map(|g| g.label).collect()
    }

    /// Smallest pairwise Stein divergence between class covariances.
    pub fn min_separation(&self) -> f64 {
        self.min_separation
    }

    fn full_feature(&self, free: &DVector<f64>) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.config.dim);
        v.extend_from_slice(&SPINE);
        v.extend_from_slice(&SHOULDER_CENTER);
        v.extend(free.iter().copied());
        DVector::from_vec(v)
    }

    fn to_skeleton(&self, feature: &DVector<f64>, hip: [f64; 3], scale: f64) -> SkeletonFrame {
        let mut joints = Vec::with_capacity(self.layout.joint_count());
        joints.push(hip);
        for p in feature.as_slice().chunks_exact(3) {
            joints.push([
                hip[0] + scale * p[0],
                hip[1] + scale * p[1],
                hip[2] + scale * p[2],
            ]);
        }
        SkeletonFrame::new(joints)
    }

    pub fn neutral(&self) -> NeutralPose {
        NeutralPose(FeatureVector(self.full_feature(&self.neutral_free)))
    }

    /// The neutral pose as a raw skeleton at the origin with unit scale.
    pub fn neutral_frame(&self) -> SkeletonFrame {
        self.to_skeleton(&self.full_feature(&self.neutral_free), [0.0; 3], 1.0)
    }

    /// One instance of class `label` drawn from `rng`.
    pub fn sample_instance(
        &self,
        label: Label,
        frames: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<LabeledInstance> {
        let generator = self
            .generators
            .iter()
            .find(|g| g.label == label)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown synthetic class {label}")))?;
        let free = self.neutral_free.len();
        let scale = rng.random_range(0.8..1.25);
        let hip = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.5..0.5),
            rng.random_range(1.5..3.5),
        ];
        let rest = ((frames as f64 * self.config.rest_fraction).round() as usize)
            .min(frames.saturating_sub(1));
        let active = frames - rest;
        let mut out = Vec::with_capacity(frames);
        for j in 0..frames {
            let envelope = if j < active {
                (std::f64::consts::PI * (j as f64 + 0.5) / active as f64).sin()
            } else {
                0.0
            };
            let z = DVector::from_fn(free, |_, _| StandardNormal.sample(rng));
            let noise = DVector::from_fn(free, |_, _| {
                let e: f64 = StandardNormal.sample(rng);
                self.config.noise * e
            });
            let action = &generator.mean + &generator.factor * z;
            let pose = &self.neutral_free + action * envelope + noise;
            out.push(self.to_skeleton(&self.full_feature(&pose), hip, scale));
        }
        Ok(LabeledInstance { label, frames: out })
    }

    /// `per_class` instances of every class, classes interleaved, drawn from
    /// a stream seeded by `seed`.
    pub fn sample(
        &self,
        per_class: usize,
        frames: usize,
        seed: u64,
    ) -> Result<Vec<LabeledInstance>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(per_class * self.generators.len());
        for _ in 0..per_class {
            for label in self.labels() {
                out.push(self.sample_instance(label, frames, &mut rng)?);
            }
        }
        Ok(out)
    }

    /// `count` instances cycling through the classes.
    pub fn sample_mixed(
        &self,
        count: usize,
        frames: usize,
        seed: u64,
    ) -> Result<Vec<LabeledInstance>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels = self.labels();
        (0..count)
            .map(|i| self.sample_instance(labels[i % labels.len()], frames, &mut rng))
            .collect()
    }

    /// The training instances described by the configuration.
    pub fn training_set(&self) -> Result<Vec<LabeledInstance>> {
        self.sample(
            self.config.instances_per_class,
            self.config.frames_per_instance,
            self.config.seed.wrapping_add(1),
        )
    }
}

/// Generators plus the configured training instances.
pub fn synth_classes(config: SynthConfig) -> Result<(SyntheticClasses, Vec<LabeledInstance>)> {
    let classes = SyntheticClasses::new(config)?;
    let instances = classes.training_set()?;
    Ok((classes, instances))
}
