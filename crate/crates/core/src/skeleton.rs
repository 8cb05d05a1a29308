//! Skeleton normalization and frame weights.

use nalgebra::DVector;

use crate::covariance::MIN_FRAME_WEIGHT;
use crate::error::{Error, Result};

/// Reference distance below which a skeleton is considered collapsed.
pub const MIN_REFERENCE_DISTANCE: f64 = 1e-6;

/// Joint naming and the indices of the three reference joints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointLayout {
    pub names: Vec<String>,
    pub hip_center: usize,
    pub shoulder_center: usize,
    pub spine: usize,
}

const KINECT_V1_JOINTS: [&str; 20] = [
    "HipCenter",
    "Spine",
    "ShoulderCenter",
    "Head",
    "ShoulderLeft",
    "ElbowLeft",
    "WristLeft",
    "HandLeft",
    "ShoulderRight",
    "ElbowRight",
    "WristRight",
    "HandRight",
    "HipLeft",
    "KneeLeft",
    "AnkleLeft",
    "FootLeft",
    "HipRight",
    "KneeRight",
    "AnkleRight",
    "FootRight",
];

const KINECT_V2_JOINTS: [&str; 25] = [
    "SpineBase",
    "SpineMid",
    "Neck",
    "Head",
    "ShoulderLeft",
    "ElbowLeft",
    "WristLeft",
    "HandLeft",
    "ShoulderRight",
    "ElbowRight",
    "WristRight",
    "HandRight",
    "HipLeft",
    "KneeLeft",
    "AnkleLeft",
    "FootLeft",
    "HipRight",
    "KneeRight",
    "AnkleRight",
    "FootRight",
    "SpineShoulder",
    "HandTipLeft",
    "ThumbLeft",
    "HandTipRight",
    "ThumbRight",
];

impl JointLayout {
    pub fn new(
        names: Vec<String>,
        hip_center: usize,
        shoulder_center: usize,
        spine: usize,
    ) -> Result<Self> {
        let k = names.len();
        if k < 4 {
            return Err(Error::InvalidConfig(format!(
                "skeleton needs at least 4 joints, got {k}"
            )));
        }
        for (role, idx) in [
            ("hip_center", hip_center),
            ("shoulder_center", shoulder_center),
            ("spine", spine),
        ] {
            if idx >= k {
                return Err(Error::InvalidConfig(format!(
                    "{role} index {idx} out of range for {k} joints"
                )));
            }
        }
        if hip_center == shoulder_center || hip_center == spine || shoulder_center == spine {
            return Err(Error::InvalidConfig(
                "reference joints must be distinct".into(),
            ));
        }
        Ok(JointLayout {
            names,
            hip_center,
            shoulder_center,
            spine,
        })
    }

    /// 20-joint Kinect v1 skeleton (MSRC-12).
    pub fn kinect_v1() -> Self {
        JointLayout::new(
            KINECT_V1_JOINTS.iter().map(|s| s.to_string()).collect(),
            0,
            2,
            1,
        )
        .expect("valid preset")
    }

    /// 25-joint Kinect v2 skeleton.
    pub fn kinect_v2() -> Self {
        JointLayout::new(
            KINECT_V2_JOINTS.iter().map(|s| s.to_string()).collect(),
            0,
            20,
            1,
        )
        .expect("valid preset")
    }

    /// `k` joints named `j0..`, hip at 0, spine at 1, shoulder center at 2.
    pub fn generic(k: usize) -> Result<Self> {
        JointLayout::new((0..k).map(|i| format!("j{i}")).collect(), 0, 2, 1)
    }

    pub fn joint_count(&self) -> usize {
        self.names.len()
    }

    /// Length of the normalized feature vector, `(K - 1) * 3`.
    pub fn feature_dim(&self) -> usize {
        (self.joint_count() - 1) * 3
    }
}

/// One captured pose: `K` joints in sensor units.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonFrame {
    pub joints: Vec<[f64; 3]>,
    pub timestamp: Option<f64>,
}

impl SkeletonFrame {
    pub fn new(joints: Vec<[f64; 3]>) -> Self {
        SkeletonFrame {
            joints,
            timestamp: None,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.joints.iter().flatten().all(|v| v.is_finite())
    }
}

/// Hip-relative, scale-normalized joint coordinates with the hip removed.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub DVector<f64>);

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }
}

/// The rest stance frames are weighted against.
#[derive(Debug, Clone, PartialEq)]
pub struct NeutralPose(pub FeatureVector);

impl NeutralPose {
    pub fn from_frame(frame: &SkeletonFrame, layout: &JointLayout) -> Result<Self> {
        normalize_skeleton(frame, layout).map(NeutralPose)
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Translates the hip center to the origin, divides by the shoulder-center
/// to spine distance and flattens the remaining joints in layout order.
pub fn normalize_skeleton(frame: &SkeletonFrame, layout: &JointLayout) -> Result<FeatureVector> {
    if frame.joints.len() != layout.joint_count() {
        return Err(Error::DimensionMismatch {
            expected: layout.joint_count(),
            found: frame.joints.len(),
        });
    }
    if !frame.is_complete() {
        return Err(Error::MissingJoints);
    }
    let hip = frame.joints[layout.hip_center];
    let scale = distance(
        &frame.joints[layout.shoulder_center],
        &frame.joints[layout.spine],
    );
    if !(scale >= MIN_REFERENCE_DISTANCE) {
        return Err(Error::DegenerateSkeleton(scale));
    }
    let mut out = Vec::with_capacity(layout.feature_dim());
    for (i, joint) in frame.joints.iter().enumerate() {
        if i == layout.hip_center {
            continue;
        }
        out.extend((0..3).map(|c| (joint[c] - hip[c]) / scale));
    }
    Ok(FeatureVector(DVector::from_vec(out)))
}

/// Mean per-joint Euclidean distance to the neutral pose, without the floor.
pub fn raw_frame_weight(feature: &FeatureVector, neutral: &NeutralPose) -> Result<f64> {
    let d = feature.dim();
    if d != neutral.dim() {
        return Err(Error::DimensionMismatch {
            expected: neutral.dim(),
            found: d,
        });
    }
    if d == 0 || !d.is_multiple_of(3) {
        return Err(Error::InvalidConfig(format!(
            "feature length {d} is not a multiple of 3"
        )));
    }
    let a = feature.values().as_slice();
    let b = neutral.0.values().as_slice();
    let total: f64 = a
        .chunks_exact(3)
        .zip(b.chunks_exact(3))
        .map(|(p, q)| distance(&[p[0], p[1], p[2]], &[q[0], q[1], q[2]]))
        .sum();
    Ok(total / (d / 3) as f64)
}

/// Discriminative weight of a frame, floored at [`MIN_FRAME_WEIGHT`].
pub fn frame_weight(feature: &FeatureVector, neutral: &NeutralPose) -> Result<f64> {
    Ok(raw_frame_weight(feature, neutral)?.max(MIN_FRAME_WEIGHT))
}
