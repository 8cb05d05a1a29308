//! Offline training of per-instance covariance models and online per-frame
//! labeling with boundary detection.
//!
//! Online, every frame updates the running weighted covariance, which is
//! projected and compared against every training descriptor. The distance
//! to a class is the smallest distance to any of its descriptors. The
//! first decision is the nearest class once `init_frames` frames have been
//! seen. After that the label only changes when the nearest class differs
//! from the current label *and* the standard deviation of the class
//! distances sits at a local minimum, which is what a transition between
//! two actions looks like: every class is about equally far away.

use std::collections::VecDeque;

use nalgebra::DVector;

use crate::covariance::{batch_weighted_covariance, WeightedCovarianceState, WeightedFrame};
use crate::error::{Error, Result};
use crate::projection::{
    default_target_dim, learn_projection, project, ProjectionConfig, ProjectionFit,
    ProjectionMatrix,
};
use crate::skeleton::{frame_weight, normalize_skeleton, JointLayout, NeutralPose, SkeletonFrame};
use crate::spd::{regularize, stein_divergence, SpdMatrix};

pub type Label = u32;

/// Tunables shared by training and recognition.
#[derive(Debug, Clone, PartialEq)]
pub struct RecognizerConfig {
    /// Forgetting factor of the temporal weights.
    pub decay: f64,
    /// Frames accumulated before the first decision.
    pub init_frames: usize,
    /// Projected dimension; `None` picks [`default_target_dim`].
    pub target_dim: Option<usize>,
    /// Odd window over the smoothed std series for the local-minimum test.
    pub std_window: usize,
    /// Diagonal shift applied to every covariance before projection.
    pub epsilon: f64,
    pub reset_on_boundary: bool,
    /// Weight frames by their distance to the neutral pose. When off every
    /// frame weighs 1.
    pub frame_weighting: bool,
    pub projection: ProjectionConfig,
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        RecognizerConfig {
            decay: 0.95,
            init_frames: 30,
            target_dim: None,
            std_window: 5,
            epsilon: 1e-6,
            reset_on_boundary: false,
            frame_weighting: true,
            projection: ProjectionConfig::default(),
        }
    }
}

impl RecognizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.decay) {
            return Err(Error::InvalidConfig(format!(
                "decay must lie in [0, 1], got {}",
                self.decay
            )));
        }
        if self.init_frames < 2 {
            return Err(Error::InvalidConfig(format!(
                "init_frames must be at least 2, got {}",
                self.init_frames
            )));
        }
        if self.std_window < 3 || self.std_window.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "std_window must be odd and at least 3, got {}",
                self.std_window
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// A class label with its projected training descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionModel {
    pub label: Label,
    pub descriptors: Vec<SpdMatrix>,
}

/// Smallest Stein divergence between `c` and any descriptor of `model`.
pub fn class_distance(c: &SpdMatrix, model: &ActionModel) -> Result<f64> {
    let mut best = f64::INFINITY;
    for x in &model.descriptors {
        best = best.min(stein_divergence(c, x)?);
    }
    Ok(best)
}

/// A labeled single-action training sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledInstance {
    pub label: Label,
    pub frames: Vec<SkeletonFrame>,
}

/// Everything recognition needs: projection, class models and the neutral
/// pose, plus the settings they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub decay: f64,
    pub init_frames: usize,
    pub epsilon: f64,
    pub std_window: usize,
    pub frame_weighting: bool,
    pub layout: JointLayout,
    pub neutral: NeutralPose,
    pub projection: ProjectionMatrix,
    /// Sorted by label.
    pub classes: Vec<ActionModel>,
    /// Final value of the projection objective.
    pub objective: f64,
}

/// Training summary alongside the model.
#[derive(Debug, Clone)]
pub struct TrainingReport {
    pub fit: ProjectionFit,
    pub skipped_instances: usize,
    pub dropped_frames: usize,
}

fn weighted_frame(
    frame: &SkeletonFrame,
    layout: &JointLayout,
    neutral: &NeutralPose,
    frame_weighting: bool,
) -> Result<Option<WeightedFrame>> {
    let feature = match normalize_skeleton(frame, layout) {
        Ok(f) => f,
        Err(Error::MissingJoints) | Err(Error::DegenerateSkeleton(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let weight = if frame_weighting {
        frame_weight(&feature, neutral)?
    } else {
        1.0
    };
    Ok(Some(WeightedFrame::new(feature.into_inner(), weight)))
}

/// Regularized weighted covariance of one whole instance, or `None` when
/// fewer than 2 frames survive normalization.
pub fn instance_descriptor(
    frames: &[SkeletonFrame],
    layout: &JointLayout,
    neutral: &NeutralPose,
    config: &RecognizerConfig,
) -> Result<(Option<SpdMatrix>, usize)> {
    let mut weighted = Vec::with_capacity(frames.len());
    let mut dropped = 0;
    for f in frames {
        match weighted_frame(f, layout, neutral, config.frame_weighting)? {
            Some(w) => weighted.push(w),
            None => dropped += 1,
        }
    }
    if weighted.len() < 2 {
        return Ok((None, dropped));
    }
    let batch = batch_weighted_covariance(&weighted, config.decay)?;
    Ok((Some(regularize(&batch.cov, config.epsilon)?), dropped))
}

/// Builds one descriptor per training instance, learns the projection and
/// groups the projected descriptors by label.
pub fn train(
    instances: &[LabeledInstance],
    layout: &JointLayout,
    neutral: &NeutralPose,
    config: &RecognizerConfig,
) -> Result<(TrainedModel, TrainingReport)> {
    config.validate()?;
    if neutral.dim() != layout.feature_dim() {
        return Err(Error::DimensionMismatch {
            expected: layout.feature_dim(),
            found: neutral.dim(),
        });
    }
    let mut descriptors = Vec::with_capacity(instances.len());
    let mut skipped = 0;
    let mut dropped_frames = 0;
    for inst in instances {
        let (desc, dropped) = instance_descriptor(&inst.frames, layout, neutral, config)?;
        dropped_frames += dropped;
        match desc {
            Some(d) => descriptors.push((d, inst.label)),
            None => {
                log::warn!(
                    "skipping instance of class {}: fewer than 2 usable frames",
                    inst.label
                );
                skipped += 1;
            }
        }
    }
    if descriptors.is_empty() {
        return Err(Error::AffinityUndefined);
    }

    let n = layout.feature_dim();
    let m = config.target_dim.unwrap_or_else(|| default_target_dim(n));
    let fit = learn_projection(&descriptors, m, &config.projection)?;

    let mut classes: Vec<ActionModel> = Vec::new();
    for (x, label) in &descriptors {
        let projected = project(&fit.projection, x)?;
        match classes.iter_mut().find(|c| c.label == *label) {
            Some(c) => c.descriptors.push(projected),
            None => classes.push(ActionModel {
                label: *label,
                descriptors: vec![projected],
            }),
        }
    }
    classes.sort_by_key(|c| c.label);

    let model = TrainedModel {
        decay: config.decay,
        init_frames: config.init_frames,
        epsilon: config.epsilon,
        std_window: config.std_window,
        frame_weighting: config.frame_weighting,
        layout: layout.clone(),
        neutral: neutral.clone(),
        projection: fit.projection.clone(),
        classes,
        objective: fit.objective,
    };
    Ok((
        model,
        TrainingReport {
            fit,
            skipped_instances: skipped,
            dropped_frames,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    InitialDecision,
    Continuation,
    Boundary,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::InitialDecision => "initial_decision",
            EventKind::Continuation => "continuation",
            EventKind::Boundary => "boundary",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "initial_decision" => Some(EventKind::InitialDecision),
            "continuation" => Some(EventKind::Continuation),
            "boundary" => Some(EventKind::Boundary),
            _ => None,
        }
    }
}

/// Per-frame decision. `frame_index` is the 0-based position in the stream,
/// dropped frames included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecognitionEvent {
    pub frame_index: usize,
    pub label: Label,
    pub kind: EventKind,
}

/// What one call to [`TrainedModel::step`] produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub frame_index: usize,
    pub event: Option<RecognitionEvent>,
    /// Class distances in label order, when a descriptor was available.
    pub distances: Option<Vec<f64>>,
    pub std: Option<f64>,
    pub dropped: bool,
}

/// Streaming state for one input stream.
#[derive(Debug, Clone)]
pub struct RecognizerState {
    cov: Option<WeightedCovarianceState>,
    warmup: Vec<WeightedFrame>,
    distance_history: VecDeque<Vec<f64>>,
    std_history: VecDeque<f64>,
    current_label: Option<Label>,
    frame_index: usize,
    dropped_frames: usize,
    history_len: usize,
}

impl RecognizerState {
    pub fn current_label(&self) -> Option<Label> {
        self.current_label
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn dropped_frames(&self) -> usize {
        self.dropped_frames
    }

    pub fn covariance(&self) -> Option<&WeightedCovarianceState> {
        self.cov.as_ref()
    }

    pub fn std_history(&self) -> impl Iterator<Item = f64> + '_ {
        self.std_history.iter().copied()
    }

    pub fn distance_history(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.distance_history.iter().map(|v| v.as_slice())
    }

    fn push_history(&mut self, distances: Vec<f64>, std: f64) {
        if self.std_history.len() == self.history_len {
            self.std_history.pop_front();
            self.distance_history.pop_front();
        }
        self.std_history.push_back(std);
        self.distance_history.push_back(distances);
    }

    fn clear_history(&mut self) {
        self.std_history.clear();
        self.distance_history.clear();
    }
}

/// Population standard deviation.
pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// True when the 3-point moving average of `series` has a local minimum at
/// the center of the trailing `window`: strictly below both window ends.
///
/// The newest smoothed value needs one raw value beyond it, so the window
/// ends one sample before the end of `series`.
pub fn smoothed_local_minimum(series: &[f64], window: usize) -> bool {
    let half = window / 2;
    let len = series.len();
    if len < window + 2 {
        return false;
    }
    let smooth = |j: usize| (series[j - 1] + series[j] + series[j + 1]) / 3.0;
    let right = len - 2;
    let center = right - half;
    let left = center - half;
    let c = smooth(center);
    c < smooth(left) && c < smooth(right)
}

/// Index of the smallest value, lowest index on ties.
fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

impl TrainedModel {
    pub fn labels(&self) -> Vec<Label> {
        self.classes.iter().map(|c| c.label).collect()
    }

    pub fn source_dim(&self) -> usize {
        self.projection.rows()
    }

    pub fn target_dim(&self) -> usize {
        self.projection.cols()
    }

    pub fn new_state(&self) -> RecognizerState {
        RecognizerState {
            cov: None,
            warmup: Vec::with_capacity(self.init_frames),
            distance_history: VecDeque::with_capacity(self.std_window + 2),
            std_history: VecDeque::with_capacity(self.std_window + 2),
            current_label: None,
            frame_index: 0,
            dropped_frames: 0,
            history_len: self.std_window + 2,
        }
    }

    /// Distances from a raw (unprojected) covariance to every class, in
    /// label order.
    pub fn class_distances(&self, cov: &nalgebra::DMatrix<f64>) -> Result<Vec<f64>> {
        let descriptor = project(&self.projection, &regularize(cov, self.epsilon)?)?;
        self.classes
            .iter()
            .map(|c| class_distance(&descriptor, c))
            .collect()
    }

    /// Consumes one frame.
    pub fn step(
        &self,
        state: &mut RecognizerState,
        frame: &SkeletonFrame,
        reset_on_boundary: bool,
    ) -> Result<StepOutcome> {
        if self.classes.is_empty() {
            return Err(Error::InvalidConfig("model has no classes".into()));
        }
        let frame_index = state.frame_index;
        state.frame_index += 1;
        let mut outcome = StepOutcome {
            frame_index,
            event: None,
            distances: None,
            std: None,
            dropped: false,
        };

        let Some(wf) = weighted_frame(frame, &self.layout, &self.neutral, self.frame_weighting)?
        else {
            state.dropped_frames += 1;
            outcome.dropped = true;
            return Ok(outcome);
        };

        let fresh = match state.cov.as_mut() {
            Some(cov) => {
                cov.update(&wf)?;
                Some(wf)
            }
            None => {
                state.warmup.push(wf);
                if state.warmup.len() < self.init_frames {
                    // Re-accumulating after a reset keeps the last label.
                    outcome.event = state.current_label.map(|label| RecognitionEvent {
                        frame_index,
                        label,
                        kind: EventKind::Continuation,
                    });
                    return Ok(outcome);
                }
                let frames = std::mem::take(&mut state.warmup);
                state.cov = Some(WeightedCovarianceState::initialize(&frames, self.decay)?);
                None
            }
        };

        let cov = state.cov.as_ref().expect("initialized above");
        let distances = self.class_distances(cov.cov())?;
        let std = population_std(&distances);
        let nearest = self.classes[argmin(&distances)].label;
        state.push_history(distances.clone(), std);
        outcome.distances = Some(distances);
        outcome.std = Some(std);

        let event = match state.current_label {
            None => {
                state.current_label = Some(nearest);
                RecognitionEvent {
                    frame_index,
                    label: nearest,
                    kind: EventKind::InitialDecision,
                }
            }
            Some(current) => {
                let series: Vec<f64> = state.std_history.iter().copied().collect();
                if nearest != current && smoothed_local_minimum(&series, self.std_window) {
                    state.current_label = Some(nearest);
                    if reset_on_boundary {
                        state.cov = None;
                        state.clear_history();
                        state.warmup.extend(fresh);
                    }
                    RecognitionEvent {
                        frame_index,
                        label: nearest,
                        kind: EventKind::Boundary,
                    }
                } else {
                    RecognitionEvent {
                        frame_index,
                        label: current,
                        kind: EventKind::Continuation,
                    }
                }
            }
        };
        outcome.event = Some(event);
        Ok(outcome)
    }

    /// Runs a whole stream through a fresh state.
    pub fn recognize(
        &self,
        frames: &[SkeletonFrame],
        reset_on_boundary: bool,
    ) -> Result<StreamRecognition> {
        let mut state = self.new_state();
        let mut events = Vec::with_capacity(frames.len());
        let mut trace = Vec::with_capacity(frames.len());
        for frame in frames {
            let out = self.step(&mut state, frame, reset_on_boundary)?;
            if let (Some(d), Some(s)) = (&out.distances, out.std) {
                trace.push(TraceRow {
                    frame_index: out.frame_index,
                    std: s,
                    distances: d.clone(),
                });
            }
            if let Some(e) = out.event {
                events.push((
                    e,
                    trace
                        .last()
                        .filter(|t| t.frame_index == e.frame_index)
                        .map(|t| (min_of(&t.distances), t.std)),
                ));
            }
        }
        Ok(StreamRecognition {
            events,
            trace,
            dropped_frames: state.dropped_frames,
            frame_count: frames.len(),
        })
    }
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Class distances and their spread at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub frame_index: usize,
    pub std: f64,
    pub distances: Vec<f64>,
}

/// Output of [`TrainedModel::recognize`].
#[derive(Debug, Clone, PartialEq)]
pub struct StreamRecognition {
    /// Events with `(min distance, std)` when the frame produced distances.
    pub events: Vec<(RecognitionEvent, Option<(f64, f64)>)>,
    pub trace: Vec<TraceRow>,
    pub dropped_frames: usize,
    pub frame_count: usize,
}

impl StreamRecognition {
    pub fn plain_events(&self) -> Vec<RecognitionEvent> {
        self.events.iter().map(|(e, _)| *e).collect()
    }

    pub fn boundaries(&self) -> usize {
        self.events
            .iter()
            .filter(|(e, _)| e.kind == EventKind::Boundary)
            .count()
    }
}

/// Mean feature vector of a sequence, a convenient neutral pose when the
/// sequence is known to be at rest.
pub fn mean_feature(frames: &[SkeletonFrame], layout: &JointLayout) -> Result<NeutralPose> {
    let mut acc = DVector::zeros(layout.feature_dim());
    let mut count = 0usize;
    for f in frames {
        if let Ok(v) = normalize_skeleton(f, layout) {
            acc += v.values();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InsufficientFrames { needed: 1, got: 0 });
    }
    Ok(NeutralPose(crate::skeleton::FeatureVector(
        acc / count as f64,
    )))
}
