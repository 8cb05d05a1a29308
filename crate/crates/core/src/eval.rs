//! Stream construction, ground-truth alignment and scoring.
//!
//! Three per-segment measures, all computed against the label in effect at
//! each frame (the most recent event at or before it; frames before the
//! first decision carry no label):
//!
//! * latency `h / H`: frames until the first correct label over segment
//!   length, for segments that are ever labeled correctly;
//! * miss rate `(n - m) / n` per class: segments with no correct frame at
//!   all over segments of that class;
//! * error rate `w / W`: frames carrying any other label (or none) over
//!   segment length, for detected segments.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::recognizer::{Label, LabeledInstance, RecognitionEvent};
use crate::skeleton::SkeletonFrame;

/// Frames `start..=end` belong to one action of class `label`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub label: Label,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Ground-truth segmentation of a stream.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StreamAnnotation {
    pub segments: Vec<Segment>,
}

impl StreamAnnotation {
    /// Checks that segments are non-empty, ordered and contiguous from
    /// frame 0.
    pub fn validate(&self) -> Result<()> {
        let mut next = 0;
        for (i, s) in self.segments.iter().enumerate() {
            if s.end < s.start {
                return Err(Error::InvalidConfig(format!(
                    "segment {i} ends before it starts"
                )));
            }
            if s.start != next {
                return Err(Error::InvalidConfig(format!(
                    "segment {i} starts at frame {} but frame {next} was expected",
                    s.start
                )));
            }
            next = s.end + 1;
        }
        Ok(())
    }

    /// Total frames covered.
    pub fn frame_count(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end + 1)
    }

    /// Ground-truth label of every frame.
    pub fn frame_labels(&self) -> Vec<Label> {
        self.segments
            .iter()
            .flat_map(|s| std::iter::repeat_n(s.label, s.len()))
            .collect()
    }
}

/// Concatenates `instances` in a seeded random order.
pub fn stitch(instances: &[LabeledInstance], seed: u64) -> (Vec<SkeletonFrame>, StreamAnnotation) {
    let mut order: Vec<usize> = (0..instances.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut frames = Vec::new();
    let mut segments = Vec::with_capacity(instances.len());
    for i in order {
        let inst = &instances[i];
        if inst.frames.is_empty() {
            continue;
        }
        let start = frames.len();
        frames.extend(inst.frames.iter().cloned());
        segments.push(Segment {
            start,
            end: frames.len() - 1,
            label: inst.label,
        });
    }
    (frames, StreamAnnotation { segments })
}

/// How one ground-truth segment was labeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentScore {
    pub label: Label,
    pub length: usize,
    /// Offset of the first correctly labeled frame, if any.
    pub first_correct: Option<usize>,
    /// Frames labeled with anything other than the true label.
    pub wrong_frames: usize,
}

impl SegmentScore {
    pub fn detected(&self) -> bool {
        self.first_correct.is_some()
    }

    pub fn latency(&self) -> Option<f64> {
        self.first_correct.map(|h| h as f64 / self.length as f64)
    }

    pub fn error_rate(&self) -> Option<f64> {
        self.detected()
            .then(|| self.wrong_frames as f64 / self.length as f64)
    }
}

/// Scores every segment by walking the events once. Events must be sorted
/// by frame index.
pub fn score_segments(
    events: &[RecognitionEvent],
    annotation: &StreamAnnotation,
) -> Vec<SegmentScore> {
    let mut scores = Vec::with_capacity(annotation.segments.len());
    // Label in effect before the next unread event.
    let mut current: Option<Label> = None;
    let mut next = 0;
    for seg in &annotation.segments {
        while next < events.len() && events[next].frame_index <= seg.start {
            current = Some(events[next].label);
            next += 1;
        }
        let mut first_correct = None;
        let mut wrong = 0;
        let mut run_start = seg.start;
        let mut run_label = current;
        let mut close_run = |from: usize, to_exclusive: usize, label: Option<Label>| {
            if to_exclusive <= from {
                return;
            }
            if label == Some(seg.label) {
                if first_correct.is_none() {
                    first_correct = Some(from - seg.start);
                }
            } else {
                wrong += to_exclusive - from;
            }
        };
        while next < events.len() && events[next].frame_index <= seg.end {
            let e = events[next];
            close_run(run_start, e.frame_index, run_label);
            run_start = e.frame_index;
            run_label = Some(e.label);
            next += 1;
        }
        close_run(run_start, seg.end + 1, run_label);
        current = run_label;
        scores.push(SegmentScore {
            label: seg.label,
            length: seg.len(),
            first_correct,
            wrong_frames: wrong,
        });
    }
    scores
}

/// Per-segment latency; `None` for segments never labeled correctly.
pub fn latency(events: &[RecognitionEvent], annotation: &StreamAnnotation) -> Vec<Option<f64>> {
    score_segments(events, annotation)
        .iter()
        .map(SegmentScore::latency)
        .collect()
}

/// Per-class miss rate over the classes present in the annotation.
pub fn miss_rate(
    events: &[RecognitionEvent],
    annotation: &StreamAnnotation,
) -> BTreeMap<Label, f64> {
    class_miss_rates(&score_segments(events, annotation))
}

/// Per-segment error rate; `None` for undetected segments.
pub fn error_rate(events: &[RecognitionEvent], annotation: &StreamAnnotation) -> Vec<Option<f64>> {
    score_segments(events, annotation)
        .iter()
        .map(SegmentScore::error_rate)
        .collect()
}

fn class_miss_rates(scores: &[SegmentScore]) -> BTreeMap<Label, f64> {
    let mut counts: BTreeMap<Label, (usize, usize)> = BTreeMap::new();
    for s in scores {
        let c = counts.entry(s.label).or_default();
        c.0 += 1;
        if s.detected() {
            c.1 += 1;
        }
    }
    counts
        .into_iter()
        .map(|(l, (n, m))| (l, (n - m) as f64 / n as f64))
        .collect()
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for v in values {
        total += v;
        n += 1;
    }
    (n > 0).then(|| total / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub segments: usize,
    pub detected: usize,
    pub latency: Option<f64>,
    pub miss_rate: f64,
    pub error_rate: Option<f64>,
}

/// Aggregated scores over one or more annotated streams.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_class: BTreeMap<Label, ClassMetrics>,
    /// Unweighted means over classes.
    pub macro_latency: Option<f64>,
    pub macro_miss_rate: Option<f64>,
    pub macro_error_rate: Option<f64>,
    /// Means over individual segments.
    pub segment_latency: Option<f64>,
    pub segment_miss_rate: Option<f64>,
    pub segment_error_rate: Option<f64>,
    pub segments: usize,
    pub streams: usize,
    pub dropped_frames: usize,
    /// Settings echoed into the report, in insertion order.
    pub config: Vec<(String, String)>,
}

impl MetricsReport {
    pub fn from_scores(
        scores: &[SegmentScore],
        streams: usize,
        dropped_frames: usize,
        config: Vec<(String, String)>,
    ) -> Self {
        let misses = class_miss_rates(scores);
        let mut per_class = BTreeMap::new();
        for (&label, &miss) in &misses {
            let of_class: Vec<&SegmentScore> = scores.iter().filter(|s| s.label == label).collect();
            per_class.insert(
                label,
                ClassMetrics {
                    segments: of_class.len(),
                    detected: of_class.iter().filter(|s| s.detected()).count(),
                    latency: mean(of_class.iter().filter_map(|s| s.latency())),
                    miss_rate: miss,
                    error_rate: mean(of_class.iter().filter_map(|s| s.error_rate())),
                },
            );
        }
        MetricsReport {
            macro_latency: mean(per_class.values().filter_map(|c| c.latency)),
            macro_miss_rate: mean(per_class.values().map(|c| c.miss_rate)),
            macro_error_rate: mean(per_class.values().filter_map(|c| c.error_rate)),
            segment_latency: mean(scores.iter().filter_map(|s| s.latency())),
            segment_miss_rate: mean(scores.iter().map(|s| if s.detected() { 0.0 } else { 1.0 })),
            segment_error_rate: mean(scores.iter().filter_map(|s| s.error_rate())),
            per_class,
            segments: scores.len(),
            streams,
            dropped_frames,
            config,
        }
    }

    /// Human-readable report with rates as percentages.
    pub fn to_text(&self) -> String {
        let pct =
            |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", 100.0 * x));
        let mut out = String::new();
        let _ = writeln!(out, "# online action recognition report");
        let _ = writeln!(
            out,
            "streams {}  segments {}  dropped_frames {}",
            self.streams, self.segments, self.dropped_frames
        );
        for (k, v) in &self.config {
            let _ = writeln!(out, "config {k} = {v}");
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:>8} {:>9} {:>9} {:>12} {:>12} {:>12}",
            "class", "segments", "detected", "latency(%)", "miss(%)", "error(%)"
        );
        for (label, c) in &self.per_class {
            let _ = writeln!(
                out,
                "{:>8} {:>9} {:>9} {:>12} {:>12} {:>12}",
                label,
                c.segments,
                c.detected,
                pct(c.latency),
                pct(Some(c.miss_rate)),
                pct(c.error_rate)
            );
        }
        let _ = writeln!(
            out,
            "{:>8} {:>9} {:>9} {:>12} {:>12} {:>12}",
            "macro",
            "",
            "",
            pct(self.macro_latency),
            pct(self.macro_miss_rate),
            pct(self.macro_error_rate)
        );
        let _ = writeln!(
            out,
            "{:>8} {:>9} {:>9} {:>12} {:>12} {:>12}",
            "segment",
            self.segments,
            self.per_class.values().map(|c| c.detected).sum::<usize>(),
            pct(self.segment_latency),
            pct(self.segment_miss_rate),
            pct(self.segment_error_rate)
        );
        out
    }

    /// One `key=value` per line with full-precision rates in `[0, 1]`.
    pub fn to_kv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| format!("{x:?}"));
        let mut out = String::new();
        let _ = writeln!(out, "streams={}", self.streams);
        let _ = writeln!(out, "segments={}", self.segments);
        let _ = writeln!(out, "dropped_frames={}", self.dropped_frames);
        for (k, v) in &self.config {
            let _ = writeln!(out, "config.{k}={v}");
        }
        let _ = writeln!(out, "macro.latency={}", opt(self.macro_latency));
        let _ = writeln!(out, "macro.miss_rate={}", opt(self.macro_miss_rate));
        let _ = writeln!(out, "macro.error_rate={}", opt(self.macro_error_rate));
        let _ = writeln!(out, "segment.latency={}", opt(self.segment_latency));
        let _ = writeln!(out, "segment.miss_rate={}", opt(self.segment_miss_rate));
        let _ = writeln!(out, "segment.error_rate={}", opt(self.segment_error_rate));
        for (label, c) in &self.per_class {
            let _ = writeln!(out, "class.{label}.segments={}", c.segments);
            let _ = writeln!(out, "class.{label}.detected={}", c.detected);
            let _ = writeln!(out, "class.{label}.latency={}", opt(c.latency));
            let _ = writeln!(out, "class.{label}.miss_rate={:?}", c.miss_rate);
            let _ = writeln!(out, "class.{label}.error_rate={}", opt(c.error_rate));
        }
        out
    }

    /// All reported rates, for range checks.
    pub fn rates(&self) -> Vec<f64> {
        let mut v: Vec<f64> = [
            self.macro_latency,
            self.macro_miss_rate,
            self.macro_error_rate,
            self.segment_latency,
            self.segment_miss_rate,
            self.segment_error_rate,
        ]
        .into_iter()
        .flatten()
        .collect();
        for c in self.per_class.values() {
            v.extend(c.latency);
            v.push(c.miss_rate);
            v.extend(c.error_rate);
        }
        v
    }
}
