//! Text file formats.
//!
//! All formats are line oriented; blank lines and lines starting with `#`
//! are ignored except where a header is required. Floats in model files are
//! written with 17 significant digits so they read back bit-exactly.
//!
//! Skeleton stream:
//!
//! ```text
//! skeleton K=4 hip_center=0 shoulder_center=2 spine=1 joints=j0,j1,j2,j3
//! 0 x0 y0 z0 x1 y1 z1 x2 y2 z2 x3 y3 z3
//! 1 ...
//! ```
//!
//! Each data line holds a frame index followed by `3K` coordinates; `nan`
//! marks a missing joint.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::eval::{Segment, StreamAnnotation};
use crate::projection::ProjectionMatrix;
use crate::recognizer::{ActionModel, EventKind, Label, RecognitionEvent, TraceRow, TrainedModel};
use crate::skeleton::{FeatureVector, JointLayout, NeutralPose, SkeletonFrame};
use crate::spd::SpdMatrix;

const MODEL_MAGIC: &str = "covstream-model";
const MODEL_VERSION: u32 = 1;

/// Float formatting that round-trips exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Non-blank, non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_num<T: std::str::FromStr>(path: &Path, line: usize, tok: &str, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::parse(path, line, format!("invalid {what} {tok:?}")))
}

// ---------------------------------------------------------------------------
// Skeleton streams

/// A parsed skeleton stream.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonStream {
    pub layout: JointLayout,
    /// Frame indices as written in the file.
    pub indices: Vec<u64>,
    pub frames: Vec<SkeletonFrame>,
}

fn layout_header(layout: &JointLayout) -> String {
    format!(
        "skeleton K={} hip_center={} shoulder_center={} spine={} joints={}",
        layout.joint_count(),
        layout.hip_center,
        layout.shoulder_center,
        layout.spine,
        layout.names.join(",")
    )
}

fn parse_layout_header(path: &Path, line: usize, text: &str) -> Result<JointLayout> {
    let mut toks = text.split_whitespace();
    if toks.next() != Some("skeleton") {
        return Err(Error::parse(path, line, "expected a 'skeleton' header"));
    }
    let (mut k, mut hip, mut shoulder, mut spine, mut names) = (None, None, None, None, None);
    for tok in toks {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| Error::parse(path, line, format!("malformed header field {tok:?}")))?;
        match key {
            "K" => k = Some(parse_num::<usize>(path, line, value, "joint count")?),
            "hip_center" => hip = Some(parse_num::<usize>(path, line, value, "joint index")?),
            "shoulder_center" => {
                shoulder = Some(parse_num::<usize>(path, line, value, "joint index")?)
            }
            "spine" => spine = Some(parse_num::<usize>(path, line, value, "joint index")?),
            "joints" => names = Some(value.split(',').map(str::to_string).collect::<Vec<_>>()),
            _ => {
                return Err(Error::parse(
                    path,
                    line,
                    format!("unknown header field {key:?}"),
                ))
            }
        }
    }
    let missing = |what: &str| Error::parse(path, line, format!("header lacks {what}"));
    let k = k.ok_or_else(|| missing("K"))?;
    let names = names.unwrap_or_else(|| (0..k).map(|i| format!("j{i}")).collect());
    if names.len() != k {
        return Err(Error::parse(
            path,
            line,
            format!("header declares K={k} but names {} joints", names.len()),
        ));
    }
    JointLayout::new(
        names,
        hip.ok_or_else(|| missing("hip_center"))?,
        shoulder.ok_or_else(|| missing("shoulder_center"))?,
        spine.ok_or_else(|| missing("spine"))?,
    )
    .map_err(|e| Error::parse(path, line, e.to_string()))
}

pub fn parse_stream(path: &Path, text: &str) -> Result<SkeletonStream> {
    let mut lines = content_lines(text);
    let (hline, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty stream file"))?;
    let layout = parse_layout_header(path, hline, header)?;
    let k = layout.joint_count();
    let mut indices = Vec::new();
    let mut frames = Vec::new();
    for (ln, line) in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 * k + 1 {
            return Err(Error::parse(
                path,
                ln,
                format!(
                    "truncated stream: expected {} fields, found {}",
                    3 * k + 1,
                    toks.len()
                ),
            ));
        }
        indices.push(parse_num::<u64>(path, ln, toks[0], "frame index")?);
        let mut joints = Vec::with_capacity(k);
        for j in 0..k {
            let mut p = [0.0; 3];
            for (c, slot) in p.iter_mut().enumerate() {
                *slot = parse_num::<f64>(path, ln, toks[1 + 3 * j + c], "coordinate")?;
            }
            joints.push(p);
        }
        frames.push(SkeletonFrame::new(joints));
    }
    Ok(SkeletonStream {
        layout,
        indices,
        frames,
    })
}

pub fn read_stream(path: &Path) -> Result<SkeletonStream> {
    parse_stream(path, &read_file(path)?)
}

pub fn format_stream(layout: &JointLayout, frames: &[SkeletonFrame]) -> String {
    let mut out = layout_header(layout);
    out.push('\n');
    for (i, f) in frames.iter().enumerate() {
        let _ = write!(out, "{i}");
        for p in &f.joints {
            for v in p {
                let _ = write!(out, " {}", fmt_f64(*v));
            }
        }
        out.push('\n');
    }
    out
}

/// Loads the neutral pose from frame `frame` of a skeleton stream file.
pub fn read_neutral(path: &Path, frame: usize) -> Result<(JointLayout, NeutralPose)> {
    let stream = read_stream(path)?;
    let f = stream
        .frames
        .get(frame)
        .ok_or_else(|| Error::parse(path, 0, format!("no frame {frame} for the neutral pose")))?;
    let neutral = NeutralPose::from_frame(f, &stream.layout)?;
    Ok((stream.layout, neutral))
}

// ---------------------------------------------------------------------------
// Manifests and annotations

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Training manifest: `<label> <stream path>` per line, paths relative to
/// the manifest.
pub fn read_training_manifest(path: &Path) -> Result<Vec<(Label, PathBuf)>> {
    let text = read_file(path)?;
    let base = manifest_dir(path);
    content_lines(&text)
        .map(|(ln, line)| {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 2 {
                return Err(Error::parse(path, ln, "expected '<label> <stream path>'"));
            }
            Ok((
                parse_num(path, ln, toks[0], "label")?,
                resolve(&base, toks[1]),
            ))
        })
        .collect()
}

/// Evaluation manifest: `<stream path> <annotation path>` per line.
pub fn read_eval_manifest(path: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let text = read_file(path)?;
    let base = manifest_dir(path);
    content_lines(&text)
        .map(|(ln, line)| {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 2 {
                return Err(Error::parse(
                    path,
                    ln,
                    "expected '<stream path> <annotation path>'",
                ));
            }
            Ok((resolve(&base, toks[0]), resolve(&base, toks[1])))
        })
        .collect()
}

/// Annotation: `<start> <end> <label>` per segment, inclusive frame range.
pub fn parse_annotation(path: &Path, text: &str) -> Result<StreamAnnotation> {
    let mut segments = Vec::new();
    for (ln, line) in content_lines(text) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(Error::parse(path, ln, "expected '<start> <end> <label>'"));
        }
        segments.push(Segment {
            start: parse_num(path, ln, toks[0], "start frame")?,
            end: parse_num(path, ln, toks[1], "end frame")?,
            label: parse_num(path, ln, toks[2], "label")?,
        });
    }
    let ann = StreamAnnotation { segments };
    ann.validate()
        .map_err(|e| Error::parse(path, 0, e.to_string()))?;
    Ok(ann)
}

pub fn read_annotation(path: &Path) -> Result<StreamAnnotation> {
    parse_annotation(path, &read_file(path)?)
}

pub fn format_annotation(ann: &StreamAnnotation) -> String {
    let mut out = String::from("# start end label\n");
    for s in &ann.segments {
        let _ = writeln!(out, "{} {} {}", s.start, s.end, s.label);
    }
    out
}

// ---------------------------------------------------------------------------
// Events and traces

/// One line per event: `frame_index label kind min_distance std`.
pub fn format_events(events: &[(RecognitionEvent, Option<(f64, f64)>)]) -> String {
    let mut out = String::from("# frame_index label kind min_distance std\n");
    for (e, stats) in events {
        let (d, s) = stats.map_or(("nan".to_string(), "nan".to_string()), |(d, s)| {
            (fmt_f64(d), fmt_f64(s))
        });
        let _ = writeln!(
            out,
            "{} {} {} {} {}",
            e.frame_index,
            e.label,
            e.kind.as_str(),
            d,
            s
        );
    }
    out
}

pub fn parse_events(path: &Path, text: &str) -> Result<Vec<RecognitionEvent>> {
    content_lines(text)
        .map(|(ln, line)| {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 5 {
                return Err(Error::parse(path, ln, "expected 5 event fields"));
            }
            Ok(RecognitionEvent {
                frame_index: parse_num(path, ln, toks[0], "frame index")?,
                label: parse_num(path, ln, toks[1], "label")?,
                kind: EventKind::parse(toks[2]).ok_or_else(|| {
                    Error::parse(path, ln, format!("unknown event kind {:?}", toks[2]))
                })?,
            })
        })
        .collect()
}

/// `frame_index std d_<label>...` per frame with distances.
pub fn format_trace(labels: &[Label], rows: &[TraceRow]) -> String {
    let mut out = String::from("# frame_index std");
    for l in labels {
        let _ = write!(out, " d_{l}");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{} {}", r.frame_index, fmt_f64(r.std));
        for d in &r.distances {
            let _ = write!(out, " {}", fmt_f64(*d));
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Model file

fn push_row(out: &mut String, values: impl IntoIterator<Item = f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        out.push_str(&fmt_f64(v));
    }
    out.push('\n');
}

pub fn format_model(model: &TrainedModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MODEL_MAGIC} {MODEL_VERSION}");
    let _ = writeln!(out, "decay {}", fmt_f64(model.decay));
    let _ = writeln!(out, "init_frames {}", model.init_frames);
    let _ = writeln!(out, "epsilon {}", fmt_f64(model.epsilon));
    let _ = writeln!(out, "std_window {}", model.std_window);
    let _ = writeln!(out, "frame_weighting {}", u8::from(model.frame_weighting));
    let _ = writeln!(out, "objective {}", fmt_f64(model.objective));
    let _ = writeln!(out, "{}", layout_header(&model.layout));
    let _ = writeln!(out, "neutral {}", model.neutral.dim());
    push_row(&mut out, model.neutral.0.values().iter().copied());
    let p = model.projection.matrix();
    let _ = writeln!(out, "projection {} {}", p.nrows(), p.ncols());
    for i in 0..p.nrows() {
        push_row(&mut out, p.row(i).iter().copied());
    }
    let _ = writeln!(out, "classes {}", model.classes.len());
    for c in &model.classes {
        let _ = writeln!(out, "class {} {}", c.label, c.descriptors.len());
        for d in &c.descriptors {
            push_row(&mut out, d.upper_triangle());
        }
    }
    out.push_str("end\n");
    out
}

struct Cursor<'a> {
    path: &'a Path,
    lines: Box<dyn Iterator<Item = (usize, &'a str)> + 'a>,
    last: usize,
}

impl<'a> Cursor<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        match self.lines.next() {
            Some((ln, l)) => {
                self.last = ln;
                Ok((ln, l))
            }
            None => Err(Error::parse(
                self.path,
                self.last,
                "unexpected end of model file",
            )),
        }
    }

    /// Next line, which must start with `key`; returns its remaining tokens.
    fn keyed(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (ln, line) = self.next()?;
        let mut toks = line.split_whitespace();
        if toks.next() != Some(key) {
            return Err(Error::parse(self.path, ln, format!("expected '{key}'")));
        }
        Ok((ln, toks.collect()))
    }

    fn single<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let (ln, toks) = self.keyed(key)?;
        if toks.len() != 1 {
            return Err(Error::parse(
                self.path,
                ln,
                format!("'{key}' takes one value"),
            ));
        }
        parse_num(self.path, ln, toks[0], key)
    }

    fn floats(&mut self, count: usize) -> Result<Vec<f64>> {
        let (ln, line) = self.next()?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| parse_num(self.path, ln, t, "float"))
            .collect::<Result<_>>()?;
        if vals.len() != count {
            return Err(Error::parse(
                self.path,
                ln,
                format!("expected {count} values, found {}", vals.len()),
            ));
        }
        Ok(vals)
    }
}

pub fn parse_model(path: &Path, text: &str) -> Result<TrainedModel> {
    let mut cur = Cursor {
        path,
        lines: Box::new(content_lines(text)),
        last: 1,
    };
    let (ln, toks) = cur.keyed(MODEL_MAGIC)?;
    if toks != [MODEL_VERSION.to_string().as_str()] {
        return Err(Error::parse(
            path,
            ln,
            format!("unsupported model version {toks:?}"),
        ));
    }
    let decay: f64 = cur.single("decay")?;
    let init_frames: usize = cur.single("init_frames")?;
    let epsilon: f64 = cur.single("epsilon")?;
    let std_window: usize = cur.single("std_window")?;
    let frame_weighting: u8 = cur.single("frame_weighting")?;
    let objective: f64 = cur.single("objective")?;
    let (ln, header) = cur.next()?;
    let layout = parse_layout_header(path, ln, header)?;

    let d: usize = cur.single("neutral")?;
    let neutral = NeutralPose(FeatureVector(DVector::from_vec(cur.floats(d)?)));

    let (ln, dims) = cur.keyed("projection")?;
    if dims.len() != 2 {
        return Err(Error::parse(
            path,
            ln,
            "'projection' takes rows and columns",
        ));
    }
    let n: usize = parse_num(path, ln, dims[0], "rows")?;
    let m: usize = parse_num(path, ln, dims[1], "columns")?;
    let mut p = DMatrix::zeros(n, m);
    for i in 0..n {
        for (j, v) in cur.floats(m)?.into_iter().enumerate() {
            p[(i, j)] = v;
        }
    }
    let projection = ProjectionMatrix::new(p).map_err(|e| Error::parse(path, ln, e.to_string()))?;

    let count: usize = cur.single("classes")?;
    let mut classes = Vec::with_capacity(count);
    for _ in 0..count {
        let (ln, toks) = cur.keyed("class")?;
        if toks.len() != 2 {
            return Err(Error::parse(path, ln, "'class' takes a label and a count"));
        }
        let label: Label = parse_num(path, ln, toks[0], "label")?;
        let k: usize = parse_num(path, ln, toks[1], "descriptor count")?;
        let mut descriptors = Vec::with_capacity(k);
        for _ in 0..k {
            let vals = cur.floats(m * (m + 1) / 2)?;
            descriptors.push(
                SpdMatrix::from_upper_triangle(m, &vals)
                    .map_err(|e| Error::parse(path, cur.last, e.to_string()))?,
            );
        }
        classes.push(ActionModel { label, descriptors });
    }
    cur.keyed("end")?;

    if neutral.dim() != layout.feature_dim() || n != layout.feature_dim() {
        return Err(Error::parse(
            path,
            0,
            format!(
                "model dimensions disagree with the {}-joint skeleton",
                layout.joint_count()
            ),
        ));
    }
    Ok(TrainedModel {
        decay,
        init_frames,
        epsilon,
        std_window,
        frame_weighting: frame_weighting != 0,
        layout,
        neutral,
        projection,
        classes,
        objective,
    })
}

pub fn read_model(path: &Path) -> Result<TrainedModel> {
    parse_model(path, &read_file(path)?)
}

pub fn write_model(path: &Path, model: &TrainedModel) -> Result<()> {
    write_file(path, &format_model(model))
}
