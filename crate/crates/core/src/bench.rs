//! Per-frame cost of the incremental update versus full recomputation.

use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::covariance::{batch_weighted_covariance, WeightedCovarianceState, WeightedFrame};
use crate::error::{Error, Result};

const REPETITIONS: usize = 5;
/// Updates timed back to back per repetition, so a sample spans more than a
/// few clock ticks.
const UPDATES_PER_SAMPLE: usize = 16;
const INIT_FRAMES: usize = 30;
const DECAY: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub frame: usize,
    /// Median seconds for one incremental update at this frame.
    pub incremental: f64,
    /// Median seconds to recompute the descriptor from all frames so far.
    pub batch: Option<f64>,
}

/// Random weighted feature stream.
pub fn random_stream(dim: usize, frames: usize, seed: u64) -> Vec<WeightedFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..frames)
        .map(|_| {
            let f = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
            WeightedFrame::new(f, rng.random_range(0.1..1.0))
        })
        .collect()
}

/// Log-spaced checkpoints `100, 200, 500, 1000, ...` up to `total`.
pub fn default_checkpoints(total: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut decade = 100;
    'outer: loop {
        for m in [1, 2, 5] {
            let c = decade * m;
            if c > total {
                break 'outer;
            }
            out.push(c);
        }
        decade *= 10;
    }
    if out.last() != Some(&total) && total >= INIT_FRAMES + UPDATES_PER_SAMPLE {
        out.push(total);
    }
    out
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Times one incremental update and one batch recomputation at each
/// checkpoint. Batch timing is skipped past `batch_limit` frames.
pub fn bench_update(
    dim: usize,
    checkpoints: &[usize],
    batch_limit: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    if dim == 0 {
        return Err(Error::InvalidConfig("dimension must be positive".into()));
    }
    let last = checkpoints.iter().copied().max().unwrap_or(0);
    if checkpoints.iter().any(|&c| c < INIT_FRAMES) {
        return Err(Error::InvalidConfig(format!(
            "checkpoints must be at least {INIT_FRAMES}"
        )));
    }
    let stream = random_stream(dim, last + UPDATES_PER_SAMPLE, seed);
    let mut state = WeightedCovarianceState::initialize(&stream[..INIT_FRAMES], DECAY)?;
    let mut sorted: Vec<usize> = checkpoints.to_vec();
    sorted.sort_unstable();
    sorted.dedup();

    let mut rows = Vec::with_capacity(sorted.len());
    for &cp in &sorted {
        while state.frame_count() < cp {
            state.update(&stream[state.frame_count()])?;
        }
        let next = &stream[cp..cp + UPDATES_PER_SAMPLE];
        let mut samples = Vec::with_capacity(REPETITIONS);
        for rep in 0..=REPETITIONS {
            let mut probe = state.clone();
            let start = Instant::now();
            for f in next {
                probe.update(f)?;
            }
            let elapsed = start.elapsed().as_secs_f64() / UPDATES_PER_SAMPLE as f64;
            std::hint::black_box(&probe);
            if rep > 0 {
                samples.push(elapsed);
            }
        }
        let incremental = median(samples);

        let batch = if cp <= batch_limit {
            let mut samples = Vec::with_capacity(REPETITIONS);
            for rep in 0..=REPETITIONS {
                let start = Instant::now();
                let b = batch_weighted_covariance(&stream[..cp], DECAY)?;
                let elapsed = start.elapsed().as_secs_f64();
                std::hint::black_box(&b);
                if rep > 0 {
                    samples.push(elapsed);
                }
            }
            Some(median(samples))
        } else {
            None
        };
        rows.push(BenchRow {
            frame: cp,
            incremental,
            batch,
        });
    }
    Ok(rows)
}

/// Two-column-plus text table: `frame incremental_s batch_s`.
pub fn to_tsv(rows: &[BenchRow]) -> String {
    let mut out = String::from("frame\tincremental_s\tbatch_s\n");
    for r in rows {
        let batch = r
            .batch
            .map_or_else(|| "nan".to_string(), |b| format!("{b:.9e}"));
        out.push_str(&format!("{}\t{:.9e}\t{}\n", r.frame, r.incremental, batch));
    }
    out
}
