//! Latency measurement, timestamp correction and cross-stream alignment.
//!
//! Every sample carries its host reception time `t_rec`. A stream's latency
//! is `t_rec - t_actual`, measured once per device: by a handshake for the
//! pose tracker and by filming an on-screen clock for cameras. Subtracting it
//! recovers capture times, on which all streams are aligned to the left
//! visual camera.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fiducial::{decode_clock, ClockCodebook, Dictionary};
use crate::geometry::{Handedness, RigidTransform};
use crate::imaging::GrayImage;

/// Default per-frame skew limit, seconds.
pub const MAX_SKEW: f64 = 0.010;
/// Fewest samples a latency estimate needs.
pub const MIN_LATENCY_SAMPLES: usize = 10;
/// Median latencies down to this far below zero are treated as zero.
const NEGATIVE_SLACK: f64 = 0.001;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SyncError {
    #[error("need at least {MIN_LATENCY_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
    #[error("negative latency {0:.4} s: clocks disagree")]
    NegativeLatency(f64),
    #[error("only {decoded} of {total} frames show a decodable clock")]
    TooFewDecodable { decoded: usize, total: usize },
    #[error("latency is for stream `{expected}`, not `{got}`")]
    StreamIdMismatch { expected: String, got: String },
    #[error("t = {0} is outside the pose stream")]
    OutOfRange(f64),
    #[error("streams share less than the required time coverage")]
    NoOverlap,
    #[error("stream `{stream}` goes back in time at sample {index}")]
    NonMonotonic { stream: String, index: usize },
    #[error("pose stream must be right-handed")]
    LeftHanded,
    #[error("no latency recorded for stream `{0}`")]
    MissingLatency(String),
    #[error("stream `{0}` is empty")]
    EmptyStream(String),
    #[error("cannot load frame: {0}")]
    Load(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<P> {
    pub t_rec: f64,
    pub payload: P,
}

/// Time-ordered samples of one device.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream<P> {
    pub id: String,
    samples: Vec<Sample<P>>,
}

impl<P> Stream<P> {
    pub fn new(id: impl Into<String>, samples: Vec<Sample<P>>) -> Result<Self, SyncError> {
        let id = id.into();
        if let Some(i) = samples.windows(2).position(|w| w[1].t_rec < w[0].t_rec) {
            return Err(SyncError::NonMonotonic {
                stream: id,
                index: i + 1,
            });
        }
        Ok(Self { id, samples })
    }

    pub fn samples(&self) -> &[Sample<P>] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn span(&self) -> Option<(f64, f64)> {
        Some((self.samples.first()?.t_rec, self.samples.last()?.t_rec))
    }

    /// Index of the sample nearest to `t`; the earlier one on ties.
    pub fn nearest(&self, t: f64) -> Option<usize> {
        if self.samples.is_empty() {
            return None;
        }
        let i = self.samples.partition_point(|s| s.t_rec < t);
        if i == 0 {
            return Some(0);
        }
        if i == self.samples.len() {
            return Some(i - 1);
        }
        let (a, b) = (self.samples[i - 1].t_rec, self.samples[i].t_rec);
        Some(if t - a <= b - t { i - 1 } else { i })
    }

    fn shifted(&self, dt: f64) -> Self
    where
        P: Clone,
    {
        Self {
            id: self.id.clone(),
            samples: self
                .samples
                .iter()
                .map(|s| Sample {
                    t_rec: s.t_rec - dt,
                    payload: s.payload.clone(),
                })
                .collect(),
        }
    }
}

/// Reference to an image file, relative to the recording root.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FrameRef(pub String);

pub type FrameStream = Stream<FrameRef>;
pub type PoseStream = Stream<RigidTransform>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRecord {
    pub stream_id: String,
    pub t_latency: f64,
    pub sample_count: usize,
    /// Max minus min of the per-sample estimates.
    pub spread: f64,
}

impl LatencyRecord {
    /// A record with a known latency and no measurement behind it.
    pub fn fixed(stream_id: impl Into<String>, t_latency: f64) -> Self {
        Self {
            stream_id: stream_id.into(),
            t_latency,
            sample_count: 0,
            spread: 0.0,
        }
    }
}

/// Median of per-sample latency estimates.
pub fn latency_from_estimates(stream_id: &str, estimates: &[f64]) -> Result<LatencyRecord, SyncError> {
    if estimates.len() < MIN_LATENCY_SAMPLES {
        return Err(SyncError::TooFewSamples(estimates.len()));
    }
    let mut v = estimates.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    };
    if median < -NEGATIVE_SLACK {
        return Err(SyncError::NegativeLatency(median));
    }
    Ok(LatencyRecord {
        stream_id: stream_id.to_string(),
        t_latency: median.max(0.0),
        sample_count: n,
        spread: v[n - 1] - v[0],
    })
}

/// Latency from handshake pairs `(t_actual, t_rec)`.
pub fn measure_pose_latency(stream_id: &str, handshakes: &[(f64, f64)]) -> Result<LatencyRecord, SyncError> {
    let est: Vec<f64> = handshakes.iter().map(|(a, r)| r - a).collect();
    latency_from_estimates(stream_id, &est)
}

/// Where frame images come from.
pub trait FrameSource: Sync {
    fn load(&self, frame: &FrameRef) -> Result<GrayImage, SyncError>;
}

/// Frames stored as files under a root directory.
#[derive(Debug, Clone)]
pub struct DirectorySource {
    pub root: PathBuf,
}

impl FrameSource for DirectorySource {
    fn load(&self, frame: &FrameRef) -> Result<GrayImage, SyncError> {
        let path = self.root.join(&frame.0);
        image::open(&path)
            .map(|i| i.into_luma8())
            .map_err(|e| SyncError::Load(format!("{}: {e}", path.display())))
    }
}

/// Frames held in memory.
#[derive(Debug, Clone, Default)]
pub struct MemorySource {
    pub frames: HashMap<FrameRef, GrayImage>,
}

impl FrameSource for MemorySource {
    fn load(&self, frame: &FrameRef) -> Result<GrayImage, SyncError> {
        self.frames
            .get(frame)
            .cloned()
            .ok_or_else(|| SyncError::Load(frame.0.clone()))
    }
}

/// Clock decoding with a per-frame cache, so repeated measurements over the
/// same recording decode each image once.
pub struct ClockReader<'a> {
    pub codebook: &'a ClockCodebook,
    pub dictionary: &'a Dictionary,
    cache: Mutex<HashMap<FrameRef, Option<u32>>>,
}

impl<'a> ClockReader<'a> {
    pub fn new(codebook: &'a ClockCodebook, dictionary: &'a Dictionary) -> Self {
        Self {
            codebook,
            dictionary,
            cache: Mutex::new(HashMap::new()),
        }
    }

    /// Clock id visible in `frame`, if any.
    pub fn read(&self, frame: &FrameRef, source: &dyn FrameSource) -> Result<Option<u32>, SyncError> {
        if let Some(hit) = self.cache.lock().expect("cache lock").get(frame) {
            return Ok(*hit);
        }
        let img = source.load(frame)?;
        let id = decode_clock(&img, self.codebook, self.dictionary).ok().map(|(id, _)| id);
        self.cache.lock().expect("cache lock").insert(frame.clone(), id);
        Ok(id)
    }
}

/// Per-frame latency `t_rec - t_actual` from the filmed clock, aggregated by
/// median. Frames without a decodable clock are skipped.
pub fn measure_camera_latency(
    frames: &FrameStream,
    reader: &ClockReader<'_>,
    source: &dyn FrameSource,
) -> Result<LatencyRecord, SyncError> {
    let decoded: Vec<Option<u32>> = frames
        .samples()
        .par_iter()
        .map(|s| reader.read(&s.payload, source))
        .collect::<Result<_, _>>()?;
    let est: Vec<f64> = frames
        .samples()
        .iter()
        .zip(&decoded)
        .filter_map(|(s, id)| reader.codebook.latency((*id)?, s.t_rec))
        .collect();
    if est.len() < MIN_LATENCY_SAMPLES {
        return Err(SyncError::TooFewDecodable {
            decoded: est.len(),
            total: frames.len(),
        });
    }
    latency_from_estimates(&frames.id, &est)
}

/// Replaces every `t_rec` with the capture time `t_rec - t_latency`.
pub fn correct_timestamps<P: Clone>(stream: &Stream<P>, lat: &LatencyRecord) -> Result<Stream<P>, SyncError> {
    if stream.id != lat.stream_id {
        return Err(SyncError::StreamIdMismatch {
            expected: lat.stream_id.clone(),
            got: stream.id.clone(),
        });
    }
    Ok(stream.shifted(lat.t_latency))
}

/// Pose at `t`: linear in translation, slerp in rotation. No extrapolation.
pub fn interpolate_pose(poses: &PoseStream, t: f64) -> Result<RigidTransform, SyncError> {
    let s = poses.samples();
    let (first, last) = poses.span().ok_or_else(|| SyncError::EmptyStream(poses.id.clone()))?;
    if !(t >= first && t <= last) {
        return Err(SyncError::OutOfRange(t));
    }
    let i = s.partition_point(|x| x.t_rec < t);
    let b = &s[i];
    if b.t_rec == t || i == 0 {
        return check_right(b.payload);
    }
    let a = &s[i - 1];
    let lambda = (t - a.t_rec) / (b.t_rec - a.t_rec);
    let p = a.payload.interpolate(&b.payload, lambda).map_err(|_| SyncError::LeftHanded)?;
    check_right(p)
}

fn check_right(p: RigidTransform) -> Result<RigidTransform, SyncError> {
    if p.handedness() == Handedness::Right {
        Ok(p)
    } else {
        Err(SyncError::LeftHanded)
    }
}

/// Latency per stream id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatencyTable {
    pub records: BTreeMap<String, LatencyRecord>,
}

impl LatencyTable {
    pub fn insert(&mut self, rec: LatencyRecord) {
        self.records.insert(rec.stream_id.clone(), rec);
    }

    pub fn latency(&self, stream_id: &str) -> Result<f64, SyncError> {
        self.records
            .get(stream_id)
            .map(|r| r.t_latency)
            .ok_or_else(|| SyncError::MissingLatency(stream_id.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignConfig {
    /// Match on latency-corrected times; with `false`, streams are matched
    /// on raw reception times (the uncompensated baseline).
    pub compensate: bool,
    pub max_skew: f64,
    /// Shortest acceptable common coverage, seconds.
    pub min_overlap: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            compensate: true,
            max_skew: MAX_SKEW,
            min_overlap: 1.0,
        }
    }
}

/// Raw streams of one bimanual recording.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignInput {
    /// `[left, right]`; the left visual stream is the master clock.
    pub visual: [FrameStream; 2],
    /// Left hand's two sensors, then the right hand's.
    pub tactile: [FrameStream; 4],
    /// `[left, right]`, right-handed.
    pub poses: [PoseStream; 2],
}

/// One master visual frame with everything matched to it.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedFrame {
    /// Estimated capture time of the master frame.
    pub t: f64,
    pub visual: [FrameRef; 2],
    pub tactile: [FrameRef; 4],
    /// Estimated capture times of the matched tactile frames.
    pub tactile_t: [f64; 4],
    pub poses: [RigidTransform; 2],
    /// Largest capture-time difference of any matched source from `t`.
    pub skew: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub frames: Vec<AlignedFrame>,
    pub invalid: usize,
}

/// Aligns everything to the left visual camera.
///
/// Matching happens on corrected times when compensating and on raw
/// reception times otherwise; skew is always judged on estimated capture
/// times, which is what the uncompensated baseline gets wrong.
pub fn align_streams(
    input: &AlignInput,
    latencies: &LatencyTable,
    config: &AlignConfig,
) -> Result<Alignment, SyncError> {
    let lat = |id: &str| latencies.latency(id);
    let shift = |id: &str| -> Result<f64, SyncError> {
        Ok(if config.compensate { lat(id)? } else { 0.0 })
    };
    // Matching timebase per stream, and the offset from it to capture time.
    let visual: Vec<(FrameStream, f64)> = input
        .visual
        .iter()
        .map(|s| Ok((s.shifted(shift(&s.id)?), lat(&s.id)? - shift(&s.id)?)))
        .collect::<Result<_, SyncError>>()?;
    let tactile: Vec<(FrameStream, f64)> = input
        .tactile
        .iter()
        .map(|s| Ok((s.shifted(shift(&s.id)?), lat(&s.id)? - shift(&s.id)?)))
        .collect::<Result<_, SyncError>>()?;
    let poses: Vec<(PoseStream, f64)> = input
        .poses
        .iter()
        .map(|s| Ok((s.shifted(shift(&s.id)?), lat(&s.id)? - shift(&s.id)?)))
        .collect::<Result<_, SyncError>>()?;

    let mut start = f64::NEG_INFINITY;
    let mut end = f64::INFINITY;
    let spans = visual
        .iter()
        .map(|(s, _)| (s.id.clone(), s.span()))
        .chain(tactile.iter().map(|(s, _)| (s.id.clone(), s.span())))
        .chain(poses.iter().map(|(s, _)| (s.id.clone(), s.span())));
    for (id, span) in spans {
        let (a, b) = span.ok_or(SyncError::EmptyStream(id))?;
        start = start.max(a);
        end = end.min(b);
    }
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail too
    if !(end - start >= config.min_overlap) {
        return Err(SyncError::NoOverlap);
    }

    let (master, master_off) = &visual[0];
    let mut frames = Vec::new();
    let mut invalid = 0;
    for s in master.samples() {
        let tm = s.t_rec;
        if tm < start || tm > end {
            continue;
        }
        let t = tm - master_off;
        let mut skew: f64 = 0.0;
        let mut pick = |(stream, off): &(FrameStream, f64)| {
            let i = stream.nearest(tm).expect("non-empty");
            let sample = &stream.samples()[i];
            let capture = sample.t_rec - off;
            skew = skew.max((capture - t).abs());
            (sample.payload.clone(), capture)
        };
        let right_visual = pick(&visual[1]).0;
        let picked: Vec<(FrameRef, f64)> = tactile.iter().map(&mut pick).collect();
        let mut hand = [RigidTransform::identity(Handedness::Right); 2];
        for (h, (stream, off)) in hand.iter_mut().zip(&poses) {
            *h = interpolate_pose(stream, tm)?;
            skew = skew.max((tm - off - t).abs());
        }
        let valid = skew <= config.max_skew;
        invalid += usize::from(!valid);
        frames.push(AlignedFrame {
            t,
            visual: [s.payload.clone(), right_visual],
            tactile: std::array::from_fn(|i| picked[i].0.clone()),
            tactile_t: std::array::from_fn(|i| picked[i].1),
            poses: hand,
            skew,
            valid,
        });
    }
    Ok(Alignment { frames, invalid })
}
