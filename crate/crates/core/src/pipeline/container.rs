//! Chunked binary episode container.
//!
//! ```text
//! "BDEP" u16 version
//! chunk*: [u8; 4] tag, u64 payload length, payload
//!   HEAD  counts, record size, calibration hash, session/software/device/stream strings
//!   FRMS  frame_count fixed-size records
//!   REFS  visual frame paths + sha256, two per frame
//!   END   empty
//! ```
//!
//! All numbers are little-endian; floats are stored at their in-memory
//! precision so a round trip is bit-exact.

use std::path::Path;

use crate::geometry::{Handedness, RigidTransform};
use crate::handeye::GripperState;
use crate::tactile::{TactilePointCloud, CLOUD_BYTES, CLOUD_SIZE};

use super::{Episode, EpisodeFrame, PipelineError, VisualRef};

pub const MAGIC: &[u8; 4] = b"BDEP";
pub const FORMAT_VERSION: u16 = 1;

const POSE_BYTES: usize = 7 * 8;
/// Bytes per frame record in the `FRMS` chunk.
pub const FRAME_RECORD_BYTES: usize = 2 * 8 // t, skew
    + 4 * POSE_BYTES // two EE poses, two deltas
    + 2 * 9 // width + clamped flag per hand
    + 4 * 8 // cloud timestamps
    + 4 * 8 // corner RMS
    + 4 * CLOUD_BYTES;
/// Magic, version, and the three fixed chunk headers other than `HEAD`.
const CHUNK_HEADER: usize = 12;

/// Container size for a given episode, from its parts.
pub fn expected_size(ep: &Episode) -> usize {
    let head = head_payload(ep).len();
    let refs: usize = ep
        .frames
        .iter()
        .flat_map(|f| &f.visual)
        .map(|v| 2 + v.path.len() + 32)
        .sum();
    MAGIC.len() + 2 + 4 * CHUNK_HEADER + head + ep.frames.len() * FRAME_RECORD_BYTES + refs
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    let len = u16::try_from(s.len()).expect("string shorter than 64 KiB");
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_pose(out: &mut Vec<u8>, p: &RigidTransform) {
    for v in p.translation_array().into_iter().chain(p.quaternion_xyzw()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn head_payload(ep: &Episode) -> Vec<u8> {
    let mut h = Vec::new();
    h.extend_from_slice(&(ep.frames.len() as u32).to_le_bytes());
    h.extend_from_slice(&(FRAME_RECORD_BYTES as u32).to_le_bytes());
    h.extend_from_slice(&(CLOUD_SIZE as u32).to_le_bytes());
    h.extend_from_slice(&ep.calibration_hash);
    h.extend_from_slice(&ep.dropped_frames.to_le_bytes());
    h.extend_from_slice(&ep.failed_frames.to_le_bytes());
    h.extend_from_slice(&ep.width_holds.to_le_bytes());
    for s in [&ep.session, &ep.software].into_iter().chain(&ep.devices).chain(&ep.tactile_streams) {
        put_str(&mut h, s);
    }
    h
}

fn frame_record(f: &EpisodeFrame, out: &mut Vec<u8>) {
    out.extend_from_slice(&f.t.to_le_bytes());
    out.extend_from_slice(&f.skew.to_le_bytes());
    for p in f.ee_poses.iter().chain(&f.deltas) {
        put_pose(out, p);
    }
    for g in &f.grippers {
        out.extend_from_slice(&g.width.to_le_bytes());
        out.push(u8::from(g.clamped));
    }
    for c in &f.clouds {
        out.extend_from_slice(&c.timestamp.to_le_bytes());
    }
    for r in &f.corner_rms {
        out.extend_from_slice(&r.to_le_bytes());
    }
    for c in &f.clouds {
        out.extend_from_slice(&c.to_le_bytes());
    }
}

fn put_chunk(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

/// Serializes an episode; identical episodes give identical bytes.
pub fn encode_episode(ep: &Episode) -> Vec<u8> {
    let mut out = Vec::with_capacity(expected_size(ep));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_chunk(&mut out, b"HEAD", &head_payload(ep));
    let mut frames = Vec::with_capacity(ep.frames.len() * FRAME_RECORD_BYTES);
    for f in &ep.frames {
        frame_record(f, &mut frames);
    }
    put_chunk(&mut out, b"FRMS", &frames);
    let mut refs = Vec::new();
    for v in ep.frames.iter().flat_map(|f| &f.visual) {
        put_str(&mut refs, &v.path);
        refs.extend_from_slice(&v.sha256);
    }
    put_chunk(&mut out, b"REFS", &refs);
    put_chunk(&mut out, b"END ", &[]);
    out
}

pub fn export_episode(ep: &Episode, path: &Path) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io(path, e))?;
    }
    std::fs::write(path, encode_episode(ep)).map_err(|e| io(path, e))
}

pub fn import_episode(path: &Path) -> Result<Episode, PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| io(path, e))?;
    decode_episode(&bytes)
}

fn io(path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn bad(msg: impl Into<String>) -> PipelineError {
    PipelineError::Format(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PipelineError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| bad("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], PipelineError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u16(&mut self) -> Result<u16, PipelineError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, PipelineError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, PipelineError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64, PipelineError> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String, PipelineError> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("string is not utf-8"))
    }

    fn pose(&mut self) -> Result<RigidTransform, PipelineError> {
        let t = [self.f64()?, self.f64()?, self.f64()?];
        let q = [self.f64()?, self.f64()?, self.f64()?, self.f64()?];
        RigidTransform::from_stored_xyzw(q, t, Handedness::Right).map_err(|e| bad(e.to_string()))
    }

    fn chunk(&mut self, tag: &[u8; 4]) -> Result<Reader<'a>, PipelineError> {
        let found = self.array::<4>()?;
        if &found != tag {
            return Err(bad(format!(
                "expected chunk {}, found {}",
                String::from_utf8_lossy(tag),
                String::from_utf8_lossy(&found)
            )));
        }
        let len = usize::try_from(self.u64()?).map_err(|_| bad("chunk too large"))?;
        Ok(Reader {
            bytes: self.take(len)?,
            pos: 0,
        })
    }

    fn done(&self, what: &str) -> Result<(), PipelineError> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(bad(format!("{} trailing bytes in {what}", self.bytes.len() - self.pos)))
        }
    }
}

pub fn decode_episode(bytes: &[u8]) -> Result<Episode, PipelineError> {
    let mut r = Reader { bytes, pos: 0 };
    if &r.array::<4>()? != MAGIC {
        return Err(bad("not an episode file"));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }

    let mut head = r.chunk(b"HEAD")?;
    let n = head.u32()? as usize;
    let record = head.u32()? as usize;
    let cloud_size = head.u32()? as usize;
    if record != FRAME_RECORD_BYTES || cloud_size != CLOUD_SIZE {
        return Err(bad(format!("record layout {record} B / {cloud_size} points not supported")));
    }
    let calibration_hash = head.array::<32>()?;
    let dropped_frames = head.u32()?;
    let failed_frames = head.u32()?;
    let width_holds = head.u32()?;
    let session = head.string()?;
    let software = head.string()?;
    let devices = [head.string()?, head.string()?];
    let tactile_streams = [head.string()?, head.string()?, head.string()?, head.string()?];
    head.done("HEAD")?;

    let mut body = r.chunk(b"FRMS")?;
    if body.bytes.len() != n * FRAME_RECORD_BYTES {
        return Err(bad("frame chunk size disagrees with the header"));
    }
    let mut refs = r.chunk(b"REFS")?;
    let mut frames = Vec::with_capacity(n);
    for _ in 0..n {
        let t = body.f64()?;
        let skew = body.f64()?;
        let ee_poses = [body.pose()?, body.pose()?];
        let deltas = [body.pose()?, body.pose()?];
        let mut gripper = || -> Result<GripperState, PipelineError> {
            let width = body.f64()?;
            let clamped = match body.array::<1>()?[0] {
                0 => false,
                1 => true,
                b => return Err(bad(format!("bad clamp flag {b}"))),
            };
            Ok(GripperState { width, clamped })
        };
        let grippers = [gripper()?, gripper()?];
        let stamps = [body.f64()?, body.f64()?, body.f64()?, body.f64()?];
        let corner_rms = [body.f64()?, body.f64()?, body.f64()?, body.f64()?];
        let mut clouds = Vec::with_capacity(4);
        for (slot, stamp) in stamps.iter().enumerate() {
            let pts = TactilePointCloud::points_from_le_bytes(body.take(CLOUD_BYTES)?).map_err(|e| bad(e.to_string()))?;
            clouds.push(TactilePointCloud::new(pts, tactile_streams[slot].clone(), *stamp).map_err(|e| bad(e.to_string()))?);
        }
        let mut visual_ref = || -> Result<VisualRef, PipelineError> {
            Ok(VisualRef {
                path: refs.string()?,
                sha256: refs.array()?,
            })
        };
        let visual = [visual_ref()?, visual_ref()?];
        let clouds: [TactilePointCloud; 4] = clouds.try_into().expect("four clouds");
        frames.push(EpisodeFrame {
            t,
            skew,
            ee_poses,
            deltas,
            grippers,
            clouds,
            corner_rms,
            visual,
        });
    }
    body.done("FRMS")?;
    refs.done("REFS")?;
    r.chunk(b"END ")?.done("END")?;
    r.done("file")?;
    Ok(Episode {
        session,
        software,
        calibration_hash,
        devices,
        tactile_streams,
        dropped_frames,
        failed_frames,
        width_holds,
        frames,
    })
}
