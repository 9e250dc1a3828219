//! Session directory format.
//!
//! ```text
//! <session>/
//!   meta.json          config echo, applied offset, frame count
//!   poses.jsonl        one record per frame per view
//!   gaze.jsonl         one gaze sample per frame per view
//!   frames_head.gzt    T×H×W×1 f32 tensor
//!   frames_neck.gzt
//!   markers.jsonl      embedded markers (frame, view, id)
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::gzt::{self, GztTensor, Payload};
use crate::tensor::FrameStack;

use super::{markers, RawGazeSample, SceneConfig, SessionRecord, ViewId, ViewStream};

pub const META_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionMeta {
    pub version: u32,
    pub config: SceneConfig,
    pub offset: i64,
    pub frame_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseRecord {
    pub frame: usize,
    pub view: ViewId,
    /// Row-major world-to-camera rotation.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl PoseRecord {
    pub fn to_pose(&self) -> Result<Pose> {
        let r = &self.rotation;
        let rotation = Matrix3::new(r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8]);
        let t = Vector3::new(self.translation[0], self.translation[1], self.translation[2]);
        Pose::new(rotation, t)
    }

    pub fn from_pose(frame: usize, view: ViewId, pose: &Pose) -> Self {
        let r = pose.rotation();
        let t = pose.translation();
        PoseRecord {
            frame,
            view,
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [t.x, t.y, t.z],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerRecord {
    pub frame: usize,
    pub view: ViewId,
    pub id: u32,
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl Iterator<Item = T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let r = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line)?);
    }
    Ok(rows)
}

fn frames_to_gzt(frames: &FrameStack) -> GztTensor {
    GztTensor::new(
        vec![frames.len as u32, frames.h as u32, frames.w as u32, 1],
        Payload::F32(frames.data.clone()),
    )
    .expect("frame stack dims are consistent")
}

fn frames_path(dir: &Path, view: ViewId) -> std::path::PathBuf {
    dir.join(format!("frames_{view}.gzt"))
}

/// Write a session directory, creating it if needed.
pub fn write_session(dir: &Path, session: &SessionRecord) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let meta = SessionMeta {
        version: META_VERSION,
        config: session.config.clone(),
        offset: session.offset,
        frame_count: session.head.frames.len,
    };
    let mut w = BufWriter::new(File::create(dir.join("meta.json"))?);
    serde_json::to_writer_pretty(&mut w, &meta)?;
    w.write_all(b"\n")?;
    w.flush()?;

    let streams = [&session.head, &session.neck];
    write_jsonl(
        &dir.join("poses.jsonl"),
        streams.iter().flat_map(|s| {
            s.rig
                .poses
                .iter()
                .enumerate()
                .map(|(i, p)| PoseRecord::from_pose(i, s.view, p))
        }),
    )?;
    write_jsonl(
        &dir.join("gaze.jsonl"),
        streams.iter().flat_map(|s| s.samples.iter().copied()),
    )?;
    write_jsonl(
        &dir.join("markers.jsonl"),
        streams.iter().flat_map(|s| {
            s.marker_ids[..s.embedded_len]
                .iter()
                .enumerate()
                .map(|(i, &id)| MarkerRecord {
                    frame: i,
                    view: s.view,
                    id,
                })
        }),
    )?;
    for s in streams {
        let mut w = BufWriter::new(File::create(frames_path(dir, s.view))?);
        gzt::write(&mut w, &frames_to_gzt(&s.frames))?;
        w.flush()?;
    }
    Ok(())
}

pub fn read_meta(dir: &Path) -> Result<SessionMeta> {
    let meta: SessionMeta = serde_json::from_reader(BufReader::new(File::open(
        dir.join("meta.json"),
    )?))?;
    if meta.version != META_VERSION {
        return Err(Error::UnsupportedVersion {
            found: meta.version,
            expected: META_VERSION,
        });
    }
    Ok(meta)
}

pub fn read_gaze(dir: &Path, view: ViewId) -> Result<Vec<RawGazeSample>> {
    let rows: Vec<RawGazeSample> = read_jsonl(&dir.join("gaze.jsonl"))?;
    Ok(rows.into_iter().filter(|r| r.view == view).collect())
}

pub fn read_poses(dir: &Path, view: ViewId) -> Result<Vec<Pose>> {
    let rows: Vec<PoseRecord> = read_jsonl(&dir.join("poses.jsonl"))?;
    rows.into_iter()
        .filter(|r| r.view == view)
        .map(|r| r.to_pose())
        .collect()
}

pub fn read_markers(dir: &Path, view: ViewId) -> Result<Vec<MarkerRecord>> {
    let rows: Vec<MarkerRecord> = read_jsonl(&dir.join("markers.jsonl"))?;
    Ok(rows.into_iter().filter(|r| r.view == view).collect())
}

pub fn read_frames(dir: &Path, view: ViewId) -> Result<FrameStack> {
    let mut r = BufReader::new(File::open(frames_path(dir, view))?);
    let tensor = gzt::read(&mut r)?;
    let dims = &tensor.dims;
    if dims.len() != 4 || dims[3] != 1 {
        return Err(Error::TensorFormat(format!(
            "expected T×H×W×1 frame tensor, got dims {dims:?}"
        )));
    }
    match tensor.payload {
        Payload::F32(data) => Ok(FrameStack {
            len: dims[0] as usize,
            h: dims[1] as usize,
            w: dims[2] as usize,
            data,
        }),
        _ => Err(Error::TensorFormat("frame tensor must be f32".into())),
    }
}

/// Decode the embedded marker prefix straight from a stream's frame file,
/// reading one frame at a time and stopping at the first frame without a
/// valid marker. This is the visual synchronization path: it needs no
/// sidecar metadata.
pub fn decode_marker_prefix(dir: &Path, view: ViewId) -> Result<Vec<u32>> {
    let mut r = BufReader::new(File::open(frames_path(dir, view))?);
    let (dims, dtype) = gzt::read_header(&mut r)?;
    if dims.len() != 4 || dims[3] != 1 || dtype != 1 {
        return Err(Error::TensorFormat(
            "expected T×H×W×1 f32 frame tensor".into(),
        ));
    }
    let (t, h, w) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    let mut buf = vec![0u8; h * w * 4];
    let mut frame = vec![0f32; h * w];
    let mut ids = Vec::new();
    for _ in 0..t {
        r.read_exact(&mut buf)?;
        for (dst, src) in frame.iter_mut().zip(buf.chunks_exact(4)) {
            *dst = f32::from_le_bytes([src[0], src[1], src[2], src[3]]);
        }
        match markers::decode_sync_marker(&frame, w, h) {
            Some(id) => ids.push(id),
            None => break,
        }
    }
    Ok(ids)
}

/// Load the frame streams of one view back into memory together with the
/// session's samples and poses.
pub struct LoadedView {
    pub view: ViewId,
    pub frames: FrameStack,
    pub samples: Vec<RawGazeSample>,
    pub poses: Vec<Pose>,
}

pub fn load_view(dir: &Path, view: ViewId) -> Result<LoadedView> {
    Ok(LoadedView {
        view,
        frames: read_frames(dir, view)?,
        samples: read_gaze(dir, view)?,
        poses: read_poses(dir, view)?,
    })
}

impl ViewStream {
    /// Embedded marker prefix of the in-memory stream, as a decoder would
    /// recover it.
    pub fn marker_prefix(&self) -> Vec<u32> {
        self.marker_ids[..self.embedded_len].to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::generate_session;

    fn session() -> SessionRecord {
        generate_session(&SceneConfig {
            duration_secs: 4.0,
            seed: 9,
            ..SceneConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_through_directory() {
        let dir = tempfile::tempdir().unwrap();
        let s = session();
        write_session(dir.path(), &s).unwrap();

        let meta = read_meta(dir.path()).unwrap();
        assert_eq!(meta.config, s.config);
        assert_eq!(meta.offset, s.offset);

        for view in [ViewId::Head, ViewId::Neck] {
            let loaded = load_view(dir.path(), view).unwrap();
            assert_eq!(loaded.frames, s.view(view).frames);
            assert_eq!(loaded.samples, s.view(view).samples);
            assert_eq!(loaded.poses.len(), s.view(view).rig.poses.len());
            for (a, b) in loaded.poses.iter().zip(&s.view(view).rig.poses) {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let s = session();
        write_session(dir_a.path(), &s).unwrap();
        write_session(dir_b.path(), &s).unwrap();
        for name in [
            "meta.json",
            "poses.jsonl",
            "gaze.jsonl",
            "markers.jsonl",
            "frames_head.gzt",
            "frames_neck.gzt",
        ] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical writes");
        }
    }

    #[test]
    fn decoded_prefix_matches_marker_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let s = session();
        write_session(dir.path(), &s).unwrap();
        for view in [ViewId::Head, ViewId::Neck] {
            let decoded = decode_marker_prefix(dir.path(), view).unwrap();
            let sidecar: Vec<u32> = read_markers(dir.path(), view)
                .unwrap()
                .iter()
                .map(|m| m.id)
                .collect();
            assert_eq!(decoded, sidecar);
            assert_eq!(decoded, s.view(view).marker_prefix());
        }
    }
}
