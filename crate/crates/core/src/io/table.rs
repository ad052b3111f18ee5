//! Tabular inputs: point tracks, per-frame vectors and pose sequences.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_bytes, read_json, write_bytes, write_json, IoError, Result};
use crate::depth::PoseSequence;
use crate::geometry::{RigidTransform, Vec3};
use crate::heads::FrameVector;
use crate::tracks::PointTrack;

const TRACK_HEADER: [&str; 8] = ["track_id", "frame", "u", "v", "x", "y", "z", "visible"];

fn csv_err(path: &Path, e: csv::Error) -> IoError {
    IoError::format(path, e.to_string())
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt(field: &str, path: &Path, line: u64) -> Result<Option<f64>> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse::<f64>()
        .map(Some)
        .map_err(|_| IoError::format(path, format!("line {line}: bad number {field:?}")))
}

pub fn tracks_csv_bytes(tracks: &[PointTrack]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRACK_HEADER).expect("in-memory write");
    for tr in tracks {
        for t in 0..tr.len() {
            let pixel = tr.pixel(t);
            let pos = tr.positions()[t];
            if !tr.is_visible(t) && pixel.is_none() {
                continue;
            }
            w.write_record([
                tr.track_id.to_string(),
                t.to_string(),
                opt_num(pixel.map(|p| p.0)),
                opt_num(pixel.map(|p| p.1)),
                opt_num(pos.map(|p| p.x)),
                opt_num(pos.map(|p| p.y)),
                opt_num(pos.map(|p| p.z)),
                u8::from(tr.is_visible(t)).to_string(),
            ])
            .expect("in-memory write");
        }
    }
    w.into_inner().expect("in-memory flush")
}

/// Writes `track_id,frame,u,v,x,y,z,visible`. Frames with neither a pixel nor
/// visibility are omitted; blank cells mean "not observed".
pub fn write_tracks_csv(path: &Path, tracks: &[PointTrack]) -> Result<()> {
    write_bytes(path, &tracks_csv_bytes(tracks))
}

type TrackRow = (Option<(f64, f64)>, Option<Vec3>, bool);

#[derive(Default)]
struct TrackRows {
    rows: BTreeMap<usize, TrackRow>,
}

/// Reads a track table. `frames` fixes the sequence length; otherwise it is one
/// past the largest frame index in the file. Missing rows are invisible frames.
pub fn read_tracks_csv(path: &Path, frames: Option<usize>) -> Result<Vec<PointTrack>> {
    let bytes = read_bytes(path)?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes.as_slice());
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != TRACK_HEADER {
        return Err(IoError::format(path, format!("expected header {}", TRACK_HEADER.join(","))));
    }
    let mut by_id: BTreeMap<u64, TrackRows> = BTreeMap::new();
    let mut max_frame = None;
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: &str| IoError::format(path, format!("line {line}: bad {what}"));
        let id: u64 = rec[0].parse().map_err(|_| bad("track_id"))?;
        let frame: usize = rec[1].parse().map_err(|_| bad("frame"))?;
        let visible = match &rec[7] {
            "1" | "true" => true,
            "0" | "false" => false,
            _ => return Err(bad("visible flag")),
        };
        let (u, v) = (parse_opt(&rec[2], path, line)?, parse_opt(&rec[3], path, line)?);
        let (x, y, z) = (parse_opt(&rec[4], path, line)?, parse_opt(&rec[5], path, line)?, parse_opt(&rec[6], path, line)?);
        let pixel = match (u, v) {
            (Some(u), Some(v)) => Some((u, v)),
            (None, None) => None,
            _ => return Err(bad("pixel (u and v must both be present or both blank)")),
        };
        let pos = match (x, y, z) {
            (Some(x), Some(y), Some(z)) if visible => Some(Vec3::new(x, y, z)),
            (None, None, None) => None,
            (Some(_), Some(_), Some(_)) => None,
            _ => return Err(bad("position (x, y, z must all be present or all blank)")),
        };
        let rows = &mut by_id.entry(id).or_default().rows;
        if rows.insert(frame, (pixel, pos, visible)).is_some() {
            return Err(IoError::format(path, format!("line {line}: duplicate row for track {id} frame {frame}")));
        }
        max_frame = Some(max_frame.map_or(frame, |m: usize| m.max(frame)));
    }
    let n = match (frames, max_frame) {
        (Some(n), Some(m)) if m >= n => {
            return Err(IoError::format(path, format!("frame {m} beyond sequence length {n}")));
        }
        (Some(n), _) => n,
        (None, Some(m)) => m + 1,
        (None, None) => 0,
    };
    by_id
        .into_iter()
        .map(|(id, tr)| {
            let mut positions = vec![None; n];
            let mut pixels = vec![None; n];
            let mut visible = vec![false; n];
            for (f, (px, pos, vis)) in tr.rows {
                pixels[f] = px;
                positions[f] = pos;
                visible[f] = vis;
            }
            PointTrack::new(id, positions, pixels, visible).map_err(|e| IoError::format(path, e.to_string()))
        })
        .collect()
}

fn check_dims(vectors: &[FrameVector], path: &Path) -> Result<usize> {
    let dims = vectors.first().map_or(0, |v| v.values.len());
    if let Some(bad) = vectors.iter().find(|v| v.values.len() != dims) {
        return Err(IoError::format(path, format!("frame {} has {} values, expected {dims}", bad.frame, bad.values.len())));
    }
    Ok(dims)
}

/// `frame,v0,...,v{D-1}`.
pub fn write_frame_vectors_csv(path: &Path, vectors: &[FrameVector]) -> Result<()> {
    let dims = check_dims(vectors, path)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = std::iter::once("frame".to_string()).chain((0..dims).map(|i| format!("v{i}")));
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for fv in vectors {
        let row = std::iter::once(fv.frame.to_string()).chain(fv.values.iter().map(f64::to_string));
        w.write_record(row).map_err(|e| csv_err(path, e))?;
    }
    write_bytes(path, &w.into_inner().map_err(|e| IoError::format(path, e.to_string()))?)
}

pub fn read_frame_vectors_csv(path: &Path) -> Result<Vec<FrameVector>> {
    let bytes = read_bytes(path)?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes.as_slice());
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let well_formed = headers.get(0) == Some("frame")
        && headers.iter().skip(1).enumerate().all(|(i, h)| h == format!("v{i}"));
    if !well_formed {
        return Err(IoError::format(path, "expected header frame,v0,...,v{D-1}"));
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let frame = rec[0].parse().map_err(|_| IoError::format(path, format!("line {line}: bad frame")))?;
        let values = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(|_| IoError::format(path, format!("line {line}: bad number {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        out.push(FrameVector { frame, values });
    }
    check_dims(&out, path)?;
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct BinHeader {
    dims: usize,
    frames: usize,
    #[serde(default)]
    first_frame: usize,
}

/// Flat binary form: one JSON header line `{"dims":D,"frames":F,"first_frame":k}`
/// followed by `F * D` little-endian `f64` values. Frames must be consecutive.
pub fn write_frame_vectors_bin(path: &Path, vectors: &[FrameVector]) -> Result<()> {
    let dims = check_dims(vectors, path)?;
    let first_frame = vectors.first().map_or(0, |v| v.frame);
    if vectors.iter().enumerate().any(|(i, v)| v.frame != first_frame + i) {
        return Err(IoError::format(path, "binary vectors need consecutive frames"));
    }
    let header = BinHeader { dims, frames: vectors.len(), first_frame };
    let mut out = serde_json::to_vec(&header).map_err(|e| IoError::format(path, e.to_string()))?;
    out.push(b'\n');
    for v in vectors.iter().flat_map(|fv| &fv.values) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    write_bytes(path, &out)
}

pub fn read_frame_vectors_bin(path: &Path) -> Result<Vec<FrameVector>> {
    let bytes = read_bytes(path)?;
    let nl = bytes.iter().position(|b| *b == b'\n').ok_or_else(|| IoError::format(path, "missing header line"))?;
    let header: BinHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| IoError::format(path, format!("header: {e}")))?;
    let payload = &bytes[nl + 1..];
    if payload.len() != header.dims * header.frames * 8 {
        return Err(IoError::format(path, format!("payload has {} bytes, header implies {}", payload.len(), header.dims * header.frames * 8)));
    }
    let values: Vec<f64> =
        payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    Ok((0..header.frames)
        .map(|i| FrameVector {
            frame: header.first_frame + i,
            values: values[i * header.dims..(i + 1) * header.dims].to_vec(),
        })
        .collect())
}

/// Dispatches on extension: `.csv` is tabular, anything else the binary form.
pub fn read_frame_vectors(path: &Path) -> Result<Vec<FrameVector>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => read_frame_vectors_csv(path),
        _ => read_frame_vectors_bin(path),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub frame: usize,
    pub time_s: f64,
    pub q: [f64; 4],
    pub t: [f64; 3],
}

pub fn write_pose_sequence(path: &Path, poses: &PoseSequence) -> Result<()> {
    let records: Vec<PoseRecord> = poses
        .poses()
        .iter()
        .zip(poses.frame_times())
        .enumerate()
        .map(|(frame, (p, time_s))| {
            let j = p.to_json();
            PoseRecord { frame, time_s: *time_s, q: j.q, t: j.t }
        })
        .collect();
    write_json(path, &records)
}

pub fn read_pose_sequence(path: &Path) -> Result<PoseSequence> {
    let records: Vec<PoseRecord> = read_json(path)?;
    let mut poses = Vec::with_capacity(records.len());
    let mut times = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        if r.frame != i {
            return Err(IoError::format(path, format!("entry {i} has frame {}", r.frame)));
        }
        let pose = RigidTransform::from_json(&crate::geometry::TransformJson { q: r.q, t: r.t })
            .map_err(|e| IoError::format(path, format!("frame {i}: {e}")))?;
        poses.push(pose);
        times.push(r.time_s);
    }
    PoseSequence::new(poses, times).map_err(|e| IoError::format(path, e.to_string()))
}
