//! Action streams: JSONL (one object per frame) and a flat CSV export.
//!
//! Both formats carry the same fields, so converting JSONL to CSV and back is
//! byte-stable. Quaternions are written `[w, x, y, z]` with `w >= 0`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_bytes, write_bytes, IoError, Result};
use crate::geometry::{RigidTransform, TransformJson};
use crate::trajectory::TcpAction;

pub const ACTION_CSV_HEADER: [&str; 16] = [
    "frame", "qw", "qx", "qy", "qz", "tx", "ty", "tz", "abs_qw", "abs_qx", "abs_qy", "abs_qz", "abs_tx", "abs_ty",
    "abs_tz", "gripper",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub frame: usize,
    pub q: [f64; 4],
    pub t: [f64; 3],
    pub abs_q: Option<[f64; 4]>,
    pub abs_t: Option<[f64; 3]>,
    pub gripper: Option<f64>,
}

fn canonical(q: [f64; 4]) -> [f64; 4] {
    if q[0] < 0.0 {
        q.map(|c| -c)
    } else {
        q
    }
}

impl ActionRecord {
    fn canonicalized(mut self) -> Self {
        self.q = canonical(self.q);
        self.abs_q = self.abs_q.map(canonical);
        self
    }

    fn check(&self, path: &Path) -> Result<()> {
        let unit = |q: &[f64; 4]| {
            let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
            q.iter().all(|c| c.is_finite()) && (n - 1.0).abs() < 1e-6
        };
        let bad = |what: &str| Err(IoError::format(path, format!("frame {}: {what}", self.frame)));
        if !unit(&self.q) || self.abs_q.as_ref().is_some_and(|q| !unit(q)) {
            return bad("quaternion is not unit length");
        }
        if self.abs_q.is_some() != self.abs_t.is_some() {
            return bad("abs_q and abs_t must both be present or both absent");
        }
        let finite = self.t.iter().chain(self.abs_t.iter().flatten()).chain(self.gripper.iter());
        if finite.into_iter().any(|v| !v.is_finite()) {
            return bad("non-finite value");
        }
        Ok(())
    }
}

pub fn actions_to_records(actions: &[TcpAction]) -> Vec<ActionRecord> {
    actions
        .iter()
        .map(|a| {
            let rel = a.transform.to_json();
            let abs = a.absolute_pose.map(|p| p.to_json());
            ActionRecord {
                frame: a.frame,
                q: rel.q,
                t: rel.t,
                abs_q: abs.map(|j| j.q),
                abs_t: abs.map(|j| j.t),
                gripper: a.gripper,
            }
        })
        .collect()
}

pub fn records_to_actions(records: &[ActionRecord]) -> std::result::Result<Vec<TcpAction>, crate::geometry::GeometryError> {
    records
        .iter()
        .map(|r| {
            let transform = RigidTransform::from_json(&TransformJson { q: r.q, t: r.t })?;
            let absolute_pose = match (r.abs_q, r.abs_t) {
                (Some(q), Some(t)) => Some(RigidTransform::from_json(&TransformJson { q, t })?),
                _ => None,
            };
            Ok(TcpAction { frame: r.frame, transform, absolute_pose, gripper: r.gripper })
        })
        .collect()
}

pub fn actions_jsonl_bytes(records: &[ActionRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, &r.canonicalized()).expect("records serialize");
        out.push(b'\n');
    }
    out
}

pub fn write_actions_jsonl(path: &Path, records: &[ActionRecord]) -> Result<()> {
    write_bytes(path, &actions_jsonl_bytes(records))
}

pub fn read_actions_jsonl(path: &Path) -> Result<Vec<ActionRecord>> {
    let bytes = read_bytes(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| IoError::format(path, e.to_string()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: ActionRecord =
            serde_json::from_str(line).map_err(|e| IoError::format(path, format!("line {}: {e}", i + 1)))?;
        rec.check(path)?;
        out.push(rec);
    }
    Ok(out)
}

fn cells<const N: usize>(v: Option<[f64; N]>) -> [String; N] {
    match v {
        Some(a) => a.map(|x| x.to_string()),
        None => std::array::from_fn(|_| String::new()),
    }
}

/// Header-only when `records` is empty.
pub fn actions_csv_bytes(records: &[ActionRecord]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ACTION_CSV_HEADER).expect("in-memory write");
    for r in records.iter().map(|r| r.canonicalized()) {
        let mut row = vec![r.frame.to_string()];
        row.extend(r.q.map(|x| x.to_string()));
        row.extend(r.t.map(|x| x.to_string()));
        row.extend(cells(r.abs_q));
        row.extend(cells(r.abs_t));
        row.push(r.gripper.map(|g| g.to_string()).unwrap_or_default());
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn write_actions_csv(path: &Path, records: &[ActionRecord]) -> Result<()> {
    write_bytes(path, &actions_csv_bytes(records))
}

pub fn read_actions_csv(path: &Path) -> Result<Vec<ActionRecord>> {
    let bytes = read_bytes(path)?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes.as_slice());
    let headers = reader.headers().map_err(|e| IoError::format(path, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ACTION_CSV_HEADER {
        return Err(IoError::format(path, format!("expected header {}", ACTION_CSV_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| IoError::format(path, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<Option<f64>> {
            let s = &rec[i];
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| IoError::format(path, format!("line {line}: bad number {s:?}")))
        };
        let need = |i: usize| num(i)?.ok_or_else(|| IoError::format(path, format!("line {line}: missing {}", ACTION_CSV_HEADER[i])));
        let frame = rec[0].parse().map_err(|_| IoError::format(path, format!("line {line}: bad frame")))?;
        let q = [need(1)?, need(2)?, need(3)?, need(4)?];
        let t = [need(5)?, need(6)?, need(7)?];
        let abs: Vec<Option<f64>> = (8..15).map(num).collect::<Result<_>>()?;
        let (abs_q, abs_t) = if abs.iter().all(Option::is_some) {
            let a: Vec<f64> = abs.into_iter().flatten().collect();
            (Some([a[0], a[1], a[2], a[3]]), Some([a[4], a[5], a[6]]))
        } else if abs.iter().all(Option::is_none) {
            (None, None)
        } else {
            return Err(IoError::format(path, format!("line {line}: partial absolute pose")));
        };
        let r = ActionRecord { frame, q, t, abs_q, abs_t, gripper: num(15)? };
        r.check(path)?;
        out.push(r);
    }
    Ok(out)
}
