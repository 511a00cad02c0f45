//! Binary checkpoint format.
//!
//! ```text
//! magic    8 bytes  "QNNCKPT1"
//! version  u32
//! count    u32
//! count × { name_len u16, name UTF-8, ndim u8, dims u32 × ndim, payload f32 × Πdims }
//! ```
//! All integers and floats are little-endian.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::ErrorKind;
use std::path::Path;

use crate::error::{QnnError, Result};
use crate::harness::Model;
use crate::sawb::{CalibrationRow, CalibrationTable};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"QNNCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;
const TABLE_NAME: &str = "calibration.table";
const TABLE_META_NAME: &str = "calibration.meta";

pub fn encode_tensors(tensors: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let len = u16::try_from(name.len())
            .map_err(|_| QnnError::Format(format!("tensor name too long: {name}")))?;
        let ndim = u8::try_from(t.ndim())
            .map_err(|_| QnnError::Format(format!("too many dimensions in {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(ndim);
        for &d in t.shape() {
            let d = u32::try_from(d)
                .map_err(|_| QnnError::Format(format!("dimension too large in {name}")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(QnnError::io(
                self.path,
                self.bytes.len() as u64,
                std::io::Error::new(ErrorKind::UnexpectedEof, "truncated checkpoint"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_tensors(bytes: &[u8], path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader {
        bytes,
        pos: 0,
        path,
    };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(QnnError::Format(format!(
            "{}: bad checkpoint magic",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(QnnError::Format(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let count = r.u32()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| QnnError::Format(format!("{}: tensor name is not UTF-8", path.display())))?
            .to_string();
        let ndim = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= bytes.len()))
            .ok_or_else(|| QnnError::Format(format!("{name}: implausible shape {shape:?}")))?;
        let data = r
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::from_parts(shape, data)));
    }
    if r.pos != bytes.len() {
        return Err(QnnError::Format(format!(
            "{}: {} trailing bytes after last tensor",
            path.display(),
            bytes.len() - r.pos
        )));
    }
    Ok(out)
}

fn u16_chunks(v: u64, n: usize) -> impl Iterator<Item = f32> {
    (0..n).map(move |i| ((v >> (16 * i)) & 0xffff) as f32)
}

fn from_u16_chunks(vals: &[f32]) -> u64 {
    vals.iter()
        .enumerate()
        .fold(0u64, |acc, (i, &v)| acc | ((v as u64) << (16 * i)))
}

/// Calibration table as `[rows, 5]` (n_bin, c1, c2, residual_max, r²) plus a
/// metadata vector of 16-bit chunks (samples ×2, seed ×4), exact in f32.
pub fn table_to_tensors(table: &CalibrationTable) -> Vec<(String, Tensor)> {
    let rows: Vec<f32> = table
        .entries
        .values()
        .flat_map(|r| [r.n_bin as f32, r.c1, r.c2, r.residual_max, r.r_squared])
        .collect();
    let meta: Vec<f32> = u16_chunks(table.n_samples as u64, 2)
        .chain(u16_chunks(table.seed, 4))
        .collect();
    vec![
        (
            TABLE_NAME.to_string(),
            Tensor::from_parts(vec![table.entries.len(), 5], rows),
        ),
        (
            TABLE_META_NAME.to_string(),
            Tensor::from_parts(vec![6], meta),
        ),
    ]
}

fn table_from_tensors(rows: &Tensor, meta: &Tensor) -> Result<CalibrationTable> {
    if rows.ndim() != 2 || rows.shape()[1] != 5 || meta.shape() != [6] {
        return Err(QnnError::Format(
            "malformed calibration table tensors".into(),
        ));
    }
    let m = meta.data();
    let mut table =
        CalibrationTable::new(from_u16_chunks(&m[2..]), from_u16_chunks(&m[..2]) as usize);
    for r in rows.data().chunks_exact(5) {
        table.insert(CalibrationRow {
            n_bin: r[0] as u32,
            c1: r[1],
            c2: r[2],
            residual_max: r[3],
            r_squared: r[4],
        });
    }
    Ok(table)
}

/// Every parameter value, every α, BatchNorm running statistics and the
/// calibration table, in a fixed order.
pub fn model_state(model: &mut Model, table: &CalibrationTable) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    model.visit_params(&mut |name, p, _| out.push((name.to_string(), p.value.clone())));
    model.visit_buffers(&mut |name, t| out.push((name.to_string(), t.clone())));
    out.extend(table_to_tensors(table));
    out
}

pub fn save_checkpoint(path: &Path, model: &mut Model, table: &CalibrationTable) -> Result<()> {
    let bytes = encode_tensors(&model_state(model, table))?;
    fs::write(path, bytes).map_err(|e| QnnError::io(path, 0, e))
}

/// Loads a checkpoint into `model`, returning the stored calibration table.
///
/// Every tensor is checked against the model before anything is written, so
/// a rejected checkpoint leaves the model untouched.
pub fn load_checkpoint(path: &Path, model: &mut Model) -> Result<CalibrationTable> {
    let bytes = fs::read(path).map_err(|e| QnnError::io(path, 0, e))?;
    let mut stored: BTreeMap<String, Tensor> = decode_tensors(&bytes, path)?.into_iter().collect();
    let table = match (stored.remove(TABLE_NAME), stored.remove(TABLE_META_NAME)) {
        (Some(rows), Some(meta)) => table_from_tensors(&rows, &meta)?,
        _ => {
            return Err(QnnError::Format(
                "checkpoint has no calibration table".into(),
            ))
        }
    };

    let mut expected: Vec<(String, Vec<usize>)> = Vec::new();
    model.visit_params(&mut |n, p, _| expected.push((n.to_string(), p.value.shape().to_vec())));
    model.visit_buffers(&mut |n, t| expected.push((n.to_string(), t.shape().to_vec())));

    let known: BTreeSet<&str> = expected.iter().map(|(n, _)| n.as_str()).collect();
    let unknown: Vec<&str> = stored
        .keys()
        .map(String::as_str)
        .filter(|n| !known.contains(n))
        .collect();
    let missing: Vec<&str> = known
        .iter()
        .copied()
        .filter(|n| !stored.contains_key(*n))
        .collect();
    let mismatched: Vec<String> = expected
        .iter()
        .filter_map(|(n, shape)| {
            let t = stored.get(n)?;
            (t.shape() != shape.as_slice())
                .then(|| format!("{n}: checkpoint {:?} vs model {shape:?}", t.shape()))
        })
        .collect();
    if !unknown.is_empty() || !missing.is_empty() || !mismatched.is_empty() {
        let mut parts = Vec::new();
        if !unknown.is_empty() {
            parts.push(format!("not in model: [{}]", unknown.join(", ")));
        }
        if !missing.is_empty() {
            parts.push(format!("missing from checkpoint: [{}]", missing.join(", ")));
        }
        if !mismatched.is_empty() {
            parts.push(format!("shape mismatch: [{}]", mismatched.join("; ")));
        }
        return Err(QnnError::Compatibility(parts.join("; ")));
    }

    model.visit_params(&mut |n, p, _| {
        p.value = stored.remove(n).expect("validated");
        p.zero_grad();
        p.velocity.fill(0.0);
    });
    model.visit_buffers(&mut |n, t| *t = stored.remove(n).expect("validated"));
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_round_trip() {
        let ts = vec![
            (
                "a".to_string(),
                Tensor::from_slice(&[1.0, -0.0, f32::MIN_POSITIVE]),
            ),
            ("b.c".to_string(), Tensor::zeros(&[2, 0, 3])),
            ("s".to_string(), Tensor::scalar(7.5)),
        ];
        let bytes = encode_tensors(&ts).unwrap();
        let back = decode_tensors(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.len(), 3);
        for ((n1, t1), (n2, t2)) in ts.iter().zip(&back) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u32> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u32> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2);
        }
    }

    #[test]
    fn table_round_trip() {
        let mut t = CalibrationTable::builtin();
        t.seed = 0xdead_beef_1234_5678;
        let ts = table_to_tensors(&t);
        let back = table_from_tensors(&ts[0].1, &ts[1].1).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn truncation_and_magic() {
        let bytes = encode_tensors(&[("x".into(), Tensor::from_slice(&[1.0, 2.0]))]).unwrap();
        assert!(matches!(
            decode_tensors(&bytes[..bytes.len() - 1], Path::new("m")),
            Err(QnnError::Io { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] ^= 0xff;
        assert!(matches!(
            decode_tensors(&bad, Path::new("m")),
            Err(QnnError::Format(_))
        ));
    }
}
