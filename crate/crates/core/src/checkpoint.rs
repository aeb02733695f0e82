//! Versioned little-endian binary checkpoints for [`CondSelModel`].
//!
//! Layout: magic `CSELCKPT`, `u32` version, `u8` task, `u8` activation,
//! `u32` d_p, d_c, d_y, encoder width, head width, `f64` temperature, `u32`
//! array count, then per array a `u16`-prefixed UTF-8 name, `u32` rows,
//! `u32` cols and `rows * cols` `f64` values in row-major order.

use std::fs;
use std::path::Path;

use crate::data::Task;
use crate::error::{Error, Result};
use crate::layers::Dense;
use crate::mask::FeatureMask;
use crate::model::{Architecture, CondSelModel, Trainable};
use crate::tensor::{Activation, Matrix};

pub const MAGIC: &[u8; 8] = b"CSELCKPT";
pub const VERSION: u32 = 1;

fn bad<T>(what: impl Into<String>) -> Result<T> {
    Err(Error::Checkpoint(what.into()))
}

pub fn to_bytes(model: &CondSelModel) -> Vec<u8> {
    let dims = model.dims();
    let arch = model.architecture();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(model.task().code());
    out.push(arch.activation.code());
    for v in [
        dims.d_p,
        dims.d_c,
        dims.d_y,
        arch.encoder_width,
        arch.head_width,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&model.feature_mask().temperature().to_le_bytes());

    let (fp, fc, hidden, out_layer) = model.layers();
    let mut arrays: Vec<(&str, &Matrix)> = Vec::new();
    let fm = model.feature_mask().layer();
    arrays.extend([("fm.w", &fm.w), ("fm.b", &fm.b)]);
    if let Some(fp) = fp {
        arrays.extend([("fp.w", &fp.w), ("fp.b", &fp.b)]);
    }
    arrays.extend([
        ("fc.w", &fc.w),
        ("fc.b", &fc.b),
        ("hidden.w", &hidden.w),
        ("hidden.b", &hidden.b),
        ("out.w", &out_layer.w),
        ("out.b", &out_layer.b),
    ]);
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (name, m) in arrays {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return bad(format!("truncated at byte {}", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<CondSelModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return bad("not a checkpoint (bad magic)");
    }
    let version = r.u32()?;
    if version != VERSION {
        return bad(format!("unsupported version {version}"));
    }
    let task = Task::from_code(r.u8()?).or_else(|e| bad(e.to_string()))?;
    let activation = Activation::from_code(r.u8()?).or_else(|e| bad(e.to_string()))?;
    let d_p = r.u32()? as usize;
    let _d_c = r.u32()? as usize;
    let d_y = r.u32()? as usize;
    if d_y != task.d_y() {
        return bad(format!("{task} with D_y = {d_y}"));
    }
    let encoder_width = r.u32()? as usize;
    let head_width = r.u32()? as usize;
    let temperature = r.f64()?;

    let count = r.u32()? as usize;
    let mut arrays = Vec::with_capacity(count.min(16));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .or_else(|_| bad("array name is not UTF-8"))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|n| n.checked_mul(8).is_some_and(|b| b <= bytes.len()))
            .map_or_else(|| bad(format!("array {name} too large")), Ok)?;
        let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let m = Matrix::new(rows, cols, data).or_else(|e| bad(format!("array {name}: {e}")))?;
        arrays.push((name, m));
    }
    if r.pos != bytes.len() {
        return bad(format!("{} trailing bytes", bytes.len() - r.pos));
    }

    let mut expected = vec!["fm.w", "fm.b"];
    if d_p > 0 {
        expected.extend(["fp.w", "fp.b"]);
    }
    expected.extend(["fc.w", "fc.b", "hidden.w", "hidden.b", "out.w", "out.b"]);
    let names: Vec<&str> = arrays.iter().map(|(n, _)| n.as_str()).collect();
    if names != expected {
        return bad(format!("arrays {names:?}, expected {expected:?}"));
    }
    let mut it = arrays.into_iter().map(|(_, m)| m);
    let mut dense = || {
        let w = it.next().unwrap();
        let b = it.next().unwrap();
        Dense::from_parts(w, b).or_else(|e| bad(e.to_string()))
    };
    let fm_layer = dense()?;
    let fp = if d_p > 0 { Some(dense()?) } else { None };
    let fc = dense()?;
    let hidden = dense()?;
    let out = dense()?;
    let fm = FeatureMask::from_layer(fm_layer, temperature).or_else(|e| bad(e.to_string()))?;
    let arch = Architecture {
        encoder_width,
        head_width,
        activation,
        temperature,
    };
    if fc.outputs() != encoder_width || hidden.outputs() != head_width {
        return bad("layer widths disagree with the header");
    }
    CondSelModel::from_parts(task, arch, fm, fp, fc, hidden, out).or_else(|e| bad(e.to_string()))
}

pub fn save(model: &CondSelModel, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<CondSelModel> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(d_p: usize, task: Task) -> CondSelModel {
        CondSelModel::new(d_p, 4, task, Architecture::default(), 7).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        for (d_p, task) in [(0, Task::Regression), (2, Task::BinaryClassification)] {
            let m = model(d_p, task);
            let bytes = to_bytes(&m);
            let back = from_bytes(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(to_bytes(&back), bytes);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let m = model(1, Task::Regression);
        save(&m, &path).unwrap();
        assert_eq!(load(&path).unwrap(), m);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = to_bytes(&model(1, Task::Regression));
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        let mut wrong_version = bytes.clone();
        wrong_version[8] = 9;
        let mut trailing = bytes.clone();
        trailing.push(0);
        for b in [
            wrong_magic,
            wrong_version,
            bytes[..bytes.len() - 3].to_vec(),
            trailing,
            Vec::new(),
        ] {
            assert!(matches!(from_bytes(&b), Err(Error::Checkpoint(_))));
        }
    }
}
