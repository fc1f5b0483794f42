//! Portable tensor checkpoint files.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic    4 bytes  "FMCK"
//! version  u32      1
//! count    u32      number of tensors
//! count times:
//!   name_len u16, name (utf-8)
//!   ndim     u8,  dims (u32 each)
//!   data     f64 * product(dims)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"FMCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    Magic,
    #[error("checkpoint version {0} is not supported")]
    Version(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("tensor `{0}` missing from checkpoint")]
    Missing(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    Shape { name: String, expected: Vec<usize>, found: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { name: name.into(), shape, data }
    }

    pub fn scalar(name: impl Into<String>, v: f64) -> Self {
        Self::new(name, vec![1], vec![v])
    }
}

pub fn write_tensors<W: Write>(mut w: W, tensors: &[NamedTensor]) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let count = u32::try_from(tensors.len()).map_err(|_| CheckpointError::Malformed("too many tensors".into()))?;
    w.write_all(&count.to_le_bytes())?;
    for t in tensors {
        let name = t.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| CheckpointError::Malformed("name too long".into()))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name)?;
        let ndim = u8::try_from(t.shape.len()).map_err(|_| CheckpointError::Malformed("too many dims".into()))?;
        w.write_all(&[ndim])?;
        for &d in &t.shape {
            let d = u32::try_from(d).map_err(|_| CheckpointError::Malformed("dimension too large".into()))?;
            w.write_all(&d.to_le_bytes())?;
        }
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], CheckpointError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => CheckpointError::Malformed("truncated".into()),
        _ => CheckpointError::Io(e),
    })?;
    Ok(buf)
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<NamedTensor>, CheckpointError> {
    if &read_exact::<4, _>(&mut r)? != MAGIC {
        return Err(CheckpointError::Magic);
    }
    let version = u32::from_le_bytes(read_exact(&mut r)?);
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = u32::from_le_bytes(read_exact(&mut r)?);
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = u16::from_le_bytes(read_exact(&mut r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| CheckpointError::Malformed("name is not utf-8".into()))?;
        let ndim = read_exact::<1, _>(&mut r)?[0] as usize;
        let shape: Vec<usize> =
            (0..ndim).map(|_| read_exact(&mut r).map(|b| u32::from_le_bytes(b) as usize)).collect::<Result<_, _>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| read_exact(&mut r).map(f64::from_le_bytes)).collect::<Result<_, _>>()?;
        out.push(NamedTensor { name, shape, data });
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(CheckpointError::Malformed("trailing bytes".into()));
    }
    Ok(out)
}

pub fn save(path: &Path, tensors: &[NamedTensor]) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensors(&mut w, tensors)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<NamedTensor>, CheckpointError> {
    read_tensors(BufReader::new(File::open(path)?))
}

/// Looks up `name` and checks its shape.
pub fn take<'a>(tensors: &'a [NamedTensor], name: &str, shape: &[usize]) -> Result<&'a [f64], CheckpointError> {
    let t = tensors.iter().find(|t| t.name == name).ok_or_else(|| CheckpointError::Missing(name.to_string()))?;
    if t.shape != shape {
        return Err(CheckpointError::Shape { name: name.to_string(), expected: shape.to_vec(), found: t.shape.clone() });
    }
    Ok(&t.data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let ts = vec![NamedTensor::new("a/w", vec![2, 3], vec![1.0, -2.0, 0.5, 3.25, f64::MIN_POSITIVE, 7.0]), NamedTensor::scalar("t", 4.0)];
        let mut buf = Vec::new();
        write_tensors(&mut buf, &ts).unwrap();
        assert_eq!(&buf[..4], b"FMCK");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        // first tensor: name_len 3, "a/w", ndim 2, dims 2 and 3
        assert_eq!(u16::from_le_bytes(buf[12..14].try_into().unwrap()), 3);
        assert_eq!(&buf[14..17], b"a/w");
        assert_eq!(buf[17], 2);
        assert_eq!(buf.len(), 12 + (2 + 3 + 1 + 8 + 48) + (2 + 1 + 1 + 4 + 8));
        assert_eq!(read_tensors(&buf[..]).unwrap(), ts);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(read_tensors(&b"NOPE"[..]), Err(CheckpointError::Magic)));
        let mut buf = Vec::new();
        write_tensors(&mut buf, &[NamedTensor::scalar("x", 1.0)]).unwrap();
        assert!(matches!(read_tensors(&buf[..buf.len() - 1]), Err(CheckpointError::Malformed(_))));
        let ts = read_tensors(&buf[..]).unwrap();
        assert!(matches!(take(&ts, "x", &[2]), Err(CheckpointError::Shape { .. })));
        assert!(matches!(take(&ts, "y", &[1]), Err(CheckpointError::Missing(_))));
    }
}
