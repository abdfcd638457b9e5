//! `QALN` tensor files and header-free CSV.
//!
//! Layout (little-endian):
//!
//! | bytes        | field                         |
//! |--------------|-------------------------------|
//! | 4            | magic `QALN`                  |
//! | 2            | version (u16) = 1             |
//! | 1            | dtype (u8), 0 = f32           |
//! | 1            | flags (u8) = 0                |
//! | 4            | ndim (u32), 2 or 3            |
//! | 8 * ndim     | shape (u64 each)              |
//! | 4 * prod     | row-major f32 payload         |
//!
//! A 3-D shape is `(height, width, channels)` and loads as a
//! `height*width x channels` matrix with the grid attached.

use std::io::Write;
use std::path::Path;

use super::{Grid, Matrix};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"QALN";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;

const FIXED_HEADER: usize = 4 + 2 + 1 + 1 + 4;

/// Serializes a matrix to its exact on-disk bytes.
pub fn tensor_bytes(m: &Matrix<f32>) -> Vec<u8> {
    let shape: Vec<u64> = match m.grid() {
        Some(g) => vec![g.height as u64, g.width as u64, m.cols() as u64],
        None => vec![m.rows() as u64, m.cols() as u64],
    };
    let mut out = Vec::with_capacity(FIXED_HEADER + 8 * shape.len() + 4 * m.as_slice().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(0);
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for s in &shape {
        out.extend_from_slice(&s.to_le_bytes());
    }
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a tensor file image.
pub fn load_tensor_bytes(bytes: &[u8]) -> Result<Matrix<f32>> {
    let short = |expected: usize| Error::TruncatedPayload {
        expected,
        actual: bytes.len(),
    };
    if bytes.len() < 4 {
        return Err(short(FIXED_HEADER));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if bytes.len() < FIXED_HEADER {
        return Err(short(FIXED_HEADER));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dtype = bytes[6];
    if dtype != DTYPE_F32 {
        return Err(Error::UnsupportedDtype(dtype));
    }
    if bytes[7] != 0 {
        return Err(Error::Parse(format!(
            "unsupported flags byte {:#04x}",
            bytes[7]
        )));
    }
    let ndim = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if !(2..=3).contains(&ndim) {
        return Err(Error::UnsupportedRank(ndim));
    }
    let header = FIXED_HEADER + 8 * ndim as usize;
    if bytes.len() < header {
        return Err(short(header));
    }
    let shape: Vec<usize> = bytes[FIXED_HEADER..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
        .collect();
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &s| acc.checked_mul(s))
        .ok_or_else(|| Error::BadDimensions(format!("shape {shape:?} overflows")))?;
    let expected = count
        .checked_mul(4)
        .and_then(|p| p.checked_add(header))
        .ok_or_else(|| Error::BadDimensions(format!("shape {shape:?} overflows")))?;
    if bytes.len() < expected {
        return Err(short(expected));
    }
    if bytes.len() > expected {
        return Err(Error::TrailingBytes {
            expected,
            actual: bytes.len(),
        });
    }
    let data: Vec<f32> = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    match shape[..] {
        [rows, cols] => Matrix::from_vec(rows, cols, data),
        [h, w, d] => Matrix::from_vec(h * w, d, data)?.with_grid(Grid::new(h, w)),
        _ => unreachable!("rank checked above"),
    }
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Matrix<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_tensor_bytes(&bytes)
}

/// Writes the tensor file. The file appears only once fully written.
pub fn save_tensor(m: &Matrix<f32>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &tensor_bytes(m))
}

/// Reads a header-free, comma-separated 2-D matrix (one row per line).
pub fn load_csv(path: impl AsRef<Path>) -> Result<Matrix<f32>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut cols = None;
    let mut rows = 0;
    let mut data = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(Error::Parse(format!(
                    "{}: row {rows} has {} fields, expected {c}",
                    path.display(),
                    record.len()
                )))
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f32 = field
                .parse()
                .map_err(|_| Error::Parse(format!("{}: bad number {field:?}", path.display())))?;
            data.push(v);
        }
        rows += 1;
    }
    Matrix::from_vec(rows, cols.unwrap_or(0), data)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Parse(format!("{}: {e}", path.display()))
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(ndim: u32, shape: &[u64]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"QALN");
        b.extend_from_slice(&1u16.to_le_bytes());
        b.push(0);
        b.push(0);
        b.extend_from_slice(&ndim.to_le_bytes());
        for s in shape {
            b.extend_from_slice(&s.to_le_bytes());
        }
        b
    }

    #[test]
    fn decodes_identity() {
        let mut b = header(2, &[2, 2]);
        for v in [1.0f32, 0.0, 0.0, 1.0] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        let m = load_tensor_bytes(&b).unwrap();
        assert_eq!(m, Matrix::identity(2));
        assert_eq!(tensor_bytes(&m), b);
    }

    #[test]
    fn three_dims_flatten_with_grid() {
        let mut b = header(3, &[2, 2, 3]);
        for i in 0..12 {
            b.extend_from_slice(&(i as f32).to_le_bytes());
        }
        let m = load_tensor_bytes(&b).unwrap();
        assert_eq!(m.shape(), (4, 3));
        assert_eq!(m.grid(), Some(Grid::new(2, 2)));
        assert_eq!(m.get(3, 2), 11.0);
        assert_eq!(tensor_bytes(&m), b);
    }

    #[test]
    fn short_payload_is_truncated() {
        let mut b = header(2, &[2, 2]);
        for v in [1.0f32, 0.0, 0.0] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(
            load_tensor_bytes(&b),
            Err(Error::TruncatedPayload {
                expected: 44,
                actual: 40
            })
        ));
    }

    #[test]
    fn header_errors() {
        let mut b = header(2, &[1, 1]);
        b.extend_from_slice(&0f32.to_le_bytes());

        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(load_tensor_bytes(&bad), Err(Error::BadMagic(_))));

        let mut bad = b.clone();
        bad[4] = 2;
        assert!(matches!(
            load_tensor_bytes(&bad),
            Err(Error::UnsupportedVersion(2))
        ));

        let mut bad = b.clone();
        bad[6] = 1;
        assert!(matches!(
            load_tensor_bytes(&bad),
            Err(Error::UnsupportedDtype(1))
        ));

        let mut bad = b.clone();
        bad.push(0);
        assert!(matches!(
            load_tensor_bytes(&bad),
            Err(Error::TrailingBytes { .. })
        ));

        let mut bad = header(1, &[1]);
        bad.extend_from_slice(&0f32.to_le_bytes());
        assert!(matches!(
            load_tensor_bytes(&bad),
            Err(Error::UnsupportedRank(1))
        ));
    }

    #[test]
    fn non_finite_rejected() {
        let mut b = header(2, &[1, 2]);
        b.extend_from_slice(&1f32.to_le_bytes());
        b.extend_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            load_tensor_bytes(&b),
            Err(Error::NonFiniteValue(1))
        ));
    }

    #[test]
    fn save_load_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = Matrix::<f32>::from_rows(&[
            [1.0, 2.0, 3.0],
            [4.0, 5.0, 6.0],
            [7.0, 8.0, 9.0],
            [0.5, 0.25, -1.0],
        ])
        .with_grid(Grid::new(2, 2))
        .unwrap();
        let p = dir.path().join("m.qaln");
        save_tensor(&m, &p).unwrap();
        let back = load_tensor(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(std::fs::read(&p).unwrap(), tensor_bytes(&back));
    }

    #[test]
    fn unwritable_path_is_io_failure() {
        let m = Matrix::<f32>::identity(2);
        let err = save_tensor(&m, "/nonexistent-dir/sub/m.qaln").unwrap_err();
        assert!(matches!(err, Error::IoFailure { .. }));
    }

    #[test]
    fn csv_reads_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "1, 2\n3,4\n").unwrap();
        let m = load_csv(&p).unwrap();
        assert_eq!(m, Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]));
        std::fs::write(&p, "1,2\n3\n").unwrap();
        assert!(load_csv(&p).is_err());
    }

    proptest! {
        #[test]
        fn byte_identical_roundtrip(
            rows in 1usize..6,
            cols in 1usize..6,
            vals in proptest::collection::vec(-1e6f32..1e6, 36),
            gridded in any::<bool>(),
        ) {
            let data = vals[..rows * cols].to_vec();
            let mut m = Matrix::from_vec(rows, cols, data).unwrap();
            if gridded {
                m = m.with_grid(Grid::new(1, rows)).unwrap();
            }
            let bytes = tensor_bytes(&m);
            let back = load_tensor_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(tensor_bytes(&back), bytes);
        }
    }
}
