//! `FAEM` binary matrix files and the CSV fallback.
//!
//! Binary layout, little-endian throughout:
//! `b"FAEM"`, `u16` version, `u64` N, `u64` D, N ids each as `u32` byte length + UTF-8,
//! then N x D `f32` row-major.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{canonical_field_names, EmbeddingMatrix};
use crate::dataset::Field;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FAEM";
const VERSION: u16 = 1;

pub fn write_matrix_binary(path: &Path, m: &EmbeddingMatrix) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(m.n_rows() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(m.dim() as u64).to_le_bytes()).map_err(io)?;
    for id in m.index_order() {
        w.write_all(&(id.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(id.as_bytes()).map_err(io)?;
    }
    for v in m.data() {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_matrix_csv(path: &Path, m: &EmbeddingMatrix) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    let mut header = vec!["id".to_string()];
    header.extend((0..m.dim()).map(|j| format!("v{j}")));
    wtr.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
    for (id, row) in m.index_order().iter().zip(m.rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        wtr.write_record(&rec).map_err(|e| Error::Format(e.to_string()))?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

/// Raw contents of a matrix file: ids, row width, row-major data.
pub struct RawMatrix {
    pub ids: Vec<String>,
    pub dim: usize,
    pub data: Vec<f32>,
}

/// Reads a `FAEM` file, or a CSV file when the magic bytes are absent.
pub fn read_matrix_file(path: &Path) -> Result<RawMatrix> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let raw = if bytes.starts_with(MAGIC) {
        parse_binary(&bytes)?
    } else {
        parse_csv(&bytes)?
    };
    if let Some(pos) = raw.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: pos / raw.dim.max(1),
            col: pos % raw.dim.max(1),
        });
    }
    Ok(raw)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated file at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn parse_binary(bytes: &[u8]) -> Result<RawMatrix> {
    let mut c = Cursor { bytes, pos: 4 };
    let version = c.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let n = c.u64()? as usize;
    let dim = c.u64()? as usize;
    let mut ids = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let len = c.u32()? as usize;
        let id = std::str::from_utf8(c.take(len)?).map_err(|e| Error::Format(format!("id is not UTF-8: {e}")))?;
        ids.push(id.to_string());
    }
    let count = n
        .checked_mul(dim)
        .ok_or_else(|| Error::Format("matrix size overflows".into()))?;
    let payload = c.take(
        count
            .checked_mul(4)
            .ok_or_else(|| Error::Format("matrix size overflows".into()))?,
    )?;
    if c.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(RawMatrix { ids, dim, data })
}

fn parse_csv(bytes: &[u8]) -> Result<RawMatrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(bytes);
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut dim = None;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if i == 0 && rec.get(0).is_some_and(|c| c.eq_ignore_ascii_case("id")) {
            continue;
        }
        let width = rec.len().saturating_sub(1);
        match dim {
            None => dim = Some(width),
            Some(d) if d != width => {
                return Err(Error::Dimension {
                    expected: d,
                    found: width,
                })
            }
            _ => {}
        }
        ids.push(rec.get(0).unwrap_or_default().to_string());
        for cell in rec.iter().skip(1) {
            data.push(cell.trim().parse::<f32>().map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("{cell:?}: {e}"),
            })?);
        }
    }
    Ok(RawMatrix {
        ids,
        dim: dim.unwrap_or(0),
        data,
    })
}

/// Reads a matrix file as-is, splitting each row into the five canonical field blocks.
pub fn load_matrix(path: &Path) -> Result<EmbeddingMatrix> {
    let raw = read_matrix_file(path)?;
    let fields = Field::ALL.len();
    if raw.dim == 0 || raw.dim % fields != 0 {
        return Err(Error::Dimension {
            expected: (raw.dim / fields).max(1) * fields,
            found: raw.dim,
        });
    }
    EmbeddingMatrix::canonical(raw.data, raw.dim / fields, raw.ids)
}

/// Loads externally computed embeddings and reorders rows to `expected_ids`.
/// The file's row width must equal `d` times the five canonical fields.
pub fn ingest_embeddings(path: &Path, expected_ids: &[String], d: usize) -> Result<EmbeddingMatrix> {
    let raw = read_matrix_file(path)?;
    let expected_dim = d * Field::ALL.len();
    if raw.dim != expected_dim {
        return Err(Error::Dimension {
            expected: expected_dim,
            found: raw.dim,
        });
    }
    if raw.ids.len() != expected_ids.len() {
        return Err(Error::IdMismatch(format!(
            "file has {} rows, corpus has {} profiles",
            raw.ids.len(),
            expected_ids.len()
        )));
    }
    let mut pos: HashMap<&str, usize> = HashMap::with_capacity(raw.ids.len());
    for (i, id) in raw.ids.iter().enumerate() {
        if pos.insert(id.as_str(), i).is_some() {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    let mut data = Vec::with_capacity(raw.data.len());
    for id in expected_ids {
        let &i = pos
            .get(id.as_str())
            .ok_or_else(|| Error::IdMismatch(format!("id {id:?} missing from embedding file")))?;
        data.extend_from_slice(&raw.data[i * raw.dim..(i + 1) * raw.dim]);
    }
    EmbeddingMatrix::new(data, d, canonical_field_names(), expected_ids.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn matrix(n: usize, d: usize, names: &[&str]) -> EmbeddingMatrix {
        let data = (0..n * d * 5).map(|i| i as f32 * 0.5 - 3.0).collect();
        EmbeddingMatrix::canonical(data, d, ids(names)).unwrap()
    }

    #[test]
    fn binary_round_trip() {
        let m = matrix(3, 768, &["a", "b", "c"]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.faem");
        write_matrix_binary(&path, &m).unwrap();
        let back = ingest_embeddings(&path, &ids(&["a", "b", "c"]), 768).unwrap();
        assert_eq!((back.n_rows(), back.dim()), (3, 3840));
        assert_eq!(back, m);
    }

    #[test]
    fn header_layout() {
        let m = matrix(1, 1, &["xy"]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.faem");
        write_matrix_binary(&path, &m).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"FAEM");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u64::from_le_bytes(bytes[6..14].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[14..22].try_into().unwrap()), 5);
        assert_eq!(u32::from_le_bytes(bytes[22..26].try_into().unwrap()), 2);
        assert_eq!(&bytes[26..28], b"xy");
        assert_eq!(bytes.len(), 28 + 5 * 4);
    }

    #[test]
    fn wrong_dimension() {
        let m = EmbeddingMatrix::from_rows(&[vec![0.1; 3072]], ids(&["a"])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.faem");
        write_matrix_binary(&path, &m).unwrap();
        let err = ingest_embeddings(&path, &ids(&["a"]), 768).unwrap_err();
        assert!(matches!(
            err,
            Error::Dimension {
                expected: 3840,
                found: 3072
            }
        ));
        let msg = err.to_string();
        assert!(msg.contains("3840") && msg.contains("3072"), "{msg}");
    }

    #[test]
    fn rows_are_reordered() {
        let m = matrix(2, 2, &["B", "A"]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.faem");
        write_matrix_binary(&path, &m).unwrap();
        let back = ingest_embeddings(&path, &ids(&["A", "B"]), 2).unwrap();
        assert_eq!(back.row(0), m.row(1));
        assert_eq!(back.row(1), m.row(0));
    }

    #[test]
    fn id_mismatch_and_non_finite() {
        let m = matrix(2, 2, &["A", "B"]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.faem");
        write_matrix_binary(&path, &m).unwrap();
        assert!(matches!(
            ingest_embeddings(&path, &ids(&["A", "C"]), 2).unwrap_err(),
            Error::IdMismatch(_)
        ));
        assert!(matches!(
            ingest_embeddings(&path, &ids(&["A"]), 2).unwrap_err(),
            Error::IdMismatch(_)
        ));

        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 4;
        bytes[last..].copy_from_slice(&f32::INFINITY.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            ingest_embeddings(&path, &ids(&["A", "B"]), 2).unwrap_err(),
            Error::NonFinite { row: 1, col: 9 }
        ));
    }

    #[test]
    fn csv_fallback() {
        let m = matrix(2, 1, &["A", "B"]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        write_matrix_csv(&path, &m).unwrap();
        assert_eq!(ingest_embeddings(&path, &ids(&["A", "B"]), 1).unwrap(), m);
    }

    #[test]
    fn truncated_binary() {
        let m = matrix(2, 1, &["A", "B"]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.faem");
        write_matrix_binary(&path, &m).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_matrix_file(&path), Err(Error::Format(_))));
    }
}
