//! Exact linear-scan vector index with a compact binary format.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::embed::distance;
use super::IndexError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Document,
    Segment,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dim: usize,
    count: usize,
    level: Level,
    embedder_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    level: Level,
    dim: usize,
    embedder_id: String,
    ids: Vec<String>,
    vectors: Vec<Vec<f32>>,
    pos: HashMap<String, usize>,
}

impl VectorIndex {
    pub fn new(level: Level, dim: usize, embedder_id: &str) -> Self {
        Self {
            level,
            dim,
            embedder_id: embedder_id.to_string(),
            ids: Vec::new(),
            vectors: Vec::new(),
            pos: HashMap::new(),
        }
    }

    pub fn insert(&mut self, id: &str, v: Vec<f32>) -> Result<(), IndexError> {
        if v.len() != self.dim {
            return Err(IndexError::DimMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        if self.pos.contains_key(id) {
            return Err(IndexError::DuplicateId(id.to_string()));
        }
        self.pos.insert(id.to_string(), self.ids.len());
        self.ids.push(id.to_string());
        self.vectors.push(v);
        Ok(())
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder_id
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.pos.get(id).map(|&i| self.vectors[i].as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids.iter().map(String::as_str).zip(self.vectors.iter().map(Vec::as_slice))
    }

    /// Entries strictly closer than `radius`, in insertion order.
    pub fn within(&self, query: &[f32], radius: f64) -> Vec<(&str, f64)> {
        self.iter()
            .map(|(id, v)| (id, distance(query, v)))
            .filter(|&(_, d)| d < radius)
            .collect()
    }

    /// Closest entry; ties resolve to the earlier entry.
    pub fn nearest(&self, query: &[f32]) -> Option<(&str, f64)> {
        self.iter()
            .map(|(id, v)| (id, distance(query, v)))
            .fold(None, |best: Option<(&str, f64)>, cur| match best {
                Some(b) if b.1 <= cur.1 => Some(b),
                _ => Some(cur),
            })
    }

    /// Writes a JSON header line followed by `(u32 id length, id bytes,
    /// dim × f32)` records, all little-endian.
    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let io = |e| IndexError::io(path, e);
        let mut out = BufWriter::new(fs::File::create(path).map_err(io)?);
        let header = Header {
            dim: self.dim,
            count: self.ids.len(),
            level: self.level,
            embedder_id: self.embedder_id.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes")).map_err(io)?;
        for (id, v) in self.iter() {
            out.write_all(&(id.len() as u32).to_le_bytes()).map_err(io)?;
            out.write_all(id.as_bytes()).map_err(io)?;
            for x in v {
                out.write_all(&x.to_le_bytes()).map_err(io)?;
            }
        }
        out.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let io = |e| IndexError::io(path, e);
        let bad = |m: String| IndexError::Format {
            path: path.to_path_buf(),
            message: m,
        };
        let mut r = BufReader::new(fs::File::open(path).map_err(io)?);
        let mut line = String::new();
        r.read_line(&mut line).map_err(io)?;
        let h: Header = serde_json::from_str(line.trim_end()).map_err(|e| bad(format!("bad header: {e}")))?;
        let mut idx = VectorIndex::new(h.level, h.dim, &h.embedder_id);
        let mut buf4 = [0u8; 4];
        for n in 0..h.count {
            r.read_exact(&mut buf4).map_err(|_| bad(format!("truncated at entry {n}")))?;
            let len = u32::from_le_bytes(buf4) as usize;
            let mut id = vec![0u8; len];
            r.read_exact(&mut id).map_err(|_| bad(format!("truncated id at entry {n}")))?;
            let id = String::from_utf8(id).map_err(|_| bad(format!("non-UTF-8 id at entry {n}")))?;
            let mut raw = vec![0u8; 4 * h.dim];
            r.read_exact(&mut raw).map_err(|_| bad(format!("truncated vector at entry {n}")))?;
            let v = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            idx.insert(&id, v)?;
        }
        Ok(idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(dim: usize, i: usize) -> Vec<f32> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    #[test]
    fn rejects_dim_mismatch_and_duplicates() {
        let mut idx = VectorIndex::new(Level::Document, 4, "t");
        assert!(matches!(
            idx.insert("a", vec![1.0; 3]),
            Err(IndexError::DimMismatch { expected: 4, got: 3 })
        ));
        idx.insert("a", unit(4, 0)).unwrap();
        assert!(matches!(idx.insert("a", unit(4, 1)), Err(IndexError::DuplicateId(_))));
    }

    #[test]
    fn radius_is_strict() {
        let mut idx = VectorIndex::new(Level::Document, 4, "t");
        idx.insert("a", unit(4, 0)).unwrap();
        idx.insert("b", unit(4, 1)).unwrap();
        assert!(idx.within(&unit(4, 0), 0.0).is_empty());
        assert_eq!(idx.within(&unit(4, 0), 2.0).len(), 2);
        assert_eq!(idx.nearest(&unit(4, 1)), Some(("b", 0.0)));
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.idx");
        let mut idx = VectorIndex::new(Level::Segment, 3, "emb");
        idx.insert("s#0", vec![0.6, 0.8, 0.0]).unwrap();
        idx.insert("ü", vec![0.0, 0.0, 1.0]).unwrap();
        idx.save(&path).unwrap();
        assert_eq!(VectorIndex::load(&path).unwrap(), idx);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(VectorIndex::load(&path), Err(IndexError::Format { .. })));
    }
}
