//! Flat embedding files.
//!
//! Layout (little-endian), 24-byte header then row-major vectors:
//!
//! | offset | field  | type                     |
//! |--------|--------|--------------------------|
//! | 0      | magic  | `b"SUBTEMB1"`            |
//! | 8      | count  | u64                      |
//! | 16     | dim    | u32                      |
//! | 20     | dtype  | u32, 1 = 32-bit float    |
//! | 24     | data   | count × dim × f32        |
//!
//! Row ids live next to the file in `<name>.ids`, one per line.

use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::EmbedError;

const MAGIC: &[u8; 8] = b"SUBTEMB1";
const DTYPE_F32: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub ids: Vec<String>,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl EmbeddingSet {
    pub fn new(dim: usize) -> Self {
        Self { ids: Vec::new(), dim, data: Vec::new() }
    }

    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f32>], dim: usize) -> Result<Self, EmbedError> {
        let mut s = Self::new(dim);
        for (id, r) in ids.iter().zip(rows) {
            s.push(id, r)?;
        }
        Ok(s)
    }

    pub fn push(&mut self, id: &str, v: &[f32]) -> Result<(), EmbedError> {
        if v.len() != self.dim {
            return Err(EmbedError::DimensionMismatch { expected: self.dim, got: v.len() });
        }
        self.ids.push(id.to_string());
        self.data.extend_from_slice(v);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    /// Subset by row indices.
    pub fn select(&self, rows: &[usize]) -> Self {
        let mut s = Self::new(self.dim);
        for &i in rows {
            s.ids.push(self.ids[i].clone());
            s.data.extend_from_slice(self.row(i));
        }
        s
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u64::<LittleEndian>(self.len() as u64)?;
        w.write_u32::<LittleEndian>(self.dim as u32)?;
        w.write_u32::<LittleEndian>(DTYPE_F32)?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for &x in &self.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)
    }

    /// Reads vectors; ids are filled with row numbers.
    pub fn read_from(r: &mut impl Read) -> Result<Self, EmbedError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(EmbedError::BadFile("wrong magic".into()));
        }
        let count = r.read_u64::<LittleEndian>()? as usize;
        let dim = r.read_u32::<LittleEndian>()? as usize;
        let dtype = r.read_u32::<LittleEndian>()?;
        if dtype != DTYPE_F32 {
            return Err(EmbedError::BadFile(format!("unsupported dtype {dtype}")));
        }
        let n = count.checked_mul(dim).ok_or_else(|| EmbedError::BadFile("size overflow".into()))?;
        let mut data = vec![0f32; n];
        r.read_f32_into::<LittleEndian>(&mut data)?;
        Ok(Self { ids: (0..count).map(|i| i.to_string()).collect(), dim, data })
    }

    pub fn ids_path(path: &Path) -> PathBuf {
        let mut p = path.as_os_str().to_owned();
        p.push(".ids");
        PathBuf::from(p)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        let mut ids = std::io::BufWriter::new(std::fs::File::create(Self::ids_path(path))?);
        for id in &self.ids {
            writeln!(ids, "{id}")?;
        }
        ids.flush()
    }

    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        let mut set = Self::read_from(&mut std::io::BufReader::new(std::fs::File::open(path)?))?;
        let ids_path = Self::ids_path(path);
        if ids_path.exists() {
            let ids: Vec<String> = std::io::BufReader::new(std::fs::File::open(ids_path)?).lines().collect::<Result<_, _>>()?;
            if ids.len() != set.len() {
                return Err(EmbedError::BadFile(format!("{} ids for {} vectors", ids.len(), set.len())));
            }
            set.ids = ids;
        }
        Ok(set)
    }
}

/// Embeddings with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub set: EmbeddingSet,
    pub labels: Vec<String>,
}
