//! Codebooks, nearest-neighbor quantization and the code-distance rank.
//!
//! Storage is `f32`, row-major. Every distance is accumulated in `f64`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Magic bytes of the binary codebook format.
pub const CBK1_MAGIC: &[u8; 4] = b"CBK1";
const CBK1_HEADER_LEN: usize = 12;

/// A table of `len()` embeddings of dimension `dim()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    entries: Vec<f32>,
    size: usize,
    dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodebookFormat {
    Binary,
    Csv,
}

impl CodebookFormat {
    /// `.csv` selects CSV; anything else is treated as CBK1.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => CodebookFormat::Csv,
            _ => CodebookFormat::Binary,
        }
    }
}

impl Codebook {
    /// Builds a codebook from row-major `entries`, which must hold
    /// `size * dim` finite values.
    pub fn new(entries: Vec<f32>, size: usize, dim: usize) -> Result<Self> {
        if size == 0 || dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "codebook needs N >= 1 and C >= 1, got N={size}, C={dim}"
            )));
        }
        if size.checked_mul(dim) != Some(entries.len()) {
            return Err(Error::DimensionMismatch(format!(
                "{} values for N={size}, C={dim}",
                entries.len()
            )));
        }
        if let Some(pos) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "entry {} (row {}, column {})",
                pos,
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self { entries, size, dim })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut entries = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} values, expected {dim}",
                    row.len()
                )));
            }
            entries.extend_from_slice(row);
        }
        Self::new(entries, rows.len(), dim)
    }

    /// Number of embeddings N.
    pub fn len(&self) -> usize {
        self.size
    }

    /// Always false: a codebook holds at least one embedding.
    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    /// Embedding dimension C.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[f32] {
        &self.entries
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.entries[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.entries.chunks_exact(self.dim)
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.size {
            return Err(Error::IndexOutOfRange {
                index: i,
                size: self.size,
            });
        }
        Ok(())
    }

    /// Euclidean distance between rows `i` and `j`.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        sq_dist(self.row(i), self.row(j)).sqrt()
    }

    /// Index of the codebook row nearest to `point`; lowest index on ties.
    pub fn nearest(&self, point: &[f64]) -> usize {
        debug_assert_eq!(point.len(), self.dim);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, row) in self.rows().enumerate() {
            let d: f64 = row
                .iter()
                .zip(point)
                .map(|(&a, &b)| {
                    let t = a as f64 - b;
                    t * t
                })
                .sum();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    /// All indices ordered by distance from row `i`: `i` itself first, then
    /// ascending distance with lower index first on ties.
    pub fn rank_order(&self, i: usize) -> Result<Vec<usize>> {
        self.check_index(i)?;
        let query = self.row(i);
        let mut keyed: Vec<(f64, usize)> = (0..self.size)
            .filter(|&k| k != i)
            .map(|k| (sq_dist(query, self.row(k)), k))
            .collect();
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut order = Vec::with_capacity(self.size);
        order.push(i);
        order.extend(keyed.into_iter().map(|(_, k)| k));
        Ok(order)
    }

    /// Rank of row `j` among all embeddings sorted by distance to row `i`.
    pub fn code_distance(&self, i: usize, j: usize) -> Result<usize> {
        self.check_index(j)?;
        let order = self.rank_order(i)?;
        Ok(order.iter().position(|&k| k == j).expect("j is in range"))
    }

    /// The `d + 1` indices whose code distance from `i` is at most `d`,
    /// ordered by rank.
    pub fn neighbors_within_rank(&self, i: usize, d: usize) -> Result<Vec<usize>> {
        if d >= self.size {
            return Err(Error::IndexOutOfRange {
                index: d,
                size: self.size,
            });
        }
        let mut order = self.rank_order(i)?;
        order.truncate(d + 1);
        Ok(order)
    }

    /// Quantizes every cell of `features` to its nearest codebook row.
    pub fn quantize(&self, features: &FeatureGrid) -> Result<TokenGrid> {
        if features.dim != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "feature dimension {} vs codebook dimension {}",
                features.dim, self.dim
            )));
        }
        let mut cell = vec![0.0f64; self.dim];
        let indices = features
            .values
            .chunks_exact(self.dim)
            .map(|f| {
                for (c, &v) in cell.iter_mut().zip(f) {
                    *c = v as f64;
                }
                self.nearest(&cell) as u32
            })
            .collect();
        Ok(TokenGrid {
            indices,
            height: features.height,
            width: features.width,
        })
    }

    /// Replaces every token by its codebook row.
    pub fn lookup(&self, tokens: &TokenGrid) -> Result<FeatureGrid> {
        let mut values = Vec::with_capacity(tokens.indices.len() * self.dim);
        for &t in &tokens.indices {
            self.check_index(t as usize)?;
            values.extend_from_slice(self.row(t as usize));
        }
        Ok(FeatureGrid {
            values,
            height: tokens.height,
            width: tokens.width,
            dim: self.dim,
        })
    }

    pub fn load(path: &Path, format: CodebookFormat) -> Result<Self> {
        match format {
            CodebookFormat::Binary => {
                let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
                Self::decode_cbk1(&bytes)
            }
            CodebookFormat::Csv => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                Self::parse_csv(&text)
            }
        }
    }

    pub fn save(&self, path: &Path, format: CodebookFormat) -> Result<()> {
        let bytes = match format {
            CodebookFormat::Binary => self.encode_cbk1(),
            CodebookFormat::Csv => self.to_csv().into_bytes(),
        };
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Decodes a CBK1 buffer: `"CBK1"`, N (u32 LE), C (u32 LE), then N*C
    /// little-endian `f32` values, row-major. Trailing bytes are rejected.
    pub fn decode_cbk1(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CBK1_HEADER_LEN {
            return Err(Error::parse(
                format!("byte {}", bytes.len()),
                format!(
                    "truncated header: {} of {CBK1_HEADER_LEN} bytes",
                    bytes.len()
                ),
            ));
        }
        if &bytes[..4] != CBK1_MAGIC {
            return Err(Error::parse("byte 0", "bad magic, expected \"CBK1\""));
        }
        let size = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if size == 0 {
            return Err(Error::parse("byte 4", "N must be at least 1"));
        }
        if dim == 0 {
            return Err(Error::parse("byte 8", "C must be at least 1"));
        }
        let expected = size
            .checked_mul(dim)
            .and_then(|v| v.checked_mul(4))
            .and_then(|v| v.checked_add(CBK1_HEADER_LEN))
            .ok_or_else(|| Error::parse("byte 4", "N*C overflows"))?;
        if bytes.len() != expected {
            return Err(Error::parse(
                format!("byte {}", bytes.len().min(expected)),
                format!(
                    "payload length {} does not match N={size}, C={dim} (expected {expected} bytes)",
                    bytes.len()
                ),
            ));
        }
        let mut entries = Vec::with_capacity(size * dim);
        for (k, chunk) in bytes[CBK1_HEADER_LEN..].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::parse(
                    format!("byte {}", CBK1_HEADER_LEN + 4 * k),
                    format!("non-finite value in row {}", k / dim),
                ));
            }
            entries.push(v);
        }
        Self::new(entries, size, dim)
    }

    pub fn encode_cbk1(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(CBK1_HEADER_LEN + 4 * self.entries.len());
        out.extend_from_slice(CBK1_MAGIC);
        out.extend_from_slice(&(self.size as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.entries {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// One embedding per line, comma-separated, no header. Blank lines are
    /// skipped; C is taken from the first row.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut dim = None;
        let mut size = 0;
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row_start = entries.len();
            for (col, field) in line.split(',').enumerate() {
                let v: f32 = field.trim().parse().map_err(|_| {
                    Error::parse(
                        format!("row {}", line_no + 1),
                        format!("column {}: cannot parse {:?}", col + 1, field.trim()),
                    )
                })?;
                if !v.is_finite() {
                    return Err(Error::parse(
                        format!("row {}", line_no + 1),
                        format!("column {}: non-finite value", col + 1),
                    ));
                }
                entries.push(v);
            }
            let width = entries.len() - row_start;
            match dim {
                None => dim = Some(width),
                Some(c) if c != width => {
                    return Err(Error::parse(
                        format!("row {}", line_no + 1),
                        format!("{width} columns, expected {c}"),
                    ))
                }
                Some(_) => {}
            }
            size += 1;
        }
        let dim = dim.ok_or_else(|| Error::parse("row 1", "empty codebook"))?;
        Self::new(entries, size, dim)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

pub(crate) fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let t = x as f64 - y as f64;
            t * t
        })
        .sum()
}

/// An `height x width` grid of `dim`-dimensional features, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub values: Vec<f32>,
    pub height: usize,
    pub width: usize,
    pub dim: usize,
}

impl FeatureGrid {
    pub fn new(values: Vec<f32>, height: usize, width: usize, dim: usize) -> Result<Self> {
        if height * width * dim != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {height}x{width}x{dim} grid",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature grid".into()));
        }
        Ok(Self {
            values,
            height,
            width,
            dim,
        })
    }

    pub fn cell(&self, i: usize, j: usize) -> &[f32] {
        let start = (i * self.width + j) * self.dim;
        &self.values[start..start + self.dim]
    }
}

/// An `height x width` grid of token indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenGrid {
    pub indices: Vec<u32>,
    pub height: usize,
    pub width: usize,
}

impl TokenGrid {
    pub fn new(indices: Vec<u32>, height: usize, width: usize) -> Result<Self> {
        if height * width != indices.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} indices for {height}x{width} grid",
                indices.len()
            )));
        }
        Ok(Self {
            indices,
            height,
            width,
        })
    }

    /// A 1 x len grid, the shape used for flat token streams.
    pub fn from_stream(indices: Vec<u32>) -> Self {
        let width = indices.len();
        Self {
            indices,
            height: 1,
            width,
        }
    }
}
