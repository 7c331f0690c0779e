//! MEB1 embedding stores.
//!
//! Layout (all integers unsigned 32-bit little-endian):
//!
//! ```text
//! "MEB1" | rows R | dim D | R*D f32 LE, row-major | L | L bytes of JSON {key: row}
//! ```
//!
//! Values are 32-bit on disk and 64-bit in memory. Reading a file and writing
//! it back reproduces it byte for byte.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::de::{Deserializer, MapAccess, Visitor};
use serde::Deserialize;

use crate::error::{Error, Result};

pub const MEB_MAGIC: &[u8; 4] = b"MEB1";

/// Keyed rows of a fixed dimension, in insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    keys: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("embedding dimension must be positive".into()));
        }
        Ok(EmbeddingStore {
            dim,
            keys: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Keys in row order.
    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.index.get(key).map(|&r| self.row(r))
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    /// Appends a row. Keys must be new.
    pub fn insert(&mut self, key: &str, values: &[f64]) -> Result<usize> {
        if values.len() != self.dim {
            return Err(Error::shape(
                "EmbeddingStore::insert",
                format!("row {key:?} has {} values, store dim is {}", values.len(), self.dim),
            ));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Invalid(format!("row {key:?} entry {i} is {v}")));
        }
        if self.index.contains_key(key) {
            return Err(Error::Format(format!("duplicate embedding key {key:?}")));
        }
        let r = self.keys.len();
        self.index.insert(key.to_string(), r);
        self.keys.push(key.to_string());
        self.data.extend_from_slice(values);
        Ok(r)
    }

    /// Rounds every value to the nearest 32-bit float, as stored on disk.
    pub fn quantized(&self) -> EmbeddingStore {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = *v as f32 as f64;
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let rows = u32::try_from(self.len()).map_err(|_| Error::Format("too many rows".into()))?;
        let dim = u32::try_from(self.dim).map_err(|_| Error::Format("dimension too large".into()))?;
        let mut out = Vec::with_capacity(12 + self.data.len() * 4 + 16 * self.len());
        out.extend_from_slice(MEB_MAGIC);
        out.extend_from_slice(&rows.to_le_bytes());
        out.extend_from_slice(&dim.to_le_bytes());
        for &v in &self.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let json = self.index_json();
        let len = u32::try_from(json.len()).map_err(|_| Error::Format("index too large".into()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(json.as_bytes());
        Ok(out)
    }

    // Written by hand so keys appear in row order.
    fn index_json(&self) -> String {
        let mut s = String::from("{");
        for (r, key) in self.keys.iter().enumerate() {
            if r > 0 {
                s.push(',');
            }
            s.push_str(&serde_json::to_string(key).expect("strings serialize"));
            s.push(':');
            s.push_str(&r.to_string());
        }
        s.push('}');
        s
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4, "magic")?;
        if magic != MEB_MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected \"MEB1\"",
                String::from_utf8_lossy(magic)
            )));
        }
        let rows = cur.u32("row count")? as usize;
        let dim = cur.u32("dimension")? as usize;
        if dim == 0 {
            return Err(Error::Format("dimension is zero".into()));
        }
        let payload = cur.take(
            rows.checked_mul(dim)
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::Format("payload size overflows".into()))?,
            "payload",
        )?;
        let data: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let len = cur.u32("index length")? as usize;
        let json = std::str::from_utf8(cur.take(len, "index")?)
            .map_err(|e| Error::Format(format!("index is not UTF-8: {e}")))?;
        if cur.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after index",
                bytes.len() - cur.pos
            )));
        }
        let entries = parse_index(json)?;
        if entries.len() != rows {
            return Err(Error::Format(format!(
                "index has {} keys for {rows} rows",
                entries.len()
            )));
        }
        let mut keys = vec![None; rows];
        for (key, r) in entries {
            let slot = keys
                .get_mut(r)
                .ok_or_else(|| Error::Format(format!("key {key:?} points at row {r} of {rows}")))?;
            if slot.is_some() {
                return Err(Error::Format(format!("row {r} is indexed twice")));
            }
            *slot = Some(key);
        }
        let keys: Vec<String> = keys.into_iter().map(|k| k.expect("every row indexed")).collect();
        let index = keys.iter().enumerate().map(|(r, k)| (k.clone(), r)).collect();
        Ok(EmbeddingStore {
            dim,
            keys,
            index,
            data,
        })
    }

    /// JSON-lines debug form: a `{"dim": D}` header, then one
    /// `{"key": .., "values": [..]}` object per row.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::json!({ "dim": self.dim }).to_string();
        out.push('\n');
        for (r, key) in self.keys.iter().enumerate() {
            let values: Vec<f64> = self.row(r).iter().map(|&v| v as f32 as f64).collect();
            out.push_str(&serde_json::json!({ "key": key, "values": values }).to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            dim: usize,
        }
        #[derive(Deserialize)]
        struct Row {
            key: String,
            values: Vec<f64>,
        }
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Header = serde_json::from_str(
            lines.next().ok_or_else(|| Error::Format("empty JSON-lines store".into()))?,
        )?;
        let mut store = EmbeddingStore::new(header.dim)?;
        for line in lines {
            let row: Row = serde_json::from_str(line)?;
            store.insert(&row.key, &row.values)?;
        }
        Ok(store)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!(
                "truncated file: {what} needs {n} bytes at offset {}, {} available",
                self.pos,
                self.bytes.len() - self.pos
            ))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses the key index, rejecting repeated keys (which a map type would
/// silently collapse).
fn parse_index(json: &str) -> Result<Vec<(String, usize)>> {
    struct Entries(Vec<(String, usize)>);

    impl<'de> Deserialize<'de> for Entries {
        fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
            struct V;
            impl<'de> Visitor<'de> for V {
                type Value = Entries;
                fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                    f.write_str("an object mapping keys to row indices")
                }
                fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Entries, A::Error> {
                    let mut seen = std::collections::HashSet::new();
                    let mut out = Vec::new();
                    while let Some((k, v)) = map.next_entry::<String, usize>()? {
                        if !seen.insert(k.clone()) {
                            return Err(serde::de::Error::custom(format!("duplicate key {k:?}")));
                        }
                        out.push((k, v));
                    }
                    Ok(Entries(out))
                }
            }
            d.deserialize_map(V)
        }
    }

    serde_json::from_str::<Entries>(json)
        .map(|e| e.0)
        .map_err(|e| Error::Format(format!("bad key index: {e}")))
}

pub fn write_meb(path: &Path, store: &EmbeddingStore) -> Result<()> {
    std::fs::write(path, store.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn read_meb(path: &Path) -> Result<EmbeddingStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingStore::from_bytes(&bytes)
}

/// Reads either format: MEB1 by magic, otherwise JSON lines.
pub fn read_store(path: &Path) -> Result<EmbeddingStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MEB_MAGIC) {
        return EmbeddingStore::from_bytes(&bytes);
    }
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| Error::Format(format!("{} is neither MEB1 nor UTF-8 JSON lines", path.display())))?;
    EmbeddingStore::from_jsonl(text)
}
