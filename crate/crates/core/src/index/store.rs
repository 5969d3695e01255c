//! DRLE binary container for token sequences, plus the sidecar manifest.
//!
//! ```text
//! "DRLE" | u16 version | u16 flags | u32 count | u16 D
//! per record: u32 id | u16 N | N·D f32 | N mask bytes | [N f32 weights]
//! u32 CRC32 of everything above
//! ```
//!
//! All integers and floats are little-endian. Flag bit 0 marks that every
//! record carries weights.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"DRLE";
pub const VERSION: u16 = 1;
pub const FLAG_WEIGHTS: u16 = 1;
const HEADER_LEN: usize = 14;

#[derive(Debug, Clone, PartialEq)]
pub struct DrleRecord {
    pub id: u32,
    /// Row-major `N × D`.
    pub tokens: Vec<f32>,
    pub mask: Vec<bool>,
    pub weights: Option<Vec<f32>>,
}

impl DrleRecord {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrleFile {
    pub dim: usize,
    pub records: Vec<DrleRecord>,
}

impl DrleFile {
    pub fn has_weights(&self) -> bool {
        self.records.first().is_some_and(|r| r.weights.is_some())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let dim = u16::try_from(self.dim).map_err(|_| Error::Unsupported(format!("D = {} exceeds u16", self.dim)))?;
        let count = u32::try_from(self.records.len())
            .map_err(|_| Error::Unsupported(format!("{} records exceed u32", self.records.len())))?;
        let weights = self.has_weights();
        let mut out = Vec::with_capacity(HEADER_LEN + 4);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(if weights { FLAG_WEIGHTS } else { 0 }).to_le_bytes());
        out.extend_from_slice(&count.to_le_bytes());
        out.extend_from_slice(&dim.to_le_bytes());
        for r in &self.records {
            let n = r.len();
            let n16 = u16::try_from(n).map_err(|_| Error::Unsupported(format!("record {} has {n} rows", r.id)))?;
            if r.tokens.len() != n * self.dim {
                return Err(Error::ShapeMismatch(format!(
                    "record {}: {} values for {n} rows of width {}",
                    r.id,
                    r.tokens.len(),
                    self.dim
                )));
            }
            if r.weights.is_some() != weights || r.weights.as_ref().is_some_and(|w| w.len() != n) {
                return Err(Error::ShapeMismatch(format!("record {}: weights must be present on every record", r.id)));
            }
            out.extend_from_slice(&r.id.to_le_bytes());
            out.extend_from_slice(&n16.to_le_bytes());
            for x in &r.tokens {
                out.extend_from_slice(&x.to_le_bytes());
            }
            out.extend(r.mask.iter().map(|&m| u8::from(m)));
            for x in r.weights.iter().flatten() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    /// Parses the structure first (format errors), then verifies the CRC.
    pub fn decode(bytes: &[u8]) -> Result<DrleFile> {
        if bytes.len() < HEADER_LEN + 4 {
            return Err(Error::Format(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if bytes[..4] != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
        }
        let mut rd = Reader { bytes, pos: 4 };
        let version = rd.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let flags = rd.u16()?;
        if flags & !FLAG_WEIGHTS != 0 {
            return Err(Error::Format(format!("unknown flags {flags:#06x}")));
        }
        let weights = flags & FLAG_WEIGHTS != 0;
        let count = rd.u32()? as usize;
        let dim = rd.u16()? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for k in 0..count {
            let id = rd.u32()?;
            let n = rd.u16()? as usize;
            let tokens = (0..n * dim).map(|_| rd.f32()).collect::<Result<Vec<_>>>()?;
            let mask = rd
                .take(n)?
                .iter()
                .map(|&b| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(Error::Format(format!("record {k}: mask byte {other}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            let weights = if weights { Some((0..n).map(|_| rd.f32()).collect::<Result<Vec<_>>>()?) } else { None };
            records.push(DrleRecord { id, tokens, mask, weights });
        }
        let body = rd.pos;
        let stored = rd.u32()?;
        if rd.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - rd.pos)));
        }
        let computed = crc32fast::hash(&bytes[..body]);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        Ok(DrleFile { dim, records })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<DrleFile> {
        Self::decode(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("truncated: need {n} bytes at offset {} of {}", self.pos, self.bytes.len()))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Ordered `key: value` lines describing a DRLE file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets `key`, replacing an earlier value in place.
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key, value)),
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Appends the entries of `other`, overriding shared keys.
    pub fn merge(&mut self, other: &Manifest) -> &mut Self {
        for (k, v) in &other.entries {
            self.set(k.clone(), v);
        }
        self
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k}: {v}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Manifest> {
        let mut m = Manifest::new();
        for (no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| Error::Format(format!("manifest line {}: missing ':'", no + 1)))?;
            m.set(k.trim(), v.trim());
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Manifest> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// `<path>.manifest`.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}
