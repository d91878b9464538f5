//! Checkpoint directories: `manifest.tsv` describing every array, `blob.bin`
//! holding them back to back, and `config.txt` with the run configuration.

use std::fmt::Write as _;
use std::path::Path;

use vnet_tensor::{DType, Element};

use crate::error::{Result, VnetError};

pub const MANIFEST: &str = "manifest.tsv";
pub const BLOB: &str = "blob.bin";
pub const CONFIG: &str = "config.txt";
const MAGIC: &str = "vnet-checkpoint\t1";

/// Array categories in manifest order.
pub const KINDS: [&str; 6] = ["param", "buffer", "adam_g.m", "adam_g.v", "adam_d.m", "adam_d.v"];

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub kind: String,
    pub name: String,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl Entry {
    pub fn from_values<F: Element>(kind: &str, name: &str, shape: &[usize], values: &[F]) -> Self {
        let mut bytes = Vec::with_capacity(values.len() * F::DTYPE.size());
        values.iter().for_each(|v| v.write_le(&mut bytes));
        Entry {
            kind: kind.into(),
            name: name.into(),
            shape: shape.to_vec(),
            bytes,
        }
    }

    /// Decodes the stored values (stored as `dtype`) into `F`.
    pub fn values<F: Element>(&self, dtype: DType) -> Vec<F> {
        match dtype {
            DType::F32 => self.bytes.chunks_exact(4).map(|c| F::lit(f32::read_le(c) as f64)).collect(),
            DType::F64 => self.bytes.chunks_exact(8).map(|c| F::lit(f64::read_le(c))).collect(),
        }
    }

    fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Manifest line describing one array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub kind: String,
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub step: u64,
    pub dtype: DType,
    pub adam_g_step: u64,
    pub adam_d_step: u64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub entries: Vec<ManifestEntry>,
}

fn bad(msg: String) -> VnetError {
    VnetError::Format {
        chunk: MANIFEST.into(),
        msg,
    }
}

fn sort_key(kind: &str, name: &str) -> (usize, String) {
    (KINDS.iter().position(|k| *k == kind).unwrap_or(usize::MAX), name.to_string())
}

impl Manifest {
    pub fn blob_len(&self) -> u64 {
        self.entries.last().map_or(0, |e| e.offset + e.len)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "step\t{}", self.step);
        let _ = writeln!(s, "dtype\t{}", self.dtype);
        let _ = writeln!(s, "adam_g_step\t{}", self.adam_g_step);
        let _ = writeln!(s, "adam_d_step\t{}", self.adam_d_step);
        let _ = writeln!(s, "lr_g\t{}", self.lr_g);
        let _ = writeln!(s, "lr_d\t{}", self.lr_d);
        let _ = writeln!(s, "entries\t{}", self.entries.len());
        for e in &self.entries {
            let shape = e.shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",");
            let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}", e.kind, e.name, shape, e.offset, e.len);
        }
        s
    }

    /// Parses and checks a manifest: header fields, known kinds, canonical
    /// order, contiguous offsets and lengths that match the shapes.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("missing 'vnet-checkpoint 1' header".into()));
        }
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(format!("missing '{key}' line")))?;
            match line.split_once('\t') {
                Some((k, v)) if k == key => Ok(v.to_string()),
                _ => Err(bad(format!("expected '{key}', got '{line}'"))),
            }
        };
        let num = |key: &str, v: String| v.parse::<u64>().map_err(|_| bad(format!("{key}: '{v}' is not an integer")));
        let float = |key: &str, v: String| {
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| bad(format!("{key}: '{v}' is not a finite number")))
        };
        let step = num("step", field("step")?)?;
        let dt = field("dtype")?;
        let dtype = DType::parse(&dt).ok_or_else(|| bad(format!("unknown dtype '{dt}'")))?;
        let adam_g_step = num("adam_g_step", field("adam_g_step")?)?;
        let adam_d_step = num("adam_d_step", field("adam_d_step")?)?;
        let lr_g = float("lr_g", field("lr_g")?)?;
        let lr_d = float("lr_d", field("lr_d")?)?;
        let count = num("entries", field("entries")?)?;
        let mut entries: Vec<ManifestEntry> = Vec::new();
        let mut offset = 0u64;
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let [kind, name, shape, off, len] = cols[..] else {
                return Err(bad(format!("expected 5 columns, got '{line}'")));
            };
            if !KINDS.contains(&kind) {
                return Err(bad(format!("unknown entry kind '{kind}'")));
            }
            if name.is_empty() {
                return Err(bad("empty entry name".into()));
            }
            let shape: Vec<usize> = if shape.is_empty() {
                Vec::new()
            } else {
                shape
                    .split(',')
                    .map(|d| d.parse().map_err(|_| bad(format!("{name}: bad shape '{shape}'"))))
                    .collect::<Result<_>>()?
            };
            let off = num(name, off.to_string())?;
            let len = num(name, len.to_string())?;
            let numel = shape.iter().try_fold(1u64, |a, &d| a.checked_mul(d as u64));
            let expect = numel.and_then(|n| n.checked_mul(dtype.size() as u64));
            if expect != Some(len) {
                return Err(bad(format!("{name}: {len} bytes do not match shape {shape:?}")));
            }
            if off != offset {
                return Err(bad(format!("{name}: offset {off}, expected {offset}")));
            }
            if let Some(prev) = entries.last() {
                if sort_key(&prev.kind, &prev.name) >= sort_key(kind, name) {
                    return Err(bad(format!("{kind} {name}: entries not in canonical order")));
                }
            }
            offset = offset.checked_add(len).ok_or_else(|| bad("blob size overflows".into()))?;
            entries.push(ManifestEntry {
                kind: kind.into(),
                name: name.into(),
                shape,
                offset: off,
                len,
            });
        }
        if entries.len() as u64 != count {
            return Err(bad(format!("header announces {count} entries, found {}", entries.len())));
        }
        Ok(Manifest {
            step,
            dtype,
            adam_g_step,
            adam_d_step,
            lr_g,
            lr_d,
            entries,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub dtype: DType,
    pub adam_g_step: u64,
    pub adam_d_step: u64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub config_text: String,
    pub entries: Vec<Entry>,
}

impl Checkpoint {
    /// Puts entries in canonical order.
    pub fn canonicalize(&mut self) {
        self.entries.sort_by_key(|e| sort_key(&e.kind, &e.name));
    }

    pub fn entry(&self, kind: &str, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.kind == kind && e.name == name)
    }

    pub fn manifest(&self) -> Manifest {
        let mut offset = 0;
        let entries = self
            .entries
            .iter()
            .map(|e| {
                let m = ManifestEntry {
                    kind: e.kind.clone(),
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    offset,
                    len: e.bytes.len() as u64,
                };
                offset += e.bytes.len() as u64;
                m
            })
            .collect();
        Manifest {
            step: self.step,
            dtype: self.dtype,
            adam_g_step: self.adam_g_step,
            adam_d_step: self.adam_d_step,
            lr_g: self.lr_g,
            lr_d: self.lr_d,
            entries,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut ck = self.clone();
        ck.canonicalize();
        for e in &ck.entries {
            if e.bytes.len() != e.numel() * ck.dtype.size() {
                return Err(VnetError::Integrity(format!("{} {}: value count does not match its shape", e.kind, e.name)));
            }
        }
        std::fs::create_dir_all(dir).map_err(|e| VnetError::io(dir, e))?;
        let blob: Vec<u8> = ck.entries.iter().flat_map(|e| e.bytes.iter().copied()).collect();
        let write = |name: &str, bytes: &[u8]| {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(|e| VnetError::io(&p, e))
        };
        write(BLOB, &blob)?;
        write(CONFIG, ck.config_text.as_bytes())?;
        write(MANIFEST, ck.manifest().to_text().as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read(&p).map_err(|e| VnetError::io(&p, e))
        };
        let text = String::from_utf8(read(MANIFEST)?).map_err(|_| bad("not UTF-8".into()))?;
        let manifest = Manifest::parse(&text)?;
        let blob = read(BLOB)?;
        let config_text = String::from_utf8(read(CONFIG)?).map_err(|_| VnetError::Format {
            chunk: CONFIG.into(),
            msg: "not UTF-8".into(),
        })?;
        Self::from_parts(manifest, &blob, config_text)
    }

    pub fn from_parts(manifest: Manifest, blob: &[u8], config_text: String) -> Result<Self> {
        let mut entries = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            let end = e.offset + e.len;
            if end > blob.len() as u64 {
                return Err(VnetError::Integrity(format!(
                    "blob truncated: {} {} needs bytes {}..{}, blob has {}",
                    e.kind,
                    e.name,
                    e.offset,
                    end,
                    blob.len()
                )));
            }
            entries.push(Entry {
                kind: e.kind.clone(),
                name: e.name.clone(),
                shape: e.shape.clone(),
                bytes: blob[e.offset as usize..end as usize].to_vec(),
            });
        }
        if blob.len() as u64 != manifest.blob_len() {
            return Err(VnetError::Integrity(format!(
                "blob has {} bytes, manifest describes {}",
                blob.len(),
                manifest.blob_len()
            )));
        }
        Ok(Checkpoint {
            step: manifest.step,
            dtype: manifest.dtype,
            adam_g_step: manifest.adam_g_step,
            adam_d_step: manifest.adam_d_step,
            lr_g: manifest.lr_g,
            lr_d: manifest.lr_d,
            config_text,
            entries,
        })
    }
}
