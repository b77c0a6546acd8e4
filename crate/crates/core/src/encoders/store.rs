//! Precomputed per-record embedding files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    b"MSEM"
//! version  u16            (1)
//! modality u8             (0 context, 1 sticker text, 2 sticker image)
//! width    u32
//! count    u64
//! count × { id_len u16, id bytes (UTF-8), width × f32 }
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

pub const STORE_MAGIC: &[u8; 4] = b"MSEM";
pub const STORE_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 1 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Context,
    StickerText,
    StickerImage,
}

impl Modality {
    pub fn tag(self) -> u8 {
        match self {
            Self::Context => 0,
            Self::StickerText => 1,
            Self::StickerImage => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Self::Context),
            1 => Some(Self::StickerText),
            2 => Some(Self::StickerImage),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Context => "context",
            Self::StickerText => "sticker_text",
            Self::StickerImage => "sticker_image",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("embedding store format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },
    #[error("embedding store: {0}")]
    Contract(String),
}

/// Record-id keyed vectors of one modality, all of the same width.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    modality: Modality,
    width: usize,
    ids: Vec<String>,
    values: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(modality: Modality, width: usize) -> Result<Self, StoreError> {
        if width == 0 || width > u32::MAX as usize {
            return Err(StoreError::Contract(format!("invalid width {width}")));
        }
        Ok(Self {
            modality,
            width,
            ids: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        })
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: &[f32]) -> Result<(), StoreError> {
        let id = id.into();
        if vector.len() != self.width {
            return Err(StoreError::Contract(format!(
                "vector for {id:?} has width {}, store width is {}",
                vector.len(),
                self.width
            )));
        }
        if id.len() > u16::MAX as usize {
            return Err(StoreError::Contract(format!("id of {} bytes is too long", id.len())));
        }
        if !vector.iter().all(|v| v.is_finite()) {
            return Err(StoreError::Contract(format!("vector for {id:?} is not finite")));
        }
        if self.index.contains_key(&id) {
            return Err(StoreError::Contract(format!("duplicate id {id:?}")));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.values.extend_from_slice(vector);
        Ok(())
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index
            .get(id)
            .map(|&i| &self.values[i * self.width..(i + 1) * self.width])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.values.len() * 4 + self.ids.len() * 8);
        out.extend_from_slice(STORE_MAGIC);
        out.extend_from_slice(&STORE_VERSION.to_le_bytes());
        out.push(self.modality.tag());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        for (i, id) in self.ids.iter().enumerate() {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for v in &self.values[i * self.width..(i + 1) * self.width] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != STORE_MAGIC {
            return Err(StoreError::Format {
                offset: 0,
                msg: format!("bad magic {magic:?}"),
            });
        }
        let version = u16::from_le_bytes(r.array("version")?);
        if version != STORE_VERSION {
            return Err(r.error(2, format!("unsupported version {version}")));
        }
        let tag = r.take(1, "modality")?[0];
        let modality = Modality::from_tag(tag).ok_or_else(|| r.error(1, format!("unknown modality tag {tag}")))?;
        let width = u32::from_le_bytes(r.array("width")?) as usize;
        if width == 0 {
            return Err(r.error(4, "width is zero".into()));
        }
        let count = u64::from_le_bytes(r.array("count")?);
        let mut store = Self::new(modality, width)?;
        let mut vector = vec![0f32; width];
        for n in 0..count {
            let entry_start = r.pos;
            let id_len = u16::from_le_bytes(r.array("id length")?) as usize;
            let id = std::str::from_utf8(r.take(id_len, "id")?)
                .map_err(|e| r.error(id_len, format!("id is not UTF-8: {e}")))?
                .to_string();
            let raw = r.take(width * 4, "vector")?;
            for (v, chunk) in vector.iter_mut().zip(raw.chunks_exact(4)) {
                *v = f32::from_le_bytes(chunk.try_into().unwrap());
            }
            store.insert(id, &vector).map_err(|e| StoreError::Format {
                offset: entry_start,
                msg: format!("entry {n}: {e}"),
            })?;
        }
        if r.pos != bytes.len() {
            return Err(StoreError::Format {
                offset: r.pos,
                msg: format!(
                    "{} trailing bytes after {count} declared vectors",
                    bytes.len() - r.pos
                ),
            });
        }
        Ok(store)
    }

    /// Reads and validates a store file.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| StoreError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    /// Opens a store and checks its modality and width against what the caller needs.
    pub fn open_expecting(path: impl AsRef<Path>, modality: Modality, width: usize) -> Result<Self, StoreError> {
        let store = Self::open(path)?;
        if store.modality != modality {
            return Err(StoreError::Format {
                offset: 6,
                msg: format!("expected {} store, found {}", modality.name(), store.modality.name()),
            });
        }
        if store.width != width {
            return Err(StoreError::Format {
                offset: 7,
                msg: format!("expected width {width}, header says {}", store.width),
            });
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|source| StoreError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], StoreError> {
        if self.bytes.len() - self.pos < n {
            return Err(StoreError::Format {
                offset: self.pos,
                msg: format!(
                    "truncated: {what} needs {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N], StoreError> {
        Ok(self.take(N, what)?.try_into().unwrap())
    }

    /// Error located at the start of the field just read.
    fn error(&self, field_len: usize, msg: String) -> StoreError {
        StoreError::Format {
            offset: self.pos - field_len,
            msg,
        }
    }
}
