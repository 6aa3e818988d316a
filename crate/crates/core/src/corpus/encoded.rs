use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Vocabulary, DOC_SEPARATOR};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    fn tag(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Dev => 1,
            Split::Test => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Split::Train),
            1 => Some(Split::Dev),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

/// Token ids plus the positions where articles start.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedCorpus {
    ids: Vec<u32>,
    boundaries: Vec<usize>,
    split: Split,
}

const MAGIC: &[u8; 4] = b"KVPC";
const VERSION: u32 = 1;

/// Maps tokens to ids; every [`DOC_SEPARATOR`] becomes an article boundary.
pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, split: Split) -> EncodedCorpus {
    let mut ids = Vec::with_capacity(tokens.len());
    let mut boundaries = vec![0];
    for t in tokens {
        let t = t.as_ref();
        if t == DOC_SEPARATOR {
            if boundaries.last() != Some(&ids.len()) {
                boundaries.push(ids.len());
            }
        } else {
            ids.push(vocab.id(t));
        }
    }
    if ids.is_empty() {
        boundaries.clear();
    } else if boundaries.last() == Some(&ids.len()) {
        boundaries.pop();
    }
    EncodedCorpus {
        ids,
        boundaries,
        split,
    }
}

impl EncodedCorpus {
    /// Validates the boundary invariants (sorted, starting at 0, in range).
    pub fn new(ids: Vec<u32>, mut boundaries: Vec<usize>, split: Split) -> Result<Self> {
        if ids.is_empty() {
            boundaries.clear();
        } else if boundaries.first() != Some(&0) {
            boundaries.insert(0, 0);
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("article boundaries must strictly increase".into()));
        }
        if boundaries.last().is_some_and(|&b| b >= ids.len()) {
            return Err(Error::InvalidArgument("article boundary past the end of the corpus".into()));
        }
        Ok(EncodedCorpus {
            ids,
            boundaries,
            split,
        })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn max_id(&self) -> Option<u32> {
        self.ids.iter().copied().max()
    }

    /// Half-open `[start, end)` token spans, one per article.
    pub fn articles(&self) -> Vec<(usize, usize)> {
        let mut spans = Vec::with_capacity(self.boundaries.len());
        for (i, &b) in self.boundaries.iter().enumerate() {
            let end = self.boundaries.get(i + 1).copied().unwrap_or(self.ids.len());
            spans.push((b, end));
        }
        spans
    }

    /// Sub-corpus over `[start, end)`; boundaries are shifted and a boundary
    /// is added at the new start.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.ids.len() {
            return Err(Error::InvalidArgument(format!(
                "slice {start}..{end} of a corpus of {} tokens",
                self.ids.len()
            )));
        }
        let boundaries = self
            .boundaries
            .iter()
            .filter(|&&b| b > start && b < end)
            .map(|&b| b - start)
            .collect();
        EncodedCorpus::new(self.ids[start..end].to_vec(), boundaries, self.split)
    }

    /// Reads a corpus text file, tokenizes it and encodes it.
    pub fn from_text_file(path: &Path, vocab: &Vocabulary, split: Split) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(encode(&crate::corpus::tokenize(&text), vocab, split))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 + 1 + 8 + 4 * self.ids.len() + 8 + 8 * self.boundaries.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.split.tag());
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        for id in &self.ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        out.extend_from_slice(&(self.boundaries.len() as u64).to_le_bytes());
        for b in &self.boundaries {
            out.extend_from_slice(&(*b as u64).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |message: &str| Error::Format {
            what: "encoded corpus",
            message: message.to_string(),
        };
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok_or_else(|| bad("truncated header"))? != MAGIC {
            return Err(bad("bad magic bytes"));
        }
        let version = r.u32().ok_or_else(|| bad("truncated header"))?;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let split = r
            .take(1)
            .and_then(|b| Split::from_tag(b[0]))
            .ok_or_else(|| bad("bad split tag"))?;
        let n = r.u64().ok_or_else(|| bad("truncated header"))? as usize;
        if n > bytes.len() / 4 {
            return Err(bad("token count exceeds file size"));
        }
        let ids = (0..n)
            .map(|_| r.u32())
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("truncated id stream"))?;
        let nb = r.u64().ok_or_else(|| bad("missing boundary table"))? as usize;
        if nb > bytes.len() / 8 {
            return Err(bad("boundary count exceeds file size"));
        }
        let boundaries = (0..nb)
            .map(|_| r.u64().map(|v| v as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("truncated boundary table"))?;
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        EncodedCorpus::new(ids, boundaries, split)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    pub fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}
