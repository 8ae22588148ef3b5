//! Utterances and the binary dataset format.
//!
//! Layout (little-endian): magic `DCE1`, u32 version, u32 utterance count;
//! per utterance: u32 id length + UTF-8 id, u32 N + N×u32 token ids, u32 T,
//! u32 D, T·D×f32 frames.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::vocab::Vocabulary;

pub const DATASET_MAGIC: &[u8; 4] = b"DCE1";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub tokens: Vec<usize>,
    /// `[T×D]` feature frames.
    pub frames: Tensor<f32>,
    pub domain: String,
}

pub fn write_dataset(w: &mut impl Write, utts: &[Utterance]) -> std::io::Result<()> {
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    w.write_all(&(utts.len() as u32).to_le_bytes())?;
    for u in utts {
        w.write_all(&(u.id.len() as u32).to_le_bytes())?;
        w.write_all(u.id.as_bytes())?;
        w.write_all(&(u.tokens.len() as u32).to_le_bytes())?;
        for &t in &u.tokens {
            w.write_all(&(t as u32).to_le_bytes())?;
        }
        w.write_all(&(u.frames.rows() as u32).to_le_bytes())?;
        w.write_all(&(u.frames.cols() as u32).to_le_bytes())?;
        for &x in u.frames.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                msg: format!("truncated at byte {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Parses a dataset; `domain` is attached to every utterance (the format
/// does not store it).
pub fn parse_dataset(bytes: &[u8], path: &Path, domain: &str) -> Result<Vec<Utterance>> {
    let bad = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    let mut c = Cursor { buf: bytes, pos: 0, path };
    if c.take(4)? != DATASET_MAGIC {
        return Err(bad("bad magic (expected DCE1)".into()));
    }
    let version = c.u32()?;
    if version != DATASET_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n = c.u32()? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let len = c.u32()? as usize;
        let id = String::from_utf8(c.take(len)?.to_vec()).map_err(|_| bad("id is not UTF-8".into()))?;
        let n_tok = c.u32()? as usize;
        let mut tokens = Vec::with_capacity(n_tok);
        for _ in 0..n_tok {
            tokens.push(c.u32()? as usize);
        }
        let t = c.u32()? as usize;
        let d = c.u32()? as usize;
        let raw = c.take(t * d * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        let frames = Tensor::new(vec![t, d], data).map_err(|e| bad(format!("utterance {id}: {e}")))?;
        out.push(Utterance {
            id,
            tokens,
            frames,
            domain: domain.to_string(),
        });
    }
    if c.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(out)
}

pub fn save_dataset(path: &Path, utts: &[Utterance]) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(&mut buf, utts).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path, domain: &str) -> Result<Vec<Utterance>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    parse_dataset(&bytes, path, domain)
}

/// Text corpus: one sentence per line, symbols separated by spaces.
pub fn save_text_corpus(path: &Path, vocab: &Vocabulary, corpus: &[Vec<usize>]) -> Result<()> {
    let mut s = String::new();
    for line in corpus {
        s.push_str(&vocab.decode(line)?);
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Reads a text corpus, skipping blank lines; unknown symbols map to unk.
pub fn load_text_corpus(path: &Path, vocab: &Vocabulary) -> Result<Vec<Vec<usize>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| vocab.encode(l))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Utterance> {
        vec![
            Utterance {
                id: "u0".into(),
                tokens: vec![4, 5],
                frames: Tensor::from_fn(&[4, 2], |i| i as f32 * 0.5 - 1.0),
                domain: "src".into(),
            },
            Utterance {
                id: "u1".into(),
                tokens: vec![],
                frames: Tensor::from_fn(&[1, 2], |i| i as f32),
                domain: "src".into(),
            },
        ]
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.bin");
        save_dataset(&p, &sample()).unwrap();
        assert_eq!(load_dataset(&p, "src").unwrap(), sample());
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"DCE1");
        assert!(parse_dataset(&bytes[..bytes.len() - 1], &p, "src").is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(parse_dataset(&bad, &p, "src").is_err());
    }
}
