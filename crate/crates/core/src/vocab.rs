//! Token inventory with fixed reserved ids.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const BLANK: usize = 0;
pub const UNK: usize = 1;
pub const SOS: usize = 2;
pub const EOS: usize = 3;
pub const N_RESERVED: usize = 4;

const RESERVED: [&str; N_RESERVED] = ["<blank>", "<unk>", "<sos>", "<eos>"];

pub type TokenSequence = Vec<usize>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary whose first four symbols must be the reserved ones.
    pub fn new(symbols: Vec<String>) -> Result<Self> {
        if symbols.len() < N_RESERVED || symbols[..N_RESERVED] != RESERVED {
            return Err(Error::Format {
                path: "<vocab>".into(),
                msg: format!("first symbols must be {RESERVED:?}"),
            });
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() || s.contains(char::is_whitespace) {
                return Err(Error::Format {
                    path: "<vocab>".into(),
                    msg: format!("bad symbol {s:?} at line {}", i + 1),
                });
            }
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::Format {
                    path: "<vocab>".into(),
                    msg: format!("duplicate symbol {s:?}"),
                });
            }
        }
        Ok(Vocabulary { symbols, index })
    }

    /// Reserved symbols followed by `w00, w01, …`.
    pub fn synthetic(n_content: usize) -> Self {
        let mut symbols: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        symbols.extend((0..n_content).map(|i| format!("w{i:02}")));
        Self::new(symbols).expect("synthetic vocabulary is well formed")
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn n_content(&self) -> usize {
        self.len() - N_RESERVED
    }

    pub fn symbol(&self, id: usize) -> Result<&str> {
        self.symbols
            .get(id)
            .map(String::as_str)
            .ok_or(Error::TokenRange { id, size: self.len() })
    }

    /// Unknown symbols map to [`UNK`].
    pub fn id(&self, symbol: &str) -> usize {
        self.index.get(symbol).copied().unwrap_or(UNK)
    }

    pub fn encode(&self, line: &str) -> TokenSequence {
        line.split_whitespace().map(|s| self.id(s)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut out = String::new();
        for (i, &id) in ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(self.symbol(id)?);
        }
        Ok(out)
    }

    pub fn check(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&id| id >= self.len()) {
            Some(&id) => Err(Error::TokenRange { id, size: self.len() }),
            None => Ok(()),
        }
    }

    /// FNV-1a over the newline-joined symbol list.
    pub fn hash(&self) -> u64 {
        fnv1a(self.symbols.join("\n").as_bytes())
    }

    pub fn to_text(&self) -> String {
        self.symbols.iter().fold(String::new(), |mut s, sym| {
            let _ = writeln!(s, "{sym}");
            s
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(text.lines().map(|l| l.trim().to_string()).collect()).map_err(|e| match e {
            Error::Format { msg, .. } => Error::Format {
                path: path.to_path_buf(),
                msg,
            },
            other => other,
        })
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids() {
        let v = Vocabulary::synthetic(3);
        assert_eq!(v.len(), 7);
        assert_eq!(v.id("<blank>"), BLANK);
        assert_eq!(v.id("<unk>"), UNK);
        assert_eq!(v.id("<sos>"), SOS);
        assert_eq!(v.id("<eos>"), EOS);
        assert_eq!(v.id("nope"), UNK);
    }

    #[test]
    fn text_round_trip() {
        let v = Vocabulary::synthetic(5);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        let w = Vocabulary::load(&p).unwrap();
        assert_eq!(v, w);
        assert_eq!(v.hash(), w.hash());
        assert_ne!(v.hash(), Vocabulary::synthetic(6).hash());
        let ids = v.encode("w01 w04 zz");
        assert_eq!(ids, vec![5, 8, UNK]);
        assert_eq!(v.decode(&ids[..2]).unwrap(), "w01 w04");
    }

    #[test]
    fn bad_vocab_rejected() {
        assert!(Vocabulary::new(vec!["a".into()]).is_err());
        let mut s: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        s.push("x".into());
        s.push("x".into());
        assert!(Vocabulary::new(s).is_err());
    }
}
