//! Binary checkpoints for LMs and ASR models.
//!
//! Layout (little-endian): magic `DCPL`, u32 version, u32 tensor count; per
//! tensor: u16 name length + UTF-8 name, u8 dtype (0 = f32, 1 = f64), u8 rank,
//! rank×u32 dims, payload; then u32 CRC32 of everything between the header
//! and the CRC. Text metadata lives in `meta/*` f32 tensors holding one byte
//! per element.

use std::path::Path;

use crate::aed::AedModel;
use crate::config::{attention_from_text, attention_to_text, AsrArch};
use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::search::{replace_internal_lm, AsrRef};
use crate::tensor::{ParamStore, Tensor};
use crate::train::{EpochStats, TrainConfig};
use crate::data::Utterance;
use crate::transducer::TransducerModel;
use crate::vocab::{fnv1a, Vocabulary};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DCPL";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl TensorData {
    fn shape(&self) -> &[usize] {
        match self {
            TensorData::F32(t) => t.shape(),
            TensorData::F64(t) => t.shape(),
        }
    }
}

/// Ordered named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, TensorData)>,
}

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(format_err(self.path, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, t: TensorData) {
        self.entries.push((name.into(), t));
    }

    pub fn push_text(&mut self, key: &str, text: &str) {
        let data: Vec<f32> = text.bytes().map(f32::from).collect();
        let t = Tensor::from_parts(vec![data.len()], data);
        self.push(format!("meta/{key}"), TensorData::F32(t));
    }

    pub fn get(&self, name: &str) -> Option<&TensorData> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn text(&self, key: &str) -> Result<String> {
        let name = format!("meta/{key}");
        match self.get(&name) {
            Some(TensorData::F32(t)) => {
                let bytes: Vec<u8> = t.data().iter().map(|&x| x as u8).collect();
                String::from_utf8(bytes).map_err(|_| Error::Contract(format!("{name} is not UTF-8")))
            }
            _ => Err(Error::Missing(format!("checkpoint has no {name}"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut body = Vec::new();
        for (name, t) in &self.entries {
            body.extend_from_slice(&(name.len() as u16).to_le_bytes());
            body.extend_from_slice(name.as_bytes());
            let (dtype, shape) = match t {
                TensorData::F32(x) => (0u8, x.shape()),
                TensorData::F64(x) => (1u8, x.shape()),
            };
            body.push(dtype);
            body.push(shape.len() as u8);
            for &d in shape {
                body.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match t {
                TensorData::F32(x) => x.data().iter().for_each(|v| body.extend_from_slice(&v.to_le_bytes())),
                TensorData::F64(x) => x.data().iter().for_each(|v| body.extend_from_slice(&v.to_le_bytes())),
            }
        }
        let mut out = Vec::with_capacity(body.len() + 16);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        out.extend_from_slice(&body);
        out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
        out
    }

    /// Parses and CRC-checks checkpoint bytes; `path` is only used in errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(format_err(path, "not a DCPL checkpoint"));
        }
        let body = &bytes[12..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Crc(path.to_path_buf()));
        }
        let mut r = Reader { bytes, pos: 4, path };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(format_err(path, format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut ck = Checkpoint::default();
        for _ in 0..count {
            let n = r.u16()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| format_err(path, "tensor name is not UTF-8"))?;
            let dtype = r.u8()?;
            let rank = r.u8()? as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = dims.iter().product();
            let t = match dtype {
                0 => {
                    let raw = r.take(numel * 4)?;
                    let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
                    TensorData::F32(Tensor::from_parts(dims, data))
                }
                1 => {
                    let raw = r.take(numel * 8)?;
                    let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
                    TensorData::F64(Tensor::from_parts(dims, data))
                }
                d => return Err(format_err(path, format!("tensor {name}: unknown dtype {d}"))),
            };
            ck.push(name, t);
        }
        if r.pos != bytes.len() - 4 {
            return Err(format_err(path, "trailing bytes before CRC"));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes, path)
    }

    /// FNV-1a of the serialised bytes, as 16 hex digits.
    pub fn hash_hex(&self) -> String {
        format!("{:016x}", fnv1a(&self.to_bytes()))
    }

    fn push_store(&mut self, prefix: &str, store: &ParamStore<f32>) {
        for p in store.iter() {
            self.push(format!("{prefix}{}", p.name), TensorData::F32((*p.value).clone()));
        }
    }

    /// Overwrites every parameter of `store` from `{prefix}{name}` tensors.
    fn fill_store(&self, prefix: &str, store: &mut ParamStore<f32>) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = format!("{prefix}{}", store.get(id).name);
            match self.get(&name) {
                Some(TensorData::F32(t)) => store.set_value(id, t.clone())?,
                Some(other) => {
                    return Err(Error::Contract(format!("{name}: expected f32 of shape {:?}, found {:?}", store.value(id).shape(), other.shape())))
                }
                None => return Err(Error::Missing(format!("checkpoint has no tensor {name}"))),
            }
        }
        let expected = self
            .entries
            .iter()
            .filter(|(n, _)| n.starts_with(prefix) && !n.starts_with("meta/"))
            .count();
        if expected != store.len() {
            return Err(Error::Contract(format!(
                "checkpoint holds {expected} '{prefix}' tensors, model has {}",
                store.len()
            )));
        }
        Ok(())
    }
}

fn push_lm_meta(ck: &mut Checkpoint, prefix: &str, lm: &LanguageModel) {
    ck.push_text(&format!("{prefix}vocab"), &lm.vocab.to_text());
    ck.push_text(&format!("{prefix}vocab_hash"), &format!("{:016x}", lm.vocab.hash()));
    ck.push_text(&format!("{prefix}domain_tag"), &lm.domain_tag);
    ck.push_text(&format!("{prefix}lineage"), &format!("{:016x}", lm.lineage));
    ck.push_text(&format!("{prefix}lm_config"), &attention_to_text(&lm.cfg));
}

fn hex(ck: &Checkpoint, key: &str) -> Result<u64> {
    let s = ck.text(key)?;
    u64::from_str_radix(s.trim(), 16).map_err(|_| Error::Contract(format!("meta/{key} is not hex")))
}

fn vocab_from(ck: &Checkpoint, prefix: &str) -> Result<Vocabulary> {
    let v = Vocabulary::new(ck.text(&format!("{prefix}vocab"))?.lines().map(String::from).collect())?;
    let stored = hex(ck, &format!("{prefix}vocab_hash"))?;
    if stored != v.hash() {
        return Err(Error::IncompatibleLm(format!("stored vocabulary hash {stored:016x} does not match its symbols")));
    }
    Ok(v)
}

fn lm_from(ck: &Checkpoint, prefix: &str, tensor_prefix: &str) -> Result<LanguageModel> {
    let vocab = vocab_from(ck, prefix)?;
    let cfg = attention_from_text(&ck.text(&format!("{prefix}lm_config"))?)?;
    let mut lm = LanguageModel::new(vocab, cfg, 0, &ck.text(&format!("{prefix}domain_tag"))?)?;
    ck.fill_store(tensor_prefix, &mut lm.store)?;
    lm.lineage = hex(ck, &format!("{prefix}lineage"))?;
    Ok(lm)
}

pub fn lm_to_checkpoint(lm: &LanguageModel) -> Checkpoint {
    let mut ck = Checkpoint::default();
    ck.push_text("arch", "lm");
    push_lm_meta(&mut ck, "", lm);
    ck.push_store("", &lm.store);
    ck
}

pub fn lm_from_checkpoint(ck: &Checkpoint) -> Result<LanguageModel> {
    let arch = ck.text("arch")?;
    if arch != "lm" {
        return Err(Error::Contract(format!("checkpoint holds a '{arch}' model, not an LM")));
    }
    lm_from(ck, "", "")
}

pub fn save_lm(lm: &LanguageModel, path: &Path) -> Result<()> {
    lm_to_checkpoint(lm).save(path)
}

pub fn load_lm(path: &Path) -> Result<LanguageModel> {
    lm_from_checkpoint(&Checkpoint::load(path)?)
}

/// Either trained ASR model family.
#[derive(Clone, Debug)]
pub enum AsrModel {
    Aed(AedModel<f32>),
    Transducer(TransducerModel<f32>),
}

impl AsrModel {
    /// Builds an untrained model; decoupled and preformer variants need `lm`.
    pub fn new(arch: &AsrArch, vocab: Vocabulary, lm: Option<LanguageModel>, seed: u64) -> Result<Self> {
        Ok(match arch {
            AsrArch::Aed(c) => AsrModel::Aed(AedModel::new(c.clone(), vocab, lm, seed)?),
            AsrArch::Transducer(c) => AsrModel::Transducer(TransducerModel::new(c.clone(), vocab, lm, seed)?),
        })
    }

    pub fn arch(&self) -> AsrArch {
        match self {
            AsrModel::Aed(m) => AsrArch::Aed(m.cfg.clone()),
            AsrModel::Transducer(m) => AsrArch::Transducer(m.cfg.clone()),
        }
    }

    pub fn as_ref(&self) -> AsrRef<'_, f32> {
        match self {
            AsrModel::Aed(m) => AsrRef::Aed(m),
            AsrModel::Transducer(m) => AsrRef::Transducer(m),
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        match self {
            AsrModel::Aed(m) => &m.vocab,
            AsrModel::Transducer(m) => &m.vocab,
        }
    }

    pub fn internal_lm(&self) -> Option<&LanguageModel> {
        match self {
            AsrModel::Aed(m) => m.lm.as_ref(),
            AsrModel::Transducer(m) => m.lm.as_ref(),
        }
    }

    pub fn is_decoupled(&self) -> bool {
        match self {
            AsrModel::Aed(m) => m.is_decoupled(),
            AsrModel::Transducer(m) => m.is_decoupled(),
        }
    }

    pub fn fit(&mut self, data: &[Utterance], tc: &TrainConfig) -> Result<Vec<EpochStats>> {
        match self {
            AsrModel::Aed(m) => m.fit(data, tc),
            AsrModel::Transducer(m) => m.fit(data, tc),
        }
    }

    /// Swaps the internal LM, returning the previous one.
    pub fn replace_internal_lm(&mut self, lm: LanguageModel) -> Result<LanguageModel> {
        match self {
            AsrModel::Aed(m) => replace_internal_lm(m, lm),
            AsrModel::Transducer(m) => replace_internal_lm(m, lm),
        }
    }

    fn parts(&self) -> (&ParamStore<f32>, Option<u64>) {
        match self {
            AsrModel::Aed(m) => (&m.store, m.source_lineage),
            AsrModel::Transducer(m) => (&m.store, m.source_lineage),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        let arch = self.arch();
        ck.push_text("arch", if matches!(arch, AsrArch::Aed(_)) { "aed" } else { "transducer" });
        ck.push_text("config", &arch.to_text());
        ck.push_text("vocab", &self.vocab().to_text());
        ck.push_text("vocab_hash", &format!("{:016x}", self.vocab().hash()));
        let (store, lineage) = self.parts();
        if let Some(l) = lineage {
            ck.push_text("source_lineage", &format!("{l:016x}"));
        }
        if let Some(lm) = self.internal_lm() {
            push_lm_meta(&mut ck, "ilm_", lm);
            ck.push_store("ilm/", &lm.store);
        }
        ck.push_store("asr/", store);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<AsrModel> {
        let kind = ck.text("arch")?;
        if kind != "aed" && kind != "transducer" {
            return Err(Error::Contract(format!("checkpoint holds a '{kind}' model, not an ASR model")));
        }
        let arch = AsrArch::from_text(&ck.text("config")?)?;
        let vocab = vocab_from(ck, "")?;
        let lm = if ck.get("meta/ilm_vocab").is_some() {
            Some(lm_from(ck, "ilm_", "ilm/")?)
        } else {
            None
        };
        // Rebuild with the LM the model was trained with, then swap if needed.
        let source_lineage = match ck.get("meta/source_lineage") {
            Some(_) => Some(hex(ck, "source_lineage")?),
            None => None,
        };
        let mut m = AsrModel::new(&arch, vocab, lm, 0)?;
        match &mut m {
            AsrModel::Aed(a) => {
                ck.fill_store("asr/", &mut a.store)?;
                a.source_lineage = source_lineage;
            }
            AsrModel::Transducer(t) => {
                ck.fill_store("asr/", &mut t.store)?;
                t.source_lineage = source_lineage;
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<AsrModel> {
        AsrModel::from_checkpoint(&Checkpoint::load(path)?)
    }
}
