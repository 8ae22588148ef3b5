//! Flat `key = value` run configuration with per-command key sets.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::aed::{AedConfig, AedVariant};
use crate::error::{Error, Result};
use crate::eval::{AcousticSpec, BenchmarkSpec, ExperimentConfig, Family, SplitSizes};
use crate::nn::{AttentionConfig, MaskKind};
use crate::search::{DecodeConfig, TransducerMode};
use crate::tensor::AdamConfig;
use crate::train::TrainConfig;
use crate::transducer::{PredKind, TransducerConfig, TransducerVariant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Command {
    GenData,
    TrainLm,
    TrainAsr,
    Decode,
    Score,
    Experiment,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::TrainLm => "train-lm",
            Command::TrainAsr => "train-asr",
            Command::Decode => "decode",
            Command::Score => "score",
            Command::Experiment => "experiment",
        }
    }
}

use Command::*;

const DATA: &[Command] = &[GenData, Experiment];
const MODEL: &[Command] = &[TrainLm, TrainAsr, Experiment];
const ASR: &[Command] = &[TrainAsr, Experiment];
const TRAIN: &[Command] = &[TrainLm, TrainAsr, Experiment];
const DECODE: &[Command] = &[Decode, Experiment];

pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
    pub commands: &'static [Command],
}

macro_rules! keys {
    ($($key:literal = $def:literal, $cmds:expr, $help:literal;)*) => {
        &[$(KeySpec { key: $key, default: $def, help: $help, commands: $cmds },)*]
    };
}

/// Every recognised key with its default.
pub const KEYS: &[KeySpec] = keys! {
    "seed" = "0", &[GenData, TrainLm, TrainAsr], "master seed";
    // data
    "out_dir" = "out", &[GenData, Experiment], "output directory";
    "n_train" = "2000", DATA, "training utterances per domain";
    "n_dev" = "200", DATA, "dev utterances per domain";
    "n_test" = "200", DATA, "test utterances per domain";
    "n_text" = "10000", DATA, "text-only sentences per domain";
    "n_content" = "20", DATA, "content tokens";
    "n_pairs" = "6", DATA, "confusable pairs";
    "n_flip" = "4", DATA, "flip tokens";
    "overlap" = "0.52", DATA, "acoustic overlap of confusable pairs";
    "sigma" = "0.3", DATA, "frame noise";
    "feat_dim" = "16", DATA, "feature dimension";
    "min_dur" = "2", DATA, "min frames per token";
    "max_dur" = "5", DATA, "max frames per token";
    "min_len" = "3", DATA, "min tokens per sentence";
    "max_len" = "15", DATA, "max tokens per sentence";
    "stop" = "0.15", DATA, "stop probability";
    "pair_strength" = "0.9", DATA, "probability of the preferred pair member";
    "flip_mass_source" = "0.03", DATA, "flip-token mass in source rows";
    "flip_mass_target" = "0.45", DATA, "flip-token mass in target rows";
    "target_keep" = "1.0", DATA, "share of each target row kept from the source row";
    "source_neutral" = "true", DATA, "source pair choice is uniform after flip tokens";
    "concentration" = "0.5", DATA, "Dirichlet concentration of chain rows";
    "min_row_tv" = "0.3", DATA, "required mean row total variation";
    "grammar_seed" = "11", DATA, "seed of the chain matrices";
    "anchor_seed" = "7", DATA, "seed of the acoustic anchors";
    // files
    "text" = "", &[TrainLm], "text corpus";
    "vocab" = "", &[TrainLm, TrainAsr, Score], "vocabulary file";
    "mode" = "source", &[TrainLm], "source | finetune";
    "init" = "", &[TrainLm], "LM checkpoint to fine-tune";
    "domain_tag" = "source", &[TrainLm], "domain tag stored in the LM";
    "train" = "", &[TrainAsr], "training dataset";
    "lm" = "", &[TrainAsr], "internal LM checkpoint";
    "out" = "", &[TrainLm, TrainAsr, Decode, Score], "output path";
    "model" = "", &[Decode], "ASR checkpoint";
    "data" = "", &[Decode], "dataset to decode";
    "replace_ilm" = "", &[Decode], "LM checkpoint replacing the internal LM";
    "sf_lm" = "", &[Decode], "shallow-fusion LM checkpoint";
    "refs" = "", &[Score], "reference dataset";
    "hyps" = "", &[Score], "hypothesis TSV";
    "pair" = "", &[Score], "second hypothesis TSV for the matched-pairs test";
    // model
    "d_model" = "64", MODEL, "model width";
    "heads" = "4", MODEL, "attention heads";
    "d_ff" = "128", MODEL, "feed-forward width";
    "n_layers" = "2", MODEL, "layers per stack";
    "dropout" = "0.1", MODEL, "dropout";
    "arch" = "aed", &[TrainAsr], "aed | transducer";
    "variant" = "decoupled", &[TrainAsr], "standard | preformer | decoupled";
    "pred" = "transformer", &[TrainAsr], "standard transducer prediction network: stateless | transformer";
    "mask" = "offline", &[TrainAsr], "offline | chunk";
    "chunk" = "8", ASR, "chunk size in frames";
    "d_joint" = "64", ASR, "joint network width";
    "gamma" = "0.3", ASR, "AED CTC weight";
    "eta" = "0.5", ASR, "combined-logit loss weight";
    "beta" = "0.5", &[TrainAsr, Experiment], "AED LM logit weight";
    "beta" = "", &[Decode], "AED LM logit weight override; empty keeps the model's";
    "lambda" = "0.3", ASR, "transducer CTC weight";
    "label_smoothing" = "0.1", ASR, "AED label smoothing";
    "double_blank" = "true", ASR, "double the blank logit";
    "swap_embeddings" = "false", ASR, "replace embeddings together with the LM";
    "cross_ff" = "true", ASR, "feed-forward in cross layers";
    // training
    "epochs" = "10", ASR, "ASR epochs";
    "lm_epochs" = "3", &[TrainLm, Experiment], "LM epochs from scratch";
    "finetune_epochs" = "1", &[TrainLm, Experiment], "LM fine-tuning epochs";
    "batch_size" = "32", TRAIN, "batch size";
    "lr" = "0.002", TRAIN, "peak learning rate";
    "warmup" = "50", TRAIN, "warmup steps";
    "clip_norm" = "5", TRAIN, "gradient norm clip (0 disables)";
    // decoding
    "beam" = "4", DECODE, "beam size";
    "mu" = "0.3", DECODE, "CTC weight in joint decoding";
    "sf_weight" = "0", &[Decode], "shallow-fusion weight";
    "max_len_ratio" = "1.0", DECODE, "max output tokens per frame";
    "emission_cap" = "10", DECODE, "max emissions per frame";
    "search" = "beam", DECODE, "transducer search: beam | greedy";
    "workers" = "0", &[Decode, Experiment], "decode threads (0 = all cores)";
    // experiment
    "seeds" = "0,1,2", &[Experiment], "model seeds";
    "families" = "aed,transducer,transducer-chunk,aed-std,transducer-std,transducer-std-chunk", &[Experiment], "model families";
    "fusion_weight" = "0.2", &[Experiment], "shallow-fusion weight of the +SF conditions";
};

fn spec(key: &str, command: Command) -> Option<&'static KeySpec> {
    KEYS.iter()
        .find(|k| k.key == key && k.commands.contains(&command))
        .or_else(|| KEYS.iter().find(|k| k.key == key))
}

/// Resolved configuration of one command.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    values: BTreeMap<String, String>,
}

fn parse_line(line: &str, n: usize) -> Result<Option<(String, String)>> {
    let line = match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
    .trim();
    if line.is_empty() {
        return Ok(None);
    }
    let (k, v) = line
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("line {n}: expected key = value")))?;
    Ok(Some((k.trim().to_string(), v.trim().to_string())))
}

impl RunConfig {
    /// Defaults for `command`.
    pub fn new(command: Command) -> Self {
        let values = KEYS
            .iter()
            .filter(|k| k.commands.contains(&command))
            .map(|k| (k.key.to_string(), k.default.to_string()))
            .collect();
        RunConfig { command, values }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match spec(key, self.command) {
            Some(s) if s.commands.contains(&self.command) => {
                self.values.insert(key.to_string(), value.to_string());
                Ok(())
            }
            Some(_) => Err(Error::Config(format!("key '{key}' does not apply to {}", self.command.name()))),
            None => Err(Error::Config(format!("unknown key '{key}'"))),
        }
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            if let Some((k, v)) = parse_line(line, i + 1)? {
                self.set(&k, &v)?;
            }
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Defaults, then the file, then `overrides` in order.
    pub fn resolve(command: Command, file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::new(command);
        if let Some(p) = file {
            cfg.apply_file(p)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Resolved config as `key = value` lines, sorted by key.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn raw(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("key '{key}' is not available to {}", self.command.name())))
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key)?;
        v.parse()
            .map_err(|_| Error::Config(format!("key '{key}': cannot parse '{v}'")))
    }

    /// Value of a path key; empty means unset.
    pub fn path(&self, key: &str) -> Result<Option<&Path>> {
        let v = self.raw(key)?;
        Ok(if v.is_empty() { None } else { Some(Path::new(v)) })
    }

    pub fn required_path(&self, key: &str) -> Result<&Path> {
        self.path(key)?
            .ok_or_else(|| Error::Missing(format!("{} needs '{key}'", self.command.name())))
    }

    pub fn list(&self, key: &str) -> Result<Vec<String>> {
        Ok(self
            .raw(key)?
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect())
    }

    pub fn attention(&self) -> Result<AttentionConfig> {
        let a = AttentionConfig {
            d_model: self.get("d_model")?,
            heads: self.get("heads")?,
            d_ff: self.get("d_ff")?,
            n_layers: self.get("n_layers")?,
            dropout: self.get("dropout")?,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn benchmark(&self) -> Result<BenchmarkSpec> {
        Ok(BenchmarkSpec {
            n_content: self.get("n_content")?,
            n_pairs: self.get("n_pairs")?,
            n_flip: self.get("n_flip")?,
            flip_mass_source: self.get("flip_mass_source")?,
            flip_mass_target: self.get("flip_mass_target")?,
            source_neutral: self.get("source_neutral")?,
            target_keep: self.get("target_keep")?,
            overlap: self.get("overlap")?,
            pair_strength: self.get("pair_strength")?,
            stop: self.get("stop")?,
            min_len: self.get("min_len")?,
            max_len: self.get("max_len")?,
            concentration: self.get("concentration")?,
            min_row_tv: self.get("min_row_tv")?,
            acoustic: AcousticSpec {
                dim: self.get("feat_dim")?,
                sigma: self.get("sigma")?,
                min_dur: self.get("min_dur")?,
                max_dur: self.get("max_dur")?,
                anchor_seed: self.get("anchor_seed")?,
            },
            grammar_seed: self.get("grammar_seed")?,
        })
    }

    pub fn sizes(&self) -> Result<SplitSizes> {
        Ok(SplitSizes {
            train: self.get("n_train")?,
            dev: self.get("n_dev")?,
            test: self.get("n_test")?,
            text: self.get("n_text")?,
        })
    }

    pub fn train_config(&self, epochs_key: &str, seed: u64) -> Result<TrainConfig> {
        let clip: f64 = self.get("clip_norm")?;
        Ok(TrainConfig {
            epochs: self.get(epochs_key)?,
            batch_size: self.get("batch_size")?,
            adam: AdamConfig {
                lr: self.get("lr")?,
                warmup: self.get("warmup")?,
                clip_norm: if clip > 0.0 { Some(clip) } else { None },
                ..AdamConfig::default()
            },
            seed,
            dropout: self.get("dropout")?,
        })
    }

    fn mask(&self, kind: &str) -> Result<MaskKind> {
        match kind {
            "offline" => Ok(MaskKind::None),
            "chunk" => Ok(MaskKind::Chunk(self.get("chunk")?)),
            other => Err(Error::Config(format!("mask '{other}' is not offline or chunk"))),
        }
    }

    /// ASR architecture from `arch`, `variant`, `pred` and `mask`.
    pub fn asr_arch(&self) -> Result<AsrArch> {
        let variant = self.raw("variant")?;
        let mask = self.mask(self.raw("mask")?)?;
        match self.raw("arch")? {
            "aed" => {
                let v = match variant {
                    "standard" => AedVariant::Standard,
                    "preformer" => AedVariant::Preformer,
                    "decoupled" => AedVariant::Decoupled,
                    other => return Err(Error::Config(format!("unknown AED variant '{other}'"))),
                };
                Ok(AsrArch::Aed(self.aed_config(v, mask)?))
            }
            "transducer" => {
                let v = match (variant, self.raw("pred")?) {
                    ("decoupled", _) => TransducerVariant::Decoupled,
                    ("standard", "stateless") => TransducerVariant::Standard(PredKind::Stateless),
                    ("standard", "transformer") => TransducerVariant::Standard(PredKind::Transformer),
                    (v, p) => return Err(Error::Config(format!("unsupported transducer variant '{v}' with pred '{p}'"))),
                };
                Ok(AsrArch::Transducer(self.transducer_config(v, mask)?))
            }
            other => Err(Error::Config(format!("unknown arch '{other}'"))),
        }
    }

    pub fn aed_config(&self, variant: AedVariant, mask: MaskKind) -> Result<AedConfig> {
        let c = AedConfig {
            attn: self.attention()?,
            d_feat: self.get("feat_dim").unwrap_or(16),
            variant,
            mask,
            gamma: self.get("gamma")?,
            eta: self.get("eta")?,
            beta: self.get("beta")?,
            label_smoothing: self.get("label_smoothing")?,
            cross_ff: self.get("cross_ff")?,
            swap_embeddings: self.get("swap_embeddings")?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn transducer_config(&self, variant: TransducerVariant, mask: MaskKind) -> Result<TransducerConfig> {
        let c = TransducerConfig {
            attn: self.attention()?,
            d_feat: self.get("feat_dim").unwrap_or(16),
            d_joint: self.get("d_joint")?,
            variant,
            mask,
            lambda: self.get("lambda")?,
            eta: self.get("eta")?,
            double_blank: self.get("double_blank")?,
            swap_embeddings: self.get("swap_embeddings")?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn decode_config(&self) -> Result<DecodeConfig> {
        let sf_weight = if self.command == Decode { self.get("sf_weight")? } else { 0.0 };
        let c = DecodeConfig {
            beam: self.get("beam")?,
            mu: self.get("mu")?,
            sf_weight,
            max_len_ratio: self.get("max_len_ratio")?,
            emission_cap: self.get("emission_cap")?,
            ..DecodeConfig::default()
        };
        c.validate()?;
        Ok(c)
    }

    /// Family names look like `aed`, `aed-std`, `aed-preformer`,
    /// `transducer-std`, `transducer-stateless`, each optionally with a
    /// `-chunk` suffix.
    pub fn family(&self, name: &str) -> Result<Family> {
        let mut parts = name.split('-');
        let arch = parts.next().unwrap_or("");
        let mut kind = "decoupled";
        let mut mask = MaskKind::None;
        for p in parts {
            match p {
                "chunk" => mask = self.mask("chunk")?,
                "std" | "preformer" | "stateless" => kind = p,
                _ => return Err(Error::Config(format!("unknown family '{name}'"))),
            }
        }
        let arch = match (arch, kind) {
            ("aed", "decoupled") => AsrArch::Aed(self.aed_config(AedVariant::Decoupled, mask)?),
            ("aed", "std") => AsrArch::Aed(self.aed_config(AedVariant::Standard, mask)?),
            ("aed", "preformer") => AsrArch::Aed(self.aed_config(AedVariant::Preformer, mask)?),
            ("transducer", "decoupled") => AsrArch::Transducer(self.transducer_config(TransducerVariant::Decoupled, mask)?),
            ("transducer", "std") => {
                AsrArch::Transducer(self.transducer_config(TransducerVariant::Standard(PredKind::Transformer), mask)?)
            }
            ("transducer", "stateless") => {
                AsrArch::Transducer(self.transducer_config(TransducerVariant::Standard(PredKind::Stateless), mask)?)
            }
            _ => return Err(Error::Config(format!("unknown family '{name}'"))),
        };
        Ok(Family {
            name: name.to_string(),
            arch,
        })
    }

    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let seeds = self
            .list("seeds")?
            .iter()
            .map(|s| s.parse().map_err(|_| Error::Config(format!("seed '{s}' is not an integer"))))
            .collect::<Result<Vec<u64>>>()?;
        let families = self.list("families")?.iter().map(|f| self.family(f)).collect::<Result<Vec<_>>>()?;
        let bench = self.benchmark()?;
        bench.domains()?;
        Ok(ExperimentConfig {
            bench,
            sizes: self.sizes()?,
            seeds,
            families,
            lm_attn: self.attention()?,
            lm_train: self.train_config("lm_epochs", 0)?,
            lm_finetune: self.train_config("finetune_epochs", 0)?,
            asr_train: self.train_config("epochs", 0)?,
            decode: self.decode_config()?,
            transducer_mode: self.transducer_mode()?,
            fusion_weight: self.get("fusion_weight")?,
            workers: self.get("workers")?,
        })
    }

    pub fn transducer_mode(&self) -> Result<TransducerMode> {
        match self.raw("search")? {
            "beam" => Ok(TransducerMode::Beam),
            "greedy" => Ok(TransducerMode::Greedy),
            other => Err(Error::Config(format!("unknown search '{other}'"))),
        }
    }
}

/// A fully specified ASR architecture.
#[derive(Clone, Debug)]
pub enum AsrArch {
    Aed(AedConfig),
    Transducer(TransducerConfig),
}

fn mask_text(m: MaskKind) -> (String, Option<usize>) {
    match m {
        MaskKind::Chunk(c) => ("chunk".into(), Some(c)),
        MaskKind::Causal => ("causal".into(), None),
        MaskKind::None => ("offline".into(), None),
    }
}

fn attn_lines(a: &AttentionConfig, out: &mut Vec<(String, String)>) {
    for (k, v) in [
        ("d_model", a.d_model.to_string()),
        ("heads", a.heads.to_string()),
        ("d_ff", a.d_ff.to_string()),
        ("n_layers", a.n_layers.to_string()),
        ("dropout", a.dropout.to_string()),
    ] {
        out.push((k.into(), v));
    }
}

/// `key = value` description of an attention config, readable by
/// [`attention_from_text`].
pub fn attention_to_text(a: &AttentionConfig) -> String {
    let mut kv = Vec::new();
    attn_lines(a, &mut kv);
    kv.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

pub fn attention_from_text(text: &str) -> Result<AttentionConfig> {
    let mut cfg = RunConfig::new(TrainLm);
    cfg.apply_text(text)?;
    cfg.attention()
}

impl AsrArch {
    /// `key = value` lines that rebuild the same architecture through
    /// [`AsrArch::from_text`].
    pub fn to_text(&self) -> String {
        let mut kv: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: String| kv.push((k.to_string(), v));
        let (attn, mask, d_feat) = match self {
            AsrArch::Aed(c) => {
                push("arch", "aed".into());
                let v = match c.variant {
                    AedVariant::Standard => "standard",
                    AedVariant::Preformer => "preformer",
                    AedVariant::Decoupled => "decoupled",
                };
                push("variant", v.into());
                push("gamma", c.gamma.to_string());
                push("eta", c.eta.to_string());
                push("beta", c.beta.to_string());
                push("label_smoothing", c.label_smoothing.to_string());
                push("cross_ff", c.cross_ff.to_string());
                push("swap_embeddings", c.swap_embeddings.to_string());
                (&c.attn, c.mask, c.d_feat)
            }
            AsrArch::Transducer(c) => {
                push("arch", "transducer".into());
                let (v, p) = match c.variant {
                    TransducerVariant::Decoupled => ("decoupled", "stateless"),
                    TransducerVariant::Standard(PredKind::Stateless) => ("standard", "stateless"),
                    TransducerVariant::Standard(PredKind::Transformer) => ("standard", "transformer"),
                };
                push("variant", v.into());
                push("pred", p.into());
                push("d_joint", c.d_joint.to_string());
                push("lambda", c.lambda.to_string());
                push("eta", c.eta.to_string());
                push("double_blank", c.double_blank.to_string());
                push("swap_embeddings", c.swap_embeddings.to_string());
                (&c.attn, c.mask, c.d_feat)
            }
        };
        let (m, chunk) = mask_text(mask);
        push("mask", m);
        if let Some(c) = chunk {
            push("chunk", c.to_string());
        }
        push("feat_dim", d_feat.to_string());
        attn_lines(attn, &mut kv);
        kv.sort();
        kv.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<AsrArch> {
        let mut cfg = RunConfig::new(TrainAsr);
        let mut feat = None;
        for (i, line) in text.lines().enumerate() {
            if let Some((k, v)) = parse_line(line, i + 1)? {
                if k == "feat_dim" {
                    feat = Some(v);
                } else {
                    cfg.set(&k, &v)?;
                }
            }
        }
        let feat: usize = match feat {
            Some(f) => f.parse().map_err(|_| Error::Config(format!("feat_dim '{f}'")))?,
            None => 16,
        };
        Ok(match cfg.asr_arch()? {
            AsrArch::Aed(c) => AsrArch::Aed(AedConfig { d_feat: feat, ..c }),
            AsrArch::Transducer(c) => AsrArch::Transducer(TransducerConfig { d_feat: feat, ..c }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_file_and_flags_layer_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        std::fs::write(&p, "# comment\nbeam = 7   # trailing\n\nmu=0.5\n").unwrap();
        let cfg = RunConfig::resolve(Decode, Some(&p), &[("beam".into(), "3".into())]).unwrap();
        assert_eq!(cfg.get::<usize>("beam").unwrap(), 3);
        assert_eq!(cfg.get::<f64>("mu").unwrap(), 0.5);
        assert_eq!(cfg.get::<usize>("emission_cap").unwrap(), 10);
        assert!(cfg.to_text().contains("beam = 3\n"));
    }

    #[test]
    fn unknown_or_misplaced_keys_are_rejected() {
        let mut cfg = RunConfig::new(Decode);
        assert!(matches!(cfg.set("bogus", "1"), Err(Error::Config(_))));
        assert!(matches!(cfg.set("n_train", "1"), Err(Error::Config(_))));
        assert!(cfg.apply_text("no equals sign").is_err());
        assert!(RunConfig::new(Experiment).get::<usize>("beam").is_ok());
    }

    #[test]
    fn every_key_parses_at_its_default() {
        for cmd in [GenData, TrainLm, TrainAsr, Decode, Score, Experiment] {
            let cfg = RunConfig::new(cmd);
            if DATA.contains(&cmd) {
                cfg.benchmark().unwrap().domains().unwrap();
                cfg.sizes().unwrap();
            }
            if MODEL.contains(&cmd) {
                cfg.attention().unwrap();
            }
            if cmd == TrainAsr {
                cfg.asr_arch().unwrap();
            }
            if cmd == Experiment {
                let e = cfg.experiment().unwrap();
                assert_eq!(e.seeds, vec![0, 1, 2]);
                assert_eq!(e.families.len(), 6);
            }
            if DECODE.contains(&cmd) {
                cfg.decode_config().unwrap();
                cfg.transducer_mode().unwrap();
            }
        }
    }

    #[test]
    fn architecture_text_round_trips() {
        let mut cfg = RunConfig::new(TrainAsr);
        for (arch, variant, pred, mask) in [
            ("aed", "decoupled", "transformer", "offline"),
            ("aed", "preformer", "transformer", "chunk"),
            ("aed", "standard", "transformer", "offline"),
            ("transducer", "decoupled", "stateless", "chunk"),
            ("transducer", "standard", "stateless", "offline"),
            ("transducer", "standard", "transformer", "chunk"),
        ] {
            cfg.set("arch", arch).unwrap();
            cfg.set("variant", variant).unwrap();
            cfg.set("pred", pred).unwrap();
            cfg.set("mask", mask).unwrap();
            cfg.set("beta", "0.25").unwrap();
            let a = cfg.asr_arch().unwrap();
            let text = a.to_text();
            assert_eq!(AsrArch::from_text(&text).unwrap().to_text(), text);
        }
        let a = attention_to_text(&AttentionConfig::default());
        assert_eq!(attention_from_text(&a).unwrap(), AttentionConfig::default());
    }
}
