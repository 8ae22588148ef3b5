//! Saving and loading LMs and ASR models; corrupted files are rejected.

use decoupled_asr::aed::AedConfig;
use decoupled_asr::checkpoint::{load_lm, save_lm, AsrModel, Checkpoint};
use decoupled_asr::config::AsrArch;
use decoupled_asr::lm::LanguageModel;
use decoupled_asr::nn::AttentionConfig;
use decoupled_asr::vocab::Vocabulary;

fn main() -> anyhow::Result<()> {
    let dir = std::env::temp_dir().join("decoupled-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let vocab = Vocabulary::synthetic(20);
    let attn = AttentionConfig { d_model: 16, heads: 2, d_ff: 32, n_layers: 1, dropout: 0.0 };

    let lm = LanguageModel::new(vocab.clone(), attn.clone(), 3, "source")?;
    let lm_path = dir.join("source.lm");
    save_lm(&lm, &lm_path)?;
    let back = load_lm(&lm_path)?;
    println!("LM reloaded: tag '{}', lineage {:016x}, same logits: {}", back.domain_tag, back.lineage, back.logits(&[2, 5, 6])? == lm.logits(&[2, 5, 6])?);

    let arch = AsrArch::Aed(AedConfig { attn, ..AedConfig::default() });
    let model = AsrModel::new(&arch, vocab, Some(lm), 0)?;
    let path = dir.join("aed.ck");
    model.save(&path)?;
    let first = std::fs::read(&path)?;
    AsrModel::load(&path)?.save(&path)?;
    let second = std::fs::read(&path)?;
    println!("save → load → save is byte-identical: {} ({} bytes)", first == second, first.len());

    let ck = Checkpoint::load(&path)?;
    for (name, _) in ck.entries.iter().filter(|(n, _)| n.starts_with("meta/")) {
        println!("  {name}");
    }

    let mut bad = first;
    let mid = bad.len() / 2;
    bad[mid] ^= 0x10;
    match Checkpoint::from_bytes(&bad, &path) {
        Err(e) => println!("corrupted copy rejected: {e}"),
        Ok(_) => println!("corrupted copy was accepted"),
    }
    Ok(())
}
