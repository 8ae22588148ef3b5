//! Decoupled AED: train on source audio, then decode target audio with the
//! source LM, the target LM swapped in, and acoustics only.

use decoupled_asr::aed::{AedConfig, AedModel};
use decoupled_asr::eval::{corpus_wer, Benchmark, BenchmarkSpec, SplitSizes};
use decoupled_asr::lm::{lm_finetune, lm_train};
use decoupled_asr::nn::AttentionConfig;
use decoupled_asr::search::{decode_all, replace_internal_lm, AsrRef, DecodeConfig, DecodeOptions};
use decoupled_asr::train::TrainConfig;

fn main() -> decoupled_asr::Result<()> {
    let sizes = SplitSizes { train: 2000, dev: 0, test: 100, text: 10000 };
    let bench = Benchmark::generate(&BenchmarkSpec::default(), sizes, 0)?;
    let attn = AttentionConfig::default();
    let tc = |epochs| TrainConfig { epochs, batch_size: 32, ..TrainConfig::default() };

    let (src_lm, _) = lm_train(&bench.vocab, &bench.source.text, &attn, &tc(3), "source")?;
    let (tgt_lm, _) = lm_finetune(&src_lm, &bench.vocab, &bench.target.text, &tc(1), "target")?;

    let cfg = AedConfig { attn, ..AedConfig::default() };
    let mut model = AedModel::new(cfg, bench.vocab.clone(), Some(src_lm), 0)?;
    for st in model.fit(&bench.source.train, &tc(10))? {
        println!("epoch {} loss {:.3}", st.epoch, st.mean_loss);
    }

    let test = &bench.target.test;
    let xs: Vec<_> = test.iter().map(|u| &u.frames).collect();
    let wer = |model: &AedModel, beta: Option<f64>| -> decoupled_asr::Result<f64> {
        let opts = DecodeOptions { cfg: DecodeConfig { beam: 4, ..DecodeConfig::default() }, beta, ..DecodeOptions::default() };
        let hyps = decode_all(AsrRef::Aed(model), &xs, &opts)?;
        let pairs: Vec<_> = test.iter().zip(&hyps).map(|(u, h)| (u.tokens.clone(), h.tokens.clone())).collect();
        Ok(100.0 * corpus_wer(&pairs)?.0)
    };
    println!("target test WER, acoustic only: {:.2}%", wer(&model, Some(0.0))?);
    println!("target test WER, source LM:     {:.2}%", wer(&model, None)?);
    let old = replace_internal_lm(&mut model, tgt_lm)?;
    println!("target test WER, target LM:     {:.2}%", wer(&model, None)?);
    replace_internal_lm(&mut model, old)?;
    println!("target test WER, swapped back:  {:.2}%", wer(&model, None)?);
    Ok(())
}
