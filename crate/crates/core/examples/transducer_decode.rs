//! Decoupled transducer with chunked attention: greedy vs beam search and an
//! internal LM swap.

use decoupled_asr::eval::{corpus_wer, Benchmark, BenchmarkSpec, SplitSizes};
use decoupled_asr::lm::{lm_finetune, lm_train};
use decoupled_asr::nn::{AttentionConfig, MaskKind};
use decoupled_asr::search::{decode_all, replace_internal_lm, AsrRef, DecodeConfig, DecodeOptions, TransducerMode};
use decoupled_asr::train::TrainConfig;
use decoupled_asr::transducer::{TransducerConfig, TransducerModel};

fn main() -> decoupled_asr::Result<()> {
    let sizes = SplitSizes { train: 2000, dev: 0, test: 100, text: 10000 };
    let bench = Benchmark::generate(&BenchmarkSpec::default(), sizes, 0)?;
    let attn = AttentionConfig::default();
    let tc = |epochs| TrainConfig { epochs, batch_size: 32, ..TrainConfig::default() };

    let (src_lm, _) = lm_train(&bench.vocab, &bench.source.text, &attn, &tc(3), "source")?;
    let (tgt_lm, _) = lm_finetune(&src_lm, &bench.vocab, &bench.target.text, &tc(1), "target")?;

    let cfg = TransducerConfig { attn, mask: MaskKind::Chunk(8), ..TransducerConfig::default() };
    let mut model = TransducerModel::new(cfg, bench.vocab.clone(), Some(src_lm), 0)?;
    for st in model.fit(&bench.source.train, &tc(10))? {
        println!("epoch {} loss {:.3}", st.epoch, st.mean_loss);
    }

    let test = &bench.target.test;
    let xs: Vec<_> = test.iter().map(|u| &u.frames).collect();
    let wer = |model: &TransducerModel, mode, acoustic_only| -> decoupled_asr::Result<f64> {
        let opts = DecodeOptions {
            cfg: DecodeConfig { beam: 4, ..DecodeConfig::default() },
            mode: Some(mode),
            acoustic_only,
            ..DecodeOptions::default()
        };
        let hyps = decode_all(AsrRef::Transducer(model), &xs, &opts)?;
        let pairs: Vec<_> = test.iter().zip(&hyps).map(|(u, h)| (u.tokens.clone(), h.tokens.clone())).collect();
        Ok(100.0 * corpus_wer(&pairs)?.0)
    };
    println!("acoustic only, beam:  {:.2}%", wer(&model, TransducerMode::Beam, true)?);
    println!("source LM, greedy:    {:.2}%", wer(&model, TransducerMode::Greedy, false)?);
    println!("source LM, beam:      {:.2}%", wer(&model, TransducerMode::Beam, false)?);
    replace_internal_lm(&mut model, tgt_lm)?;
    println!("target LM, beam:      {:.2}%", wer(&model, TransducerMode::Beam, false)?);
    Ok(())
}
