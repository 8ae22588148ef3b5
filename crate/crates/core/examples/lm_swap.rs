//! Source LM training, target fine-tuning and the swap compatibility check.

use decoupled_asr::eval::{gen_text, Benchmark, BenchmarkSpec, SplitSizes};
use decoupled_asr::lm::{check_replacement, lm_finetune, lm_train};
use decoupled_asr::nn::AttentionConfig;
use decoupled_asr::train::TrainConfig;

fn main() -> decoupled_asr::Result<()> {
    let sizes = SplitSizes { train: 0, dev: 0, test: 0, text: 3000 };
    let bench = Benchmark::generate(&BenchmarkSpec::default(), sizes, 0)?;
    let attn = AttentionConfig { d_model: 32, heads: 4, d_ff: 64, n_layers: 2, dropout: 0.1 };
    let tc = |epochs| TrainConfig { epochs, batch_size: 32, ..TrainConfig::default() };

    let (src, _) = lm_train(&bench.vocab, &bench.source.text, &attn, &tc(2), "source")?;
    let (tgt, hist) = lm_finetune(&src, &bench.vocab, &bench.target.text, &tc(1), "target")?;
    println!("fine-tune loss {:.3}", hist.last().map_or(f64::NAN, |h| h.mean_loss));

    let held_src = &gen_text(&bench.source.spec, &bench.vocab, 300, 99)?;
    let held_tgt = &gen_text(&bench.target.spec, &bench.vocab, 300, 99)?;
    println!("                source text  target text");
    println!("source LM ppl   {:>11.2}  {:>11.2}", src.perplexity(held_src)?, src.perplexity(held_tgt)?);
    println!("target LM ppl   {:>11.2}  {:>11.2}", tgt.perplexity(held_src)?, tgt.perplexity(held_tgt)?);

    check_replacement(&bench.vocab, src.cfg.d_model, Some(src.lineage), &tgt)?;
    println!("target LM is a valid replacement for the source LM");

    let other = decoupled_asr::vocab::Vocabulary::synthetic(12);
    if let Err(e) = check_replacement(&other, src.cfg.d_model, None, &tgt) {
        println!("different vocabulary rejected: {e}");
    }
    Ok(())
}
