//! Two-domain synthetic benchmark: generation, file round trip, WER scoring
//! and the matched-pairs significance test.

use decoupled_asr::data::{load_dataset, save_dataset};
use decoupled_asr::eval::{corpus_wer, edit_counts, matched_pairs_test, mean_row_tv, Benchmark, BenchmarkSpec, SplitSizes};

fn main() -> anyhow::Result<()> {
    let spec = BenchmarkSpec::default();
    let sizes = SplitSizes { train: 20, dev: 0, test: 50, text: 100 };
    let bench = Benchmark::generate(&spec, sizes, 0)?;
    let (src, tgt) = spec.domains()?;
    println!("vocabulary {} symbols, mean row TV between domains {:.3}", bench.vocab.len(), mean_row_tv(&src, &tgt));

    let u = &bench.target.test[0];
    println!("{}: \"{}\" ({} frames × {} dims)", u.id, bench.vocab.decode(&u.tokens)?, u.frames.rows(), u.frames.cols());

    let dir = std::env::temp_dir().join("decoupled-benchmark-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("target_test.dce");
    save_dataset(&path, &bench.target.test)?;
    assert_eq!(load_dataset(&path, "target")?, bench.target.test);
    println!("wrote and reloaded {}", path.display());

    // Two fake systems: one drops the last token, one swaps pair members.
    let refs: Vec<Vec<usize>> = bench.target.test.iter().map(|u| u.tokens.clone()).collect();
    let drop_last: Vec<Vec<usize>> = refs.iter().map(|r| r[..r.len() - 1].to_vec()).collect();
    let n_pair_ids = 2 * spec.n_pairs;
    let swap_pairs: Vec<Vec<usize>> = refs
        .iter()
        .map(|r| r.iter().map(|&t| if t >= 4 && t < 4 + n_pair_ids { 4 + ((t - 4) ^ 1) } else { t }).collect())
        .collect();

    let score = |hyps: &[Vec<usize>]| {
        let pairs: Vec<_> = refs.iter().cloned().zip(hyps.iter().cloned()).collect();
        let errs: Vec<f64> = refs.iter().zip(hyps).map(|(r, h)| edit_counts(r, h).errors() as f64).collect();
        (corpus_wer(&pairs), errs)
    };
    let (a, ea) = score(&drop_last);
    let (b, eb) = score(&swap_pairs);
    let (a, b) = (a?, b?);
    println!("drop-last  WER {:.2}%  (S {} D {} I {})", 100.0 * a.0, a.1.sub, a.1.del, a.1.ins);
    println!("swap-pairs WER {:.2}%  (S {} D {} I {})", 100.0 * b.0, b.1.sub, b.1.del, b.1.ins);
    let t = matched_pairs_test(&ea, &eb)?;
    println!("matched pairs: Z = {:.3}, p = {:.4}", t.z, t.p_value);
    Ok(())
}
