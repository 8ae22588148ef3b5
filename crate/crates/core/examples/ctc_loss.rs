//! CTC loss, greedy decoding and incremental prefix scores.

use decoupled_asr::ctc::{ctc_greedy_decode, ctc_loss_value, ctc_prefix_score, CtcPrefixScorer};
use decoupled_asr::tensor::{log_softmax_rows, Tensor};
use decoupled_asr::vocab::BLANK;

fn main() -> decoupled_asr::Result<()> {
    // 6 frames over {blank, a, b}, peaked on "a a b".
    let logits = Tensor::from_rows(&[
        vec![0.0, 3.0, 0.0],
        vec![2.0, 1.0, 0.0],
        vec![0.0, 3.0, 0.0],
        vec![1.0, 0.5, 0.5],
        vec![0.0, 0.0, 3.0],
        vec![2.0, 0.0, 1.0],
    ])?;
    let lp = log_softmax_rows(&logits)?;

    for y in [vec![1, 1, 2], vec![1, 2], vec![2, 1]] {
        println!("-ln p({y:?} | x) = {:.4}", ctc_loss_value(&lp, &y, BLANK)?);
    }
    println!("greedy: {:?}", ctc_greedy_decode(&lp, BLANK));

    // Prefix scores shrink as the prefix grows.
    let sc = CtcPrefixScorer::new(&lp, BLANK)?;
    let mut st = sc.initial();
    for c in [1, 1, 2] {
        st = sc.extend(&st, c);
        println!("  after {c}: prefix {:.4}  ends-here {:.4}", st.score, sc.eos_score(&st));
    }
    println!("prefix 'a' within 2 frames: {:.4}", ctc_prefix_score(&lp, &[1], 2, BLANK)?);
    Ok(())
}
