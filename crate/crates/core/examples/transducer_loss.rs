//! Transducer lattice loss and the decoupled logit combination.

use decoupled_asr::tensor::{log_softmax_rows, Tensor};
use decoupled_asr::transducer::{combine_nt_logits, transducer_loss_value};
use decoupled_asr::vocab::BLANK;

/// Lattice log-probs for `t_len` frames over {blank, a, b}, row `t·3 + u`.
fn lattice(t_len: usize, double_blank: bool) -> decoupled_asr::Result<Tensor<f64>> {
    // Internal LM logits after 0, 1 and 2 emitted labels.
    let lm_rows = [[0.0, 1.5, -0.5], [0.0, -0.5, 1.5], [0.0, 0.0, 0.0]];
    let mut rows = Vec::new();
    for t in 0..t_len {
        for (u, lm) in lm_rows.iter().enumerate() {
            let ac = [0.3 * t as f64 - 0.2 * u as f64, 0.5, 0.4];
            rows.push(combine_nt_logits(&ac, lm, BLANK, double_blank)?);
        }
    }
    log_softmax_rows(&Tensor::from_rows(&rows)?)
}

fn main() -> decoupled_asr::Result<()> {
    let (t_len, y) = (4, [1, 2]);
    println!("node (0,0) combined logits: {:?}", combine_nt_logits(&[0.0, 0.5, 0.4], &[0.0, 1.5, -0.5], BLANK, true)?);
    println!("-ln p(a b | x) = {:.4}", transducer_loss_value(&lattice(t_len, true)?, t_len, &y, BLANK)?);
    println!("without the doubled blank: {:.4}", transducer_loss_value(&lattice(t_len, false)?, t_len, &y, BLANK)?);
    println!("-ln p(b a | x) = {:.4}", transducer_loss_value(&lattice(t_len, true)?, t_len, &[2, 1], BLANK)?);
    Ok(())
}
