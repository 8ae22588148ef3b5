//! Reverse-mode gradients on the tape, checked against finite differences.

use decoupled_asr::tensor::{grad_check, ParamStore, Tape, Tensor};

fn main() -> decoupled_asr::Result<()> {
    let mut store = ParamStore::<f64>::new();
    let w = store.add("w", Tensor::from_fn(&[3, 4], |i| ((i as f64) * 0.37).sin()));
    let b = store.add("b", Tensor::from_fn(&[4], |i| 0.1 * i as f64));
    let x = Tensor::from_fn(&[2, 3], |i| 0.5 - 0.2 * i as f64);

    // loss = -sum(log_softmax(x·w + b)[:, 0])
    let tape = Tape::new();
    let h = tape.constant(x.clone()).matmul(tape.param(&store, w))?.add_row(tape.param(&store, b))?;
    let loss = h.log_softmax()?.slice_cols(0, 1)?.sum().scale(-1.0);
    println!("loss = {:.6}", loss.value().item());
    let grads = tape.backward(loss)?;
    for (id, g) in grads.params() {
        println!("d loss / d {} = {:?}", store.get(*id).name, g.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>());
    }

    let report = grad_check(&mut store, 1e-5, None, |tape, ps| {
        let h = tape.constant(x.clone()).matmul(tape.param(ps, w))?.add_row(tape.param(ps, b))?;
        Ok(h.log_softmax()?.slice_cols(0, 1)?.sum().scale(-1.0))
    })?;
    println!("max relative error vs finite differences: {:.2e}", report.max_rel_err());
    Ok(())
}
