//! Mini-batch training loop shared by the LM and ASR models.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{cst, Adam, AdamConfig, GradBuffer, Grads, ParamStore, Real, Tape, Var};

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            adam: AdamConfig::default(),
            seed: 0,
            dropout: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Weighted mean of the per-item losses.
    pub mean_loss: f64,
    pub steps: usize,
}

/// SplitMix64 finaliser, used to derive independent sub-seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct ItemResult<F> {
    loss: f64,
    weight: f64,
    grads: Grads<F>,
}

/// Trains `store` over items `0..n_items`.
///
/// `loss(tape, params, i)` returns the summed loss of item `i` and its weight
/// (token count, or 1 for per-sequence losses); each step minimises
/// `Σ loss / Σ weight` over the batch. Items in a batch run in parallel, one
/// tape each, and their gradients are summed in item order so results do not
/// depend on the thread count.
pub fn train<F, L>(
    store: &mut ParamStore<F>,
    n_items: usize,
    cfg: &TrainConfig,
    loss: L,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>>
where
    F: Real,
    L: for<'t> Fn(&'t Tape<F>, &'t ParamStore<F>, usize) -> Result<(Var<'t, F>, f64)> + Sync,
{
    if n_items == 0 {
        return Err(Error::Contract("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut adam = Adam::new(cfg.adam.clone(), store);
    let mut order: Vec<usize> = (0..n_items).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64));
        order.shuffle(&mut rng);
        let (mut sum_loss, mut sum_w, mut steps) = (0.0, 0.0, 0);
        for batch in order.chunks(cfg.batch_size) {
            let shared: &ParamStore<F> = store;
            let results: Vec<ItemResult<F>> = batch
                .par_iter()
                .map(|&i| {
                    let tape = if cfg.dropout > 0.0 {
                        let s = mix_seed(mix_seed(cfg.seed, epoch as u64 + 1), i as u64);
                        Tape::training(s, cfg.dropout)
                    } else {
                        Tape::new()
                    };
                    let (l, weight) = loss(&tape, shared, i)?;
                    let value = l.value().item().to_f64c();
                    if !value.is_finite() {
                        return Err(Error::Numeric(format!("loss of item {i} is {value}")));
                    }
                    let grads = tape.backward(l)?;
                    Ok(ItemResult {
                        loss: value,
                        weight,
                        grads,
                    })
                })
                .collect::<Result<_>>()?;
            let mut buf = GradBuffer::for_store(store);
            let mut batch_w = 0.0;
            for r in &results {
                buf.add_grads(&r.grads);
                batch_w += r.weight;
                sum_loss += r.loss;
            }
            sum_w += batch_w;
            if batch_w > 0.0 {
                buf.scale(cst(1.0 / batch_w));
                buf.write_into(store);
                adam.step(store);
                steps += 1;
            }
        }
        let stats = EpochStats {
            epoch,
            mean_loss: sum_loss / sum_w.max(1e-12),
            steps,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(history)
}
