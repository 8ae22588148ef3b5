//! Transformer building blocks: attention, masks, layer variants, encoder.

mod attention;
mod layers;
mod mask;

pub use attention::{scaled_dot_attention, MultiHeadAttention};
pub use layers::{
    embed_from, embed_with_positions, sinusoidal_rows, sinusoidal_positions, DecoderLayer, Encoder, FeedForward, LayerKind,
    LayerNorm, Linear,
};
pub use mask::{Mask, MaskKind};

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Real, Tape, Var};

/// Sizes shared by every transformer stack in a model.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub n_layers: usize,
    pub dropout: f64,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            d_model: 64,
            heads: 4,
            d_ff: 128,
            n_layers: 2,
            dropout: 0.1,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_ff == 0 || self.n_layers == 0 {
            return Err(Error::Config("attention sizes must be positive".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.heads
    }
}

/// A tape plus the parameter store that the current module reads from.
pub struct Ctx<'t, 'p, F: Real> {
    pub tape: &'t Tape<F>,
    pub params: &'p ParamStore<F>,
}

impl<F: Real> Clone for Ctx<'_, '_, F> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<F: Real> Copy for Ctx<'_, '_, F> {}

impl<'t, 'p, F: Real> Ctx<'t, 'p, F> {
    pub fn new(tape: &'t Tape<F>, params: &'p ParamStore<F>) -> Self {
        Ctx { tape, params }
    }

    pub fn p(&self, id: ParamId) -> Var<'t, F> {
        self.tape.param(self.params, id)
    }
}
