use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    None,
    Causal,
    /// Frames see their own chunk and every earlier chunk.
    Chunk(usize),
}

/// Boolean visibility matrix `allowed[i][j]` for `n_q` queries over `n_k` keys.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    pub kind: MaskKind,
    pub n_q: usize,
    pub n_k: usize,
    allowed: Arc<Vec<bool>>,
}

impl Mask {
    pub fn none(n_q: usize, n_k: usize) -> Self {
        Mask {
            kind: MaskKind::None,
            n_q,
            n_k,
            allowed: Arc::new(vec![true; n_q * n_k]),
        }
    }

    /// `allowed[i][j] ⇔ j ≤ i`.
    pub fn causal(n: usize) -> Self {
        Self::causal_offset(n, n)
    }

    /// Causal mask for the last `n_q` positions of an `n_k`-long sequence.
    pub fn causal_offset(n_q: usize, n_k: usize) -> Self {
        let off = n_k - n_q;
        let allowed = (0..n_q)
            .flat_map(|i| (0..n_k).map(move |j| j <= i + off))
            .collect();
        Mask {
            kind: MaskKind::Causal,
            n_q,
            n_k,
            allowed: Arc::new(allowed),
        }
    }

    /// `allowed[i][j] ⇔ ⌊j/c⌋ ≤ ⌊i/c⌋`.
    pub fn chunk(n: usize, chunk_frames: usize) -> Result<Self> {
        if chunk_frames == 0 {
            return Err(Error::Config("chunk_frames must be positive".into()));
        }
        let allowed = (0..n)
            .flat_map(|i| (0..n).map(move |j| j / chunk_frames <= i / chunk_frames))
            .collect();
        Ok(Mask {
            kind: MaskKind::Chunk(chunk_frames),
            n_q: n,
            n_k: n,
            allowed: Arc::new(allowed),
        })
    }

    /// Builds the self-attention mask of `kind` for a length-`n` sequence.
    pub fn for_kind(kind: MaskKind, n: usize) -> Result<Self> {
        match kind {
            MaskKind::None => Ok(Self::none(n, n)),
            MaskKind::Causal => Ok(Self::causal(n)),
            MaskKind::Chunk(c) => Self::chunk(n, c),
        }
    }

    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.n_k + j]
    }

    pub fn is_full(&self) -> bool {
        self.allowed.iter().all(|&a| a)
    }

    pub(crate) fn keep(&self) -> Arc<Vec<bool>> {
        Arc::clone(&self.allowed)
    }

    /// Every query row must see at least one key.
    pub fn check_rows(&self) -> Result<()> {
        for i in 0..self.n_q {
            if !(0..self.n_k).any(|j| self.allowed(i, j)) {
                return Err(Error::Contract(format!("query row {i} is fully masked")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn causal_definition() {
        let m = Mask::causal(4);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(m.allowed(i, j), j <= i);
            }
        }
    }

    #[test]
    fn chunk_definition() {
        let m = Mask::chunk(10, 4).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                assert_eq!(m.allowed(i, j), j / 4 <= i / 4);
            }
        }
        assert!(Mask::chunk(10, 10).unwrap().is_full());
        assert!(Mask::chunk(3, 0).is_err());
    }

    #[test]
    fn causal_offset_matches_tail_of_full_mask() {
        let full = Mask::causal(6);
        let tail = Mask::causal_offset(2, 6);
        for i in 0..2 {
            for j in 0..6 {
                assert_eq!(tail.allowed(i, j), full.allowed(i + 4, j));
            }
        }
    }
}
