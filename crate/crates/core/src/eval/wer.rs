use crate::error::{Error, Result};

/// Edit counts of one hypothesis against its reference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EditCounts {
    pub sub: usize,
    pub del: usize,
    pub ins: usize,
    /// Reference length.
    pub n: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.sub + self.del + self.ins
    }

    /// Per-utterance WER; an empty reference counts errors against 1.
    pub fn wer(&self) -> f64 {
        self.errors() as f64 / self.n.max(1) as f64
    }
}

impl std::ops::Add for EditCounts {
    type Output = EditCounts;
    fn add(self, o: EditCounts) -> EditCounts {
        EditCounts {
            sub: self.sub + o.sub,
            del: self.del + o.del,
            ins: self.ins + o.ins,
            n: self.n + o.n,
        }
    }
}

/// Minimum-edit alignment; among equal-cost alignments substitutions are
/// preferred over deletion/insertion pairs.
pub fn edit_counts<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    // (cost, subs, dels, ins); lexicographic min on (cost, -subs).
    type Cell = (usize, usize, usize, usize);
    let better = |a: Cell, b: Cell| (a.0, usize::MAX - a.1) < (b.0, usize::MAX - b.1);
    let mut prev: Vec<Cell> = (0..=m).map(|j| (j, 0, 0, j)).collect();
    for i in 1..=n {
        let mut cur: Vec<Cell> = vec![(i, 0, i, 0); m + 1];
        for j in 1..=m {
            let d = prev[j - 1];
            let mut best = if reference[i - 1] == hypothesis[j - 1] {
                d
            } else {
                (d.0 + 1, d.1 + 1, d.2, d.3)
            };
            let up = prev[j];
            let del = (up.0 + 1, up.1, up.2 + 1, up.3);
            if better(del, best) {
                best = del;
            }
            let left = cur[j - 1];
            let ins = (left.0 + 1, left.1, left.2, left.3 + 1);
            if better(ins, best) {
                best = ins;
            }
            cur[j] = best;
        }
        prev = cur;
    }
    let (_, sub, del, ins) = prev[m];
    EditCounts { sub, del, ins, n }
}

/// Corpus WER `Σ errors / Σ reference length`, with the summed counts.
pub fn corpus_wer<T: PartialEq>(pairs: &[(Vec<T>, Vec<T>)]) -> Result<(f64, EditCounts)> {
    let total = pairs
        .iter()
        .map(|(r, h)| edit_counts(r, h))
        .fold(EditCounts::default(), |a, b| a + b);
    if total.n == 0 {
        return Err(Error::Domain("corpus WER needs at least one reference token".into()));
    }
    Ok((total.errors() as f64 / total.n as f64, total))
}
