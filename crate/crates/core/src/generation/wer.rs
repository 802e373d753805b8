use crate::error::{Error, Result};

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance over reference length.
pub fn wer<T: PartialEq>(hypothesis: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Invalid("WER needs a non-empty reference".into()));
    }
    Ok(edit_distance(hypothesis, reference) as f64 / reference.len() as f64)
}

/// Edit count and reference length, kept apart so scores aggregate exactly.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WerScore {
    pub edits: usize,
    pub reference_len: usize,
}

impl WerScore {
    pub fn new<T: PartialEq>(hypothesis: &[T], reference: &[T]) -> Self {
        WerScore {
            edits: edit_distance(hypothesis, reference),
            reference_len: reference.len(),
        }
    }

    pub fn add(self, other: WerScore) -> WerScore {
        WerScore {
            edits: self.edits + other.edits,
            reference_len: self.reference_len + other.reference_len,
        }
    }

    /// Edits per reference token; infinite for an empty reference with edits.
    pub fn rate(&self) -> f64 {
        match (self.edits, self.reference_len) {
            (0, 0) => 0.0,
            (_, 0) => f64::INFINITY,
            (e, n) => e as f64 / n as f64,
        }
    }
}

/// Corpus WER: total edits over total reference tokens, i.e. the mean of
/// per-item WER weighted by reference length.
pub fn corpus_wer(scores: &[WerScore]) -> Result<f64> {
    let total = scores.iter().fold(WerScore::default(), |a, &b| a.add(b));
    if total.reference_len == 0 {
        return Err(Error::Invalid("corpus WER needs reference tokens".into()));
    }
    Ok(total.rate())
}
