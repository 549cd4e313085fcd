use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Word error counts of one alignment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub reference_words: usize,
}

impl ErrorCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    /// `100 · errors / reference words`; 0 for an empty reference.
    pub fn wer(&self) -> f64 {
        if self.reference_words == 0 {
            0.0
        } else {
            100.0 * self.errors() as f64 / self.reference_words as f64
        }
    }

    pub fn add(&mut self, o: &ErrorCounts) {
        self.substitutions += o.substitutions;
        self.insertions += o.insertions;
        self.deletions += o.deletions;
        self.reference_words += o.reference_words;
    }
}

/// Cost of a partial alignment, ordered so that fewer errors win, then more
/// substitutions, then more insertions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Cost {
    errors: usize,
    neg_subs: isize,
    neg_ins: isize,
}

impl Cost {
    const ZERO: Cost = Cost {
        errors: 0,
        neg_subs: 0,
        neg_ins: 0,
    };

    fn plus(self, errors: usize, subs: isize, ins: isize) -> Cost {
        Cost {
            errors: self.errors + errors,
            neg_subs: self.neg_subs - subs,
            neg_ins: self.neg_ins - ins,
        }
    }
}

/// Levenshtein word alignment of `hyp` against `reference`.
///
/// Among the minimum-error alignments the one with the most substitutions is
/// chosen, then the one with the most insertions, which fixes the S/I/D
/// breakdown independently of traversal order. An empty reference is an error.
pub fn wer<R: AsRef<str>, H: AsRef<str>>(reference: &[R], hyp: &[H]) -> Result<ErrorCounts> {
    if reference.is_empty() {
        return Err(Error::Invalid("WER needs a non-empty reference".into()));
    }
    let (n, m) = (reference.len(), hyp.len());
    let mut dp = vec![Cost::ZERO; (n + 1) * (m + 1)];
    let at = |i: usize, j: usize| i * (m + 1) + j;
    for i in 1..=n {
        dp[at(i, 0)] = dp[at(i - 1, 0)].plus(1, 0, 0);
    }
    for j in 1..=m {
        dp[at(0, j)] = dp[at(0, j - 1)].plus(1, 0, 1);
    }
    for i in 1..=n {
        for j in 1..=m {
            let same = reference[i - 1].as_ref() == hyp[j - 1].as_ref();
            let diag = if same {
                dp[at(i - 1, j - 1)]
            } else {
                dp[at(i - 1, j - 1)].plus(1, 1, 0)
            };
            let ins = dp[at(i, j - 1)].plus(1, 0, 1);
            let del = dp[at(i - 1, j)].plus(1, 0, 0);
            dp[at(i, j)] = diag.min(ins).min(del);
        }
    }
    let c = dp[at(n, m)];
    let substitutions = (-c.neg_subs) as usize;
    let insertions = (-c.neg_ins) as usize;
    Ok(ErrorCounts {
        substitutions,
        insertions,
        deletions: c.errors - substitutions - insertions,
        reference_words: n,
    })
}
