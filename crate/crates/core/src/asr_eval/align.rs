//! Levenshtein alignment, word error rate and entity error rate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EditOp {
    Match { r: usize, h: usize },
    Substitute { r: usize, h: usize },
    Delete { r: usize },
    Insert { h: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Alignment {
    pub ops: Vec<EditOp>,
}

impl Alignment {
    pub fn substitutions(&self) -> usize {
        self.ops.iter().filter(|o| matches!(o, EditOp::Substitute { .. })).count()
    }

    pub fn deletions(&self) -> usize {
        self.ops.iter().filter(|o| matches!(o, EditOp::Delete { .. })).count()
    }

    pub fn insertions(&self) -> usize {
        self.ops.iter().filter(|o| matches!(o, EditOp::Insert { .. })).count()
    }

    pub fn cost(&self) -> usize {
        self.substitutions() + self.deletions() + self.insertions()
    }

    /// Reference positions that were substituted or deleted.
    pub fn reference_errors(&self) -> impl Iterator<Item = usize> + '_ {
        self.ops.iter().filter_map(|o| match o {
            EditOp::Substitute { r, .. } | EditOp::Delete { r } => Some(*r),
            _ => None,
        })
    }
}

/// Minimal unit-cost alignment. When several paths are optimal the
/// backtrace prefers substitution (or match), then deletion, then
/// insertion.
pub fn align<S: AsRef<str>, T: AsRef<str>>(reference: &[S], hypothesis: &[T]) -> Alignment {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let same = reference[i - 1].as_ref() == hypothesis[j - 1].as_ref();
            let diag = d[(i - 1) * w + j - 1] + usize::from(!same);
            d[i * w + j] = diag.min(d[(i - 1) * w + j] + 1).min(d[i * w + j - 1] + 1);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1].as_ref() == hypothesis[j - 1].as_ref();
            if d[(i - 1) * w + j - 1] + usize::from(!same) == here {
                ops.push(if same {
                    EditOp::Match { r: i - 1, h: j - 1 }
                } else {
                    EditOp::Substitute { r: i - 1, h: j - 1 }
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[(i - 1) * w + j] + 1 == here {
            ops.push(EditOp::Delete { r: i - 1 });
            i -= 1;
        } else {
            ops.push(EditOp::Insert { h: j - 1 });
            j -= 1;
        }
    }
    ops.reverse();
    Alignment { ops }
}

/// (S + D + I) / reference length.
pub fn wer(alignment: &Alignment, reference_len: usize) -> Result<f64> {
    if reference_len == 0 {
        return Err(Error::Empty("WER needs a non-empty reference".into()));
    }
    Ok(alignment.cost() as f64 / reference_len as f64)
}

/// Substituted-or-deleted and total counts of tagged reference tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EntityCounts {
    pub errors: usize,
    pub total: usize,
}

impl EntityCounts {
    pub fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.errors as f64 / self.total as f64)
    }

    pub fn add(&mut self, other: EntityCounts) {
        self.errors += other.errors;
        self.total += other.total;
    }
}

/// Per-topic entity counts for one aligned utterance.
pub fn entity_counts(alignment: &Alignment, tags: &[Option<String>]) -> BTreeMap<String, EntityCounts> {
    let mut out: BTreeMap<String, EntityCounts> = BTreeMap::new();
    for t in tags.iter().flatten() {
        out.entry(t.clone()).or_default().total += 1;
    }
    for r in alignment.reference_errors() {
        if let Some(Some(t)) = tags.get(r) {
            out.entry(t.clone()).or_default().errors += 1;
        }
    }
    out
}

/// Entity error rate for one topic; `None` when no reference token carries
/// that tag. Insertions never count.
pub fn eer(alignment: &Alignment, tags: &[Option<String>], topic: &str) -> Option<f64> {
    entity_counts(alignment, tags).get(topic).and_then(EntityCounts::rate)
}

/// Entity error rate pooled over every tagged token.
pub fn overall_eer(alignment: &Alignment, tags: &[Option<String>]) -> Option<f64> {
    let mut all = EntityCounts::default();
    for c in entity_counts(alignment, tags).values() {
        all.add(*c);
    }
    all.rate()
}
