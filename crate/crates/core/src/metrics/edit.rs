use serde::{Deserialize, Serialize};

/// Substitution / insertion / deletion counts of one alignment.
///
/// Insertions are hypothesis tokens with no reference counterpart.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditStats {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl EditStats {
    pub fn distance(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    pub fn insertions(n: usize) -> Self {
        EditStats {
            insertions: n,
            ..Default::default()
        }
    }

    pub fn deletions(n: usize) -> Self {
        EditStats {
            deletions: n,
            ..Default::default()
        }
    }
}

impl std::ops::Add for EditStats {
    type Output = EditStats;
    fn add(self, o: EditStats) -> EditStats {
        EditStats {
            substitutions: self.substitutions + o.substitutions,
            insertions: self.insertions + o.insertions,
            deletions: self.deletions + o.deletions,
        }
    }
}

impl std::ops::AddAssign for EditStats {
    fn add_assign(&mut self, o: EditStats) {
        *self = *self + o;
    }
}

impl std::iter::Sum for EditStats {
    fn sum<I: Iterator<Item = EditStats>>(iter: I) -> Self {
        iter.fold(EditStats::default(), |a, b| a + b)
    }
}

/// Unit-cost Levenshtein alignment of `hyp` against `reference`.
///
/// Among minimal alignments the backtrace prefers substitution (or match),
/// then insertion, then deletion.
pub fn edit_distance<T: PartialEq>(hyp: &[T], reference: &[T]) -> EditStats {
    let (h, r) = (hyp.len(), reference.len());
    let w = r + 1;
    let mut d = vec![0usize; (h + 1) * w];
    for j in 0..=r {
        d[j] = j;
    }
    for i in 1..=h {
        d[i * w] = i;
        for j in 1..=r {
            let sub = d[(i - 1) * w + j - 1] + usize::from(hyp[i - 1] != reference[j - 1]);
            let ins = d[(i - 1) * w + j] + 1;
            let del = d[i * w + j - 1] + 1;
            d[i * w + j] = sub.min(ins).min(del);
        }
    }

    let mut stats = EditStats::default();
    let (mut i, mut j) = (h, r);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let mismatch = hyp[i - 1] != reference[j - 1];
            if here == d[(i - 1) * w + j - 1] + usize::from(mismatch) {
                stats.substitutions += usize::from(mismatch);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == d[(i - 1) * w + j] + 1 {
            stats.insertions += 1;
            i -= 1;
        } else {
            stats.deletions += 1;
            j -= 1;
        }
    }
    stats
}
