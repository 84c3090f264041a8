//! Speaker error rate, permutation-free WER, speaker-attributed WER and
//! speaker-counting confusion.
//!
//! All scorers return integer counts; corpus rates are formed by summing
//! counts first and dividing once.

mod assign;
mod edit;

use std::collections::BTreeSet;

use serde::Serialize;

pub use assign::{assign_min_cost, Assignment};
pub use edit::{edit_distance, EditStats};

use crate::domain::{AttributedTranscript, SpeakerId};
use crate::error::{Error, Result};

/// Padding rule used for SER when utterance counts differ.
pub const SER_POLICY: &str = "unit_pad";

/// Speaker-error counts for one transcript pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SerCounts {
    pub misattributions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_utterances: usize,
}

impl SerCounts {
    pub fn errors(&self) -> usize {
        self.misattributions + self.insertions + self.deletions
    }

    pub fn rate(&self) -> f64 {
        self.errors() as f64 / self.ref_utterances as f64
    }
}

/// Word-error counts plus the reference word denominator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct WordCounts {
    pub edits: EditStats,
    pub ref_words: usize,
}

impl WordCounts {
    pub fn errors(&self) -> usize {
        self.edits.distance()
    }

    pub fn rate(&self) -> f64 {
        self.errors() as f64 / self.ref_words as f64
    }
}

fn nonempty_reference(reference: &AttributedTranscript) -> Result<()> {
    if reference.utterances.is_empty() {
        return Err(Error::UndefinedDenominator("reference has no utterances"));
    }
    Ok(())
}

fn reference_words(reference: &AttributedTranscript) -> Result<usize> {
    match reference.word_count() {
        0 => Err(Error::UndefinedDenominator("reference has no words")),
        n => Ok(n),
    }
}

/// SER: utterances matched ignoring the words, cost 0 for the same speaker
/// and 1 otherwise; unmatched utterances on either side cost 1.
pub fn compute_ser(hyp: &AttributedTranscript, reference: &AttributedTranscript) -> Result<SerCounts> {
    nonempty_reference(reference)?;
    let cost: Vec<Vec<f64>> = reference
        .utterances
        .iter()
        .map(|r| {
            hyp.utterances
                .iter()
                .map(|h| if h.speaker == r.speaker { 0.0 } else { 1.0 })
                .collect()
        })
        .collect();
    let a = assign_min_cost(
        &cost,
        &vec![1.0; reference.utterances.len()],
        &vec![1.0; hyp.utterances.len()],
    );
    Ok(SerCounts {
        misattributions: a
            .pairs
            .iter()
            .filter(|&&(r, h)| reference.utterances[r].speaker != hyp.utterances[h].speaker)
            .count(),
        insertions: a.unmatched_cols.len(),
        deletions: a.unmatched_rows.len(),
        ref_utterances: reference.utterances.len(),
    })
}

/// WER under the best utterance permutation, speaker labels ignored.
pub fn compute_wer(hyp: &AttributedTranscript, reference: &AttributedTranscript) -> Result<WordCounts> {
    let ref_words = reference_words(reference)?;
    let stats: Vec<Vec<EditStats>> = reference
        .utterances
        .iter()
        .map(|r| {
            hyp.utterances
                .iter()
                .map(|h| edit_distance(&h.tokens, &r.tokens))
                .collect()
        })
        .collect();
    let cost: Vec<Vec<f64>> = stats
        .iter()
        .map(|row| row.iter().map(|s| s.distance() as f64).collect())
        .collect();
    let row_pad: Vec<f64> = reference.utterances.iter().map(|u| u.tokens.len() as f64).collect();
    let col_pad: Vec<f64> = hyp.utterances.iter().map(|u| u.tokens.len() as f64).collect();
    let a = assign_min_cost(&cost, &row_pad, &col_pad);
    let mut edits: EditStats = a.pairs.iter().map(|&(r, h)| stats[r][h]).sum();
    for &r in &a.unmatched_rows {
        edits += EditStats::deletions(reference.utterances[r].tokens.len());
    }
    for &h in &a.unmatched_cols {
        edits += EditStats::insertions(hyp.utterances[h].tokens.len());
    }
    Ok(WordCounts { edits, ref_words })
}

/// Per-speaker edit statistics summed over the union of speakers.
fn per_speaker_edits(hyp: &AttributedTranscript, reference: &AttributedTranscript) -> EditStats {
    let speakers: BTreeSet<SpeakerId> = hyp
        .utterances
        .iter()
        .chain(&reference.utterances)
        .map(|u| u.speaker)
        .collect();
    speakers
        .into_iter()
        .map(|s| edit_distance(&concat_of(hyp, s), &concat_of(reference, s)))
        .sum()
}

fn concat_of(t: &AttributedTranscript, speaker: SpeakerId) -> Vec<usize> {
    t.utterances
        .iter()
        .filter(|u| u.speaker == speaker)
        .flat_map(|u| u.tokens.iter().copied())
        .collect()
}

/// SA-WER: each speaker's hypothesis text against the same speaker's
/// reference text; speaker identities are absolute.
pub fn compute_sa_wer(
    hyp: &AttributedTranscript,
    reference: &AttributedTranscript,
) -> Result<WordCounts> {
    let ref_words = reference_words(reference)?;
    Ok(WordCounts {
        edits: per_speaker_edits(hyp, reference),
        ref_words,
    })
}

/// Raw speaker-attributed error count used as the Bayes risk of a
/// hypothesis (the SA-WER numerator).
pub fn sa_error_count(hyp: &AttributedTranscript, reference: &AttributedTranscript) -> usize {
    per_speaker_edits(hyp, reference).distance()
}

/// Bucket for speaker counts: 1, 2, 3 and "4 or more".
pub const COUNT_BUCKETS: usize = 4;

fn bucket(count: usize) -> usize {
    count.clamp(1, COUNT_BUCKETS) - 1
}

/// Speaker-counting confusion: rows are actual counts, columns estimated
/// counts, each bucketed as 1, 2, 3, ≥4.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountConfusion {
    pub counts: [[usize; COUNT_BUCKETS]; COUNT_BUCKETS],
}

impl CountConfusion {
    pub fn row_total(&self, actual: usize) -> usize {
        self.counts[bucket(actual)].iter().sum()
    }

    /// Row-normalized percentages; rows with no samples are all zero.
    pub fn percentages(&self) -> [[f64; COUNT_BUCKETS]; COUNT_BUCKETS] {
        let mut out = [[0.0; COUNT_BUCKETS]; COUNT_BUCKETS];
        for (row, counts) in out.iter_mut().zip(&self.counts) {
            let total: usize = counts.iter().sum();
            if total > 0 {
                for (o, &c) in row.iter_mut().zip(counts) {
                    *o = 100.0 * c as f64 / total as f64;
                }
            }
        }
        out
    }

    /// Diagonal percentage for an actual speaker count.
    pub fn accuracy(&self, actual: usize) -> f64 {
        self.percentages()[bucket(actual)][bucket(actual)]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("actual,n,est_1,est_2,est_3,est_ge4\n");
        let pct = self.percentages();
        for (i, row) in pct.iter().enumerate() {
            let n: usize = self.counts[i].iter().sum();
            if n == 0 {
                continue;
            }
            let label = if i + 1 == COUNT_BUCKETS {
                format!(">={}", COUNT_BUCKETS)
            } else {
                (i + 1).to_string()
            };
            s.push_str(&format!(
                "{label},{n},{:.2},{:.2},{:.2},{:.2}\n",
                row[0], row[1], row[2], row[3]
            ));
        }
        s
    }
}

/// Tally `(estimated, actual)` speaker counts.
pub fn speaker_count_confusion(results: &[(usize, usize)]) -> CountConfusion {
    let mut counts = [[0; COUNT_BUCKETS]; COUNT_BUCKETS];
    for &(estimated, actual) in results {
        counts[bucket(actual)][bucket(estimated)] += 1;
    }
    CountConfusion { counts }
}

/// Round to four decimals for reporting.
pub fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// Numerator, denominator and rounded rate of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateSummary {
    pub errors: usize,
    pub total: usize,
    pub rate: f64,
}

impl RateSummary {
    fn new(errors: usize, total: usize) -> Self {
        RateSummary {
            errors,
            total,
            rate: if total == 0 {
                0.0
            } else {
                round4(errors as f64 / total as f64)
            },
        }
    }
}

/// Corpus-level SER / WER / SA-WER report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub samples: usize,
    pub ser: RateSummary,
    pub wer: RateSummary,
    pub sa_wer: RateSummary,
    pub ser_counts: SerCounts,
    pub wer_edits: EditStats,
    pub sa_wer_edits: EditStats,
    pub n_ref_utterances: usize,
    pub n_ref_words: usize,
    pub ser_policy: &'static str,
}

/// Sums per-sample counts into a [`MetricReport`].
#[derive(Debug, Clone, Default)]
pub struct MetricAccumulator {
    samples: usize,
    ser: SerCounts,
    wer: EditStats,
    sa_wer: EditStats,
    ref_words: usize,
}

impl MetricAccumulator {
    pub fn add(&mut self, hyp: &AttributedTranscript, reference: &AttributedTranscript) -> Result<()> {
        let ser = compute_ser(hyp, reference)?;
        let wer = compute_wer(hyp, reference)?;
        let sa = compute_sa_wer(hyp, reference)?;
        self.samples += 1;
        self.ser.misattributions += ser.misattributions;
        self.ser.insertions += ser.insertions;
        self.ser.deletions += ser.deletions;
        self.ser.ref_utterances += ser.ref_utterances;
        self.wer += wer.edits;
        self.sa_wer += sa.edits;
        self.ref_words += wer.ref_words;
        Ok(())
    }

    pub fn merge(&mut self, other: &MetricAccumulator) {
        self.samples += other.samples;
        self.ser.misattributions += other.ser.misattributions;
        self.ser.insertions += other.ser.insertions;
        self.ser.deletions += other.ser.deletions;
        self.ser.ref_utterances += other.ser.ref_utterances;
        self.wer += other.wer;
        self.sa_wer += other.sa_wer;
        self.ref_words += other.ref_words;
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn sa_wer_errors(&self) -> usize {
        self.sa_wer.distance()
    }

    pub fn ref_words(&self) -> usize {
        self.ref_words
    }

    pub fn report(&self) -> MetricReport {
        MetricReport {
            samples: self.samples,
            ser: RateSummary::new(self.ser.errors(), self.ser.ref_utterances),
            wer: RateSummary::new(self.wer.distance(), self.ref_words),
            sa_wer: RateSummary::new(self.sa_wer.distance(), self.ref_words),
            ser_counts: self.ser,
            wer_edits: self.wer,
            sa_wer_edits: self.sa_wer,
            n_ref_utterances: self.ser.ref_utterances,
            n_ref_words: self.ref_words,
            ser_policy: SER_POLICY,
        }
    }
}
