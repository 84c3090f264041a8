//! SER, WER and SA-WER of a two-speaker hypothesis with one substituted
//! word and one utterance attributed to the wrong speaker. WER ignores the
//! speaker label; SA-WER counts the misattributed words as deletions plus
//! insertions.

use sambr::domain::{AttributedTranscript, SpeakerId};
use sambr::metrics::{compute_sa_wer, compute_ser, compute_wer, edit_distance};

fn transcript(parts: &[(u32, &[usize])]) -> AttributedTranscript {
    AttributedTranscript::merged(parts.iter().map(|(s, t)| (SpeakerId(*s), t.to_vec())))
}

fn main() -> sambr::Result<()> {
    let reference = transcript(&[(1, &[3, 4, 5]), (2, &[6, 7, 8])]);
    let hypothesis = transcript(&[(1, &[3, 4, 9]), (3, &[6, 7, 8])]);

    let ser = compute_ser(&hypothesis, &reference)?;
    let wer = compute_wer(&hypothesis, &reference)?;
    let sa = compute_sa_wer(&hypothesis, &reference)?;
    println!("SER    {:.3}  {:?}", ser.rate(), ser);
    println!("WER    {:.3}  {:?}", wer.rate(), wer.edits);
    println!("SA-WER {:.3}  {:?}", sa.rate(), sa.edits);
    println!("edit_distance(kitten, sitting) = {:?}", edit_distance(b"kitten", b"sitting"));
    Ok(())
}
