//! Acceptance suite. Each test prints one `criterion N ... PASS|FAIL` line;
//! run with `cargo test --test acceptance -- --nocapture` to see them.

mod common;

use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use sambr::cli::{cmd_sweep, cmd_synth, cmd_train_mmi, resolve, Overrides, RunConfig};
use rand_chacha::ChaCha8Rng;

use sambr::autodiff::{Tape, Tensor};
use sambr::decode::{beam_search, BeamConfig};
use sambr::experiment::{run_seed, SeedOutcome};
use sambr::metrics::CountConfusion;
use sambr::domain::{
    AttributedTranscript, FeatureSequence, SpeakerId, SpeakerInventory, SpeakerProfile, TokenId,
    Utterance, Vocabulary,
};
use sambr::gradcheck::{tiny_instance, GradcheckConfig, Instance};
use sambr::metrics::{compute_sa_wer, compute_ser, compute_wer, edit_distance};
use sambr::model::{decoder_step, encode, initial_state, start_token, ModelConfig, ModelParams, ParamGrads};
use sambr::risk::{sa_mbr_loss, MbrBatchItem};

use std::io::Write;

const SEED: u64 = 20240917;

struct Outcome {
    pass: bool,
    summary: String,
    /// Per-instance lines compared by the determinism check.
    detail: String,
}

impl Outcome {
    /// Summary with wall-clock figures removed.
    fn summary_without_timing(&self) -> String {
        self.summary
            .split(", ")
            .filter(|part| part.strip_suffix('s').is_none_or(|n| n.parse::<f64>().is_err()))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Print the criterion line and fail the test when it does not pass.
fn report(criterion: usize, o: &Outcome) {
    let verdict = if o.pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {criterion} {verdict}: {}", o.summary);
    println!("{line}");
    let _ = std::io::stdout().flush();
    assert!(o.pass, "{line}");
}

// Criterion 1.
const C1_INSTANCES: usize = 20;
const C1_CLOSED_FORM_TOL: f64 = 1e-6;
const C1_FD_TOL: f64 = 1e-3;
const C1_FD_STEP: f64 = 1e-5;
const C1_REL_FLOOR_CLOSED: f64 = 1e-8;
const C1_REL_FLOOR_FD: f64 = 1e-6;
const C1_MAX_SECS: f64 = 60.0;

// Criterion 2.
const C2_MODELS: usize = 100;
const C2_MAX_SECS: f64 = 120.0;

// Criterion 3.
const C3_TRIALS: usize = 1000;
const C3_MAX_UTTERANCES: usize = 6;
const C3_MAX_EDIT_LEN: usize = 6;
const C3_MAX_SECS: f64 = 60.0;

// Criterion 4.
const C4_INSTANCES: usize = 20;
const C4_MAX_SECS: f64 = 5.0;

// Criteria 5 and 6.
const C5_SEEDS: [u64; 3] = [0, 1, 2];
const C5_DEV_SIZE: usize = 1500;
const C5_ONE_SPEAKER_MAX: f64 = 0.15;
const C5_MIN_IMPROVED_SEEDS: usize = 2;
const C5_MAX_SECS: f64 = 7200.0;
const C6_ROW_SUM_TOL: f64 = 0.01;
const C6_MIN_SEEDS: usize = 2;

fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn gradcheck_cfg(seed: u64) -> GradcheckConfig {
    GradcheckConfig {
        instances: C1_INSTANCES,
        seed,
        ..GradcheckConfig::default()
    }
}

/// Gradients of `Ē` by backpropagation and by injecting seeds computed here
/// from the posterior, the error counts and the hypothesis lengths.
fn dual_paths(inst: &Instance) -> (f64, ParamGrads, ParamGrads) {
    let mut tape = Tape::new();
    let tracked = inst.params.track(&mut tape);
    let fwd = sa_mbr_loss(&mut tape, &inst.item, &inst.x, &inst.inventory, &tracked).unwrap();
    let auto = tracked.gradients(&tape.backward(&fwd.loss).unwrap());
    let e_bar: f64 = fwd
        .posterior
        .iter()
        .zip(&inst.item.hyps)
        .map(|(p, h)| p * h.error as f64)
        .sum();
    let mut seeds: Vec<(Tensor, Tensor)> = Vec::new();
    for (h, hyp) in inst.item.hyps.iter().enumerate() {
        let value = fwd.posterior[h] * (hyp.error as f64 - e_bar) / hyp.tokens.len() as f64;
        for (n, (&y, &s)) in hyp.tokens.iter().zip(&hyp.step_speakers).enumerate() {
            let lo = &fwd.log_token_dists[h][n];
            let mut g = vec![0.0; lo.cols()];
            g[y] = value;
            seeds.push((lo.clone(), Tensor::row(&g)));
            let lb = &fwd.log_speaker_dists[h][n];
            let mut g = vec![0.0; lb.cols()];
            g[s] = value;
            seeds.push((lb.clone(), Tensor::row(&g)));
        }
    }
    let pairs: Vec<(&Tensor, &Tensor)> = seeds.iter().map(|(a, b)| (a, b)).collect();
    let closed = tracked.gradients(&tape.inject_gradients(&pairs).unwrap());
    (fwd.expected_error, auto, closed)
}

fn expected_error(inst: &Instance, params: &ModelParams) -> f64 {
    sa_mbr_loss(&mut Tape::new(), &inst.item, &inst.x, &inst.inventory, params)
        .unwrap()
        .expected_error
}

fn criterion_1(seed: u64) -> Outcome {
    let start = Instant::now();
    let cfg = gradcheck_cfg(seed);
    let (mut worst_cf, mut worst_fd) = (0.0f64, 0.0f64);
    let mut lines = Vec::new();
    let mut bounds_ok = true;
    for i in 0..C1_INSTANCES {
        let inst = tiny_instance(&cfg, i).unwrap();
        bounds_ok &= inst.vocab.len() <= 8
            && inst.inventory.len() <= 4
            && inst.item.len() <= 4
            && inst.item.hyps.iter().all(|h| h.tokens.len() <= 8);
        let (e, auto, closed) = dual_paths(&inst);
        let cf = auto
            .flat()
            .zip(closed.flat())
            .map(|(a, b)| rel(a, b, C1_REL_FLOOR_CLOSED))
            .fold(0.0, f64::max);
        let mut fd_max = 0.0f64;
        for (pi, g) in auto.0.iter().enumerate() {
            for (j, &an) in g.iter().enumerate() {
                let bumped = |d: f64| {
                    let mut q = inst.params.clone();
                    q.update(|k, data| {
                        if k == pi {
                            data[j] += d;
                        }
                    });
                    q
                };
                let fd = (expected_error(&inst, &bumped(C1_FD_STEP))
                    - expected_error(&inst, &bumped(-C1_FD_STEP)))
                    / (2.0 * C1_FD_STEP);
                fd_max = fd_max.max(rel(an, fd, C1_REL_FLOOR_FD));
            }
        }
        worst_cf = worst_cf.max(cf);
        worst_fd = worst_fd.max(fd_max);
        lines.push(format!(
            "{i}: V={} K={} N={} E={e:?} cf={cf:?} fd={fd_max:?}",
            inst.vocab.len(),
            inst.inventory.len(),
            inst.item.len()
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: bounds_ok && worst_cf < C1_CLOSED_FORM_TOL && worst_fd < C1_FD_TOL && secs < C1_MAX_SECS,
        summary: format!(
            "gradient identity: {C1_INSTANCES} instances, closed-form max rel {worst_cf:.2e} (< {C1_CLOSED_FORM_TOL:.0e}), \
             finite-difference max rel {worst_fd:.2e} (< {C1_FD_TOL:.0e}), {secs:.1}s"
        ),
        detail: lines.join("\n"),
    }
}

/// Raw joint score of a complete sequence: token log-probabilities plus,
/// per segment (closing symbol included), the log speaker posterior of the
/// speaker with the highest average posterior (lowest index on ties).
fn oracle_score(token_lp: &[f64], log_betas: &[Vec<f64>], tokens: &[TokenId], vocab: &Vocabulary) -> f64 {
    let mut total: f64 = token_lp.iter().sum();
    let mut start = 0;
    for n in 0..tokens.len() {
        if tokens[n] == vocab.sc_id() || tokens[n] == vocab.eos_id() {
            let seg = &log_betas[start..=n];
            let k = seg[0].len();
            let avg: Vec<f64> = (0..k).map(|j| seg.iter().map(|lb| lb[j].exp()).sum::<f64>()).collect();
            let mut best = 0;
            for j in 1..k {
                if avg[j] > avg[best] {
                    best = j;
                }
            }
            total += seg.iter().map(|lb| lb[best]).sum::<f64>();
            start = n + 1;
        }
    }
    total
}

/// Best length-normalized complete sequence by enumeration.
fn brute_force_best(
    x: &FeatureSequence,
    inv: &SpeakerInventory,
    params: &ModelParams,
    vocab: &Vocabulary,
    max_len: usize,
) -> Vec<TokenId> {
    let mut tape = Tape::new();
    let enc = encode(&mut tape, x, params).unwrap();
    let profiles = inv.matrix();
    let mut best: Option<(f64, Vec<TokenId>)> = None;
    type Node = (Vec<TokenId>, Vec<f64>, Vec<Vec<f64>>, sambr::model::DecoderState);
    let mut stack: Vec<Node> = vec![(vec![], vec![], vec![], initial_state(params, enc.frames()))];
    while let Some((toks, lps, lbs, state)) = stack.pop() {
        let prev = toks.last().copied().unwrap_or_else(|| start_token(params));
        let out = decoder_step(&mut tape, params, &enc, &profiles, prev, &state).unwrap();
        for y in 0..vocab.len() {
            let (mut t, mut l, mut b) = (toks.clone(), lps.clone(), lbs.clone());
            t.push(y);
            l.push(out.log_token_dist.data()[y]);
            b.push(out.log_speaker_dist.data().to_vec());
            if y == vocab.eos_id() {
                let s = oracle_score(&l, &b, &t, vocab) / t.len() as f64;
                if best.as_ref().is_none_or(|(bs, _)| s > *bs) {
                    best = Some((s, t));
                }
            } else if t.len() < max_len {
                stack.push((t, l, b, out.next_state.clone()));
            }
        }
    }
    best.unwrap().1
}

fn criterion_2(seed: u64) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC2);
    let (mut agree, mut total_len) = (0, 0);
    let mut lines = Vec::new();
    for m in 0..C2_MODELS {
        let words = rng.random_range(1..=3);
        let vocab = Vocabulary::with_words(words).unwrap();
        let max_len = rng.random_range(2..=4);
        let k = rng.random_range(1..=3);
        let inv = SpeakerInventory::new(
            (0..k)
                .map(|i| {
                    SpeakerProfile::new(SpeakerId(i), (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                        .unwrap()
                })
                .collect(),
        )
        .unwrap();
        let cfg = ModelConfig {
            feat_dim: 3,
            enc_dim: 4,
            spk_dim: 3,
            dec_dim: 4,
            vocab_size: vocab.len(),
            start_token: vocab.eos_id(),
            embed_dim: 3,
            att_dim: 3,
            out_dim: 4,
            gamma: 0.1,
        };
        let params = ModelParams::init_scaled(cfg, rng.random(), 1.5).unwrap();
        let frames = rng.random_range(2..=5);
        let x = FeatureSequence::new(frames, 3, (0..frames * 3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap();
        let beam = BeamConfig {
            beam_size: vocab.len().pow(max_len as u32),
            nbest_size: 1,
            max_steps: max_len,
            length_norm: true,
            gamma_decode: 1.0,
        };
        let got = beam_search(&x, &inv, &params, &vocab, &beam).unwrap();
        let got = got.best().unwrap().hypothesis.tokens.clone();
        let want = brute_force_best(&x, &inv, &params, &vocab, max_len);
        if got == want {
            agree += 1;
        }
        total_len += want.len();
        lines.push(format!("{m}: V={} L={max_len} K={k} beam={got:?} brute={want:?}", vocab.len()));
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: agree == C2_MODELS && secs < C2_MAX_SECS,
        summary: format!(
            "exhaustive decode equivalence: {agree}/{C2_MODELS} rank-1 matches, mean length {:.2}, {secs:.1}s",
            total_len as f64 / C2_MODELS as f64
        ),
        detail: lines.join("\n"),
    }
}

fn levenshtein(a: &[usize], b: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for i in 1..=a.len() {
        let mut cur = vec![i; b.len() + 1];
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

/// Minimum over every alignment path, enumerated without memoization.
fn exhaustive_alignment(a: &[usize], b: &[usize]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ar)), Some((y, br))) => {
            let sub = usize::from(x != y) + exhaustive_alignment(ar, br);
            let del = 1 + exhaustive_alignment(ar, b);
            let ins = 1 + exhaustive_alignment(a, br);
            sub.min(del).min(ins)
        }
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..n {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Minimum assignment cost over all permutations of the padded square.
fn brute_assignment(
    rows: usize,
    cols: usize,
    pair: impl Fn(usize, usize) -> usize,
    row_pad: impl Fn(usize) -> usize,
    col_pad: impl Fn(usize) -> usize,
    perms: &[Vec<usize>],
) -> usize {
    perms
        .iter()
        .map(|p| {
            p.iter()
                .enumerate()
                .map(|(i, &j)| match (i < rows, j < cols) {
                    (true, true) => pair(i, j),
                    (true, false) => row_pad(i),
                    (false, true) => col_pad(j),
                    (false, false) => 0,
                })
                .sum::<usize>()
        })
        .min()
        .unwrap()
}

/// Utterances with pairwise distinct speakers drawn from a pool of 8.
fn random_transcript(rng: &mut ChaCha8Rng, max_utts: usize, min_utts: usize) -> AttributedTranscript {
    let n = rng.random_range(min_utts..=max_utts);
    let mut pool: Vec<u32> = (0..8).collect();
    AttributedTranscript {
        utterances: (0..n)
            .map(|_| Utterance {
                speaker: SpeakerId(pool.swap_remove(rng.random_range(0..pool.len()))),
                tokens: (0..rng.random_range(0..=4)).map(|_| rng.random_range(0..4)).collect(),
            })
            .collect(),
    }
}

fn criterion_3(seed: u64) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC3);
    let perms: Vec<Vec<Vec<usize>>> = (0..=C3_MAX_UTTERANCES).map(permutations).collect();
    let (mut ser_bad, mut wer_bad, mut sa_bad, mut ed_bad) = (0, 0, 0, 0);
    let mut checked = [0usize; 4];
    while checked[0] < C3_TRIALS || checked[1] < C3_TRIALS {
        let r = random_transcript(&mut rng, C3_MAX_UTTERANCES, 1);
        let h = random_transcript(&mut rng, C3_MAX_UTTERANCES, 0);
        let n = r.utterances.len().max(h.utterances.len());
        let (ru, hu) = (&r.utterances, &h.utterances);
        if checked[0] < C3_TRIALS {
            let want = brute_assignment(
                ru.len(),
                hu.len(),
                |i, j| usize::from(ru[i].speaker != hu[j].speaker),
                |_| 1,
                |_| 1,
                &perms[n],
            );
            let got = compute_ser(&h, &r).unwrap().errors();
            ser_bad += usize::from(got != want);
            checked[0] += 1;
        }
        if r.word_count() > 0 {
            let want = brute_assignment(
                ru.len(),
                hu.len(),
                |i, j| levenshtein(&hu[j].tokens, &ru[i].tokens),
                |i| ru[i].tokens.len(),
                |j| hu[j].tokens.len(),
                &perms[n],
            );
            wer_bad += usize::from(compute_wer(&h, &r).unwrap().errors() != want);
            checked[1] += 1;

            let mut speakers: Vec<SpeakerId> = ru.iter().chain(hu).map(|u| u.speaker).collect();
            speakers.sort();
            speakers.dedup();
            let concat = |t: &AttributedTranscript, s: SpeakerId| -> Vec<usize> {
                t.utterances.iter().filter(|u| u.speaker == s).flat_map(|u| u.tokens.clone()).collect()
            };
            let want: usize = speakers.iter().map(|&s| levenshtein(&concat(&h, s), &concat(&r, s))).sum();
            if checked[2] < C3_TRIALS {
                sa_bad += usize::from(compute_sa_wer(&h, &r).unwrap().errors() != want);
                checked[2] += 1;
            }
        }
    }
    while checked[3] < C3_TRIALS {
        let a: Vec<usize> = (0..rng.random_range(0..=C3_MAX_EDIT_LEN)).map(|_| rng.random_range(0..3)).collect();
        let b: Vec<usize> = (0..rng.random_range(0..=C3_MAX_EDIT_LEN)).map(|_| rng.random_range(0..3)).collect();
        let s = edit_distance(&a, &b);
        let consistent = a.len() - s.insertions == b.len() - s.deletions;
        ed_bad += usize::from(s.distance() != exhaustive_alignment(&a, &b) || !consistent);
        checked[3] += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    let bad = ser_bad + wer_bad + sa_bad + ed_bad;
    Outcome {
        pass: bad == 0 && checked[2] == C3_TRIALS && secs < C3_MAX_SECS,
        summary: format!(
            "metric oracles: mismatches SER {ser_bad}/{} WER {wer_bad}/{} SA-WER {sa_bad}/{} edit {ed_bad}/{}, {secs:.1}s",
            checked[0], checked[1], checked[2], checked[3]
        ),
        detail: String::new(),
    }
}

fn zero_grads(inst: &Instance, item: &MbrBatchItem) -> (bool, f64) {
    let mut tape = Tape::new();
    let tracked = inst.params.track(&mut tape);
    let fwd = sa_mbr_loss(&mut tape, item, &inst.x, &inst.inventory, &tracked).unwrap();
    let g = tracked.gradients(&tape.backward(&fwd.loss).unwrap());
    let max_abs = g.flat().map(f64::abs).fold(0.0, f64::max);
    let all_zero = g.flat().all(|v| v == 0.0);
    (all_zero, max_abs)
}

fn criterion_4(seed: u64) -> Outcome {
    let start = Instant::now();
    let cfg = gradcheck_cfg(seed ^ 0xC4);
    let (mut single_ok, mut equal_ok, mut equal_cases) = (0, 0, 0);
    let mut worst = 0.0f64;
    for i in 0..C4_INSTANCES {
        let inst = tiny_instance(&cfg, i).unwrap();
        let one = MbrBatchItem::new(vec![inst.item.hyps[0].clone()]).unwrap();
        let (ok, m) = zero_grads(&inst, &one);
        single_ok += usize::from(ok);
        worst = worst.max(m);
        let mut hyps = inst.item.hyps.clone();
        let e = hyps.iter().map(|h| h.error).max().unwrap() + i % 3;
        hyps.iter_mut().for_each(|h| h.error = e);
        let equal = MbrBatchItem::new(hyps).unwrap();
        if equal.len() > 1 {
            equal_cases += 1;
        }
        let (ok, m) = zero_grads(&inst, &equal);
        equal_ok += usize::from(ok);
        worst = worst.max(m);
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: single_ok == C4_INSTANCES && equal_ok == C4_INSTANCES && equal_cases > 0 && secs < C4_MAX_SECS,
        summary: format!(
            "zero-gradient cases: N=1 {single_ok}/{C4_INSTANCES}, equal-error {equal_ok}/{C4_INSTANCES} \
             ({equal_cases} with N>1), max |g| {worst:e} (tolerance 0.0), {secs:.2}s"
        ),
        detail: String::new(),
    }
}

#[test]
fn criterion_1_gradient_identity() {
    report(1, &criterion_1(SEED));
}

#[test]
fn criterion_2_exhaustive_decode() {
    report(2, &criterion_2(SEED));
}

#[test]
fn criterion_3_metric_oracles() {
    report(3, &criterion_3(SEED));
}

#[test]
fn criterion_4_zero_gradients() {
    report(4, &criterion_4(SEED));
}

/// SA-MMI then SA-MBR for every seed, shared by criteria 5 and 6.
fn seed_runs() -> &'static (Vec<SeedOutcome>, f64) {
    static RUNS: OnceLock<(Vec<SeedOutcome>, f64)> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let outcomes = C5_SEEDS
            .iter()
            .map(|&seed| {
                let mut cfg = RunConfig::default().with_seed(seed);
                cfg.synth.dev_size = C5_DEV_SIZE;
                run_seed(&cfg, |_, _| {}).unwrap()
            })
            .collect();
        (outcomes, start.elapsed().as_secs_f64())
    })
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn criterion_5() -> Outcome {
    let (runs, secs) = seed_runs();
    let one_ok = runs.iter().all(|r| r.mmi.sa_wer(Some(1)) < C5_ONE_SPEAKER_MAX);
    let improved = runs.iter().filter(|r| r.improvement(None) > 0.0).count();
    let n = runs.len() as f64;
    let mean_mmi = runs.iter().map(|r| r.mmi.sa_wer(None)).sum::<f64>() / n;
    let mean_mbr = runs.iter().map(|r| r.mbr.sa_wer(None)).sum::<f64>() / n;
    let by_count: Vec<f64> = (1..=3)
        .map(|k| runs.iter().map(|r| r.improvement(Some(k))).sum::<f64>() / n)
        .collect();
    let largest = 1 + (0..3).fold(0, |b, i| if by_count[i] > by_count[b] { i } else { b });
    let per_seed: Vec<String> = runs
        .iter()
        .map(|r| {
            format!(
                "seed {}: 1spk {} total {} -> {} ({:+.2}%)",
                r.seed,
                pct(r.mmi.sa_wer(Some(1))),
                pct(r.mmi.sa_wer(None)),
                pct(r.mbr.sa_wer(None)),
                100.0 * r.relative_improvement()
            )
        })
        .collect();
    Outcome {
        pass: one_ok && mean_mbr <= mean_mmi && improved >= C5_MIN_IMPROVED_SEEDS && largest == 3 && *secs < C5_MAX_SECS,
        summary: format!(
            "SA-MMI -> SA-MBR: {}; improved in {improved}/{} seeds (need {C5_MIN_IMPROVED_SEEDS}), \
             mean total {} -> {}, mean absolute gain 1/2/3 speakers {:.2}/{:.2}/{:.2} points (largest: {largest}), \
             1-speaker SA-MMI < {} in every seed: {one_ok}, {secs:.0}s",
            per_seed.join("; "),
            runs.len(),
            pct(mean_mmi),
            pct(mean_mbr),
            100.0 * by_count[0],
            100.0 * by_count[1],
            100.0 * by_count[2],
            pct(C5_ONE_SPEAKER_MAX),
        ),
        detail: String::new(),
    }
}

fn rows_sum_to_100(c: &CountConfusion) -> bool {
    c.percentages()
        .iter()
        .enumerate()
        .filter(|(i, _)| c.row_total(*i + 1) > 0)
        .all(|(_, row)| (row.iter().sum::<f64>() - 100.0).abs() <= C6_ROW_SUM_TOL)
}

fn criterion_6() -> Outcome {
    let (runs, _) = seed_runs();
    let rows_ok = runs.iter().all(|r| rows_sum_to_100(&r.mmi.confusion) && rows_sum_to_100(&r.mbr.confusion));
    let kept = runs
        .iter()
        .filter(|r| r.mbr.confusion.accuracy(3) >= r.mmi.confusion.accuracy(3))
        .count();
    let diag: Vec<String> = runs
        .iter()
        .map(|r| format!("seed {}: {:.1}% -> {:.1}%", r.seed, r.mmi.confusion.accuracy(3), r.mbr.confusion.accuracy(3)))
        .collect();
    Outcome {
        pass: rows_ok && kept >= C6_MIN_SEEDS,
        summary: format!(
            "speaker counting: rows sum to 100 +/- {C6_ROW_SUM_TOL}: {rows_ok}; 3-speaker diagonal SA-MMI -> SA-MBR {}; \
             not lower in {kept}/{} seeds (need {C6_MIN_SEEDS})",
            diag.join(", "),
            runs.len()
        ),
        detail: String::new(),
    }
}

#[test]
fn criterion_5_mbr_improvement() {
    report(5, &criterion_5());
}

#[test]
fn criterion_6_speaker_counting() {
    report(6, &criterion_6());
}

fn csv_rows(path: &std::path::Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = common::write_small_config(dir.path());
    let base = resolve(Some(&config), &Overrides::default()).unwrap();
    let data = dir.path().join("data");
    cmd_synth(&RunConfig { out: data.clone(), ..base.clone() }).unwrap();
    let mmi = cmd_train_mmi(&RunConfig {
        data: Some(data.clone()),
        out: dir.path().join("mmi"),
        ..base.clone()
    })
    .unwrap();
    let sweep = cmd_sweep(&RunConfig {
        data: Some(data),
        checkpoint: Some(mmi.checkpoint),
        out: dir.path().join("sweep"),
        ..base.clone()
    })
    .unwrap();

    let ln = csv_rows(&sweep.length_norm_csv);
    let ln_keys: Vec<(String, String)> = ln.iter().map(|r| (r[0].clone(), r[1].clone())).collect();
    let want_ln: Vec<(String, String)> = ["on", "off"]
        .iter()
        .flat_map(|n| ["SA-MMI", "SA-MBR"].map(|t| (n.to_string(), t.to_string())))
        .collect();
    let nb: Vec<String> = csv_rows(&sweep.nbest_csv).iter().map(|r| r[0].clone()).collect();
    let bm: Vec<String> = csv_rows(&sweep.beam_csv).iter().map(|r| r[0].clone()).collect();
    let numeric = [&sweep.length_norm_csv, &sweep.nbest_csv, &sweep.beam_csv].iter().all(|p| {
        csv_rows(p)
            .iter()
            .all(|r| r.iter().skip(1).filter(|c| !c.starts_with("SA-")).all(|c| c.parse::<f64>().is_ok_and(f64::is_finite)))
    });
    let pass = ln_keys == want_ln && nb == ["2", "4", "8"] && bm == ["1", "2", "4", "8", "16"] && numeric;
    Outcome {
        pass,
        summary: format!(
            "sweep harness: length-norm rows {:?}, N-best {nb:?}, beam {bm:?}, numeric cells {numeric}, {:.1}s",
            ln_keys.iter().map(|(a, b)| format!("{a}/{b}")).collect::<Vec<_>>(),
            start.elapsed().as_secs_f64()
        ),
        detail: String::new(),
    }
}

#[test]
fn criterion_7_sweep_harness() {
    report(7, &criterion_7());
}

#[test]
fn criterion_8_determinism() {
    let runs: Vec<Vec<String>> = (0..2)
        .map(|_| {
            [criterion_1(SEED), criterion_2(SEED), criterion_3(SEED), criterion_4(SEED)]
                .iter()
                .map(|o| format!("{}\n{}\n{}", o.pass, o.summary_without_timing(), o.detail))
                .collect()
        })
        .collect();
    let same = runs[0] == runs[1];
    report(
        8,
        &Outcome {
            pass: same,
            summary: format!(
                "determinism: criteria 1-4 reports {} across two runs with seed {SEED}",
                if same { "bit-identical" } else { "differ" }
            ),
            detail: String::new(),
        },
    );
}
