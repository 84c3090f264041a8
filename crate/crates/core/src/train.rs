//! Training loops and corpus evaluation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::decode::{beam_search, estimate_speaker_count, BeamConfig, NBestList};
use crate::domain::Vocabulary;
use crate::error::{Error, Result};
use crate::metrics::{speaker_count_confusion, CountConfusion, MetricAccumulator, MetricReport};
use crate::model::{ModelParams, ParamGrads, GAMMA_MMI};
use crate::optim::Adam;
use crate::risk::{sa_mbr_loss, sa_mmi_loss, MbrBatchItem};
use crate::synthdata::Sample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmiConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate at the last step as a fraction of `lr`; the rate falls
    /// linearly from `lr`.
    pub lr_final_fraction: f64,
    pub gamma: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for MmiConfig {
    fn default() -> Self {
        MmiConfig {
            epochs: 10,
            batch_size: 8,
            lr: 2e-4,
            lr_final_fraction: 1.0,
            gamma: GAMMA_MMI,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MbrConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Weight of an added SA-MMI term; 0 trains on expected risk alone.
    pub mmi_weight: f64,
    pub gamma_mmi: f64,
    pub clip_norm: f64,
    /// Decoding settings used to build the N-best list.
    pub beam: BeamConfig,
    /// Optimizer steps between N-best refreshes per sample; 1 decodes with
    /// the current parameters at every step.
    pub nbest_refresh: usize,
    pub seed: u64,
}

impl Default for MbrConfig {
    fn default() -> Self {
        MbrConfig {
            epochs: 1,
            batch_size: 8,
            lr: 4e-6,
            mmi_weight: 0.0,
            gamma_mmi: GAMMA_MMI,
            clip_norm: 5.0,
            beam: BeamConfig::default(),
            nbest_refresh: 1,
            seed: 0,
        }
    }
}

fn check_common(batch: usize, lr: f64) -> Result<()> {
    if batch == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Config("learning rate must be positive".into()));
    }
    Ok(())
}

/// One logged optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    /// Mean per-sample loss over the batch (SA-MMI) or mean `Ē_r` (SA-MBR).
    pub loss: f64,
    pub grad_norm: f64,
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

/// SA-MMI gradient summed over `batch`, with the summed loss.
pub fn mmi_batch_grads(
    params: &ModelParams,
    batch: &[&Sample],
    gamma: f64,
) -> Result<(f64, ParamGrads)> {
    let mut grads = ParamGrads::zeros_like(params);
    let mut total = 0.0;
    for s in batch {
        let mut tape = Tape::new();
        let tracked = params.track(&mut tape);
        let loss = sa_mmi_loss(&mut tape, &s.reference, &s.x, &s.inventory, &tracked, gamma)?;
        total += loss.item();
        grads.add_assign(&tracked.gradients(&tape.backward(&loss)?));
    }
    Ok((total, grads))
}

/// Adam on the batch-mean SA-MMI loss. `on_epoch` runs after every epoch.
pub fn train_mmi(
    params: &mut ModelParams,
    train: &[Sample],
    cfg: &MmiConfig,
    mut on_epoch: impl FnMut(usize, &ModelParams) -> Result<()>,
) -> Result<Vec<StepLog>> {
    check_common(cfg.batch_size, cfg.lr)?;
    if !(0.0..=1.0).contains(&cfg.lr_final_fraction) {
        return Err(Error::Config("lr_final_fraction must lie in [0, 1]".into()));
    }
    let mut opt = Adam::new(params, cfg.lr);
    opt.clip_norm = Some(cfg.clip_norm);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::new();
    let total_steps = (cfg.epochs * train.len().div_ceil(cfg.batch_size)).max(2) - 1;
    for epoch in 0..cfg.epochs {
        let order = shuffled(train.len(), &mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let progress = log.len() as f64 / total_steps as f64;
            opt.lr = cfg.lr * (1.0 - (1.0 - cfg.lr_final_fraction) * progress);
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, mut grads) = mmi_batch_grads(params, &batch, cfg.gamma)?;
            grads.scale(1.0 / batch.len() as f64);
            log.push(StepLog {
                step: log.len(),
                epoch,
                loss: loss / batch.len() as f64,
                grad_norm: grads.norm(),
            });
            opt.step(params, &grads);
        }
        on_epoch(epoch, params)?;
    }
    Ok(log)
}

/// Decode `sample` and build its SA-MBR item.
pub fn mbr_item(
    params: &ModelParams,
    sample: &Sample,
    vocab: &Vocabulary,
    beam: &BeamConfig,
) -> Result<MbrBatchItem> {
    let nbest = beam_search(&sample.x, &sample.inventory, params, vocab, beam)?;
    MbrBatchItem::from_nbest(&nbest, &sample.reference, vocab)
}

/// SA-MBR gradient of one sample for a fixed N-best item, with `Ē_r`.
pub fn mbr_sample_grads(
    params: &ModelParams,
    sample: &Sample,
    item: &MbrBatchItem,
) -> Result<(f64, ParamGrads)> {
    let mut tape = Tape::new();
    let tracked = params.track(&mut tape);
    let fwd = sa_mbr_loss(&mut tape, item, &sample.x, &sample.inventory, &tracked)?;
    let grads = tracked.gradients(&tape.backward(&fwd.loss)?);
    Ok((fwd.expected_error, grads))
}

/// Adam on the batch-mean expected error, N-best lists regenerated per
/// `nbest_refresh`.
pub fn train_mbr(
    params: &mut ModelParams,
    train: &[Sample],
    vocab: &Vocabulary,
    cfg: &MbrConfig,
    mut on_epoch: impl FnMut(usize, &ModelParams) -> Result<()>,
) -> Result<Vec<StepLog>> {
    check_common(cfg.batch_size, cfg.lr)?;
    cfg.beam.validate()?;
    if cfg.nbest_refresh == 0 {
        return Err(Error::Config("nbest_refresh must be at least 1".into()));
    }
    let mut opt = Adam::new(params, cfg.lr);
    opt.clip_norm = Some(cfg.clip_norm);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cache: BTreeMap<usize, (usize, MbrBatchItem)> = BTreeMap::new();
    let mut log = Vec::new();
    for epoch in 0..cfg.epochs {
        let order = shuffled(train.len(), &mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let step = log.len();
            let mut grads = ParamGrads::zeros_like(params);
            let mut risk = 0.0;
            for &i in chunk {
                let s = &train[i];
                let stale = cache
                    .get(&i)
                    .is_none_or(|(at, _)| step - at >= cfg.nbest_refresh);
                if stale {
                    cache.insert(i, (step, mbr_item(params, s, vocab, &cfg.beam)?));
                }
                let (e, g) = mbr_sample_grads(params, s, &cache[&i].1)?;
                risk += e;
                grads.add_assign(&g);
                if cfg.mmi_weight != 0.0 {
                    let (_, mut g) = mmi_batch_grads(params, &[s], cfg.gamma_mmi)?;
                    g.scale(cfg.mmi_weight);
                    grads.add_assign(&g);
                }
            }
            grads.scale(1.0 / chunk.len() as f64);
            log.push(StepLog {
                step,
                epoch,
                loss: risk / chunk.len() as f64,
                grad_norm: grads.norm(),
            });
            opt.step(params, &grads);
        }
        on_epoch(epoch, params)?;
    }
    Ok(log)
}

/// Corpus-level decode results.
#[derive(Debug, Clone, Default)]
pub struct Evaluation {
    pub total: MetricAccumulator,
    /// Accumulators keyed by true speaker count.
    pub by_count: BTreeMap<usize, MetricAccumulator>,
    /// `(estimated, actual)` speaker counts per sample.
    pub counts: Vec<(usize, usize)>,
    pub nbest: Vec<NBestList>,
}

impl Evaluation {
    pub fn confusion(&self) -> CountConfusion {
        speaker_count_confusion(&self.counts)
    }

    pub fn report(&self) -> EvaluationReport {
        EvaluationReport {
            total: self.total.report(),
            by_count: self.by_count.iter().map(|(k, a)| (*k, a.report())).collect(),
        }
    }

    /// SA-WER over samples with `count` true speakers.
    pub fn sa_wer(&self, count: Option<usize>) -> f64 {
        let acc = match count {
            None => Some(&self.total),
            Some(k) => self.by_count.get(&k),
        };
        acc.map_or(f64::NAN, |a| a.sa_wer_errors() as f64 / a.ref_words() as f64)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationReport {
    pub total: MetricReport,
    pub by_count: BTreeMap<usize, MetricReport>,
}

/// Decode every sample and score its rank-1 hypothesis.
pub fn evaluate(
    params: &ModelParams,
    samples: &[Sample],
    vocab: &Vocabulary,
    beam: &BeamConfig,
) -> Result<Evaluation> {
    let mut ev = Evaluation::default();
    for s in samples {
        let nbest = beam_search(&s.x, &s.inventory, params, vocab, beam)?;
        let reference = s.reference.to_transcript(vocab)?;
        let hyp = nbest
            .best()
            .map(|e| e.attribution.transcript.clone())
            .unwrap_or_default();
        ev.total.add(&hyp, &reference)?;
        ev.by_count.entry(s.true_count).or_default().add(&hyp, &reference)?;
        ev.counts.push((estimate_speaker_count(&hyp), s.true_count));
        ev.nbest.push(nbest);
    }
    Ok(ev)
}
