//! One seeded SA-MMI → SA-MBR comparison, entirely in memory: generate the
//! train and evaluation splits, train SA-MMI from scratch, evaluate,
//! fine-tune with SA-MBR, evaluate again.

use std::time::Instant;

use serde::Serialize;

use crate::cli::{EvalSummary, RunConfig};
use crate::error::Result;
use crate::metrics::CountConfusion;
use crate::model::ModelParams;
use crate::synthdata::{derive_seed, generate_split, Split, World};
use crate::train::{evaluate, train_mbr, train_mmi, Evaluation};

/// Evaluation of one checkpoint.
#[derive(Debug, Clone, Serialize)]
pub struct Checkpoint {
    pub summary: EvalSummary,
    pub confusion: CountConfusion,
    pub train_secs: f64,
}

impl Checkpoint {
    fn of(ev: &Evaluation, train_secs: f64) -> Self {
        Checkpoint {
            summary: EvalSummary::of(ev),
            confusion: ev.confusion(),
            train_secs,
        }
    }

    pub fn sa_wer(&self, count: Option<usize>) -> f64 {
        match count {
            None => self.summary.sa_wer,
            Some(k) => self.summary.sa_wer_by_count.get(&k).copied().unwrap_or(f64::NAN),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub mmi: Checkpoint,
    pub mbr: Checkpoint,
}

impl SeedOutcome {
    /// SA-WER reduction from SA-MMI to SA-MBR, absolute.
    pub fn improvement(&self, count: Option<usize>) -> f64 {
        self.mmi.sa_wer(count) - self.mbr.sa_wer(count)
    }

    /// SA-WER reduction relative to the SA-MMI value.
    pub fn relative_improvement(&self) -> f64 {
        self.improvement(None) / self.mmi.sa_wer(None)
    }
}

/// Run the comparison for `cfg.seed`; sub-seeds must already be derived
/// (see [`RunConfig::with_seed`]). Evaluation uses `cfg.split` and `cfg.beam`.
pub fn run_seed(cfg: &RunConfig, mut on_stage: impl FnMut(&str, &Checkpoint)) -> Result<SeedOutcome> {
    cfg.synth.validate()?;
    let world = World::new(&cfg.synth)?;
    let train = generate_split(&cfg.synth, &world, Split::Train)?;
    let eval = generate_split(&cfg.synth, &world, cfg.split)?;
    let vocab = cfg.synth.vocabulary();
    let mc = cfg
        .model
        .config(cfg.synth.feat_dim, cfg.synth.profile_dim, &vocab, cfg.mmi.gamma);
    let mut params = ModelParams::init_scaled(mc, derive_seed(cfg.seed, "init"), cfg.model.init_range)?;

    let start = Instant::now();
    train_mmi(&mut params, &train, &cfg.mmi, |_, _| Ok(()))?;
    let mmi = Checkpoint::of(&evaluate(&params, &eval, &vocab, &cfg.beam)?, start.elapsed().as_secs_f64());
    on_stage("SA-MMI", &mmi);

    let start = Instant::now();
    train_mbr(&mut params, &train, &vocab, &cfg.mbr, |_, _| Ok(()))?;
    let mbr = Checkpoint::of(&evaluate(&params, &eval, &vocab, &cfg.beam)?, start.elapsed().as_secs_f64());
    on_stage("SA-MBR", &mbr);

    Ok(SeedOutcome {
        seed: cfg.seed,
        mmi,
        mbr,
    })
}
