//! Command implementations behind the `sambr` binary.
//!
//! Configuration resolves in three layers: built-in defaults, then an
//! optional TOML file, then command-line overrides. Every command writes
//! `resolved_config.json` into its output directory. All sub-seeds derive
//! from the top-level `seed` by named substreams.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decode::{beam_search, BeamConfig, NBestRecord, SPEAKER_SCORING};
use crate::domain::Vocabulary;
use crate::error::{Error, Result};
use crate::gradcheck::{self, GradcheckConfig, GradcheckReport};
use crate::jsonl;
use crate::metrics::{speaker_count_confusion, MetricAccumulator, MetricReport};
use crate::model::{ModelConfig, ModelParams};
use crate::synthdata::{
    derive_seed, generate_dataset, read_samples, Manifest, Sample, Split, SynthConfig,
};
use crate::train::{evaluate, train_mbr, train_mmi, Evaluation, MbrConfig, MmiConfig, StepLog};

/// Model sizes not implied by the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelDims {
    pub enc_dim: usize,
    pub dec_dim: usize,
    pub embed_dim: usize,
    pub att_dim: usize,
    pub out_dim: usize,
    pub init_range: f64,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            enc_dim: 64,
            dec_dim: 64,
            embed_dim: 16,
            att_dim: 48,
            out_dim: 64,
            init_range: 0.1,
        }
    }
}

impl ModelDims {
    pub fn config(&self, feat_dim: usize, spk_dim: usize, vocab: &Vocabulary, gamma: f64) -> ModelConfig {
        ModelConfig {
            feat_dim,
            enc_dim: self.enc_dim,
            spk_dim,
            dec_dim: self.dec_dim,
            vocab_size: vocab.len(),
            start_token: vocab.eos_id(),
            embed_dim: self.embed_dim,
            att_dim: self.att_dim,
            out_dim: self.out_dim,
            gamma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub nbest_sizes: Vec<usize>,
    pub beam_sizes: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            nbest_sizes: vec![2, 4, 8],
            beam_sizes: vec![1, 2, 4, 8, 16],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Dataset directory written by `synth`.
    pub data: Option<PathBuf>,
    /// Model checkpoint read by `decode`, `train-mbr` and `sweep`.
    pub checkpoint: Option<PathBuf>,
    /// Split decoded, scored and used for dev curves.
    pub split: Split,
    /// N-best JSONL scored by `score`.
    pub hyp: Option<PathBuf>,
    /// Dev-set evaluation interval in epochs; 0 disables it.
    pub eval_every: usize,
    pub synth: SynthConfig,
    pub model: ModelDims,
    pub mmi: MmiConfig,
    pub mbr: MbrConfig,
    /// Decoding settings for `decode`, dev curves and sweeps.
    pub beam: BeamConfig,
    pub gradcheck: GradcheckConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("out"),
            data: None,
            checkpoint: None,
            split: Split::Dev,
            hyp: None,
            eval_every: 1,
            synth: SynthConfig::default(),
            model: ModelDims::default(),
            mmi: MmiConfig {
                epochs: 80,
                lr: 2e-3,
                lr_final_fraction: 0.1,
                ..MmiConfig::default()
            },
            mbr: MbrConfig {
                epochs: 3,
                lr: 3e-4,
                ..MbrConfig::default()
            },
            beam: BeamConfig::default(),
            gradcheck: GradcheckConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    /// Set the top-level seed and every sub-seed derived from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.synth.seed = derive_seed(seed, "synth");
        self.mmi.seed = derive_seed(seed, "mmi");
        self.mbr.seed = derive_seed(seed, "mbr");
        self.gradcheck.seed = derive_seed(seed, "gradcheck");
        self
    }
}

/// Command-line values that override the file and defaults.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub beam: Option<usize>,
    pub nbest: Option<usize>,
    pub length_norm: Option<bool>,
    pub gamma_mmi: Option<f64>,
    pub gamma_decode: Option<f64>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub split: Option<Split>,
    pub hyp: Option<PathBuf>,
}

/// Parse a TOML config; syntax and schema errors carry the line number.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| {
        let line = e
            .span()
            .map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        Error::Parse {
            path: path.display().to_string(),
            line,
            message: e.message().to_string(),
        }
    })
}

/// Defaults, then `file`, then `ov`; sub-seeds derive from the final seed.
pub fn resolve(file: Option<&Path>, ov: &Overrides) -> Result<RunConfig> {
    let mut c = match file {
        Some(p) => parse_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = ov.seed {
        c.seed = v;
    }
    if let Some(v) = ov.beam {
        c.beam.beam_size = v;
        c.mbr.beam.beam_size = v;
    }
    if let Some(v) = ov.nbest {
        c.beam.nbest_size = v;
        c.mbr.beam.nbest_size = v;
    }
    if let Some(v) = ov.length_norm {
        c.beam.length_norm = v;
        c.mbr.beam.length_norm = v;
    }
    if let Some(v) = ov.gamma_mmi {
        c.mmi.gamma = v;
        c.mbr.gamma_mmi = v;
    }
    if let Some(v) = ov.gamma_decode {
        c.beam.gamma_decode = v;
        c.mbr.beam.gamma_decode = v;
    }
    if let Some(v) = &ov.out {
        c.out = v.clone();
    }
    if let Some(v) = &ov.data {
        c.data = Some(v.clone());
    }
    if let Some(v) = &ov.checkpoint {
        c.checkpoint = Some(v.clone());
    }
    if let Some(v) = ov.split {
        c.split = v;
    }
    if let Some(v) = &ov.hyp {
        c.hyp = Some(v.clone());
    }
    let seed = c.seed;
    let c = c.with_seed(seed);
    c.synth.validate()?;
    c.beam.validate()?;
    c.mbr.beam.validate()?;
    c.gradcheck.validate()?;
    Ok(c)
}

fn prepare_out(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    write_text(&cfg.out.join("resolved_config.json"), &serde_json::to_string_pretty(cfg)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn require<'a>(v: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
    v.as_ref().ok_or_else(|| Error::Config(format!("{what} path is required")))
}

/// Dataset directory contents.
pub struct Dataset {
    pub manifest: Manifest,
    pub dir: PathBuf,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        Ok(Dataset {
            manifest: Manifest::load(dir)?,
            dir: dir.to_path_buf(),
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.manifest.vocabulary
    }

    pub fn split_path(&self, split: Split) -> Result<PathBuf> {
        let s = self
            .manifest
            .splits
            .get(split.name())
            .ok_or_else(|| Error::Config(format!("dataset has no {} split", split.name())))?;
        Ok(self.dir.join(&s.file))
    }

    pub fn load(&self, split: Split) -> Result<Vec<Sample>> {
        read_samples(&self.split_path(split)?, self.vocab())
    }
}

/// Generate the synthetic dataset into `out`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<Manifest> {
    prepare_out(cfg)?;
    generate_dataset(&cfg.synth, &cfg.out)
}

fn curve_csv(log: &[StepLog], loss_name: &str) -> String {
    let mut s = format!("step,epoch,{loss_name},grad_norm\n");
    for l in log {
        let _ = writeln!(s, "{},{},{},{}", l.step, l.epoch, l.loss, l.grad_norm);
    }
    s
}

/// Per-epoch dev SA-WER rows.
#[derive(Debug, Clone, Default)]
struct DevCurve {
    rows: Vec<(usize, Evaluation)>,
}

impl DevCurve {
    fn csv(&self, s_max: usize) -> String {
        let mut s = String::from("epoch,sa_wer");
        for k in 1..=s_max {
            let _ = write!(s, ",sa_wer_{k}spk");
        }
        s.push('\n');
        for (e, ev) in &self.rows {
            let _ = write!(s, "{e},{}", ev.sa_wer(None));
            for k in 1..=s_max {
                let _ = write!(s, ",{}", ev.sa_wer(Some(k)));
            }
            s.push('\n');
        }
        s
    }
}

/// Summary printed by the training commands.
#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub steps: usize,
    pub final_loss: f64,
    pub dev: Option<EvalSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub sa_wer: f64,
    /// SA-WER keyed by true speaker count.
    pub sa_wer_by_count: BTreeMap<usize, f64>,
    /// Speaker-counting accuracy (%) keyed by true speaker count.
    pub count_accuracy: BTreeMap<usize, f64>,
}

impl EvalSummary {
    pub fn of(ev: &Evaluation) -> Self {
        let conf = ev.confusion();
        EvalSummary {
            sa_wer: ev.sa_wer(None),
            sa_wer_by_count: ev.by_count.keys().map(|&k| (k, ev.sa_wer(Some(k)))).collect(),
            count_accuracy: ev.by_count.keys().map(|&k| (k, conf.accuracy(k))).collect(),
        }
    }
}

fn eval_hook<'a>(
    cfg: &'a RunConfig,
    dev: &'a [Sample],
    vocab: &'a Vocabulary,
    curve: &'a mut DevCurve,
) -> impl FnMut(usize, &ModelParams) -> Result<()> + 'a {
    move |epoch, p| {
        if cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0 {
            curve.rows.push((epoch, evaluate(p, dev, vocab, &cfg.beam)?));
        }
        Ok(())
    }
}

/// SA-MMI training from a fresh initialization.
pub fn cmd_train_mmi(cfg: &RunConfig) -> Result<TrainSummary> {
    prepare_out(cfg)?;
    let data = Dataset::open(require(&cfg.data, "data")?)?;
    let (train, dev) = (data.load(Split::Train)?, data.load(cfg.split)?);
    let vocab = data.vocab().clone();
    let synth = &data.manifest.config;
    let mc = cfg.model.config(synth.feat_dim, synth.profile_dim, &vocab, cfg.mmi.gamma);
    let mut params = ModelParams::init_scaled(mc, derive_seed(cfg.seed, "init"), cfg.model.init_range)?;
    let mut curve = DevCurve::default();
    let log = train_mmi(&mut params, &train, &cfg.mmi, eval_hook(cfg, &dev, &vocab, &mut curve))?;
    finish_training(cfg, &params, &log, &curve, "mmi", "loss", synth.s_max)
}

/// SA-MBR fine-tuning of `checkpoint`.
pub fn cmd_train_mbr(cfg: &RunConfig) -> Result<TrainSummary> {
    prepare_out(cfg)?;
    let data = Dataset::open(require(&cfg.data, "data")?)?;
    let (train, dev) = (data.load(Split::Train)?, data.load(cfg.split)?);
    let vocab = data.vocab().clone();
    let mut params = ModelParams::load(require(&cfg.checkpoint, "checkpoint")?)?;
    let mut curve = DevCurve::default();
    let log = train_mbr(&mut params, &train, &vocab, &cfg.mbr, eval_hook(cfg, &dev, &vocab, &mut curve))?;
    let s_max = data.manifest.config.s_max;
    finish_training(cfg, &params, &log, &curve, "mbr", "expected_error", s_max)
}

fn finish_training(
    cfg: &RunConfig,
    params: &ModelParams,
    log: &[StepLog],
    curve: &DevCurve,
    tag: &str,
    loss_name: &str,
    s_max: usize,
) -> Result<TrainSummary> {
    let checkpoint = cfg.out.join(format!("{tag}.ckpt.json"));
    params.save(&checkpoint)?;
    write_text(&cfg.out.join(format!("{tag}_curve.csv")), &curve_csv(log, loss_name))?;
    write_text(&cfg.out.join(format!("{tag}_dev.csv")), &curve.csv(s_max))?;
    Ok(TrainSummary {
        checkpoint,
        steps: log.len(),
        final_loss: log.last().map_or(f64::NAN, |l| l.loss),
        dev: curve.rows.last().map(|(_, ev)| EvalSummary::of(ev)),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DecodeSummary {
    pub nbest: PathBuf,
    pub samples: usize,
    pub entries: usize,
    /// How the search scores speakers; see [`SPEAKER_SCORING`].
    pub speaker_scoring: &'static str,
}

/// Decode `split` with `checkpoint` into `nbest.jsonl`.
pub fn cmd_decode(cfg: &RunConfig) -> Result<DecodeSummary> {
    prepare_out(cfg)?;
    let data = Dataset::open(require(&cfg.data, "data")?)?;
    let samples = data.load(cfg.split)?;
    let params = ModelParams::load(require(&cfg.checkpoint, "checkpoint")?)?;
    let mut records = Vec::new();
    for s in &samples {
        let nb = beam_search(&s.x, &s.inventory, &params, data.vocab(), &cfg.beam)?;
        for (rank, e) in nb.entries.iter().enumerate() {
            records.push(NBestRecord::from_entry(&s.id, rank, e, &s.inventory, false));
        }
    }
    let path = cfg.out.join("nbest.jsonl");
    jsonl::write(&path, &records)?;
    Ok(DecodeSummary {
        nbest: path,
        samples: samples.len(),
        entries: records.len(),
        speaker_scoring: SPEAKER_SCORING,
    })
}

/// Rank-0 record for every sample reproducing its reference exactly.
pub fn reference_records(samples: &[Sample], vocab: &Vocabulary) -> Result<Vec<NBestRecord>> {
    samples
        .iter()
        .map(|s| {
            let spans = crate::decode::segment_spans(&s.reference.tokens, vocab);
            Ok(NBestRecord {
                ref_id: s.id.clone(),
                rank: 0,
                tokens: s.reference.tokens.clone(),
                speakers_per_segment: spans.iter().map(|sp| s.reference.speakers[sp.0]).collect(),
                betas: None,
                log_joint: 0.0,
                norm_score: 0.0,
                truncated: false,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoreReport {
    pub total: MetricReport,
    pub by_count: BTreeMap<usize, MetricReport>,
    pub count_accuracy: BTreeMap<usize, f64>,
}

/// Score the rank-0 hypotheses in `hyp` against `split` of `data`.
pub fn cmd_score(cfg: &RunConfig) -> Result<ScoreReport> {
    prepare_out(cfg)?;
    let data = Dataset::open(require(&cfg.data, "data")?)?;
    let samples = data.load(cfg.split)?;
    let hyp_path = require(&cfg.hyp, "hyp")?;
    let records: Vec<NBestRecord> = jsonl::read(hyp_path)?;
    let vocab = data.vocab();
    let mut best: BTreeMap<&str, (usize, &NBestRecord)> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if r.rank == 0 {
            if best.insert(&r.ref_id, (i, r)).is_some() {
                return Err(jsonl::at_line(
                    hyp_path,
                    i,
                    Error::Contract(format!("duplicate rank-0 hypothesis for {}", r.ref_id)),
                ));
            }
        }
    }
    let mut total = MetricAccumulator::default();
    let mut by_count: BTreeMap<usize, MetricAccumulator> = BTreeMap::new();
    let mut counts = Vec::new();
    for s in &samples {
        let (line, rec) = best
            .get(s.id.as_str())
            .ok_or_else(|| Error::Contract(format!("no rank-0 hypothesis for {}", s.id)))?;
        let hyp = rec.transcript(vocab).map_err(|e| jsonl::at_line(hyp_path, *line, e))?;
        let reference = s.reference.to_transcript(vocab)?;
        total.add(&hyp, &reference)?;
        by_count.entry(s.true_count).or_default().add(&hyp, &reference)?;
        counts.push((crate::decode::estimate_speaker_count(&hyp), s.true_count));
    }
    let confusion = speaker_count_confusion(&counts);
    write_text(&cfg.out.join("confusion.csv"), &confusion.to_csv())?;
    let report = ScoreReport {
        total: total.report(),
        by_count: by_count.iter().map(|(k, a)| (*k, a.report())).collect(),
        count_accuracy: by_count.keys().map(|&k| (k, confusion.accuracy(k))).collect(),
    };
    write_text(&cfg.out.join("metrics.json"), &serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Randomized gradient verification; the report lands in `gradcheck.json`.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<GradcheckReport> {
    prepare_out(cfg)?;
    let report = gradcheck::run(&cfg.gradcheck)?;
    write_text(&cfg.out.join("gradcheck.json"), &serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub length_norm_csv: PathBuf,
    pub nbest_csv: PathBuf,
    pub beam_csv: PathBuf,
}

fn rel_improvement(base: f64, new: f64) -> f64 {
    if base > 0.0 {
        (base - new) / base
    } else {
        0.0
    }
}

/// Ablation tables from the SA-MMI checkpoint in `checkpoint`:
/// length normalization on/off for both trainings, SA-MBR N-best size,
/// and decoding beam size.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<SweepReport> {
    prepare_out(cfg)?;
    let data = Dataset::open(require(&cfg.data, "data")?)?;
    let (train, dev) = (data.load(Split::Train)?, data.load(cfg.split)?);
    let vocab = data.vocab().clone();
    let mmi = ModelParams::load(require(&cfg.checkpoint, "checkpoint")?)?;
    let decode_cfg = |beam: usize, ln: bool| BeamConfig {
        beam_size: beam,
        nbest_size: cfg.beam.nbest_size.min(beam),
        length_norm: ln,
        ..cfg.beam.clone()
    };
    let mbr_from = |nbest: usize, ln: bool| -> Result<ModelParams> {
        let mut p = mmi.clone();
        let mc = MbrConfig {
            beam: BeamConfig {
                nbest_size: nbest,
                beam_size: cfg.mbr.beam.beam_size.max(nbest),
                length_norm: ln,
                ..cfg.mbr.beam.clone()
            },
            ..cfg.mbr.clone()
        };
        train_mbr(&mut p, &train, &vocab, &mc, |_, _| Ok(()))?;
        Ok(p)
    };
    let sa_wer = |p: &ModelParams, b: &BeamConfig| -> Result<f64> {
        Ok(evaluate(p, &dev, &vocab, b)?.sa_wer(None))
    };
    let default_n = cfg.mbr.beam.nbest_size;
    let beam = cfg.beam.beam_size;

    let mut ln_csv = String::from("length_norm,training,sa_wer\n");
    let mut mbr_ln_on = None;
    for ln in [true, false] {
        let b = decode_cfg(beam, ln);
        let mbr = mbr_from(default_n, ln)?;
        let tag = if ln { "on" } else { "off" };
        let _ = writeln!(ln_csv, "{tag},SA-MMI,{}", sa_wer(&mmi, &b)?);
        let _ = writeln!(ln_csv, "{tag},SA-MBR,{}", sa_wer(&mbr, &b)?);
        if ln {
            mbr_ln_on = Some(mbr);
        }
    }
    let mbr_default = mbr_ln_on.expect("length-norm on variant trained");

    let base = sa_wer(&mmi, &decode_cfg(beam, true))?;
    let mut n_csv = String::from("nbest,sa_wer_mmi,sa_wer_mbr,rel_improvement\n");
    for &n in &cfg.sweep.nbest_sizes {
        let p = if n == default_n {
            mbr_default.clone()
        } else {
            mbr_from(n, true)?
        };
        let w = sa_wer(&p, &decode_cfg(beam, true))?;
        let _ = writeln!(n_csv, "{n},{base},{w},{}", rel_improvement(base, w));
    }

    let mut b_csv = String::from("beam,sa_wer_mmi,sa_wer_mbr,rel_improvement\n");
    for &b in &cfg.sweep.beam_sizes {
        let bc = decode_cfg(b, true);
        let (m, r) = (sa_wer(&mmi, &bc)?, sa_wer(&mbr_default, &bc)?);
        let _ = writeln!(b_csv, "{b},{m},{r},{}", rel_improvement(m, r));
    }

    let report = SweepReport {
        length_norm_csv: cfg.out.join("sweep_length_norm.csv"),
        nbest_csv: cfg.out.join("sweep_nbest.csv"),
        beam_csv: cfg.out.join("sweep_beam.csv"),
    };
    write_text(&report.length_norm_csv, &ln_csv)?;
    write_text(&report.nbest_csv, &n_csv)?;
    write_text(&report.beam_csv, &b_csv)?;
    Ok(report)
}

/// Machine-readable error body for failed commands.
pub fn error_json(e: &Error) -> String {
    let mut v = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
    if let Error::Parse { path, line, .. } = e {
        v["path"] = path.clone().into();
        v["line"] = (*line).into();
    }
    v.to_string()
}
