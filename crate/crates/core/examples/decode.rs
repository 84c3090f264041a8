//! Beam search with speaker attribution on a freshly initialized model:
//! prints the N-best list with per-segment speakers and scores.

use sambr::decode::{beam_search, BeamConfig};
use sambr::model::{ModelConfig, ModelParams};
use sambr::synthdata::{generate_sample, Split, SynthConfig, World};

fn main() -> sambr::Result<()> {
    let cfg = SynthConfig::default();
    let world = World::new(&cfg)?;
    let vocab = cfg.vocabulary();
    let sample = generate_sample(&cfg, &world, Split::Test, 2, 11, "demo".into())?;
    let params = ModelParams::init(ModelConfig::small(cfg.feat_dim, cfg.profile_dim, &vocab), 5)?;
    let beam = BeamConfig {
        beam_size: 8,
        nbest_size: 4,
        max_steps: 12,
        ..BeamConfig::default()
    };
    let nbest = beam_search(&sample.x, &sample.inventory, &params, &vocab, &beam)?;
    for (rank, e) in nbest.entries.iter().enumerate() {
        let words: Vec<&str> = e.hypothesis.tokens.iter().map(|&t| vocab.token(t).unwrap_or("?")).collect();
        let speakers: Vec<_> = e
            .attribution
            .segment_speakers
            .iter()
            .map(|&k| sample.inventory.speaker(k))
            .collect();
        println!(
            "{rank}: {:<40} speakers {:?} log_joint {:.3} normalized {:.3}{}",
            words.join(" "),
            speakers,
            e.hypothesis.log_joint,
            e.norm_score,
            if e.hypothesis.truncated { " (truncated)" } else { "" }
        );
    }
    Ok(())
}
