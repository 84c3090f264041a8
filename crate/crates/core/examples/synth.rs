//! Generate overlapped-speech samples and print one mixture per speaker
//! count; with an output directory, write the full dataset there.
//!
//! ```text
//! cargo run --release --example synth -- [out_dir]
//! ```

use std::path::Path;

use sambr::synthdata::{generate_dataset, generate_sample, Split, SynthConfig, World};

fn main() -> sambr::Result<()> {
    let cfg = SynthConfig {
        seed: 3,
        ..SynthConfig::default()
    };
    let world = World::new(&cfg)?;
    let vocab = cfg.vocabulary();
    for count in 1..=cfg.s_max {
        let s = generate_sample(&cfg, &world, Split::Dev, count, count as u64, format!("demo-{count}"))?;
        let words: Vec<&str> = s.reference.tokens.iter().map(|&t| vocab.token(t).unwrap_or("?")).collect();
        println!("{} speakers, {} frames x {} dims", count, s.x.len(), s.x.dim());
        println!("  reference  {}", words.join(" "));
        println!("  speakers   {:?}", s.reference.distinct_speakers());
        println!("  spans      {:?}", s.spans());
        println!(
            "  inventory  {:?}",
            s.inventory.profiles().iter().map(|p| p.speaker_id).collect::<Vec<_>>()
        );
    }
    if let Some(out) = std::env::args().nth(1) {
        let manifest = generate_dataset(&cfg, Path::new(&out))?;
        for (name, split) in &manifest.splits {
            println!("{name}: {} samples in {}", split.count, split.file);
        }
    }
    Ok(())
}
