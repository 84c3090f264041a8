//! Seeded SA-MMI → SA-MBR comparison with per-speaker-count SA-WER and the
//! 3-speaker counting accuracy.
//!
//! ```text
//! cargo run --release --example experiment -- [config.toml] [seed ...]
//! ```

use std::path::Path;

use sambr::cli::{parse_config, RunConfig};
use sambr::experiment::{run_seed, Checkpoint};

fn line(tag: &str, c: &Checkpoint) {
    let by: Vec<String> = c
        .summary
        .sa_wer_by_count
        .iter()
        .map(|(k, w)| format!("{k}spk {:.2}%", 100.0 * w))
        .collect();
    println!(
        "  {tag:<6} SA-WER {:.2}% | {} | 3spk counting {:.1}% | {:.0}s",
        100.0 * c.summary.sa_wer,
        by.join(" "),
        c.confusion.accuracy(3),
        c.train_secs
    );
}

fn main() -> sambr::Result<()> {
    let mut args = std::env::args().skip(1).peekable();
    let base = match args.peek() {
        Some(a) if a.ends_with(".toml") => parse_config(Path::new(&args.next().unwrap()))?,
        _ => RunConfig::default(),
    };
    let seeds: Vec<u64> = args.map(|a| a.parse().expect("seed must be an integer")).collect();
    let seeds = if seeds.is_empty() { vec![0] } else { seeds };
    for seed in seeds {
        println!("seed {seed}");
        let out = run_seed(&base.clone().with_seed(seed), |tag, c| line(tag, c))?;
        println!(
            "  relative SA-WER improvement {:.2}%, by count: {}",
            100.0 * out.relative_improvement(),
            (1..=3)
                .map(|k| format!("{k}spk {:+.2}", 100.0 * out.improvement(Some(k))))
                .collect::<Vec<_>>()
                .join(" ")
        );
    }
    Ok(())
}
