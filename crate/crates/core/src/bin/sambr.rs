use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sambr::cli::{self, Overrides};
use sambr::synthdata::Split;

#[derive(Parser)]
#[command(name = "sambr", version, about = "Speaker-attributed MBR training toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train/dev/test dataset.
    Synth,
    /// Train from scratch with SA-MMI.
    TrainMmi,
    /// Fine-tune a checkpoint with SA-MBR.
    TrainMbr,
    /// Write N-best lists for a split.
    Decode,
    /// Score rank-0 hypotheses against a split.
    Score,
    /// Verify SA-MBR gradients on random tiny models.
    Gradcheck,
    /// Length-norm, N-best size and beam size tables.
    Sweep,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Beam size [default: 16]
    #[arg(long, global = true)]
    beam: Option<usize>,
    /// N-best size [default: 4]
    #[arg(long, global = true)]
    nbest: Option<usize>,
    /// Length normalization [default: on]
    #[arg(long, global = true)]
    length_norm: Option<Switch>,
    /// Speaker-term weight in SA-MMI [default: 0.1]
    #[arg(long, global = true)]
    gamma_mmi: Option<f64>,
    /// Speaker-term weight in decoding [default: 1.0]
    #[arg(long, global = true)]
    gamma_decode: Option<f64>,
    /// Output directory [default: out]
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Model checkpoint.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Split to decode, score or evaluate on [default: dev]
    #[arg(long, global = true)]
    split: Option<SplitArg>,
    /// N-best JSONL to score.
    #[arg(long, global = true)]
    hyp: Option<PathBuf>,
}

fn run(cli: Cli) -> sambr::Result<(serde_json::Value, bool)> {
    let c = cli.common;
    let ov = Overrides {
        seed: c.seed,
        beam: c.beam,
        nbest: c.nbest,
        length_norm: c.length_norm.map(|s| matches!(s, Switch::On)),
        gamma_mmi: c.gamma_mmi,
        gamma_decode: c.gamma_decode,
        out: c.out,
        data: c.data,
        checkpoint: c.checkpoint,
        split: c.split.map(|s| match s {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }),
        hyp: c.hyp,
    };
    let cfg = cli::resolve(c.config.as_deref(), &ov)?;
    Ok(match cli.command {
        Command::Synth => (serde_json::to_value(&cli::cmd_synth(&cfg)?)?, true),
        Command::TrainMmi => (serde_json::to_value(&cli::cmd_train_mmi(&cfg)?)?, true),
        Command::TrainMbr => (serde_json::to_value(&cli::cmd_train_mbr(&cfg)?)?, true),
        Command::Decode => (serde_json::to_value(&cli::cmd_decode(&cfg)?)?, true),
        Command::Score => (serde_json::to_value(&cli::cmd_score(&cfg)?)?, true),
        Command::Gradcheck => {
            let r = cli::cmd_gradcheck(&cfg)?;
            let summary = serde_json::json!({
                "result": if r.pass { "pass" } else { "fail" },
                "closed_form_max_rel": r.closed_form_max_rel,
                "fd_max_rel": r.fd_max_rel,
            });
            (summary, r.pass)
        }
        Command::Sweep => (serde_json::to_value(&cli::cmd_sweep(&cfg)?)?, true),
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok((v, ok)) => {
            println!("{v}");
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("{}", cli::error_json(&e));
            ExitCode::from(2)
        }
    }
}
