//! Length-normalization, N-best size and beam size tables on a small
//! dataset, going through the same entry points as the `sambr` binary.
//!
//! ```text
//! cargo run --release --example sweep -- [out_dir]
//! ```

use std::path::PathBuf;

use sambr::cli::{cmd_sweep, cmd_synth, cmd_train_mmi, resolve, Overrides, RunConfig};
use sambr::synthdata::SynthConfig;

fn main() -> sambr::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/sweep-demo".into()));
    let mut base = resolve(None, &Overrides { seed: Some(1), ..Overrides::default() })?;
    base.synth = SynthConfig {
        train_size: 400,
        dev_size: 60,
        test_size: 10,
        ..base.synth
    };
    base.mmi.epochs = 25;
    base.mbr.epochs = 1;

    let data = out.join("data");
    cmd_synth(&RunConfig { out: data.clone(), ..base.clone() })?;
    let mmi = cmd_train_mmi(&RunConfig {
        data: Some(data.clone()),
        out: out.join("mmi"),
        eval_every: 0,
        ..base.clone()
    })?;
    let report = cmd_sweep(&RunConfig {
        data: Some(data),
        checkpoint: Some(mmi.checkpoint),
        out: out.join("tables"),
        ..base
    })?;
    for path in [report.length_norm_csv, report.nbest_csv, report.beam_csv] {
        println!("== {}", path.display());
        print!("{}", std::fs::read_to_string(&path).map_err(|e| sambr::Error::Config(e.to_string()))?);
    }
    Ok(())
}
