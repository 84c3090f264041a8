//! SA-MMI training followed by SA-MBR fine-tuning on a small synthetic
//! task, with dev SA-WER after every epoch.

use sambr::decode::BeamConfig;
use sambr::model::{ModelConfig, ModelParams};
use sambr::synthdata::{generate_split, Split, SynthConfig, World};
use sambr::train::{evaluate, train_mbr, train_mmi, MbrConfig, MmiConfig};

fn main() -> sambr::Result<()> {
    let cfg = SynthConfig {
        train_size: 600,
        dev_size: 60,
        ..SynthConfig::default()
    };
    let world = World::new(&cfg)?;
    let (train, dev) = (generate_split(&cfg, &world, Split::Train)?, generate_split(&cfg, &world, Split::Dev)?);
    let vocab = cfg.vocabulary();
    let beam = BeamConfig::default();
    let mut params = ModelParams::init(ModelConfig::small(cfg.feat_dim, cfg.profile_dim, &vocab), 1)?;

    let mmi = MmiConfig {
        epochs: 30,
        lr: 3e-3,
        lr_final_fraction: 0.1,
        ..MmiConfig::default()
    };
    let log = train_mmi(&mut params, &train, &mmi, |epoch, p| {
        println!("SA-MMI epoch {epoch}: dev SA-WER {:.4}", evaluate(p, &dev, &vocab, &beam)?.sa_wer(None));
        Ok(())
    })?;
    println!("SA-MMI final batch loss {:.3}", log.last().map_or(f64::NAN, |l| l.loss));

    let mbr = MbrConfig {
        epochs: 2,
        lr: 3e-4,
        ..MbrConfig::default()
    };
    train_mbr(&mut params, &train, &vocab, &mbr, |epoch, p| {
        let ev = evaluate(p, &dev, &vocab, &beam)?;
        println!(
            "SA-MBR epoch {epoch}: dev SA-WER {:.4} (1/2/3 speakers {:.3}/{:.3}/{:.3})",
            ev.sa_wer(None),
            ev.sa_wer(Some(1)),
            ev.sa_wer(Some(2)),
            ev.sa_wer(Some(3))
        );
        Ok(())
    })?;
    Ok(())
}
