//! Adapts a model trained on a large source series to a small target series
//! with a different level, and compares it with training on the target alone.
//! The adapted model is saved and reloaded with its parent hash.
//!
//! Run with: cargo run --release --example transfer_learning

use tfl::dataset::{prepare_split, synth, SynthProfile};
use tfl::evaluation::{per_step_table, predict_all};
use tfl::model_file::{hex, load_model, save_model, Provenance};
use tfl::numeric::Rng;
use tfl::seq2seq::{ModelConfig, Seq2SeqModel};
use tfl::training::{train, transfer, HuberConfig, TrainConfig, TransferConfig};

fn main() -> tfl::Result<()> {
    let loss = HuberConfig::default();
    let source_series = synth(&SynthProfile::default(), 8000, 0)?;
    let target_series = synth(
        &SynthProfile {
            base_bps: 1.4e9,
            daily_amp: 5e8,
            noise_std: 6e7,
            seed: 7,
            ..SynthProfile::default()
        },
        1500,
        0,
    )?;
    let cfg = ModelConfig::new(12, 6, 16, false)?;

    let src = prepare_split(&source_series, 0.8, 12, 6, None)?;
    let mut source = Seq2SeqModel::init(cfg, &mut Rng::new(42))?;
    let epochs = |epochs, lr| TrainConfig {
        epochs,
        lr,
        ..TrainConfig::default()
    };
    train(&mut source, &src.train_windows, &epochs(8, 1e-3), &loss)?;

    let tgt = prepare_split(&target_series, 0.8, 12, 6, None)?;
    let wape = |m: &Seq2SeqModel| -> tfl::Result<f64> {
        Ok(per_step_table(&predict_all(m, &tgt.test_windows)?, &tgt.test_windows.targets)?.average.wape)
    };
    let mut scratch = Seq2SeqModel::init(cfg, &mut Rng::new(1))?;
    train(&mut scratch, &tgt.train_windows, &epochs(20, 1e-3), &loss)?;

    let tcfg = TransferConfig {
        phase1: epochs(10, 1e-3),
        phase2: epochs(10, 1e-4),
    };
    let outcome = transfer(&source, &tgt.train_windows, &tcfg, &loss)?;
    println!("learning rates per phase: {:?}", outcome.lr_trace);
    println!("source model on target:  {:.3}% WAPE", wape(&source)?);
    println!("after phase 1:           {:.3}% WAPE", wape(&outcome.after_phase1)?);
    println!("after phase 2:           {:.3}% WAPE", wape(&outcome.model)?);
    println!("trained on target only:  {:.3}% WAPE", wape(&scratch)?);

    let dir = std::env::temp_dir().join("tfl-transfer-example");
    std::fs::create_dir_all(&dir).map_err(|e| tfl::Error::Io { path: dir.clone(), source: e })?;
    let parent = save_model(&source, &src.scaler, &Provenance { seed: 42, epochs: 8, parent_hash: None }, dir.join("source.tfl"))?;
    let prov = Provenance {
        seed: 1,
        epochs: 20,
        parent_hash: Some(parent),
    };
    save_model(&outcome.model, &tgt.scaler, &prov, dir.join("adapted.tfl"))?;
    let back = load_model(dir.join("adapted.tfl"))?;
    println!(
        "reloaded {} (parent {}), identical weights: {}",
        dir.join("adapted.tfl").display(),
        hex(&back.provenance.parent_hash.unwrap_or_default()),
        back.model == outcome.model
    );
    Ok(())
}
