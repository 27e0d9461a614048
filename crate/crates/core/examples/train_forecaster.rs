//! Trains a plain encoder-decoder on synthetic traffic and compares it with
//! the repeat-last-value baseline step by step.
//!
//! Run with: cargo run --release --example train_forecaster

use tfl::dataset::{prepare_split, synth, SynthProfile};
use tfl::evaluation::{per_step_table, persistence_forecast, predict_all};
use tfl::numeric::Rng;
use tfl::seq2seq::{ModelConfig, Seq2SeqModel};
use tfl::training::{train, HuberConfig, TrainConfig};

fn main() -> tfl::Result<()> {
    let series = synth(&SynthProfile::default(), 6000, 0)?;
    let split = prepare_split(&series, 0.8, 12, 6, None)?;
    let cfg = ModelConfig::new(12, 6, 24, false)?;
    let mut model = Seq2SeqModel::init(cfg, &mut Rng::new(42))?;
    let tcfg = TrainConfig {
        epochs: 10,
        ..TrainConfig::default()
    };
    let history = train(&mut model, &split.train_windows, &tcfg, &HuberConfig::default())?;
    for (e, l) in history.iter().enumerate() {
        println!("epoch {:>2}  loss {l:.6}", e + 1);
    }

    let test = &split.test_windows;
    let ours = per_step_table(&predict_all(&model, test)?, &test.targets)?;
    let naive = per_step_table(&persistence_forecast(test), &test.targets)?;
    println!("step   model WAPE  persistence WAPE");
    for (a, b) in ours.per_step.iter().zip(&naive.per_step) {
        println!("{:>4}   {:>9.3}%  {:>15.3}%", a.step, a.wape, b.wape);
    }
    println!("avg    {:>9.3}%  {:>15.3}%", ours.average.wape, naive.average.wape);
    println!("accuracy {:.2}%", ours.accuracy());
    Ok(())
}
