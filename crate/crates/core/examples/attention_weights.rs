//! Trains a small attention model and prints which past samples each forecast
//! step attends to.
//!
//! Run with: cargo run --release --example attention_weights

use tfl::dataset::{prepare_split, synth, SynthProfile};
use tfl::numeric::Rng;
use tfl::seq2seq::{ModelConfig, Seq2SeqModel};
use tfl::training::{train, HuberConfig, TrainConfig};

fn main() -> tfl::Result<()> {
    let series = synth(&SynthProfile::default(), 3000, 0)?;
    let split = prepare_split(&series, 0.8, 12, 6, None)?;
    let cfg = ModelConfig::new(12, 6, 16, true)?;
    let mut model = Seq2SeqModel::init(cfg, &mut Rng::new(3))?;
    let tcfg = TrainConfig {
        epochs: 5,
        ..TrainConfig::default()
    };
    train(&mut model, &split.train_windows, &tcfg, &HuberConfig::default())?;

    let window = &split.test_windows.inputs[0];
    let pass = model.forward(window)?;
    let trace = pass.attention().expect("attention model");
    print!("step ");
    for k in 0..cfg.n_past {
        print!("{:>6}", format!("t-{}", cfg.n_past - k));
    }
    println!();
    for t in 0..cfg.n_future {
        print!("{:>4} ", t + 1);
        for w in trace.weights.row(t) {
            print!("{w:>6.3}");
        }
        println!("   -> {:.4}", pass.predictions[t]);
    }
    Ok(())
}
