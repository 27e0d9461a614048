//! Compares backpropagation-through-time gradients with central differences
//! for both decoder variants.
//!
//! Run with: cargo run --example gradient_check

use tfl::numeric::Rng;
use tfl::seq2seq::{ModelConfig, Seq2SeqModel};
use tfl::training::{gradient_check_with, GradCheckOptions};

fn main() -> tfl::Result<()> {
    let window = [0.21, 0.48, 0.52, 0.77];
    let targets = [0.81, 0.64];
    for attention in [false, true] {
        let cfg = ModelConfig::new(window.len(), targets.len(), 8, attention)?;
        let model = Seq2SeqModel::init(cfg, &mut Rng::new(11))?;
        let report = gradient_check_with(&model, &window, &targets, &GradCheckOptions::default())?;
        let (block, index, analytic, numeric) = &report.worst;
        println!(
            "attention={attention:<5} checked {:>3} parameters, max relative error {:.2e} ({block}[{index}]: {analytic:.6e} vs {numeric:.6e})",
            report.checked, report.max_relative_error
        );
    }
    Ok(())
}
