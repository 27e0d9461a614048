//! Decomposes a synthetic traffic series with db4, perturbs the detail bands
//! and builds an augmented corpus.
//!
//! Run with: cargo run --example wavelet_augment

use tfl::dataset::{synth, SynthProfile};
use tfl::numeric::Rng;
use tfl::wavelet::{dwt, expand_dataset, idwt, perturb, AugmentConfig, Extension};

fn energy(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn main() -> tfl::Result<()> {
    let series = synth(&SynthProfile::default(), 2016, 0)?;
    let cfg = AugmentConfig::default();
    let coeffs = dwt(&series.values, &cfg.filter, cfg.levels, Extension::Symmetric)?;
    println!("approximation: {} coefficients", coeffs.approx.len());
    for (j, d) in coeffs.details.iter().enumerate() {
        println!("detail level {}: {} coefficients, energy {:.3e}", j + 1, d.len(), energy(d));
    }

    let back = idwt(&coeffs, &cfg.filter)?;
    let err = series.values.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("reconstruction error {err:.2e}");

    let perturbed = perturb(&coeffs, &cfg, &mut Rng::new(cfg.seed))?;
    for (j, (a, b)) in coeffs.details.iter().zip(&perturbed.details).enumerate() {
        println!("level {} energy ratio after perturbation {:.3}", j + 1, energy(b) / energy(a));
    }

    let corpus = expand_dataset(&series, &cfg, 3)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    for (s, p) in corpus.series.iter().zip(&corpus.provenance) {
        println!("series {} seed {:?}: mean {:.4e}", p.index, p.seed, mean(&s.values));
    }
    Ok(())
}
