//! Builds per-step metric tables for two forecasts, computes the per-step
//! improvement with its quartile summary, and writes the report files.
//!
//! Run with: cargo run --example evaluate_report

use tfl::evaluation::{emit_report, improvements, per_step_table, Report};
use tfl::numeric::Rng;

fn main() -> tfl::Result<()> {
    let mut rng = Rng::new(5);
    let horizon = 12;
    let targets: Vec<Vec<f64>> = (0..200)
        .map(|_| (0..horizon).map(|_| rng.uniform(0.3, 0.9).unwrap()).collect())
        .collect();
    // error grows with the step for both forecasts, more slowly for the second
    let noisy = |rng: &mut Rng, scale: f64| -> Vec<Vec<f64>> {
        targets
            .iter()
            .map(|w| {
                w.iter()
                    .enumerate()
                    .map(|(j, v)| v + scale * (1.0 + j as f64 / 4.0) * rng.standard_normal())
                    .collect()
            })
            .collect()
    };
    let before = per_step_table(&noisy(&mut rng, 0.04), &targets)?;
    let after = per_step_table(&noisy(&mut rng, 0.03), &targets)?;
    let stats = improvements(&before, &after)?;

    println!("step  before  after  delta(pp)");
    for ((b, a), d) in before.per_step.iter().zip(&after.per_step).zip(&stats.deltas) {
        println!("{:>4}  {:>6.3}  {:>5.3}  {d:>9.3}", b.step, b.wape, a.wape);
    }
    println!("q1 {:.3}  q3 {:.3}  iqr {:.3}  outliers {:?}", stats.q1, stats.q3, stats.iqr, stats.outliers);
    println!("accuracy {:.2}% -> {:.2}%", before.accuracy(), after.accuracy());

    let report = Report {
        tables: vec![("before".into(), before), ("after".into(), after)],
        comparisons: vec![("after".into(), stats)],
    };
    let dir = std::env::temp_dir().join("tfl-report-example");
    for f in emit_report(&report, &dir)? {
        println!("wrote {}", f.display());
    }
    Ok(())
}
