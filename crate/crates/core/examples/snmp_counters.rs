//! Turns raw octet-counter samples into a bits-per-second series, including a
//! counter wrap, then prints summary statistics.
//!
//! Run with: cargo run --example snmp_counters

use tfl::dataset::{counters_to_bps, summary_stats, DEFAULT_INTERVAL};

fn main() -> tfl::Result<()> {
    let mut counters = Vec::new();
    let mut octets: u64 = u64::MAX - 30_000_000_000;
    for k in 0..12u64 {
        counters.push(octets);
        // roughly 1 Gbps with some variation, wrapping past u64::MAX once
        octets = octets.wrapping_add(37_500_000_000 + k * 1_000_000_000);
    }
    let conv = counters_to_bps(&counters, DEFAULT_INTERVAL, 1_672_531_200)?;
    for (k, v) in conv.series.values.iter().enumerate() {
        println!("{}  {:>14.0} bps", tfl::dataset::format_timestamp(conv.series.timestamp(k)), v);
    }
    if !conv.over_capacity.is_empty() {
        println!("samples above link capacity: {:?}", conv.over_capacity);
    }
    let st = summary_stats(&conv.series.values)?;
    println!("mean {:.4e}  std {:.4e}  skewness {:?}", st.mean, st.std, st.skewness);
    Ok(())
}
