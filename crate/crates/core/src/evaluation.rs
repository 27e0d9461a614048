//! Forecast metrics, per-step tables, improvement statistics with quartile
//! and outlier summaries, and the CSV / plot-data report writer.

use std::path::{Path, PathBuf};

use crate::dataset::WindowedDataset;
use crate::error::{Error, Result};
use crate::seq2seq::Seq2SeqModel;

fn check_pair(op: &'static str, p: &[f64], o: &[f64]) -> Result<()> {
    if p.len() != o.len() {
        return Err(Error::shape(op, p.len(), o.len()));
    }
    if p.is_empty() {
        return Err(Error::Empty(op));
    }
    Ok(())
}

pub fn mae(p: &[f64], o: &[f64]) -> Result<f64> {
    check_pair("mae", p, o)?;
    Ok(p.iter().zip(o).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64)
}

pub fn rmse(p: &[f64], o: &[f64]) -> Result<f64> {
    check_pair("rmse", p, o)?;
    Ok((p.iter().zip(o).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64).sqrt())
}

/// Weighted absolute percentage error, in percent.
pub fn wape(p: &[f64], o: &[f64]) -> Result<f64> {
    check_pair("wape", p, o)?;
    let denom: f64 = o.iter().map(|v| v.abs()).sum();
    if denom == 0.0 {
        return Err(Error::Undefined("WAPE with all-zero observations"));
    }
    Ok(p.iter().zip(o).map(|(a, b)| (a - b).abs()).sum::<f64>() / denom * 100.0)
}

/// `100 - wape`, floored at zero.
pub fn accuracy(wape: f64) -> f64 {
    (100.0 - wape).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub mae: f64,
    pub rmse: f64,
    pub wape: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub horizon: usize,
    pub per_step: Vec<StepMetrics>,
    /// Arithmetic mean of the per-step rows; `step` is 0.
    pub average: StepMetrics,
}

impl MetricsTable {
    fn from_rows(per_step: Vec<StepMetrics>) -> Result<Self> {
        if per_step.is_empty() {
            return Err(Error::Empty("metrics table"));
        }
        let n = per_step.len() as f64;
        let mean = |f: fn(&StepMetrics) -> f64| per_step.iter().map(f).sum::<f64>() / n;
        let average = StepMetrics {
            step: 0,
            mae: mean(|s| s.mae),
            rmse: mean(|s| s.rmse),
            wape: mean(|s| s.wape),
        };
        Ok(MetricsTable {
            horizon: per_step.len(),
            per_step,
            average,
        })
    }

    pub fn accuracy(&self) -> f64 {
        accuracy(self.average.wape)
    }
}

/// Metrics per forecast step across all windows, plus their average.
pub fn per_step_table(predictions: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<MetricsTable> {
    if predictions.len() != targets.len() {
        return Err(Error::shape("per_step_table", predictions.len(), targets.len()));
    }
    let Some(first) = targets.first() else {
        return Err(Error::Empty("per_step_table"));
    };
    let horizon = first.len();
    for (p, o) in predictions.iter().zip(targets) {
        if p.len() != horizon || o.len() != horizon {
            return Err(Error::shape("per_step_table", p.len(), o.len()));
        }
    }
    let mut rows = Vec::with_capacity(horizon);
    for j in 0..horizon {
        let p: Vec<f64> = predictions.iter().map(|w| w[j]).collect();
        let o: Vec<f64> = targets.iter().map(|w| w[j]).collect();
        let row = StepMetrics {
            step: j + 1,
            mae: mae(&p, &o)?,
            rmse: rmse(&p, &o)?,
            wape: wape(&p, &o)?,
        };
        if row.rmse < row.mae * (1.0 - 1e-12) {
            return Err(Error::NonFinite("metrics table: rmse below mae"));
        }
        rows.push(row);
    }
    MetricsTable::from_rows(rows)
}

/// Repeats the last observed value of each window across the horizon.
pub fn persistence_forecast(data: &WindowedDataset) -> Vec<Vec<f64>> {
    data.inputs
        .iter()
        .map(|x| vec![*x.last().expect("windows are non-empty"); data.n_future])
        .collect()
}

/// Model forecasts for every window of a dataset.
pub fn predict_all(model: &Seq2SeqModel, data: &WindowedDataset) -> Result<Vec<Vec<f64>>> {
    data.inputs.iter().map(|x| model.predict(x)).collect()
}

/// Lower quartile, upper quartile and their difference, with quantiles
/// interpolated linearly at position `p · (n - 1)` of the sorted values.
pub fn iqr(values: &[f64]) -> Result<(f64, f64, f64)> {
    if values.len() < 4 {
        return Err(Error::TooShort {
            required: 4,
            got: values.len(),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("iqr input"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    };
    let (q1, q3) = (q(0.25), q(0.75));
    Ok((q1, q3, q3 - q1))
}

/// Values outside the Tukey fences `[q1 - 1.5·iqr, q3 + 1.5·iqr]`, with
/// their indices.
pub fn outliers(values: &[f64]) -> Result<Vec<(usize, f64)>> {
    let (q1, q3, iqr) = iqr(values)?;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    Ok(values
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, v)| v < lo || v > hi)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImprovementStats {
    /// `before.wape - after.wape` per step, in percentage points.
    pub deltas: Vec<f64>,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    /// 1-based step and delta of each outlier.
    pub outliers: Vec<(usize, f64)>,
}

impl ImprovementStats {
    pub fn mean_delta(&self) -> f64 {
        self.deltas.iter().sum::<f64>() / self.deltas.len() as f64
    }
}

/// Per-step WAPE reduction from `before` to `after`; positive is better.
pub fn improvements(before: &MetricsTable, after: &MetricsTable) -> Result<ImprovementStats> {
    if before.horizon != after.horizon {
        return Err(Error::shape("improvements", before.horizon, after.horizon));
    }
    let deltas: Vec<f64> = before
        .per_step
        .iter()
        .zip(&after.per_step)
        .map(|(b, a)| b.wape - a.wape)
        .collect();
    let (q1, q3, iqr) = iqr(&deltas)?;
    let outliers = outliers(&deltas)?.into_iter().map(|(i, v)| (i + 1, v)).collect();
    Ok(ImprovementStats {
        deltas,
        q1,
        q3,
        iqr,
        outliers,
    })
}

/// Formats with six significant digits, switching to exponent notation for
/// very small or large magnitudes.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-4..6).contains(&exp) {
        trim(&format!("{:.*}", (5 - exp) as usize, x))
    } else {
        format!("{}e{}", trim(mantissa), exp)
    }
}

/// Parses a number written by [`fmt_sig6`] and rounds `x` the same way.
pub fn round_sig6(x: f64) -> f64 {
    fmt_sig6(x).parse().expect("formatted number parses")
}

const METRICS_HEADER: [&str; 4] = ["step", "mae", "rmse", "wape"];

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| Error::io(path, e.into()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn metric_row(label: String, m: &StepMetrics) -> Vec<String> {
    vec![label, fmt_sig6(m.mae), fmt_sig6(m.rmse), fmt_sig6(m.wape)]
}

/// `step,mae,rmse,wape` rows followed by an `average` row.
pub fn write_metrics_csv(table: &MetricsTable, path: impl AsRef<Path>) -> Result<()> {
    let rows = table
        .per_step
        .iter()
        .map(|m| metric_row(m.step.to_string(), m))
        .chain(std::iter::once(metric_row("average".into(), &table.average)));
    write_rows(path.as_ref(), &METRICS_HEADER, rows)
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<MetricsTable> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let err = |line: usize, msg: String| Error::Parse {
        path: name.clone(),
        line,
        msg,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let header = r.headers().map_err(|e| err(1, e.to_string()))?;
    if header.iter().ne(METRICS_HEADER) {
        return Err(err(1, format!("expected header {}", METRICS_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    let mut average = None;
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| err(line, e.to_string()))?;
        if rec.len() != 4 {
            return Err(err(line, format!("expected 4 fields, found {}", rec.len())));
        }
        let num = |k: usize| -> Result<f64> { rec[k].parse().map_err(|_| err(line, format!("bad number '{}'", &rec[k]))) };
        let (mae, rmse, wape) = (num(1)?, num(2)?, num(3)?);
        if &rec[0] == "average" {
            average = Some(StepMetrics {
                step: 0,
                mae,
                rmse,
                wape,
            });
        } else {
            let step = rec[0].parse().map_err(|_| err(line, format!("bad step '{}'", &rec[0])))?;
            rows.push(StepMetrics { step, mae, rmse, wape });
        }
    }
    let average = average.ok_or_else(|| err(0, "missing average row".into()))?;
    Ok(MetricsTable {
        horizon: rows.len(),
        per_step: rows,
        average,
    })
}

pub fn write_improvements_csv(stats: &ImprovementStats, path: impl AsRef<Path>) -> Result<()> {
    let rows = stats
        .deltas
        .iter()
        .enumerate()
        .map(|(i, d)| vec![(i + 1).to_string(), fmt_sig6(*d)]);
    write_rows(path.as_ref(), &["step", "delta_wape_pp"], rows)
}

pub fn write_summary_csv(stats: &ImprovementStats, path: impl AsRef<Path>) -> Result<()> {
    let row = vec![
        fmt_sig6(stats.q1),
        fmt_sig6(stats.q3),
        fmt_sig6(stats.iqr),
        stats.outliers.len().to_string(),
    ];
    write_rows(path.as_ref(), &["q1", "q3", "iqr", "n_outliers"], [row])
}

/// Whitespace-separated `x y` pairs, one per line, with a `#` header.
pub fn write_plot_data(path: impl AsRef<Path>, columns: (&str, &str), points: &[(f64, f64)]) -> Result<()> {
    let path = path.as_ref();
    let mut s = format!("# {} {}\n", columns.0, columns.1);
    for (x, y) in points {
        s.push_str(&format!("{} {}\n", fmt_sig6(*x), fmt_sig6(*y)));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Everything written by [`emit_report`]: labelled tables and labelled
/// before/after comparisons.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub tables: Vec<(String, MetricsTable)>,
    pub comparisons: Vec<(String, ImprovementStats)>,
}

/// Writes every table and comparison of `report` into `dir`, returning the
/// files created in a fixed order.
pub fn emit_report(report: &Report, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (label, table) in &report.tables {
        if table.per_step.is_empty() {
            return Err(Error::Empty("report table"));
        }
        let csv = dir.join(format!("metrics_{label}.csv"));
        write_metrics_csv(table, &csv)?;
        written.push(csv);
        for (metric, get) in [
            ("mae", (|m: &StepMetrics| m.mae) as fn(&StepMetrics) -> f64),
            ("rmse", |m| m.rmse),
            ("wape", |m| m.wape),
        ] {
            let pts: Vec<(f64, f64)> = table.per_step.iter().map(|m| (m.step as f64, get(m))).collect();
            let dat = dir.join(format!("metrics_{label}_{metric}.dat"));
            write_plot_data(&dat, ("step", metric), &pts)?;
            written.push(dat);
        }
    }
    for (label, stats) in &report.comparisons {
        let imp = dir.join(format!("improvement_{label}.csv"));
        write_improvements_csv(stats, &imp)?;
        let summary = dir.join(format!("summary_{label}.csv"));
        write_summary_csv(stats, &summary)?;
        let pts: Vec<(f64, f64)> = stats.deltas.iter().enumerate().map(|(i, d)| ((i + 1) as f64, *d)).collect();
        let dat = dir.join(format!("improvement_{label}.dat"));
        write_plot_data(&dat, ("step", "delta_wape_pp"), &pts)?;
        written.extend([imp, summary, dat]);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;
    use proptest::prelude::*;

    #[test]
    fn metric_examples() {
        let o = [1.0, 3.0];
        assert_eq!((mae(&o, &o).unwrap(), rmse(&o, &o).unwrap(), wape(&o, &o).unwrap()), (0.0, 0.0, 0.0));
        for p in [[2.0, 2.0], [0.0, 4.0]] {
            assert_eq!(mae(&p, &o).unwrap(), 1.0);
            assert_eq!(rmse(&p, &o).unwrap(), 1.0);
            assert_eq!(wape(&p, &o).unwrap(), 50.0);
        }
        assert!(wape(&[1.0], &[0.0]).is_err());
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn accuracy_examples() {
        assert!((accuracy(6.25) - 93.75).abs() < 1e-12);
        assert_eq!(accuracy(0.0), 100.0);
        assert_eq!(accuracy(120.0), 0.0);
    }

    #[test]
    fn table_shapes() {
        let t = vec![vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; 3];
        let table = per_step_table(&t, &t).unwrap();
        assert_eq!(table.per_step.len(), 6);
        assert!(table.per_step.iter().all(|r| r.mae == 0.0 && r.rmse == 0.0 && r.wape == 0.0));
        let p = vec![vec![1.5, 1.0, 4.0]];
        let o = vec![vec![1.0, 2.0, 3.0]];
        let table = per_step_table(&p, &o).unwrap();
        let maes: Vec<f64> = table.per_step.iter().map(|r| r.mae).collect();
        assert_eq!(maes, vec![0.5, 1.0, 1.0]);
        assert!((table.average.mae - 2.5 / 3.0).abs() < 1e-12);
        assert!(per_step_table(&p, &[]).is_err());
        assert!(per_step_table(&[vec![1.0]], &[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn iqr_examples() {
        assert_eq!(iqr(&[1.0, 2.0, 3.0, 4.0]).unwrap(), (1.75, 3.25, 1.5));
        assert_eq!(iqr(&[2.0; 5]).unwrap().2, 0.0);
        assert!(iqr(&[1.0, 2.0, 3.0]).is_err());
        assert!(outliers(&[1.0, 2.0, 3.0, 4.0]).unwrap().is_empty());
        assert_eq!(outliers(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap(), vec![(4, 100.0)]);
        assert!(outliers(&[7.0; 6]).unwrap().is_empty());
    }

    fn table_with_wapes(w: &[f64]) -> MetricsTable {
        MetricsTable::from_rows(
            w.iter()
                .enumerate()
                .map(|(i, &wape)| StepMetrics {
                    step: i + 1,
                    mae: 0.1,
                    rmse: 0.2,
                    wape,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn improvement_examples() {
        let a = table_with_wapes(&[10.0, 12.0, 14.0, 16.0, 18.0, 20.0]);
        let same = improvements(&a, &a).unwrap();
        assert!(same.deltas.iter().all(|&d| d == 0.0));
        assert_eq!(same.iqr, 0.0);
        let b = table_with_wapes(&[9.0, 10.0, 13.0, 12.0, 18.5, 15.0]);
        let imp = improvements(&a, &b).unwrap();
        let oracle: Vec<f64> = a.per_step.iter().zip(&b.per_step).map(|(x, y)| x.wape - y.wape).collect();
        assert_eq!(imp.deltas, oracle);
        assert!((imp.mean_delta() - (a.average.wape - b.average.wape)).abs() < 1e-12);
        assert!(improvements(&a, &table_with_wapes(&[1.0; 4])).is_err());
    }

    #[test]
    fn improvement_of_table_averages() {
        let before = table_with_wapes(&[17.457; 6]);
        let after = table_with_wapes(&[12.279; 6]);
        let imp = improvements(&before, &after).unwrap();
        assert!((imp.mean_delta() - 5.178).abs() < 1e-9);
    }

    #[test]
    fn persistence_repeats_last_value() {
        let data = crate::dataset::make_windows(&[1.0, 2.0, 3.0, 4.0, 5.0], 2, 2).unwrap();
        assert_eq!(persistence_forecast(&data), vec![vec![2.0, 2.0], vec![3.0, 3.0]]);
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(fmt_sig6(0.0), "0");
        assert_eq!(fmt_sig6(1.0), "1");
        assert_eq!(fmt_sig6(17.4573219), "17.4573");
        assert_eq!(fmt_sig6(0.000123456789), "0.000123457");
        assert_eq!(fmt_sig6(1.23456789e-7), "1.23457e-7");
        assert_eq!(fmt_sig6(-2.5), "-2.5");
        assert_eq!(fmt_sig6(123456789.0), "1.23457e8");
        assert_eq!(fmt_sig6(999999.7), "1e6");
    }

    #[test]
    fn metrics_csv_round_trip() {
        let mut rng = Rng::new(3);
        let p: Vec<Vec<f64>> = (0..20).map(|_| (0..6).map(|_| rng.next_f64()).collect()).collect();
        let o: Vec<Vec<f64>> = (0..20).map(|_| (0..6).map(|_| rng.next_f64() + 0.1).collect()).collect();
        let table = per_step_table(&p, &o).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_metrics_csv(&table, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("step,mae,rmse,wape\n"));
        assert_eq!(text.lines().count(), 8);
        let back = read_metrics_csv(&path).unwrap();
        assert_eq!(back.horizon, 6);
        let pairs = table.per_step.iter().chain([&table.average]).zip(back.per_step.iter().chain([&back.average]));
        for (a, b) in pairs {
            assert_eq!(a.step, b.step);
            for (x, y) in [(a.mae, b.mae), (a.rmse, b.rmse), (a.wape, b.wape)] {
                assert!((round_sig6(x) - y).abs() < 1e-9);
                assert!(((x - y) / x).abs() < 5e-6);
            }
        }
    }

    #[test]
    fn report_files() {
        let a = table_with_wapes(&[10.0, 12.0, 14.0, 16.0, 18.0, 20.0]);
        let b = table_with_wapes(&[9.0, 10.0, 13.0, 12.0, 18.5, 15.0]);
        let report = Report {
            tables: vec![("before".into(), a.clone()), ("after".into(), b.clone())],
            comparisons: vec![("after".into(), improvements(&a, &b).unwrap())],
        };
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&report, dir.path()).unwrap();
        assert_eq!(files.len(), 11);
        let summary = std::fs::read_to_string(dir.path().join("summary_after.csv")).unwrap();
        assert!(summary.starts_with("q1,q3,iqr,n_outliers\n"));
        let imp = std::fs::read_to_string(dir.path().join("improvement_after.csv")).unwrap();
        assert_eq!(imp.lines().next(), Some("step,delta_wape_pp"));
        assert_eq!(imp.lines().nth(1), Some("1,1"));
        let dat = std::fs::read_to_string(dir.path().join("metrics_before_wape.dat")).unwrap();
        assert_eq!(dat.lines().nth(1), Some("1 10"));
    }

    fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..40).prop_flat_map(|n| (prop::collection::vec(-10.0..10.0f64, n), prop::collection::vec(0.1..10.0f64, n)))
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae((p, o) in vec_pair()) {
            prop_assert!(rmse(&p, &o).unwrap() >= mae(&p, &o).unwrap() * (1.0 - 1e-12));
        }

        #[test]
        fn wape_scale_invariant((p, o) in vec_pair(), c in 0.01..100.0f64) {
            let ps: Vec<f64> = p.iter().map(|v| v * c).collect();
            let os: Vec<f64> = o.iter().map(|v| v * c).collect();
            let (a, b) = (wape(&p, &o).unwrap(), wape(&ps, &os).unwrap());
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }

        #[test]
        fn iqr_permutation_invariant(mut v in prop::collection::vec(-100.0..100.0f64, 4..50), seed in any::<u64>()) {
            let before = iqr(&v).unwrap();
            Rng::new(seed).shuffle(&mut v);
            prop_assert_eq!(iqr(&v).unwrap(), before);
        }

        #[test]
        fn outliers_lie_outside_fences(v in prop::collection::vec(-100.0..100.0f64, 4..50)) {
            let (q1, q3, r) = iqr(&v).unwrap();
            prop_assert!(r >= 0.0);
            for (i, x) in outliers(&v).unwrap() {
                prop_assert_eq!(v[i], x);
                prop_assert!(x < q1 - 1.5 * r || x > q3 + 1.5 * r);
            }
        }
    }
}
