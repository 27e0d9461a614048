//! Multilevel discrete wavelet transform, detail-band perturbation and
//! augmented-corpus generation.
//!
//! Analysis uses half-sample symmetric extension by default, producing
//! `floor((n + L - 1) / 2)` coefficients per band at each level, and the
//! synthesis step inverts it exactly. A periodic variant (orthogonal, energy
//! preserving) is available for signals whose length is divisible by `2^J`.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::TimeSeries;
use crate::error::{Error, Result};
use crate::numeric::Rng;

const HAAR: [f64; 2] = [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];

const DB4: [f64; 8] = [
    0.230_377_813_308_855_23,
    0.714_846_570_552_541_5,
    0.630_880_767_929_590_4,
    -0.027_983_769_416_983_85,
    -0.187_034_811_718_881_14,
    0.030_841_381_835_986_965,
    0.032_883_011_666_982_945,
    -0.010_597_401_784_997_278,
];

const IDENTITY_TOL: f64 = 1e-10;

/// An orthonormal two-channel filter bank.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletFilter {
    name: String,
    lowpass: Vec<f64>,
    highpass: Vec<f64>,
}

impl WaveletFilter {
    /// Builds a filter bank from its scaling coefficients, checking the
    /// orthonormality identities.
    pub fn new(name: &str, lowpass: Vec<f64>) -> Result<Self> {
        let l = lowpass.len();
        if l < 2 || !l.is_multiple_of(2) {
            return Err(Error::invalid(format!("filter {name}: length must be even and >= 2, got {l}")));
        }
        let sum: f64 = lowpass.iter().sum();
        if (sum - std::f64::consts::SQRT_2).abs() > IDENTITY_TOL {
            return Err(Error::invalid(format!("filter {name}: coefficient sum {sum} is not sqrt(2)")));
        }
        for shift in (0..l).step_by(2) {
            let s: f64 = (0..l - shift).map(|k| lowpass[k] * lowpass[k + shift]).sum();
            let expected = if shift == 0 { 1.0 } else { 0.0 };
            if (s - expected).abs() > IDENTITY_TOL {
                return Err(Error::invalid(format!(
                    "filter {name}: autocorrelation at shift {shift} is {s}, expected {expected}"
                )));
            }
        }
        let highpass = (0..l)
            .map(|m| if m % 2 == 0 { lowpass[l - 1 - m] } else { -lowpass[l - 1 - m] })
            .collect();
        Ok(WaveletFilter {
            name: name.to_string(),
            lowpass,
            highpass,
        })
    }

    pub fn haar() -> Self {
        Self::new("haar", HAAR.to_vec()).expect("haar coefficients are orthonormal")
    }

    /// The 8-tap Daubechies filter (four vanishing moments).
    pub fn db4() -> Self {
        Self::new("db4", DB4.to_vec()).expect("db4 coefficients are orthonormal")
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "haar" => Ok(Self::haar()),
            "db4" => Ok(Self::db4()),
            other => Err(Error::invalid(format!("unknown wavelet '{other}' (expected haar or db4)"))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn lowpass(&self) -> &[f64] {
        &self.lowpass
    }

    pub fn highpass(&self) -> &[f64] {
        &self.highpass
    }

    pub fn len(&self) -> usize {
        self.lowpass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lowpass.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Extension {
    #[default]
    Symmetric,
    Periodic,
}

impl fmt::Display for Extension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Extension::Symmetric => "symmetric",
            Extension::Periodic => "periodic",
        })
    }
}

/// Coefficients of a `J`-level decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct DwtCoeffs {
    /// Approximation band at the deepest level.
    pub approx: Vec<f64>,
    /// `details[0]` is level 1, the finest band.
    pub details: Vec<Vec<f64>>,
    /// Length of the signal entering each level; `lengths[0]` is the input.
    pub lengths: Vec<usize>,
    pub filter: String,
    pub extension: Extension,
}

impl DwtCoeffs {
    pub fn levels(&self) -> usize {
        self.details.len()
    }
}

/// Deepest level with `L · 2^(J-1) <= n`; zero when `n < L`.
pub fn max_level(len: usize, filter_len: usize) -> usize {
    let mut j = 0;
    while filter_len.checked_shl(j as u32).is_some_and(|span| span <= len) {
        j += 1;
    }
    j
}

fn band_len(n: usize, filter_len: usize, ext: Extension) -> usize {
    match ext {
        Extension::Symmetric => (n + filter_len - 1) / 2,
        Extension::Periodic => n / 2,
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let r = i.rem_euclid(2 * n as isize) as usize;
    if r < n {
        r
    } else {
        2 * n - 1 - r
    }
}

fn analyze(x: &[f64], filter: &WaveletFilter, ext: Extension) -> (Vec<f64>, Vec<f64>) {
    let (h, g) = (&filter.lowpass, &filter.highpass);
    let l = h.len();
    let n = x.len();
    let count = band_len(n, l, ext);
    let mut approx = vec![0.0; count];
    let mut detail = vec![0.0; count];
    for k in 0..count {
        let (mut a, mut d) = (0.0, 0.0);
        for m in 0..l {
            let v = match ext {
                Extension::Symmetric => x[reflect((2 * k + m) as isize + 2 - l as isize, n)],
                Extension::Periodic => x[(2 * k + m) % n],
            };
            a += h[m] * v;
            d += g[m] * v;
        }
        approx[k] = a;
        detail[k] = d;
    }
    (approx, detail)
}

fn synthesize(approx: &[f64], detail: &[f64], len: usize, filter: &WaveletFilter, ext: Extension) -> Vec<f64> {
    let (h, g) = (&filter.lowpass, &filter.highpass);
    let l = h.len();
    let mut out = vec![0.0; len];
    for (k, (&a, &d)) in approx.iter().zip(detail).enumerate() {
        for m in 0..l {
            let v = a * h[m] + d * g[m];
            match ext {
                Extension::Symmetric => {
                    let idx = (2 * k + m) as isize + 2 - l as isize;
                    if idx >= 0 && (idx as usize) < len {
                        out[idx as usize] += v;
                    }
                }
                Extension::Periodic => out[(2 * k + m) % len] += v,
            }
        }
    }
    out
}

/// `levels`-level Mallat decomposition.
pub fn dwt(signal: &[f64], filter: &WaveletFilter, levels: usize, ext: Extension) -> Result<DwtCoeffs> {
    if levels == 0 {
        return Err(Error::invalid("decomposition level must be >= 1"));
    }
    if signal.len() < filter.len() {
        return Err(Error::TooShort {
            required: filter.len(),
            got: signal.len(),
        });
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("dwt input"));
    }
    let mut max = max_level(signal.len(), filter.len());
    if ext == Extension::Periodic {
        max = max.min(signal.len().trailing_zeros() as usize);
    }
    if levels > max {
        return Err(Error::LevelTooDeep {
            len: signal.len(),
            max,
            requested: levels,
        });
    }
    let mut current = signal.to_vec();
    let mut details = Vec::with_capacity(levels);
    let mut lengths = Vec::with_capacity(levels);
    for _ in 0..levels {
        lengths.push(current.len());
        let (a, d) = analyze(&current, filter, ext);
        details.push(d);
        current = a;
    }
    Ok(DwtCoeffs {
        approx: current,
        details,
        lengths,
        filter: filter.name.clone(),
        extension: ext,
    })
}

/// Inverse of [`dwt`].
pub fn idwt(coeffs: &DwtCoeffs, filter: &WaveletFilter) -> Result<Vec<f64>> {
    if coeffs.filter != filter.name {
        return Err(Error::invalid(format!(
            "coefficients were produced by '{}', not '{}'",
            coeffs.filter, filter.name
        )));
    }
    let levels = coeffs.details.len();
    if levels == 0 || coeffs.lengths.len() != levels {
        return Err(Error::invalid(format!(
            "coefficient metadata inconsistent: {} detail bands, {} lengths",
            levels,
            coeffs.lengths.len()
        )));
    }
    for (j, (&n, d)) in coeffs.lengths.iter().zip(&coeffs.details).enumerate() {
        let expected = band_len(n, filter.len(), coeffs.extension);
        let next = coeffs.lengths.get(j + 1).copied();
        let next_ok = next.is_none_or(|m| m == expected);
        if d.len() != expected || !next_ok {
            return Err(Error::invalid(format!(
                "level {} expects {} coefficients for a length-{} signal",
                j + 1,
                expected,
                n
            )));
        }
    }
    if coeffs.approx.len() != coeffs.details[levels - 1].len() {
        return Err(Error::shape("idwt", coeffs.approx.len(), coeffs.details[levels - 1].len()));
    }
    let mut current = coeffs.approx.clone();
    for j in (0..levels).rev() {
        current = synthesize(&current, &coeffs.details[j], coeffs.lengths[j], filter, coeffs.extension);
    }
    Ok(current)
}

/// Granularity of the random detail factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FactorMode {
    /// An independent factor for every detail coefficient.
    #[default]
    PerCoefficient,
    /// One factor shared by all coefficients of a level.
    PerBand,
}

impl fmt::Display for FactorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FactorMode::PerCoefficient => "per-coefficient",
            FactorMode::PerBand => "per-band",
        })
    }
}

impl std::str::FromStr for FactorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-coefficient" => Ok(FactorMode::PerCoefficient),
            "per-band" => Ok(FactorMode::PerBand),
            other => Err(Error::invalid(format!("unknown factor mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub filter: WaveletFilter,
    pub levels: usize,
    /// Factors are drawn from `[lo, hi)`; `lo == hi` gives a fixed factor.
    pub factor_range: (f64, f64),
    pub seed: u64,
    /// 1-based levels to perturb; `None` means all.
    pub perturb_levels: Option<Vec<usize>>,
    pub mode: FactorMode,
    pub extension: Extension,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            filter: WaveletFilter::db4(),
            levels: 3,
            factor_range: (0.5, 1.5),
            seed: 42,
            perturb_levels: None,
            mode: FactorMode::PerCoefficient,
            extension: Extension::Symmetric,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.factor_range;
        if !(a.is_finite() && b.is_finite() && 0.0 <= a && a <= b) {
            return Err(Error::invalid(format!("factor range must satisfy 0 <= a <= b, got [{a}, {b}]")));
        }
        if self.levels == 0 {
            return Err(Error::invalid("levels must be >= 1"));
        }
        if let Some(sel) = &self.perturb_levels {
            if let Some(bad) = sel.iter().find(|&&j| j == 0 || j > self.levels) {
                return Err(Error::invalid(format!(
                    "perturb level {bad} outside 1..={}",
                    self.levels
                )));
            }
        }
        Ok(())
    }

    fn selects(&self, level: usize) -> bool {
        self.perturb_levels.as_ref().is_none_or(|s| s.contains(&level))
    }
}

/// Multiplies the selected detail bands by random factors. The approximation
/// band is never touched.
pub fn perturb(coeffs: &DwtCoeffs, cfg: &AugmentConfig, rng: &mut Rng) -> Result<DwtCoeffs> {
    cfg.validate()?;
    if let Some(sel) = &cfg.perturb_levels {
        if let Some(bad) = sel.iter().find(|&&j| j > coeffs.levels()) {
            return Err(Error::invalid(format!(
                "perturb level {bad} exceeds decomposition depth {}",
                coeffs.levels()
            )));
        }
    }
    let (lo, hi) = cfg.factor_range;
    let mut out = coeffs.clone();
    for (j, band) in out.details.iter_mut().enumerate() {
        if !cfg.selects(j + 1) {
            continue;
        }
        match cfg.mode {
            FactorMode::PerCoefficient => {
                for d in band.iter_mut() {
                    *d *= rng.uniform(lo, hi)?;
                }
            }
            FactorMode::PerBand => {
                let f = rng.uniform(lo, hi)?;
                band.iter_mut().for_each(|d| *d *= f);
            }
        }
    }
    Ok(out)
}

/// `idwt(perturb(dwt(x)))` with a generator seeded from `cfg.seed`.
pub fn augment_series(series: &[f64], cfg: &AugmentConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let coeffs = dwt(series, &cfg.filter, cfg.levels, cfg.extension)?;
    let mut rng = Rng::new(cfg.seed);
    idwt(&perturb(&coeffs, cfg, &mut rng)?, &cfg.filter)
}

/// Where a corpus member came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesProvenance {
    pub index: usize,
    /// `None` for the original series.
    pub seed: Option<u64>,
    pub factor_range: (f64, f64),
    pub filter: String,
    pub levels: usize,
    pub mode: FactorMode,
    /// Samples that came out negative and were clamped to zero.
    pub clamped: usize,
}

/// The original series followed by its augmented variants.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub series: Vec<TimeSeries>,
    pub provenance: Vec<SeriesProvenance>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }
}

/// Seed used for augmented copy `index` (0-based) under a base seed.
pub fn copy_seed(base: u64, index: usize) -> u64 {
    Rng::derive(base, index as u64).next_u64()
}

/// Original series plus `copies` independently perturbed variants. Each copy
/// draws from its own derived seed, so the result does not depend on how the
/// copies are scheduled.
pub fn expand_dataset(original: &TimeSeries, cfg: &AugmentConfig, copies: usize) -> Result<Corpus> {
    if copies == 0 {
        return Err(Error::invalid("copies must be >= 1"));
    }
    cfg.validate()?;
    let prov = |index, seed, clamped| SeriesProvenance {
        index,
        seed,
        factor_range: cfg.factor_range,
        filter: cfg.filter.name.clone(),
        levels: cfg.levels,
        mode: cfg.mode,
        clamped,
    };
    let variants: Vec<Result<(TimeSeries, SeriesProvenance)>> = (0..copies)
        .into_par_iter()
        .map(|i| {
            let seed = copy_seed(cfg.seed, i);
            let copy_cfg = AugmentConfig { seed, ..cfg.clone() };
            let mut values = augment_series(&original.values, &copy_cfg)?;
            let mut clamped = 0;
            for v in values.iter_mut().filter(|v| **v < 0.0) {
                *v = 0.0;
                clamped += 1;
            }
            let ts = TimeSeries::new(original.start, original.interval, values)?;
            Ok((ts, prov(i + 1, Some(seed), clamped)))
        })
        .collect();
    let mut series = vec![original.clone()];
    let mut provenance = vec![prov(0, None, 0)];
    for v in variants {
        let (ts, p) = v?;
        series.push(ts);
        provenance.push(p);
    }
    Ok(Corpus { series, provenance })
}

const PROVENANCE_HEADER: [&str; 8] = ["index", "kind", "seed", "factor_lo", "factor_hi", "filter", "levels", "mode"];

pub fn write_provenance_csv(provenance: &[SeriesProvenance], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::io(path, e.into());
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(PROVENANCE_HEADER).map_err(csv_err)?;
    for p in provenance {
        w.write_record([
            p.index.to_string(),
            if p.seed.is_some() { "augmented" } else { "original" }.to_string(),
            p.seed.map(|s| s.to_string()).unwrap_or_default(),
            p.factor_range.0.to_string(),
            p.factor_range.1.to_string(),
            p.filter.clone(),
            p.levels.to_string(),
            p.mode.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_provenance_csv(path: impl AsRef<Path>) -> Result<Vec<SeriesProvenance>> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: name.clone(),
        line,
        msg,
    };
    let header = r.headers().map_err(|e| parse_err(1, e.to_string()))?;
    if header.iter().ne(PROVENANCE_HEADER) {
        return Err(parse_err(1, format!("expected header {}", PROVENANCE_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let num = |k: usize| -> Result<f64> {
            field(k)
                .parse()
                .map_err(|_| parse_err(line, format!("bad number '{}'", field(k))))
        };
        let int = |k: usize| -> Result<u64> {
            field(k)
                .parse()
                .map_err(|_| parse_err(line, format!("bad integer '{}'", field(k))))
        };
        let seed = match field(1) {
            "original" => None,
            "augmented" => Some(int(2)?),
            other => return Err(parse_err(line, format!("unknown kind '{other}'"))),
        };
        out.push(SeriesProvenance {
            index: int(0)? as usize,
            seed,
            factor_range: (num(3)?, num(4)?),
            filter: field(5).to_string(),
            levels: int(6)? as usize,
            mode: field(7).parse().map_err(|e: Error| parse_err(line, e.to_string()))?,
            clamped: 0,
        });
    }
    Ok(out)
}
