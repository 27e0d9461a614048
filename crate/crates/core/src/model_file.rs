//! Versioned binary model files.
//!
//! Layout, all integers and reals little-endian:
//!
//! ```text
//! "TFL1"            magic
//! u32               format version
//! u32 u32 u32 u8    n_past, n_future, hidden, attention
//! f64 f64           scaler min, max
//! u64 u32           seed, epochs
//! u8 [u8; 32]       has_parent, SHA-256 of the parent model file (zeros if none)
//! u32               block count
//! per block:        u16 name length, name (UTF-8), u32 rows, u32 cols,
//!                   rows·cols f64 values in row-major order
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::dataset::ScalerParams;
use crate::error::{Error, Result};
use crate::seq2seq::{ModelConfig, ParamSet, Seq2SeqModel};

pub const MAGIC: &[u8; 4] = b"TFL1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Provenance {
    pub seed: u64,
    pub epochs: u32,
    /// SHA-256 of the model file this one was fine-tuned from.
    pub parent_hash: Option<[u8; 32]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub model: Seq2SeqModel,
    pub scaler: ScalerParams,
    pub provenance: Provenance,
}

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::ModelFormat(format!("{what} {v} does not fit in u32")))
}

pub fn encode_model(model: &Seq2SeqModel, scaler: &ScalerParams, provenance: &Provenance) -> Result<Vec<u8>> {
    let cfg = &model.config;
    let mut out = Vec::with_capacity(64 + model.params.param_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for (v, what) in [(cfg.n_past, "n_past"), (cfg.n_future, "n_future"), (cfg.hidden, "hidden")] {
        out.extend_from_slice(&to_u32(v, what)?.to_le_bytes());
    }
    out.push(cfg.attention as u8);
    out.extend_from_slice(&scaler.min.to_le_bytes());
    out.extend_from_slice(&scaler.max.to_le_bytes());
    out.extend_from_slice(&provenance.seed.to_le_bytes());
    out.extend_from_slice(&provenance.epochs.to_le_bytes());
    out.push(provenance.parent_hash.is_some() as u8);
    out.extend_from_slice(&provenance.parent_hash.unwrap_or([0; 32]));
    let blocks = model.params.blocks();
    out.extend_from_slice(&to_u32(blocks.len(), "block count")?.to_le_bytes());
    for b in blocks {
        let name = b.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&to_u32(b.rows, "rows")?.to_le_bytes());
        out.extend_from_slice(&to_u32(b.cols, "cols")?.to_le_bytes());
        for v in b.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::ModelFormat(format!(
                "truncated file: need {n} bytes for {what} at offset {}, {} left",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }

    fn flag(&mut self, what: &str) -> Result<bool> {
        match self.u8(what)? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::ModelFormat(format!("{what} flag must be 0 or 1, found {v}"))),
        }
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<SavedModel> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::ModelFormat(format!("bad magic {magic:?}, expected \"TFL1\"")));
    }
    let version = c.u32("version")?;
    if version > FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    if version == 0 {
        return Err(Error::ModelFormat("format version 0 is invalid".into()));
    }
    let n_past = c.u32("n_past")? as usize;
    let n_future = c.u32("n_future")? as usize;
    let hidden = c.u32("hidden")? as usize;
    let attention = c.flag("attention")?;
    let config = ModelConfig::new(n_past, n_future, hidden, attention)
        .map_err(|e| Error::ModelFormat(format!("invalid config block: {e}")))?;
    let scaler = ScalerParams::new(c.f64("scaler min")?, c.f64("scaler max")?)
        .map_err(|e| Error::ModelFormat(format!("invalid scaler: {e}")))?;
    let seed = c.u64("seed")?;
    let epochs = c.u32("epochs")?;
    let has_parent = c.flag("has_parent")?;
    let hash: [u8; 32] = c.array("parent hash")?;
    if !has_parent && hash != [0; 32] {
        return Err(Error::ModelFormat("parent hash present but has_parent is 0".into()));
    }
    let provenance = Provenance {
        seed,
        epochs,
        parent_hash: has_parent.then_some(hash),
    };

    let mut params = ParamSet::zeros(&config);
    let expected: Vec<(String, usize, usize)> = params
        .blocks()
        .iter()
        .map(|b| (b.name.to_string(), b.rows, b.cols))
        .collect();
    let count = c.u32("block count")? as usize;
    if count != expected.len() {
        return Err(Error::ModelFormat(format!(
            "expected {} weight blocks, found {count}",
            expected.len()
        )));
    }
    let mut slots = params.blocks_mut();
    for ((name, rows, cols), slot) in expected.iter().zip(slots.iter_mut()) {
        let len = c.u16("block name length")? as usize;
        let found = std::str::from_utf8(c.take(len, "block name")?)
            .map_err(|_| Error::ModelFormat("block name is not UTF-8".into()))?;
        if found != name {
            return Err(Error::ModelFormat(format!("expected block '{name}', found '{found}'")));
        }
        let (r, k) = (c.u32("rows")? as usize, c.u32("cols")? as usize);
        if (r, k) != (*rows, *cols) {
            return Err(Error::ModelFormat(format!(
                "block '{name}' has shape {r}x{k}, config implies {rows}x{cols}"
            )));
        }
        for v in slot.iter_mut() {
            *v = c.f64(name)?;
        }
    }
    drop(slots);
    if c.pos != bytes.len() {
        return Err(Error::ModelFormat(format!(
            "{} trailing bytes after the last block",
            bytes.len() - c.pos
        )));
    }
    if !params.is_finite() {
        return Err(Error::ModelFormat("non-finite weight".into()));
    }
    Ok(SavedModel {
        model: Seq2SeqModel::from_params(config, params)?,
        scaler,
        provenance,
    })
}

/// Writes the model and returns the SHA-256 of the written bytes.
pub fn save_model(
    model: &Seq2SeqModel,
    scaler: &ScalerParams,
    provenance: &Provenance,
    path: impl AsRef<Path>,
) -> Result<[u8; 32]> {
    let path = path.as_ref();
    let bytes = encode_model(model, scaler, provenance)?;
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(sha256(&bytes))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SavedModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

/// SHA-256 of a file on disk.
pub fn file_hash(path: impl AsRef<Path>) -> Result<[u8; 32]> {
    let path = path.as_ref();
    Ok(sha256(&std::fs::read(path).map_err(|e| Error::io(path, e))?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;

    fn sample(attention: bool) -> (Seq2SeqModel, ScalerParams, Provenance) {
        let cfg = ModelConfig::new(5, 3, 4, attention).unwrap();
        let model = Seq2SeqModel::init(cfg, &mut Rng::new(9)).unwrap();
        let scaler = ScalerParams::new(1.5e8, 9.25e8).unwrap();
        let prov = Provenance {
            seed: 9,
            epochs: 12,
            parent_hash: attention.then_some([7; 32]),
        };
        (model, scaler, prov)
    }

    #[test]
    fn round_trip_is_lossless_and_byte_exact() {
        for attention in [false, true] {
            let (m, s, p) = sample(attention);
            let bytes = encode_model(&m, &s, &p).unwrap();
            let back = decode_model(&bytes).unwrap();
            assert_eq!(back.model, m);
            assert_eq!(back.scaler, s);
            assert_eq!(back.provenance, p);
            assert_eq!(encode_model(&back.model, &back.scaler, &back.provenance).unwrap(), bytes);
        }
    }

    #[test]
    fn header_layout() {
        let (m, s, p) = sample(false);
        let bytes = encode_model(&m, &s, &p).unwrap();
        assert_eq!(&bytes[..4], b"TFL1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 5);
        assert_eq!(bytes[20], 0);
        let header = 4 + 4 + 12 + 1 + 16 + 8 + 4 + 1 + 32 + 4;
        let names: usize = m.params.blocks().iter().map(|b| 2 + b.name.len() + 8).sum();
        assert_eq!(bytes.len(), header + names + 8 * m.params.param_count());
    }

    #[test]
    fn every_truncation_rejected() {
        let (m, s, p) = sample(true);
        let bytes = encode_model(&m, &s, &p).unwrap();
        for cut in (0..bytes.len()).step_by(7) {
            assert!(matches!(decode_model(&bytes[..cut]), Err(Error::ModelFormat(_))), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_model(&extra).is_err());
    }

    #[test]
    fn bad_magic_and_future_version() {
        let (m, s, p) = sample(false);
        let mut bytes = encode_model(&m, &s, &p).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_model(&bad), Err(Error::ModelFormat(_))));
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            decode_model(&bytes),
            Err(Error::UnsupportedVersion { found: 2, supported: 1 })
        ));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (m, s, p) = sample(false);
        let mut bytes = encode_model(&m, &s, &p).unwrap();
        // hidden 4 -> 5 makes every block disagree with the config
        bytes[16..20].copy_from_slice(&5u32.to_le_bytes());
        let err = decode_model(&bytes).unwrap_err().to_string();
        assert!(err.contains("shape"), "{err}");
    }

    #[test]
    fn files_and_hashes() {
        let (m, s, p) = sample(false);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tfl");
        let h = save_model(&m, &s, &p, &path).unwrap();
        assert_eq!(file_hash(&path).unwrap(), h);
        assert_eq!(load_model(&path).unwrap().model, m);
        assert_eq!(hex(&[0, 171, 255]), "00abff");
        assert!(load_model(dir.path().join("missing.tfl")).is_err());
    }
}
