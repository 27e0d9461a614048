//! Univariate multi-step traffic forecasting.
//!
//! The crate provides LSTM encoder-decoder forecasters (with and without
//! dot-product attention) trained by exact backpropagation through time,
//! wavelet-based data augmentation, two-phase transfer learning with layer
//! freezing, and per-step evaluation reports. The `tfl` binary wraps the same
//! pipeline in subcommands.
//!
//! ```no_run
//! use tfl::dataset::{prepare_split, synth, SynthProfile};
//! use tfl::numeric::Rng;
//! use tfl::seq2seq::{ModelConfig, Seq2SeqModel};
//! use tfl::training::{train, HuberConfig, TrainConfig};
//!
//! let series = synth(&SynthProfile::default(), 4000, 0)?;
//! let split = prepare_split(&series, 0.8, 12, 6, None)?;
//! let cfg = ModelConfig::new(12, 6, 32, true)?;
//! let mut model = Seq2SeqModel::init(cfg, &mut Rng::new(42))?;
//! train(&mut model, &split.train_windows, &TrainConfig::default(), &HuberConfig::default())?;
//! # Ok::<(), tfl::Error>(())
//! ```

pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod lstm;
pub mod model_file;
pub mod numeric;
pub mod seq2seq;
pub mod training;
pub mod wavelet;

pub use error::{Error, Result};
