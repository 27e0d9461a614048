//! LSTM encoder-decoder with an optional dot-product attention decoder.
//!
//! The decoder is non-autoregressive: at every one of the `n_future` steps its
//! input is the encoder's final hidden state `h_T`, and its initial state is
//! `(h_T, c_T)`. A single affine output layer maps each decoder step (or, with
//! attention, `[context_t, decoder_h_t]`) to one scalar.

use crate::error::{Error, Result};
use crate::lstm::{glorot_bound, glorot_matrix, step_backward, step_unchecked, LstmParams, LstmState, StepCache};
use crate::numeric::{axpy, dot, softmax_into, Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub n_past: usize,
    pub n_future: usize,
    pub hidden: usize,
    pub attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_past: 12,
            n_future: 6,
            hidden: 100,
            attention: false,
        }
    }
}

impl ModelConfig {
    pub fn new(n_past: usize, n_future: usize, hidden: usize, attention: bool) -> Result<Self> {
        let cfg = ModelConfig {
            n_past,
            n_future,
            hidden,
            attention,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_past == 0 || self.n_future == 0 || self.hidden == 0 {
            return Err(Error::invalid(format!(
                "n_past, n_future and hidden must be >= 1 (got {}, {}, {})",
                self.n_past, self.n_future, self.hidden
            )));
        }
        Ok(())
    }

    /// Input width of the output layer.
    pub fn output_width(&self) -> usize {
        if self.attention {
            2 * self.hidden
        } else {
            self.hidden
        }
    }
}

/// Affine map from a feature vector to one scalar, shared by all decoder steps.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub weight: Vec<f64>,
    pub bias: f64,
}

impl DenseParams {
    pub fn zeros(width: usize) -> Self {
        DenseParams {
            weight: vec![0.0; width],
            bias: 0.0,
        }
    }

    pub fn glorot(width: usize, rng: &mut Rng) -> Self {
        DenseParams {
            weight: glorot_matrix(1, width, rng).as_slice().to_vec(),
            bias: 0.0,
        }
    }

    fn apply(&self, features: &[f64]) -> f64 {
        dot(&self.weight, features) + self.bias
    }
}

/// A named view of one parameter block.
#[derive(Debug, Clone, Copy)]
pub struct ParamBlock<'a> {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub values: &'a [f64],
}

const ENCODER_NAMES: [(&str, &str); 4] = [
    ("encoder.W_f", "encoder.b_f"),
    ("encoder.W_i", "encoder.b_i"),
    ("encoder.W_C", "encoder.b_C"),
    ("encoder.W_o", "encoder.b_o"),
];
const DECODER_NAMES: [(&str, &str); 4] = [
    ("decoder.W_f", "decoder.b_f"),
    ("decoder.W_i", "decoder.b_i"),
    ("decoder.W_C", "decoder.b_C"),
    ("decoder.W_o", "decoder.b_o"),
];
pub const OUTPUT_WEIGHT: &str = "output.W";
pub const OUTPUT_BIAS: &str = "output.b";

/// Every learnable parameter of the model. Gradients and optimizer moments
/// reuse this type, so they always share the model's shape tree.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub encoder: LstmParams,
    pub decoder: LstmParams,
    pub output: DenseParams,
}

pub type Gradients = ParamSet;

impl ParamSet {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        ParamSet {
            encoder: LstmParams::zeros(cfg.hidden, 1),
            decoder: LstmParams::zeros(cfg.hidden, cfg.hidden),
            output: DenseParams::zeros(cfg.output_width()),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet {
            encoder: LstmParams::zeros(self.encoder.hidden(), self.encoder.input()),
            decoder: LstmParams::zeros(self.decoder.hidden(), self.decoder.input()),
            output: DenseParams::zeros(self.output.weight.len()),
        }
    }

    /// Blocks in canonical order: encoder gates (f, i, C, o; weight then
    /// bias), decoder gates, output weight, output bias.
    pub fn blocks(&self) -> Vec<ParamBlock<'_>> {
        let mut out = Vec::with_capacity(18);
        for (lstm, names) in [(&self.encoder, ENCODER_NAMES), (&self.decoder, DECODER_NAMES)] {
            for (gate, (wn, bn)) in lstm.gates().into_iter().zip(names) {
                out.push(ParamBlock {
                    name: wn,
                    rows: gate.w.rows(),
                    cols: gate.w.cols(),
                    values: gate.w.as_slice(),
                });
                out.push(ParamBlock {
                    name: bn,
                    rows: gate.b.len(),
                    cols: 1,
                    values: &gate.b,
                });
            }
        }
        out.push(ParamBlock {
            name: OUTPUT_WEIGHT,
            rows: 1,
            cols: self.output.weight.len(),
            values: &self.output.weight,
        });
        out.push(ParamBlock {
            name: OUTPUT_BIAS,
            rows: 1,
            cols: 1,
            values: std::slice::from_ref(&self.output.bias),
        });
        out
    }

    /// Mutable blocks, same order as [`ParamSet::blocks`].
    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(18);
        for lstm in [&mut self.encoder, &mut self.decoder] {
            for gate in lstm.gates_mut() {
                out.push(gate.w.as_mut_slice());
                out.push(gate.b.as_mut_slice());
            }
        }
        out.push(self.output.weight.as_mut_slice());
        out.push(std::slice::from_mut(&mut self.output.bias));
        out
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.values.len()).sum()
    }

    /// `self += s · other`
    pub fn add_scaled(&mut self, other: &ParamSet, s: f64) {
        let src = other.blocks();
        for (dst, src) in self.blocks_mut().into_iter().zip(src) {
            axpy(s, src.values, dst);
        }
    }

    pub fn clear(&mut self) {
        for block in self.blocks_mut() {
            block.fill(0.0);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for block in self.blocks_mut() {
            block.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.values.iter().all(|v| v.is_finite()))
    }

    /// Same block names and shapes.
    pub fn congruent(&self, other: &ParamSet) -> bool {
        let (a, b) = (self.blocks(), other.blocks());
        a.len() == b.len()
            && a.iter()
                .zip(&b)
                .all(|(x, y)| x.name == y.name && x.rows == y.rows && x.cols == y.cols)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqModel {
    pub config: ModelConfig,
    pub params: ParamSet,
}

/// Encoder result: final state plus every hidden state `h_1 … h_T`.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub final_state: LstmState,
    pub stack: Vec<Vec<f64>>,
    steps: Vec<StepCache>,
}

/// Attention weights (`n_future × n_past`, one probability row per decoder
/// step) and the context vector of each step.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub weights: Matrix,
    pub contexts: Vec<Vec<f64>>,
}

struct DecoderRun {
    stack: Vec<Vec<f64>>,
    steps: Vec<StepCache>,
}

/// Full forward pass with everything backpropagation needs.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    config: ModelConfig,
    encoder: EncoderOutput,
    decoder_stack: Vec<Vec<f64>>,
    decoder_steps: Vec<StepCache>,
    attention: Option<AttentionTrace>,
    features: Vec<Vec<f64>>,
    pub predictions: Vec<f64>,
}

impl ForwardPass {
    pub fn attention(&self) -> Option<&AttentionTrace> {
        self.attention.as_ref()
    }

    pub fn encoder(&self) -> &EncoderOutput {
        &self.encoder
    }

    /// Inputs of the output layer, one per decoder step.
    pub(crate) fn features(&self) -> &[Vec<f64>] {
        &self.features
    }
}

impl Seq2SeqModel {
    /// Glorot-uniform weights, zero biases. Draw order: encoder, decoder,
    /// output layer.
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let params = ParamSet {
            encoder: LstmParams::glorot(config.hidden, 1, rng),
            decoder: LstmParams::glorot(config.hidden, config.hidden, rng),
            output: DenseParams::glorot(config.output_width(), rng),
        };
        Ok(Seq2SeqModel { config, params })
    }

    /// All-zero parameters.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Seq2SeqModel {
            config,
            params: ParamSet::zeros(&config),
        })
    }

    /// Builds a model from explicit parameters, checking their shapes.
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        if !ParamSet::zeros(&config).congruent(&params) {
            return Err(Error::invalid("parameter shapes do not match the model configuration"));
        }
        Ok(Seq2SeqModel { config, params })
    }

    /// Replaces the output layer with a freshly initialized one.
    pub fn reinit_output(&mut self, rng: &mut Rng) {
        self.params.output = DenseParams::glorot(self.config.output_width(), rng);
    }

    pub fn output_init_bound(&self) -> f64 {
        glorot_bound(self.config.output_width(), 1)
    }

    pub fn encode(&self, window: &[f64]) -> Result<EncoderOutput> {
        if window.len() != self.config.n_past {
            return Err(Error::shape("encode window", self.config.n_past, window.len()));
        }
        if window.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encode window"));
        }
        let enc = &self.params.encoder;
        let mut state = LstmState::zeros(self.config.hidden);
        let mut stack = Vec::with_capacity(window.len());
        let mut steps = Vec::with_capacity(window.len());
        for &x in window {
            let (next, cache) = step_unchecked(enc, &[x], &state);
            stack.push(next.h.clone());
            steps.push(cache);
            state = next;
        }
        Ok(EncoderOutput {
            final_state: state,
            stack,
            steps,
        })
    }

    fn check_encoder_output(&self, enc: &EncoderOutput) -> Result<()> {
        if enc.stack.len() != self.config.n_past || enc.final_state.h.len() != self.config.hidden {
            return Err(Error::shape(
                "encoder output",
                format!("{}x{}", self.config.n_past, self.config.hidden),
                format!("{}x{}", enc.stack.len(), enc.final_state.h.len()),
            ));
        }
        Ok(())
    }

    fn run_decoder(&self, enc: &EncoderOutput) -> DecoderRun {
        let dec = &self.params.decoder;
        let input = &enc.final_state.h;
        let mut state = enc.final_state.clone();
        let mut stack = Vec::with_capacity(self.config.n_future);
        let mut steps = Vec::with_capacity(self.config.n_future);
        for _ in 0..self.config.n_future {
            let (next, cache) = step_unchecked(dec, input, &state);
            stack.push(next.h.clone());
            steps.push(cache);
            state = next;
        }
        DecoderRun { stack, steps }
    }

    pub fn decode_plain(&self, enc: &EncoderOutput) -> Result<Vec<f64>> {
        if self.config.attention {
            return Err(Error::invalid("decode_plain called on an attention model"));
        }
        self.check_encoder_output(enc)?;
        let run = self.run_decoder(enc);
        Ok(run.stack.iter().map(|h| self.params.output.apply(h)).collect())
    }

    pub fn decode_attention(&self, enc: &EncoderOutput) -> Result<(Vec<f64>, AttentionTrace)> {
        if !self.config.attention {
            return Err(Error::invalid("decode_attention called on a model without attention"));
        }
        self.check_encoder_output(enc)?;
        let run = self.run_decoder(enc);
        let (trace, features) = attend(&run.stack, &enc.stack);
        let preds = features.iter().map(|f| self.params.output.apply(f)).collect();
        Ok((preds, trace))
    }

    pub fn predict(&self, window: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(window)?.predictions)
    }

    pub fn forward(&self, window: &[f64]) -> Result<ForwardPass> {
        let encoder = self.encode(window)?;
        let run = self.run_decoder(&encoder);
        let (attention, features) = if self.config.attention {
            let (trace, features) = attend(&run.stack, &encoder.stack);
            (Some(trace), features)
        } else {
            (None, run.stack.clone())
        };
        let predictions = features.iter().map(|f| self.params.output.apply(f)).collect();
        Ok(ForwardPass {
            config: self.config,
            encoder,
            decoder_stack: run.stack,
            decoder_steps: run.steps,
            attention,
            features,
            predictions,
        })
    }

    /// Exact gradients of a loss whose derivative w.r.t. the predictions is
    /// `loss_grad`.
    pub fn backward(&self, pass: &ForwardPass, loss_grad: &[f64]) -> Result<Gradients> {
        let mut grads = self.params.zeros_like();
        self.backward_into(pass, loss_grad, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Seq2SeqModel::backward`] but accumulates into `grads`.
    pub fn backward_into(&self, pass: &ForwardPass, loss_grad: &[f64], grads: &mut Gradients) -> Result<()> {
        let cfg = self.config;
        if pass.config != cfg
            || pass.decoder_steps.len() != cfg.n_future
            || pass.encoder.steps.len() != cfg.n_past
        {
            return Err(Error::invalid("forward pass does not belong to this model configuration"));
        }
        if loss_grad.len() != cfg.n_future {
            return Err(Error::shape("backward loss gradient", cfg.n_future, loss_grad.len()));
        }
        if !self.params.congruent(grads) {
            return Err(Error::invalid("gradient buffer is not congruent with the model"));
        }
        let h = cfg.hidden;
        let mut d_dec = vec![vec![0.0; h]; cfg.n_future];
        let mut d_enc = vec![vec![0.0; h]; cfg.n_past];

        let w = &self.params.output.weight;
        for (s, &gy) in loss_grad.iter().enumerate() {
            if gy == 0.0 {
                continue;
            }
            grads.output.bias += gy;
            axpy(gy, &pass.features[s], &mut grads.output.weight);
            match &pass.attention {
                None => axpy(gy, w, &mut d_dec[s]),
                Some(trace) => {
                    let d_ctx: Vec<f64> = w[..h].iter().map(|v| gy * v).collect();
                    axpy(gy, &w[h..], &mut d_dec[s]);
                    let a = trace.weights.row(s);
                    let e = &pass.encoder.stack;
                    let da: Vec<f64> = e.iter().map(|et| dot(&d_ctx, et)).collect();
                    let mean: f64 = a.iter().zip(&da).map(|(x, y)| x * y).sum();
                    for t in 0..cfg.n_past {
                        axpy(a[t], &d_ctx, &mut d_enc[t]);
                        let ds = a[t] * (da[t] - mean);
                        if ds != 0.0 {
                            axpy(ds, &e[t], &mut d_dec[s]);
                            axpy(ds, &pass.decoder_stack[s], &mut d_enc[t]);
                        }
                    }
                }
            }
        }

        // decoder BPTT; every step's input is h_T
        let dec = &self.params.decoder;
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut d_input = vec![0.0; h];
        let mut dz = vec![0.0; 2 * h];
        for s in (0..cfg.n_future).rev() {
            let dh: Vec<f64> = d_dec[s].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
            dc_next = step_backward(dec, &pass.decoder_steps[s], &dh, &dc_next, &mut grads.decoder, &mut dz);
            dh_next.copy_from_slice(&dz[..h]);
            axpy(1.0, &dz[h..], &mut d_input);
        }
        // decoder initial state (h_T, c_T) and repeated input both come from the encoder
        let last = cfg.n_past - 1;
        axpy(1.0, &dh_next, &mut d_enc[last]);
        axpy(1.0, &d_input, &mut d_enc[last]);

        let enc = &self.params.encoder;
        let mut dh_next = vec![0.0; h];
        let mut dz = vec![0.0; h + 1];
        for t in (0..cfg.n_past).rev() {
            let dh: Vec<f64> = d_enc[t].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
            dc_next = step_backward(enc, &pass.encoder.steps[t], &dh, &dc_next, &mut grads.encoder, &mut dz);
            dh_next.copy_from_slice(&dz[..h]);
        }
        Ok(())
    }
}

/// Dot-product attention of each decoder state over the encoder stack.
/// Returns the trace and the `[context, decoder_h]` features.
fn attend(decoder: &[Vec<f64>], encoder: &[Vec<f64>]) -> (AttentionTrace, Vec<Vec<f64>>) {
    let (n_future, n_past) = (decoder.len(), encoder.len());
    let hidden = decoder.first().map_or(0, |d| d.len());
    let mut weights = Matrix::zeros(n_future, n_past);
    let mut contexts = Vec::with_capacity(n_future);
    let mut features = Vec::with_capacity(n_future);
    let mut scores = vec![0.0; n_past];
    for (s, d) in decoder.iter().enumerate() {
        for (sc, e) in scores.iter_mut().zip(encoder) {
            *sc = dot(d, e);
        }
        let row = &mut weights.as_mut_slice()[s * n_past..(s + 1) * n_past];
        softmax_into(&scores, row);
        let mut ctx = vec![0.0; hidden];
        for (a, e) in row.iter().zip(encoder) {
            axpy(*a, e, &mut ctx);
        }
        if n_past == 1 {
            // a single position gets weight exactly 1; keep the context bit-identical
            ctx.copy_from_slice(&encoder[0]);
        }
        let mut feat = ctx.clone();
        feat.extend_from_slice(d);
        contexts.push(ctx);
        features.push(feat);
    }
    (AttentionTrace { weights, contexts }, features)
}
