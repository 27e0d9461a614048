//! Single LSTM cell: forward step with cached activations and its exact
//! backward step.
//!
//! Gates use the concatenated-input convention `W_g · [h_{t-1}, x_t] + b_g`,
//! so every gate matrix is `hidden × (hidden + input)`.

use crate::error::{Error, Result};
use crate::numeric::{sigmoid, Matrix, Rng};

/// Weight matrix and bias of one gate.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Gate {
    fn zeros(hidden: usize, width: usize) -> Self {
        Gate {
            w: Matrix::zeros(hidden, width),
            b: vec![0.0; hidden],
        }
    }

    fn glorot(hidden: usize, width: usize, rng: &mut Rng) -> Self {
        Gate {
            w: glorot_matrix(hidden, width, rng),
            b: vec![0.0; hidden],
        }
    }
}

/// Glorot-uniform matrix with bound `sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let bound = glorot_bound(cols, rows);
    let mut m = Matrix::zeros(rows, cols);
    for v in m.as_mut_slice() {
        *v = rng.uniform(-bound, bound).expect("bound is finite and ordered");
    }
    m
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Parameters of one LSTM layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    hidden: usize,
    input: usize,
    pub forget: Gate,
    pub input_gate: Gate,
    pub candidate: Gate,
    pub output: Gate,
}

impl LstmParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        let width = hidden + input;
        LstmParams {
            hidden,
            input,
            forget: Gate::zeros(hidden, width),
            input_gate: Gate::zeros(hidden, width),
            candidate: Gate::zeros(hidden, width),
            output: Gate::zeros(hidden, width),
        }
    }

    /// Glorot-uniform weights, zero biases. Draw order: f, i, C, o.
    pub fn glorot(hidden: usize, input: usize, rng: &mut Rng) -> Self {
        let width = hidden + input;
        LstmParams {
            hidden,
            input,
            forget: Gate::glorot(hidden, width, rng),
            input_gate: Gate::glorot(hidden, width, rng),
            candidate: Gate::glorot(hidden, width, rng),
            output: Gate::glorot(hidden, width, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input(&self) -> usize {
        self.input
    }

    /// Gates in the fixed order f, i, C, o.
    pub fn gates(&self) -> [&Gate; 4] {
        [&self.forget, &self.input_gate, &self.candidate, &self.output]
    }

    pub fn gates_mut(&mut self) -> [&mut Gate; 4] {
        [
            &mut self.forget,
            &mut self.input_gate,
            &mut self.candidate,
            &mut self.output,
        ]
    }

    pub fn param_count(&self) -> usize {
        4 * self.hidden * (self.hidden + self.input + 1)
    }
}

/// Hidden and cell state of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Everything the backward step needs from one forward step.
#[derive(Debug, Clone)]
pub struct StepCache {
    /// `[h_{t-1}, x_t]`
    z: Vec<f64>,
    c_prev: Vec<f64>,
    pub f: Vec<f64>,
    pub i: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    tanh_c: Vec<f64>,
}

pub fn lstm_step(params: &LstmParams, x: &[f64], prev: &LstmState) -> Result<(LstmState, StepCache)> {
    if x.len() != params.input {
        return Err(Error::shape("lstm_step input", params.input, x.len()));
    }
    if prev.h.len() != params.hidden || prev.c.len() != params.hidden {
        return Err(Error::shape(
            "lstm_step state",
            params.hidden,
            format!("h {} / c {}", prev.h.len(), prev.c.len()),
        ));
    }
    Ok(step_unchecked(params, x, prev))
}

pub(crate) fn step_unchecked(params: &LstmParams, x: &[f64], prev: &LstmState) -> (LstmState, StepCache) {
    let n = params.hidden;
    let mut z = Vec::with_capacity(n + params.input);
    z.extend_from_slice(&prev.h);
    z.extend_from_slice(x);

    let affine = |gate: &Gate| {
        let mut a = vec![0.0; n];
        gate.w.matvec_into(&z, &mut a);
        for (ak, bk) in a.iter_mut().zip(&gate.b) {
            *ak += bk;
        }
        a
    };
    let mut f = affine(&params.forget);
    let mut i = affine(&params.input_gate);
    let mut g = affine(&params.candidate);
    let mut o = affine(&params.output);
    f.iter_mut().for_each(|v| *v = sigmoid(*v));
    i.iter_mut().for_each(|v| *v = sigmoid(*v));
    g.iter_mut().for_each(|v| *v = v.tanh());
    o.iter_mut().for_each(|v| *v = sigmoid(*v));

    let c: Vec<f64> = (0..n).map(|k| f[k] * prev.c[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = (0..n).map(|k| o[k] * tanh_c[k]).collect();

    let cache = StepCache {
        z,
        c_prev: prev.c.clone(),
        f,
        i,
        g,
        o,
        tanh_c,
    };
    (LstmState { h, c }, cache)
}

/// Backpropagates `(dh, dc)` through one step.
///
/// Accumulates parameter gradients into `grads`, writes `[dh_{t-1}, dx_t]`
/// into `dz` (overwriting) and returns `dc_{t-1}`.
pub(crate) fn step_backward(
    params: &LstmParams,
    cache: &StepCache,
    dh: &[f64],
    dc: &[f64],
    grads: &mut LstmParams,
    dz: &mut [f64],
) -> Vec<f64> {
    let n = params.hidden;
    let mut da_f = vec![0.0; n];
    let mut da_i = vec![0.0; n];
    let mut da_g = vec![0.0; n];
    let mut da_o = vec![0.0; n];
    let mut dc_prev = vec![0.0; n];
    for k in 0..n {
        let (f, i, g, o, tc) = (cache.f[k], cache.i[k], cache.g[k], cache.o[k], cache.tanh_c[k]);
        let d_o = dh[k] * tc;
        let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
        da_f[k] = dct * cache.c_prev[k] * f * (1.0 - f);
        da_i[k] = dct * g * i * (1.0 - i);
        da_g[k] = dct * i * (1.0 - g * g);
        da_o[k] = d_o * o * (1.0 - o);
        dc_prev[k] = dct * f;
    }

    dz.iter_mut().for_each(|v| *v = 0.0);
    let das = [&da_f, &da_i, &da_g, &da_o];
    for ((gate, grad), da) in params.gates().into_iter().zip(grads.gates_mut()).zip(das) {
        grad.w.add_outer(da, &cache.z);
        for (b, d) in grad.b.iter_mut().zip(da.iter()) {
            *b += d;
        }
        gate.w.matvec_t_acc(da, dz);
    }
    dc_prev
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent scalar evaluation of the gate equations.
    fn oracle_step(p: &LstmParams, x: &[f64], prev: &LstmState) -> LstmState {
        let n = p.hidden();
        let z: Vec<f64> = prev.h.iter().chain(x).copied().collect();
        let pre = |g: &Gate, k: usize| -> f64 {
            let mut s = g.b[k];
            for (j, zj) in z.iter().enumerate() {
                s += g.w.get(k, j) * zj;
            }
            s
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut h = vec![0.0; n];
        let mut c = vec![0.0; n];
        for k in 0..n {
            let f = sig(pre(&p.forget, k));
            let i = sig(pre(&p.input_gate, k));
            let g = pre(&p.candidate, k).tanh();
            let o = sig(pre(&p.output, k));
            c[k] = f * prev.c[k] + i * g;
            h[k] = o * c[k].tanh();
        }
        LstmState { h, c }
    }

    #[test]
    fn zero_params_fixed_point() {
        let p = LstmParams::zeros(3, 2);
        let (s, cache) = lstm_step(&p, &[0.7, -4.0], &LstmState::zeros(3)).unwrap();
        assert_eq!(s.h, vec![0.0; 3]);
        assert_eq!(s.c, vec![0.0; 3]);
        assert!(cache.f.iter().chain(&cache.i).chain(&cache.o).all(|&v| v == 0.5));
        assert!(cache.g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_evaluated_single_unit() {
        let mut p = LstmParams::zeros(1, 1);
        p.candidate.b[0] = 0.5f64.atanh();
        let (s, _) = lstm_step(&p, &[1.0], &LstmState::zeros(1)).unwrap();
        assert!((s.c[0] - 0.25).abs() < 1e-15);
        assert!((s.h[0] - 0.5 * 0.25f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn two_steps_match_oracle_applied_twice() {
        let mut rng = Rng::new(17);
        let mut p = LstmParams::glorot(5, 2, &mut rng);
        for gate in p.gates_mut() {
            for b in gate.b.iter_mut() {
                *b = rng.uniform(-0.5, 0.5).unwrap();
            }
        }
        let x = [0.3, -0.8];
        let (s1, _) = lstm_step(&p, &x, &LstmState::zeros(5)).unwrap();
        let (s2, _) = lstm_step(&p, &x, &s1).unwrap();
        let o1 = oracle_step(&p, &x, &LstmState::zeros(5));
        let o2 = oracle_step(&p, &x, &o1);
        for (a, b) in s2.h.iter().zip(&o2.h).chain(s2.c.iter().zip(&o2.c)) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn gate_ranges_hold() {
        let mut rng = Rng::new(4);
        let p = LstmParams::glorot(6, 1, &mut rng);
        let mut s = LstmState::zeros(6);
        for t in 0..20 {
            let (next, c) = lstm_step(&p, &[(t as f64).sin() * 3.0], &s).unwrap();
            for k in 0..6 {
                assert!(c.f[k] > 0.0 && c.f[k] < 1.0);
                assert!(c.i[k] > 0.0 && c.i[k] < 1.0);
                assert!(c.o[k] > 0.0 && c.o[k] < 1.0);
                assert!(c.g[k] > -1.0 && c.g[k] < 1.0);
                assert!(next.h[k].abs() < 1.0);
            }
            s = next;
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let p = LstmParams::zeros(2, 1);
        assert!(lstm_step(&p, &[1.0, 2.0], &LstmState::zeros(2)).is_err());
        assert!(lstm_step(&p, &[1.0], &LstmState::zeros(3)).is_err());
    }

    #[test]
    fn backward_matches_finite_differences_on_one_step() {
        let mut rng = Rng::new(99);
        let p = LstmParams::glorot(3, 2, &mut rng);
        let prev = LstmState {
            h: vec![0.1, -0.2, 0.3],
            c: vec![0.5, -0.4, 0.2],
        };
        let x = [0.9, -0.3];
        // loss = sum(h) + 0.5 * sum(c)
        let loss = |p: &LstmParams| {
            let (s, _) = lstm_step(p, &x, &prev).unwrap();
            s.h.iter().sum::<f64>() + 0.5 * s.c.iter().sum::<f64>()
        };
        let (_, cache) = lstm_step(&p, &x, &prev).unwrap();
        let mut grads = LstmParams::zeros(3, 2);
        let mut dz = vec![0.0; 5];
        step_backward(&p, &cache, &[1.0; 3], &[0.5; 3], &mut grads, &mut dz);
        let eps = 1e-6;
        for gi in 0..4 {
            for idx in 0..15 {
                let mut plus = p.clone();
                plus.gates_mut()[gi].w.as_mut_slice()[idx] += eps;
                let mut minus = p.clone();
                minus.gates_mut()[gi].w.as_mut_slice()[idx] -= eps;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                let an = grads.gates()[gi].w.as_slice()[idx];
                assert!((fd - an).abs() < 1e-8, "gate {gi} idx {idx}: {fd} vs {an}");
            }
        }
    }
}
