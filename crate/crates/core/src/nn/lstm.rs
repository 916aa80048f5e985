//! LSTM cell, batched over rows.
//!
//! ```text
//! i = σ(W_i h + V_i x + b_i)      o = σ(W_o h + V_o x + b_o)
//! f = σ(W_f h + V_f x + b_f)      c̃ = tanh(BN(W_c h + V_c x + b_c))
//! c = f ⊙ c_prev + i ⊙ c̃          h = o ⊙ tanh(c)
//! ```
//! The batch norm on the candidate pre-activation is optional.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::sigmoid;
use super::batch_norm::{BatchNormParams, BnCache};
use super::dense::glorot_matrix;
use crate::error::{NtfError, Result};
use crate::linalg::Matrix;

pub const GATES: usize = 4;
pub const INPUT_GATE: usize = 0;
pub const OUTPUT_GATE: usize = 1;
pub const FORGET_GATE: usize = 2;
pub const CANDIDATE: usize = 3;

/// Gate parameters in the order input, output, forget, candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub hidden: usize,
    pub input: usize,
    /// Recurrent weights, each (hidden × hidden).
    pub w: [Matrix; GATES],
    /// Input weights, each (hidden × input).
    pub v: [Matrix; GATES],
    pub b: [Vec<f64>; GATES],
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmParams {
            hidden,
            input,
            w: std::array::from_fn(|_| Matrix::zeros(hidden, hidden)),
            v: std::array::from_fn(|_| Matrix::zeros(hidden, input)),
            b: std::array::from_fn(|_| vec![0.0; hidden]),
        }
    }

    /// Glorot-uniform weights, zero biases except the forget gate at `forget_bias`.
    pub fn init<R: Rng>(input: usize, hidden: usize, forget_bias: f64, rng: &mut R) -> Self {
        let mut p = LstmParams::zeros(input, hidden);
        for g in 0..GATES {
            p.w[g] = glorot_matrix(hidden, hidden, rng);
            p.v[g] = glorot_matrix(hidden, input, rng);
        }
        p.b[FORGET_GATE].fill(forget_bias);
        p
    }
}

/// Cell and hidden state of a single sequence, with the gates that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub c: Vec<f64>,
    pub h: Vec<f64>,
    pub gates: Option<GateTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateTrace {
    pub input: Vec<f64>,
    pub output: Vec<f64>,
    pub forget: Vec<f64>,
    pub candidate: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            c: vec![0.0; hidden],
            h: vec![0.0; hidden],
            gates: None,
        }
    }
}

/// How the candidate pre-activation is normalized in a batched step.
#[derive(Debug, Clone, Copy)]
pub enum CandidateNorm<'a> {
    None,
    /// Batch statistics over the rows, with optional row weights.
    Train(&'a BatchNormParams, Option<&'a [f64]>),
    /// Running statistics.
    Inference(&'a BatchNormParams),
}

/// Everything the backward pass of one batched step needs.
#[derive(Debug, Clone)]
pub struct StepCache {
    pub x: Matrix,
    pub h_prev: Matrix,
    pub c_prev: Matrix,
    pub input: Matrix,
    pub output: Matrix,
    pub forget: Matrix,
    pub candidate: Matrix,
    pub tanh_c: Matrix,
    pub c: Matrix,
    pub h: Matrix,
    pub bn: Option<BnCache>,
}

/// One step for a batch of rows. `x` is (rows × input), states are (rows × hidden).
pub fn lstm_step_batch(
    p: &LstmParams,
    x: &Matrix,
    h_prev: &Matrix,
    c_prev: &Matrix,
    norm: CandidateNorm<'_>,
) -> Result<StepCache> {
    let rows = x.rows();
    if x.cols() != p.input {
        return Err(NtfError::shape(
            format!("input width {}", p.input),
            x.cols(),
        ));
    }
    if h_prev.shape() != (rows, p.hidden) || c_prev.shape() != (rows, p.hidden) {
        return Err(NtfError::shape(
            format!("state {rows}x{}", p.hidden),
            format!("{:?} / {:?}", h_prev.shape(), c_prev.shape()),
        ));
    }
    let d = p.hidden;
    let mut pre: [Matrix; GATES] = std::array::from_fn(|_| Matrix::zeros(rows, d));
    let mut tmp = vec![0.0; d];
    for (g, pre_g) in pre.iter_mut().enumerate() {
        for r in 0..rows {
            let out = pre_g.row_mut(r);
            p.w[g].matvec_into(h_prev.row(r), out);
            p.v[g].matvec_into(x.row(r), &mut tmp);
            for ((o, t), b) in out.iter_mut().zip(&tmp).zip(&p.b[g]) {
                *o += t + b;
            }
        }
    }
    let [mut input, mut output, mut forget, cand_pre] = pre;
    for m in [&mut input, &mut output, &mut forget] {
        m.as_mut_slice().iter_mut().for_each(|v| *v = sigmoid(*v));
    }
    let (mut candidate, bn) = match norm {
        CandidateNorm::None => (cand_pre, None),
        CandidateNorm::Train(bn, weights) => {
            let (y, cache) = bn.forward_train(&cand_pre, weights)?;
            (y, Some(cache))
        }
        CandidateNorm::Inference(bn) => (bn.forward_inference(&cand_pre)?, None),
    };
    candidate
        .as_mut_slice()
        .iter_mut()
        .for_each(|v| *v = v.tanh());

    let mut c = Matrix::zeros(rows, d);
    let mut tanh_c = Matrix::zeros(rows, d);
    let mut h = Matrix::zeros(rows, d);
    for idx in 0..rows * d {
        let cv = forget.as_slice()[idx] * c_prev.as_slice()[idx]
            + input.as_slice()[idx] * candidate.as_slice()[idx];
        let tc = cv.tanh();
        c.as_mut_slice()[idx] = cv;
        tanh_c.as_mut_slice()[idx] = tc;
        h.as_mut_slice()[idx] = output.as_slice()[idx] * tc;
    }
    Ok(StepCache {
        x: x.clone(),
        h_prev: h_prev.clone(),
        c_prev: c_prev.clone(),
        input,
        output,
        forget,
        candidate,
        tanh_c,
        c,
        h,
        bn,
    })
}

/// Gradients flowing out of one step.
pub struct StepGrads {
    pub dx: Matrix,
    pub dh_prev: Matrix,
    pub dc_prev: Matrix,
}

/// Backward pass of [`lstm_step_batch`]. `dh` and `dc` are the upstream
/// gradients w.r.t. this step's outputs. Parameter gradients accumulate into
/// `grads` (and `bn_grads` when the step was batch-normalized).
pub fn lstm_step_backward(
    p: &LstmParams,
    cache: &StepCache,
    dh: &Matrix,
    dc: &Matrix,
    norm: CandidateNorm<'_>,
    grads: &mut LstmParams,
    bn_grads: Option<&mut BatchNormParams>,
) -> StepGrads {
    let rows = cache.x.rows();
    let d = p.hidden;
    let mut da: [Matrix; GATES] = std::array::from_fn(|_| Matrix::zeros(rows, d));
    let mut dc_prev = Matrix::zeros(rows, d);
    let mut dcand = Matrix::zeros(rows, d);
    for idx in 0..rows * d {
        let o = cache.output.as_slice()[idx];
        let i = cache.input.as_slice()[idx];
        let f = cache.forget.as_slice()[idx];
        let tc = cache.tanh_c.as_slice()[idx];
        let cand = cache.candidate.as_slice()[idx];
        let dh_v = dh.as_slice()[idx];
        let dct = dc.as_slice()[idx] + dh_v * o * (1.0 - tc * tc);
        da[OUTPUT_GATE].as_mut_slice()[idx] = dh_v * tc * o * (1.0 - o);
        da[INPUT_GATE].as_mut_slice()[idx] = dct * cand * i * (1.0 - i);
        da[FORGET_GATE].as_mut_slice()[idx] = dct * cache.c_prev.as_slice()[idx] * f * (1.0 - f);
        dcand.as_mut_slice()[idx] = dct * i * (1.0 - cand * cand);
        dc_prev.as_mut_slice()[idx] = dct * f;
    }
    da[CANDIDATE] = match (norm, &cache.bn, bn_grads) {
        (CandidateNorm::Train(bn, weights), Some(bn_cache), Some(bn_grads)) => {
            bn.backward(bn_cache, &dcand, weights, bn_grads)
        }
        (CandidateNorm::None, _, _) => dcand,
        _ => panic!("lstm backward needs the training-mode batch norm cache and gradient buffers"),
    };

    let mut dx = Matrix::zeros(rows, p.input);
    let mut dh_prev = Matrix::zeros(rows, d);
    for g in 0..GATES {
        for r in 0..rows {
            let dag = da[g].row(r);
            grads.w[g].add_outer(dag, cache.h_prev.row(r));
            grads.v[g].add_outer(dag, cache.x.row(r));
            for (gb, v) in grads.b[g].iter_mut().zip(dag) {
                *gb += v;
            }
            p.w[g].matvec_t_acc(dag, dh_prev.row_mut(r));
            p.v[g].matvec_t_acc(dag, dx.row_mut(r));
        }
    }
    StepGrads {
        dx,
        dh_prev,
        dc_prev,
    }
}

/// Single-sequence step. With `bn` the candidate pre-activation is normalized
/// according to the batch norm's mode (a one-row training batch normalizes to beta).
pub fn lstm_step(
    p: &LstmParams,
    x: &[f64],
    prev: &LstmState,
    bn: Option<&BatchNormParams>,
) -> Result<LstmState> {
    if prev.c.len() != p.hidden || prev.h.len() != p.hidden {
        return Err(NtfError::shape(
            format!("state of width {}", p.hidden),
            prev.h.len(),
        ));
    }
    let row = |v: &[f64]| Matrix::from_vec(1, v.len(), v.to_vec());
    let norm = match bn {
        None => CandidateNorm::None,
        Some(bn) if bn.mode == super::BnMode::Training => CandidateNorm::Train(bn, None),
        Some(bn) => CandidateNorm::Inference(bn),
    };
    let step = lstm_step_batch(p, &row(x)?, &row(&prev.h)?, &row(&prev.c)?, norm)?;
    Ok(LstmState {
        c: step.c.row(0).to_vec(),
        h: step.h.row(0).to_vec(),
        gates: Some(GateTrace {
            input: step.input.row(0).to_vec(),
            output: step.output.row(0).to_vec(),
            forget: step.forget.row(0).to_vec(),
            candidate: step.candidate.row(0).to_vec(),
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::BnMode;
    use proptest::prelude::*;
    use rand::Rng;

    fn scalar_params(vals: [f64; 12]) -> LstmParams {
        let mut p = LstmParams::zeros(1, 1);
        for g in 0..GATES {
            p.w[g][(0, 0)] = vals[g];
            p.v[g][(0, 0)] = vals[4 + g];
            p.b[g][0] = vals[8 + g];
        }
        p
    }

    /// The cell equations written out literally for scalars.
    fn scalar_oracle(vals: [f64; 12], x: f64, h: f64, c: f64) -> (f64, f64) {
        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        let i = s(vals[0] * h + vals[4] * x + vals[8]);
        let o = s(vals[1] * h + vals[5] * x + vals[9]);
        let f = s(vals[2] * h + vals[6] * x + vals[10]);
        let cand = (vals[3] * h + vals[7] * x + vals[11]).tanh();
        let c_new = f * c + i * cand;
        (c_new, o * c_new.tanh())
    }

    #[test]
    fn zero_parameters() {
        let p = LstmParams::zeros(3, 2);
        let s = lstm_step(&p, &[0.4, -1.0, 2.0], &LstmState::zeros(2), None).unwrap();
        assert_eq!(s.c, vec![0.0, 0.0]);
        assert_eq!(s.h, vec![0.0, 0.0]);
        let g = s.gates.unwrap();
        assert_eq!(g.input, vec![0.5, 0.5]);
        assert_eq!(g.output, vec![0.5, 0.5]);
        assert_eq!(g.forget, vec![0.5, 0.5]);
    }

    #[test]
    fn zero_weights_carry_half_the_cell() {
        let p = LstmParams::zeros(1, 1);
        let prev = LstmState {
            c: vec![1.0],
            h: vec![0.0],
            gates: None,
        };
        let s = lstm_step(&p, &[0.7], &prev, None).unwrap();
        assert_eq!(s.c, vec![0.5]);
        assert!((s.h[0] - 0.5 * 0.5f64.tanh()).abs() < 1e-15);
        assert!((s.h[0] - 0.231).abs() < 1e-3);
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut rng = crate::rng::stream(5, "lstm-oracle");
        for _ in 0..200 {
            let vals: [f64; 12] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
            let (x, h, c) = (
                rng.random_range(-2.0..2.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-3.0..3.0),
            );
            let prev = LstmState {
                c: vec![c],
                h: vec![h],
                gates: None,
            };
            let s = lstm_step(&scalar_params(vals), &[x], &prev, None).unwrap();
            let (c_ref, h_ref) = scalar_oracle(vals, x, h, c);
            assert!((s.c[0] - c_ref).abs() < 1e-12);
            assert!((s.h[0] - h_ref).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut p = LstmParams::zeros(2, 3);
        p.b[FORGET_GATE] = vec![50.0; 3];
        p.b[INPUT_GATE] = vec![-50.0; 3];
        let prev = LstmState {
            c: vec![0.3, -2.0, 1.5],
            h: vec![0.0; 3],
            gates: None,
        };
        let s = lstm_step(&p, &[1.0, -1.0], &prev, None).unwrap();
        for (a, b) in s.c.iter().zip(&prev.c) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_row_training_bn_yields_beta_candidate() {
        let mut p = LstmParams::zeros(1, 2);
        p.v[CANDIDATE][(0, 0)] = 3.0;
        let mut bn = BatchNormParams::new(2, 1e-3, 0.99);
        bn.beta = vec![0.25, -0.5];
        let s = lstm_step(&p, &[1.0], &LstmState::zeros(2), Some(&bn)).unwrap();
        let cand = s.gates.unwrap().candidate;
        assert!((cand[0] - 0.25f64.tanh()).abs() < 1e-15);
        assert!((cand[1] + 0.5f64.tanh()).abs() < 1e-15);

        bn.mode = BnMode::Inference;
        let s = lstm_step(&p, &[1.0], &LstmState::zeros(2), Some(&bn)).unwrap();
        let expected = (3.0 / (1.0 + 1e-3f64).sqrt() + 0.25).tanh();
        assert!((s.gates.unwrap().candidate[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let p = LstmParams::zeros(2, 3);
        assert!(lstm_step(&p, &[1.0], &LstmState::zeros(3), None).is_err());
        assert!(lstm_step(&p, &[1.0, 2.0], &LstmState::zeros(2), None).is_err());
    }

    proptest! {
        #[test]
        fn hidden_state_is_bounded(seed in 0u64..500, scale in 0.1f64..20.0) {
            let mut rng = crate::rng::stream(seed, "lstm-bound");
            let mut p = LstmParams::init(3, 4, 1.0, &mut rng);
            for g in 0..GATES {
                p.w[g].as_mut_slice().iter_mut().for_each(|v| *v *= scale);
            }
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let prev = LstmState { c: (0..4).map(|_| rng.random_range(-10.0..10.0)).collect(), h: vec![0.9; 4], gates: None };
            let s = lstm_step(&p, &x, &prev, None).unwrap();
            prop_assert!(s.h.iter().all(|h| h.abs() < 1.0));
            prop_assert!(s.c.iter().all(|c| c.is_finite()));
        }
    }
}
