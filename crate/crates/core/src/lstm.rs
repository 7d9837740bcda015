//! LSTM cell with an exact analytic backward pass.
//!
//! Gate pre-activations are stacked in blocks of `hidden_dim` rows in the
//! order input, forget, cell candidate, output:
//!
//! ```text
//! a = W_x x + W_h h_prev + b
//! i = σ(a_i), f = σ(a_f), g = tanh(a_g), o = σ(a_o)
//! c = f ⊙ c_prev + i ⊙ g
//! h = o ⊙ tanh(c)
//! ```

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::special::sigmoid;

pub const FORGET_BIAS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `4H × I`
    pub w_input: Matrix,
    /// `4H × H`
    pub w_recurrent: Matrix,
    /// `4H`
    pub bias: Vec<f64>,
}

impl LstmLayerParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            w_input: Matrix::zeros(4 * hidden_dim, input_dim),
            w_recurrent: Matrix::zeros(4 * hidden_dim, hidden_dim),
            bias: vec![0.0; 4 * hidden_dim],
        }
    }

    /// Uniform `±1/√fan_in` weights, zero biases, forget-gate bias 1.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let bound_x = 1.0 / (input_dim.max(1) as f64).sqrt();
        let bound_h = 1.0 / (hidden_dim.max(1) as f64).sqrt();
        let w_input = Matrix::uniform(4 * hidden_dim, input_dim, bound_x, rng);
        let w_recurrent = Matrix::uniform(4 * hidden_dim, hidden_dim, bound_h, rng);
        let mut bias = vec![0.0; 4 * hidden_dim];
        bias[hidden_dim..2 * hidden_dim].fill(FORGET_BIAS);
        Self {
            input_dim,
            hidden_dim,
            w_input,
            w_recurrent,
            bias,
        }
    }

    pub fn num_params(&self) -> usize {
        self.w_input.as_slice().len() + self.w_recurrent.as_slice().len() + self.bias.len()
    }
}

/// Hidden and cell vectors of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl CellState {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            h: vec![0.0; hidden_dim],
            c: vec![0.0; hidden_dim],
        }
    }
}

/// Per-layer states of a stacked LSTM.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub layers: Vec<CellState>,
}

impl LstmState {
    pub fn zeros(layers: &[LstmLayerParams]) -> Self {
        Self {
            layers: layers.iter().map(|l| CellState::zeros(l.hidden_dim)).collect(),
        }
    }

    /// Output of the top layer.
    pub fn top(&self) -> &[f64] {
        self.layers.last().map(|s| s.h.as_slice()).unwrap_or(&[])
    }
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct LstmCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Post-activation gates `[i, f, g, o]`.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

/// Gate activations into `gates`, new cell into `c`, new hidden into `h`.
fn forward_into(
    params: &LstmLayerParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    gates: &mut [f64],
    c: &mut [f64],
    tanh_c: &mut [f64],
    h: &mut [f64],
) {
    let hd = params.hidden_dim;
    gates.copy_from_slice(&params.bias);
    params.w_input.matvec_acc(x, gates);
    params.w_recurrent.matvec_acc(h_prev, gates);
    for k in 0..hd {
        let i = sigmoid(gates[k]);
        let f = sigmoid(gates[hd + k]);
        let g = gates[2 * hd + k].tanh();
        let o = sigmoid(gates[3 * hd + k]);
        gates[k] = i;
        gates[hd + k] = f;
        gates[2 * hd + k] = g;
        gates[3 * hd + k] = o;
        c[k] = f * c_prev[k] + i * g;
        tanh_c[k] = c[k].tanh();
        h[k] = o * tanh_c[k];
    }
}

/// One cell step, recording a cache for [`lstm_backward`].
pub fn lstm_forward(
    x: &[f64],
    state: &CellState,
    params: &LstmLayerParams,
) -> Result<(CellState, LstmCache)> {
    check_len("lstm input", params.input_dim, x.len())?;
    check_len("lstm hidden state", params.hidden_dim, state.h.len())?;
    check_len("lstm cell state", params.hidden_dim, state.c.len())?;
    let hd = params.hidden_dim;
    let mut gates = vec![0.0; 4 * hd];
    let mut next = CellState::zeros(hd);
    let mut tanh_c = vec![0.0; hd];
    forward_into(
        params,
        x,
        &state.h,
        &state.c,
        &mut gates,
        &mut next.c,
        &mut tanh_c,
        &mut next.h,
    );
    let cache = LstmCache {
        x: x.to_vec(),
        h_prev: state.h.clone(),
        c_prev: state.c.clone(),
        gates,
        c: next.c.clone(),
        tanh_c,
    };
    Ok((next, cache))
}

/// Cache-free step used on the sampling path; same arithmetic as
/// [`lstm_forward`].
pub fn lstm_step(x: &[f64], state: &mut CellState, params: &LstmLayerParams, gates: &mut Vec<f64>) {
    let hd = params.hidden_dim;
    gates.resize(4 * hd, 0.0);
    let mut c = vec![0.0; hd];
    let mut tanh_c = vec![0.0; hd];
    let mut h = vec![0.0; hd];
    forward_into(params, x, &state.h, &state.c, gates, &mut c, &mut tanh_c, &mut h);
    state.h = h;
    state.c = c;
}

/// Gradients flowing out of one backward cell step.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrads {
    pub d_input: Vec<f64>,
    pub d_h_prev: Vec<f64>,
    pub d_c_prev: Vec<f64>,
}

/// Backward through one cell step. Parameter gradients are accumulated
/// into `d_params`.
pub fn lstm_backward(
    cache: &LstmCache,
    params: &LstmLayerParams,
    d_h: &[f64],
    d_c: &[f64],
    d_params: &mut LstmLayerParams,
) -> Result<CellGrads> {
    let hd = params.hidden_dim;
    check_len("upstream d_h", hd, d_h.len())?;
    check_len("upstream d_c", hd, d_c.len())?;
    check_len("cache gates", 4 * hd, cache.gates.len())?;
    check_len("cache input", params.input_dim, cache.x.len())?;
    check_len("gradient block", params.num_params(), d_params.num_params())?;

    let mut d_pre = vec![0.0; 4 * hd];
    let mut d_c_prev = vec![0.0; hd];
    for k in 0..hd {
        let i = cache.gates[k];
        let f = cache.gates[hd + k];
        let g = cache.gates[2 * hd + k];
        let o = cache.gates[3 * hd + k];
        let tc = cache.tanh_c[k];
        let d_o = d_h[k] * tc;
        let dc = d_c[k] + d_h[k] * o * (1.0 - tc * tc);
        let d_i = dc * g;
        let d_g = dc * i;
        let d_f = dc * cache.c_prev[k];
        d_c_prev[k] = dc * f;
        d_pre[k] = d_i * i * (1.0 - i);
        d_pre[hd + k] = d_f * f * (1.0 - f);
        d_pre[2 * hd + k] = d_g * (1.0 - g * g);
        d_pre[3 * hd + k] = d_o * o * (1.0 - o);
    }

    d_params.w_input.add_outer(&d_pre, &cache.x);
    d_params.w_recurrent.add_outer(&d_pre, &cache.h_prev);
    for (b, d) in d_params.bias.iter_mut().zip(&d_pre) {
        *b += d;
    }

    let mut d_input = vec![0.0; params.input_dim];
    params.w_input.matvec_t_acc(&d_pre, &mut d_input);
    let mut d_h_prev = vec![0.0; hd];
    params.w_recurrent.matvec_t_acc(&d_pre, &mut d_h_prev);
    Ok(CellGrads {
        d_input,
        d_h_prev,
        d_c_prev,
    })
}
