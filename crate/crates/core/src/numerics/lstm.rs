//! Single-layer LSTM with exact backpropagation through time.
//!
//! Gate layout: the stacked weight matrices hold the input, forget, cell
//! and output gates in that row order, each block `hidden` rows tall.
//! The forward pass records everything the backward pass needs, and the
//! backward pass propagates a gradient supplied at the final hidden state
//! only (the model reads a single sequence summary vector).

use super::{dot, matvec_transposed_acc, outer_acc, Mat2, Vec1};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub input: usize,
    pub hidden: usize,
    /// 4H x input
    pub w_x: Mat2,
    /// 4H x H
    pub w_h: Mat2,
    /// 4H
    pub b: Vec1,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            input,
            hidden,
            w_x: Mat2::zeros(4 * hidden, input),
            w_h: Mat2::zeros(4 * hidden, hidden),
            b: Vec1::zeros(4 * hidden),
        }
    }

    /// Row range of the forget-gate block inside the stacked arrays.
    pub fn forget_gate_rows(&self) -> std::ops::Range<usize> {
        self.hidden..2 * self.hidden
    }

    fn check_seq(&self, seq: &Mat2) -> Result<()> {
        if seq.cols() != self.input {
            return Err(Error::NumericsError(format!(
                "sequence has {} channels, LSTM expects {}",
                seq.cols(),
                self.input
            )));
        }
        if seq.rows() == 0 {
            return Err(Error::NumericsError("empty sequence".into()));
        }
        Ok(())
    }
}

/// Gradients for [`LstmParams`], shape-matched.
#[derive(Clone, Debug)]
pub struct LstmGrads {
    pub w_x: Mat2,
    pub w_h: Mat2,
    pub b: Vec1,
}

impl LstmGrads {
    pub fn zeros(params: &LstmParams) -> Self {
        Self {
            w_x: Mat2::zeros(4 * params.hidden, params.input),
            w_h: Mat2::zeros(4 * params.hidden, params.hidden),
            b: Vec1::zeros(4 * params.hidden),
        }
    }
}

/// Full forward trace: inputs, post-activation gates, cell states and
/// hidden states for every timestep.
#[derive(Clone, Debug)]
pub struct LstmTrace {
    hidden_size: usize,
    inputs: Mat2,
    /// L x 4H, activated gates [i | f | g | o] per step.
    gates: Mat2,
    /// L x H
    cell: Mat2,
    /// L x H, tanh(cell)
    cell_tanh: Mat2,
    /// L x H
    hidden: Mat2,
}

impl LstmTrace {
    pub fn hidden_states(&self) -> &Mat2 {
        &self.hidden
    }

    pub fn last_hidden(&self) -> Vec1 {
        Vec1::from_raw(self.hidden.row(self.hidden.rows() - 1).to_vec())
    }

    pub fn steps(&self) -> usize {
        self.hidden.rows()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Runs the LSTM over `seq` (L x input) starting from h = c = 0.
pub fn lstm_forward(params: &LstmParams, seq: &Mat2) -> Result<LstmTrace> {
    params.check_seq(seq)?;
    let h = params.hidden;
    let steps = seq.rows();

    let mut gates = Mat2::zeros(steps, 4 * h);
    let mut cell = Mat2::zeros(steps, h);
    let mut cell_tanh = Mat2::zeros(steps, h);
    let mut hidden = Mat2::zeros(steps, h);

    let mut pre = vec![0.0; 4 * h];
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];

    for t in 0..steps {
        let x_t = seq.row(t);
        // pre = W_x.x_t + W_h.h_prev + b
        for (r, p) in pre.iter_mut().enumerate() {
            *p = dot(params.w_x.row(r), x_t) + dot(params.w_h.row(r), &h_prev) + params.b[r];
        }
        let g_row = gates.row_mut(t);
        for j in 0..h {
            g_row[j] = sigmoid(pre[j]); // input gate
            g_row[h + j] = sigmoid(pre[h + j]); // forget gate
            g_row[2 * h + j] = pre[2 * h + j].tanh(); // cell candidate
            g_row[3 * h + j] = sigmoid(pre[3 * h + j]); // output gate
        }
        for j in 0..h {
            let c = g_row[h + j] * c_prev[j] + g_row[j] * g_row[2 * h + j];
            if !c.is_finite() {
                return Err(Error::NumericsError(format!(
                    "non-finite cell state at step {t}"
                )));
            }
            let tc = c.tanh();
            let hj = g_row[3 * h + j] * tc;
            *cell.at_mut(t, j) = c;
            *cell_tanh.at_mut(t, j) = tc;
            *hidden.at_mut(t, j) = hj;
            c_prev[j] = c;
            h_prev[j] = hj;
        }
    }

    Ok(LstmTrace {
        hidden_size: h,
        inputs: seq.clone(),
        gates,
        cell,
        cell_tanh,
        hidden,
    })
}

/// Backpropagation through time from a gradient at the final hidden state.
/// Returns parameter gradients and the gradient w.r.t. the input sequence.
pub fn lstm_backward(
    params: &LstmParams,
    trace: &LstmTrace,
    grad_last_hidden: &Vec1,
) -> Result<(LstmGrads, Mat2)> {
    let mut grads = LstmGrads::zeros(params);
    let mut grad_input = Mat2::zeros(trace.inputs.rows(), trace.inputs.cols());
    lstm_backward_acc(params, trace, grad_last_hidden, &mut grads, Some(&mut grad_input))?;
    Ok((grads, grad_input))
}

/// Accumulating variant used by batch training: adds into `grads` (and
/// `grad_input` when wanted) instead of allocating fresh buffers.
pub(crate) fn lstm_backward_acc(
    params: &LstmParams,
    trace: &LstmTrace,
    grad_last_hidden: &Vec1,
    grads: &mut LstmGrads,
    mut grad_input: Option<&mut Mat2>,
) -> Result<()> {
    let h = params.hidden;
    if trace.hidden_size != h || trace.inputs.cols() != params.input {
        return Err(Error::NumericsError(
            "trace does not match LSTM parameter shapes".into(),
        ));
    }
    if grad_last_hidden.len() != h {
        return Err(Error::NumericsError(format!(
            "upstream gradient length {} does not match hidden size {}",
            grad_last_hidden.len(),
            h
        )));
    }

    let steps = trace.steps();
    let mut dh: Vec<f64> = grad_last_hidden.to_vec();
    let mut dc = vec![0.0; h];
    let mut da = vec![0.0; 4 * h];

    for t in (0..steps).rev() {
        let gate = trace.gates.row(t);
        let tc = trace.cell_tanh.row(t);
        for j in 0..h {
            let i_g = gate[j];
            let f_g = gate[h + j];
            let g_g = gate[2 * h + j];
            let o_g = gate[3 * h + j];
            let c_prev = if t == 0 { 0.0 } else { trace.cell.at(t - 1, j) };

            let d_out = dh[j] * tc[j];
            let d_cell = dc[j] + dh[j] * o_g * (1.0 - tc[j] * tc[j]);

            da[j] = d_cell * g_g * i_g * (1.0 - i_g);
            da[h + j] = d_cell * c_prev * f_g * (1.0 - f_g);
            da[2 * h + j] = d_cell * i_g * (1.0 - g_g * g_g);
            da[3 * h + j] = d_out * o_g * (1.0 - o_g);

            dc[j] = d_cell * f_g;
        }

        let x_t = trace.inputs.row(t);
        outer_acc(&mut grads.w_x, &da, x_t);
        if t > 0 {
            outer_acc(&mut grads.w_h, &da, trace.hidden.row(t - 1));
        }
        for (b, &d) in grads.b.iter_mut().zip(&da) {
            *b += d;
        }
        if let Some(gi) = grad_input.as_deref_mut() {
            matvec_transposed_acc(&params.w_x, &da, gi.row_mut(t));
        }

        dh.iter_mut().for_each(|v| *v = 0.0);
        matvec_transposed_acc(&params.w_h, &da, &mut dh);
    }

    Ok(())
}
