use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::scalar::Scalar;
use crate::numerics::tensor::Tensor;

/// LSTM weights. Gate blocks are stacked in the order
/// (input, forget, cell candidate, output), each `k` rows tall.
#[derive(Debug, Clone)]
pub struct LstmParams<T> {
    /// 4k × w
    pub w_input: Tensor<T>,
    /// 4k × k
    pub w_hidden: Tensor<T>,
    /// 4k
    pub bias: Tensor<T>,
}

impl<T: Scalar> LstmParams<T> {
    /// Uniform(−0.1, 0.1) weights, forget-gate bias 1, other biases uniform.
    pub fn init(input_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        let w_input = Tensor::init_uniform_stream(&[4 * hidden, input_dim], -0.1, 0.1, seed, 0)?;
        let w_hidden = Tensor::init_uniform_stream(&[4 * hidden, hidden], -0.1, 0.1, seed, 1)?;
        let mut bias = Tensor::init_uniform_stream(&[4 * hidden], -0.1, 0.1, seed, 2)?;
        set_forget_bias(&mut bias, hidden);
        Ok(LstmParams {
            w_input,
            w_hidden,
            bias,
        })
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.cols()
    }
}

pub(crate) fn set_forget_bias<T: Scalar>(bias: &mut Tensor<T>, hidden: usize) {
    bias.values_mut()[hidden..2 * hidden]
        .iter_mut()
        .for_each(|b| *b = T::one());
}

/// Graph handles for an LSTM's three parameter tensors.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_input: Var,
    pub w_hidden: Var,
    pub bias: Var,
}

/// One LSTM step over a batch of rows:
///
/// ```text
/// [i f g o] = x·W_inᵀ + h_prev·W_hidᵀ + b
/// c = σ(f)⊙c_prev + σ(i)⊙tanh(g)
/// h = σ(o)⊙tanh(c)
/// ```
pub fn lstm_cell<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    p: &LstmVars,
) -> Result<(Var, Var)> {
    let (four_k, w) = g.shape(p.w_input);
    let k = four_k / 4;
    let (b, xw) = g.shape(x);
    if xw != w || g.shape(h_prev) != (b, k) || g.shape(c_prev) != (b, k) || four_k != 4 * k {
        return Err(Error::shape(
            "lstm_cell",
            format!(
                "x {:?}, h {:?}, c {:?} for an LSTM with input {w} and hidden {k}",
                g.shape(x),
                g.shape(h_prev),
                g.shape(c_prev)
            ),
        ));
    }
    let from_x = g.matmul_bt(x, p.w_input)?;
    let from_h = g.matmul_bt(h_prev, p.w_hidden)?;
    let pre = g.add(from_x, from_h)?;
    let gates = g.add_row(pre, p.bias)?;

    let i_pre = g.slice_cols(gates, 0, k)?;
    let f_pre = g.slice_cols(gates, k, k)?;
    let g_pre = g.slice_cols(gates, 2 * k, k)?;
    let o_pre = g.slice_cols(gates, 3 * k, k)?;
    let i = g.sigmoid(i_pre);
    let f = g.sigmoid(f_pre);
    let cand = g.tanh(g_pre);
    let o = g.sigmoid(o_pre);

    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let c_act = g.tanh(c);
    let h = g.mul(o, c_act)?;
    Ok((h, c))
}
