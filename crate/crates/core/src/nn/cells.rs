//! GRU and LSTM layers unrolled over a whole sequence, with BPTT.
//!
//! GRU:
//!   r = σ(W_ir x + b_ir + W_hr h + b_hr)
//!   z = σ(W_iz x + b_iz + W_hz h + b_hz)
//!   n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
//!   h' = (1 - z) ⊙ n + z ⊙ h
//!
//! LSTM:
//!   [i, f, g, o] = [σ, σ, tanh, σ](W_ih x + b_ih + W_hh h + b_hh)
//!   c' = f ⊙ c + i ⊙ g
//!   h' = o ⊙ tanh(c')

use super::kernels::{add_assign, affine_rows, affine_rows_backward, matvec_acc, matvec_t_acc, outer_acc, sigmoid};
use super::{CellKind, Scalar};

pub struct RecurrentParams<'a, T> {
    pub kind: CellKind,
    pub w_ih: &'a [T],
    pub w_hh: &'a [T],
    pub b_ih: &'a [T],
    pub b_hh: &'a [T],
    pub in_dim: usize,
    pub hidden: usize,
}

pub struct RecurrentGrads<'a, T> {
    pub w_ih: &'a mut [T],
    pub w_hh: &'a mut [T],
    pub b_ih: &'a mut [T],
    pub b_hh: &'a mut [T],
}

impl<'a, T: Scalar> RecurrentParams<'a, T> {
    /// Splits a contiguous `[w_ih | w_hh | b_ih | b_hh]` region.
    pub fn split(kind: CellKind, region: &'a [T], in_dim: usize, hidden: usize) -> Self {
        let gh = kind.gates() * hidden;
        let (w_ih, rest) = region.split_at(gh * in_dim);
        let (w_hh, rest) = rest.split_at(gh * hidden);
        let (b_ih, b_hh) = rest.split_at(gh);
        RecurrentParams {
            kind,
            w_ih,
            w_hh,
            b_ih,
            b_hh,
            in_dim,
            hidden,
        }
    }
}

impl<'a, T: Scalar> RecurrentGrads<'a, T> {
    pub fn split(kind: CellKind, region: &'a mut [T], in_dim: usize, hidden: usize) -> Self {
        let gh = kind.gates() * hidden;
        let (w_ih, rest) = region.split_at_mut(gh * in_dim);
        let (w_hh, rest) = rest.split_at_mut(gh * hidden);
        let (b_ih, b_hh) = rest.split_at_mut(gh);
        RecurrentGrads {
            w_ih,
            w_hh,
            b_ih,
            b_hh,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RecurrentCache<T> {
    /// Post-activation gates, `steps x (G*h)`.
    gates: Vec<T>,
    /// GRU: `W_hn h + b_hn` per step. LSTM: `tanh(c)` per step. `steps x h`.
    aux: Vec<T>,
    /// LSTM cell states, `(steps + 1) x h`, row 0 is the zero state. Empty for GRU.
    cell: Vec<T>,
    /// Hidden states, `(steps + 1) x h`, row 0 is the zero state.
    hidden: Vec<T>,
}

impl<T: Scalar> RecurrentCache<T> {
    /// Hidden outputs for steps `1..=steps`, row-major.
    pub fn outputs(&self, hidden: usize) -> &[T] {
        &self.hidden[hidden..]
    }
}

pub fn recurrent_forward<T: Scalar>(p: &RecurrentParams<'_, T>, input: &[T], steps: usize) -> RecurrentCache<T> {
    match p.kind {
        CellKind::Gru => gru_forward(p, input, steps),
        CellKind::Lstm => lstm_forward(p, input, steps),
    }
}

/// Returns the gradient with respect to the layer input when `want_input_grad`.
pub fn recurrent_backward<T: Scalar>(
    p: &RecurrentParams<'_, T>,
    cache: &RecurrentCache<T>,
    input: &[T],
    d_out: &[T],
    g: RecurrentGrads<'_, T>,
    want_input_grad: bool,
) -> Vec<T> {
    let steps = d_out.len() / p.hidden;
    let d_pre_input = match p.kind {
        CellKind::Gru => gru_backward(p, cache, d_out, steps, g.w_hh, g.b_hh),
        CellKind::Lstm => lstm_backward(p, cache, d_out, steps, g.w_hh, g.b_hh),
    };
    affine_rows_backward(p.w_ih, p.in_dim, input, &d_pre_input, g.w_ih, g.b_ih, want_input_grad)
}

fn gru_forward<T: Scalar>(p: &RecurrentParams<'_, T>, input: &[T], steps: usize) -> RecurrentCache<T> {
    let h = p.hidden;
    let gi = affine_rows(p.w_ih, p.b_ih, p.in_dim, input, steps);
    let mut gates = vec![T::zero(); steps * 3 * h];
    let mut aux = vec![T::zero(); steps * h];
    let mut hidden = vec![T::zero(); (steps + 1) * h];
    let mut gh = vec![T::zero(); 3 * h];

    for t in 0..steps {
        let (prev_rows, next_rows) = hidden.split_at_mut((t + 1) * h);
        let h_prev = &prev_rows[t * h..];
        let h_next = &mut next_rows[..h];
        gh.copy_from_slice(p.b_hh);
        matvec_acc(p.w_hh, h, h_prev, &mut gh);

        let gi_t = &gi[t * 3 * h..(t + 1) * 3 * h];
        let gates_t = &mut gates[t * 3 * h..(t + 1) * 3 * h];
        for j in 0..h {
            let r = sigmoid(gi_t[j] + gh[j]);
            let z = sigmoid(gi_t[h + j] + gh[h + j]);
            let hn = gh[2 * h + j];
            let n = (gi_t[2 * h + j] + r * hn).tanh();
            gates_t[j] = r;
            gates_t[h + j] = z;
            gates_t[2 * h + j] = n;
            aux[t * h + j] = hn;
            h_next[j] = (T::one() - z) * n + z * h_prev[j];
        }
    }
    RecurrentCache {
        gates,
        aux,
        cell: Vec::new(),
        hidden,
    }
}

/// Returns the gradient with respect to the input-side pre-activations.
fn gru_backward<T: Scalar>(
    p: &RecurrentParams<'_, T>,
    c: &RecurrentCache<T>,
    d_out: &[T],
    steps: usize,
    dw_hh: &mut [T],
    db_hh: &mut [T],
) -> Vec<T> {
    let h = p.hidden;
    let one = T::one();
    let mut d_gi = vec![T::zero(); steps * 3 * h];
    let mut d_gh = vec![T::zero(); 3 * h];
    let mut dh_next = vec![T::zero(); h];
    let mut dh_prev = vec![T::zero(); h];

    for t in (0..steps).rev() {
        let h_prev = &c.hidden[t * h..(t + 1) * h];
        let gates_t = &c.gates[t * 3 * h..(t + 1) * 3 * h];
        let d_gi_t = &mut d_gi[t * 3 * h..(t + 1) * 3 * h];
        for j in 0..h {
            let (r, z, n) = (gates_t[j], gates_t[h + j], gates_t[2 * h + j]);
            let hn = c.aux[t * h + j];
            let dh = d_out[t * h + j] + dh_next[j];

            let dz = dh * (h_prev[j] - n);
            let dn_pre = dh * (one - z) * (one - n * n);
            let dr_pre = dn_pre * hn * r * (one - r);
            let dz_pre = dz * z * (one - z);

            d_gi_t[j] = dr_pre;
            d_gi_t[h + j] = dz_pre;
            d_gi_t[2 * h + j] = dn_pre;
            d_gh[j] = dr_pre;
            d_gh[h + j] = dz_pre;
            d_gh[2 * h + j] = dn_pre * r;
            dh_prev[j] = dh * z;
        }
        add_assign(db_hh, &d_gh);
        outer_acc(dw_hh, h, &d_gh, h_prev);
        matvec_t_acc(p.w_hh, h, &d_gh, &mut dh_prev);
        std::mem::swap(&mut dh_next, &mut dh_prev);
    }
    d_gi
}

fn lstm_forward<T: Scalar>(p: &RecurrentParams<'_, T>, input: &[T], steps: usize) -> RecurrentCache<T> {
    let h = p.hidden;
    let gi = affine_rows(p.w_ih, p.b_ih, p.in_dim, input, steps);
    let mut gates = vec![T::zero(); steps * 4 * h];
    let mut aux = vec![T::zero(); steps * h];
    let mut cell = vec![T::zero(); (steps + 1) * h];
    let mut hidden = vec![T::zero(); (steps + 1) * h];
    let mut pre = vec![T::zero(); 4 * h];

    for t in 0..steps {
        pre.copy_from_slice(&gi[t * 4 * h..(t + 1) * 4 * h]);
        add_assign(&mut pre, p.b_hh);
        matvec_acc(p.w_hh, h, &hidden[t * h..(t + 1) * h], &mut pre);

        let gates_t = &mut gates[t * 4 * h..(t + 1) * 4 * h];
        for j in 0..h {
            let i = sigmoid(pre[j]);
            let f = sigmoid(pre[h + j]);
            let g = pre[2 * h + j].tanh();
            let o = sigmoid(pre[3 * h + j]);
            gates_t[j] = i;
            gates_t[h + j] = f;
            gates_t[2 * h + j] = g;
            gates_t[3 * h + j] = o;
            let c_new = f * cell[t * h + j] + i * g;
            let tc = c_new.tanh();
            cell[(t + 1) * h + j] = c_new;
            aux[t * h + j] = tc;
            hidden[(t + 1) * h + j] = o * tc;
        }
    }
    RecurrentCache {
        gates,
        aux,
        cell,
        hidden,
    }
}

fn lstm_backward<T: Scalar>(
    p: &RecurrentParams<'_, T>,
    c: &RecurrentCache<T>,
    d_out: &[T],
    steps: usize,
    dw_hh: &mut [T],
    db_hh: &mut [T],
) -> Vec<T> {
    let h = p.hidden;
    let one = T::one();
    let mut d_pre = vec![T::zero(); steps * 4 * h];
    let mut dh_next = vec![T::zero(); h];
    let mut dc_next = vec![T::zero(); h];

    for t in (0..steps).rev() {
        let gates_t = &c.gates[t * 4 * h..(t + 1) * 4 * h];
        let d_pre_t = &mut d_pre[t * 4 * h..(t + 1) * 4 * h];
        for j in 0..h {
            let (i, f, g, o) = (gates_t[j], gates_t[h + j], gates_t[2 * h + j], gates_t[3 * h + j]);
            let tc = c.aux[t * h + j];
            let c_prev = c.cell[t * h + j];
            let dh = d_out[t * h + j] + dh_next[j];
            let dc = dc_next[j] + dh * o * (one - tc * tc);

            d_pre_t[j] = dc * g * i * (one - i);
            d_pre_t[h + j] = dc * c_prev * f * (one - f);
            d_pre_t[2 * h + j] = dc * i * (one - g * g);
            d_pre_t[3 * h + j] = dh * tc * o * (one - o);
            dc_next[j] = dc * f;
        }
        let h_prev = &c.hidden[t * h..(t + 1) * h];
        add_assign(db_hh, d_pre_t);
        outer_acc(dw_hh, h, d_pre_t, h_prev);
        dh_next.iter_mut().for_each(|v| *v = T::zero());
        matvec_t_acc(p.w_hh, h, d_pre_t, &mut dh_next);
    }
    d_pre
}
