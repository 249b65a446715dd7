//! Layer forward passes and their reverse-mode gradients.
//!
//! Shapes follow the convention `[batch, time, features]`, stored
//! row-major. LSTM gate order is i, f, g, o stacked along the first axis
//! of the weight matrices:
//!
//! ```text
//! gates = W_ih x_t + W_hh h_prev + bias          (4H)
//! i, f  = sigmoid(...)   g = tanh(...)   o = sigmoid(...)
//! c_t   = f * c_prev + i * g
//! h_t   = o * tanh(c_t)
//! ```

use rayon::prelude::*;

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Clamp bound for probabilities inside the BCE log terms.
pub const BCE_EPS: f64 = 1e-12;

/// An input position: `Some((action, delta))` or the pre-padding sentinel.
pub type Token = Option<(u32, u32)>;

/// A rectangular batch of token rows, all of length `t_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    pub t_max: usize,
    pub rows: Vec<Vec<Token>>,
}

impl TokenBatch {
    pub fn new(rows: Vec<Vec<Token>>) -> Result<TokenBatch> {
        let t_max = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != t_max) {
            return Err(Error::Shape("token rows have unequal lengths".into()));
        }
        Ok(TokenBatch { t_max, rows })
    }

    pub fn batch_len(&self) -> usize {
        self.rows.len()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// Embedding
// ---------------------------------------------------------------------------

/// Looks up and sums the action row and the delta row (`action_vocab +
/// delta`) of the embedding table for every token; sentinels map to the
/// zero vector. Output is `[B, T, E]`.
pub fn embedding_forward(
    tokens: &TokenBatch,
    table: &Tensor,
    action_vocab: usize,
) -> Result<Tensor> {
    if table.shape().len() != 2 {
        return Err(Error::Shape(format!("embedding table must be 2-D, got {:?}", table.shape())));
    }
    let vocab = table.shape()[0];
    let e = table.shape()[1];
    if action_vocab >= vocab {
        return Err(Error::Shape(format!(
            "action vocabulary {action_vocab} does not fit embedding table with {vocab} rows"
        )));
    }
    let b = tokens.batch_len();
    let t_max = tokens.t_max;

    let mut out = Tensor::zeros(&[b, t_max, e]);
    let data = out.data_mut();
    for (bi, row) in tokens.rows.iter().enumerate() {
        for (t, token) in row.iter().enumerate() {
            if let Some((action, delta)) = token {
                let a = *action as usize;
                let d = action_vocab + *delta as usize;
                if a >= action_vocab || d >= vocab {
                    return Err(Error::Encode(format!(
                        "index pair ({action}, {delta}) outside vocabulary (L={action_vocab}, |O|={vocab})"
                    )));
                }
                let dst = &mut data[(bi * t_max + t) * e..(bi * t_max + t + 1) * e];
                for (x, (va, vd)) in dst.iter_mut().zip(table.row(a).iter().zip(table.row(d))) {
                    *x = va + vd;
                }
            }
        }
    }
    Ok(out)
}

/// Scatters `grad_out` back into the referenced table rows; sentinel
/// positions contribute nothing.
pub fn embedding_backward(
    tokens: &TokenBatch,
    grad_out: &Tensor,
    table_shape: &[usize],
    action_vocab: usize,
) -> Result<Tensor> {
    let e = table_shape[1];
    let t_max = tokens.t_max;
    let mut grad = Tensor::zeros(table_shape);
    let g = grad.data_mut();
    for (bi, row) in tokens.rows.iter().enumerate() {
        for (t, token) in row.iter().enumerate() {
            if let Some((action, delta)) = token {
                let src = &grad_out.data()[(bi * t_max + t) * e..(bi * t_max + t + 1) * e];
                let a = *action as usize * e;
                let d = (action_vocab + *delta as usize) * e;
                for (k, v) in src.iter().enumerate() {
                    g[a + k] += v;
                    g[d + k] += v;
                }
            }
        }
    }
    Ok(grad)
}

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

/// Borrowed view of one direction's parameters: `w_ih` is `[4H, E]`,
/// `w_hh` is `[4H, H]`, `bias` is `[4H]`.
#[derive(Clone, Copy)]
pub struct LstmParams<'a> {
    pub w_ih: &'a Tensor,
    pub w_hh: &'a Tensor,
    pub bias: &'a Tensor,
}

impl<'a> LstmParams<'a> {
    pub fn hidden_dim(&self) -> usize {
        self.w_hh.shape()[1]
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.shape()[1]
    }

    fn validate(&self) -> Result<()> {
        let h = self.hidden_dim();
        if self.w_ih.shape().len() != 2
            || self.w_hh.shape().len() != 2
            || self.w_ih.shape()[0] != 4 * h
            || self.w_hh.shape()[0] != 4 * h
            || self.bias.shape() != [4 * h]
        {
            return Err(Error::Shape(format!(
                "inconsistent LSTM parameter shapes: w_ih {:?}, w_hh {:?}, bias {:?}",
                self.w_ih.shape(),
                self.w_hh.shape(),
                self.bias.shape()
            )));
        }
        Ok(())
    }
}

/// Gradients for one direction's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmGrads {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
}

impl LstmGrads {
    fn zeros(params: &LstmParams) -> LstmGrads {
        LstmGrads {
            w_ih: Tensor::zeros(params.w_ih.shape()),
            w_hh: Tensor::zeros(params.w_hh.shape()),
            bias: Tensor::zeros(params.bias.shape()),
        }
    }

    fn accumulate(&mut self, other: &LstmGrads) {
        for (a, b) in self.w_ih.data_mut().iter_mut().zip(other.w_ih.data()) {
            *a += b;
        }
        for (a, b) in self.w_hh.data_mut().iter_mut().zip(other.w_hh.data()) {
            *a += b;
        }
        for (a, b) in self.bias.data_mut().iter_mut().zip(other.bias.data()) {
            *a += b;
        }
    }
}

/// One LSTM step.
pub fn lstm_cell_forward(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    params: &LstmParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    params.validate()?;
    let h = params.hidden_dim();
    if x.len() != params.input_dim() || h_prev.len() != h || c_prev.len() != h {
        return Err(Error::Shape(format!(
            "cell inputs x={} h={} c={} vs params E={} H={}",
            x.len(),
            h_prev.len(),
            c_prev.len(),
            params.input_dim(),
            h
        )));
    }
    let step = cell_step(x, h_prev, c_prev, params);
    Ok((step.h, step.c))
}

struct CellStep {
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
    c: Vec<f64>,
}

fn cell_step(x: &[f64], h_prev: &[f64], c_prev: &[f64], params: &LstmParams) -> CellStep {
    let hd = params.hidden_dim();
    let mut gates = vec![0.0; 4 * hd];
    for (gi, gate) in gates.iter_mut().enumerate() {
        *gate = params.bias.data()[gi] + dot(params.w_ih.row(gi), x) + dot(params.w_hh.row(gi), h_prev);
    }
    let mut step = CellStep {
        i: vec![0.0; hd],
        f: vec![0.0; hd],
        g: vec![0.0; hd],
        o: vec![0.0; hd],
        tanh_c: vec![0.0; hd],
        h: vec![0.0; hd],
        c: vec![0.0; hd],
    };
    for n in 0..hd {
        step.i[n] = sigmoid(gates[n]);
        step.f[n] = sigmoid(gates[hd + n]);
        step.g[n] = gates[2 * hd + n].tanh();
        step.o[n] = sigmoid(gates[3 * hd + n]);
        step.c[n] = step.f[n] * c_prev[n] + step.i[n] * step.g[n];
        step.tanh_c[n] = step.c[n].tanh();
        step.h[n] = step.o[n] * step.tanh_c[n];
    }
    step
}

/// Per-timestep activations cached for backpropagation through time.
struct SeqCache {
    steps: Vec<CellStep>,
    h_prev: Vec<Vec<f64>>,
    c_prev: Vec<Vec<f64>>,
}

/// Runs one direction over a sequence given in processing order; returns
/// hidden states per step plus the cache.
fn lstm_run_seq(xs: &[&[f64]], params: &LstmParams) -> (Vec<Vec<f64>>, SeqCache) {
    let hd = params.hidden_dim();
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    let mut cache = SeqCache {
        steps: Vec::with_capacity(xs.len()),
        h_prev: Vec::with_capacity(xs.len()),
        c_prev: Vec::with_capacity(xs.len()),
    };
    let mut hs = Vec::with_capacity(xs.len());
    for &x in xs {
        cache.h_prev.push(h.clone());
        cache.c_prev.push(c.clone());
        let step = cell_step(x, &h, &c, params);
        h = step.h.clone();
        c = step.c.clone();
        hs.push(step.h.clone());
        cache.steps.push(step);
    }
    (hs, cache)
}

/// BPTT through one direction. `dh_seq` carries the loss gradient on each
/// step's hidden output, in processing order.
fn lstm_backward_seq(
    xs: &[&[f64]],
    cache: &SeqCache,
    params: &LstmParams,
    dh_seq: &[Vec<f64>],
) -> (LstmGrads, Vec<Vec<f64>>) {
    let hd = params.hidden_dim();
    let e = params.input_dim();
    let t_len = xs.len();
    let mut grads = LstmGrads::zeros(params);
    let mut dxs = vec![vec![0.0; e]; t_len];
    let mut dh_next = vec![0.0; hd];
    let mut dc_next = vec![0.0; hd];
    let mut d_gates = vec![0.0; 4 * hd];

    for t in (0..t_len).rev() {
        let step = &cache.steps[t];
        let h_prev = &cache.h_prev[t];
        let c_prev = &cache.c_prev[t];
        for n in 0..hd {
            let dh = dh_seq[t][n] + dh_next[n];
            let dc = dh * step.o[n] * (1.0 - step.tanh_c[n] * step.tanh_c[n]) + dc_next[n];
            d_gates[n] = dc * step.g[n] * step.i[n] * (1.0 - step.i[n]);
            d_gates[hd + n] = dc * c_prev[n] * step.f[n] * (1.0 - step.f[n]);
            d_gates[2 * hd + n] = dc * step.i[n] * (1.0 - step.g[n] * step.g[n]);
            d_gates[3 * hd + n] = dh * step.tanh_c[n] * step.o[n] * (1.0 - step.o[n]);
            dc_next[n] = dc * step.f[n];
        }
        let x = xs[t];
        for gi in 0..4 * hd {
            let dg = d_gates[gi];
            grads.bias.data_mut()[gi] += dg;
            let w_row = grads.w_ih.row_mut(gi);
            for k in 0..e {
                w_row[k] += dg * x[k];
            }
            let w_row = grads.w_hh.row_mut(gi);
            for k in 0..hd {
                w_row[k] += dg * h_prev[k];
            }
        }
        // dh_next = W_hh^T d_gates, dx = W_ih^T d_gates
        for k in 0..hd {
            let mut acc = 0.0;
            for gi in 0..4 * hd {
                acc += params.w_hh.row(gi)[k] * d_gates[gi];
            }
            dh_next[k] = acc;
        }
        let dx = &mut dxs[t];
        for k in 0..e {
            let mut acc = 0.0;
            for gi in 0..4 * hd {
                acc += params.w_ih.row(gi)[k] * d_gates[gi];
            }
            dx[k] = acc;
        }
    }
    (grads, dxs)
}

/// Caches for every row of a bidirectional forward pass.
pub struct BiLstmCache {
    rows: Vec<(SeqCache, SeqCache)>,
}

fn row_slices(x: &Tensor, row: usize) -> Vec<&[f64]> {
    let t_max = x.shape()[1];
    let e = x.shape()[2];
    (0..t_max).map(|t| &x.data()[(row * t_max + t) * e..(row * t_max + t + 1) * e]).collect()
}

/// Forward pass left-to-right plus a second pass right-to-left, with
/// per-timestep concatenation `[h_fwd; h_bwd]`. Output is `[B, T, 2H]`.
pub fn bilstm_forward(
    x: &Tensor,
    fwd: &LstmParams,
    bwd: &LstmParams,
) -> Result<(Tensor, BiLstmCache)> {
    fwd.validate()?;
    bwd.validate()?;
    if x.shape().len() != 3 {
        return Err(Error::Shape(format!("bilstm input must be 3-D, got {:?}", x.shape())));
    }
    let (b, t_max, e) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if t_max == 0 {
        return Err(Error::Shape("bilstm requires T >= 1".into()));
    }
    if e != fwd.input_dim() || e != bwd.input_dim() {
        return Err(Error::Shape(format!(
            "input width {e} does not match LSTM input dims {}/{}",
            fwd.input_dim(),
            bwd.input_dim()
        )));
    }
    let h = fwd.hidden_dim();
    if h != bwd.hidden_dim() {
        return Err(Error::Shape("forward/backward hidden dims differ".into()));
    }

    let per_row: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>, SeqCache, SeqCache)> = (0..b)
        .into_par_iter()
        .map(|bi| {
            let xs = row_slices(x, bi);
            let (hs_f, cache_f) = lstm_run_seq(&xs, fwd);
            let xs_rev: Vec<&[f64]> = xs.iter().rev().copied().collect();
            let (hs_b, cache_b) = lstm_run_seq(&xs_rev, bwd);
            (hs_f, hs_b, cache_f, cache_b)
        })
        .collect();

    let mut out = Tensor::zeros(&[b, t_max, 2 * h]);
    let mut rows = Vec::with_capacity(b);
    for (bi, (hs_f, hs_b, cache_f, cache_b)) in per_row.into_iter().enumerate() {
        let data = out.data_mut();
        for t in 0..t_max {
            let dst = (bi * t_max + t) * 2 * h;
            data[dst..dst + h].copy_from_slice(&hs_f[t]);
            data[dst + h..dst + 2 * h].copy_from_slice(&hs_b[t_max - 1 - t]);
        }
        rows.push((cache_f, cache_b));
    }
    Ok((out, BiLstmCache { rows }))
}

/// BPTT through both directions; returns per-direction parameter grads and
/// the gradient w.r.t. the input, summed over rows in index order.
pub fn bilstm_backward(
    x: &Tensor,
    cache: &BiLstmCache,
    fwd: &LstmParams,
    bwd: &LstmParams,
    grad_out: &Tensor,
) -> Result<(LstmGrads, LstmGrads, Tensor)> {
    let (b, t_max, e) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let h = fwd.hidden_dim();
    if grad_out.shape() != [b, t_max, 2 * h] {
        return Err(Error::Shape(format!(
            "grad_out shape {:?} does not match [{b}, {t_max}, {}]",
            grad_out.shape(),
            2 * h
        )));
    }

    let per_row: Vec<(LstmGrads, LstmGrads, Vec<Vec<f64>>, Vec<Vec<f64>>)> = (0..b)
        .into_par_iter()
        .map(|bi| {
            let xs = row_slices(x, bi);
            let xs_rev: Vec<&[f64]> = xs.iter().rev().copied().collect();
            let (cache_f, cache_b) = &cache.rows[bi];
            let mut dh_f = vec![vec![0.0; h]; t_max];
            let mut dh_b = vec![vec![0.0; h]; t_max];
            for t in 0..t_max {
                let src = (bi * t_max + t) * 2 * h;
                dh_f[t].copy_from_slice(&grad_out.data()[src..src + h]);
                dh_b[t_max - 1 - t].copy_from_slice(&grad_out.data()[src + h..src + 2 * h]);
            }
            let (gf, dx_f) = lstm_backward_seq(&xs, cache_f, fwd, &dh_f);
            let (gb, dx_b) = lstm_backward_seq(&xs_rev, cache_b, bwd, &dh_b);
            (gf, gb, dx_f, dx_b)
        })
        .collect();

    let mut grads_f = LstmGrads::zeros(fwd);
    let mut grads_b = LstmGrads::zeros(bwd);
    let mut dx = Tensor::zeros(&[b, t_max, e]);
    for (bi, (gf, gb, dx_f, dx_b)) in per_row.into_iter().enumerate() {
        grads_f.accumulate(&gf);
        grads_b.accumulate(&gb);
        let data = dx.data_mut();
        for t in 0..t_max {
            let dst = (bi * t_max + t) * e;
            for k in 0..e {
                data[dst + k] = dx_f[t][k] + dx_b[t_max - 1 - t][k];
            }
        }
    }
    Ok((grads_f, grads_b, dx))
}

// ---------------------------------------------------------------------------
// Global max pooling
// ---------------------------------------------------------------------------

/// Elementwise max over the time axis. Returns the pooled `[B, F]` tensor
/// and the winning timestep per (row, feature); ties go to the earliest
/// timestep.
pub fn global_max_pool(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    if x.shape().len() != 3 || x.shape()[1] == 0 {
        return Err(Error::Shape(format!("gmp input must be [B, T>=1, F], got {:?}", x.shape())));
    }
    let (b, t_max, f) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Tensor::zeros(&[b, f]);
    let mut argmax = vec![0usize; b * f];
    for bi in 0..b {
        for k in 0..f {
            let mut best = x.data()[(bi * t_max) * f + k];
            let mut best_t = 0;
            for t in 1..t_max {
                let v = x.data()[(bi * t_max + t) * f + k];
                if v > best {
                    best = v;
                    best_t = t;
                }
            }
            out.data_mut()[bi * f + k] = best;
            argmax[bi * f + k] = best_t;
        }
    }
    Ok((out, argmax))
}

/// Routes the pooled gradient to the argmax positions.
pub fn gmp_backward(argmax: &[usize], grad_out: &Tensor, x_shape: &[usize]) -> Result<Tensor> {
    let (b, t_max, f) = (x_shape[0], x_shape[1], x_shape[2]);
    if grad_out.shape() != [b, f] || argmax.len() != b * f {
        return Err(Error::Shape("gmp backward shapes disagree".into()));
    }
    let mut dx = Tensor::zeros(x_shape);
    for bi in 0..b {
        for k in 0..f {
            let t = argmax[bi * f + k];
            dx.data_mut()[(bi * t_max + t) * f + k] += grad_out.data()[bi * f + k];
        }
    }
    Ok(dx)
}

// ---------------------------------------------------------------------------
// FC + sigmoid + BCE
// ---------------------------------------------------------------------------

/// `p = sigmoid(W v + b)` per row; `w` is `[1, F]`, `bias` is `[1]`.
pub fn fc_sigmoid_forward(v: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Vec<f64>> {
    if v.shape().len() != 2 || w.shape() != [1, v.shape()[1]] || bias.shape() != [1] {
        return Err(Error::Shape(format!(
            "fc shapes disagree: v {:?}, w {:?}, bias {:?}",
            v.shape(),
            w.shape(),
            bias.shape()
        )));
    }
    let b = v.shape()[0];
    Ok((0..b).map(|bi| sigmoid(dot(v.row(bi), w.row(0)) + bias.data()[0])).collect())
}

/// Mean binary cross entropy with probabilities clamped to
/// `[BCE_EPS, 1 - BCE_EPS]`.
pub fn bce_loss(p: &[f64], y: &[f64]) -> f64 {
    assert_eq!(p.len(), y.len(), "probability/label length mismatch");
    if p.is_empty() {
        return 0.0;
    }
    let sum: f64 = p
        .iter()
        .zip(y)
        .map(|(&pi, &yi)| {
            let pc = pi.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(yi * pc.ln() + (1.0 - yi) * (1.0 - pc).ln())
        })
        .sum();
    sum / p.len() as f64
}

/// Gradient of mean BCE through the sigmoid head: returns `(dW, dbias, dV)`
/// using `d logit = (p - y) / B`.
pub fn fc_bce_backward(
    p: &[f64],
    y: &[f64],
    v: &Tensor,
    w: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let b = v.shape()[0];
    let f = v.shape()[1];
    if p.len() != b || y.len() != b {
        return Err(Error::Shape("probability/label/batch lengths disagree".into()));
    }
    let mut dw = Tensor::zeros(&[1, f]);
    let mut dbias = Tensor::zeros(&[1]);
    let mut dv = Tensor::zeros(&[b, f]);
    for bi in 0..b {
        let dlogit = (p[bi] - y[bi]) / b as f64;
        dbias.data_mut()[0] += dlogit;
        let vr = v.row(bi);
        let dwr = dw.row_mut(0);
        for k in 0..f {
            dwr[k] += dlogit * vr[k];
        }
        let dvr = dv.row_mut(bi);
        let wr = w.row(0);
        for k in 0..f {
            dvr[k] = dlogit * wr[k];
        }
    }
    Ok((dw, dbias, dv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params_from(w_ih: &Tensor, w_hh: &Tensor, bias: &Tensor) -> LstmParams<'_> {
        // helper only exists to name the lifetime
        LstmParams { w_ih, w_hh, bias }
    }

    #[test]
    fn embedding_sentinel_rows_are_zero() {
        let table = Tensor::from_vec(&[4, 2], (0..8).map(f64::from).collect()).unwrap();
        let tokens = TokenBatch::new(vec![vec![None, Some((1, 0))]]).unwrap();
        let out = embedding_forward(&tokens, &table, 2).unwrap();
        assert_eq!(&out.data()[0..2], &[0.0, 0.0]);
    }

    #[test]
    fn embedding_sums_action_and_delta_rows() {
        // one-hot-identifiable rows: row r = [r*10, r*10+1]
        let data: Vec<f64> = (0..5).flat_map(|r| [r as f64 * 10.0, r as f64 * 10.0 + 1.0]).collect();
        let table = Tensor::from_vec(&[5, 2], data).unwrap();
        // L = 3; event (a=2, delta=0) -> rows 2 and 3
        let tokens = TokenBatch::new(vec![vec![Some((2, 0))]]).unwrap();
        let out = embedding_forward(&tokens, &table, 3).unwrap();
        assert_eq!(out.data(), &[50.0, 52.0]);
    }

    #[test]
    fn embedding_rejects_out_of_range() {
        let table = Tensor::zeros(&[4, 2]);
        let tokens = TokenBatch::new(vec![vec![Some((3, 0))]]).unwrap();
        assert!(embedding_forward(&tokens, &table, 3).is_err());
        let tokens = TokenBatch::new(vec![vec![Some((0, 1))]]).unwrap();
        assert!(embedding_forward(&tokens, &table, 3).is_err());
    }

    #[test]
    fn lstm_cell_zero_weights_zero_input() {
        let w_ih = Tensor::zeros(&[4, 1]);
        let w_hh = Tensor::zeros(&[4, 1]);
        let bias = Tensor::zeros(&[4]);
        let p = params_from(&w_ih, &w_hh, &bias);
        let (h, c) = lstm_cell_forward(&[0.0], &[0.0], &[0.0], &p).unwrap();
        assert_eq!(h, vec![0.0]);
        assert_eq!(c, vec![0.0]);
    }

    #[test]
    fn lstm_cell_matches_hand_evaluated_gates() {
        // H=1, E=1, hand-set scalar weights; gate order i, f, g, o.
        let w_ih = Tensor::from_vec(&[4, 1], vec![0.5, -0.25, 1.0, 0.75]).unwrap();
        let w_hh = Tensor::from_vec(&[4, 1], vec![0.1, 0.2, -0.3, 0.4]).unwrap();
        let bias = Tensor::from_vec(&[4], vec![0.05, 1.0, -0.1, 0.2]).unwrap();
        let p = params_from(&w_ih, &w_hh, &bias);
        let (x, h0, c0) = (0.8, 0.3, -0.4);
        let (h, c) = lstm_cell_forward(&[x], &[h0], &[c0], &p).unwrap();

        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let i = sig(0.5 * x + 0.1 * h0 + 0.05);
        let f = sig(-0.25 * x + 0.2 * h0 + 1.0);
        let g = (1.0 * x - 0.3 * h0 - 0.1).tanh();
        let o = sig(0.75 * x + 0.4 * h0 + 0.2);
        let c_ref = f * c0 + i * g;
        let h_ref = o * c_ref.tanh();
        assert!((c[0] - c_ref).abs() < 1e-15);
        assert!((h[0] - h_ref).abs() < 1e-15);
    }

    #[test]
    fn lstm_cell_saturated_forget_gate_retains_memory() {
        // large positive forget bias saturates f at ~1
        let w_ih = Tensor::zeros(&[4, 1]);
        let w_hh = Tensor::zeros(&[4, 1]);
        let bias = Tensor::from_vec(&[4], vec![0.3, 60.0, 0.7, 0.0]).unwrap();
        let p = params_from(&w_ih, &w_hh, &bias);
        let c_prev = 1.0e6;
        let (_, c) = lstm_cell_forward(&[0.0], &[0.0], &[c_prev], &p).unwrap();
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let expected = c_prev + sig(0.3) * 0.7f64.tanh();
        assert!((c[0] - expected).abs() < 1e-6 * c_prev.abs());
    }

    fn random_lstm(e: usize, h: usize, seed: u64) -> (Tensor, Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (
            Tensor::uniform(&[4 * h, e], 0.6, &mut rng),
            Tensor::uniform(&[4 * h, h], 0.6, &mut rng),
            Tensor::uniform(&[4 * h], 0.4, &mut rng),
        )
    }

    #[test]
    fn bilstm_single_step_concatenates_both_directions() {
        let (wf1, wf2, bf) = random_lstm(2, 3, 1);
        let (wb1, wb2, bb) = random_lstm(2, 3, 2);
        let fwd = params_from(&wf1, &wf2, &bf);
        let bwd = params_from(&wb1, &wb2, &bb);
        let x = Tensor::from_vec(&[1, 1, 2], vec![0.5, -0.2]).unwrap();
        let (out, _) = bilstm_forward(&x, &fwd, &bwd).unwrap();
        assert_eq!(out.shape(), &[1, 1, 6]);
        let (hf, _) = lstm_cell_forward(&[0.5, -0.2], &[0.0; 3], &[0.0; 3], &fwd).unwrap();
        let (hb, _) = lstm_cell_forward(&[0.5, -0.2], &[0.0; 3], &[0.0; 3], &bwd).unwrap();
        assert_eq!(&out.data()[0..3], hf.as_slice());
        assert_eq!(&out.data()[3..6], hb.as_slice());
    }

    #[test]
    fn bilstm_zero_everything_is_zero() {
        let zf = (Tensor::zeros(&[8, 2]), Tensor::zeros(&[8, 2]), Tensor::zeros(&[8]));
        let fwd = params_from(&zf.0, &zf.1, &zf.2);
        let x = Tensor::zeros(&[2, 3, 2]);
        let (out, _) = bilstm_forward(&x, &fwd, &fwd).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bilstm_input_reversal_swaps_and_reverses_halves() {
        // shared per-direction params so the directions are interchangeable
        let (w1, w2, b) = random_lstm(2, 3, 7);
        let shared = params_from(&w1, &w2, &b);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t_max = 5;
        let x = Tensor::uniform(&[1, t_max, 2], 1.0, &mut rng);
        let rev_data: Vec<f64> = (0..t_max)
            .rev()
            .flat_map(|t| x.data()[t * 2..(t + 1) * 2].to_vec())
            .collect();
        let x_rev = Tensor::from_vec(&[1, t_max, 2], rev_data).unwrap();

        let (out, _) = bilstm_forward(&x, &shared, &shared).unwrap();
        let (out_rev, _) = bilstm_forward(&x_rev, &shared, &shared).unwrap();
        let h = 3;
        for t in 0..t_max {
            let orig = &out.data()[t * 2 * h..(t + 1) * 2 * h];
            let rev = &out_rev.data()[(t_max - 1 - t) * 2 * h..(t_max - t) * 2 * h];
            for k in 0..h {
                assert!((orig[k] - rev[h + k]).abs() < 1e-14);
                assert!((orig[h + k] - rev[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gmp_is_identity_at_t1_and_permutation_invariant() {
        let x = Tensor::from_vec(&[1, 1, 3], vec![0.3, -0.2, 5.0]).unwrap();
        let (out, _) = global_max_pool(&x).unwrap();
        assert_eq!(out.data(), &[0.3, -0.2, 5.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::uniform(&[2, 4, 3], 1.0, &mut rng);
        let (out_a, _) = global_max_pool(&x).unwrap();
        let perm = [2usize, 0, 3, 1];
        let mut permuted = Tensor::zeros(&[2, 4, 3]);
        for b in 0..2 {
            for (dst_t, &src_t) in perm.iter().enumerate() {
                for k in 0..3 {
                    permuted.data_mut()[(b * 4 + dst_t) * 3 + k] = x.data()[(b * 4 + src_t) * 3 + k];
                }
            }
        }
        let (out_b, _) = global_max_pool(&permuted).unwrap();
        assert_eq!(out_a.data(), out_b.data());
    }

    #[test]
    fn gmp_breaks_ties_to_the_earliest_timestep() {
        let x = Tensor::from_vec(&[1, 3, 1], vec![2.0, 2.0, 1.0]).unwrap();
        let (_, argmax) = global_max_pool(&x).unwrap();
        assert_eq!(argmax, vec![0]);
    }

    #[test]
    fn fc_sigmoid_zero_weights_give_half() {
        let v = Tensor::from_vec(&[2, 3], vec![1.0, -4.0, 2.0, 0.0, 0.5, 9.0]).unwrap();
        let w = Tensor::zeros(&[1, 3]);
        let b = Tensor::zeros(&[1]);
        let p = fc_sigmoid_forward(&v, &w, &b).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn fc_sigmoid_is_monotone_in_bias() {
        let v = Tensor::from_vec(&[1, 2], vec![0.2, -0.1]).unwrap();
        let w = Tensor::from_vec(&[1, 2], vec![0.3, 0.4]).unwrap();
        let mut last = 0.0;
        for b in [-5.0, -1.0, 0.0, 1.0, 5.0, 40.0] {
            let bias = Tensor::from_vec(&[1], vec![b]).unwrap();
            let p = fc_sigmoid_forward(&v, &w, &bias).unwrap()[0];
            assert!(p > last);
            last = p;
        }
        assert!(last > 0.999);
    }

    #[test]
    fn fc_sigmoid_matches_scalar_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v = Tensor::uniform(&[3, 4], 1.0, &mut rng);
        let w = Tensor::uniform(&[1, 4], 1.0, &mut rng);
        let bias = Tensor::uniform(&[1], 1.0, &mut rng);
        let p = fc_sigmoid_forward(&v, &w, &bias).unwrap();
        for bi in 0..3 {
            let mut z = bias.data()[0];
            for k in 0..4 {
                z += v.row(bi)[k] * w.row(0)[k];
            }
            let expect = 1.0 / (1.0 + (-z).exp());
            assert!((p[bi] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn bce_known_values() {
        assert!(bce_loss(&[1.0, 0.0], &[1.0, 0.0]) <= 1e-11);
        let ln2 = std::f64::consts::LN_2;
        assert!((bce_loss(&[0.5, 0.5, 0.5], &[1.0, 0.0, 1.0]) - ln2).abs() < 1e-15);
        assert!((bce_loss(&[0.9], &[1.0]) - 0.105_360_515_657_826_3).abs() < 1e-12);
    }

    #[test]
    fn bce_is_ln2_at_half_regardless_of_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y: Vec<f64> = (0..50).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
        let p = vec![0.5; 50];
        assert!((bce_loss(&p, &y) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
