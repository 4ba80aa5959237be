use std::sync::Arc;

use rand::Rng;

use crate::numerics::{BoundParams, CustomOp, Dropout, Graph, NumericsError, ParamId, ParamStore, Scalar, Tensor, Var};

use super::{EncoderConfig, OutputHead, Packing};

/// Weights of one LSTM layer; gate order is input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub hidden: usize,
}

impl LstmParams {
    pub fn new<F: Scalar, R: Rng>(
        store: &mut ParamStore<F>,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let w_ih = store.glorot(format!("{prefix}.w_ih"), input, 4 * hidden, rng);
        let w_hh = store.glorot(format!("{prefix}.w_hh"), hidden, 4 * hidden, rng);
        let mut b = Tensor::zeros((1, 4 * hidden));
        b.slice_mut(ndarray::s![.., hidden..2 * hidden]).fill(F::one());
        let b_ih = store.add(format!("{prefix}.b_ih"), b);
        let b_hh = store.zeros(format!("{prefix}.b_hh"), 1, 4 * hidden);
        LstmParams {
            w_ih,
            w_hh,
            b_ih,
            b_hh,
            hidden,
        }
    }
}

/// One LSTM step for a batch of rows. Returns `(h, state)`.
///
/// `state` is either an `M x hidden` initial cell state or the state
/// returned by a previous step; only its cell columns are read.
pub fn lstm_cell<F: Scalar>(
    g: &mut Graph<F>,
    p: &BoundParams,
    w: &LstmParams,
    x: Var,
    h: Var,
    state: Var,
) -> Result<(Var, Var), NumericsError> {
    let zx = g.matmul(x, p.var(w.w_ih))?;
    lstm_cell_projected(g, p, w, zx, h, state)
}

/// [`lstm_cell`] with the input projection `x W_ih` already applied.
pub fn lstm_cell_projected<F: Scalar>(
    g: &mut Graph<F>,
    p: &BoundParams,
    w: &LstmParams,
    zx: Var,
    h: Var,
    state: Var,
) -> Result<(Var, Var), NumericsError> {
    let d = w.hidden;
    let zh = g.matmul(h, p.var(w.w_hh))?;
    let next = g.custom(
        Arc::new(LstmGates { hidden: d }),
        &[zx, zh, p.var(w.b_ih), p.var(w.b_hh), state],
    )?;
    let h_next = g.slice_cols(next, 0, d)?;
    Ok((h_next, next))
}

/// Gate nonlinearities of an LSTM step as one node.
///
/// Inputs are `x W_ih`, `h W_hh`, both bias rows and the previous state.
/// The output is `[h | c | i | f | g | o | tanh c]`, `7 * hidden` wide; the
/// activations ride along so the backward pass makes no transcendental
/// calls. The state input is either a bare `M x hidden` cell state or such
/// an output. Only the `h` and `c` columns are differentiable; gradient
/// arriving at the other columns is ignored.
#[derive(Debug, Clone)]
pub struct LstmGates {
    pub hidden: usize,
}

pub const LSTM_STATE_WIDTH: usize = 7;

fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

fn tanh<F: Scalar>(x: F) -> F {
    // exp-based; much cheaper than libm tanh and accurate to a few ulps
    let two = F::one() + F::one();
    two / (F::one() + (-two * x).exp()) - F::one()
}

impl LstmGates {
    fn check<F: Scalar>(&self, inputs: &[&Tensor<F>]) -> Result<(), NumericsError> {
        let (m, d) = (inputs[4].nrows(), self.hidden);
        let state_w = inputs[4].ncols();
        if state_w != d && state_w != LSTM_STATE_WIDTH * d {
            return Err(NumericsError::ShapeMismatch {
                op: "lstm_gates",
                left: inputs[4].dim(),
                right: (m, d),
            });
        }
        let want = [(m, 4 * d), (m, 4 * d), (1, 4 * d), (1, 4 * d)];
        for (t, w) in inputs.iter().zip(want) {
            if t.dim() != w {
                return Err(NumericsError::ShapeMismatch {
                    op: "lstm_gates",
                    left: t.dim(),
                    right: w,
                });
            }
        }
        Ok(())
    }

    /// First column of the cell state inside the state input.
    fn cell_offset<F: Scalar>(&self, state: &Tensor<F>) -> usize {
        if state.ncols() == self.hidden {
            0
        } else {
            self.hidden
        }
    }
}

impl<F: Scalar> CustomOp<F> for LstmGates {
    fn name(&self) -> &'static str {
        "lstm_gates"
    }

    fn forward(&self, inputs: &[&Tensor<F>]) -> Result<Tensor<F>, NumericsError> {
        self.check(inputs)?;
        let d = self.hidden;
        let (zx, zh, state) = (inputs[0], inputs[1], inputs[4]);
        let at = self.cell_offset(state);
        let bias: Vec<F> = inputs[2].iter().zip(inputs[3].iter()).map(|(&a, &b)| a + b).collect();
        let mut out = Tensor::zeros((state.nrows(), LSTM_STATE_WIDTH * d));
        for (r, mut row) in out.rows_mut().into_iter().enumerate() {
            let row = row.as_slice_mut().expect("fresh tensor is contiguous");
            let (hc, rest) = row.split_at_mut(2 * d);
            let (act, tc) = rest.split_at_mut(4 * d);
            for ((a, &x), (&h, &b)) in act.iter_mut().zip(zx.row(r)).zip(zh.row(r).iter().zip(&bias)) {
                *a = x + h + b;
            }
            let (sig, rest) = act.split_at_mut(2 * d);
            let (cand, out_gate) = rest.split_at_mut(d);
            for a in sig.iter_mut().chain(out_gate.iter_mut()) {
                *a = sigmoid(*a);
            }
            for a in cand {
                *a = tanh(*a);
            }
            let prev = state.row(r);
            for j in 0..d {
                let cn = act[d + j] * prev[at + j] + act[j] * act[2 * d + j];
                let t = tanh(cn);
                hc[d + j] = cn;
                tc[j] = t;
                hc[j] = act[3 * d + j] * t;
            }
        }
        Ok(out)
    }

    fn backward(&self, inputs: &[&Tensor<F>], output: &Tensor<F>, grad: &Tensor<F>) -> Vec<Option<Tensor<F>>> {
        let d = self.hidden;
        let state = inputs[4];
        let at = self.cell_offset(state);
        let m = state.nrows();
        let one = F::one();
        let mut dz = Tensor::zeros((m, 4 * d));
        let mut dstate = Tensor::zeros(state.dim());
        for r in 0..m {
            let out = output.row(r);
            let gr = grad.row(r);
            let prev = state.row(r);
            let mut dzr = dz.row_mut(r);
            let mut ds = dstate.row_mut(r);
            for j in 0..d {
                let (i, f, gg, o, tc) = (out[2 * d + j], out[3 * d + j], out[4 * d + j], out[5 * d + j], out[6 * d + j]);
                let dh = gr[j];
                let dcn = gr[d + j] + dh * o * (one - tc * tc);
                dzr[j] = dcn * gg * i * (one - i);
                dzr[d + j] = dcn * prev[at + j] * f * (one - f);
                dzr[2 * d + j] = dcn * i * (one - gg * gg);
                dzr[3 * d + j] = dh * tc * o * (one - o);
                ds[at + j] = dcn * f;
            }
        }
        let db = dz.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0));
        vec![Some(dz.clone()), Some(dz), Some(db.clone()), Some(db), Some(dstate)]
    }
}

/// Single-layer left-to-right LSTM encoder.
#[derive(Debug, Clone)]
pub struct RecurrentEncoder {
    cfg: EncoderConfig,
    lstm: LstmParams,
    head: OutputHead,
}

impl RecurrentEncoder {
    pub fn new<F: Scalar, R: Rng>(cfg: &EncoderConfig, store: &mut ParamStore<F>, rng: &mut R) -> Self {
        let d = cfg.d_model;
        let lstm = LstmParams::new(store, "encoder.lstm", d, d, rng);
        let head = OutputHead::new(store, "encoder", d, rng);
        RecurrentEncoder {
            cfg: cfg.clone(),
            lstm,
            head,
        }
    }

    pub fn encode<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        p: &BoundParams,
        inputs: Var,
        packing: &Packing,
        dropout: &mut Dropout<'_>,
    ) -> Result<Var, NumericsError> {
        let d = self.cfg.d_model;
        let x = dropout.apply(g, inputs, self.cfg.dropout_in)?;

        // Longest sequences first, so the live set at each step is a prefix.
        let mut order: Vec<usize> = (0..packing.lens.len()).collect();
        order.sort_by(|&a, &b| packing.lens[b].cmp(&packing.lens[a]).then(a.cmp(&b)));
        let longest = order.first().map_or(0, |&s| packing.lens[s]);

        let mut h = g.constant(Tensor::zeros((order.len(), d)));
        let mut c = g.constant(Tensor::zeros((order.len(), d)));
        let mut steps = Vec::with_capacity(longest);
        let mut step_offsets = Vec::with_capacity(longest);
        let mut emitted = 0;
        for t in 0..longest {
            let live = order.iter().take_while(|&&s| packing.lens[s] > t).count();
            let rows: Vec<usize> = order[..live].iter().map(|&s| packing.row(s, t)).collect();
            let xt = g.gather_rows(x, Arc::new(rows))?;
            if g.shape(h).0 != live {
                h = g.slice_rows(h, 0, live)?;
                c = g.slice_rows(c, 0, live)?;
            }
            let (hn, cn) = lstm_cell(g, p, &self.lstm, xt, h, c)?;
            h = hn;
            c = cn;
            steps.push(hn);
            step_offsets.push(emitted);
            emitted += live;
        }
        if steps.is_empty() {
            return Err(NumericsError::Invalid("nothing to encode".into()));
        }
        let stacked = g.concat_rows(&steps)?;
        let mut rank = vec![0; order.len()];
        for (k, &s) in order.iter().enumerate() {
            rank[s] = k;
        }
        let mut unpack = Vec::with_capacity(packing.total());
        for (s, &n) in packing.lens.iter().enumerate() {
            for t in 0..n {
                unpack.push(step_offsets[t] + rank[s]);
            }
        }
        let out = g.gather_rows(stacked, Arc::new(unpack))?;
        self.head.apply(g, p, out)
    }
}
