//! Layers shared by the tagger, the question generator and the MC model.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, ParamId, ParamStore, Tape, Tensor, Var};
use crate::text::EmbeddingMatrix;

/// Weights start uniform in `[-INIT_BOUND, INIT_BOUND]`; biases start at zero.
pub const INIT_BOUND: f64 = 0.08;

pub(crate) fn weight<R: Rng + ?Sized>(store: &mut ParamStore, name: String, rows: usize, cols: usize, rng: &mut R) -> ParamId {
    store.add(name, Tensor::uniform(&[rows, cols], INIT_BOUND, rng), true)
}

pub(crate) fn bias(store: &mut ParamStore, name: String, cols: usize) -> ParamId {
    store.add(name, Tensor::zeros(&[1, cols]), true)
}

/// Embedding table `[vocab, dim]`, uniformly initialized.
pub(crate) fn embedding<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: &str,
    vocab: usize,
    dim: usize,
    trainable: bool,
    rng: &mut R,
) -> ParamId {
    store.add(name, Tensor::uniform(&[vocab, dim], INIT_BOUND, rng), trainable)
}

/// Overwrites an embedding table with pretrained vectors.
pub(crate) fn load_pretrained(store: &mut ParamStore, id: ParamId, emb: &EmbeddingMatrix) -> Result<()> {
    let p = store.get_mut(id);
    if p.value.shape() != emb.values.shape() {
        return Err(Error::Shape(format!(
            "embedding table is {:?} but pretrained matrix is {:?}",
            p.value.shape(),
            emb.values.shape()
        )));
    }
    p.value = emb.values.clone();
    p.trainable = emb.trainable;
    Ok(())
}

/// Mean loss and mean gradient over `items`, one tape per item. Items are
/// evaluated in parallel; the reduction runs in input order, so the result
/// does not depend on thread scheduling.
pub fn batch_gradients<T, F>(store: &ParamStore, items: &[T], f: F) -> Result<(f64, Gradients)>
where
    T: Sync,
    F: Fn(&T) -> Result<(f64, Gradients)> + Sync,
{
    if items.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let parts: Vec<Result<(f64, Gradients)>> = items.par_iter().map(&f).collect();
    let mut total = Gradients::zeros_like(store);
    let mut loss = 0.0;
    for part in parts {
        let (l, g) = part?;
        loss += l;
        total += &g;
    }
    let scale = 1.0 / items.len() as f64;
    total.scale(scale);
    Ok((loss * scale, total))
}

/// Affine map `x W + b` applied to each row.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        Linear {
            w: weight(store, format!("{name}.w"), input, output, rng),
            b: bias(store, format!("{name}.b"), output),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let xw = tape.matmul(x, w);
        tape.add_row(xw, b)
    }
}

/// Single-layer LSTM. Gate blocks are laid out `[input, forget, cell, output]`
/// along the columns of each weight matrix.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let w_ih = weight(store, format!("{name}.w_ih"), input, 4 * hidden, rng);
        let w_hh = weight(store, format!("{name}.w_hh"), hidden, 4 * hidden, rng);
        let mut b = Tensor::zeros(&[1, 4 * hidden]);
        b.data_mut()[hidden..2 * hidden].fill(1.0);
        let b = store.add(format!("{name}.b"), b, true);
        Lstm { w_ih, w_hh, b, hidden }
    }

    pub fn zero_state(&self, tape: &mut Tape) -> (Var, Var) {
        let h = tape.constant(Tensor::zeros(&[1, self.hidden]));
        let c = tape.constant(Tensor::zeros(&[1, self.hidden]));
        (h, c)
    }

    /// Advances one step from a pre-projected input row `x W_ih` (`[1, 4H]`).
    pub fn cell(&self, tape: &mut Tape, x_proj: Var, h: Var, c: Var) -> (Var, Var) {
        let hd = self.hidden;
        let w_hh = tape.param(self.w_hh);
        let b = tape.param(self.b);
        let hh = tape.matmul(h, w_hh);
        let z = tape.add(x_proj, hh);
        let z = tape.add(z, b);
        let i = tape.slice_cols(z, 0, hd);
        let f = tape.slice_cols(z, hd, 2 * hd);
        let g = tape.slice_cols(z, 2 * hd, 3 * hd);
        let o = tape.slice_cols(z, 3 * hd, 4 * hd);
        let i = tape.sigmoid(i);
        let f = tape.sigmoid(f);
        let g = tape.tanh(g);
        let o = tape.sigmoid(o);
        let fc = tape.mul(f, c);
        let ig = tape.mul(i, g);
        let c_new = tape.add(fc, ig);
        let tc = tape.tanh(c_new);
        let h_new = tape.mul(o, tc);
        (h_new, c_new)
    }

    /// One step from a raw `[1, input]` row.
    pub fn step(&self, tape: &mut Tape, x: Var, h: Var, c: Var) -> (Var, Var) {
        let w = tape.param(self.w_ih);
        let xp = tape.matmul(x, w);
        self.cell(tape, xp, h, c)
    }

    /// Runs over the rows of `xs` (`[n, input]`), returning `[n, H]` states in
    /// input order regardless of direction.
    pub fn run(&self, tape: &mut Tape, xs: Var, reverse: bool) -> Var {
        let n = tape.shape(xs).0;
        let w = tape.param(self.w_ih);
        let proj = tape.matmul(xs, w);
        let (mut h, mut c) = self.zero_state(tape);
        let mut outs = vec![h; n];
        let order: Box<dyn Iterator<Item = usize>> = if reverse { Box::new((0..n).rev()) } else { Box::new(0..n) };
        for t in order {
            let xp = tape.row(proj, t);
            (h, c) = self.cell(tape, xp, h, c);
            outs[t] = h;
        }
        tape.concat_rows(&outs)
    }
}

/// Forward and backward LSTMs with concatenated `[n, 2H]` outputs.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

impl BiLstm {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        BiLstm {
            fwd: Lstm::new(store, &format!("{name}.fwd"), input, hidden, rng),
            bwd: Lstm::new(store, &format!("{name}.bwd"), input, hidden, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.fwd.hidden
    }

    pub fn run(&self, tape: &mut Tape, xs: Var) -> Var {
        let f = self.fwd.run(tape, xs, false);
        let b = self.bwd.run(tape, xs, true);
        tape.concat_cols(&[f, b])
    }
}
