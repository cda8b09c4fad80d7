//! Span-prediction reader with bidirectional attention, DP span decoding,
//! checkpoint averaging and ensembling.

use std::collections::{BTreeMap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Model;
use crate::error::{Error, Result};
use crate::nn::{self, batch_gradients, BiLstm};
use crate::tensor::{Adam, Gradients, ParamId, ParamStore, Tape, Tensor, Var, PROB_FLOOR};
use crate::text::{AnswerSpan, EmbeddingMatrix};

pub const DEFAULT_MAX_SPAN_LEN: usize = 15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub vocab_size: usize,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_true")]
    pub trainable_embeddings: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_embed_dim() -> usize {
    100
}
fn default_hidden() -> usize {
    100
}
fn default_true() -> bool {
    true
}

impl McConfig {
    pub fn new(vocab_size: usize) -> Self {
        McConfig { vocab_size, embed_dim: default_embed_dim(), hidden: default_hidden(), trainable_embeddings: true, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpanDistribution {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl SpanDistribution {
    pub fn new(start: Vec<f64>, end: Vec<f64>) -> Result<Self> {
        if start.len() != end.len() || start.is_empty() {
            return Err(Error::Shape(format!("start has {} entries, end has {}", start.len(), end.len())));
        }
        Ok(SpanDistribution { start, end })
    }

    pub fn len(&self) -> usize {
        self.start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start.is_empty()
    }
}

/// A question over a paragraph, as vocabulary ids, with its gold span.
#[derive(Clone, Debug, PartialEq)]
pub struct McExample {
    pub paragraph: Vec<usize>,
    pub question: Vec<usize>,
    pub span: AnswerSpan,
}

#[derive(Clone, Debug)]
pub struct McModel {
    config: McConfig,
    params: ParamStore,
    embed: ParamId,
    p_encoder: BiLstm,
    q_encoder: BiLstm,
    /// Similarity weights split over `h`, `u` and `h * u`.
    sim_h: ParamId,
    sim_u: ParamId,
    sim_hu: ParamId,
    modeling: BiLstm,
    start_w: ParamId,
    start_b: ParamId,
    end_w: ParamId,
    end_b: ParamId,
}

impl Model for McModel {
    const KIND: &'static str = "mc-model";
    type Config = McConfig;

    fn build(c: &McConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let mut p = ParamStore::new();
        let d = 2 * c.hidden;
        let embed = nn::embedding(&mut p, "embed", c.vocab_size, c.embed_dim, c.trainable_embeddings, &mut rng);
        let p_encoder = BiLstm::new(&mut p, "p_encoder", c.embed_dim, c.hidden, &mut rng);
        let q_encoder = BiLstm::new(&mut p, "q_encoder", c.embed_dim, c.hidden, &mut rng);
        let sim_h = nn::weight(&mut p, "sim.h".into(), d, 1, &mut rng);
        let sim_u = nn::weight(&mut p, "sim.u".into(), d, 1, &mut rng);
        let sim_hu = nn::weight(&mut p, "sim.hu".into(), 1, d, &mut rng);
        let modeling = BiLstm::new(&mut p, "modeling", 4 * d, c.hidden, &mut rng);
        let start_w = nn::weight(&mut p, "start.w".into(), 5 * d, 1, &mut rng);
        let start_b = nn::bias(&mut p, "start.b".into(), 1);
        let end_w = nn::weight(&mut p, "end.w".into(), 5 * d, 1, &mut rng);
        let end_b = nn::bias(&mut p, "end.b".into(), 1);
        McModel {
            config: c.clone(),
            params: p,
            embed,
            p_encoder,
            q_encoder,
            sim_h,
            sim_u,
            sim_hu,
            modeling,
            start_w,
            start_b,
            end_w,
            end_b,
        }
    }

    fn config(&self) -> &McConfig {
        &self.config
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

impl McModel {
    pub fn new(config: McConfig) -> Self {
        Self::build(&config)
    }

    pub fn set_embeddings(&mut self, emb: &EmbeddingMatrix) -> Result<()> {
        nn::load_pretrained(&mut self.params, self.embed, emb)
    }

    fn check(&self, ids: &[usize], what: &str) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Input(format!("empty {what}")));
        }
        if let Some(bad) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::Bounds(format!("token id {bad} outside vocabulary of {}", self.config.vocab_size)));
        }
        Ok(())
    }

    /// Start and end distributions, each `[1, n]`.
    pub fn heads(&self, tape: &mut Tape, paragraph: &[usize], question: &[usize]) -> Result<(Var, Var)> {
        self.check(paragraph, "paragraph")?;
        self.check(question, "question")?;
        let (n, m) = (paragraph.len(), question.len());
        let table = tape.param(self.embed);
        let xp = tape.gather_rows(table, paragraph);
        let xq = tape.gather_rows(table, question);
        let h = self.p_encoder.run(tape, xp);
        let u = self.q_encoder.run(tape, xq);

        // s_ij = w_h . h_i + w_u . u_j + w_hu . (h_i * u_j)
        let w = tape.param(self.sim_h);
        let sh = tape.matmul(h, w);
        let ones_m = tape.constant(Tensor::full(&[1, m], 1.0));
        let sh = tape.matmul(sh, ones_m);
        let w = tape.param(self.sim_u);
        let su = tape.matmul(u, w);
        let su = tape.transpose(su);
        let w = tape.param(self.sim_hu);
        let hw = tape.mul_row(h, w);
        let ut = tape.transpose(u);
        let s = tape.matmul(hw, ut);
        let s = tape.add(s, sh);
        let s = tape.add_row(s, su);

        let a = tape.softmax(s, 1)?;
        let u_att = tape.matmul(a, u);
        let smax = tape.max_cols(s);
        let smax = tape.transpose(smax);
        let b = tape.softmax(smax, 1)?;
        let h_att = tape.matmul(b, h);
        let ones_n = tape.constant(Tensor::full(&[n, 1], 1.0));
        let h_att = tape.matmul(ones_n, h_att);

        let hu = tape.mul(h, u_att);
        let hh = tape.mul(h, h_att);
        let g = tape.concat_cols(&[h, u_att, hu, hh]);
        let mo = self.modeling.run(tape, g);
        let gm = tape.concat_cols(&[g, mo]);
        let start = self.head(tape, gm, self.start_w, self.start_b)?;
        let end = self.head(tape, gm, self.end_w, self.end_b)?;
        Ok((start, end))
    }

    fn head(&self, tape: &mut Tape, feats: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let w = tape.param(w);
        let b = tape.param(b);
        let logits = tape.matmul(feats, w);
        let logits = tape.add_row(logits, b);
        let logits = tape.transpose(logits);
        tape.softmax(logits, 1)
    }

    pub fn forward(&self, paragraph: &[usize], question: &[usize]) -> Result<SpanDistribution> {
        let mut tape = Tape::new(&self.params);
        let (s, e) = self.heads(&mut tape, paragraph, question)?;
        Ok(SpanDistribution { start: tape.value(s).data().to_vec(), end: tape.value(e).data().to_vec() })
    }

    /// `-log P(start) - log P(end)` for the gold span.
    pub fn loss_var(&self, tape: &mut Tape, ex: &McExample) -> Result<Var> {
        ex.span.validate(ex.paragraph.len())?;
        let (s, e) = self.heads(tape, &ex.paragraph, &ex.question)?;
        let ps = tape.pick(s, 0, ex.span.start);
        let pe = tape.pick(e, 0, ex.span.end);
        let both = tape.concat_cols(&[ps, pe]);
        let nll = tape.neg_log(both, PROB_FLOOR)?;
        Ok(tape.sum(nll))
    }

    pub fn loss(&self, ex: &McExample) -> Result<f64> {
        let mut tape = Tape::new(&self.params);
        let l = self.loss_var(&mut tape, ex)?;
        Ok(tape.value(l).item())
    }

    pub fn gradients(&self, ex: &McExample) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new(&self.params);
        let l = self.loss_var(&mut tape, ex)?;
        let g = tape.backward(l)?;
        Ok((tape.value(l).item(), g))
    }
}

/// One Adam update on the batch-mean span loss; returns that loss.
pub fn mc_train_step(model: &mut McModel, opt: &mut Adam, batch: &[McExample]) -> Result<f64> {
    let (loss, grads) = batch_gradients(&model.params, batch, |ex| model.gradients(ex))?;
    opt.step(&mut model.params, &grads)?;
    Ok(loss)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BestSpan {
    pub span: AnswerSpan,
    pub score: f64,
}

/// Highest `start[i] * end[j]` with `i <= j < i + max_span_len`, in one pass
/// using a sliding-window maximum over start probabilities. Ties go to the
/// smallest `i`, then the smallest `j`.
pub fn dp_best_span(dist: &SpanDistribution, max_span_len: usize) -> Result<BestSpan> {
    if max_span_len == 0 {
        return Err(Error::Config("max_span_len must be at least 1".into()));
    }
    if dist.is_empty() || dist.start.len() != dist.end.len() {
        return Err(Error::Shape("malformed span distribution".into()));
    }
    let mut window: VecDeque<usize> = VecDeque::new();
    let mut best = BestSpan { span: AnswerSpan::new(0, 0), score: f64::NEG_INFINITY };
    for j in 0..dist.len() {
        let lo = (j + 1).saturating_sub(max_span_len);
        while window.front().is_some_and(|&i| i < lo) {
            window.pop_front();
        }
        while window.back().is_some_and(|&i| dist.start[i] < dist.start[j]) {
            window.pop_back();
        }
        window.push_back(j);
        let mut i = window[0];
        let score = dist.start[i] * dist.end[j];
        if score == 0.0 {
            // every start in the window ties at zero
            i = lo;
        }
        let cand = AnswerSpan::new(i, j);
        if score > best.score || (score == best.score && cand < best.span) {
            best = BestSpan { span: cand, score };
        }
    }
    Ok(best)
}

/// Elementwise mean of the start and end vectors.
pub fn checkpoint_average(dists: &[SpanDistribution]) -> Result<SpanDistribution> {
    let first = dists.first().ok_or_else(|| Error::Input("nothing to average".into()))?;
    let mut out = first.clone();
    for (k, d) in dists.iter().enumerate().skip(1) {
        if d.len() != out.len() || d.end.len() != out.end.len() {
            return Err(Error::Shape(format!("distribution of length {} averaged with length {}", d.len(), out.len())));
        }
        let k = (k + 1) as f64;
        for (m, x) in out.start.iter_mut().zip(&d.start).chain(out.end.iter_mut().zip(&d.end)) {
            *m += (x - *m) / k;
        }
    }
    Ok(out)
}

/// Averages checkpoint copies within each group, then averages the groups
/// with equal weight.
pub fn ensemble_distribution(groups: &[Vec<&McModel>], paragraph: &[usize], question: &[usize]) -> Result<SpanDistribution> {
    if groups.is_empty() || groups.iter().any(|g| g.is_empty()) {
        return Err(Error::Input("ensemble needs at least one model per group".into()));
    }
    let per_group: Vec<Result<SpanDistribution>> = groups
        .par_iter()
        .map(|g| {
            let dists = g.iter().map(|m| m.forward(paragraph, question)).collect::<Result<Vec<_>>>()?;
            checkpoint_average(&dists)
        })
        .collect();
    checkpoint_average(&per_group.into_iter().collect::<Result<Vec<_>>>()?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnswerPrediction {
    pub text: String,
    pub start_token: usize,
    pub end_token: usize,
    pub score: f64,
}

impl AnswerPrediction {
    pub fn from_best<S: AsRef<str>>(best: BestSpan, words: &[S]) -> Self {
        let text = words[best.span.start..=best.span.end].iter().map(|w| w.as_ref()).collect::<Vec<_>>().join(" ");
        AnswerPrediction { text, start_token: best.span.start, end_token: best.span.end, score: best.score }
    }

    pub fn span(&self) -> AnswerSpan {
        AnswerSpan::new(self.start_token, self.end_token)
    }
}

pub fn ensemble_predict<S: AsRef<str>>(
    groups: &[Vec<&McModel>],
    words: &[S],
    paragraph: &[usize],
    question: &[usize],
    max_span_len: usize,
) -> Result<AnswerPrediction> {
    let dist = ensemble_distribution(groups, paragraph, question)?;
    Ok(AnswerPrediction::from_best(dp_best_span(&dist, max_span_len)?, words))
}

/// Question id to prediction, serialized in key order.
pub type Predictions = BTreeMap<String, AnswerPrediction>;
