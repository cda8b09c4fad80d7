//! Question synthesis: an attention encoder-decoder whose output at each step
//! mixes a vocabulary predictor with a copy predictor over paragraph tokens.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Model;
use crate::error::{Error, Result};
use crate::nn::{self, batch_gradients, BiLstm, Linear, Lstm};
use crate::tensor::{Adam, Gradients, ParamId, ParamStore, Tape, Tensor, Var, PROB_FLOOR};
use crate::text::{sentence_ranges, AnswerSpan, EmbeddingMatrix, Vocabulary, END, PAD, UNK};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub vocab_size: usize,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_hidden")]
    pub attention_dim: usize,
    #[serde(default = "default_true")]
    pub trainable_embeddings: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_embed_dim() -> usize {
    300
}
fn default_hidden() -> usize {
    100
}
fn default_true() -> bool {
    true
}

impl GeneratorConfig {
    pub fn new(vocab_size: usize) -> Self {
        GeneratorConfig {
            vocab_size,
            embed_dim: default_embed_dim(),
            hidden: default_hidden(),
            attention_dim: default_hidden(),
            trainable_embeddings: true,
            seed: 0,
        }
    }
}

pub const DEFAULT_MAX_DECODE_LENGTH: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Predictor {
    Vocab,
    Copy,
}

/// Value-level view of one decoder step.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderStep {
    pub r: Tensor,
    pub p_v: f64,
    /// `[1, V]`
    pub l_v: Tensor,
    /// `[1, n]`
    pub l_c: Tensor,
    /// `[1, n]` context attention over encoder states.
    pub attn: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedQuestion {
    pub tokens: Vec<String>,
    pub predictors: Vec<Predictor>,
    pub log_likelihood: f64,
}

/// A paragraph prepared for the generator: token strings for copy matching
/// and their vocabulary ids for embedding lookup.
#[derive(Clone, Debug, PartialEq)]
pub struct GenInput {
    pub words: Vec<String>,
    pub ids: Vec<usize>,
    pub answer: AnswerSpan,
}

impl GenInput {
    pub fn new<S: AsRef<str>>(words: &[S], vocab: &Vocabulary, answer: AnswerSpan) -> Result<Self> {
        answer.validate(words.len())?;
        let words: Vec<String> = words.iter().map(|w| w.as_ref().to_string()).collect();
        Ok(GenInput { ids: vocab.ids(&words), words, answer })
    }

    /// Restricts the paragraph to two sentences before and one after the
    /// sentences holding the answer.
    pub fn windowed<S: AsRef<str>>(words: &[S], vocab: &Vocabulary, answer: AnswerSpan) -> Result<Self> {
        answer.validate(words.len())?;
        let r = context_window(words, answer);
        let shifted = AnswerSpan::new(answer.start - r.start, answer.end - r.start);
        Self::new(&words[r], vocab, shifted)
    }

    pub fn answer_feature(&self) -> Vec<f64> {
        (0..self.words.len()).map(|i| if self.answer.contains(i) { 1.0 } else { 0.0 }).collect()
    }
}

/// Token range covering two sentences before and one sentence after the
/// sentences that contain `answer`.
pub fn context_window<S: AsRef<str>>(words: &[S], answer: AnswerSpan) -> Range<usize> {
    let sents = sentence_ranges(words);
    let find = |i: usize| sents.iter().position(|r| r.contains(&i)).unwrap_or(0);
    let first = find(answer.start).saturating_sub(2);
    let last = (find(answer.end) + 1).min(sents.len().saturating_sub(1));
    match (sents.get(first), sents.get(last)) {
        (Some(a), Some(b)) => a.start..b.end,
        _ => 0..words.len(),
    }
}

/// A training triple with the gold question as token strings.
#[derive(Clone, Debug, PartialEq)]
pub struct GenExample {
    pub input: GenInput,
    pub question: Vec<String>,
    pub question_ids: Vec<usize>,
}

impl GenExample {
    pub fn new<S: AsRef<str>>(input: GenInput, question: &[S], vocab: &Vocabulary) -> Self {
        let question: Vec<String> = question.iter().map(|w| w.as_ref().to_string()).collect();
        GenExample { question_ids: vocab.ids(&question), question, input }
    }
}

#[derive(Clone, Debug)]
pub struct QuestionGenerator {
    config: GeneratorConfig,
    params: ParamStore,
    embed: ParamId,
    encoder: BiLstm,
    init: Linear,
    decoder: Lstm,
    att_h: ParamId,
    att_s: ParamId,
    att_v: ParamId,
    readout: Linear,
    vocab_out: Linear,
    copy_h: ParamId,
    copy_r: ParamId,
    copy_v: ParamId,
    /// Columns are `w_v` and `w_c`.
    choice: ParamId,
}

impl Model for QuestionGenerator {
    const KIND: &'static str = "question-generator";
    type Config = GeneratorConfig;

    fn build(c: &GeneratorConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let mut p = ParamStore::new();
        let h2 = 2 * c.hidden;
        let embed = nn::embedding(&mut p, "embed", c.vocab_size, c.embed_dim, c.trainable_embeddings, &mut rng);
        let encoder = BiLstm::new(&mut p, "encoder", c.embed_dim + 1, c.hidden, &mut rng);
        let init = Linear::new(&mut p, "init", h2, c.hidden, &mut rng);
        let decoder = Lstm::new(&mut p, "decoder", c.embed_dim, c.hidden, &mut rng);
        let att_h = nn::weight(&mut p, "att.h".into(), h2, c.attention_dim, &mut rng);
        let att_s = nn::weight(&mut p, "att.s".into(), c.hidden, c.attention_dim, &mut rng);
        let att_v = nn::weight(&mut p, "att.v".into(), c.attention_dim, 1, &mut rng);
        let readout = Linear::new(&mut p, "readout", c.hidden + h2, c.hidden, &mut rng);
        let vocab_out = Linear::new(&mut p, "vocab", c.hidden, c.vocab_size, &mut rng);
        let copy_h = nn::weight(&mut p, "copy.h".into(), h2, c.attention_dim, &mut rng);
        let copy_r = nn::weight(&mut p, "copy.r".into(), c.hidden, c.attention_dim, &mut rng);
        let copy_v = nn::weight(&mut p, "copy.v".into(), c.attention_dim, 1, &mut rng);
        let choice = nn::weight(&mut p, "choice".into(), c.hidden, 2, &mut rng);
        QuestionGenerator {
            config: c.clone(),
            params: p,
            embed,
            encoder,
            init,
            decoder,
            att_h,
            att_s,
            att_v,
            readout,
            vocab_out,
            copy_h,
            copy_r,
            copy_v,
            choice,
        }
    }

    fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

/// Encoder output plus the step-invariant attention projections.
struct Encoded {
    h: Var,
    h_att: Var,
    h_copy: Var,
}

struct StepVars {
    r: Var,
    choice: Var,
    l_v: Var,
    l_c: Var,
    attn: Var,
}

impl QuestionGenerator {
    pub fn new(config: GeneratorConfig) -> Self {
        Self::build(&config)
    }

    pub fn set_embeddings(&mut self, emb: &EmbeddingMatrix) -> Result<()> {
        nn::load_pretrained(&mut self.params, self.embed, emb)
    }

    fn check(&self, input: &GenInput) -> Result<()> {
        if input.ids.is_empty() {
            return Err(Error::Input("empty paragraph".into()));
        }
        if input.ids.len() != input.words.len() {
            return Err(Error::Shape("paragraph ids and words differ in length".into()));
        }
        input.answer.validate(input.ids.len())?;
        if let Some(bad) = input.ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::Bounds(format!("token id {bad} outside vocabulary of {}", self.config.vocab_size)));
        }
        Ok(())
    }

    fn encode_vars(&self, tape: &mut Tape, input: &GenInput) -> Result<(Encoded, Var, Var)> {
        self.check(input)?;
        let n = input.ids.len();
        let table = tape.param(self.embed);
        let x = tape.gather_rows(table, &input.ids);
        let feat = tape.constant(Tensor::from_parts(vec![n, 1], input.answer_feature()));
        let x = tape.concat_cols(&[x, feat]);
        let h = self.encoder.run(tape, x);
        let w = tape.param(self.att_h);
        let h_att = tape.matmul(h, w);
        let w = tape.param(self.copy_h);
        let h_copy = tape.matmul(h, w);
        let avg = tape.constant(Tensor::full(&[1, n], 1.0 / n as f64));
        let pooled = tape.matmul(avg, h);
        let s0 = self.init.forward(tape, pooled);
        let s0 = tape.tanh(s0);
        let c0 = tape.constant(Tensor::zeros(&[1, self.config.hidden]));
        Ok((Encoded { h, h_att, h_copy }, s0, c0))
    }

    /// Additive attention scores `v . tanh(keys + q W)` normalized over rows.
    fn attend(&self, tape: &mut Tape, keys: Var, q: Var, w_q: ParamId, v: ParamId) -> Result<Var> {
        let w = tape.param(w_q);
        let qp = tape.matmul(q, w);
        let e = tape.add_row(keys, qp);
        let e = tape.tanh(e);
        let v = tape.param(v);
        let scores = tape.matmul(e, v);
        let scores = tape.transpose(scores);
        tape.softmax(scores, 1)
    }

    fn step_vars(&self, tape: &mut Tape, enc: &Encoded, prev: usize, s: Var, c: Var) -> Result<(StepVars, Var, Var)> {
        let table = tape.param(self.embed);
        let x = tape.gather_rows(table, &[prev]);
        let (s, c) = self.decoder.step(tape, x, s, c);
        let attn = self.attend(tape, enc.h_att, s, self.att_s, self.att_v)?;
        let ctx = tape.matmul(attn, enc.h);
        let sc = tape.concat_cols(&[s, ctx]);
        let r = self.readout.forward(tape, sc);
        let logits = self.vocab_out.forward(tape, r);
        let l_v = tape.softmax(logits, 1)?;
        let l_c = self.attend(tape, enc.h_copy, r, self.copy_r, self.copy_v)?;
        let w = tape.param(self.choice);
        let scores = tape.matmul(r, w);
        let choice = tape.softmax(scores, 1)?;
        Ok((StepVars { r, choice, l_v, l_c, attn }, s, c))
    }

    /// Encoder states `[n, 2H]` for a paragraph with its answer feature.
    pub fn encode(&self, input: &GenInput) -> Result<Tensor> {
        let mut tape = Tape::new(&self.params);
        let (enc, _, _) = self.encode_vars(&mut tape, input)?;
        Ok(tape.value(enc.h).clone())
    }

    /// Teacher-forced unroll over `question` followed by END.
    fn unroll(&self, tape: &mut Tape, input: &GenInput, question_ids: &[usize]) -> Result<Vec<StepVars>> {
        if question_ids.is_empty() {
            return Err(Error::Input("empty question".into()));
        }
        if let Some(bad) = question_ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::Bounds(format!("token id {bad} outside vocabulary of {}", self.config.vocab_size)));
        }
        let (enc, mut s, mut c) = self.encode_vars(tape, input)?;
        let mut steps = Vec::with_capacity(question_ids.len() + 1);
        let mut prev = END;
        for &next in question_ids.iter().chain(std::iter::once(&END)) {
            let (sv, s2, c2) = self.step_vars(tape, &enc, prev, s, c)?;
            steps.push(sv);
            (s, c) = (s2, c2);
            prev = next;
        }
        Ok(steps)
    }

    /// Per-step distributions under teacher forcing; one entry per question
    /// token plus one for END.
    pub fn decoder_steps(&self, ex: &GenExample) -> Result<Vec<DecoderStep>> {
        let mut tape = Tape::new(&self.params);
        let steps = self.unroll(&mut tape, &ex.input, &ex.question_ids)?;
        Ok(steps
            .iter()
            .map(|sv| DecoderStep {
                r: tape.value(sv.r).clone(),
                p_v: tape.value(sv.choice).data()[0],
                l_v: tape.value(sv.l_v).clone(),
                l_c: tape.value(sv.l_c).clone(),
                attn: tape.value(sv.attn).clone(),
            })
            .collect())
    }

    /// Summed `-log q*` over the question tokens and END.
    pub fn loss_var(&self, tape: &mut Tape, ex: &GenExample) -> Result<Var> {
        let steps = self.unroll(tape, &ex.input, &ex.question_ids)?;
        let n = ex.input.words.len();
        let mut terms = Vec::with_capacity(steps.len());
        for (j, sv) in steps.iter().enumerate() {
            let (vid, mask) = match ex.question.get(j) {
                Some(w) => (ex.question_ids[j], copy_mask(&ex.input.words, w)),
                None => (END, vec![0.0; n]),
            };
            let pv = tape.pick(sv.choice, 0, 0);
            let pc = tape.pick(sv.choice, 0, 1);
            let lv = tape.pick(sv.l_v, 0, vid);
            let mask = tape.constant(Tensor::from_parts(vec![n, 1], mask));
            let cm = tape.matmul(sv.l_c, mask);
            let a = tape.mul(pv, lv);
            let b = tape.mul(pc, cm);
            let q = tape.add(a, b);
            terms.push(tape.neg_log(q, PROB_FLOOR)?);
        }
        let all = tape.concat_cols(&terms);
        Ok(tape.sum(all))
    }

    pub fn loss(&self, ex: &GenExample) -> Result<f64> {
        let mut tape = Tape::new(&self.params);
        let l = self.loss_var(&mut tape, ex)?;
        Ok(tape.value(l).item())
    }

    pub fn gradients(&self, ex: &GenExample) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new(&self.params);
        let l = self.loss_var(&mut tape, ex)?;
        let g = tape.backward(l)?;
        Ok((tape.value(l).item(), g))
    }

    /// Teacher-forced steps (question tokens plus END) at which the greedy
    /// choice reproduces the gold token, and the number of steps.
    pub fn teacher_forced_accuracy(&self, ex: &GenExample) -> Result<(usize, usize)> {
        let steps = self.decoder_steps(ex)?;
        let mut correct = 0;
        for (j, st) in steps.iter().enumerate() {
            let gold = ex.question.get(j).map(|w| (w.as_str(), ex.question_ids[j]));
            let hit = if st.p_v >= 1.0 - st.p_v {
                let id = argmax_excluding(st.l_v.data(), PAD);
                match gold {
                    None => id == END,
                    Some((_, gid)) => id == gid && gid != UNK,
                }
            } else {
                let pos = argmax_excluding(st.l_c.data(), usize::MAX);
                gold.is_some_and(|(w, _)| ex.input.words[pos] == w)
            };
            correct += hit as usize;
        }
        Ok((correct, steps.len()))
    }

    /// Greedy decoding: the likelier predictor first, then its likeliest
    /// token. PAD is never emitted.
    pub fn greedy_generate(&self, input: &GenInput, vocab: &Vocabulary, max_len: usize) -> Result<GeneratedQuestion> {
        if max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        if vocab.len() != self.config.vocab_size {
            return Err(Error::Shape(format!("vocabulary has {} entries, model expects {}", vocab.len(), self.config.vocab_size)));
        }
        let mut tape = Tape::new(&self.params);
        let (enc, mut s, mut c) = self.encode_vars(&mut tape, input)?;
        let mut out = GeneratedQuestion { tokens: Vec::new(), predictors: Vec::new(), log_likelihood: 0.0 };
        let mut prev = END;
        for _ in 0..max_len {
            let (sv, s2, c2) = self.step_vars(&mut tape, &enc, prev, s, c)?;
            (s, c) = (s2, c2);
            let choice = tape.value(sv.choice).data();
            let (pv, pc) = (choice[0], choice[1]);
            let l_v = tape.value(sv.l_v).data();
            let l_c = tape.value(sv.l_c).data();
            let (pred, word, id) = if pv >= pc {
                let id = argmax_excluding(l_v, PAD);
                (Predictor::Vocab, vocab.token(id).to_string(), id)
            } else {
                let j = argmax_excluding(l_c, usize::MAX);
                (Predictor::Copy, input.words[j].clone(), input.ids[j])
            };
            let q = if pred == Predictor::Vocab && id == END {
                pv * l_v[END]
            } else {
                pv * l_v[id] + pc * copy_mass(l_c, &input.words, &word)
            };
            out.log_likelihood += q.max(PROB_FLOOR).ln();
            if pred == Predictor::Vocab && id == END {
                break;
            }
            out.tokens.push(word);
            out.predictors.push(pred);
            prev = id;
        }
        Ok(out)
    }
}

fn argmax_excluding(xs: &[f64], skip: usize) -> usize {
    let mut best = usize::MAX;
    for (i, &x) in xs.iter().enumerate() {
        if i != skip && (best == usize::MAX || x > xs[best]) {
            best = i;
        }
    }
    best
}

fn copy_mask(words: &[String], target: &str) -> Vec<f64> {
    words.iter().map(|w| if w == target { 1.0 } else { 0.0 }).collect()
}

/// Sum of copy probability over every paragraph position holding `target`.
pub fn copy_mass(l_c: &[f64], words: &[String], target: &str) -> f64 {
    l_c.iter().zip(words).filter(|(_, w)| *w == target).map(|(p, _)| p).sum()
}

/// `q* = p_v l_v(w) + (1 - p_v) * copy mass of w`. `vocab_id` is the id
/// looked up for `target` (UNK when out of vocabulary); `None` marks END,
/// which only the vocabulary predictor can produce.
pub fn token_mixture_likelihood(step: &DecoderStep, vocab_id: usize, target: Option<&str>, words: &[String]) -> f64 {
    let lv = step.l_v.data()[vocab_id];
    let cm = target.map_or(0.0, |t| copy_mass(step.l_c.data(), words, t));
    step.p_v * lv + (1.0 - step.p_v) * cm
}

/// One Adam update on the batch-mean sequence loss; returns that loss.
pub fn generator_train_step(model: &mut QuestionGenerator, opt: &mut Adam, batch: &[GenExample]) -> Result<f64> {
    let (loss, grads) = batch_gradients(&model.params, batch, |ex| model.gradients(ex))?;
    opt.step(&mut model.params, &grads)?;
    Ok(loss)
}

/// One line of the synthetic pair dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRecord {
    pub paragraph_id: String,
    pub answer_start: usize,
    pub answer_end: usize,
    pub question_tokens: Vec<String>,
    pub log_likelihood: f64,
    pub predictor_trace: Vec<Predictor>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, AdamConfig};

    fn vocab() -> Vocabulary {
        Vocabulary::build("who won the game in paris on monday what did team score ?".split(' '), 100)
    }

    fn small(vocab_size: usize, seed: u64) -> QuestionGenerator {
        QuestionGenerator::new(GeneratorConfig { vocab_size, embed_dim: 5, hidden: 4, attention_dim: 3, trainable_embeddings: true, seed })
    }

    fn words(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    #[test]
    fn answer_feature_marks_span() {
        let v = vocab();
        let w = words("a b c d e");
        assert_eq!(GenInput::new(&w, &v, AnswerSpan::new(1, 2)).unwrap().answer_feature(), vec![0., 1., 1., 0., 0.]);
        assert_eq!(GenInput::new(&w, &v, AnswerSpan::new(0, 4)).unwrap().answer_feature(), vec![1.; 5]);
        assert!(matches!(GenInput::new(&w, &v, AnswerSpan::new(3, 5)), Err(Error::Bounds(_))));
    }

    #[test]
    fn encoder_sees_the_answer_feature() {
        let v = vocab();
        let mut m = small(v.len(), 1);
        m.params.randomize(0.5, &mut ChaCha8Rng::seed_from_u64(2));
        let w = words("the team won the game");
        let a = m.encode(&GenInput::new(&w, &v, AnswerSpan::new(1, 2)).unwrap()).unwrap();
        let b = m.encode(&GenInput::new(&w, &v, AnswerSpan::new(1, 1)).unwrap()).unwrap();
        assert_eq!(a.shape(), &[5, 8]);
        assert_ne!(a, b);
    }

    #[test]
    fn mixture_examples() {
        let words = words("x w y");
        let step = DecoderStep {
            r: Tensor::zeros(&[1, 1]),
            p_v: 0.6,
            l_v: Tensor::row(vec![0.2, 0.5, 0.3]),
            l_c: Tensor::row(vec![0.5, 0.2, 0.3]),
            attn: Tensor::zeros(&[1, 3]),
        };
        assert!((token_mixture_likelihood(&step, 1, Some("w"), &words) - 0.38).abs() < 1e-15);
        assert!((token_mixture_likelihood(&step, 1, Some("zz"), &words) - 0.3).abs() < 1e-15);
        assert!((token_mixture_likelihood(&step, 1, None, &words) - 0.3).abs() < 1e-15);
        let same = vec!["w".to_string(); 3];
        assert!((token_mixture_likelihood(&step, 1, Some("w"), &same) - (0.3 + 0.4)).abs() < 1e-15);
    }

    #[test]
    fn copy_mass_aggregates_repeated_tokens() {
        let w = words("a b a c a");
        let l_c = [0.1, 0.2, 0.3, 0.15, 0.25];
        let mut by_position = 0.0;
        for (i, t) in w.iter().enumerate() {
            if t == "a" {
                by_position += l_c[i];
            }
        }
        assert!((copy_mass(&l_c, &w, "a") - by_position).abs() < 1e-15);
    }

    #[test]
    fn steps_are_distributions() {
        let v = vocab();
        let m = small(v.len(), 3);
        let ex = GenExample::new(GenInput::new(&words("the team won the game"), &v, AnswerSpan::new(1, 1)).unwrap(), &words("who won ?"), &v);
        let steps = m.decoder_steps(&ex).unwrap();
        assert_eq!(steps.len(), 4);
        for s in &steps {
            assert!((s.l_v.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((s.l_c.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((s.attn.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&s.p_v));
        }
        let q: f64 = steps
            .iter()
            .enumerate()
            .map(|(j, s)| match ex.question.get(j) {
                Some(w) => token_mixture_likelihood(s, ex.question_ids[j], Some(w), &ex.input.words),
                None => token_mixture_likelihood(s, END, None, &ex.input.words),
            })
            .map(|q| -q.ln())
            .sum();
        assert!((m.loss(&ex).unwrap() - q).abs() < 1e-10);
    }

    #[test]
    fn errors_and_oov_questions() {
        let v = vocab();
        let m = small(v.len(), 3);
        let input = GenInput::new(&words("the team won"), &v, AnswerSpan::new(1, 1)).unwrap();
        let empty: [&str; 0] = [];
        assert!(matches!(m.loss(&GenExample::new(input.clone(), &empty, &v)), Err(Error::Input(_))));
        let oov = GenExample::new(input, &words("zebra quark"), &v);
        assert!(m.loss(&oov).unwrap().is_finite());
    }

    #[test]
    fn gradient_check_full_graph() {
        let v = vocab();
        let mut m = small(v.len(), 4);
        m.params.randomize(0.5, &mut ChaCha8Rng::seed_from_u64(6));
        let ex = GenExample::new(GenInput::new(&words("the team won paris"), &v, AnswerSpan::new(3, 3)).unwrap(), &words("who won paris"), &v);
        let report = grad_check(&m.params, |t| m.loss_var(t, &ex)).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn context_window_keeps_two_before_one_after() {
        let w = words("a . b . c . d x . e . f .");
        assert_eq!(context_window(&w, AnswerSpan::new(7, 7)), 2..11);
        assert_eq!(context_window(&w, AnswerSpan::new(0, 0)), 0..4);
        let v = vocab();
        let g = GenInput::windowed(&w, &v, AnswerSpan::new(7, 7)).unwrap();
        assert_eq!(g.words[g.answer.start], "x");
    }

    #[test]
    fn overfits_and_decodes_deterministically() {
        let v = vocab();
        let mut m = QuestionGenerator::new(GeneratorConfig { vocab_size: v.len(), embed_dim: 16, hidden: 16, attention_dim: 16, trainable_embeddings: true, seed: 5 });
        let mut opt = Adam::new(&m.params, AdamConfig::with_lr(1e-2));
        let input = GenInput::new(&words("the team won the game in paris on monday"), &v, AnswerSpan::new(6, 6)).unwrap();
        let ex = GenExample::new(input.clone(), &words("what did the team score in ?"), &v);
        for _ in 0..200 {
            generator_train_step(&mut m, &mut opt, std::slice::from_ref(&ex)).unwrap();
        }
        let per_token = m.loss(&ex).unwrap() / (ex.question.len() + 1) as f64;
        assert!(per_token < 0.05, "{per_token}");
        let g = m.greedy_generate(&input, &v, 30).unwrap();
        assert_eq!(g.tokens, ex.question);
        assert_eq!(m.greedy_generate(&input, &v, 30).unwrap(), g);
        let one = m.greedy_generate(&input, &v, 1).unwrap();
        assert!(one.tokens.len() <= 1 && !one.tokens.iter().any(|t| t == "<end>"));
    }
}
