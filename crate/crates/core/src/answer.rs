//! Answer synthesis: a Bi-LSTM IOB tagger over paragraph tokens, candidate
//! span extraction, and capped uniform sampling of candidates.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Model;
use crate::error::{Error, Result};
use crate::nn::{self, batch_gradients, BiLstm, Linear};
use crate::tensor::{Adam, Gradients, ParamId, ParamStore, Tape, Tensor, Var, PROB_FLOOR};
pub use crate::text::extract_candidate_spans;
use crate::text::{AnswerSpan, EmbeddingMatrix, IobLabels, IobTag};

const NUM_TAGS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaggerConfig {
    pub vocab_size: usize,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_hidden")]
    pub fc_dim: usize,
    #[serde(default = "default_true")]
    pub trainable_embeddings: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_embed_dim() -> usize {
    300
}
fn default_hidden() -> usize {
    150
}
fn default_true() -> bool {
    true
}

impl TaggerConfig {
    pub fn new(vocab_size: usize) -> Self {
        TaggerConfig {
            vocab_size,
            embed_dim: default_embed_dim(),
            hidden: default_hidden(),
            fc_dim: default_hidden(),
            trainable_embeddings: true,
            seed: 0,
        }
    }
}

/// Embeddings, a Bi-LSTM, then two fully connected layers (tanh, then a
/// 4-way projection) and a per-token softmax over `START/MID/END/NONE`.
#[derive(Clone, Debug)]
pub struct AnswerTagger {
    config: TaggerConfig,
    params: ParamStore,
    embed: ParamId,
    encoder: BiLstm,
    fc: Linear,
    out: Linear,
}

impl Model for AnswerTagger {
    const KIND: &'static str = "answer-tagger";
    type Config = TaggerConfig;

    fn build(config: &TaggerConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let embed = nn::embedding(&mut params, "embed", config.vocab_size, config.embed_dim, config.trainable_embeddings, &mut rng);
        let encoder = BiLstm::new(&mut params, "encoder", config.embed_dim, config.hidden, &mut rng);
        let fc = Linear::new(&mut params, "fc", 2 * config.hidden, config.fc_dim, &mut rng);
        let out = Linear::new(&mut params, "out", config.fc_dim, NUM_TAGS, &mut rng);
        AnswerTagger { config: config.clone(), params, embed, encoder, fc, out }
    }

    fn config(&self) -> &TaggerConfig {
        &self.config
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

impl AnswerTagger {
    pub fn new(config: TaggerConfig) -> Self {
        Self::build(&config)
    }

    pub fn set_embeddings(&mut self, emb: &EmbeddingMatrix) -> Result<()> {
        nn::load_pretrained(&mut self.params, self.embed, emb)
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Input("empty paragraph".into()));
        }
        if let Some(bad) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::Bounds(format!("token id {bad} outside vocabulary of {}", self.config.vocab_size)));
        }
        Ok(())
    }

    /// Per-token tag distributions, `[n, 4]`, recorded on `tape`.
    pub fn probs_var(&self, tape: &mut Tape, ids: &[usize]) -> Result<Var> {
        self.check_ids(ids)?;
        let table = tape.param(self.embed);
        let x = tape.gather_rows(table, ids);
        let h = self.encoder.run(tape, x);
        let f = self.fc.forward(tape, h);
        let f = tape.tanh(f);
        let logits = self.out.forward(tape, f);
        tape.softmax(logits, 1)
    }

    pub fn tag_forward(&self, ids: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new(&self.params);
        let p = self.probs_var(&mut tape, ids)?;
        Ok(tape.value(p).clone())
    }

    pub fn predict_tags(&self, ids: &[usize]) -> Result<Vec<IobTag>> {
        Ok(argmax_tags(&self.tag_forward(ids)?))
    }

    /// Mean per-token cross-entropy of the gold tags.
    pub fn loss_var(&self, tape: &mut Tape, ids: &[usize], labels: &IobLabels) -> Result<Var> {
        if labels.len() != ids.len() {
            return Err(Error::Shape(format!("{} labels for {} tokens", labels.len(), ids.len())));
        }
        let probs = self.probs_var(tape, ids)?;
        let mut mask = Tensor::zeros(&[ids.len(), NUM_TAGS]);
        for (i, t) in labels.tags().iter().enumerate() {
            mask.data_mut()[i * NUM_TAGS + t.index()] = 1.0;
        }
        let gold = tape.mul_const(probs, mask);
        let ones = tape.constant(Tensor::full(&[NUM_TAGS, 1], 1.0));
        let gold = tape.matmul(gold, ones);
        let nll = tape.neg_log(gold, PROB_FLOOR)?;
        Ok(tape.mean(nll))
    }

    pub fn loss(&self, ids: &[usize], labels: &IobLabels) -> Result<f64> {
        let mut tape = Tape::new(&self.params);
        let l = self.loss_var(&mut tape, ids, labels)?;
        Ok(tape.value(l).item())
    }

    pub fn gradients(&self, ids: &[usize], labels: &IobLabels) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new(&self.params);
        let l = self.loss_var(&mut tape, ids, labels)?;
        let g = tape.backward(l)?;
        Ok((tape.value(l).item(), g))
    }
}

pub fn argmax_tags(probs: &Tensor) -> Vec<IobTag> {
    (0..probs.rows())
        .map(|i| {
            let row = probs.row_slice(i);
            let best = (0..NUM_TAGS).fold(0, |b, k| if row[k] > row[b] { k } else { b });
            IobTag::from_index(best)
        })
        .collect()
}

/// A tagged paragraph example: token ids and gold labels.
#[derive(Clone, Debug, PartialEq)]
pub struct TaggedParagraph {
    pub ids: Vec<usize>,
    pub labels: IobLabels,
}

/// One Adam update on the batch-mean tagging loss; returns that loss.
pub fn tagger_train_step(model: &mut AnswerTagger, opt: &mut Adam, batch: &[TaggedParagraph]) -> Result<f64> {
    let (loss, grads) = batch_gradients(&model.params, batch, |ex| model.gradients(&ex.ids, &ex.labels))?;
    opt.step(&mut model.params, &grads)?;
    Ok(loss)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateAnswer {
    pub span: AnswerSpan,
    /// Mean probability the tagger gave its chosen tag on each span token.
    pub score: f64,
}

/// Candidate spans from tag probabilities, with reporting scores.
pub fn candidates_from_probs(probs: &Tensor) -> Vec<CandidateAnswer> {
    let tags = argmax_tags(probs);
    extract_candidate_spans(&tags)
        .into_iter()
        .map(|span| {
            let total: f64 = (span.start..=span.end).map(|i| probs.at(i, tags[i].index())).sum();
            CandidateAnswer { span, score: total / span.len() as f64 }
        })
        .collect()
}

/// Uniformly samples `min(cap, items.len())` items without replacement,
/// returned in their original order.
pub fn sample_candidates<T: Clone>(items: &[T], cap: usize, seed: u64) -> Vec<T> {
    assert!(cap >= 1, "candidate cap must be positive");
    if items.len() <= cap {
        return items.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, items.len(), cap).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| items[i].clone()).collect()
}

/// One line of the candidate dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub paragraph_id: String,
    pub start_token: usize,
    pub end_token: usize,
    pub score: f64,
    pub text: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, AdamConfig};
    use crate::text::derive_iob_labels;
    use std::collections::HashSet;

    fn small(vocab: usize, seed: u64) -> AnswerTagger {
        AnswerTagger::new(TaggerConfig { vocab_size: vocab, embed_dim: 6, hidden: 5, fc_dim: 6, trainable_embeddings: true, seed })
    }

    #[test]
    fn rows_are_distributions_and_near_uniform_at_init() {
        let m = small(20, 1);
        let p = m.tag_forward(&[3, 4, 5, 6, 7]).unwrap();
        assert_eq!(p.shape(), &[5, 4]);
        for i in 0..5 {
            let row = p.row_slice(i);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|v| (v - 0.25).abs() < 0.1), "{row:?}");
        }
    }

    #[test]
    fn input_errors() {
        let m = small(20, 1);
        assert!(matches!(m.tag_forward(&[]), Err(Error::Input(_))));
        assert!(matches!(m.tag_forward(&[25]), Err(Error::Bounds(_))));
        let labels = derive_iob_labels(2, &[]).unwrap();
        assert!(matches!(m.loss(&[3, 4, 5], &labels), Err(Error::Shape(_))));
    }

    #[test]
    fn uniform_model_loss_is_ln4() {
        let mut m = small(10, 0);
        let ids: Vec<ParamId> = m.params.iter().map(|(id, _)| id).collect();
        for id in ids {
            m.params.get_mut(id).value.data_mut().fill(0.0);
        }
        let labels = derive_iob_labels(3, &[AnswerSpan::new(0, 1)]).unwrap();
        assert!((m.loss(&[3, 4, 5], &labels).unwrap() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_check_three_tokens() {
        let mut m = small(8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        m.params.randomize(0.5, &mut rng);
        let labels = derive_iob_labels(3, &[AnswerSpan::new(1, 2)]).unwrap();
        let report = grad_check(&m.params, |t| m.loss_var(t, &[3, 7, 4], &labels)).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn overfits_one_paragraph() {
        let mut m = small(12, 3);
        let mut opt = Adam::new(&m.params, AdamConfig::with_lr(1e-2));
        let ids = vec![3, 4, 5, 6, 7, 8, 9, 10];
        let labels = derive_iob_labels(8, &[AnswerSpan::new(1, 3), AnswerSpan::new(6, 6)]).unwrap();
        let ex = [TaggedParagraph { ids: ids.clone(), labels: labels.clone() }];
        let mut losses = Vec::new();
        for _ in 0..300 {
            losses.push(tagger_train_step(&mut m, &mut opt, &ex).unwrap());
        }
        assert_eq!(m.predict_tags(&ids).unwrap(), labels.0);
        let rises = losses[..20].windows(2).filter(|w| w[1] > w[0]).count();
        assert!(rises <= 2, "{:?}", &losses[..20]);
    }

    #[test]
    fn candidate_sampling() {
        let five: Vec<usize> = (0..5).collect();
        assert_eq!(sample_candidates(&five, 30, 1), five);
        let hundred: Vec<usize> = (0..100).collect();
        let got = sample_candidates(&hundred, 30, 9);
        assert_eq!(got.len(), 30);
        assert_eq!(got.iter().collect::<HashSet<_>>().len(), 30);
        assert_eq!(sample_candidates(&hundred, 30, 9), got);
        assert_ne!(sample_candidates(&hundred, 30, 10), got);
    }

    #[test]
    fn candidate_scores() {
        let probs = Tensor::matrix(3, 4, vec![
            0.1, 0.1, 0.1, 0.7, //
            0.6, 0.2, 0.1, 0.1, //
            0.1, 0.1, 0.4, 0.4, // tie resolves to END (lower index)
        ])
        .unwrap();
        let c = candidates_from_probs(&probs);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].span, AnswerSpan::new(1, 2));
        assert!((c[0].score - 0.5).abs() < 1e-12);
    }
}
