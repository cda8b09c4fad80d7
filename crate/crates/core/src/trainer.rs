//! The transfer pipeline: train the answer tagger and question generator on
//! source data, synthesize question/answer pairs on target paragraphs, then
//! fine-tune a source-trained MC model on source batches interleaved with
//! synthetic ones.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::answer::{sample_candidates, tagger_train_step, AnswerTagger, TaggedParagraph};
use crate::checkpoint::{save_checkpoint, Checkpoint, Model};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::mc::{dp_best_span, ensemble_distribution, mc_train_step, AnswerPrediction, McExample, McModel, Predictions};
use crate::question::{generator_train_step, GenExample, GenInput, Predictor, QuestionGenerator, SyntheticRecord};
use crate::tensor::{Adam, AdamConfig};
use crate::text::{derive_iob_labels, extract_candidate_spans, merge_spans, AnswerSpan, Dataset, Paragraph, Vocabulary, END_TOKEN};
use crate::util::{hash64, sha256_hex};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F64,
    F32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateSource {
    /// Spans predicted by the answer tagger.
    Tagger,
    /// Spans from an external annotation file.
    Annotations,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Source batches per synthetic batch during fine-tuning.
    pub k: usize,
    pub checkpoint_interval: usize,
    /// Adam rate for the tagger and generator.
    pub learning_rate: f64,
    /// Adam rate for MC pretraining and fine-tuning.
    pub mc_learning_rate: f64,
    pub max_grad_norm: Option<f64>,
    pub batch_size: usize,
    pub candidate_cap: usize,
    pub max_decode_length: usize,
    pub max_span_len: usize,
    pub seed: u64,
    pub precision: Precision,
    pub synnet_epochs: usize,
    pub mc_epochs: usize,
    /// Epochs without validation improvement before stopping; `None` never stops early.
    pub patience: Option<usize>,
    pub finetune_steps: usize,
    pub context_window: bool,
    pub candidate_source: CandidateSource,
    /// How many of the most recent checkpoints to average at prediction time.
    pub cpavg_n: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 4,
            checkpoint_interval: 1000,
            learning_rate: 1e-2,
            mc_learning_rate: 1e-2,
            max_grad_norm: None,
            batch_size: 32,
            candidate_cap: 30,
            max_decode_length: crate::question::DEFAULT_MAX_DECODE_LENGTH,
            max_span_len: crate::mc::DEFAULT_MAX_SPAN_LEN,
            seed: 0,
            precision: Precision::F64,
            synnet_epochs: 10,
            mc_epochs: 10,
            patience: None,
            finetune_steps: 2000,
            context_window: false,
            candidate_source: CandidateSource::Tagger,
            cpavg_n: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("checkpoint_interval", self.checkpoint_interval),
            ("batch_size", self.batch_size),
            ("candidate_cap", self.candidate_cap),
            ("max_decode_length", self.max_decode_length),
            ("max_span_len", self.max_span_len),
            ("cpavg_n", self.cpavg_n),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        for (name, lr) in [("learning_rate", self.learning_rate), ("mc_learning_rate", self.mc_learning_rate)] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.precision != Precision::F64 {
            return Err(Error::Config("only 64-bit precision is implemented".into()));
        }
        Ok(())
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig { max_grad_norm: self.max_grad_norm, ..AdamConfig::with_lr(lr) }
    }
}

pub fn tagger_examples(
    ds: &Dataset,
    vocab: &Vocabulary,
    annotations: Option<&HashMap<String, Vec<AnswerSpan>>>,
) -> Result<Vec<TaggedParagraph>> {
    let gold = ds.spans_by_paragraph();
    let mut out = Vec::new();
    for p in &ds.paragraphs {
        let mut spans = gold.get(&p.id).cloned().unwrap_or_default();
        if let Some(extra) = annotations.and_then(|a| a.get(&p.id)) {
            spans.extend_from_slice(extra);
        }
        if spans.is_empty() {
            continue;
        }
        let labels = derive_iob_labels(p.len(), &merge_spans(&spans))?;
        out.push(TaggedParagraph { ids: vocab.ids(&p.words()), labels });
    }
    Ok(out)
}

pub fn generator_examples(ds: &Dataset, vocab: &Vocabulary, context_window: bool) -> Result<Vec<GenExample>> {
    ds.examples
        .iter()
        .map(|ex| {
            let words = ex.paragraph.words();
            let input = if context_window {
                GenInput::windowed(&words, vocab, ex.answer)?
            } else {
                GenInput::new(&words, vocab, ex.answer)?
            };
            Ok(GenExample::new(input, &ex.question, vocab))
        })
        .collect()
}

pub fn mc_examples(ds: &Dataset, vocab: &Vocabulary) -> Vec<McExample> {
    ds.examples
        .iter()
        .map(|ex| McExample { paragraph: vocab.ids(&ex.paragraph.words()), question: vocab.ids(&ex.question), span: ex.answer })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitLog {
    pub initial_loss: f64,
    pub epochs: Vec<EpochLog>,
    pub stopped_early: bool,
}

fn mean_loss<M: Sync, T: Sync>(model: &M, items: &[T], loss: &(impl Fn(&M, &T) -> Result<f64> + Sync)) -> Result<f64> {
    let losses: Vec<Result<f64>> = items.par_iter().map(|x| loss(model, x)).collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / items.len().max(1) as f64)
}

/// Shuffled mini-batch epochs with optional early stopping on `val`. When
/// stopping early, the best-validation parameters are restored.
#[allow(clippy::too_many_arguments)]
fn fit<M, T>(
    what: &str,
    model: &mut M,
    items: &[T],
    val: &[T],
    epochs: usize,
    batch_size: usize,
    patience: Option<usize>,
    seed: u64,
    opt: &mut Adam,
    step: impl Fn(&mut M, &mut Adam, &[T]) -> Result<f64>,
    loss: impl Fn(&M, &T) -> Result<f64> + Sync,
) -> Result<FitLog>
where
    M: Model + Sync,
    T: Sync + Clone,
{
    if items.is_empty() {
        return Err(Error::Input(format!("no {what} training examples")));
    }
    let mut log = FitLog { initial_loss: mean_loss(model, items, &loss)?, epochs: Vec::new(), stopped_early: false };
    info!("{what}: initial loss {:.4}", log.initial_loss);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut best: Option<(f64, crate::tensor::ParamStore)> = None;
    let mut since_best = 0;
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<T> = chunk.iter().map(|&i| items[i].clone()).collect();
            total += step(model, opt, &batch)?;
            batches += 1;
        }
        let train_loss = total / batches as f64;
        let val_loss = if val.is_empty() { None } else { Some(mean_loss(model, val, &loss)?) };
        info!("{what}: epoch {} train {:.4} val {:?}", epoch + 1, train_loss, val_loss);
        log.epochs.push(EpochLog { epoch: epoch + 1, train_loss, val_loss });
        if let (Some(v), Some(p)) = (val_loss, patience) {
            if best.as_ref().map_or(true, |(b, _)| v < *b) {
                best = Some((v, model.params().clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best > p {
                    log.stopped_early = true;
                    break;
                }
            }
        }
    }
    if let (true, Some((_, params))) = (log.stopped_early, best) {
        model.params_mut().load_from(&params)?;
    }
    Ok(log)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynNetLog {
    pub tagger: FitLog,
    pub generator: FitLog,
}

pub struct SynNet {
    pub tagger: AnswerTagger,
    pub generator: QuestionGenerator,
    pub log: SynNetLog,
}

/// Trains both synthesis modules on labeled source data. External answer
/// annotations, when given, are merged into the tagger labels.
pub fn train_synnet(
    source: &Dataset,
    validation: Option<&Dataset>,
    vocab: &Vocabulary,
    tagger: AnswerTagger,
    generator: QuestionGenerator,
    cfg: &TrainConfig,
    annotations: Option<&HashMap<String, Vec<AnswerSpan>>>,
) -> Result<SynNet> {
    cfg.validate()?;
    if source.examples.is_empty() {
        return Err(Error::Input("source dataset has no usable examples".into()));
    }
    let (mut tagger, mut generator) = (tagger, generator);
    let tag_train = tagger_examples(source, vocab, annotations)?;
    let gen_train = generator_examples(source, vocab, cfg.context_window)?;
    let (tag_val, gen_val) = match validation {
        Some(v) => (tagger_examples(v, vocab, None)?, generator_examples(v, vocab, cfg.context_window)?),
        None => (Vec::new(), Vec::new()),
    };
    let mut opt = Adam::new(tagger.params(), cfg.adam(cfg.learning_rate));
    let tlog = fit(
        "tagger",
        &mut tagger,
        &tag_train,
        &tag_val,
        cfg.synnet_epochs,
        cfg.batch_size,
        cfg.patience,
        cfg.seed,
        &mut opt,
        tagger_train_step,
        |m, ex| m.loss(&ex.ids, &ex.labels),
    )?;
    let mut opt = Adam::new(generator.params(), cfg.adam(cfg.learning_rate));
    let glog = fit(
        "generator",
        &mut generator,
        &gen_train,
        &gen_val,
        cfg.synnet_epochs,
        cfg.batch_size,
        cfg.patience,
        cfg.seed.wrapping_add(1),
        &mut opt,
        generator_train_step,
        |m, ex| m.loss(ex),
    )?;
    Ok(SynNet { tagger, generator, log: SynNetLog { tagger: tlog, generator: glog } })
}

/// Trains an MC model on labeled examples (used for source pretraining).
pub fn train_mc(model: &mut McModel, train: &[McExample], val: &[McExample], cfg: &TrainConfig) -> Result<FitLog> {
    cfg.validate()?;
    let mut opt = Adam::new(model.params(), cfg.adam(cfg.mc_learning_rate));
    fit(
        "mc",
        model,
        train,
        val,
        cfg.mc_epochs,
        cfg.batch_size,
        cfg.patience,
        cfg.seed.wrapping_add(2),
        &mut opt,
        mc_train_step,
        |m, ex| m.loss(ex),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTriple {
    pub paragraph_id: String,
    pub answer: AnswerSpan,
    pub question: Vec<String>,
    pub log_likelihood: f64,
    pub predictors: Vec<Predictor>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub paragraphs: usize,
    pub paragraphs_without_candidates: usize,
    pub candidates: usize,
    pub sampled: usize,
    pub triples: usize,
    pub dropped_empty: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the serialized tagger and generator checkpoints.
    pub tagger_digest: String,
    pub generator_digest: String,
    pub config_hash: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub triples: Vec<SyntheticTriple>,
    pub provenance: Provenance,
    pub summary: GenerationSummary,
}

impl SyntheticDataset {
    pub fn records(&self) -> Vec<SyntheticRecord> {
        self.triples
            .iter()
            .map(|t| SyntheticRecord {
                paragraph_id: t.paragraph_id.clone(),
                answer_start: t.answer.start,
                answer_end: t.answer.end,
                question_tokens: t.question.clone(),
                log_likelihood: t.log_likelihood,
                predictor_trace: t.predictors.clone(),
            })
            .collect()
    }
}

fn paragraph_seed(seed: u64, id: &str) -> u64 {
    seed ^ hash64(id.as_bytes())
}

struct ParagraphOutput {
    triples: Vec<SyntheticTriple>,
    candidates: usize,
    sampled: usize,
    dropped: usize,
}

fn synthesize_paragraph(
    tagger: &AnswerTagger,
    generator: &QuestionGenerator,
    vocab: &Vocabulary,
    p: &Paragraph,
    cfg: &TrainConfig,
    annotations: Option<&HashMap<String, Vec<AnswerSpan>>>,
) -> Result<ParagraphOutput> {
    let words = p.words();
    let spans = match cfg.candidate_source {
        CandidateSource::Tagger => extract_candidate_spans(&tagger.predict_tags(&vocab.ids(&words))?),
        CandidateSource::Annotations => {
            let spans = annotations.and_then(|a| a.get(&p.id)).cloned().unwrap_or_default();
            for s in &spans {
                s.validate(words.len())?;
            }
            merge_spans(&spans)
        }
    };
    let sampled = sample_candidates(&spans, cfg.candidate_cap, paragraph_seed(cfg.seed, &p.id));
    let mut out = ParagraphOutput { triples: Vec::new(), candidates: spans.len(), sampled: sampled.len(), dropped: 0 };
    for span in sampled {
        let input = if cfg.context_window {
            GenInput::windowed(&words, vocab, span)?
        } else {
            GenInput::new(&words, vocab, span)?
        };
        let q = generator.greedy_generate(&input, vocab, cfg.max_decode_length)?;
        if q.tokens.is_empty() || q.tokens.iter().any(|t| t == END_TOKEN) {
            out.dropped += 1;
            continue;
        }
        out.triples.push(SyntheticTriple {
            paragraph_id: p.id.clone(),
            answer: span,
            question: q.tokens,
            log_likelihood: q.log_likelihood,
            predictors: q.predictors,
        });
    }
    Ok(out)
}

/// Runs every target paragraph through candidate extraction, capped
/// sampling and greedy question generation. Paragraphs are processed in
/// parallel; results keep input order.
pub fn generate_synthetic(
    tagger: &AnswerTagger,
    generator: &QuestionGenerator,
    vocab: &Vocabulary,
    paragraphs: &[Arc<Paragraph>],
    cfg: &TrainConfig,
    annotations: Option<&HashMap<String, Vec<AnswerSpan>>>,
) -> Result<SyntheticDataset> {
    cfg.validate()?;
    if paragraphs.is_empty() {
        return Err(Error::Input("no paragraphs".into()));
    }
    if cfg.candidate_source == CandidateSource::Annotations && annotations.is_none() {
        return Err(Error::Config("candidate_source is annotations but no annotation file was given".into()));
    }
    let parts: Vec<Result<ParagraphOutput>> =
        paragraphs.par_iter().map(|p| synthesize_paragraph(tagger, generator, vocab, p, cfg, annotations)).collect();
    let mut summary = GenerationSummary { paragraphs: paragraphs.len(), ..Default::default() };
    let mut triples = Vec::new();
    for part in parts {
        let part = part?;
        summary.candidates += part.candidates;
        summary.sampled += part.sampled;
        summary.dropped_empty += part.dropped;
        summary.paragraphs_without_candidates += (part.candidates == 0) as usize;
        triples.extend(part.triples);
    }
    summary.triples = triples.len();
    info!("synthesized {} triples from {} paragraphs", summary.triples, summary.paragraphs);
    let provenance = Provenance {
        tagger_digest: sha256_hex(&Checkpoint::of(tagger, 0).to_bytes()),
        generator_digest: sha256_hex(&Checkpoint::of(generator, 0).to_bytes()),
        config_hash: hash64(serde_json::to_string(cfg).expect("config serializes").as_bytes()),
        seed: cfg.seed,
    };
    Ok(SyntheticDataset { triples, provenance, summary })
}

/// Resolves synthetic records against their paragraphs.
pub fn synthetic_mc_examples(
    records: &[SyntheticRecord],
    paragraphs: &[Arc<Paragraph>],
    vocab: &Vocabulary,
) -> Result<Vec<McExample>> {
    let by_id: HashMap<&str, &Arc<Paragraph>> = paragraphs.iter().map(|p| (p.id.as_str(), p)).collect();
    records
        .iter()
        .map(|r| {
            let p = by_id
                .get(r.paragraph_id.as_str())
                .ok_or_else(|| Error::Input(format!("synthetic pair refers to unknown paragraph {}", r.paragraph_id)))?;
            let span = AnswerSpan::new(r.answer_start, r.answer_end);
            span.validate(p.len())?;
            if r.question_tokens.is_empty() {
                return Err(Error::Input(format!("empty synthetic question for paragraph {}", r.paragraph_id)));
            }
            Ok(McExample { paragraph: vocab.ids(&p.words()), question: vocab.ids(&r.question_tokens), span })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BatchSource {
    Source,
    Synthetic,
}

/// `k` SOURCE tags then one SYNTHETIC tag, repeated to length `n`.
pub fn build_mixed_schedule(n: usize, k: usize) -> Vec<BatchSource> {
    (0..n).map(|i| if i % (k + 1) == k { BatchSource::Synthetic } else { BatchSource::Source }).collect()
}

/// Draws mini-batches by walking a shuffled order, reshuffling at each
/// epoch boundary.
struct Pool<'a> {
    items: &'a [McExample],
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl<'a> Pool<'a> {
    fn new(items: &'a [McExample], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut rng);
        Pool { items, order, pos: 0, rng }
    }

    fn next_batch(&mut self, size: usize) -> Vec<McExample> {
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + size).min(self.order.len());
        let batch = self.order[self.pos..end].iter().map(|&i| self.items[i].clone()).collect();
        self.pos = end;
        batch
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub step: u64,
    pub path: Option<PathBuf>,
    pub checkpoint: Checkpoint,
}

/// Snapshots of one fine-tuning run, in step order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckpointSet {
    pub entries: Vec<CheckpointEntry>,
}

impl CheckpointSet {
    fn push(&mut self, entry: CheckpointEntry) {
        debug_assert!(self.entries.last().map_or(true, |e| e.step < entry.step));
        self.entries.push(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn steps(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.step).collect()
    }

    /// The `n` most recent snapshots as models, oldest first.
    pub fn last_models(&self, n: usize) -> Result<Vec<McModel>> {
        let skip = self.entries.len().saturating_sub(n);
        self.entries[skip..].iter().map(|e| e.checkpoint.restore()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleCounts {
    pub source: usize,
    pub synthetic: usize,
}

pub struct FinetuneResult {
    pub model: McModel,
    pub checkpoints: CheckpointSet,
    /// Tags as planned by the schedule.
    pub planned: ScheduleCounts,
    /// Pools the batches were actually drawn from.
    pub realized: ScheduleCounts,
    pub losses: Vec<f64>,
}

/// Fine-tunes `model` for `cfg.finetune_steps` steps on the mixed schedule.
/// A pool that is empty is replaced by the other one. Checkpoints are taken
/// every `checkpoint_interval` steps and after the last step, and written
/// to `out_dir` when given.
pub fn finetune_mc(
    model: McModel,
    source: &[McExample],
    synthetic: &[McExample],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<FinetuneResult> {
    cfg.validate()?;
    if source.is_empty() && synthetic.is_empty() {
        return Err(Error::Input("both source and synthetic pools are empty".into()));
    }
    let mut model = model;
    let mut opt = Adam::new(model.params(), cfg.adam(cfg.mc_learning_rate));
    let mut src = Pool::new(source, cfg.seed.wrapping_add(11));
    let mut syn = Pool::new(synthetic, cfg.seed.wrapping_add(12));
    let schedule = build_mixed_schedule(cfg.finetune_steps, cfg.k);
    let mut planned = ScheduleCounts { source: 0, synthetic: 0 };
    let mut realized = ScheduleCounts { source: 0, synthetic: 0 };
    let mut checkpoints = CheckpointSet::default();
    let mut losses = Vec::with_capacity(schedule.len());
    for (i, tag) in schedule.iter().enumerate() {
        let use_source = match tag {
            BatchSource::Source => {
                planned.source += 1;
                !source.is_empty()
            }
            BatchSource::Synthetic => {
                planned.synthetic += 1;
                synthetic.is_empty()
            }
        };
        let batch = if use_source {
            realized.source += 1;
            src.next_batch(cfg.batch_size)
        } else {
            realized.synthetic += 1;
            syn.next_batch(cfg.batch_size)
        };
        let loss = mc_train_step(&mut model, &mut opt, &batch)?;
        losses.push(loss);
        let step = (i + 1) as u64;
        if step % 50 == 0 {
            debug!("finetune step {step} loss {loss:.4}");
        }
        if (i + 1) % cfg.checkpoint_interval == 0 || i + 1 == schedule.len() {
            let path = match out_dir {
                Some(dir) => {
                    let p = dir.join(format!("mc-step{step:08}.ckpt"));
                    save_checkpoint(&model, step, &p)?;
                    Some(p)
                }
                None => None,
            };
            checkpoints.push(CheckpointEntry { step, path, checkpoint: Checkpoint::of(&model, step) });
        }
    }
    info!("finetune: {} source and {} synthetic batches", realized.source, realized.synthetic);
    Ok(FinetuneResult { model, checkpoints, planned, realized, losses })
}

/// Predicts every question of `ds` with checkpoint-averaged ensemble groups.
pub fn predict_dataset(groups: &[Vec<&McModel>], ds: &Dataset, vocab: &Vocabulary, max_span_len: usize) -> Result<Predictions> {
    let preds: Vec<Result<(String, AnswerPrediction)>> = ds
        .examples
        .par_iter()
        .map(|ex| {
            let words = ex.paragraph.words();
            let dist = ensemble_distribution(groups, &vocab.ids(&words), &vocab.ids(&ex.question))?;
            Ok((ex.id.clone(), AnswerPrediction::from_best(dp_best_span(&dist, max_span_len)?, &words)))
        })
        .collect();
    preds.into_iter().collect()
}

pub fn evaluate_predictions(ds: &Dataset, preds: &Predictions) -> Result<EvalReport> {
    let golds: Vec<(String, Vec<String>)> = ds.examples.iter().map(|e| (e.id.clone(), e.gold_answers.clone())).collect();
    let texts: HashMap<String, String> = preds.iter().map(|(k, v)| (k.clone(), v.text.clone())).collect();
    evaluate(&golds, &texts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::answer::TaggerConfig;
    use crate::mc::McConfig;
    use crate::question::GeneratorConfig;
    use crate::text::build_dataset;
    use crate::toy::{generate, Questions, POLITICS, SPORTS};
    use BatchSource::{Source as S, Synthetic as T};

    #[test]
    fn schedules() {
        assert_eq!(build_mixed_schedule(10, 4), vec![S, S, S, S, T, S, S, S, S, T]);
        assert_eq!(build_mixed_schedule(3, 0), vec![T, T, T]);
        assert_eq!(build_mixed_schedule(6, 2), vec![S, S, T, S, S, T]);
        assert!(build_mixed_schedule(0, 4).is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { checkpoint_interval: 0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = TrainConfig { precision: Precision::F32, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let json = r#"{"k": 2, "seed": 5}"#;
        let c: TrainConfig = serde_json::from_str(json).unwrap();
        assert_eq!((c.k, c.seed, c.candidate_cap), (2, 5, 30));
        assert!(serde_json::from_str::<TrainConfig>(r#"{"kk": 2}"#).is_err());
    }

    fn tiny_setup() -> (Dataset, Dataset, Vocabulary) {
        let src = build_dataset(&generate(&SPORTS, 4, Questions::Sample(4), 1));
        let tgt = build_dataset(&generate(&POLITICS, 3, Questions::None, 2));
        let words: Vec<String> =
            src.paragraphs.iter().chain(&tgt.paragraphs).flat_map(|p| p.words().into_iter().map(String::from)).collect();
        let qs: Vec<String> = src.examples.iter().flat_map(|e| e.question.clone()).collect();
        let vocab = Vocabulary::build(words.iter().chain(&qs).map(String::as_str), 1000);
        (src, tgt, vocab)
    }

    fn tiny_models(v: usize) -> (AnswerTagger, QuestionGenerator, McModel) {
        (
            AnswerTagger::new(TaggerConfig { vocab_size: v, embed_dim: 6, hidden: 5, fc_dim: 6, trainable_embeddings: true, seed: 1 }),
            QuestionGenerator::new(GeneratorConfig { vocab_size: v, embed_dim: 6, hidden: 5, attention_dim: 5, trainable_embeddings: true, seed: 2 }),
            McModel::new(McConfig { vocab_size: v, embed_dim: 6, hidden: 5, trainable_embeddings: true, seed: 3 }),
        )
    }

    #[test]
    fn zero_epochs_returns_initial_models() {
        let (src, _, vocab) = tiny_setup();
        let (t, g, _) = tiny_models(vocab.len());
        let cfg = TrainConfig { synnet_epochs: 0, ..Default::default() };
        let out = train_synnet(&src, None, &vocab, t.clone(), g.clone(), &cfg, None).unwrap();
        assert_eq!(out.tagger.params(), t.params());
        assert_eq!(out.generator.params(), g.params());
        assert!(out.log.tagger.epochs.is_empty());
        let empty = build_dataset(&generate(&SPORTS, 2, Questions::None, 1));
        assert!(matches!(train_synnet(&empty, None, &vocab, t, g, &cfg, None), Err(Error::Input(_))));
    }

    #[test]
    fn synthesis_is_deterministic_and_capped() {
        let (src, tgt, vocab) = tiny_setup();
        let (t, g, _) = tiny_models(vocab.len());
        let cfg = TrainConfig { synnet_epochs: 2, batch_size: 4, candidate_cap: 2, ..Default::default() };
        let a = train_synnet(&src, None, &vocab, t.clone(), g.clone(), &cfg, None).unwrap();
        let b = train_synnet(&src, None, &vocab, t, g, &cfg, None).unwrap();
        assert_eq!(a.log, b.log);
        let d1 = generate_synthetic(&a.tagger, &a.generator, &vocab, &tgt.paragraphs, &cfg, None).unwrap();
        let d2 = generate_synthetic(&b.tagger, &b.generator, &vocab, &tgt.paragraphs, &cfg, None).unwrap();
        assert_eq!(d1, d2);
        assert!(d1.triples.len() <= 2 * tgt.paragraphs.len());
        assert_eq!(d1.summary.triples + d1.summary.dropped_empty, d1.summary.sampled);
        for tr in &d1.triples {
            assert!(!tr.question.is_empty());
            let p = tgt.paragraph(&tr.paragraph_id).unwrap();
            tr.answer.validate(p.len()).unwrap();
        }
        assert!(matches!(generate_synthetic(&a.tagger, &a.generator, &vocab, &[], &cfg, None), Err(Error::Input(_))));
    }

    #[test]
    fn annotations_drive_candidates() {
        let (_, tgt, vocab) = tiny_setup();
        let (t, g, _) = tiny_models(vocab.len());
        let cfg = TrainConfig { candidate_source: CandidateSource::Annotations, ..Default::default() };
        let first = &tgt.paragraphs[0].id;
        let ann: HashMap<String, Vec<AnswerSpan>> = [(first.clone(), vec![AnswerSpan::new(1, 1), AnswerSpan::new(4, 4)])].into();
        let d = generate_synthetic(&t, &g, &vocab, &tgt.paragraphs, &cfg, Some(&ann)).unwrap();
        assert_eq!(d.summary.candidates, 2);
        assert_eq!(d.summary.paragraphs_without_candidates, tgt.paragraphs.len() - 1);
        assert!(d.triples.iter().all(|t| &t.paragraph_id == first));
    }

    #[test]
    fn finetune_checkpoints_and_counts() {
        let (src, _, vocab) = tiny_setup();
        let (_, _, mc) = tiny_models(vocab.len());
        let ex = mc_examples(&src, &vocab);
        let (a, b) = ex.split_at(ex.len() / 2);
        let cfg = TrainConfig { finetune_steps: 10, checkpoint_interval: 4, batch_size: 2, k: 4, ..Default::default() };
        let dir = tempfile::tempdir().unwrap();
        let r = finetune_mc(mc.clone(), a, b, &cfg, Some(dir.path())).unwrap();
        assert_eq!(r.checkpoints.steps(), vec![4, 8, 10]);
        assert_eq!((r.realized.source, r.realized.synthetic), (8, 2));
        let last = r.checkpoints.entries.last().unwrap();
        let (back, step): (McModel, u64) = crate::checkpoint::load_checkpoint(last.path.as_ref().unwrap()).unwrap();
        assert_eq!(step, 10);
        assert_eq!(back.forward(&a[0].paragraph, &a[0].question).unwrap(), r.model.forward(&a[0].paragraph, &a[0].question).unwrap());

        let one = TrainConfig { finetune_steps: 3, checkpoint_interval: 1, ..cfg.clone() };
        assert_eq!(finetune_mc(mc.clone(), a, b, &one, None).unwrap().checkpoints.len(), 3);
        let r = finetune_mc(mc.clone(), a, &[], &cfg, None).unwrap();
        assert_eq!((r.planned.synthetic, r.realized.synthetic), (2, 0));
        assert!(matches!(finetune_mc(mc, &[], &[], &cfg, None), Err(Error::Input(_))));
    }
}
