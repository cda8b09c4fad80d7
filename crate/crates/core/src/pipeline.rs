//! End-to-end transfer: pretrain MC on source, train the synthesis modules,
//! synthesize target pairs, fine-tune, and score both the source-only model
//! and the fine-tuned one on a labeled target set.

use std::path::{Path, PathBuf};

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::answer::{AnswerTagger, TaggerConfig};
use crate::error::Result;
use crate::eval::EvalReport;
use crate::mc::{McConfig, McModel};
use crate::question::{GeneratorConfig, QuestionGenerator};
use crate::text::{parse_embeddings, Dataset, Vocabulary};
use crate::trainer::{
    evaluate_predictions, finetune_mc, generate_synthetic, mc_examples, predict_dataset, synthetic_mc_examples,
    train_mc, train_synnet, FitLog, GenerationSummary, ScheduleCounts, SynNetLog, TrainConfig,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaggerSize {
    pub embed_dim: usize,
    pub hidden: usize,
    pub fc_dim: usize,
    pub trainable_embeddings: bool,
}

impl Default for TaggerSize {
    fn default() -> Self {
        TaggerSize { embed_dim: 300, hidden: 150, fc_dim: 150, trainable_embeddings: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSize {
    pub embed_dim: usize,
    pub hidden: usize,
    pub attention_dim: usize,
    pub trainable_embeddings: bool,
}

impl Default for GeneratorSize {
    fn default() -> Self {
        GeneratorSize { embed_dim: 300, hidden: 100, attention_dim: 100, trainable_embeddings: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSize {
    pub embed_dim: usize,
    pub hidden: usize,
    pub trainable_embeddings: bool,
}

impl Default for McSize {
    fn default() -> Self {
        McSize { embed_dim: 100, hidden: 100, trainable_embeddings: true }
    }
}

/// File locations for a run. Inputs are resolved against a data root by
/// the caller; `out_dir` holds every artifact a run writes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub source: Option<PathBuf>,
    pub source_dev: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub eval: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    /// External answer spans (JSON list of `{paragraph_id, spans}`).
    pub annotations: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

/// Training knobs, model sizes and paths. Unknown keys are rejected at
/// every level.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    pub tagger: TaggerSize,
    pub generator: GeneratorSize,
    pub mc: McSize,
    pub paths: PathsConfig,
}

impl PipelineConfig {
    pub fn tagger_config(&self, vocab_size: usize) -> TaggerConfig {
        TaggerConfig {
            vocab_size,
            embed_dim: self.tagger.embed_dim,
            hidden: self.tagger.hidden,
            fc_dim: self.tagger.fc_dim,
            trainable_embeddings: self.tagger.trainable_embeddings,
            seed: self.train.seed.wrapping_mul(3).wrapping_add(1),
        }
    }

    pub fn generator_config(&self, vocab_size: usize) -> GeneratorConfig {
        GeneratorConfig {
            vocab_size,
            embed_dim: self.generator.embed_dim,
            hidden: self.generator.hidden,
            attention_dim: self.generator.attention_dim,
            trainable_embeddings: self.generator.trainable_embeddings,
            seed: self.train.seed.wrapping_mul(3).wrapping_add(2),
        }
    }

    pub fn mc_config(&self, vocab_size: usize) -> McConfig {
        McConfig {
            vocab_size,
            embed_dim: self.mc.embed_dim,
            hidden: self.mc.hidden,
            trainable_embeddings: self.mc.trainable_embeddings,
            seed: self.train.seed.wrapping_mul(3).wrapping_add(3),
        }
    }
}

/// Built models with pretrained rows loaded when an embedding text is given.
pub struct Models {
    pub tagger: AnswerTagger,
    pub generator: QuestionGenerator,
    pub mc: McModel,
}

pub fn build_models(cfg: &PipelineConfig, vocab: &Vocabulary, embeddings: Option<&str>) -> Result<Models> {
    let v = vocab.len();
    let mut m = Models {
        tagger: AnswerTagger::new(cfg.tagger_config(v)),
        generator: QuestionGenerator::new(cfg.generator_config(v)),
        mc: McModel::new(cfg.mc_config(v)),
    };
    if let Some(text) = embeddings {
        let load = |dim, trainable| parse_embeddings(text.as_bytes(), vocab, dim, trainable, "embeddings");
        m.tagger.set_embeddings(&load(cfg.tagger.embed_dim, cfg.tagger.trainable_embeddings)?)?;
        m.generator.set_embeddings(&load(cfg.generator.embed_dim, cfg.generator.trainable_embeddings)?)?;
        m.mc.set_embeddings(&load(cfg.mc.embed_dim, cfg.mc.trainable_embeddings)?)?;
    }
    Ok(m)
}

/// Source paragraphs and questions plus target paragraphs. Target questions
/// are never looked at.
pub fn build_vocabulary(source: &Dataset, target: &[&Dataset], max_size: usize) -> Vocabulary {
    let mut tokens: Vec<&str> = Vec::new();
    for p in source.paragraphs.iter().chain(target.iter().flat_map(|d| d.paragraphs.iter())) {
        tokens.extend(p.words());
    }
    for ex in &source.examples {
        tokens.extend(ex.question.iter().map(String::as_str));
    }
    Vocabulary::build(tokens, max_size)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferOutcome {
    pub vocab_size: usize,
    pub mc_pretrain: FitLog,
    pub synnet: SynNetLog,
    pub synthetic: GenerationSummary,
    pub finetune_losses: Vec<f64>,
    pub schedule: ScheduleCounts,
    pub checkpoint_steps: Vec<u64>,
    pub zero_shot: EvalReport,
    pub finetuned: EvalReport,
}

impl TransferOutcome {
    pub fn f1_gain(&self) -> f64 {
        self.finetuned.f1 - self.zero_shot.f1
    }
}

/// Runs the whole transfer pipeline in memory. `target_unlabeled` supplies
/// paragraphs for synthesis; `target_dev` is only used for scoring.
/// `embeddings` is the text of a pretrained vector file.
pub fn run_transfer(
    cfg: &PipelineConfig,
    embeddings: Option<&str>,
    source: &Dataset,
    target_unlabeled: &Dataset,
    target_dev: &Dataset,
    checkpoint_dir: Option<&Path>,
) -> Result<TransferOutcome> {
    let tc = &cfg.train;
    tc.validate()?;
    let vocab = build_vocabulary(source, &[target_unlabeled, target_dev], usize::MAX);
    let v = vocab.len();
    info!("vocabulary: {v} types");

    let Models { tagger, generator, mut mc } = build_models(cfg, &vocab, embeddings)?;
    let source_mc = mc_examples(source, &vocab);
    let mc_pretrain = train_mc(&mut mc, &source_mc, &[], tc)?;
    let zero_shot = evaluate_predictions(target_dev, &predict_dataset(&[vec![&mc]], target_dev, &vocab, tc.max_span_len)?)?;
    info!("zero-shot target F1 {:.2}", zero_shot.f1);

    let synnet = train_synnet(
        source,
        None,
        &vocab,
        tagger,
        generator,
        tc,
        None,
    )?;
    let synthetic =
        generate_synthetic(&synnet.tagger, &synnet.generator, &vocab, &target_unlabeled.paragraphs, tc, None)?;
    for t in synthetic.triples.iter().take(8) {
        let p = target_unlabeled.paragraph(&t.paragraph_id).expect("synthesized from these paragraphs");
        debug!("synthetic: {} => {}", p.span_text(t.answer), t.question.join(" "));
    }
    let syn_mc = synthetic_mc_examples(&synthetic.records(), &target_unlabeled.paragraphs, &vocab)?;

    let ft = finetune_mc(mc, &source_mc, &syn_mc, tc, checkpoint_dir)?;
    let members = ft.checkpoints.last_models(tc.cpavg_n)?;
    let group: Vec<&McModel> = members.iter().collect();
    let finetuned = evaluate_predictions(target_dev, &predict_dataset(&[group], target_dev, &vocab, tc.max_span_len)?)?;
    info!("fine-tuned target F1 {:.2}", finetuned.f1);

    Ok(TransferOutcome {
        vocab_size: v,
        mc_pretrain,
        synnet: synnet.log,
        synthetic: synthetic.summary,
        finetune_losses: ft.losses,
        schedule: ft.realized,
        checkpoint_steps: ft.checkpoints.steps(),
        zero_shot,
        finetuned,
    })
}
