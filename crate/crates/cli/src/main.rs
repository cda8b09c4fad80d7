use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;
use serde_json::{json, Value};

use synnet::answer::AnswerTagger;
use synnet::checkpoint::{load_checkpoint, save_checkpoint};
use synnet::eval::{evaluate, question_type_breakdown, EvalReport};
use synnet::mc::McModel;
use synnet::pipeline::{build_models, build_vocabulary, PipelineConfig};
use synnet::question::{QuestionGenerator, SyntheticRecord};
use synnet::text::{load_annotations, load_dataset, AnswerSpan, Dataset, SquadFile, Vocabulary};
use synnet::toy::{toy_corpus, toy_embeddings, TOY_EMBEDDING_NOISE, TOY_EMBEDDING_SEED};
use synnet::trainer::{
    finetune_mc, generate_synthetic, mc_examples, predict_dataset, synthetic_mc_examples, train_mc, train_synnet,
};
use synnet::util::{sha256_hex, write_atomic};
use synnet::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "synnet", version, about = "Question/answer synthesis for transfer learning in machine comprehension")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Set one config key, e.g. `train.k=2` or `paths.out_dir=runs/a`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Directory that relative input paths are resolved against. Defaults to
    /// the working directory.
    #[arg(long, env = "SYNNET_DATA_ROOT")]
    data_root: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct Selection {
    /// Checkpoint files or fine-tuning directories. A directory contributes
    /// its last `cpavg-n` checkpoints.
    #[arg(long, num_args = 1..)]
    checkpoints: Vec<PathBuf>,
    /// Treat each `--checkpoints` entry as its own ensemble member instead of
    /// averaging everything together.
    #[arg(long)]
    ensemble: bool,
    #[arg(long)]
    cpavg_n: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the bundled toy corpus and its embedding file.
    ToyData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        dim: usize,
    },
    /// Train the answer tagger and question generator on the source set.
    TrainSynnet(Common),
    /// Pretrain the MC model on the source set.
    TrainMc(Common),
    /// Synthesize question/answer pairs on the target paragraphs.
    Generate(Common),
    /// Fine-tune the pretrained MC model on source and synthetic batches.
    Finetune(Common),
    /// Predict answers for the eval set.
    Predict {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sel: Selection,
        /// Use the pretrained MC model (the zero-shot baseline).
        #[arg(long, conflicts_with = "checkpoints")]
        pretrained: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score predictions against the eval set.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sel: Selection,
        #[arg(long, conflicts_with = "checkpoints")]
        pretrained: bool,
        /// Predictions file (`{id: text}`); predicted on the fly when absent.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Score missing ids as zero instead of failing.
        #[arg(long)]
        allow_missing: bool,
        #[arg(long)]
        by_type: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Every stage in order, then zero-shot and fine-tuned evaluation.
    Run(Common),
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => EXIT_USAGE,
            Error::NumericDomain(_) => EXIT_NUMERIC,
            _ => EXIT_DATA,
        };
        Failure { code, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, message: message.into() }
}

fn data(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_DATA, message: message.into() }
}

type CliResult<T> = Result<T, Failure>;

/// `a.b.c=value`; the value is parsed as JSON when possible, else taken as a string.
fn apply_override(root: &mut Value, arg: &str) -> CliResult<()> {
    let (key, raw) = arg.split_once('=').ok_or_else(|| usage(format!("override {arg:?} is not KEY=VALUE")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| usage(format!("override {key}: {part} is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| json!({}));
    }
    unreachable!("split always yields at least one part")
}

struct Run {
    cfg: PipelineConfig,
    root: PathBuf,
    out: PathBuf,
}

impl Run {
    fn load(c: &Common) -> CliResult<Run> {
        let text = std::fs::read_to_string(&c.config)
            .map_err(|e| usage(format!("cannot read config {}: {e}", c.config.display())))?;
        let mut value: Value =
            serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", c.config.display())))?;
        for o in &c.overrides {
            apply_override(&mut value, o)?;
        }
        if let Some(seed) = c.seed {
            apply_override(&mut value, &format!("train.seed={seed}"))?;
        }
        let cfg: PipelineConfig =
            serde_json::from_value(value).map_err(|e| usage(format!("config {}: {e}", c.config.display())))?;
        cfg.train.validate()?;
        let root = c.data_root.clone().unwrap_or_default();
        let out = cfg.paths.out_dir.clone().ok_or_else(|| usage("paths.out_dir is not set"))?;
        let run = Run { cfg, root, out };
        run.check_inputs()?;
        Ok(run)
    }

    /// Every configured input must exist before any work starts.
    fn check_inputs(&self) -> CliResult<()> {
        let p = &self.cfg.paths;
        let inputs = [
            ("source", &p.source),
            ("source_dev", &p.source_dev),
            ("target", &p.target),
            ("eval", &p.eval),
            ("embeddings", &p.embeddings),
            ("annotations", &p.annotations),
        ];
        for (name, path) in inputs {
            if let Some(path) = path {
                let full = self.root.join(path);
                if !full.is_file() {
                    return Err(data(format!("paths.{name}: {} does not exist", full.display())));
                }
            }
        }
        Ok(())
    }

    fn input(&self, name: &str, path: &Option<PathBuf>) -> CliResult<PathBuf> {
        path.as_ref().map(|p| self.root.join(p)).ok_or_else(|| usage(format!("paths.{name} is not set")))
    }

    fn dataset(&self, name: &str, path: &Option<PathBuf>) -> CliResult<Dataset> {
        let path = self.input(name, path)?;
        let bytes = std::fs::read(&path).map_err(|e| data(format!("{}: {e}", path.display())))?;
        if bytes.iter().all(u8::is_ascii_whitespace) {
            return Err(data(format!("no paragraphs in {}", path.display())));
        }
        let ds = load_dataset(&path)?;
        if !ds.report.skipped.is_empty() {
            log::warn!("{}: skipped {} misaligned answers", path.display(), ds.report.skipped.len());
        }
        Ok(ds)
    }

    fn optional_dataset(&self, name: &str, path: &Option<PathBuf>) -> CliResult<Option<Dataset>> {
        path.as_ref().map(|_| self.dataset(name, path)).transpose()
    }

    fn annotations(&self) -> CliResult<Option<HashMap<String, Vec<AnswerSpan>>>> {
        match &self.cfg.paths.annotations {
            Some(p) => Ok(Some(load_annotations(&self.root.join(p))?)),
            None => Ok(None),
        }
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Loads the run vocabulary, building it from every configured paragraph
    /// set on first use.
    fn vocab(&self) -> CliResult<Vocabulary> {
        let path = self.artifact("vocab.json");
        if path.is_file() {
            return Ok(Vocabulary::load(&path)?);
        }
        let p = &self.cfg.paths;
        let source = self.dataset("source", &p.source)?;
        let others: Vec<Dataset> = [("target", &p.target), ("eval", &p.eval), ("source_dev", &p.source_dev)]
            .into_iter()
            .filter_map(|(n, path)| self.optional_dataset(n, path).transpose())
            .collect::<CliResult<_>>()?;
        let vocab = build_vocabulary(&source, &others.iter().collect::<Vec<_>>(), usize::MAX);
        vocab.save(&path)?;
        info!("vocabulary of {} types written to {}", vocab.len(), path.display());
        Ok(vocab)
    }

    fn embeddings(&self) -> CliResult<Option<String>> {
        match &self.cfg.paths.embeddings {
            Some(p) => {
                let path = self.root.join(p);
                std::fs::read_to_string(&path).map(Some).map_err(|e| data(format!("{}: {e}", path.display())))
            }
            None => Ok(None),
        }
    }

    fn digests(&self) -> BTreeMap<String, String> {
        let p = &self.cfg.paths;
        [&p.source, &p.source_dev, &p.target, &p.eval, &p.embeddings, &p.annotations]
            .into_iter()
            .flatten()
            .filter_map(|path| {
                let full = self.root.join(path);
                std::fs::read(&full).ok().map(|b| (path.display().to_string(), sha256_hex(&b)))
            })
            .collect()
    }

    fn manifest(&self, command: &str, body: Value) -> CliResult<()> {
        let mut m = json!({
            "command": command,
            "config": self.cfg,
            "datasets": self.digests(),
        });
        if let (Value::Object(m), Value::Object(b)) = (&mut m, body) {
            m.extend(b);
        }
        write_json(&self.artifact(&format!("manifest-{command}.json")), &m)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifacts serialize");
    text.push('\n');
    Ok(write_atomic(path, text.as_bytes())?)
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn cmd_toy_data(out: &Path, seed: u64, dim: usize) -> CliResult<()> {
    let c = toy_corpus(seed);
    let files: [(&str, &SquadFile); 3] =
        [("source.json", &c.source), ("target_unlabeled.json", &c.target_unlabeled), ("target_dev.json", &c.target_dev)];
    for (name, file) in files {
        write_json(&out.join(name), file)?;
    }
    write_atomic(&out.join("embeddings.txt"), toy_embeddings(dim, TOY_EMBEDDING_NOISE, TOY_EMBEDDING_SEED).as_bytes())?;
    info!("toy corpus written to {}", out.display());
    Ok(())
}

fn cmd_train_synnet(run: &Run) -> CliResult<()> {
    let p = &run.cfg.paths;
    let source = run.dataset("source", &p.source)?;
    let dev = run.optional_dataset("source_dev", &p.source_dev)?;
    let vocab = run.vocab()?;
    let models = build_models(&run.cfg, &vocab, run.embeddings()?.as_deref())?;
    let annotations = run.annotations()?;
    let out = train_synnet(&source, dev.as_ref(), &vocab, models.tagger, models.generator, &run.cfg.train, annotations.as_ref())?;
    let (tp, gp) = (run.artifact("tagger.ckpt"), run.artifact("generator.ckpt"));
    save_checkpoint(&out.tagger, 0, &tp)?;
    save_checkpoint(&out.generator, 0, &gp)?;
    info!("tagger and generator checkpoints written to {}", run.out.display());
    run.manifest("train-synnet", json!({ "losses": out.log, "checkpoints": [display(&tp), display(&gp)] }))
}

fn cmd_train_mc(run: &Run) -> CliResult<()> {
    let p = &run.cfg.paths;
    let source = run.dataset("source", &p.source)?;
    let dev = run.optional_dataset("source_dev", &p.source_dev)?;
    let vocab = run.vocab()?;
    let mut mc = build_models(&run.cfg, &vocab, run.embeddings()?.as_deref())?.mc;
    let val = dev.as_ref().map(|d| mc_examples(d, &vocab)).unwrap_or_default();
    let log = train_mc(&mut mc, &mc_examples(&source, &vocab), &val, &run.cfg.train)?;
    let path = run.artifact("mc-pretrained.ckpt");
    save_checkpoint(&mc, 0, &path)?;
    run.manifest("train-mc", json!({ "losses": log, "checkpoints": [display(&path)] }))
}

fn read_model<M: synnet::checkpoint::Model>(path: &Path, what: &str) -> CliResult<M> {
    if !path.is_file() {
        return Err(data(format!("{what} checkpoint {} does not exist", path.display())));
    }
    Ok(load_checkpoint::<M>(path)?.0)
}

fn cmd_generate(run: &Run) -> CliResult<()> {
    let target = run.dataset("target", &run.cfg.paths.target)?;
    if target.paragraphs.is_empty() {
        return Err(data("no paragraphs in the target set"));
    }
    let tagger: AnswerTagger = read_model(&run.artifact("tagger.ckpt"), "tagger")?;
    let generator: QuestionGenerator = read_model(&run.artifact("generator.ckpt"), "generator")?;
    let vocab = run.vocab()?;
    let annotations = run.annotations()?;
    let set = generate_synthetic(&tagger, &generator, &vocab, &target.paragraphs, &run.cfg.train, annotations.as_ref())?;
    let mut lines = String::new();
    for r in set.records() {
        lines.push_str(&serde_json::to_string(&r).expect("records serialize"));
        lines.push('\n');
    }
    let path = run.artifact("synthetic.jsonl");
    write_atomic(&path, lines.as_bytes())?;
    write_json(&run.artifact("synthetic-summary.json"), &json!({ "summary": set.summary, "provenance": set.provenance }))?;
    eprintln!(
        "{} paragraphs, {} candidates, {} sampled, {} triples, {} dropped",
        set.summary.paragraphs, set.summary.candidates, set.summary.sampled, set.summary.triples, set.summary.dropped_empty
    );
    run.manifest("generate", json!({ "summary": set.summary, "provenance": set.provenance, "output": display(&path) }))
}

fn read_synthetic(path: &Path) -> CliResult<Vec<SyntheticRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| data(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

fn cmd_finetune(run: &Run) -> CliResult<()> {
    let p = &run.cfg.paths;
    let source = run.dataset("source", &p.source)?;
    let target = run.dataset("target", &p.target)?;
    let syn_path = run.artifact("synthetic.jsonl");
    if !syn_path.is_file() {
        return Err(data(format!("synthetic dataset {} does not exist", syn_path.display())));
    }
    let mc: McModel = read_model(&run.artifact("mc-pretrained.ckpt"), "pretrained MC")?;
    let vocab = run.vocab()?;
    let synthetic = synthetic_mc_examples(&read_synthetic(&syn_path)?, &target.paragraphs, &vocab)?;
    let dir = run.artifact("finetune");
    let r = finetune_mc(mc, &mc_examples(&source, &vocab), &synthetic, &run.cfg.train, Some(&dir))?;
    let paths: Vec<String> = r.checkpoints.entries.iter().filter_map(|e| e.path.as_deref().map(display)).collect();
    info!("{} checkpoints written to {}", paths.len(), dir.display());
    run.manifest(
        "finetune",
        json!({
            "schedule": { "planned": r.planned, "realized": r.realized },
            "losses": r.losses,
            "checkpoints": paths,
        }),
    )
}

/// Checkpoint files of a fine-tuning directory in step order (names are
/// zero-padded step numbers).
fn directory_checkpoints(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| data(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(data(format!("no checkpoints in {}", dir.display())));
    }
    Ok(files)
}

fn select(run: &Run, sel: &Selection, pretrained: bool) -> CliResult<Vec<Vec<McModel>>> {
    if pretrained {
        return Ok(vec![vec![read_model(&run.artifact("mc-pretrained.ckpt"), "pretrained MC")?]]);
    }
    let n = sel.cpavg_n.unwrap_or(run.cfg.train.cpavg_n);
    if n == 0 {
        return Err(usage("--cpavg-n must be at least 1"));
    }
    let entries = if sel.checkpoints.is_empty() { vec![run.artifact("finetune")] } else { sel.checkpoints.clone() };
    let mut groups: Vec<Vec<PathBuf>> = Vec::new();
    for e in &entries {
        let files = if e.is_dir() {
            let all = directory_checkpoints(e)?;
            all[all.len().saturating_sub(n)..].to_vec()
        } else if e.is_file() {
            vec![e.clone()]
        } else {
            return Err(data(format!("checkpoint {} does not exist", e.display())));
        };
        match (sel.ensemble, groups.last_mut()) {
            (false, Some(g)) => g.extend(files),
            _ => groups.push(files),
        }
    }
    groups
        .iter()
        .map(|g| g.iter().map(|p| read_model::<McModel>(p, "MC")).collect())
        .collect()
}

fn predictions(run: &Run, sel: &Selection, pretrained: bool, eval: &Dataset) -> CliResult<BTreeMap<String, String>> {
    let vocab = run.vocab()?;
    let models = select(run, sel, pretrained)?;
    let groups: Vec<Vec<&McModel>> = models.iter().map(|g| g.iter().collect()).collect();
    let preds = predict_dataset(&groups, eval, &vocab, run.cfg.train.max_span_len)?;
    Ok(preds.into_iter().map(|(k, v)| (k, v.text)).collect())
}

fn cmd_predict(run: &Run, sel: &Selection, pretrained: bool, output: Option<PathBuf>) -> CliResult<()> {
    let eval = run.dataset("eval", &run.cfg.paths.eval)?;
    let preds = predictions(run, sel, pretrained, &eval)?;
    let path = output.unwrap_or_else(|| run.artifact("predictions.json"));
    write_json(&path, &preds)?;
    info!("{} predictions written to {}", preds.len(), path.display());
    Ok(())
}

fn id_mismatch(eval: &Dataset, preds: &BTreeMap<String, String>) -> Option<String> {
    let gold: BTreeSet<&str> = eval.examples.iter().map(|e| e.id.as_str()).collect();
    let missing: Vec<&str> = gold.iter().filter(|id| !preds.contains_key(**id)).copied().collect();
    let unknown: Vec<&str> = preds.keys().map(String::as_str).filter(|id| !gold.contains(id)).collect();
    let mut parts = Vec::new();
    if !missing.is_empty() {
        parts.push(format!("missing predictions for {}", missing.join(", ")));
    }
    if !unknown.is_empty() {
        parts.push(format!("predictions for unknown ids {}", unknown.join(", ")));
    }
    (!parts.is_empty()).then(|| parts.join("; "))
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    run: &Run,
    sel: &Selection,
    pretrained: bool,
    predictions_path: Option<PathBuf>,
    allow_missing: bool,
    by_type: bool,
    output: Option<PathBuf>,
) -> CliResult<EvalReport> {
    let eval = run.dataset("eval", &run.cfg.paths.eval)?;
    let preds = match predictions_path {
        Some(p) => {
            let text = std::fs::read_to_string(&p).map_err(|e| data(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", p.display())))?
        }
        None => predictions(run, sel, pretrained, &eval)?,
    };
    if let Some(msg) = id_mismatch(&eval, &preds) {
        if !allow_missing {
            return Err(data(msg));
        }
        log::warn!("{msg}");
    }
    let golds: Vec<(String, Vec<String>)> = eval.examples.iter().map(|e| (e.id.clone(), e.gold_answers.clone())).collect();
    let mut report = evaluate(&golds, &preds.into_iter().collect())?;
    if by_type {
        let questions: HashMap<String, String> = eval.examples.iter().map(|e| (e.id.clone(), e.question_text.clone())).collect();
        report.by_type = Some(question_type_breakdown(&report.records, &questions));
    }
    println!("{}", report.table());
    write_json(&output.unwrap_or_else(|| run.artifact("eval-report.json")), &report)?;
    Ok(report)
}

fn cmd_run(run: &Run) -> CliResult<()> {
    cmd_train_mc(run)?;
    let none = Selection { checkpoints: Vec::new(), ensemble: false, cpavg_n: None };
    let zero = cmd_evaluate(run, &none, true, None, false, false, Some(run.artifact("eval-zero-shot.json")))?;
    cmd_train_synnet(run)?;
    cmd_generate(run)?;
    cmd_finetune(run)?;
    let tuned = cmd_evaluate(run, &none, false, None, false, false, Some(run.artifact("eval-finetuned.json")))?;
    println!("zero-shot F1 {:.2}  fine-tuned F1 {:.2}  gain {:+.2}", zero.f1, tuned.f1, tuned.f1 - zero.f1);
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::ToyData { out, seed, dim } => cmd_toy_data(&out, seed, dim),
        Command::TrainSynnet(c) => cmd_train_synnet(&Run::load(&c)?),
        Command::TrainMc(c) => cmd_train_mc(&Run::load(&c)?),
        Command::Generate(c) => cmd_generate(&Run::load(&c)?),
        Command::Finetune(c) => cmd_finetune(&Run::load(&c)?),
        Command::Predict { common, sel, pretrained, output } => cmd_predict(&Run::load(&common)?, &sel, pretrained, output),
        Command::Evaluate { common, sel, pretrained, predictions, allow_missing, by_type, output } => {
            cmd_evaluate(&Run::load(&common)?, &sel, pretrained, predictions, allow_missing, by_type, output).map(|_| ())
        }
        Command::Run(c) => cmd_run(&Run::load(&c)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
