use std::time::Instant;

use synnet::pipeline::{run_transfer, PipelineConfig};
use synnet::text::build_dataset;
use synnet::toy::{toy_corpus, toy_embeddings, TOY_EMBEDDING_NOISE, TOY_EMBEDDING_SEED};

fn main() {
    env_logger::init();
    let path = std::env::args().nth(1).unwrap_or_else(|| "configs/toy.json".into());
    let cfg: PipelineConfig = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let corpus = toy_corpus(cfg.train.seed);
    let (src, tgt, dev) = (build_dataset(&corpus.source), build_dataset(&corpus.target_unlabeled), build_dataset(&corpus.target_dev));
    let noise: f64 = std::env::var("NOISE").ok().map_or(TOY_EMBEDDING_NOISE, |s| s.parse().unwrap());
    let emb = toy_embeddings(cfg.mc.embed_dim, noise, TOY_EMBEDDING_SEED);
    let t = Instant::now();
    let out = run_transfer(&cfg, Some(&emb), &src, &tgt, &dev, None).unwrap();
    println!("{}", serde_json::to_string(&out.synthetic).unwrap());
    println!("zero-shot F1 {:.2} EM {:.2}", out.zero_shot.f1, out.zero_shot.em);
    println!("fine-tuned F1 {:.2} EM {:.2}", out.finetuned.f1, out.finetuned.em);
    println!("gain {:.2} in {:.1}s", out.f1_gain(), t.elapsed().as_secs_f64());
}
