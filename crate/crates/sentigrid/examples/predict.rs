//! Decode predicted triplets sentence by sentence and compare to gold.
//!
//!     cargo run --release -p sentigrid --example predict

use std::path::Path;

use sentigrid::config::ModelConfig;
use sentigrid::data::parse_dataset;
use sentigrid::embedding::{random_word_table, Vocab};
use sentigrid::model::Model;
use sentigrid::rng::SeedRng;
use sentigrid::tagging::Gold;
use sentigrid::training::train;

fn render(tokens: &[String], gold: &Gold) -> String {
    let text = |s: &sentigrid::tagging::Span| tokens[s.start..=s.end].join(" ");
    match gold {
        Gold::Triplets(ts) => {
            if ts.is_empty() {
                return "(none)".into();
            }
            ts.iter()
                .map(|t| format!("({}, {}, {})", text(&t.aspect), text(&t.opinion), t.polarity))
                .collect::<Vec<_>>()
                .join("  ")
        }
        Gold::AspectPolarities { aspects, .. } => aspects
            .iter()
            .map(|(s, p)| format!("({}, {p})", text(s)))
            .collect::<Vec<_>>()
            .join("  "),
    }
}

fn main() {
    env_logger::init();
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let examples = parse_dataset(&root.join("data/toy/train.txt"), sentigrid::Task::Aste).unwrap();

    let cfg = ModelConfig {
        hidden_dim: 32,
        pair_hidden: 8,
        max_len: 16,
        max_epochs: 120,
        target_train_f1: Some(1.0),
        seed: 11,
        ..ModelConfig::default()
    };
    let vocab = Vocab::build(examples.iter().map(|e| e.tokens.as_slice()));
    let table = random_word_table(cfg.word_dim, &vocab, &SeedRng::new(cfg.seed));
    let mut model = Model::new(cfg, vocab, table).unwrap();
    train(&mut model, &examples, None).unwrap();

    for ex in &examples {
        let pred = model.predict(ex).unwrap();
        println!("{}", ex.tokens.join(" "));
        println!("  gold: {}", render(&ex.tokens, &ex.gold));
        println!("  pred: {}", render(&ex.tokens, &pred));
    }
}
