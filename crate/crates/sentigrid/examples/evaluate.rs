//! Train briefly on the toy corpus, then report exact-match precision,
//! recall, and F1 with the AE/OE subtask breakdown on two datasets.
//!
//!     cargo run --release -p sentigrid --example evaluate

use std::path::Path;

use sentigrid::config::ModelConfig;
use sentigrid::data::parse_dataset;
use sentigrid::embedding::{random_word_table, Vocab};
use sentigrid::model::Model;
use sentigrid::rng::SeedRng;
use sentigrid::training::{evaluate, train};

fn main() {
    env_logger::init();
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let train_set = parse_dataset(&root.join("data/toy/train.txt"), sentigrid::Task::Aste).unwrap();
    let unseen = parse_dataset(
        &root.join("data/fixtures/aste_v2/dev.txt"),
        sentigrid::Task::Aste,
    )
    .unwrap();

    let cfg = ModelConfig {
        hidden_dim: 32,
        pair_hidden: 8,
        max_len: 16,
        max_epochs: 120,
        target_train_f1: Some(1.0),
        seed: 7,
        ..ModelConfig::default()
    };
    let vocab = Vocab::build(train_set.iter().map(|e| e.tokens.as_slice()));
    let table = random_word_table(cfg.word_dim, &vocab, &SeedRng::new(cfg.seed));
    let mut model = Model::new(cfg, vocab, table).unwrap();
    let outcome = train(&mut model, &train_set, None).unwrap();
    println!("trained for {} epochs\n", outcome.epochs_run);

    println!("toy training set (memorized):");
    print!("{}", evaluate(&model, &train_set).unwrap().to_table());
    println!("\nunseen fixture sentences (expect poor scores from a toy model):");
    print!("{}", evaluate(&model, &unseen).unwrap().to_table());
}
