//! Train the full dual-encoder model on the bundled toy corpus until it
//! reaches 100% training triplet F1, then save a checkpoint.
//!
//!     cargo run --release -p sentigrid --example train_toy

use std::path::Path;

use sentigrid::config::ModelConfig;
use sentigrid::data::parse_dataset;
use sentigrid::embedding::{random_word_table, Vocab};
use sentigrid::model::Model;
use sentigrid::rng::SeedRng;
use sentigrid::training::{save_checkpoint, train};

fn main() {
    env_logger::init();
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let examples = parse_dataset(&root.join("data/toy/train.txt"), sentigrid::Task::Aste)
        .expect("toy corpus parses");

    let cfg = ModelConfig {
        hidden_dim: 64,
        pair_hidden: 16,
        max_len: 16,
        max_epochs: 500,
        target_train_f1: Some(1.0),
        seed: 42,
        ..ModelConfig::default()
    };
    let vocab = Vocab::build(examples.iter().map(|e| e.tokens.as_slice()));
    let table = random_word_table(cfg.word_dim, &vocab, &SeedRng::new(cfg.seed));
    let mut model = Model::new(cfg, vocab, table).expect("valid config");

    let outcome = train(&mut model, &examples, Some(&examples)).expect("training runs");
    for row in outcome.log.iter().rev().take(3).rev() {
        println!(
            "step {:>3}  lr {:.3e}  L_term {:.4}  L_pola {:.4}",
            row.step, row.lr, row.l_term, row.l_pola
        );
    }
    println!(
        "reached train F1 {:.2}% in {} epochs ({} steps)",
        outcome.final_train_f1 * 100.0,
        outcome.epochs_run,
        outcome.steps_run
    );

    let out = std::env::temp_dir().join("sentigrid_toy.ckpt");
    save_checkpoint(&out, &model).expect("checkpoint writes");
    println!("checkpoint saved to {}", out.display());
}
