//! Command-level integration tests: exit-code contract, manifest behavior,
//! rerun-from-manifest reproduction, degenerate inputs, and the contextual
//! vector path end to end.

use std::path::{Path, PathBuf};

use sentigrid::cli::{self, CliError, EvalArgs, RunManifest, TrainArgs};
use sentigrid::config::Task;
use sentigrid::data::parse_dataset;
use sentigrid::eval::score;
use sentigrid::tagging::{decode_aste, encode_grid, Gold};

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn toy_train_args(out: &Path) -> TrainArgs {
    TrainArgs {
        config: None,
        train: Some(repo_root().join("data/toy/train.txt")),
        dev: Some(repo_root().join("data/toy/train.txt")),
        out: Some(out.to_path_buf()),
        seed: Some(5),
        task: None,
        directions: None,
        layers: None,
        no_pair_encoder: false,
        no_interaction: false,
        no_char: false,
        glove: None,
        contextual: None,
        dev_contextual: None,
        set: vec![
            "hidden_dim=16".into(),
            "pair_hidden=4".into(),
            "max_epochs=2".into(),
            "max_len=16".into(),
        ],
        from_manifest: None,
    }
}

#[test]
fn exit_code_contract() {
    assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
    assert_eq!(CliError::Data("x".into()).exit_code(), 1);
    // config validation failures surface as usage errors
    let dir = tempfile::tempdir().unwrap();
    let mut args = toy_train_args(dir.path());
    args.layers = Some(0);
    match cli::run_train(args) {
        Err(e) => assert_eq!(e.exit_code(), 2),
        Ok(_) => panic!("layers=0 must be rejected"),
    }
    // missing data files are data errors
    let mut args = toy_train_args(dir.path());
    args.train = Some(PathBuf::from("/nonexistent/corpus.txt"));
    match cli::run_train(args) {
        Err(e) => assert_eq!(e.exit_code(), 1),
        Ok(_) => panic!("missing file must be rejected"),
    }
}

#[test]
fn manifest_written_before_data_is_touched() {
    // even when the dataset is missing, the manifest already exists
    let dir = tempfile::tempdir().unwrap();
    let mut args = toy_train_args(dir.path());
    args.train = Some(PathBuf::from("/nonexistent/corpus.txt"));
    let _ = cli::run_train(args);
    assert!(dir.path().join("manifest_train.json").is_file());
}

#[test]
fn rerun_from_manifest_reproduces_reports() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    cli::run_train(toy_train_args(&a)).unwrap();

    let rerun = TrainArgs {
        from_manifest: Some(a.join("manifest_train.json")),
        out: Some(b.clone()),
        ..toy_train_args(&b)
    };
    // the --set overrides are reapplied identically, so the rerun matches
    cli::run_train(rerun).unwrap();

    for out in [&a, &b] {
        cli::run_eval(EvalArgs {
            model: out.join("model.ckpt"),
            data: repo_root().join("data/toy/train.txt"),
            task: None,
            contextual: None,
            out: Some(out.clone()),
        })
        .unwrap();
    }
    let report_a = std::fs::read(a.join("eval_report.csv")).unwrap();
    let report_b = std::fs::read(b.join("eval_report.csv")).unwrap();
    assert_eq!(report_a, report_b);
    let log_a = std::fs::read(a.join("train_log.csv")).unwrap();
    let log_b = std::fs::read(b.join("train_log.csv")).unwrap();
    assert_eq!(log_a, log_b);
}

#[test]
fn eval_on_empty_dataset_reports_zero_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    cli::run_train(toy_train_args(&out)).unwrap();

    let empty = dir.path().join("empty.txt");
    std::fs::write(&empty, "").unwrap();
    cli::run_eval(EvalArgs {
        model: out.join("model.ckpt"),
        data: empty,
        task: None,
        contextual: None,
        out: Some(out.clone()),
    })
    .unwrap();
    let report = std::fs::read_to_string(out.join("eval_report.csv")).unwrap();
    let main_row = report.lines().nth(1).unwrap();
    assert!(main_row.ends_with("0,0,0"), "zero counts: {main_row}");
    assert!(main_row.contains("0.000000,0.000000,0.000000"), "F1 defined as 0: {main_row}");
}

#[test]
fn contextual_vectors_flow_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ctx_run");
    let mut args = toy_train_args(&out);
    args.contextual = Some(repo_root().join("data/toy/train.ctx"));
    args.dev_contextual = Some(repo_root().join("data/toy/train.ctx"));
    cli::run_train(args).unwrap();

    // checkpoint remembers the contextual width; eval without the file fails
    let missing = cli::run_eval(EvalArgs {
        model: out.join("model.ckpt"),
        data: repo_root().join("data/toy/train.txt"),
        task: None,
        contextual: None,
        out: Some(out.clone()),
    });
    match missing {
        Err(e) => assert_eq!(e.exit_code(), 1),
        Ok(_) => panic!("eval must demand the contextual file"),
    }
    cli::run_eval(EvalArgs {
        model: out.join("model.ckpt"),
        data: repo_root().join("data/toy/train.txt"),
        task: None,
        contextual: Some(repo_root().join("data/toy/train.ctx")),
        out: Some(out.clone()),
    })
    .unwrap();
}

#[test]
fn manifest_roundtrips_through_json() {
    let dir = tempfile::tempdir().unwrap();
    cli::run_train(toy_train_args(dir.path())).unwrap();
    let manifest = RunManifest::read(&dir.path().join("manifest_train.json")).unwrap();
    assert_eq!(manifest.command, "train");
    assert_eq!(manifest.config.hidden_dim, 16);
    assert!(manifest.train_path.unwrap().ends_with("train.txt"));
}

#[test]
fn bench_handles_single_cell_grid() {
    let dir = tempfile::tempdir().unwrap();
    cli::run_bench(cli::BenchArgs {
        n: 1,
        workers: 1,
        directions: sentigrid::DirectionMode::Quad,
        out: Some(dir.path().to_path_buf()),
    })
    .unwrap();
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5, "header + one row per scan: {csv}");
    for row in csv.lines().skip(1) {
        assert!(row.starts_with("1,quad,"), "{row}");
    }
}

#[test]
fn decoded_corpus_scores_perfect_f1() {
    // parse -> encode -> decode -> score(decoded, gold) == 1.0 per split
    for file in ["data/toy/train.txt", "data/fixtures/aste_v2/train.txt"] {
        let examples = parse_dataset(&repo_root().join(file), Task::Aste).unwrap();
        let golds: Vec<Gold> = examples.iter().map(|e| e.gold.clone()).collect();
        let decoded: Vec<Gold> = examples
            .iter()
            .map(|e| {
                let grid = encode_grid(e.n(), &e.gold).expect("conflict-free");
                Gold::Triplets(decode_aste(&grid, sentigrid::config::BioRepair::OrphanToBegin))
            })
            .collect();
        let report = score(&decoded, &golds, Task::Aste);
        assert_eq!(report.main.f1, 1.0, "{file}");
    }
}
