//! Token representation: `x_i = [x_char; x_word; x_plm]`.
//!
//! The word table is initialized from a GloVe-style text file and frozen
//! (it never enters the parameter store). The character encoder is a small
//! bidirectional LSTM over the token's characters, trained end to end.
//! Contextual vectors, when attached to examples, are frozen input features.
//! The concatenation is projected to the model dimension by a learned linear
//! map, then learned absolute position embeddings are added.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::config::ModelConfig;
use crate::data::Example;
use crate::params::{xavier, Bindings, ParamStore};
use crate::rng::SeedRng;
use crate::tensor::{Graph, NodeId, Real, Tensor};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("{path}:{line}: malformed embedding line (bad or miscounted floats)")]
    ParseLine { path: String, line: usize },
    #[error("embedding file {path} has {file_dim}-dimensional rows but config expects {config_dim}")]
    DimMismatch { path: String, file_dim: usize, config_dim: usize },
    #[error("example {id}: contextual vectors expected (plm dim {dim}) but none attached")]
    MissingContextual { id: usize, dim: usize },
    #[error("example {id}: sentence length {n} exceeds max_len {max_len}")]
    TooLong { id: usize, n: usize, max_len: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

/// Word and character index maps. Index 0 is PAD, index 1 is UNK in both.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Vocab {
    words: Vec<String>,
    chars: Vec<char>,
    #[serde(skip)]
    word_index: HashMap<String, usize>,
    #[serde(skip)]
    char_index: HashMap<char, usize>,
}

impl Vocab {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;

    /// Build from a corpus: words lowercased for lookup, characters kept raw.
    pub fn build<'a>(token_lists: impl IntoIterator<Item = &'a [String]>) -> Vocab {
        let mut vocab = Vocab {
            words: vec!["<pad>".into(), "<unk>".into()],
            chars: vec!['\u{0}', '\u{1}'],
            word_index: HashMap::new(),
            char_index: HashMap::new(),
        };
        for tokens in token_lists {
            for token in tokens {
                let lower = token.to_lowercase();
                if !vocab.word_index.contains_key(&lower) {
                    vocab.word_index.insert(lower.clone(), vocab.words.len());
                    vocab.words.push(lower);
                }
                for c in token.chars() {
                    if !vocab.char_index.contains_key(&c) {
                        vocab.char_index.insert(c, vocab.chars.len());
                        vocab.chars.push(c);
                    }
                }
            }
        }
        vocab.word_index.insert("<pad>".into(), Self::PAD);
        vocab.word_index.insert("<unk>".into(), Self::UNK);
        vocab
    }

    /// Rebuild the lookup maps after deserialization.
    pub fn reindex(&mut self) {
        self.word_index = self.words.iter().cloned().enumerate().map(|(i, w)| (w, i)).collect();
        self.char_index = self.chars.iter().copied().enumerate().map(|(i, c)| (c, i)).collect();
    }

    pub fn n_words(&self) -> usize {
        self.words.len()
    }

    pub fn n_chars(&self) -> usize {
        self.chars.len()
    }

    pub fn word_id(&self, token: &str) -> usize {
        self.word_index.get(&token.to_lowercase()).copied().unwrap_or(Self::UNK)
    }

    /// Character ids without lowercasing; an empty token becomes `[PAD]`.
    pub fn char_ids(&self, token: &str) -> Vec<usize> {
        if token.is_empty() {
            return vec![Self::PAD];
        }
        token.chars().map(|c| self.char_index.get(&c).copied().unwrap_or(Self::UNK)).collect()
    }
}

/// Load a whitespace-separated `token v1 .. v_dim` embedding file into a
/// `|V| x dim` table. Rows for out-of-vocabulary tokens are sampled
/// uniform(-0.1, 0.1) from the `embed.word.oov` stream; the PAD row is zero.
/// The returned table is a frozen buffer, never a trainable parameter.
pub fn load_word_embeddings(
    path: &Path,
    dim: usize,
    vocab: &Vocab,
    seed: &SeedRng,
) -> Result<Tensor, EmbedError> {
    let text = std::fs::read_to_string(path)?;
    let mut table = random_word_table(dim, vocab, seed);
    let path_str = path.display().to_string();

    let mut seen: Vec<bool> = vec![false; vocab.n_words()];
    let mut file_dim: Option<usize> = None;
    let mut loaded = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("non-empty line has a token");
        let values: Result<Vec<Real>, _> = parts.map(|t| t.parse::<Real>()).collect();
        let values = values.map_err(|_| EmbedError::ParseLine {
            path: path_str.clone(),
            line: lineno + 1,
        })?;
        match file_dim {
            None => {
                if values.len() != dim {
                    return Err(EmbedError::DimMismatch {
                        path: path_str,
                        file_dim: values.len(),
                        config_dim: dim,
                    });
                }
                file_dim = Some(values.len());
            }
            Some(fd) if values.len() != fd => {
                return Err(EmbedError::ParseLine { path: path_str, line: lineno + 1 });
            }
            _ => {}
        }
        let id = vocab.word_id(token);
        if id == Vocab::UNK || id == Vocab::PAD {
            continue; // token not in this corpus
        }
        if seen[id] {
            log::warn!("{path_str}:{}: duplicate token '{token}', first occurrence wins", lineno + 1);
            continue;
        }
        seen[id] = true;
        loaded += 1;
        table.data_mut()[id * dim..(id + 1) * dim].copy_from_slice(&values);
    }
    if file_dim.is_none() {
        log::warn!("{path_str}: empty embedding file, all rows randomly initialized");
    }
    log::info!("loaded {loaded}/{} word vectors from {path_str}", vocab.n_words().saturating_sub(2));
    Ok(table)
}

/// Table with every row sampled uniform(-0.1, 0.1) and a zero PAD row; used
/// when no embedding file is given and as the OOV base during loading.
pub fn random_word_table(dim: usize, vocab: &Vocab, seed: &SeedRng) -> Tensor {
    let mut rng = seed.split("embed.word.oov");
    let mut data: Vec<Real> =
        (0..vocab.n_words() * dim).map(|_| rng.gen_range(-0.1..0.1)).collect();
    data[Vocab::PAD * dim..(Vocab::PAD + 1) * dim].iter_mut().for_each(|v| *v = 0.0);
    Tensor::matrix(vocab.n_words(), dim, data)
}

// ── parameters ───────────────────────────────────────────────────────

/// Per-direction char LSTM state width.
pub fn char_hidden(cfg: &ModelConfig) -> usize {
    cfg.char_out_dim / 2
}

/// Register the embedding-side parameters: char table + biLSTM, the
/// input projection, and position embeddings.
pub fn init_params(cfg: &ModelConfig, n_chars: usize, store: &mut ParamStore, seed: &SeedRng) {
    if cfg.use_char {
        let h = char_hidden(cfg);
        store.insert(
            "embed.char.table",
            crate::params::uniform(
                vec![n_chars, cfg.char_emb_dim],
                -0.1,
                0.1,
                &mut seed.split("embed.char.table"),
            ),
        );
        for dir in ["fw", "bw"] {
            store.insert(
                &format!("embed.char.{dir}.wx"),
                xavier(cfg.char_emb_dim, 4 * h, &mut seed.split(&format!("embed.char.{dir}.wx"))),
            );
            store.insert(
                &format!("embed.char.{dir}.wh"),
                xavier(h, 4 * h, &mut seed.split(&format!("embed.char.{dir}.wh"))),
            );
            store.insert(&format!("embed.char.{dir}.b"), crate::params::zeros_row(4 * h));
        }
    }
    store.insert(
        "embed.proj.w",
        xavier(cfg.input_dim(), cfg.hidden_dim, &mut seed.split("embed.proj.w")),
    );
    store.insert("embed.proj.b", crate::params::zeros_row(cfg.hidden_dim));
    if cfg.positional {
        store.insert(
            "embed.pos",
            crate::params::uniform(
                vec![cfg.max_len, cfg.hidden_dim],
                -0.1,
                0.1,
                &mut seed.split("embed.pos"),
            ),
        );
    }
}

/// One LSTM sweep over embedded characters; returns the final hidden state.
fn lstm_sweep(
    g: &mut Graph,
    binds: &Bindings,
    prefix: &str,
    embedded: NodeId,
    order: impl Iterator<Item = usize>,
    hidden: usize,
) -> Result<NodeId, EmbedError> {
    let wx = binds.get(&format!("{prefix}.wx"));
    let wh = binds.get(&format!("{prefix}.wh"));
    let b = binds.get(&format!("{prefix}.b"));
    let mut h = g.constant(Tensor::row(vec![0.0; hidden]));
    let mut c = g.constant(Tensor::row(vec![0.0; hidden]));
    for t in order {
        let x_t = g.gather_rows(embedded, &[t])?;
        let xw = g.matmul(x_t, wx)?;
        let hw = g.matmul(h, wh)?;
        let pre = g.add(xw, hw)?;
        let pre = g.add_bias(pre, b)?;
        let i_gate = g.slice_cols(pre, 0, hidden)?;
        let f_gate = g.slice_cols(pre, hidden, hidden)?;
        let o_gate = g.slice_cols(pre, 2 * hidden, hidden)?;
        let g_gate = g.slice_cols(pre, 3 * hidden, hidden)?;
        let i_gate = g.sigmoid(i_gate);
        let f_gate = g.sigmoid(f_gate);
        let o_gate = g.sigmoid(o_gate);
        let g_gate = g.tanh(g_gate);
        let fc = g.mul(f_gate, c)?;
        let ig = g.mul(i_gate, g_gate)?;
        c = g.add(fc, ig)?;
        let tc = g.tanh(c);
        h = g.mul(o_gate, tc)?;
    }
    Ok(h)
}

/// Character-level representation of one token: biLSTM over its characters,
/// final forward and backward states concatenated (`[1 x char_out_dim]`).
pub fn encode_chars(
    g: &mut Graph,
    binds: &Bindings,
    cfg: &ModelConfig,
    char_ids: &[usize],
) -> Result<NodeId, EmbedError> {
    debug_assert!(!char_ids.is_empty(), "empty tokens map to [PAD] upstream");
    let h = char_hidden(cfg);
    let table = binds.get("embed.char.table");
    let embedded = g.gather_rows(table, char_ids)?;
    let len = char_ids.len();
    let fwd = lstm_sweep(g, binds, "embed.char.fw", embedded, 0..len, h)?;
    let bwd = lstm_sweep(g, binds, "embed.char.bw", embedded, (0..len).rev(), h)?;
    Ok(g.concat(&[fwd, bwd], 1)?)
}

/// Full token representation of a sentence: `[n x hidden_dim]` after the
/// learned projection and position embeddings.
pub fn token_representation(
    g: &mut Graph,
    binds: &Bindings,
    cfg: &ModelConfig,
    vocab: &Vocab,
    word_table: &Tensor,
    ex: &Example,
) -> Result<NodeId, EmbedError> {
    let n = ex.n();
    if cfg.positional && n > cfg.max_len {
        return Err(EmbedError::TooLong { id: ex.id, n, max_len: cfg.max_len });
    }

    // frozen parts (word + contextual) as one constant matrix
    let word_dim = cfg.word_dim;
    let plm_dim = cfg.plm_dim.unwrap_or(0);
    let mut frozen = Vec::with_capacity(n * (word_dim + plm_dim));
    let contextual = match (cfg.plm_dim, &ex.contextual) {
        (Some(dim), None) => return Err(EmbedError::MissingContextual { id: ex.id, dim }),
        (Some(_), Some(vecs)) => Some(vecs),
        (None, _) => None,
    };
    for (i, token) in ex.tokens.iter().enumerate() {
        let wid = vocab.word_id(token);
        frozen.extend_from_slice(&word_table.data()[wid * word_dim..(wid + 1) * word_dim]);
        if let Some(vecs) = contextual {
            frozen.extend_from_slice(&vecs[i]);
        }
    }
    let frozen = g.constant(Tensor::matrix(n, word_dim + plm_dim, frozen));

    let x = if cfg.use_char {
        let mut char_rows = Vec::with_capacity(n);
        for token in &ex.tokens {
            let ids = vocab.char_ids(token);
            char_rows.push(encode_chars(g, binds, cfg, &ids)?);
        }
        let char_part = g.concat(&char_rows, 0)?;
        g.concat(&[char_part, frozen], 1)?
    } else {
        frozen
    };

    let proj = g.matmul(x, binds.get("embed.proj.w"))?;
    let mut s0 = g.add_bias(proj, binds.get("embed.proj.b"))?;
    if cfg.positional {
        let rows: Vec<usize> = (0..n).collect();
        let pos = g.gather_rows(binds.get("embed.pos"), &rows)?;
        s0 = g.add(s0, pos)?;
    }
    Ok(s0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::data::parse_dataset_str;
    use crate::tensor::grad_check;

    fn toy_vocab() -> Vocab {
        let sents: Vec<Vec<String>> =
            vec![["Great", "screen", "and", "fast", "startup", "."].map(String::from).to_vec()];
        Vocab::build(sents.iter().map(|s| s.as_slice()))
    }

    fn micro_cfg() -> ModelConfig {
        ModelConfig {
            word_dim: 6,
            char_emb_dim: 4,
            char_out_dim: 8,
            hidden_dim: 8,
            n_heads: 2,
            max_len: 16,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn vocab_lowercases_words_not_chars() {
        let v = toy_vocab();
        assert_eq!(v.word_id("GREAT"), v.word_id("great"));
        assert_ne!(v.word_id("screen"), Vocab::UNK);
        assert_eq!(v.word_id("nonexistent"), Vocab::UNK);
        // chars stay cased: 'G' is known, lowercase 'g' never appeared
        assert!(v.char_ids("G")[0] > Vocab::UNK);
        assert_eq!(v.char_ids("g")[0], Vocab::UNK);
    }

    #[test]
    fn empty_token_maps_to_pad_char() {
        let v = toy_vocab();
        assert_eq!(v.char_ids(""), vec![Vocab::PAD]);
    }

    #[test]
    fn glove_row_stored_verbatim() {
        let v = toy_vocab();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        let dim = 6;
        std::fs::write(&path, "screen 0.1 0.2 0.3 0.4 0.5 0.6\nscreen 9 9 9 9 9 9\n").unwrap();
        let table = load_word_embeddings(&path, dim, &v, &SeedRng::new(1)).unwrap();
        let id = v.word_id("screen");
        let row = &table.data()[id * dim..(id + 1) * dim];
        assert_eq!(row, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6], "first occurrence wins");
    }

    #[test]
    fn empty_file_random_init_and_zero_pad_row() {
        let v = toy_vocab();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.txt");
        std::fs::write(&path, "").unwrap();
        let table = load_word_embeddings(&path, 4, &v, &SeedRng::new(1)).unwrap();
        assert!(table.data()[..4].iter().all(|&x| x == 0.0), "PAD row is zero");
        assert!(table.data()[4..].iter().any(|&x| x != 0.0), "other rows randomized");
        assert!(table.data().iter().all(|x| x.abs() < 0.1));
    }

    #[test]
    fn dim_mismatch_is_config_error() {
        let v = toy_vocab();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        std::fs::write(&path, "screen 1 2 3\n").unwrap();
        match load_word_embeddings(&path, 6, &v, &SeedRng::new(1)) {
            Err(EmbedError::DimMismatch { file_dim: 3, config_dim: 6, .. }) => {}
            other => panic!("expected dim mismatch, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let v = toy_vocab();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        std::fs::write(&path, "screen 1 2 3\nfast 1 oops 3\n").unwrap();
        match load_word_embeddings(&path, 3, &v, &SeedRng::new(1)) {
            Err(EmbedError::ParseLine { line: 2, .. }) => {}
            other => panic!("expected parse error at line 2, got {other:?}"),
        }
    }

    #[test]
    fn char_encoder_deterministic_and_right_width() {
        let v = toy_vocab();
        let cfg = micro_cfg();
        let seed = SeedRng::new(3);
        let mut store = ParamStore::new();
        init_params(&cfg, v.n_chars(), &mut store, &seed);

        let run = |store: &ParamStore| {
            let mut g = Graph::new();
            let binds = store.bind_all(&mut g);
            let out = encode_chars(&mut g, &binds, &cfg, &v.char_ids("fast")).unwrap();
            g.value(out).data().to_vec()
        };
        let a = run(&store);
        let b = run(&store);
        assert_eq!(a.len(), cfg.char_out_dim);
        assert_eq!(a, b, "identical tokens give identical vectors");
        assert!(a.iter().all(|x| x.is_finite()));

        // 1-char token works (length-1 sequence both directions)
        let mut g = Graph::new();
        let binds = store.bind_all(&mut g);
        let out = encode_chars(&mut g, &binds, &cfg, &v.char_ids(".")).unwrap();
        assert_eq!(g.value(out).len(), cfg.char_out_dim);
        assert!(g.value(out).all_finite());
    }

    #[test]
    fn char_table_gradients_match_finite_differences() {
        let v = toy_vocab();
        let cfg = micro_cfg();
        let seed = SeedRng::new(5);
        let mut store = ParamStore::new();
        init_params(&cfg, v.n_chars(), &mut store, &seed);
        let ids = v.char_ids("fast");
        let report = grad_check(&mut store, 1e-5, 1e-4, |s, g| {
            let binds = s.bind_all(g);
            let out = match encode_chars(g, &binds, &cfg, &ids) {
                Ok(out) => out,
                Err(EmbedError::Tensor(t)) => return Err(t),
                Err(other) => panic!("{other}"),
            };
            let sq = g.mul(out, out)?;
            Ok((g.sum(sq), binds))
        })
        .unwrap();
        assert!(report.pass, "{report}");
    }

    #[test]
    fn token_representation_dims() {
        let text = "Great screen and fast startup .####[([1], [0], 'POS')]";
        let mut exs = parse_dataset_str(text, "mem", crate::config::Task::Aste).unwrap();
        let v = Vocab::build(exs.iter().map(|e| e.tokens.as_slice()));
        let mut cfg = micro_cfg();
        let seed = SeedRng::new(7);
        let mut store = ParamStore::new();
        init_params(&cfg, v.n_chars(), &mut store, &seed);
        let table = random_word_table(cfg.word_dim, &v, &seed);

        let mut g = Graph::new();
        let binds = store.bind_all(&mut g);
        let s0 = token_representation(&mut g, &binds, &cfg, &v, &table, &exs[0]).unwrap();
        assert_eq!(g.value(s0).shape(), &[6, cfg.hidden_dim]);

        // with contextual vectors attached the input widens, output stays d
        exs[0].contextual = Some(vec![vec![0.5; 3]; 6]);
        cfg.plm_dim = Some(3);
        let mut store = ParamStore::new();
        init_params(&cfg, v.n_chars(), &mut store, &seed);
        assert_eq!(cfg.input_dim(), 8 + 6 + 3);
        let mut g = Graph::new();
        let binds = store.bind_all(&mut g);
        let s0 = token_representation(&mut g, &binds, &cfg, &v, &table, &exs[0]).unwrap();
        assert_eq!(g.value(s0).shape(), &[6, cfg.hidden_dim]);

        // missing vectors when plm is configured -> error naming the example
        exs[0].contextual = None;
        let mut g = Graph::new();
        let binds = store.bind_all(&mut g);
        match token_representation(&mut g, &binds, &cfg, &v, &table, &exs[0]) {
            Err(EmbedError::MissingContextual { id: 0, .. }) => {}
            other => panic!("expected missing-contextual error, got {other:?}"),
        }
    }

    #[test]
    fn disabling_char_only_shrinks_input_dim() {
        let mut cfg = micro_cfg();
        let with = cfg.input_dim();
        cfg.use_char = false;
        assert_eq!(cfg.input_dim(), with - cfg.char_out_dim);
    }
}
