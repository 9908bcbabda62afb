//! Dataset ingestion.
//!
//! One example per line: the tokenized sentence, the `####` separator, then a
//! bracketed list of annotations, each `([aspect indices], [opinion indices],
//! 'POS'|'NEU'|'NEG')`. This is the convention the public triplet corpora
//! ship in, so those files load unmodified. Aspect-polarity corpora reuse the
//! same shape with an empty index list where a side is absent.

use std::path::Path;

use thiserror::Error;

use crate::config::Task;
use crate::tagging::{Gold, Polarity, Span, Triplet};
use crate::tensor::Real;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("{path}:{line}: missing '####' separator")]
    MissingSeparator { path: String, line: usize },
    #[error("{path}:{line}:{col}: {msg}")]
    Syntax { path: String, line: usize, col: usize, msg: String },
    #[error("{path}:{line}: unknown polarity string '{0}'", .polarity)]
    UnknownPolarity { path: String, line: usize, polarity: String },
    #[error("{path}:{line}: non-contiguous token index list {indices:?}")]
    NonContiguous { path: String, line: usize, indices: Vec<usize> },
    #[error("{path}:{line}: token index {index} out of range for {n} tokens")]
    IndexOutOfRange { path: String, line: usize, index: usize, n: usize },
    #[error("{path}:{line}: triplet task requires non-empty aspect and opinion index lists")]
    EmptySpanForTriplet { path: String, line: usize },
    #[error("example {id}: contextual record has {got} vectors for {want} tokens")]
    ContextualMisaligned { id: usize, got: usize, want: usize },
    #[error("contextual file {path}:{line}: {msg}")]
    ContextualSyntax { path: String, line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One sentence with its gold annotations.
#[derive(Debug, Clone)]
pub struct Example {
    /// Zero-based index within the dataset file; contextual-vector records
    /// are keyed by this id.
    pub id: usize,
    pub tokens: Vec<String>,
    pub gold: Gold,
    /// Optional precomputed contextual vectors, one width-p row per token.
    pub contextual: Option<Vec<Vec<Real>>>,
}

impl Example {
    pub fn n(&self) -> usize {
        self.tokens.len()
    }
}

/// Parse a dataset file. Annotation records are deduplicated with a warning;
/// everything else malformed is a hard error naming the line.
pub fn parse_dataset(path: &Path, task: Task) -> Result<Vec<Example>, ParseError> {
    let text = std::fs::read_to_string(path)?;
    parse_dataset_str(&text, &path.display().to_string(), task)
}

pub fn parse_dataset_str(text: &str, path: &str, task: Task) -> Result<Vec<Example>, ParseError> {
    let mut examples = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end();
        if line.trim().is_empty() {
            continue;
        }
        let lineidx = lineno + 1;
        let (sentence, ann) = line.split_once("####").ok_or_else(|| ParseError::MissingSeparator {
            path: path.to_string(),
            line: lineidx,
        })?;
        let tokens: Vec<String> = sentence.split_whitespace().map(str::to_string).collect();
        let n = tokens.len();
        let records = parse_annotation_list(ann, path, lineidx)?;

        let mut triplets: Vec<Triplet> = Vec::new();
        let mut aspects: Vec<(Span, Polarity)> = Vec::new();
        let mut opinions: Vec<Span> = Vec::new();
        for (aspect_idx, opinion_idx, polarity) in records {
            let aspect = indices_to_span(&aspect_idx, n, path, lineidx)?;
            let opinion = indices_to_span(&opinion_idx, n, path, lineidx)?;
            match task {
                Task::Aste => {
                    let (aspect, opinion) = match (aspect, opinion) {
                        (Some(a), Some(o)) => (a, o),
                        _ => {
                            return Err(ParseError::EmptySpanForTriplet {
                                path: path.to_string(),
                                line: lineidx,
                            })
                        }
                    };
                    triplets.push(Triplet { aspect, opinion, polarity });
                }
                Task::Aesc => {
                    if let Some(a) = aspect {
                        aspects.push((a, polarity));
                    }
                    if let Some(o) = opinion {
                        opinions.push(o);
                    }
                }
            }
        }

        let gold = match task {
            Task::Aste => {
                let before = triplets.len();
                triplets.sort_unstable();
                triplets.dedup();
                if triplets.len() < before {
                    log::warn!("{path}:{lineidx}: {} duplicate triplet(s) dropped", before - triplets.len());
                }
                Gold::Triplets(triplets)
            }
            Task::Aesc => {
                let before = aspects.len() + opinions.len();
                aspects.sort_unstable();
                aspects.dedup();
                opinions.sort_unstable();
                opinions.dedup();
                if aspects.len() + opinions.len() < before {
                    log::warn!("{path}:{lineidx}: duplicate annotation(s) dropped");
                }
                Gold::AspectPolarities { aspects, opinions }
            }
        };

        examples.push(Example { id: examples.len(), tokens, gold, contextual: None });
    }
    Ok(examples)
}

fn indices_to_span(
    indices: &[usize],
    n: usize,
    path: &str,
    line: usize,
) -> Result<Option<Span>, ParseError> {
    if indices.is_empty() {
        return Ok(None);
    }
    for w in indices.windows(2) {
        if w[1] != w[0] + 1 {
            return Err(ParseError::NonContiguous {
                path: path.to_string(),
                line,
                indices: indices.to_vec(),
            });
        }
    }
    let (start, end) = (indices[0], *indices.last().unwrap());
    if end >= n {
        return Err(ParseError::IndexOutOfRange { path: path.to_string(), line, index: end, n });
    }
    Ok(Some(Span::new(start, end)))
}

type Record = (Vec<usize>, Vec<usize>, Polarity);

/// Recursive-descent parse of `[([i..], [j..], 'POL'), ...]`.
fn parse_annotation_list(s: &str, path: &str, line: usize) -> Result<Vec<Record>, ParseError> {
    let mut p = Cursor { chars: s.char_indices().peekable(), path, line, text: s };
    p.skip_ws();
    p.expect('[')?;
    let mut records = Vec::new();
    p.skip_ws();
    if p.peek() == Some(']') {
        p.next_char();
        return Ok(records);
    }
    loop {
        records.push(p.record()?);
        p.skip_ws();
        match p.next_char() {
            Some(',') => {
                p.skip_ws();
                // tolerate a trailing comma before the closing bracket
                if p.peek() == Some(']') {
                    p.next_char();
                    break;
                }
            }
            Some(']') => break,
            other => return Err(p.err(format!("expected ',' or ']', got {other:?}"))),
        }
    }
    Ok(records)
}

struct Cursor<'a> {
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
    path: &'a str,
    line: usize,
    text: &'a str,
}

impl<'a> Cursor<'a> {
    fn col(&mut self) -> usize {
        self.chars.peek().map(|(i, _)| i + 1).unwrap_or(self.text.len() + 1)
    }

    fn err(&mut self, msg: String) -> ParseError {
        ParseError::Syntax { path: self.path.to_string(), line: self.line, col: self.col(), msg }
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().map(|&(_, c)| c)
    }

    fn next_char(&mut self) -> Option<char> {
        self.chars.next().map(|(_, c)| c)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.next_char();
        }
    }

    fn expect(&mut self, want: char) -> Result<(), ParseError> {
        match self.next_char() {
            Some(c) if c == want => Ok(()),
            other => Err(self.err(format!("expected '{want}', got {other:?}"))),
        }
    }

    fn record(&mut self) -> Result<Record, ParseError> {
        self.skip_ws();
        self.expect('(')?;
        let aspect = self.index_list()?;
        self.skip_ws();
        self.expect(',')?;
        let opinion = self.index_list()?;
        self.skip_ws();
        self.expect(',')?;
        let polarity = self.polarity()?;
        self.skip_ws();
        self.expect(')')?;
        Ok((aspect, opinion, polarity))
    }

    fn index_list(&mut self) -> Result<Vec<usize>, ParseError> {
        self.skip_ws();
        self.expect('[')?;
        let mut out = Vec::new();
        self.skip_ws();
        if self.peek() == Some(']') {
            self.next_char();
            return Ok(out);
        }
        loop {
            out.push(self.integer()?);
            self.skip_ws();
            match self.next_char() {
                Some(',') => self.skip_ws(),
                Some(']') => break,
                other => return Err(self.err(format!("expected ',' or ']', got {other:?}"))),
            }
        }
        Ok(out)
    }

    fn integer(&mut self) -> Result<usize, ParseError> {
        self.skip_ws();
        let mut digits = String::new();
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            digits.push(self.next_char().unwrap());
        }
        if digits.is_empty() {
            return Err(self.err("expected a token index".into()));
        }
        digits.parse().map_err(|e| self.err(format!("bad index: {e}")))
    }

    fn polarity(&mut self) -> Result<Polarity, ParseError> {
        self.skip_ws();
        let quote = match self.next_char() {
            Some(q @ ('\'' | '"')) => q,
            other => return Err(self.err(format!("expected quoted polarity, got {other:?}"))),
        };
        let mut word = String::new();
        loop {
            match self.next_char() {
                Some(c) if c == quote => break,
                Some(c) => word.push(c),
                None => return Err(self.err("unterminated polarity string".into())),
            }
        }
        match word.as_str() {
            "POS" => Ok(Polarity::Pos),
            "NEU" => Ok(Polarity::Neu),
            "NEG" => Ok(Polarity::Neg),
            other => Err(ParseError::UnknownPolarity {
                path: self.path.to_string(),
                line: self.line,
                polarity: other.to_string(),
            }),
        }
    }
}

// ── contextual vectors ───────────────────────────────────────────────

/// Attach precomputed contextual vectors from a line-oriented file: per
/// record an `id<TAB>n<TAB>p` header, then n lines of p floats. Returns the
/// vector width. Examples without a record simply stay without vectors.
pub fn load_contextual(path: &Path, examples: &mut [Example]) -> Result<usize, ParseError> {
    let text = std::fs::read_to_string(path)?;
    let path_str = path.display().to_string();
    let mut lines = text.lines().enumerate().peekable();
    let mut width: Option<usize> = None;

    while let Some((lineno, raw)) = lines.next() {
        if raw.trim().is_empty() {
            continue;
        }
        let mut parts = raw.split('\t');
        let parse_field = |field: Option<&str>, what: &str, lineno: usize| -> Result<usize, ParseError> {
            field
                .and_then(|f| f.trim().parse().ok())
                .ok_or_else(|| ParseError::ContextualSyntax {
                    path: path_str.clone(),
                    line: lineno + 1,
                    msg: format!("bad {what} in header"),
                })
        };
        let id = parse_field(parts.next(), "example id", lineno)?;
        let n = parse_field(parts.next(), "vector count", lineno)?;
        let p = parse_field(parts.next(), "vector dim", lineno)?;
        if let Some(w) = width {
            if w != p {
                return Err(ParseError::ContextualSyntax {
                    path: path_str.clone(),
                    line: lineno + 1,
                    msg: format!("vector dim {p} differs from earlier dim {w}"),
                });
            }
        }
        width = Some(p);

        let mut vectors = Vec::with_capacity(n);
        for _ in 0..n {
            let (vlineno, vline) = lines.next().ok_or_else(|| ParseError::ContextualSyntax {
                path: path_str.clone(),
                line: lineno + 1,
                msg: format!("record {id} truncated: expected {n} vector lines"),
            })?;
            let vals: Result<Vec<Real>, _> =
                vline.split_whitespace().map(|t| t.parse::<Real>()).collect();
            let vals = vals.map_err(|e| ParseError::ContextualSyntax {
                path: path_str.clone(),
                line: vlineno + 1,
                msg: format!("bad float: {e}"),
            })?;
            if vals.len() != p {
                return Err(ParseError::ContextualSyntax {
                    path: path_str.clone(),
                    line: vlineno + 1,
                    msg: format!("expected {p} floats, got {}", vals.len()),
                });
            }
            vectors.push(vals);
        }

        if let Some(ex) = examples.iter_mut().find(|e| e.id == id) {
            if ex.n() != n {
                return Err(ParseError::ContextualMisaligned { id, got: n, want: ex.n() });
            }
            ex.contextual = Some(vectors);
        } else {
            log::warn!("{path_str}: contextual record for unknown example id {id} ignored");
        }
    }
    Ok(width.unwrap_or(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_triplet_line() {
        let text = "It is a great device .####[([4], [3], 'POS')]\n";
        let exs = parse_dataset_str(text, "mem", Task::Aste).unwrap();
        assert_eq!(exs.len(), 1);
        assert_eq!(exs[0].tokens.len(), 6);
        match &exs[0].gold {
            Gold::Triplets(ts) => {
                assert_eq!(ts.len(), 1);
                assert_eq!(ts[0].aspect, Span::new(4, 4));
                assert_eq!(ts[0].opinion, Span::new(3, 3));
                assert_eq!(ts[0].polarity, Polarity::Pos);
            }
            _ => panic!("expected triplets"),
        }
    }

    #[test]
    fn multi_token_spans_and_multiple_records() {
        let text = "The battery life could be better .####[([1, 2], [3, 4, 5], 'NEG'), ([1, 2], [3, 4, 5], 'NEG')]";
        let exs = parse_dataset_str(text, "mem", Task::Aste).unwrap();
        match &exs[0].gold {
            Gold::Triplets(ts) => {
                assert_eq!(ts.len(), 1, "duplicates deduplicated");
                assert_eq!(ts[0].aspect, Span::new(1, 2));
                assert_eq!(ts[0].opinion, Span::new(3, 5));
            }
            _ => panic!(),
        }
    }

    #[test]
    fn missing_separator_is_an_error() {
        let err = parse_dataset_str("no separator here", "mem", Task::Aste).unwrap_err();
        assert!(matches!(err, ParseError::MissingSeparator { line: 1, .. }));
    }

    #[test]
    fn non_contiguous_indices_rejected() {
        let text = "a b c d####[([0, 2], [3], 'POS')]";
        let err = parse_dataset_str(text, "mem", Task::Aste).unwrap_err();
        assert!(matches!(err, ParseError::NonContiguous { .. }));
    }

    #[test]
    fn unknown_polarity_rejected() {
        let text = "a b####[([0], [1], 'MEH')]";
        let err = parse_dataset_str(text, "mem", Task::Aste).unwrap_err();
        assert!(matches!(err, ParseError::UnknownPolarity { .. }));
    }

    #[test]
    fn syntax_error_reports_line_and_column() {
        let text = "a b####[([0], [1] 'POS')]"; // missing comma
        match parse_dataset_str(text, "mem", Task::Aste).unwrap_err() {
            ParseError::Syntax { line, col, .. } => {
                assert_eq!(line, 1);
                assert!(col > 0);
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn aesc_allows_empty_opinion_list() {
        let text = "The screen is great .####[([1], [], 'POS'), ([], [3], 'POS')]";
        let exs = parse_dataset_str(text, "mem", Task::Aesc).unwrap();
        match &exs[0].gold {
            Gold::AspectPolarities { aspects, opinions } => {
                assert_eq!(aspects, &[(Span::new(1, 1), Polarity::Pos)]);
                assert_eq!(opinions, &[Span::new(3, 3)]);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn aste_rejects_empty_side() {
        let text = "a b####[([0], [], 'POS')]";
        let err = parse_dataset_str(text, "mem", Task::Aste).unwrap_err();
        assert!(matches!(err, ParseError::EmptySpanForTriplet { .. }));
    }

    #[test]
    fn contextual_attach_and_misalignment() {
        let mut exs =
            parse_dataset_str("a b c####[([0], [1], 'POS')]", "mem", Task::Aste).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.ctx");
        std::fs::write(&good, "0\t3\t2\n0.1 0.2\n0.3 0.4\n0.5 0.6\n").unwrap();
        let width = load_contextual(&good, &mut exs).unwrap();
        assert_eq!(width, 2);
        assert_eq!(exs[0].contextual.as_ref().unwrap().len(), 3);

        let mut exs2 =
            parse_dataset_str("a b c####[([0], [1], 'POS')]", "mem", Task::Aste).unwrap();
        let bad = dir.path().join("bad.ctx");
        std::fs::write(&bad, "0\t2\t2\n0.1 0.2\n0.3 0.4\n").unwrap();
        let err = load_contextual(&bad, &mut exs2).unwrap_err();
        assert!(matches!(err, ParseError::ContextualMisaligned { id: 0, got: 2, want: 3 }));
    }
}
