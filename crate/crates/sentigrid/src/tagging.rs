//! Span-level grid tagging codec.
//!
//! An n-token sentence maps to an n x n grid: the main diagonal carries BIO
//! term tags (`O`, `B-A`, `I-A`, `B-O`, `I-O`), the strict upper triangle
//! carries pair polarities (`NONE`, `POS`, `NEU`, `NEG`). A triplet
//! (aspect, opinion, polarity) writes its polarity into the single cell
//! (earlier span start, later span start). Decoding inverts the scheme: BIO
//! spans off the diagonal (with orphan-I repair), then one cell probe per
//! candidate aspect-opinion pair.
//!
//! Aspect-polarity pairs (no opinion term) use cell (start, end) when the
//! aspect is multi-token; single-token aspects are handled by a dedicated
//! per-token polarity row over the diagonal, since their cell would sit on
//! the diagonal itself.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::config::BioRepair;
use crate::tensor::Real;

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("span {span} out of bounds for {n} tokens")]
    OutOfBounds { span: Span, n: usize },
    #[error("overlapping {kind:?} spans {a} and {b}")]
    Overlap { kind: SpanKind, a: Span, b: Span },
    #[error("aspect span {aspect} overlaps opinion span {opinion} in one triplet")]
    AspectOpinionOverlap { aspect: Span, opinion: Span },
    #[error("aspect span {aspect} and opinion span {opinion} share start index {start}; the pair cell map is ambiguous")]
    StartCollision { aspect: Span, opinion: Span, start: usize },
    #[error("cell ({row}, {col}) claimed with {existing:?} by {first} and with {requested:?} by {second}")]
    PolarityConflict {
        row: usize,
        col: usize,
        existing: Polarity,
        requested: Polarity,
        first: Triplet,
        second: Triplet,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum SpanKind {
    Aspect,
    Opinion,
}

/// Token index range, both ends inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        assert!(start <= end, "span start {start} > end {end}");
        Span { start, end }
    }

    pub fn single(i: usize) -> Self {
        Span { start: i, end: i }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_single(&self) -> bool {
        self.start == self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.start, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Polarity {
    Pos,
    Neu,
    Neg,
}

impl Polarity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Polarity::Pos => "POS",
            Polarity::Neu => "NEU",
            Polarity::Neg => "NEG",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct Triplet {
    pub aspect: Span,
    pub opinion: Span,
    pub polarity: Polarity,
}

impl fmt::Display for Triplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(A{}, O{}, {})", self.aspect, self.opinion, self.polarity)
    }
}

/// Diagonal term tag. Class index order is the head's logit order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TermTag {
    Outside,
    AspectBegin,
    AspectInside,
    OpinionBegin,
    OpinionInside,
}

impl TermTag {
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        match self {
            TermTag::Outside => 0,
            TermTag::AspectBegin => 1,
            TermTag::AspectInside => 2,
            TermTag::OpinionBegin => 3,
            TermTag::OpinionInside => 4,
        }
    }

    pub fn from_index(i: usize) -> Self {
        match i {
            0 => TermTag::Outside,
            1 => TermTag::AspectBegin,
            2 => TermTag::AspectInside,
            3 => TermTag::OpinionBegin,
            4 => TermTag::OpinionInside,
            _ => panic!("term tag index {i} out of range"),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TermTag::Outside => "O",
            TermTag::AspectBegin => "B-A",
            TermTag::AspectInside => "I-A",
            TermTag::OpinionBegin => "B-O",
            TermTag::OpinionInside => "I-O",
        }
    }
}

/// Upper-triangle cell label. `None` is a trained class (index 0) so decoding
/// can reject spurious pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairLabel {
    None,
    Pos,
    Neu,
    Neg,
}

impl PairLabel {
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        match self {
            PairLabel::None => 0,
            PairLabel::Pos => 1,
            PairLabel::Neu => 2,
            PairLabel::Neg => 3,
        }
    }

    pub fn from_index(i: usize) -> Self {
        match i {
            0 => PairLabel::None,
            1 => PairLabel::Pos,
            2 => PairLabel::Neu,
            3 => PairLabel::Neg,
            _ => panic!("pair label index {i} out of range"),
        }
    }

    pub fn from_polarity(p: Polarity) -> Self {
        match p {
            Polarity::Pos => PairLabel::Pos,
            Polarity::Neu => PairLabel::Neu,
            Polarity::Neg => PairLabel::Neg,
        }
    }

    pub fn polarity(self) -> Option<Polarity> {
        match self {
            PairLabel::None => None,
            PairLabel::Pos => Some(Polarity::Pos),
            PairLabel::Neu => Some(Polarity::Neu),
            PairLabel::Neg => Some(Polarity::Neg),
        }
    }
}

/// Gold annotations of one sentence.
#[derive(Debug, Clone, PartialEq)]
pub enum Gold {
    Triplets(Vec<Triplet>),
    AspectPolarities { aspects: Vec<(Span, Polarity)>, opinions: Vec<Span> },
}

impl Gold {
    pub fn aspect_spans(&self) -> BTreeSet<Span> {
        match self {
            Gold::Triplets(ts) => ts.iter().map(|t| t.aspect).collect(),
            Gold::AspectPolarities { aspects, .. } => aspects.iter().map(|(s, _)| *s).collect(),
        }
    }

    pub fn opinion_spans(&self) -> BTreeSet<Span> {
        match self {
            Gold::Triplets(ts) => ts.iter().map(|t| t.opinion).collect(),
            Gold::AspectPolarities { opinions, .. } => opinions.iter().copied().collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Gold::Triplets(ts) => ts.is_empty(),
            Gold::AspectPolarities { aspects, opinions } => aspects.is_empty() && opinions.is_empty(),
        }
    }
}

/// The n x n label grid: BIO tags on the diagonal, polarities strictly above
/// it (packed row-major), plus a per-token polarity row used by the
/// aspect-polarity task for single-token aspects.
#[derive(Debug, Clone, PartialEq)]
pub struct TagGrid {
    n: usize,
    diag: Vec<TermTag>,
    pairs: Vec<PairLabel>,
    diag_polarity: Option<Vec<PairLabel>>,
}

/// Packed index of strict-upper cell (i, j), j > i, row-major.
pub fn upper_index(i: usize, j: usize, n: usize) -> usize {
    debug_assert!(j > i && j < n);
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

/// Number of strict-upper cells of an n x n grid.
pub fn upper_cell_count(n: usize) -> usize {
    n * (n - 1) / 2
}

/// All strict-upper (i, j) pairs in packed order.
pub fn upper_cells(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

impl TagGrid {
    pub fn empty(n: usize, with_diag_polarity: bool) -> Self {
        TagGrid {
            n,
            diag: vec![TermTag::Outside; n],
            pairs: vec![PairLabel::None; upper_cell_count(n)],
            diag_polarity: with_diag_polarity.then(|| vec![PairLabel::None; n]),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn diag(&self) -> &[TermTag] {
        &self.diag
    }

    pub fn diag_mut(&mut self) -> &mut [TermTag] {
        &mut self.diag
    }

    pub fn pair(&self, i: usize, j: usize) -> PairLabel {
        self.pairs[upper_index(i, j, self.n)]
    }

    pub fn set_pair(&mut self, i: usize, j: usize, label: PairLabel) {
        self.pairs[upper_index(i, j, self.n)] = label;
    }

    pub fn pairs(&self) -> &[PairLabel] {
        &self.pairs
    }

    pub fn pairs_mut(&mut self) -> &mut [PairLabel] {
        &mut self.pairs
    }

    pub fn diag_polarity(&self) -> Option<&[PairLabel]> {
        self.diag_polarity.as_deref()
    }

    pub fn diag_polarity_mut(&mut self) -> Option<&mut Vec<PairLabel>> {
        self.diag_polarity.as_mut()
    }
}

// ── encoding ─────────────────────────────────────────────────────────

/// Encode gold annotations into a grid; total on well-formed gold, explicit
/// error on anything that would make decoding ambiguous.
pub fn encode_grid(n: usize, gold: &Gold) -> Result<TagGrid, EncodeError> {
    match gold {
        Gold::Triplets(triplets) => encode_aste(n, triplets),
        Gold::AspectPolarities { aspects, opinions } => encode_aesc(n, aspects, opinions),
    }
}

fn check_spans(
    n: usize,
    kind: SpanKind,
    spans: impl Iterator<Item = Span> + Clone,
) -> Result<(), EncodeError> {
    let unique: Vec<Span> = {
        let mut v: Vec<Span> = spans.clone().collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    for s in &unique {
        if s.end >= n {
            return Err(EncodeError::OutOfBounds { span: *s, n });
        }
    }
    for w in unique.windows(2) {
        if w[0].overlaps(&w[1]) {
            return Err(EncodeError::Overlap { kind, a: w[0], b: w[1] });
        }
    }
    Ok(())
}

fn write_span(diag: &mut [TermTag], span: Span, kind: SpanKind) {
    let (begin, inside) = match kind {
        SpanKind::Aspect => (TermTag::AspectBegin, TermTag::AspectInside),
        SpanKind::Opinion => (TermTag::OpinionBegin, TermTag::OpinionInside),
    };
    diag[span.start] = begin;
    for i in span.start + 1..=span.end {
        diag[i] = inside;
    }
}

fn encode_aste(n: usize, triplets: &[Triplet]) -> Result<TagGrid, EncodeError> {
    check_spans(n, SpanKind::Aspect, triplets.iter().map(|t| t.aspect))?;
    check_spans(n, SpanKind::Opinion, triplets.iter().map(|t| t.opinion))?;
    for t in triplets {
        if t.aspect.overlaps(&t.opinion) {
            return Err(EncodeError::AspectOpinionOverlap { aspect: t.aspect, opinion: t.opinion });
        }
    }
    // A shared start between an aspect span and an opinion span makes two
    // different pairs collide on one cell; reject up front so the round trip
    // stays exact for everything we accept.
    for a in triplets.iter().map(|t| t.aspect) {
        for o in triplets.iter().map(|t| t.opinion) {
            if a != o && a.start == o.start {
                return Err(EncodeError::StartCollision { aspect: a, opinion: o, start: a.start });
            }
        }
    }

    let mut grid = TagGrid::empty(n, false);
    for t in triplets {
        write_span(&mut grid.diag, t.aspect, SpanKind::Aspect);
        write_span(&mut grid.diag, t.opinion, SpanKind::Opinion);
    }
    let mut claimed: Vec<Option<Triplet>> = vec![None; upper_cell_count(n)];
    for t in triplets {
        let (row, col) = pair_cell(t.aspect, t.opinion);
        let idx = upper_index(row, col, n);
        let label = PairLabel::from_polarity(t.polarity);
        if let Some(first) = claimed[idx] {
            if grid.pairs[idx] != label {
                return Err(EncodeError::PolarityConflict {
                    row,
                    col,
                    existing: grid.pairs[idx].polarity().expect("claimed cell has polarity"),
                    requested: t.polarity,
                    first,
                    second: *t,
                });
            }
            continue; // duplicate claim with equal polarity
        }
        claimed[idx] = Some(*t);
        grid.pairs[idx] = label;
    }
    Ok(grid)
}

/// Convention cell for an aspect-opinion pair: (earlier start, later start).
pub fn pair_cell(aspect: Span, opinion: Span) -> (usize, usize) {
    if aspect.start < opinion.start {
        (aspect.start, opinion.start)
    } else {
        (opinion.start, aspect.start)
    }
}

fn encode_aesc(
    n: usize,
    aspects: &[(Span, Polarity)],
    opinions: &[Span],
) -> Result<TagGrid, EncodeError> {
    check_spans(n, SpanKind::Aspect, aspects.iter().map(|(s, _)| *s))?;
    check_spans(n, SpanKind::Opinion, opinions.iter().copied())?;
    for (a, _) in aspects {
        for o in opinions {
            if a.overlaps(o) {
                return Err(EncodeError::AspectOpinionOverlap { aspect: *a, opinion: *o });
            }
        }
    }
    let mut grid = TagGrid::empty(n, true);
    for (span, _) in aspects {
        write_span(&mut grid.diag, *span, SpanKind::Aspect);
    }
    for span in opinions {
        write_span(&mut grid.diag, *span, SpanKind::Opinion);
    }
    let diag_pola = grid.diag_polarity.as_mut().expect("aesc grid has diagonal polarity row");
    for (span, polarity) in aspects {
        let label = PairLabel::from_polarity(*polarity);
        if span.is_single() {
            diag_pola[span.start] = label;
        } else {
            grid.pairs[upper_index(span.start, span.end, n)] = label;
        }
    }
    Ok(grid)
}

// ── decoding ─────────────────────────────────────────────────────────

/// Raw per-cell scores carried alongside a predicted grid; aspect-polarity
/// decoding needs them because every extracted aspect must receive a
/// polarity even when the argmax label is `NONE`.
#[derive(Debug, Clone)]
pub struct GridScores {
    /// `[cells x 4]` row-major over the packed strict upper triangle.
    pub pair: Vec<Real>,
    /// `[n x 4]` over diagonal positions (aspect-polarity task only).
    pub diag_polarity: Option<Vec<Real>>,
}

/// Read BIO spans off the diagonal, repairing orphan I tags.
pub fn decode_spans(diag: &[TermTag], repair: BioRepair) -> (Vec<Span>, Vec<Span>) {
    let mut aspects = Vec::new();
    let mut opinions = Vec::new();
    let mut open: Option<(SpanKind, usize)> = None;

    let close = |open: &mut Option<(SpanKind, usize)>, end: usize, aspects: &mut Vec<Span>, opinions: &mut Vec<Span>| {
        if let Some((kind, start)) = open.take() {
            let span = Span::new(start, end);
            match kind {
                SpanKind::Aspect => aspects.push(span),
                SpanKind::Opinion => opinions.push(span),
            }
        }
    };

    for (i, tag) in diag.iter().enumerate() {
        match tag {
            TermTag::Outside => close(&mut open, i.wrapping_sub(1), &mut aspects, &mut opinions),
            TermTag::AspectBegin => {
                close(&mut open, i.wrapping_sub(1), &mut aspects, &mut opinions);
                open = Some((SpanKind::Aspect, i));
            }
            TermTag::OpinionBegin => {
                close(&mut open, i.wrapping_sub(1), &mut aspects, &mut opinions);
                open = Some((SpanKind::Opinion, i));
            }
            TermTag::AspectInside => match open {
                Some((SpanKind::Aspect, _)) => {}
                _ => {
                    close(&mut open, i.wrapping_sub(1), &mut aspects, &mut opinions);
                    if repair == BioRepair::OrphanToBegin {
                        open = Some((SpanKind::Aspect, i));
                    }
                }
            },
            TermTag::OpinionInside => match open {
                Some((SpanKind::Opinion, _)) => {}
                _ => {
                    close(&mut open, i.wrapping_sub(1), &mut aspects, &mut opinions);
                    if repair == BioRepair::OrphanToBegin {
                        open = Some((SpanKind::Opinion, i));
                    }
                }
            },
        }
    }
    close(&mut open, diag.len().wrapping_sub(1), &mut aspects, &mut opinions);
    (aspects, opinions)
}

/// Decode a grid into triplets: one cell probe per aspect-opinion candidate.
pub fn decode_aste(grid: &TagGrid, repair: BioRepair) -> Vec<Triplet> {
    let (aspects, opinions) = decode_spans(grid.diag(), repair);
    let mut out = Vec::new();
    for &a in &aspects {
        for &o in &opinions {
            let (row, col) = pair_cell(a, o);
            if row == col {
                continue; // shared start; cell would be diagonal
            }
            if let Some(p) = grid.pair(row, col).polarity() {
                out.push(Triplet { aspect: a, opinion: o, polarity: p });
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Decode a grid into (aspect, polarity) pairs plus opinion spans. Every
/// extracted aspect gets a polarity: the hard label if present, otherwise the
/// argmax over {POS, NEU, NEG} scores (never NONE). Aspects whose convention
/// cell holds NONE and for which no scores are supplied are skipped.
pub fn decode_aesc(
    grid: &TagGrid,
    scores: Option<&GridScores>,
    repair: BioRepair,
) -> (Vec<(Span, Polarity)>, Vec<Span>) {
    let n = grid.n();
    let (aspects, opinions) = decode_spans(grid.diag(), repair);
    let mut pairs = Vec::new();
    for &a in &aspects {
        let (hard, score_row) = if a.is_single() {
            let hard = grid.diag_polarity().map(|d| d[a.start]).unwrap_or(PairLabel::None);
            let row = scores
                .and_then(|s| s.diag_polarity.as_ref())
                .map(|d| &d[a.start * PairLabel::COUNT..(a.start + 1) * PairLabel::COUNT]);
            (hard, row)
        } else {
            let idx = upper_index(a.start, a.end, n);
            let row = scores.map(|s| &s.pair[idx * PairLabel::COUNT..(idx + 1) * PairLabel::COUNT]);
            (grid.pair(a.start, a.end), row)
        };
        let polarity = match hard.polarity() {
            Some(p) => Some(p),
            None => score_row.map(argmax_polarity),
        };
        if let Some(p) = polarity {
            pairs.push((a, p));
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    (pairs, opinions)
}

/// Argmax over the three polarity classes of a 4-wide score row (NONE excluded).
fn argmax_polarity(row: &[Real]) -> Polarity {
    debug_assert_eq!(row.len(), PairLabel::COUNT);
    let mut best = 1;
    for k in 2..PairLabel::COUNT {
        if row[k] > row[best] {
            best = k;
        }
    }
    PairLabel::from_index(best).polarity().expect("index >= 1 is a polarity")
}
