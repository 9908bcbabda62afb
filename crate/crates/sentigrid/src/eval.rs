//! Exact-match precision / recall / F1.
//!
//! A predicted item counts only if every boundary (and the polarity, where
//! the mode carries one) equals a gold item. Counts are micro-averaged over
//! the corpus. Subtask breakdowns: AE and OE match spans only.

use std::collections::BTreeSet;
use std::fmt;

use crate::config::Task;
use crate::tagging::{Gold, Polarity, Span};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: Real,
    pub recall: Real,
    pub f1: Real,
    pub tp: usize,
    pub pred: usize,
    pub gold: usize,
}

impl Prf {
    pub fn from_counts(tp: usize, pred: usize, gold: usize) -> Self {
        let precision = if pred == 0 { 0.0 } else { tp as Real / pred as Real };
        let recall = if gold == 0 { 0.0 } else { tp as Real / gold as Real };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf { precision, recall, f1, tp, pred, gold }
    }
}

impl fmt::Display for Prf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "P {:6.2}  R {:6.2}  F1 {:6.2}  (tp {}, pred {}, gold {})",
            self.precision * 100.0,
            self.recall * 100.0,
            self.f1 * 100.0,
            self.tp,
            self.pred,
            self.gold
        )
    }
}

/// Corpus-level metric report: the main task metric plus span-only subtasks.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub task: Task,
    pub main: Prf,
    pub aspect_extraction: Prf,
    pub opinion_extraction: Prf,
}

impl MetricReport {
    pub fn csv_header() -> &'static str {
        "metric,precision,recall,f1,tp,pred,gold"
    }

    pub fn to_csv(&self) -> String {
        let row = |name: &str, p: &Prf| {
            format!(
                "{name},{:.6},{:.6},{:.6},{},{},{}",
                p.precision, p.recall, p.f1, p.tp, p.pred, p.gold
            )
        };
        let main_name = match self.task {
            Task::Aste => "ASTE",
            Task::Aesc => "AESC",
        };
        format!(
            "{}\n{}\n{}\n{}\n",
            Self::csv_header(),
            row(main_name, &self.main),
            row("AE", &self.aspect_extraction),
            row("OE", &self.opinion_extraction)
        )
    }

    pub fn to_table(&self) -> String {
        let main_name = match self.task {
            Task::Aste => "ASTE",
            Task::Aesc => "AESC",
        };
        format!(
            "{:<6} {}\n{:<6} {}\n{:<6} {}\n",
            main_name, self.main, "AE", self.aspect_extraction, "OE", self.opinion_extraction
        )
    }
}

fn count_overlap<T: Ord>(pred: &BTreeSet<T>, gold: &BTreeSet<T>) -> usize {
    pred.intersection(gold).count()
}

/// Score predicted against gold annotations, micro-averaged over examples.
/// Both slices must be aligned (same example order).
pub fn score(preds: &[Gold], golds: &[Gold], task: Task) -> MetricReport {
    assert_eq!(preds.len(), golds.len(), "prediction/gold example count mismatch");
    let mut main = (0usize, 0usize, 0usize);
    let mut ae = (0usize, 0usize, 0usize);
    let mut oe = (0usize, 0usize, 0usize);

    for (p, g) in preds.iter().zip(golds) {
        match task {
            Task::Aste => {
                let ps: BTreeSet<_> = match p {
                    Gold::Triplets(t) => t.iter().copied().collect(),
                    _ => BTreeSet::new(),
                };
                let gs: BTreeSet<_> = match g {
                    Gold::Triplets(t) => t.iter().copied().collect(),
                    _ => BTreeSet::new(),
                };
                main.0 += count_overlap(&ps, &gs);
                main.1 += ps.len();
                main.2 += gs.len();
            }
            Task::Aesc => {
                let ps: BTreeSet<(Span, Polarity)> = match p {
                    Gold::AspectPolarities { aspects, .. } => aspects.iter().copied().collect(),
                    _ => BTreeSet::new(),
                };
                let gs: BTreeSet<(Span, Polarity)> = match g {
                    Gold::AspectPolarities { aspects, .. } => aspects.iter().copied().collect(),
                    _ => BTreeSet::new(),
                };
                main.0 += count_overlap(&ps, &gs);
                main.1 += ps.len();
                main.2 += gs.len();
            }
        }
        let (pa, po) = (p.aspect_spans(), p.opinion_spans());
        let (ga, go) = (g.aspect_spans(), g.opinion_spans());
        ae.0 += count_overlap(&pa, &ga);
        ae.1 += pa.len();
        ae.2 += ga.len();
        oe.0 += count_overlap(&po, &go);
        oe.1 += po.len();
        oe.2 += go.len();
    }

    MetricReport {
        task,
        main: Prf::from_counts(main.0, main.1, main.2),
        aspect_extraction: Prf::from_counts(ae.0, ae.1, ae.2),
        opinion_extraction: Prf::from_counts(oe.0, oe.1, oe.2),
    }
}
