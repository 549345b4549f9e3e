//! Evaluation: confusion matrices, per-class precision/recall/F1, Cohen's
//! kappa for annotator agreement, and the evaluation report format.
//!
//! Undefined ratios follow the 0-convention: a precision, recall or F1
//! whose denominator is zero is reported as 0 rather than NaN, so reports
//! stay printable for degenerate predictors.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::corpus::{AddresseeClass, AddresseeFlag, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::model::{LabeledSample, ModelParams};

pub const REPORT_TAG: &str = "arvsu-eval/1";

/// Square count matrix; rows index the reference label, columns the
/// prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    cells: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidConfig(
                "confusion matrix needs at least 2 classes".into(),
            ));
        }
        Ok(ConfusionMatrix {
            k,
            cells: vec![0; k * k],
        })
    }

    pub fn from_pairs(k: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut m = ConfusionMatrix::new(k)?;
        for (truth, pred) in pairs {
            m.record(truth, pred)?;
        }
        Ok(m)
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.k || pred >= self.k {
            return Err(Error::IndexOutOfRange {
                what: "confusion matrix class",
                index: truth.max(pred),
                len: self.k,
            });
        }
        self.cells[truth * self.k + pred] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn count(&self, truth: usize, pred: usize) -> usize {
        self.cells[truth * self.k + pred]
    }

    pub fn total(&self) -> usize {
        self.cells.iter().sum()
    }

    pub fn row_total(&self, truth: usize) -> usize {
        (0..self.k).map(|j| self.count(truth, j)).sum()
    }

    pub fn col_total(&self, pred: usize) -> usize {
        (0..self.k).map(|i| self.count(i, pred)).sum()
    }

    fn ratio(num: usize, den: usize) -> f64 {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        let correct: usize = (0..self.k).map(|i| self.count(i, i)).sum();
        Self::ratio(correct, self.total())
    }

    /// Fraction of class-`c` predictions that were correct.
    pub fn precision(&self, c: usize) -> f64 {
        Self::ratio(self.count(c, c), self.col_total(c))
    }

    /// Fraction of true class-`c` samples that were found.
    pub fn recall(&self, c: usize) -> f64 {
        Self::ratio(self.count(c, c), self.row_total(c))
    }

    pub fn f1(&self, c: usize) -> f64 {
        let (p, r) = (self.precision(c), self.recall(c));
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn macro_f1(&self) -> f64 {
        (0..self.k).map(|c| self.f1(c)).sum::<f64>() / self.k as f64
    }
}

/// Run a model over labelled samples and tally its confusion matrix.
pub fn evaluate(params: &ModelParams, samples: &[LabeledSample]) -> Result<ConfusionMatrix> {
    if samples.is_empty() {
        return Err(Error::EmptyInput {
            what: "evaluation set",
        });
    }
    let mut m = ConfusionMatrix::new(params.config().num_classes)?;
    for s in samples {
        let pred = params.predict(&s.input)?;
        m.record(s.label.index(), pred)?;
    }
    Ok(m)
}

/// Cohen's kappa between two equal-length label sequences. Categories are
/// whatever values appear in either sequence. When expected agreement is 1
/// (both raters stuck to one shared category), kappa is defined as 1 for
/// perfect agreement and 0 otherwise.
pub fn cohen_kappa<T: Ord>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "cohen_kappa",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    if a.is_empty() {
        return Err(Error::EmptyInput {
            what: "cohen_kappa",
        });
    }
    let cats: Vec<&T> = a.iter().chain(b.iter()).collect::<BTreeSet<_>>().into_iter().collect();
    let index = |x: &T| cats.binary_search_by(|c| (*c).cmp(x)).unwrap();
    let k = cats.len();
    let n = a.len() as f64;

    let mut joint = vec![0usize; k * k];
    for (x, y) in a.iter().zip(b) {
        joint[index(x) * k + index(y)] += 1;
    }
    let p_o = (0..k).map(|i| joint[i * k + i]).sum::<usize>() as f64 / n;
    let p_e: f64 = (0..k)
        .map(|i| {
            let row: usize = (0..k).map(|j| joint[i * k + j]).sum();
            let col: usize = (0..k).map(|j| joint[j * k + i]).sum();
            (row as f64 / n) * (col as f64 / n)
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(if (1.0 - p_o).abs() < 1e-15 { 1.0 } else { 0.0 });
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Per-flag agreement between two annotators over the same turns: each flag
/// is reduced to a present/absent series and scored with binary kappa.
pub fn binary_kappa_per_flag(
    a: &[Vec<AddresseeFlag>],
    b: &[Vec<AddresseeFlag>],
) -> Result<Vec<(AddresseeFlag, f64)>> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "binary_kappa_per_flag",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    AddresseeFlag::ALL
        .into_iter()
        .map(|flag| {
            let pa: Vec<bool> = a.iter().map(|set| set.contains(&flag)).collect();
            let pb: Vec<bool> = b.iter().map(|set| set.contains(&flag)).collect();
            Ok((flag, cohen_kappa(&pa, &pb)?))
        })
        .collect()
}

/// A finished evaluation: what was scored and its three-class confusion.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub variant: String,
    pub split: String,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    pub fn new(variant: impl Into<String>, split: impl Into<String>, confusion: ConfusionMatrix) -> Result<Self> {
        if confusion.classes() != NUM_CLASSES {
            return Err(Error::InvalidConfig(format!(
                "evaluation reports cover {NUM_CLASSES} classes, got {}",
                confusion.classes()
            )));
        }
        Ok(EvalReport {
            variant: variant.into(),
            split: split.into(),
            confusion,
        })
    }

    /// Human-readable table: per-class precision/recall/F1 as percentages
    /// with one decimal, overall accuracy, and the raw confusion counts.
    pub fn text_table(&self) -> String {
        let m = &self.confusion;
        let pct = |v: f64| format!("{:.1}%", 100.0 * v);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24} {:>10} {:>10} {:>10}",
            "class", "precision", "recall", "F1"
        );
        for c in AddresseeClass::ALL {
            let i = c.index();
            let _ = writeln!(
                out,
                "{:<24} {:>10} {:>10} {:>10}",
                c.name(),
                pct(m.precision(i)),
                pct(m.recall(i)),
                pct(m.f1(i))
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "accuracy {} over {} samples ({} / {})",
            pct(m.accuracy()),
            m.total(),
            (0..NUM_CLASSES).map(|i| m.count(i, i)).sum::<usize>(),
            m.total()
        );
        let _ = writeln!(out);
        let _ = writeln!(out, "confusion matrix (rows = reference, columns = predicted)");
        let _ = write!(out, "{:<14}", "");
        for c in AddresseeClass::ALL {
            let _ = write!(out, " {:>13}", c.token());
        }
        out.push('\n');
        for truth in AddresseeClass::ALL {
            let _ = write!(out, "{:<14}", truth.token());
            for pred in AddresseeClass::ALL {
                let _ = write!(out, " {:>13}", m.count(truth.index(), pred.index()));
            }
            out.push('\n');
        }
        out
    }

    /// Machine-readable serialisation. Every derived metric is written out,
    /// and [`parse_report`] re-derives and cross-checks them, so a report
    /// cannot silently disagree with its own confusion matrix.
    pub fn emit(&self) -> String {
        let m = &self.confusion;
        let mut out = String::new();
        let _ = writeln!(out, "{REPORT_TAG}");
        let _ = writeln!(out, "variant={}", self.variant);
        let _ = writeln!(out, "split={}", self.split);
        let _ = writeln!(out, "n={}", m.total());
        let _ = writeln!(out, "accuracy={}", m.accuracy());
        for c in AddresseeClass::ALL {
            let i = c.index();
            let _ = writeln!(out, "precision.{}={}", c.token(), m.precision(i));
            let _ = writeln!(out, "recall.{}={}", c.token(), m.recall(i));
            let _ = writeln!(out, "f1.{}={}", c.token(), m.f1(i));
        }
        for i in 0..NUM_CLASSES {
            for j in 0..NUM_CLASSES {
                let _ = writeln!(out, "confusion.{i}.{j}={}", m.count(i, j));
            }
        }
        out
    }
}

/// Parse [`EvalReport::emit`] output, verifying that the stored metrics
/// match the confusion matrix exactly.
pub fn parse_report(text: &str) -> Result<EvalReport> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, tag)) if tag == REPORT_TAG => {}
        _ => return Err(Error::BadMagic),
    }
    let mut next_kv = |want_key: &str| -> Result<String> {
        match lines.next() {
            Some((i, line)) => {
                let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                    path: "<report>".into(),
                    line: i + 1,
                    msg: format!("expected `{want_key}=...`"),
                })?;
                if key != want_key {
                    return Err(Error::Parse {
                        path: "<report>".into(),
                        line: i + 1,
                        msg: format!("expected key `{want_key}`, found `{key}`"),
                    });
                }
                Ok(value.to_string())
            }
            None => Err(Error::Truncated(format!("report ends before `{want_key}`"))),
        }
    };

    let variant = next_kv("variant")?;
    let split = next_kv("split")?;
    let n: usize = next_kv("n")?
        .parse()
        .map_err(|_| Error::Truncated("bad n".into()))?;
    let accuracy: f64 = next_kv("accuracy")?
        .parse()
        .map_err(|_| Error::Truncated("bad accuracy".into()))?;
    let mut per_class = Vec::new();
    for c in AddresseeClass::ALL {
        let p: f64 = next_kv(&format!("precision.{}", c.token()))?
            .parse()
            .map_err(|_| Error::Truncated("bad precision".into()))?;
        let r: f64 = next_kv(&format!("recall.{}", c.token()))?
            .parse()
            .map_err(|_| Error::Truncated("bad recall".into()))?;
        let f: f64 = next_kv(&format!("f1.{}", c.token()))?
            .parse()
            .map_err(|_| Error::Truncated("bad f1".into()))?;
        per_class.push((p, r, f));
    }
    let mut m = ConfusionMatrix::new(NUM_CLASSES)?;
    for i in 0..NUM_CLASSES {
        for j in 0..NUM_CLASSES {
            let v: usize = next_kv(&format!("confusion.{i}.{j}"))?
                .parse()
                .map_err(|_| Error::Truncated("bad confusion cell".into()))?;
            m.cells[i * NUM_CLASSES + j] = v;
        }
    }

    let check = |name: &str, stored: f64, derived: f64| -> Result<()> {
        if stored.to_bits() != derived.to_bits() {
            return Err(Error::ChecksumMismatch);
        }
        let _ = name;
        Ok(())
    };
    if n != m.total() {
        return Err(Error::ChecksumMismatch);
    }
    check("accuracy", accuracy, m.accuracy())?;
    for (i, &(p, r, f)) in per_class.iter().enumerate() {
        check("precision", p, m.precision(i))?;
        check("recall", r, m.recall(i))?;
        check("f1", f, m.f1(i))?;
    }
    EvalReport::new(variant, split, m)
}
