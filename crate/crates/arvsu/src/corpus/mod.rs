//! Corpus handling: raw annotation flags, the collapsed three-class label
//! scheme, deterministic splits, inverse-frequency class weights, and
//! placeholder visual features for corpora that ship without real ones.

mod format;
mod synthetic;

pub use format::{
    read_corpus, read_raw_annotations, write_corpus, write_raw_annotations, CORPUS_TAG, RAW_TAG,
};
pub use synthetic::{generate_synthetic, quota_counts, SignalRegime, SynthOptions};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::{fnv1a64, Rng};

/// One raw annotation flag. An annotator may attach several to a turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AddresseeFlag {
    LineOfSight,
    Photographer,
    Monologue,
    Others,
    NotApplicable,
}

impl AddresseeFlag {
    pub const ALL: [AddresseeFlag; 5] = [
        AddresseeFlag::LineOfSight,
        AddresseeFlag::Photographer,
        AddresseeFlag::Monologue,
        AddresseeFlag::Others,
        AddresseeFlag::NotApplicable,
    ];

    /// Stable lowercase token used in annotation files.
    pub fn token(self) -> &'static str {
        match self {
            AddresseeFlag::LineOfSight => "los",
            AddresseeFlag::Photographer => "photographer",
            AddresseeFlag::Monologue => "monologue",
            AddresseeFlag::Others => "others",
            AddresseeFlag::NotApplicable => "not_applicable",
        }
    }
}

impl FromStr for AddresseeFlag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AddresseeFlag::ALL
            .into_iter()
            .find(|f| f.token() == s)
            .ok_or_else(|| Error::Usage(format!("unknown annotation flag `{s}`")))
    }
}

/// Training label after collapsing the raw flags to three classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AddresseeClass {
    LineOfSight,
    Photographer,
    Others,
}

pub const NUM_CLASSES: usize = 3;

impl AddresseeClass {
    pub const ALL: [AddresseeClass; NUM_CLASSES] = [
        AddresseeClass::LineOfSight,
        AddresseeClass::Photographer,
        AddresseeClass::Others,
    ];

    pub fn index(self) -> usize {
        match self {
            AddresseeClass::LineOfSight => 0,
            AddresseeClass::Photographer => 1,
            AddresseeClass::Others => 2,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or(Error::InvalidLabel(i))
    }

    /// Human-readable name used in report tables.
    pub fn name(self) -> &'static str {
        match self {
            AddresseeClass::LineOfSight => "Line-of-Sight Entities",
            AddresseeClass::Photographer => "Photographer",
            AddresseeClass::Others => "Others",
        }
    }

    /// Short token used in machine-readable files and priority lists.
    pub fn token(self) -> &'static str {
        match self {
            AddresseeClass::LineOfSight => "los",
            AddresseeClass::Photographer => "photographer",
            AddresseeClass::Others => "others",
        }
    }
}

impl fmt::Display for AddresseeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AddresseeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AddresseeClass::ALL
            .into_iter()
            .find(|c| c.token() == s)
            .ok_or_else(|| {
                Error::Usage(format!(
                    "unknown class `{s}` (expected los, photographer or others)"
                ))
            })
    }
}

/// An annotated turn as produced by annotators, before label collapsing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawAnnotation {
    pub record_id: String,
    /// Flag set; duplicates are tolerated on input and ignored.
    pub flags: Vec<AddresseeFlag>,
    /// Normalised speaker head location.
    pub head_loc: [f64; 2],
    pub utterance: String,
}

/// A fully prepared training record.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRecord {
    pub record_id: String,
    pub label: AddresseeClass,
    pub head_loc: [f64; 2],
    pub utterance: String,
    pub saliency: Vec<f64>,
    pub speaker: Vec<f64>,
}

/// Tie-break order for multi-flag annotations: a permutation of the three
/// classes, highest priority first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Priority([AddresseeClass; NUM_CLASSES]);

impl Default for Priority {
    /// Photographer wins over line-of-sight entities, which win over
    /// everything else: the rarer, more specific addressee takes the turn.
    fn default() -> Self {
        Priority([
            AddresseeClass::Photographer,
            AddresseeClass::LineOfSight,
            AddresseeClass::Others,
        ])
    }
}

impl Priority {
    pub fn new(order: [AddresseeClass; NUM_CLASSES]) -> Result<Self> {
        for c in AddresseeClass::ALL {
            if !order.contains(&c) {
                return Err(Error::Usage(format!(
                    "priority must list each class exactly once (missing {})",
                    c.token()
                )));
            }
        }
        Ok(Priority(order))
    }

    pub fn order(&self) -> &[AddresseeClass; NUM_CLASSES] {
        &self.0
    }
}

impl fmt::Display for Priority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{}",
            self.0[0].token(),
            self.0[1].token(),
            self.0[2].token()
        )
    }
}

impl FromStr for Priority {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != NUM_CLASSES {
            return Err(Error::Usage(format!(
                "priority must list exactly {NUM_CLASSES} classes, got {}",
                parts.len()
            )));
        }
        let mut order = [AddresseeClass::Others; NUM_CLASSES];
        for (slot, part) in order.iter_mut().zip(&parts) {
            *slot = part.parse()?;
        }
        Priority::new(order)
    }
}

/// Collapse a raw flag set to a training label.
///
/// * An empty set is an annotation error.
/// * Any `not_applicable` flag drops the record (`Ok(None)`).
/// * `monologue` and `others` both collapse to [`AddresseeClass::Others`].
/// * When several classes remain, `priority` picks the winner.
pub fn reorganize_label(
    flags: &[AddresseeFlag],
    priority: &Priority,
) -> Result<Option<AddresseeClass>> {
    if flags.is_empty() {
        return Err(Error::EmptyFlagSet);
    }
    if flags.contains(&AddresseeFlag::NotApplicable) {
        return Ok(None);
    }
    let mut present = [false; NUM_CLASSES];
    for &f in flags {
        let class = match f {
            AddresseeFlag::LineOfSight => AddresseeClass::LineOfSight,
            AddresseeFlag::Photographer => AddresseeClass::Photographer,
            AddresseeFlag::Monologue | AddresseeFlag::Others => AddresseeClass::Others,
            AddresseeFlag::NotApplicable => unreachable!("handled above"),
        };
        present[class.index()] = true;
    }
    for &c in priority.order() {
        if present[c.index()] {
            return Ok(Some(c));
        }
    }
    unreachable!("non-empty flag set maps to at least one class")
}

/// Inverse-frequency class weights `w_c = N / (k * N_c)`; a balanced corpus
/// gets weight 1 for every class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassWeights {
    weights: [f64; NUM_CLASSES],
}

impl ClassWeights {
    pub fn from_counts(counts: [usize; NUM_CLASSES]) -> Result<Self> {
        let n: usize = counts.iter().sum();
        let mut weights = [0.0; NUM_CLASSES];
        for (i, &c) in counts.iter().enumerate() {
            if c == 0 {
                return Err(Error::ZeroClassCount(i));
            }
            weights[i] = n as f64 / (NUM_CLASSES as f64 * c as f64);
        }
        Ok(ClassWeights { weights })
    }

    pub fn uniform() -> Self {
        ClassWeights {
            weights: [1.0; NUM_CLASSES],
        }
    }

    pub fn get(&self, class: AddresseeClass) -> f64 {
        self.weights[class.index()]
    }

    pub fn as_array(&self) -> [f64; NUM_CLASSES] {
        self.weights
    }
}

/// Per-class record counts with percentage formatting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassStats {
    pub counts: [usize; NUM_CLASSES],
}

impl ClassStats {
    pub fn of(records: &[CorpusRecord]) -> Self {
        let mut counts = [0usize; NUM_CLASSES];
        for r in records {
            counts[r.label.index()] += 1;
        }
        ClassStats { counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Share of class `c` as a percentage of the total.
    pub fn percent(&self, c: AddresseeClass) -> f64 {
        100.0 * self.counts[c.index()] as f64 / self.total() as f64
    }
}

impl fmt::Display for ClassStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:>10} {:>8}", "class", "records", "share")?;
        for c in AddresseeClass::ALL {
            writeln!(
                f,
                "{:<24} {:>10} {:>7.2}%",
                c.name(),
                self.counts[c.index()],
                self.percent(c)
            )?;
        }
        write!(f, "{:<24} {:>10}", "total", self.total())
    }
}

/// Per-flag annotation counts (an annotation may carry several flags).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlagStats {
    pub counts: [usize; 5],
    pub annotations: usize,
}

impl FlagStats {
    pub fn of(raw: &[RawAnnotation]) -> Self {
        let mut counts = [0usize; 5];
        for a in raw {
            let mut seen = [false; 5];
            for &f in &a.flags {
                let i = AddresseeFlag::ALL.iter().position(|&x| x == f).unwrap();
                if !seen[i] {
                    counts[i] += 1;
                    seen[i] = true;
                }
            }
        }
        FlagStats {
            counts,
            annotations: raw.len(),
        }
    }

    pub fn percent(&self, flag: AddresseeFlag) -> f64 {
        let i = AddresseeFlag::ALL.iter().position(|&x| x == flag).unwrap();
        100.0 * self.counts[i] as f64 / self.annotations.max(1) as f64
    }
}

impl fmt::Display for FlagStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16} {:>10} {:>8}", "flag", "count", "share")?;
        for (i, flag) in AddresseeFlag::ALL.into_iter().enumerate() {
            writeln!(
                f,
                "{:<16} {:>10} {:>7.2}%",
                flag.token(),
                self.counts[i],
                self.percent(flag)
            )?;
        }
        write!(f, "{:<16} {:>10}", "annotations", self.annotations)
    }
}

/// Cut an ordered collection 3:1:1 into train/validation/test. Cuts land at
/// `floor(0.6 n)` and `floor(0.8 n)` using integer arithmetic; order is
/// preserved, so shuffle before splitting.
pub fn split<T>(mut items: Vec<T>) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let n = items.len();
    if n < 5 {
        return Err(Error::TooFewRecords { n, min: 5 });
    }
    let cut1 = n * 6 / 10;
    let cut2 = n * 8 / 10;
    let test = items.split_off(cut2);
    let val = items.split_off(cut1);
    Ok((items, val, test))
}

/// Seeded shuffle followed by the 3:1:1 cut. Training and evaluation both
/// go through this with the same seed so split membership always agrees.
pub fn shuffled_split<T>(mut items: Vec<T>, seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let mut rng = Rng::new(seed).derive(0x53504c49); // tag: split
    rng.shuffle(&mut items);
    split(items)
}

/// Deterministic placeholder feature vector for corpora without
/// precomputed visual features: unit-norm pseudo-random values derived
/// entirely from the record id, the stream tag and the dimension.
pub fn stub_features(record_id: &str, tag: &str, dim: usize) -> Vec<f64> {
    let seed = fnv1a64(record_id.as_bytes())
        ^ fnv1a64(tag.as_bytes()).rotate_left(17)
        ^ (dim as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut rng = Rng::new(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for x in &mut v {
            *x /= norm;
        }
    } else if dim > 0 {
        v[0] = 1.0;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_and_classes_round_trip_their_tokens() {
        for f in AddresseeFlag::ALL {
            assert_eq!(f.token().parse::<AddresseeFlag>().unwrap(), f);
        }
        for c in AddresseeClass::ALL {
            assert_eq!(c.token().parse::<AddresseeClass>().unwrap(), c);
            assert_eq!(AddresseeClass::from_index(c.index()).unwrap(), c);
        }
        assert!(AddresseeClass::from_index(3).is_err());
        assert!("nope".parse::<AddresseeFlag>().is_err());
    }

    #[test]
    fn reorganize_collapses_monologue_into_others() {
        let p = Priority::default();
        assert_eq!(
            reorganize_label(&[AddresseeFlag::Monologue], &p).unwrap(),
            Some(AddresseeClass::Others)
        );
        assert_eq!(
            reorganize_label(&[AddresseeFlag::Others], &p).unwrap(),
            Some(AddresseeClass::Others)
        );
    }

    #[test]
    fn reorganize_drops_not_applicable() {
        let p = Priority::default();
        assert_eq!(
            reorganize_label(&[AddresseeFlag::NotApplicable], &p).unwrap(),
            None
        );
        // Even alongside an otherwise usable flag.
        assert_eq!(
            reorganize_label(
                &[AddresseeFlag::Photographer, AddresseeFlag::NotApplicable],
                &p
            )
            .unwrap(),
            None
        );
    }

    #[test]
    fn reorganize_rejects_empty_flag_sets() {
        assert!(reorganize_label(&[], &Priority::default()).is_err());
    }

    #[test]
    fn default_priority_prefers_photographer() {
        let p = Priority::default();
        assert_eq!(
            reorganize_label(
                &[AddresseeFlag::LineOfSight, AddresseeFlag::Photographer],
                &p
            )
            .unwrap(),
            Some(AddresseeClass::Photographer)
        );
        assert_eq!(
            reorganize_label(&[AddresseeFlag::LineOfSight, AddresseeFlag::Monologue], &p).unwrap(),
            Some(AddresseeClass::LineOfSight)
        );
    }

    #[test]
    fn custom_priority_changes_the_winner() {
        let p: Priority = "los,others,photographer".parse().unwrap();
        assert_eq!(
            reorganize_label(
                &[AddresseeFlag::LineOfSight, AddresseeFlag::Photographer],
                &p
            )
            .unwrap(),
            Some(AddresseeClass::LineOfSight)
        );
    }

    #[test]
    fn priority_parsing_rejects_bad_lists() {
        assert!("los,photographer".parse::<Priority>().is_err());
        assert!("los,los,others".parse::<Priority>().is_err());
        assert!("los,photographer,cat".parse::<Priority>().is_err());
        let p: Priority = "photographer, los, others".parse().unwrap();
        assert_eq!(p, Priority::default());
        assert_eq!(p.to_string(), "photographer,los,others");
    }

    #[test]
    fn class_weights_match_reference_corpus() {
        // Counts after collapsing the full corpus to three classes.
        let w = ClassWeights::from_counts([313_079, 87_373, 215_058]).unwrap();
        let a = w.as_array();
        assert!((a[0] - 0.6553).abs() < 1e-4);
        assert!((a[1] - 2.3482).abs() < 1e-4);
        assert!((a[2] - 0.9540).abs() < 1e-4);
        // Definition check: w_c * k * N_c == N exactly up to rounding.
        let n = 615_510.0;
        assert!((a[0] * 3.0 * 313_079.0 - n).abs() < 1e-6);
    }

    #[test]
    fn class_weights_balanced_corpus_is_all_ones() {
        let w = ClassWeights::from_counts([100, 100, 100]).unwrap();
        assert_eq!(w.as_array(), [1.0, 1.0, 1.0]);
        assert_eq!(ClassWeights::uniform().as_array(), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn class_weights_reject_empty_classes() {
        let err = ClassWeights::from_counts([10, 0, 5]).unwrap_err();
        assert_eq!(err.kind(), "zero-class");
    }

    #[test]
    fn split_reference_corpus_size() {
        let items: Vec<u32> = (0..615_510).collect();
        let (train, val, test) = split(items).unwrap();
        assert_eq!(train.len(), 369_306);
        assert_eq!(val.len(), 123_102);
        assert_eq!(test.len(), 123_102);
    }

    #[test]
    fn split_small_sizes_and_order() {
        let (train, val, test) = split((0..10).collect::<Vec<_>>()).unwrap();
        assert_eq!(train, (0..6).collect::<Vec<_>>());
        assert_eq!(val, vec![6, 7]);
        assert_eq!(test, vec![8, 9]);

        let (train, val, test) = split((0..5).collect::<Vec<_>>()).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (3, 1, 1));

        assert!(split::<u32>(vec![0, 1, 2, 3]).is_err());
    }

    #[test]
    fn split_partitions_everything_exactly_once() {
        for n in [5usize, 7, 64, 101, 1000] {
            let (a, b, c) = split((0..n).collect::<Vec<_>>()).unwrap();
            assert_eq!(a.len() + b.len() + c.len(), n);
            let rejoined: Vec<usize> = a.into_iter().chain(b).chain(c).collect();
            assert_eq!(rejoined, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn class_stats_percentages_format_to_two_decimals() {
        let stats = ClassStats {
            counts: [313_079, 87_373, 215_058],
        };
        assert_eq!(stats.total(), 615_510);
        let fmt = |c| format!("{:.2}", stats.percent(c));
        assert_eq!(fmt(AddresseeClass::LineOfSight), "50.86");
        assert_eq!(fmt(AddresseeClass::Photographer), "14.20");
        assert_eq!(fmt(AddresseeClass::Others), "34.94");
    }

    #[test]
    fn flag_stats_count_each_flag_once_per_annotation() {
        let raw = vec![
            RawAnnotation {
                record_id: "a".into(),
                flags: vec![AddresseeFlag::LineOfSight, AddresseeFlag::LineOfSight],
                head_loc: [0.5, 0.5],
                utterance: "hi".into(),
            },
            RawAnnotation {
                record_id: "b".into(),
                flags: vec![AddresseeFlag::LineOfSight, AddresseeFlag::Monologue],
                head_loc: [0.5, 0.5],
                utterance: "hm".into(),
            },
        ];
        let stats = FlagStats::of(&raw);
        assert_eq!(stats.counts, [2, 0, 1, 0, 0]);
        assert_eq!(stats.annotations, 2);
        assert!((stats.percent(AddresseeFlag::LineOfSight) - 100.0).abs() < 1e-12);
        assert!((stats.percent(AddresseeFlag::Monologue) - 50.0).abs() < 1e-12);
    }

    #[test]
    fn stub_features_are_deterministic_unit_norm() {
        let a = stub_features("rec-1", "saliency", 16);
        let b = stub_features("rec-1", "saliency", 16);
        assert_eq!(a, b);
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stub_features_differ_by_id_and_stream() {
        let a = stub_features("rec-1", "saliency", 16);
        let b = stub_features("rec-2", "saliency", 16);
        let c = stub_features("rec-1", "speaker", 16);
        assert_ne!(a, b);
        assert_ne!(a, c);
    }
}
