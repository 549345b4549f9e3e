//! Synthetic corpus generation for demos and end-to-end checks.
//!
//! Records are drawn from a controllable generative story: each class owns
//! direction vectors in feature space and keyword pools in utterance space,
//! and the [`SignalRegime`] decides which modality actually carries the
//! label.
//!
//! * [`SignalRegime::Visual`]: features separate the classes, text is
//!   filler.
//! * [`SignalRegime::Text`]: features are pure noise, a class keyword is
//!   planted in each utterance.
//! * [`SignalRegime::Both`]: the modalities are complementary — features
//!   only separate class 0 from classes 1 and 2 (which share a direction),
//!   while keywords only separate 1 from 2 (class 0 plants a misleading
//!   coin-flip keyword). Either modality alone tops out well below perfect;
//!   fusing both recovers every label.
//!
//! A per-class `ambiguous_rate` routes that share of a class's records into
//! one shared look-alike cluster (same feature distribution, same marker
//! token) whose true labels differ only in frequency. A plain classifier
//! resolves the cluster toward the majority class; inverse-frequency class
//! weighting flips it toward the rarer class — the behaviour the
//! cost-sensitive loss exists to produce.

use std::fmt;
use std::str::FromStr;

use crate::corpus::{AddresseeClass, CorpusRecord, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Which modality carries the label signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalRegime {
    Visual,
    Text,
    Both,
}

impl SignalRegime {
    pub fn name(self) -> &'static str {
        match self {
            SignalRegime::Visual => "visual",
            SignalRegime::Text => "text",
            SignalRegime::Both => "both",
        }
    }
}

impl fmt::Display for SignalRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SignalRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "visual" => Ok(SignalRegime::Visual),
            "text" => Ok(SignalRegime::Text),
            "both" => Ok(SignalRegime::Both),
            other => Err(Error::Usage(format!(
                "unknown signal regime `{other}` (expected visual, text or both)"
            ))),
        }
    }
}

pub const FILLER_TOKENS: [&str; 10] = ["the", "a", "so", "well", "now", "um", "oh", "it", "is", "that"];
pub const CLASS_KEYWORDS: [[&str; 3]; NUM_CLASSES] = [
    ["buddy", "folks", "everyone"],
    ["camera", "photo", "cheese"],
    ["hmm", "myself", "later"],
];
/// Marker token carried by every record in the ambiguous cluster.
pub const AMBIGUOUS_KEYWORD: &str = "anyway";

const HEAD_CENTERS: [[f64; 2]; NUM_CLASSES] = [[0.3, 0.3], [0.7, 0.3], [0.5, 0.7]];

/// Knobs for [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    /// Records to generate (at least 30).
    pub n: usize,
    /// Width of both feature vectors (at least 2).
    pub feat_dim: usize,
    pub regime: SignalRegime,
    /// Relative class frequencies; normalised internally. The default
    /// mirrors the skew of the real corpus.
    pub proportions: [f64; NUM_CLASSES],
    /// Per-class share of records routed into the ambiguous cluster.
    pub ambiguous_rate: [f64; NUM_CLASSES],
    /// Feature noise amplitude around the class direction.
    pub noise: f64,
    pub seed: u64,
}

impl SynthOptions {
    pub fn new(n: usize, regime: SignalRegime, seed: u64) -> Self {
        SynthOptions {
            n,
            feat_dim: 32,
            regime,
            proportions: [0.5086, 0.1420, 0.3494],
            ambiguous_rate: [0.0; NUM_CLASSES],
            noise: 0.2,
            seed,
        }
    }
}

/// Integer class quotas for `n` records by largest remainder: floor each
/// exact share, then hand leftover records to the largest fractional parts
/// (lower class index wins ties). Quotas always sum to `n`.
pub fn quota_counts(n: usize, proportions: [f64; NUM_CLASSES]) -> Result<[usize; NUM_CLASSES]> {
    if proportions.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidConfig(
            "class proportions must be finite and non-negative".into(),
        ));
    }
    let sum: f64 = proportions.iter().sum();
    if sum <= 0.0 {
        return Err(Error::InvalidConfig(
            "class proportions must sum to a positive value".into(),
        ));
    }
    let mut counts = [0usize; NUM_CLASSES];
    let mut fractions = [(0usize, 0.0f64); NUM_CLASSES];
    let mut assigned = 0;
    for i in 0..NUM_CLASSES {
        let exact = n as f64 * proportions[i] / sum;
        counts[i] = exact.floor() as usize;
        assigned += counts[i];
        fractions[i] = (i, exact - exact.floor());
    }
    fractions.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for &(idx, _) in fractions.iter().take(n - assigned) {
        counts[idx] += 1;
    }
    Ok(counts)
}

fn random_unit(dim: usize, rng: &mut Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
    normalize(&mut v);
    v
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    } else if !v.is_empty() {
        v[0] = 1.0;
    }
}

/// `normalize(mean + noise * U(-1, 1)^dim)`; with a zero `mean` this is a
/// direction drawn uniformly from the noise cube, i.e. no class signal.
fn noisy_direction(mean: Option<(&[f64], f64)>, dim: usize, noise: f64, rng: &mut Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| noise * rng.uniform(-1.0, 1.0)).collect();
    if let Some((mean, sign)) = mean {
        for (x, m) in v.iter_mut().zip(mean) {
            *x += sign * m;
        }
    }
    normalize(&mut v);
    v
}

/// Generate a labelled corpus per `opts`. The output is fully determined by
/// `opts` (including the seed); record ids are `synth-000001` onward in
/// file order, with classes pre-shuffled throughout.
pub fn generate_synthetic(opts: &SynthOptions) -> Result<Vec<CorpusRecord>> {
    if opts.n < 30 {
        return Err(Error::TooFewRecords {
            n: opts.n,
            min: 30,
        });
    }
    if opts.feat_dim < 2 {
        return Err(Error::InvalidConfig(
            "feat_dim must be at least 2".into(),
        ));
    }
    if !opts.noise.is_finite() || opts.noise < 0.0 {
        return Err(Error::InvalidConfig("noise must be non-negative".into()));
    }
    for r in opts.ambiguous_rate {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::InvalidConfig(format!(
                "ambiguous_rate {r} outside [0, 1]"
            )));
        }
    }
    let counts = quota_counts(opts.n, opts.proportions)?;
    for (i, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(Error::InvalidConfig(format!(
                "class {i} receives no records at n={} with these proportions",
                opts.n
            )));
        }
    }

    let mut rng = Rng::new(opts.seed);
    let dim = opts.feat_dim;
    let sal_dirs: Vec<Vec<f64>> = (0..NUM_CLASSES).map(|_| random_unit(dim, &mut rng)).collect();
    let spk_dirs: Vec<Vec<f64>> = (0..NUM_CLASSES).map(|_| random_unit(dim, &mut rng)).collect();
    let amb_sal = random_unit(dim, &mut rng);
    let amb_spk = random_unit(dim, &mut rng);

    // Lay out (class, ambiguous) assignments, then shuffle.
    let mut slots: Vec<(AddresseeClass, bool)> = Vec::with_capacity(opts.n);
    for (i, &count) in counts.iter().enumerate() {
        let class = AddresseeClass::from_index(i)?;
        let ambiguous = (opts.ambiguous_rate[i] * count as f64).round() as usize;
        for k in 0..count {
            slots.push((class, k < ambiguous.min(count)));
        }
    }
    rng.shuffle(&mut slots);

    let mut records = Vec::with_capacity(opts.n);
    for (pos, &(class, ambiguous)) in slots.iter().enumerate() {
        let c = class.index();
        let (saliency, speaker) = if ambiguous {
            (
                noisy_direction(Some((&amb_sal, 1.0)), dim, opts.noise, &mut rng),
                noisy_direction(Some((&amb_spk, 1.0)), dim, opts.noise, &mut rng),
            )
        } else {
            match opts.regime {
                SignalRegime::Visual => (
                    noisy_direction(Some((&sal_dirs[c], 1.0)), dim, opts.noise, &mut rng),
                    noisy_direction(Some((&spk_dirs[c], 1.0)), dim, opts.noise, &mut rng),
                ),
                SignalRegime::Text => (
                    noisy_direction(None, dim, opts.noise, &mut rng),
                    noisy_direction(None, dim, opts.noise, &mut rng),
                ),
                SignalRegime::Both => {
                    // One shared axis: +axis for class 0, -axis for 1 and 2,
                    // so vision alone cannot split 1 from 2.
                    let sign = if c == 0 { 1.0 } else { -1.0 };
                    (
                        noisy_direction(Some((&sal_dirs[0], sign)), dim, opts.noise, &mut rng),
                        noisy_direction(Some((&spk_dirs[0], sign)), dim, opts.noise, &mut rng),
                    )
                }
            }
        };

        let head_loc = match (opts.regime, ambiguous) {
            (SignalRegime::Visual, false) => {
                let center = HEAD_CENTERS[c];
                [
                    (center[0] + rng.uniform(-0.15, 0.15)).clamp(0.0, 1.0),
                    (center[1] + rng.uniform(-0.15, 0.15)).clamp(0.0, 1.0),
                ]
            }
            _ => [rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)],
        };

        let keyword: Option<&str> = if ambiguous {
            Some(AMBIGUOUS_KEYWORD)
        } else {
            match opts.regime {
                SignalRegime::Visual => None,
                SignalRegime::Text => {
                    Some(CLASS_KEYWORDS[c][rng.index(CLASS_KEYWORDS[c].len())])
                }
                SignalRegime::Both => {
                    // Keywords only separate classes 1 and 2; class 0 plants
                    // a coin-flip keyword from either pool.
                    let pool = if c == 0 { 1 + rng.index(2) } else { c };
                    Some(CLASS_KEYWORDS[pool][rng.index(CLASS_KEYWORDS[pool].len())])
                }
            }
        };

        let mut tokens: Vec<&str> = (0..3 + rng.index(5))
            .map(|_| FILLER_TOKENS[rng.index(FILLER_TOKENS.len())])
            .collect();
        if let Some(kw) = keyword {
            let at = rng.index(tokens.len() + 1);
            tokens.insert(at, kw);
        }

        records.push(CorpusRecord {
            record_id: format!("synth-{:06}", pos + 1),
            label: class,
            head_loc,
            utterance: tokens.join(" "),
            saliency,
            speaker,
        });
    }
    Ok(records)
}
