//! The addressee classifier in its three variants.
//!
//! The full model fuses three streams into one softmax decision:
//!
//! * a saliency stream: dense + ReLU over a precomputed saliency-map
//!   feature vector,
//! * a speaker-appearance stream: dense + ReLU over speaker crop features
//!   concatenated with the speaker's normalised head location, and
//! * an utterance stream: embedded tokens run through an LSTM, taking the
//!   final hidden state as the utterance vector.
//!
//! `visual_only` keeps the two image streams, `text_only` keeps the
//! utterance stream, and `multimodal` concatenates all three before the
//! classification head. The variants share no parameters.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::layers::{Activation, DenseLayer, DenseVars, EmbeddingLayer, LstmParams, LstmVars};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Which input streams the classifier uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    VisualOnly,
    TextOnly,
    Multimodal,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::VisualOnly, Variant::TextOnly, Variant::Multimodal];

    pub fn name(self) -> &'static str {
        match self {
            Variant::VisualOnly => "visual_only",
            Variant::TextOnly => "text_only",
            Variant::Multimodal => "multimodal",
        }
    }

    pub fn uses_visual(self) -> bool {
        matches!(self, Variant::VisualOnly | Variant::Multimodal)
    }

    pub fn uses_text(self) -> bool {
        matches!(self, Variant::TextOnly | Variant::Multimodal)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "visual_only" => Ok(Variant::VisualOnly),
            "text_only" => Ok(Variant::TextOnly),
            "multimodal" => Ok(Variant::Multimodal),
            other => Err(Error::Usage(format!(
                "unknown variant `{other}` (expected visual_only, text_only or multimodal)"
            ))),
        }
    }
}

/// Architecture dimensions. `vocab_size` is data-dependent and set when a
/// vocabulary is built; everything else defaults to the reference sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Length of the saliency-map feature vector.
    pub saliency_dim: usize,
    /// Length of the speaker-crop feature vector (head location excluded).
    pub speaker_dim: usize,
    /// Length of the normalised head-location vector.
    pub head_loc_dim: usize,
    /// Output width of each image stream's dense layer.
    pub stream_dim: usize,
    /// Word-embedding width.
    pub embed_dim: usize,
    /// LSTM hidden width (the utterance vector length).
    pub lstm_hidden: usize,
    /// Number of addressee classes.
    pub num_classes: usize,
    /// Vocabulary rows in the embedding table (including reserved entries).
    pub vocab_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            saliency_dim: 4096,
            speaker_dim: 4096,
            head_loc_dim: 2,
            stream_dim: 256,
            embed_dim: 100,
            lstm_hidden: 128,
            num_classes: 3,
            vocab_size: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self, variant: Variant) -> Result<()> {
        let positive: &[(&str, usize)] = &[
            ("stream_dim", self.stream_dim),
            ("embed_dim", self.embed_dim),
            ("lstm_hidden", self.lstm_hidden),
        ];
        for &(name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig(
                "num_classes must be at least 2".into(),
            ));
        }
        if variant.uses_visual() {
            if self.saliency_dim == 0 || self.speaker_dim == 0 {
                return Err(Error::InvalidConfig(
                    "saliency_dim and speaker_dim must be positive for visual variants".into(),
                ));
            }
            if self.head_loc_dim == 0 {
                return Err(Error::InvalidConfig(
                    "head_loc_dim must be positive for visual variants".into(),
                ));
            }
        }
        if variant.uses_text() && self.vocab_size < 2 {
            return Err(Error::InvalidConfig(
                "vocab_size must be at least 2 (reserved rows) for text variants".into(),
            ));
        }
        Ok(())
    }

    /// Input width of the classification head for `variant`.
    pub fn fused_dim(&self, variant: Variant) -> usize {
        let image = 2 * self.stream_dim;
        match variant {
            Variant::VisualOnly => image,
            Variant::TextOnly => self.lstm_hidden,
            Variant::Multimodal => image + self.lstm_hidden,
        }
    }
}

/// One classification sample. Fields unused by a variant may be left empty
/// (`tokens` for `visual_only`; the feature vectors for `text_only`).
#[derive(Debug, Clone)]
pub struct SampleInput {
    pub saliency: Tensor,
    pub speaker: Tensor,
    /// Normalised head location, each coordinate in `[0, 1]`.
    pub head_loc: Vec<f64>,
    /// Vocabulary indices of the utterance tokens.
    pub tokens: Vec<usize>,
}

/// A sample paired with its reference label, ready for training or
/// evaluation.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub input: SampleInput,
    pub label: crate::corpus::AddresseeClass,
}

/// All trainable parameters of one variant.
#[derive(Debug, Clone)]
pub struct ModelParams {
    variant: Variant,
    config: ModelConfig,
    saliency: Option<DenseLayer>,
    speaker: Option<DenseLayer>,
    embedding: Option<EmbeddingLayer>,
    lstm: Option<LstmParams>,
    head: DenseLayer,
}

impl ModelParams {
    pub fn init(variant: Variant, config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate(variant)?;
        let (saliency, speaker) = if variant.uses_visual() {
            (
                Some(DenseLayer::new(
                    config.saliency_dim,
                    config.stream_dim,
                    Activation::Relu,
                    rng,
                )),
                Some(DenseLayer::new(
                    config.speaker_dim + config.head_loc_dim,
                    config.stream_dim,
                    Activation::Relu,
                    rng,
                )),
            )
        } else {
            (None, None)
        };
        let (embedding, lstm) = if variant.uses_text() {
            (
                Some(EmbeddingLayer::new(config.vocab_size, config.embed_dim, rng)),
                Some(LstmParams::new(config.embed_dim, config.lstm_hidden, rng)),
            )
        } else {
            (None, None)
        };
        let head = DenseLayer::new(
            config.fused_dim(variant),
            config.num_classes,
            Activation::Identity,
            rng,
        );
        Ok(ModelParams {
            variant,
            config: config.clone(),
            saliency,
            speaker,
            embedding,
            lstm,
            head,
        })
    }

    /// Reassemble a model from named tensors (checkpoint loading).
    pub fn from_tensors(
        variant: Variant,
        config: &ModelConfig,
        mut take: impl FnMut(&str) -> Result<Tensor>,
    ) -> Result<Self> {
        config.validate(variant)?;
        let (saliency, speaker) = if variant.uses_visual() {
            (
                Some(DenseLayer::from_parts(
                    take("saliency.w")?,
                    take("saliency.b")?,
                    Activation::Relu,
                )?),
                Some(DenseLayer::from_parts(
                    take("speaker.w")?,
                    take("speaker.b")?,
                    Activation::Relu,
                )?),
            )
        } else {
            (None, None)
        };
        let (embedding, lstm) = if variant.uses_text() {
            let embedding = EmbeddingLayer::from_table(take("embedding.table")?)?;
            let mut lstm = LstmParams::zeros(config.embed_dim, config.lstm_hidden);
            for (name, slot) in lstm.tensors_mut() {
                *slot = take(&format!("lstm.{name}"))?;
            }
            (Some(embedding), Some(lstm))
        } else {
            (None, None)
        };
        let head = DenseLayer::from_parts(take("head.w")?, take("head.b")?, Activation::Identity)?;
        let params = ModelParams {
            variant,
            config: config.clone(),
            saliency,
            speaker,
            embedding,
            lstm,
            head,
        };
        params.check_shapes()?;
        Ok(params)
    }

    fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        let expect = |name: &str, got: &[usize], want: Vec<usize>| -> Result<()> {
            if got != want.as_slice() {
                return Err(Error::ConfigMismatch(format!(
                    "tensor {name} has shape {got:?}, config implies {want:?}"
                )));
            }
            Ok(())
        };
        if let Some(l) = &self.saliency {
            expect("saliency.w", l.w.shape(), vec![c.stream_dim, c.saliency_dim])?;
        }
        if let Some(l) = &self.speaker {
            expect(
                "speaker.w",
                l.w.shape(),
                vec![c.stream_dim, c.speaker_dim + c.head_loc_dim],
            )?;
        }
        if let Some(e) = &self.embedding {
            expect("embedding.table", e.table.shape(), vec![c.vocab_size, c.embed_dim])?;
        }
        if let Some(l) = &self.lstm {
            expect("lstm.w_ix", l.w_ix.shape(), vec![c.lstm_hidden, c.embed_dim])?;
        }
        expect(
            "head.w",
            self.head.w.shape(),
            vec![c.num_classes, c.fused_dim(self.variant)],
        )
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Named tensors in canonical order: image streams, then the text
    /// stream, then the head. Checkpoints and the optimiser follow this.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        if let Some(l) = &self.saliency {
            out.push(("saliency.w".to_string(), &l.w));
            out.push(("saliency.b".to_string(), &l.b));
        }
        if let Some(l) = &self.speaker {
            out.push(("speaker.w".to_string(), &l.w));
            out.push(("speaker.b".to_string(), &l.b));
        }
        if let Some(e) = &self.embedding {
            out.push(("embedding.table".to_string(), &e.table));
        }
        if let Some(l) = &self.lstm {
            for (name, t) in l.tensors() {
                out.push((format!("lstm.{name}"), t));
            }
        }
        out.push(("head.w".to_string(), &self.head.w));
        out.push(("head.b".to_string(), &self.head.b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        if let Some(l) = &mut self.saliency {
            out.push(("saliency.w".to_string(), &mut l.w));
            out.push(("saliency.b".to_string(), &mut l.b));
        }
        if let Some(l) = &mut self.speaker {
            out.push(("speaker.w".to_string(), &mut l.w));
            out.push(("speaker.b".to_string(), &mut l.b));
        }
        if let Some(e) = &mut self.embedding {
            out.push(("embedding.table".to_string(), &mut e.table));
        }
        if let Some(l) = &mut self.lstm {
            for (name, t) in l.tensors_mut() {
                out.push((format!("lstm.{name}"), t));
            }
        }
        out.push(("head.w".to_string(), &mut self.head.w));
        out.push(("head.b".to_string(), &mut self.head.b));
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    fn validate_input(&self, input: &SampleInput) -> Result<()> {
        let c = &self.config;
        if self.variant.uses_visual() {
            if input.saliency.shape() != [c.saliency_dim] {
                return Err(Error::BadShape {
                    op: "forward",
                    expected: format!("saliency features of shape [{}]", c.saliency_dim),
                    got: input.saliency.shape().to_vec(),
                });
            }
            if input.speaker.shape() != [c.speaker_dim] {
                return Err(Error::BadShape {
                    op: "forward",
                    expected: format!("speaker features of shape [{}]", c.speaker_dim),
                    got: input.speaker.shape().to_vec(),
                });
            }
            if input.head_loc.len() != c.head_loc_dim {
                return Err(Error::BadShape {
                    op: "forward",
                    expected: format!("head location of length {}", c.head_loc_dim),
                    got: vec![input.head_loc.len()],
                });
            }
            for &v in &input.head_loc {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidConfig(format!(
                        "head location coordinate {v} outside [0, 1]"
                    )));
                }
            }
        }
        if self.variant.uses_text() {
            if input.tokens.is_empty() {
                return Err(Error::EmptyInput { what: "utterance tokens" });
            }
            let vocab = c.vocab_size;
            for &t in &input.tokens {
                if t >= vocab {
                    return Err(Error::IndexOutOfRange {
                        what: "token index",
                        index: t,
                        len: vocab,
                    });
                }
            }
        }
        Ok(())
    }

    /// Eager forward pass returning the class-probability vector.
    pub fn forward(&self, input: &SampleInput) -> Result<Tensor> {
        self.validate_input(input)?;
        let fused = match self.variant {
            Variant::VisualOnly => self.image_vector(input)?,
            Variant::TextOnly => self.utterance_vector(input)?,
            Variant::Multimodal => self
                .image_vector(input)?
                .concat(&self.utterance_vector(input)?)?,
        };
        let logits = self.head.forward(&fused)?;
        logits.softmax()
    }

    fn image_vector(&self, input: &SampleInput) -> Result<Tensor> {
        let saliency = self.saliency.as_ref().expect("visual stream present");
        let speaker = self.speaker.as_ref().expect("visual stream present");
        let x1 = saliency.forward(&input.saliency)?;
        let spk_in = input.speaker.concat(&Tensor::vector(input.head_loc.clone()))?;
        let x2 = speaker.forward(&spk_in)?;
        x1.concat(&x2)
    }

    fn utterance_vector(&self, input: &SampleInput) -> Result<Tensor> {
        let embedding = self.embedding.as_ref().expect("text stream present");
        let lstm = self.lstm.as_ref().expect("text stream present");
        let xs = embedding.embed_sequence(&input.tokens)?;
        lstm.encode(&xs)
    }

    /// Predicted class index; probability ties break toward the lower index.
    pub fn predict(&self, input: &SampleInput) -> Result<usize> {
        Ok(self.forward(input)?.argmax())
    }

    /// Bind every parameter once onto `g` for a training pass.
    pub fn bind(&self, g: &mut Graph) -> BoundModel {
        BoundModel {
            variant: self.variant,
            config: self.config.clone(),
            saliency: self.saliency.as_ref().map(|l| l.bind(g)),
            speaker: self.speaker.as_ref().map(|l| l.bind(g)),
            embedding: self.embedding.as_ref().map(|e| g.leaf(&e.table)),
            lstm: self.lstm.as_ref().map(|l| l.bind(g)),
            head: self.head.bind(g),
        }
    }

    /// Validate a sample for this model without running it.
    pub fn check_input(&self, input: &SampleInput) -> Result<()> {
        self.validate_input(input)
    }
}

/// A [`ModelParams`] bound onto a graph; reusable across the samples of a
/// minibatch so gradients accumulate on the shared parameter leaves.
pub struct BoundModel {
    variant: Variant,
    config: ModelConfig,
    saliency: Option<DenseVars>,
    speaker: Option<DenseVars>,
    embedding: Option<Var>,
    lstm: Option<LstmVars>,
    head: DenseVars,
}

impl BoundModel {
    /// Forward one sample, returning the probability vector node.
    pub fn forward(&self, g: &mut Graph, input: &SampleInput) -> Result<Var> {
        let fused = match self.variant {
            Variant::VisualOnly => self.image_vector(g, input)?,
            Variant::TextOnly => self.utterance_vector(g, input)?,
            Variant::Multimodal => {
                let im = self.image_vector(g, input)?;
                let ut = self.utterance_vector(g, input)?;
                g.concat(im, ut)?
            }
        };
        let logits = self.head.forward(g, fused)?;
        g.softmax(logits)
    }

    fn image_vector(&self, g: &mut Graph, input: &SampleInput) -> Result<Var> {
        let saliency = self.saliency.expect("visual stream present");
        let speaker = self.speaker.expect("visual stream present");
        let sal_in = g.leaf(&input.saliency);
        let x1 = saliency.forward(g, sal_in)?;
        let spk_feat = g.leaf(&input.speaker);
        let head_loc = g.leaf(&Tensor::vector(input.head_loc.clone()));
        let spk_in = g.concat(spk_feat, head_loc)?;
        let x2 = speaker.forward(g, spk_in)?;
        g.concat(x1, x2)
    }

    fn utterance_vector(&self, g: &mut Graph, input: &SampleInput) -> Result<Var> {
        let table = self.embedding.expect("text stream present");
        let lstm = self.lstm.expect("text stream present");
        let rows = input
            .tokens
            .iter()
            .map(|&t| g.row(table, t))
            .collect::<Result<Vec<Var>>>()?;
        lstm.encode(g, &rows)
    }

    /// Parameter nodes in the same canonical order as
    /// [`ModelParams::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        if let Some(l) = &self.saliency {
            out.push(l.w);
            out.push(l.b);
        }
        if let Some(l) = &self.speaker {
            out.push(l.w);
            out.push(l.b);
        }
        if let Some(t) = &self.embedding {
            out.push(*t);
        }
        if let Some(l) = &self.lstm {
            out.extend(l.vars);
        }
        out.push(self.head.w);
        out.push(self.head.b);
        out
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff, max_rel_error};

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            saliency_dim: 8,
            speaker_dim: 8,
            head_loc_dim: 2,
            stream_dim: 4,
            embed_dim: 5,
            lstm_hidden: 6,
            num_classes: 3,
            vocab_size: 10,
        }
    }

    fn sample(rng: &mut Rng, cfg: &ModelConfig) -> SampleInput {
        SampleInput {
            saliency: Tensor::rand_uniform(vec![cfg.saliency_dim], -1.0, 1.0, rng),
            speaker: Tensor::rand_uniform(vec![cfg.speaker_dim], -1.0, 1.0, rng),
            head_loc: vec![0.25, 0.75],
            tokens: vec![1, 4, 7, 2],
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        let err = "both".parse::<Variant>().unwrap_err().to_string();
        assert!(err.contains("visual_only"));
        assert!(err.contains("text_only"));
        assert!(err.contains("multimodal"));
    }

    #[test]
    fn default_config_matches_reference_sizes() {
        let c = ModelConfig::default();
        assert_eq!(
            (c.saliency_dim, c.speaker_dim, c.head_loc_dim, c.stream_dim),
            (4096, 4096, 2, 256)
        );
        assert_eq!((c.embed_dim, c.lstm_hidden, c.num_classes), (100, 128, 3));
    }

    #[test]
    fn config_validation_per_variant() {
        let mut c = tiny_config();
        c.saliency_dim = 0;
        assert!(c.validate(Variant::VisualOnly).is_err());
        assert!(c.validate(Variant::TextOnly).is_ok());
        let mut c = tiny_config();
        c.vocab_size = 1;
        assert!(c.validate(Variant::TextOnly).is_err());
        assert!(c.validate(Variant::VisualOnly).is_ok());
    }

    #[test]
    fn param_count_matches_closed_form() {
        let cfg = tiny_config();
        let mut rng = Rng::new(1);
        let mm = ModelParams::init(Variant::Multimodal, &cfg, &mut rng).unwrap();
        let (s, d, hl, st, e, h, k, v) = (8, 8, 2, 4, 5, 6, 3usize, 10);
        let expected = (st * s + st)              // saliency stream
            + (st * (d + hl) + st)                // speaker stream
            + v * e                               // embedding table
            + 4 * (h * e + h * h + h)             // lstm gates
            + k * (2 * st + h) + k; // head
        assert_eq!(mm.param_count(), expected);

        let vo = ModelParams::init(Variant::VisualOnly, &cfg, &mut rng).unwrap();
        assert_eq!(
            vo.param_count(),
            (st * s + st) + (st * (d + hl) + st) + k * (2 * st) + k
        );
        let to = ModelParams::init(Variant::TextOnly, &cfg, &mut rng).unwrap();
        assert_eq!(to.param_count(), v * e + 4 * (h * e + h * h + h) + k * h + k);
    }

    #[test]
    fn tensor_names_follow_canonical_order() {
        let cfg = tiny_config();
        let mut rng = Rng::new(2);
        let mm = ModelParams::init(Variant::Multimodal, &cfg, &mut rng).unwrap();
        let names: Vec<String> = mm.tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(
            names,
            vec![
                "saliency.w",
                "saliency.b",
                "speaker.w",
                "speaker.b",
                "embedding.table",
                "lstm.w_ix",
                "lstm.w_ih",
                "lstm.b_i",
                "lstm.w_fx",
                "lstm.w_fh",
                "lstm.b_f",
                "lstm.w_ox",
                "lstm.w_oh",
                "lstm.b_o",
                "lstm.w_cx",
                "lstm.w_ch",
                "lstm.b_c",
                "head.w",
                "head.b",
            ]
        );
        let to = ModelParams::init(Variant::TextOnly, &cfg, &mut rng).unwrap();
        let names: Vec<String> = to.tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "embedding.table");
        assert_eq!(names.last().unwrap(), "head.b");
        assert!(!names.iter().any(|n| n.starts_with("saliency")));
    }

    #[test]
    fn forward_is_a_probability_vector() {
        let cfg = tiny_config();
        let mut rng = Rng::new(3);
        for v in Variant::ALL {
            let m = ModelParams::init(v, &cfg, &mut rng).unwrap();
            let p = m.forward(&sample(&mut rng, &cfg)).unwrap();
            assert_eq!(p.shape(), &[3]);
            let total: f64 = p.data().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(p.data().iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn unused_streams_do_not_affect_output() {
        let cfg = tiny_config();
        let mut rng = Rng::new(4);
        let text = ModelParams::init(Variant::TextOnly, &cfg, &mut rng).unwrap();
        let mut a = sample(&mut rng, &cfg);
        let mut b = a.clone();
        b.saliency = Tensor::full(vec![cfg.saliency_dim], 999.0);
        b.speaker = Tensor::full(vec![cfg.speaker_dim], -999.0);
        assert_eq!(
            text.forward(&a).unwrap().data(),
            text.forward(&b).unwrap().data()
        );

        let visual = ModelParams::init(Variant::VisualOnly, &cfg, &mut rng).unwrap();
        b = a.clone();
        b.tokens = vec![9, 9, 9];
        a.tokens.clear(); // visual path never reads tokens
        assert_eq!(
            visual.forward(&a).unwrap().data(),
            visual.forward(&b).unwrap().data()
        );
    }

    #[test]
    fn input_validation_errors() {
        let cfg = tiny_config();
        let mut rng = Rng::new(5);
        let mm = ModelParams::init(Variant::Multimodal, &cfg, &mut rng).unwrap();
        let good = sample(&mut rng, &cfg);

        let mut bad = good.clone();
        bad.saliency = Tensor::vector(vec![1.0; 3]);
        assert!(mm.forward(&bad).is_err());

        let mut bad = good.clone();
        bad.head_loc = vec![0.5, 1.5];
        assert!(mm.forward(&bad).is_err());

        let mut bad = good.clone();
        bad.tokens.clear();
        assert!(mm.forward(&bad).is_err());

        let mut bad = good.clone();
        bad.tokens = vec![cfg.vocab_size];
        assert!(mm.forward(&bad).is_err());
    }

    #[test]
    fn graph_forward_matches_eager_forward() {
        let cfg = tiny_config();
        let mut rng = Rng::new(6);
        for v in Variant::ALL {
            let m = ModelParams::init(v, &cfg, &mut rng).unwrap();
            let input = sample(&mut rng, &cfg);
            let eager = m.forward(&input).unwrap();

            let mut g = Graph::new();
            let bound = m.bind(&mut g);
            let probs = bound.forward(&mut g, &input).unwrap();
            for (a, b) in g.value(probs).data().iter().zip(eager.data()) {
                assert!((a - b).abs() <= 1e-12, "{v}: graph and eager paths differ");
            }
        }
    }

    #[test]
    fn multimodal_fuses_streams_compositionally() {
        // The fused forward must equal hand-wiring the pieces end to end.
        let cfg = tiny_config();
        let mut rng = Rng::new(7);
        let m = ModelParams::init(Variant::Multimodal, &cfg, &mut rng).unwrap();
        let input = sample(&mut rng, &cfg);

        let by_hand = {
            let x1 = m.saliency.as_ref().unwrap().forward(&input.saliency).unwrap();
            let spk_in = input
                .speaker
                .concat(&Tensor::vector(input.head_loc.clone()))
                .unwrap();
            let x2 = m.speaker.as_ref().unwrap().forward(&spk_in).unwrap();
            let xs = m
                .embedding
                .as_ref()
                .unwrap()
                .embed_sequence(&input.tokens)
                .unwrap();
            let xu = m.lstm.as_ref().unwrap().encode(&xs).unwrap();
            let fused = x1.concat(&x2).unwrap().concat(&xu).unwrap();
            m.head.forward(&fused).unwrap().softmax().unwrap()
        };
        assert_eq!(m.forward(&input).unwrap().data(), by_hand.data());
    }

    #[test]
    fn predict_breaks_ties_toward_lower_index() {
        let cfg = tiny_config();
        let mut rng = Rng::new(8);
        let mut m = ModelParams::init(Variant::TextOnly, &cfg, &mut rng).unwrap();
        // Zero head weights: logits are the bias, equal => uniform probs.
        for (name, t) in m.tensors_mut() {
            if name == "head.w" || name == "head.b" {
                *t = Tensor::zeros(t.shape().to_vec());
            }
        }
        let input = sample(&mut rng, &cfg);
        assert_eq!(m.predict(&input).unwrap(), 0);
    }

    #[test]
    fn whole_model_gradients_match_finite_differences() {
        let cfg = ModelConfig {
            saliency_dim: 3,
            speaker_dim: 3,
            head_loc_dim: 2,
            stream_dim: 2,
            embed_dim: 3,
            lstm_hidden: 2,
            num_classes: 3,
            vocab_size: 5,
        };
        let mut rng = Rng::new(9);
        for v in Variant::ALL {
            let m = ModelParams::init(v, &cfg, &mut rng).unwrap();
            let input = SampleInput {
                saliency: Tensor::rand_uniform(vec![3], -1.0, 1.0, &mut rng),
                speaker: Tensor::rand_uniform(vec![3], -1.0, 1.0, &mut rng),
                head_loc: vec![0.4, 0.6],
                tokens: vec![1, 3],
            };
            let label = 1usize;

            let mut g = Graph::new();
            let bound = m.bind(&mut g);
            let probs = bound.forward(&mut g, &input).unwrap();
            let picked = g.pick(probs, label).unwrap();
            let clamped = g.clamp_min(picked, 1e-12);
            let lp = g.log(clamped);
            let loss = g.mul_scalar(lp, -1.0);
            g.backward(loss).unwrap();

            let vars = bound.vars();
            for (slot, (name, base)) in m.tensors().iter().enumerate() {
                let fd = finite_diff(
                    |t| {
                        let mut probe = m.clone();
                        *probe.tensors_mut()[slot].1 = t.clone();
                        -probe.forward(&input).unwrap().data()[label]
                            .max(1e-12)
                            .ln()
                    },
                    base,
                    1e-5,
                );
                let analytic = g.grad(vars[slot]).unwrap();
                let err = max_rel_error(analytic, fd.data(), 1e-6);
                assert!(err <= 1e-4, "{v}/{name}: rel err {err}");
            }
        }
    }

    #[test]
    fn from_tensors_round_trips_init() {
        let cfg = tiny_config();
        let mut rng = Rng::new(10);
        for v in Variant::ALL {
            let m = ModelParams::init(v, &cfg, &mut rng).unwrap();
            let stash: Vec<(String, Tensor)> = m
                .tensors()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect();
            let rebuilt = ModelParams::from_tensors(v, &cfg, |name| {
                stash
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, t)| t.clone())
                    .ok_or_else(|| Error::ConfigMismatch(format!("missing tensor {name}")))
            })
            .unwrap();
            let input = sample(&mut rng, &cfg);
            assert_eq!(
                m.forward(&input).unwrap().data(),
                rebuilt.forward(&input).unwrap().data()
            );
        }
    }
}
