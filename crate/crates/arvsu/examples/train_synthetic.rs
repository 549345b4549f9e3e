//! Train all three model variants on one synthetic corpus and compare them.
//!
//! Generates a corpus where the visual features separate one class and the
//! utterance text separates the other two, so neither modality suffices on
//! its own. Trains the visual-only, text-only and fused variants on the
//! same split and prints test accuracy for each: the fused model should
//! clear the ceiling that caps both unimodal ones.
//!
//! ```bash
//! cargo run --example train_synthetic
//! ```

use arvsu::corpus::{
    generate_synthetic, shuffled_split, ClassStats, ClassWeights, SignalRegime, SynthOptions,
};
use arvsu::eval::evaluate;
use arvsu::model::{ModelConfig, ModelParams, Variant};
use arvsu::rng::Rng;
use arvsu::text::Vocabulary;
use arvsu::train::{prepare_samples, train, TrainConfig};

fn main() -> arvsu::Result<()> {
    let mut opts = SynthOptions::new(3000, SignalRegime::Both, 42);
    opts.feat_dim = 6;
    opts.proportions = [1.0, 1.0, 1.0];
    let records = generate_synthetic(&opts)?;
    println!("generated {} records (visual splits one class, text the rest)", records.len());
    println!("{}", ClassStats::of(&records));
    println!();

    let (train_recs, val_recs, test_recs) = shuffled_split(records, 7)?;
    let docs: Vec<Vec<String>> =
        train_recs.iter().map(|r| arvsu::text::tokenize(&r.utterance)).collect();
    let vocab = Vocabulary::build(docs.iter().map(Vec::as_slice), 1);
    let weights = ClassWeights::from_counts(ClassStats::of(&train_recs).counts)?;
    let train_set = prepare_samples(&train_recs, &vocab, None);
    let val_set = prepare_samples(&val_recs, &vocab, None);
    let test_set = prepare_samples(&test_recs, &vocab, None);

    let config = ModelConfig {
        saliency_dim: 6,
        speaker_dim: 6,
        head_loc_dim: 2,
        stream_dim: 6,
        embed_dim: 6,
        lstm_hidden: 6,
        num_classes: 3,
        vocab_size: vocab.len(),
    };
    let train_cfg = TrainConfig {
        lr: 0.08,
        batch_size: 64,
        max_epochs: 30,
        patience: 6,
        seed: 7,
        class_weights: weights,
        max_tokens: None,
    };

    println!(
        "{:<14} {:>8} {:>10} {:>10} {:>10}",
        "variant", "params", "best val", "test acc", "macro F1"
    );
    let mut accuracies = Vec::new();
    for variant in Variant::ALL {
        let mut params = ModelParams::init(variant, &config, &mut Rng::new(7))?;
        let outcome = train(&mut params, &train_cfg, &train_set, &val_set)?;
        let confusion = evaluate(&params, &test_set)?;
        println!(
            "{:<14} {:>8} {:>10.3} {:>10.3} {:>10.3}",
            variant.name(),
            params.param_count(),
            outcome.best_val_accuracy,
            confusion.accuracy(),
            confusion.macro_f1()
        );
        accuracies.push(confusion.accuracy());
    }

    println!();
    println!(
        "fusing both modalities: {:.3} vs best single modality {:.3}",
        accuracies[2],
        accuracies[0].max(accuracies[1])
    );
    Ok(())
}
