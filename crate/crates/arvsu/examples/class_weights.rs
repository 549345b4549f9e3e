//! Derive cost-sensitive class weights from a skewed label distribution.
//!
//! With one addressee class several times rarer than the others, a plain
//! cross-entropy objective happily ignores it. Weighting each class by
//! `N / (K * N_c)` scales the rare class's loss up and the common classes'
//! down, so a mistake on a rare sample moves the parameters further.
//!
//! ```bash
//! cargo run --example class_weights
//! ```

use arvsu::corpus::{AddresseeClass, ClassWeights};
use arvsu::tensor::Tensor;
use arvsu::train::weighted_ce;

fn main() -> arvsu::Result<()> {
    // Counts with the same shape of skew seen in real photo-session
    // dialogue: the photographer is addressed far less often than
    // surrounding people and bystanders.
    let counts = [313_079, 87_373, 215_058];
    let total: usize = counts.iter().sum();
    let weights = ClassWeights::from_counts(counts)?;

    println!("{:<24} {:>10} {:>8} {:>8}", "class", "records", "share", "weight");
    for class in AddresseeClass::ALL {
        let n = counts[class.index()];
        println!(
            "{:<24} {:>10} {:>7.2}% {:>8.4}",
            class.name(),
            n,
            100.0 * n as f64 / total as f64,
            weights.get(class)
        );
    }
    println!();

    // The same mediocre prediction costs more when the true class is rare.
    let probs = Tensor::vector(vec![0.2, 0.3, 0.5]);
    println!("loss for predicting {:?} under these weights:", probs.data());
    for class in AddresseeClass::ALL {
        let weighted = weighted_ce(&probs, class, &weights);
        let unweighted = weighted_ce(&probs, class, &ClassWeights::uniform());
        println!(
            "  true = {:<22} unweighted {:.4}  weighted {:.4}  ({:+.0}%)",
            class.name(),
            unweighted,
            weighted,
            100.0 * (weighted / unweighted - 1.0)
        );
    }

    println!();
    println!("weighted losses average back to the unweighted scale across a");
    println!("balanced batch, but rare-class gradients carry ~2.4x the force");
    Ok(())
}
