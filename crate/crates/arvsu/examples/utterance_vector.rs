//! Turn an utterance into a fixed-width vector with the recurrent encoder.
//!
//! Tokenizes a sentence, looks each token up in an embedding table, and
//! feeds the sequence through an LSTM one step at a time, printing how the
//! hidden and cell states evolve. The final hidden state is the utterance
//! vector the classifier consumes.
//!
//! ```bash
//! cargo run --example utterance_vector
//! ```

use arvsu::layers::{EmbeddingLayer, LstmParams, LstmState};
use arvsu::rng::Rng;
use arvsu::text::{tokenize, Vocabulary};

fn norm(xs: &[f64]) -> f64 {
    xs.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn main() -> arvsu::Result<()> {
    let docs: Vec<Vec<String>> = [
        "are you looking at the camera",
        "say cheese for the photographer",
        "who is that over there",
    ]
    .iter()
    .map(|doc| tokenize(doc))
    .collect();
    let vocab = Vocabulary::build(docs.iter().map(Vec::as_slice), 1);
    println!("vocabulary ({} entries): {:?}", vocab.len(), vocab.tokens());
    println!();

    let utterance = "say cheese , are you smiling at the camera ?";
    let tokens = tokenize(utterance);
    let indices = vocab.encode(&tokens);
    println!("utterance: {utterance}");
    println!("tokens:    {tokens:?}");
    println!("indices:   {indices:?}  (0 marks out-of-vocabulary)");
    println!();

    let mut rng = Rng::new(11);
    let embedding = EmbeddingLayer::new(vocab.len(), 8, &mut rng);
    let lstm = LstmParams::new(8, 12, &mut rng);
    println!(
        "encoder: {}-dim embeddings -> LSTM with {} hidden units ({} parameters)",
        embedding.dim(),
        lstm.hidden_dim(),
        lstm.param_count()
    );
    println!();

    println!("{:<6} {:<14} {:>8} {:>8}", "step", "token", "|h|", "|c|");
    let mut state = LstmState::zeros(lstm.hidden_dim());
    for (step, (&index, token)) in indices.iter().zip(&tokens).enumerate() {
        let x = embedding.lookup(index)?;
        state = lstm.step(&x, &state)?;
        println!(
            "{:<6} {:<14} {:>8.4} {:>8.4}",
            step + 1,
            token,
            norm(state.h.data()),
            norm(state.c.data())
        );
    }

    println!();
    let head: Vec<String> = state.h.data().iter().take(4).map(|v| format!("{v:+.4}")).collect();
    println!(
        "utterance vector = final hidden state ({} dims), starts [{} ...]",
        state.h.data().len(),
        head.join(", ")
    );
    Ok(())
}
