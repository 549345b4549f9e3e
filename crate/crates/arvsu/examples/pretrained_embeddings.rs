//! Seed the embedding table from a pretrained word-vector file.
//!
//! Loads whitespace-separated `token v1 .. vd` vectors, aligns them with a
//! corpus vocabulary, and reports what matched: vocabulary tokens found in
//! the file keep their pretrained rows, missing ones get small random
//! rows, and the reserved out-of-vocabulary and padding rows stay zero.
//!
//! ```bash
//! cargo run --example pretrained_embeddings
//! ```

use arvsu::rng::Rng;
use arvsu::text::{load_pretrained, tokenize, Vocabulary};

fn main() -> arvsu::Result<()> {
    let docs: Vec<Vec<String>> = ["say cheese please", "look at the camera"]
        .iter()
        .map(|doc| tokenize(doc))
        .collect();
    let vocab = Vocabulary::build(docs.iter().map(Vec::as_slice), 1);
    println!("vocabulary: {:?}", vocab.tokens());
    println!();

    // A small vector file covering some of the vocabulary, with one
    // malformed line and one token the vocabulary does not use.
    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("vectors.txt");
    std::fs::write(
        &path,
        "camera 0.10 0.20 0.30 0.40\n\
         cheese 0.50 0.60 0.70 0.80\n\
         broken 1.0 2.0\n\
         look -0.10 -0.20 -0.30 -0.40\n\
         unused 9.0 9.0 9.0 9.0\n",
    )
    .expect("write vector file");

    let mut rng = Rng::new(5);
    let (table, stats) = load_pretrained(&path, &vocab, 4, &mut rng)?;
    println!(
        "loaded {} lines: {} matched, {} vocabulary tokens missing, {} malformed",
        stats.lines, stats.matched, stats.missing, stats.malformed
    );
    println!();

    println!("{:<12} {:<38} {}", "token", "row", "origin");
    for (i, token) in vocab.tokens().iter().enumerate() {
        let row: Vec<String> =
            (0..4).map(|j| format!("{:+.3}", table.data()[i * 4 + j])).collect();
        let origin = match token.as_str() {
            "<oov>" | "<pad>" => "reserved, all zero",
            "camera" | "cheese" | "look" => "pretrained",
            _ => "random init",
        };
        println!("{:<12} [{}] {}", token, row.join(", "), origin);
    }
    println!();
    println!("pass this table to training to start the text stream from");
    println!("pretrained vectors instead of random ones");
    Ok(())
}
