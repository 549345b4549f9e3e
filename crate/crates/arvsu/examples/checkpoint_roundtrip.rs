//! Save a model to a checkpoint file and restore it bit-for-bit.
//!
//! The checkpoint format stores the model configuration, vocabulary and
//! every parameter tensor behind a declared length, a config digest and a
//! trailing checksum, so a restored model predicts identically and any
//! corruption is named rather than silently absorbed.
//!
//! ```bash
//! cargo run --example checkpoint_roundtrip
//! ```

use arvsu::checkpoint::Checkpoint;
use arvsu::model::{ModelConfig, ModelParams, SampleInput, Variant};
use arvsu::rng::Rng;
use arvsu::tensor::Tensor;
use arvsu::text::Vocabulary;

fn main() -> arvsu::Result<()> {
    let docs: Vec<Vec<String>> =
        ["say cheese", "who is that"].iter().map(|doc| arvsu::text::tokenize(doc)).collect();
    let vocab = Vocabulary::build(docs.iter().map(Vec::as_slice), 1);
    let config = ModelConfig {
        saliency_dim: 6,
        speaker_dim: 6,
        head_loc_dim: 2,
        stream_dim: 5,
        embed_dim: 4,
        lstm_hidden: 4,
        num_classes: 3,
        vocab_size: vocab.len(),
    };
    let mut rng = Rng::new(3);
    let params = ModelParams::init(Variant::Multimodal, &config, &mut rng)?;
    let input = SampleInput {
        saliency: Tensor::vector((0..6).map(|_| rng.uniform(-1.0, 1.0)).collect()),
        speaker: Tensor::vector((0..6).map(|_| rng.uniform(-1.0, 1.0)).collect()),
        head_loc: vec![0.4, 0.6],
        tokens: vocab.encode(&arvsu::text::tokenize("say cheese")),
    };

    let checkpoint = Checkpoint::from_model(&params, &vocab, 12, 0.83, 3, None);
    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("model.ckpt");
    checkpoint.write(&path)?;
    let size = std::fs::metadata(&path).expect("stat checkpoint").len();
    println!("wrote {} ({size} bytes)", path.file_name().unwrap().to_string_lossy());
    println!("tensors stored:");
    for (name, tensor) in checkpoint.tensors() {
        println!("  {:<28} {:?}", name, tensor.shape());
    }
    println!();

    let restored = Checkpoint::read(&path)?.to_model()?;
    let before = params.forward(&input)?;
    let after = restored.forward(&input)?;
    assert_eq!(before.data(), after.data(), "restored model predicts differently");
    println!("restored model output matches the original exactly:");
    println!("  {:?}", after.data());
    println!();

    // Flip one byte in the middle of a tensor: the read fails loudly.
    let mut bytes = std::fs::read(&path).expect("read checkpoint bytes");
    let middle = bytes.len() / 2;
    bytes[middle] ^= 0x01;
    std::fs::write(&path, &bytes).expect("write corrupted checkpoint");
    match Checkpoint::read(&path) {
        Ok(_) => panic!("corrupted checkpoint was accepted"),
        Err(e) => println!("flipping one byte is caught: {e}"),
    }
    Ok(())
}
