//! Prepare a training corpus from raw multi-flag annotations.
//!
//! Annotators tag each camera-facing turn with any subset of five
//! addressee flags. Preparation collapses those flag sets into one of
//! three classes under a priority order, drops not-applicable turns, and
//! writes a corpus file plus a statistics report and a manifest that can
//! replay the run.
//!
//! ```bash
//! cargo run --example corpus_pipeline
//! ```

use arvsu::corpus::{read_corpus, write_raw_annotations, AddresseeFlag, RawAnnotation};
use arvsu::pipeline::{run_prepare, run_stats, PrepareOptions};
use AddresseeFlag::{LineOfSight, Monologue, NotApplicable, Others, Photographer};

fn turn(id: &str, flags: &[AddresseeFlag], utterance: &str) -> RawAnnotation {
    RawAnnotation {
        record_id: id.to_string(),
        flags: flags.to_vec(),
        head_loc: [0.41, 0.37],
        utterance: utterance.to_string(),
    }
}

fn main() -> arvsu::Result<()> {
    let annotations = vec![
        turn("t001", &[Photographer], "say cheese everyone"),
        turn("t002", &[LineOfSight], "stand a little closer"),
        // Several flags at once: the priority order decides the class.
        turn("t003", &[LineOfSight, Photographer], "are we ready"),
        turn("t004", &[Others, Monologue], "oh no my shoelace"),
        // Not applicable: dropped during preparation.
        turn("t005", &[NotApplicable], "[unintelligible]"),
        turn("t006", &[Monologue], "where did i put it"),
    ];

    let dir = tempfile::tempdir().expect("temp dir");
    let raw_path = dir.path().join("session.raw");
    let corpus_path = dir.path().join("session.corpus");
    write_raw_annotations(&raw_path, &annotations)?;

    let opts = PrepareOptions { saliency_dim: 4, speaker_dim: 4, ..Default::default() };
    let summary = run_prepare(&raw_path, &corpus_path, &opts)?;
    println!(
        "prepared {} records ({} not-applicable turns dropped) under priority {}",
        summary.kept, summary.skipped, opts.priority
    );
    println!();

    println!("class assignments:");
    for record in read_corpus(&corpus_path)? {
        println!("  {}  {:<24} {}", record.record_id, record.label.name(), record.utterance);
    }
    println!();

    println!("statistics for the raw file:");
    println!("{}", run_stats(&raw_path, &opts.priority)?);

    let files: Vec<String> = std::fs::read_dir(dir.path())
        .expect("list temp dir")
        .map(|e| e.expect("dir entry").file_name().to_string_lossy().into_owned())
        .collect();
    let mut files = files;
    files.sort();
    println!("files written: {}", files.join(", "));
    Ok(())
}
