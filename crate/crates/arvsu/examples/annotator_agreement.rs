//! Measure agreement between two annotators with Cohen's kappa.
//!
//! Raw agreement overstates reliability when labels are skewed, because
//! two annotators who both favour the majority class agree often by
//! chance. Kappa corrects for that chance agreement, per flag and for the
//! final three-class labels.
//!
//! ```bash
//! cargo run --example annotator_agreement
//! ```

use arvsu::corpus::{AddresseeClass, AddresseeFlag};
use arvsu::eval::{binary_kappa_per_flag, cohen_kappa, ConfusionMatrix};
use AddresseeClass::{LineOfSight, Others, Photographer};

fn main() -> arvsu::Result<()> {
    // Final class labels assigned by two annotators to the same 15 turns.
    let ann_a = [
        Photographer, LineOfSight, LineOfSight, Others, Photographer, LineOfSight, Others,
        LineOfSight, Others, Photographer, LineOfSight, LineOfSight, Others, LineOfSight, Others,
    ];
    let ann_b = [
        Photographer, LineOfSight, Others, Others, Photographer, LineOfSight, Others, LineOfSight,
        Others, LineOfSight, LineOfSight, LineOfSight, Others, LineOfSight, Photographer,
    ];

    let agree = ann_a.iter().zip(&ann_b).filter(|(a, b)| a == b).count();
    println!("raw agreement: {}/{} = {:.3}", agree, ann_a.len(), agree as f64 / ann_a.len() as f64);
    println!("cohen's kappa: {:.3}  (chance-corrected)", cohen_kappa(&ann_a, &ann_b)?);
    println!();

    // Where the disagreements sit, reading annotator A as reference.
    let pairs = ann_a.iter().zip(&ann_b).map(|(a, b)| (a.index(), b.index()));
    let confusion = ConfusionMatrix::from_pairs(3, pairs)?;
    let short = |c: AddresseeClass| match c {
        Photographer => "photo",
        LineOfSight => "los",
        Others => "others",
    };
    let header: Vec<String> =
        AddresseeClass::ALL.iter().map(|&c| format!("{:>6}", short(c))).collect();
    println!("{:<24} {}", "annotator A \\ B", header.join(" "));
    for truth in AddresseeClass::ALL {
        let row: Vec<String> = AddresseeClass::ALL
            .iter()
            .map(|pred| format!("{:>6}", confusion.count(truth.index(), pred.index())))
            .collect();
        println!("{:<24} {}", truth.name(), row.join(" "));
    }
    println!();

    // Per-flag agreement from the pre-collapse annotations: each flag
    // becomes a present/absent series scored with binary kappa.
    let flags_a: Vec<Vec<AddresseeFlag>> = ann_a.iter().map(|c| vec![flag_for(*c)]).collect();
    let mut flags_b: Vec<Vec<AddresseeFlag>> = ann_b.iter().map(|c| vec![flag_for(*c)]).collect();
    // Annotator B also marked two turns as self-talk.
    flags_b[3].push(AddresseeFlag::Monologue);
    flags_b[6].push(AddresseeFlag::Monologue);

    println!("{:<24} {:>8}", "flag", "kappa");
    for (flag, kappa) in binary_kappa_per_flag(&flags_a, &flags_b)? {
        println!("{:<24} {:>8.3}", flag.token(), kappa);
    }
    Ok(())
}

fn flag_for(class: AddresseeClass) -> AddresseeFlag {
    match class {
        Photographer => AddresseeFlag::Photographer,
        LineOfSight => AddresseeFlag::LineOfSight,
        Others => AddresseeFlag::Others,
    }
}
