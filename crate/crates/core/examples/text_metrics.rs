//! BLEU-4, ROUGE-Lsum and SARI on a few answer/reference pairs.

use evigen::scoring::{bleu, rouge_lsum, sari, sentence_bleu};

fn main() -> anyhow::Result<()> {
    let pairs = [
        ("the cat sat", "the cat sat down"),
        ("the cat sat. a dog ran.", "the dog ran. the cat sat down."),
        ("Fluid was drained from your lung.", "Fluid was drained from your lung."),
    ];
    for (candidate, reference) in pairs {
        println!("candidate: {candidate:?}\nreference: {reference:?}");
        println!(
            "  BLEU {:.4}  ROUGE-Lsum {:.4}  SARI {:.4}\n",
            sentence_bleu(candidate, reference),
            rouge_lsum(candidate, reference),
            sari(reference, candidate, reference)
        );
    }
    let candidates: Vec<&str> = pairs.iter().map(|p| p.0).collect();
    let references: Vec<&str> = pairs.iter().map(|p| p.1).collect();
    println!("corpus BLEU over all pairs: {:.4}", bleu(&candidates, &references)?);
    Ok(())
}
