//! The stage-2 answer grammar: parsing, validity flags and citation repair.

use std::collections::BTreeSet;

use evigen::answer::{parse_answer_text, EvidenceItem, EvidenceSet};

fn main() {
    let allowed: BTreeSet<u32> = [1, 2, 3].into();
    for text in [
        "Fluid built up around the lung (2). A tube drained it. (3)",
        "Fluid built up around the lung. (2) A tube drained it. (3, 4)",
        "No citations at all.",
    ] {
        let answer = parse_answer_text(text, &allowed);
        println!("{text:?}");
        println!(
            "  sentences {}  words {}  format_valid {}  length_valid {}",
            answer.sentences.len(),
            answer.word_count,
            answer.format_valid,
            answer.length_valid
        );
        if !answer.format_valid {
            println!("  violations: {:?}", answer.violations(&allowed));
            let evidence = EvidenceSet {
                case_id: "demo".into(),
                items: vec![
                    EvidenceItem {
                        id: 2,
                        text: "Chest x-ray showed a large left pleural effusion.".into(),
                    },
                    EvidenceItem {
                        id: 3,
                        text: "A chest tube was placed to drain the effusion.".into(),
                    },
                ],
            };
            println!("  repaired: {}", answer.repaired(&evidence).render());
        }
    }
}
