//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use medsocot_core::dataset::write_dataset;
use medsocot_core::QaPair;

pub fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn f1(overlap: f64, predicted: f64, reference: f64) -> f64 {
    if overlap == 0.0 {
        return 0.0;
    }
    let p = overlap / predicted;
    let r = overlap / reference;
    2.0 * p * r / (p + r)
}

/// Clipped n-gram overlap by exhaustive counting: for every distinct
/// prediction n-gram, scan both sequences and take the smaller count.
pub fn brute_rouge_n_f1(pred: &[String], reference: &[String], n: usize) -> f64 {
    let grams = |t: &[String]| -> Vec<Vec<String>> {
        if t.len() < n {
            Vec::new()
        } else {
            (0..=t.len() - n).map(|i| t[i..i + n].to_vec()).collect()
        }
    };
    let pg = grams(pred);
    let rg = grams(reference);
    let mut seen: Vec<&Vec<String>> = Vec::new();
    let mut overlap = 0usize;
    for g in &pg {
        if seen.contains(&g) {
            continue;
        }
        seen.push(g);
        let in_pred = pg.iter().filter(|x| *x == g).count();
        let in_ref = rg.iter().filter(|x| *x == g).count();
        overlap += in_pred.min(in_ref);
    }
    f1(overlap as f64, pg.len() as f64, rg.len() as f64)
}

/// Full-table LCS.
pub fn brute_lcs(a: &[String], b: &[String]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in (0..a.len()).rev() {
        for j in (0..b.len()).rev() {
            t[i][j] = if a[i] == b[j] {
                1 + t[i + 1][j + 1]
            } else {
                t[i + 1][j].max(t[i][j + 1])
            };
        }
    }
    t[0][0]
}

pub fn brute_rouge_l_f1(pred: &[String], reference: &[String]) -> f64 {
    f1(
        brute_lcs(pred, reference) as f64,
        pred.len() as f64,
        reference.len() as f64,
    )
}

pub fn pair(id: &str, question: &str, answer: &str, mh: &[&str], nh: &[&str]) -> QaPair {
    QaPair {
        id: id.into(),
        dataset: String::new(),
        question: question.into(),
        reference_answer: answer.into(),
        must_have: mh.iter().map(|s| s.to_string()).collect(),
        nice_to_have: nh.iter().map(|s| s.to_string()).collect(),
        ambiguous: None,
    }
}

/// Five pairs, each with the answer the mock model gives and the
/// factuality a hand trace through the mock judge yields.
pub struct FivePair {
    pub pair: QaPair,
    pub model_answer: &'static str,
    pub factuality: f64,
}

pub fn five_pairs() -> Vec<FivePair> {
    vec![
        // MH: entails, neutral; NH: entails -> comp 50, hall 0
        FivePair {
            pair: pair(
                "p1",
                "Is aspirin an antiplatelet drug?",
                "Aspirin is an antiplatelet drug that reduces clotting.",
                &["Aspirin is an antiplatelet drug", "Aspirin reduces fever"],
                &["It reduces clotting"],
            ),
            model_answer: "Aspirin is an antiplatelet drug. It reduces clotting.",
            factuality: 75.0,
        },
        // MH: entails; NH: neutral -> comp 100, hall 0
        FivePair {
            pair: pair(
                "p2",
                "Can ibuprofen be taken with food?",
                "Yes, taking it with food limits stomach upset.",
                &["Ibuprofen can be taken with food"],
                &["Ibuprofen is not addictive"],
            ),
            model_answer: "Ibuprofen can be taken with food.",
            factuality: 100.0,
        },
        // MH: contradicts; NH: neutral -> comp 0, hall 50
        FivePair {
            pair: pair(
                "p3",
                "Is metformin safe in pregnancy?",
                "Metformin is used in pregnancy under supervision.",
                &["Metformin is safe in pregnancy"],
                &["Metformin lowers glucose"],
            ),
            model_answer: "Metformin is not safe in pregnancy.",
            factuality: 25.0,
        },
        // MH: entails, entails, neutral -> comp 200/3, hall 0
        FivePair {
            pair: pair(
                "p4",
                "Does warfarin interact with vitamin K?",
                "Vitamin K counteracts warfarin, so diet matters.",
                &[
                    "Warfarin interacts with vitamin K",
                    "Diet matters",
                    "Warfarin needs monitoring",
                ],
                &[],
            ),
            model_answer: "Warfarin interacts with vitamin K. Diet matters.",
            factuality: (200.0 / 3.0 + 100.0) / 2.0,
        },
        // MH: entails; NH: contradicts, neutral -> comp 100, hall 100/3
        FivePair {
            pair: pair(
                "p5",
                "Is penicillin an antibiotic?",
                "Penicillin is a beta-lactam antibiotic.",
                &["Penicillin is an antibiotic"],
                &["Penicillin causes allergy", "Penicillin is cheap"],
            ),
            model_answer: "Penicillin is an antibiotic. Penicillin never causes allergy.",
            factuality: (100.0 - 100.0 / 3.0 + 100.0) / 2.0,
        },
    ]
}

/// Writes p1..p3 to `d1.jsonl` and p4..p5 to `d2.jsonl`.
pub fn write_five_pairs(dir: &Path) -> (PathBuf, PathBuf) {
    let pairs: Vec<QaPair> = five_pairs().into_iter().map(|f| f.pair).collect();
    let d1 = dir.join("d1.jsonl");
    let d2 = dir.join("d2.jsonl");
    write_dataset(&d1, &pairs[..3]).unwrap();
    write_dataset(&d2, &pairs[3..]).unwrap();
    (d1, d2)
}

pub fn direct_response(answer: &str) -> String {
    format!(
        "### 1. Understand the Question:\nBackground.\n\n### 2. Recall Relevant Medical Knowledge:\nFacts.\n\n### 8.Long-Form Answer:\n{answer}\nANSWER END\n\n### END"
    )
}
