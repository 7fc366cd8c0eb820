#![allow(dead_code)]

use mqm_stability::corpus::{RatingDataset, RatingRow};
use mqm_stability::scoring::WeightTable;

/// One segment per document, score-only ratings, explicit bucket ids.
/// `buckets[b] = (raters, n_docs)`.
pub fn layout_dataset(buckets: &[(Vec<String>, usize)], n_systems: usize) -> RatingDataset {
    let mut rows = Vec::new();
    let mut doc = 0;
    for (b, (raters, n_docs)) in buckets.iter().enumerate() {
        for _ in 0..*n_docs {
            for s in 0..n_systems {
                for r in raters {
                    rows.push(RatingRow {
                        line: 0,
                        lang_pair: None,
                        bucket_id: Some(format!("b{b}")),
                        doc_id: format!("doc{doc:03}"),
                        seg_index: 0,
                        system_id: format!("sys{s}"),
                        rater_id: r.clone(),
                        annotation: None,
                        score: Some((doc * 7 + s * 3) as f64 % 5.0),
                        target_text: None,
                    });
                }
            }
            doc += 1;
        }
    }
    RatingDataset::from_rows(rows, &WeightTable::default(), None).expect("fixture is valid")
}

fn rater(i: usize) -> String {
    char::from(b'A' + i as u8).to_string()
}

/// Seven raters in a rotation `(A,B,C), (B,C,D), ..., (G,A,B)`; six buckets
/// of 26 documents and one of 25.
pub fn rotation_layout() -> RatingDataset {
    let buckets: Vec<(Vec<String>, usize)> = (0..7)
        .map(|b| {
            let raters = (0..3).map(|k| rater((b + k) % 7)).collect();
            (raters, if b < 6 { 26 } else { 25 })
        })
        .collect();
    layout_dataset(&buckets, 2)
}

/// Six raters split into two disjoint buckets of 91 and 90 documents.
pub fn split_layout() -> RatingDataset {
    let buckets = vec![
        ((0..3).map(rater).collect(), 91),
        ((3..6).map(rater).collect(), 90),
    ];
    layout_dataset(&buckets, 2)
}
