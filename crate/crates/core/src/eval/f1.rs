use std::collections::HashMap;

/// Lower-cases, drops ASCII punctuation and the articles a/an/the, and
/// splits on whitespace.
pub fn normalize_answer(s: &str) -> Vec<String> {
    let cleaned: String = s
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    cleaned
        .split_whitespace()
        .filter(|t| !matches!(*t, "a" | "an" | "the"))
        .map(str::to_string)
        .collect()
}

fn f1_single(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return f64::from(u8::from(pred.is_empty() && gold.is_empty()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Token-overlap F1 of `predicted` against the best of `gold`. An empty gold
/// list stands for "no answer", which only an empty prediction matches.
pub fn token_f1(predicted: &str, gold: &[String]) -> f64 {
    let pred = normalize_answer(predicted);
    if gold.is_empty() {
        return f1_single(&pred, &[]);
    }
    gold.iter()
        .map(|g| f1_single(&pred, &normalize_answer(g)))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn golds(g: &[&str]) -> Vec<String> {
        g.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer("The  Denver Broncos!"), ["denver", "broncos"]);
        assert_eq!(normalize_answer("February 7, 2016"), ["february", "7", "2016"]);
        assert!(normalize_answer(" a an the ").is_empty());
    }

    #[test]
    fn reference_cases() {
        assert_eq!(token_f1("Denver Broncos", &golds(&["Denver Broncos"])), 1.0);
        assert_eq!(token_f1("Carolina Panthers", &golds(&["Denver Broncos"])), 0.0);
        let f = token_f1("February 7, 2016", &golds(&["February 7"]));
        assert!((f - 0.8).abs() < 1e-15);
        assert_eq!(token_f1("", &[]), 1.0);
        assert_eq!(token_f1("something", &[]), 0.0);
        assert_eq!(token_f1("", &golds(&["x"])), 0.0);
    }

    #[test]
    fn best_gold_wins() {
        let f = token_f1("February 7", &golds(&["February 7, 2016", "February 7"]));
        assert_eq!(f, 1.0);
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(a in "[a-d ]{0,12}", b in "[a-d ]{0,12}") {
            let ab = token_f1(&a, &[b.clone()]);
            let ba = token_f1(&b, &[a.clone()]);
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }
}
