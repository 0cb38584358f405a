use std::collections::BTreeMap;

/// Lowercase, split on anything that is not ASCII alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_ascii_lowercase)
        .collect()
}

/// Re-tokenize a list of raw tokens (e.g. `diamond_block` → `diamond`, `block`).
pub fn normalize<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    tokens.iter().flat_map(|t| tokenize(t.as_ref())).collect()
}

fn counts<S: AsRef<str>>(tokens: &[S]) -> BTreeMap<String, u64> {
    let mut m = BTreeMap::new();
    for t in normalize(tokens) {
        *m.entry(t).or_insert(0) += 1;
    }
    m
}

/// Cosine similarity of token count vectors. Symmetric, in `[0, 1]`,
/// exactly 1 for identical non-empty multisets and 0 when either side is
/// empty or the two share no token.
pub fn similarity<A: AsRef<str>, B: AsRef<str>>(a: &[A], b: &[B]) -> f64 {
    let ca = counts(a);
    let cb = counts(b);
    if ca.is_empty() || cb.is_empty() {
        return 0.0;
    }
    let dot: u64 = ca
        .iter()
        .filter_map(|(t, n)| cb.get(t).map(|m| n * m))
        .sum();
    if dot == 0 {
        return 0.0;
    }
    let na: u64 = ca.values().map(|n| n * n).sum();
    let nb: u64 = cb.values().map(|n| n * n).sum();
    // sqrt of the product keeps identical inputs at exactly 1.0.
    (dot as f64 / ((na as f64) * (nb as f64)).sqrt()).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenizer_rules() {
        assert_eq!(
            tokenize("Find the Village @ (3,4); diamond_block!"),
            vec!["find", "the", "village", "3", "4", "diamond", "block"]
        );
        assert!(tokenize("  ;;; ").is_empty());
    }

    #[test]
    fn reference_values() {
        assert_eq!(similarity(&["a", "b"], &["a", "b"]), 1.0);
        assert_eq!(similarity(&["a"], &["b"]), 0.0);
        assert_eq!(similarity::<&str, &str>(&[], &["b"]), 0.0);
        // (1,1,0)·(1,0,1) / (√2·√2)
        assert_eq!(similarity(&["a", "b"], &["a", "c"]), 0.5);
    }

    proptest! {
        #[test]
        fn axioms(a in prop::collection::vec("[a-e]{1,2}", 0..8),
                  b in prop::collection::vec("[a-e]{1,2}", 0..8)) {
            let s = similarity(&a, &b);
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert_eq!(s, similarity(&b, &a));
            if !a.is_empty() {
                prop_assert_eq!(similarity(&a, &a), 1.0);
            }
        }
    }
}
