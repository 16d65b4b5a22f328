/// Unit-cost edit distance (insert, delete, substitute).
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.len() < b.len() {
        return levenshtein(b, a);
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // plain recursion over all edit scripts
    fn exhaustive(a: &[u8], b: &[u8]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = exhaustive(ra, rb) + usize::from(x != y);
                sub.min(exhaustive(ra, b) + 1).min(exhaustive(a, rb) + 1)
            }
        }
    }

    #[test]
    fn known_values() {
        assert_eq!(levenshtein(b"kitten", b"sitting"), 3);
        assert_eq!(exhaustive(b"kitten", b"sitting"), 3);
        assert_eq!(levenshtein::<u32>(&[], &[1, 2, 3]), 3);
        assert_eq!(levenshtein(&[4, 5], &[4, 5]), 0);
    }

    proptest! {
        #[test]
        fn agrees_with_exhaustive(a in prop::collection::vec(0u8..3, 0..7), b in prop::collection::vec(0u8..3, 0..7)) {
            prop_assert_eq!(levenshtein(&a, &b), exhaustive(&a, &b));
        }

        #[test]
        fn is_a_metric(a in prop::collection::vec(0u8..4, 0..12),
                       b in prop::collection::vec(0u8..4, 0..12),
                       c in prop::collection::vec(0u8..4, 0..12)) {
            prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
            prop_assert_eq!(levenshtein(&a, &b) == 0, a == b);
            prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
        }
    }
}
