use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::model::OcrToken;

/// Default token pairing radius (px) at 640x480.
pub const DEFAULT_PAIRING_RADIUS: f64 = 24.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Modification {
    pub before: OcrToken,
    pub after: OcrToken,
    pub edit_distance: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenDiff {
    /// Text present only in the AR view.
    pub additions: Vec<OcrToken>,
    /// Text present only in the raw view.
    pub removals: Vec<OcrToken>,
    pub modifications: Vec<Modification>,
}

impl TokenDiff {
    pub fn is_empty(&self) -> bool {
        self.additions.is_empty() && self.removals.is_empty() && self.modifications.is_empty()
    }

    pub fn len(&self) -> usize {
        self.additions.len() + self.removals.len() + self.modifications.len()
    }
}

/// Levenshtein distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> u32 {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<u32> = (0..=b.len() as u32).collect();
    let mut cur = vec![0u32; b.len() + 1];
    for (i, ca) in a.chars().enumerate() {
        cur[0] = i as u32 + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + u32::from(ca != *cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Result of pairing raw tokens with AR tokens, by index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenMatching {
    /// `(raw index, ar index)`
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_raw: Vec<usize>,
    pub unmatched_ar: Vec<usize>,
}

type TokenKey<'a> = (u32, u32, u32, u32, &'a str, u64);

fn token_key(t: &OcrToken) -> TokenKey<'_> {
    (t.bbox.y, t.bbox.x, t.bbox.w, t.bbox.h, t.text.as_str(), t.confidence.to_bits())
}

fn center_distance2(a: &OcrToken, b: &OcrToken) -> i64 {
    let (ax, ay) = a.bbox.center2();
    let (bx, by) = b.bbox.center2();
    (ax - bx).pow(2) + (ay - by).pow(2)
}

/// Greedy nearest-center pairing within `radius` pixels.
///
/// Candidate pairs are taken in order of center distance; ties are broken
/// by the unordered pair of token keys, so swapping the two inputs yields
/// the mirrored matching.
pub fn match_tokens(raw: &[OcrToken], ar: &[OcrToken], radius: f64) -> TokenMatching {
    // Centers are doubled to stay integral, so compare against (2r)^2.
    let limit = (2.0 * radius).powi(2);
    let mut candidates: Vec<(i64, usize, usize)> = Vec::new();
    for (i, r) in raw.iter().enumerate() {
        for (j, a) in ar.iter().enumerate() {
            let d2 = center_distance2(r, a);
            if (d2 as f64) <= limit {
                candidates.push((d2, i, j));
            }
        }
    }
    let unordered = |i: usize, j: usize| {
        let (a, b) = (token_key(&raw[i]), token_key(&ar[j]));
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    };
    candidates.sort_by(|x, y| match x.0.cmp(&y.0) {
        Ordering::Equal => unordered(x.1, x.2).cmp(&unordered(y.1, y.2)),
        other => other,
    });

    let mut raw_used = vec![false; raw.len()];
    let mut ar_used = vec![false; ar.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !raw_used[i] && !ar_used[j] {
            raw_used[i] = true;
            ar_used[j] = true;
            pairs.push((i, j));
        }
    }
    TokenMatching {
        pairs,
        unmatched_raw: (0..raw.len()).filter(|i| !raw_used[*i]).collect(),
        unmatched_ar: (0..ar.len()).filter(|j| !ar_used[*j]).collect(),
    }
}

/// Splits the two token sets into additions, removals and modifications.
/// Matched pairs with identical text are dropped. Each list is in raster order.
pub fn diff_tokens(raw: &[OcrToken], ar: &[OcrToken], pairing_radius: f64) -> TokenDiff {
    let m = match_tokens(raw, ar, pairing_radius);
    let mut diff = TokenDiff {
        additions: m.unmatched_ar.iter().map(|j| ar[*j].clone()).collect(),
        removals: m.unmatched_raw.iter().map(|i| raw[*i].clone()).collect(),
        modifications: m
            .pairs
            .iter()
            .filter(|(i, j)| raw[*i].text != ar[*j].text)
            .map(|(i, j)| Modification {
                before: raw[*i].clone(),
                after: ar[*j].clone(),
                edit_distance: levenshtein(&raw[*i].text, &ar[*j].text),
            })
            .collect(),
    };
    diff.additions.sort_by(|a, b| token_key(a).cmp(&token_key(b)));
    diff.removals.sort_by(|a, b| token_key(a).cmp(&token_key(b)));
    diff.modifications
        .sort_by(|a, b| (token_key(&a.before), token_key(&a.after)).cmp(&(token_key(&b.before), token_key(&b.after))));
    diff
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BoundingBox;

    fn tok(text: &str, x: u32, y: u32) -> OcrToken {
        OcrToken::new(text, BoundingBox::new(x, y, 6 * text.chars().count() as u32, 7))
    }

    #[test]
    fn identical_sets_give_empty_diff() {
        let t = vec![tok("STOP", 10, 10), tok("EXIT", 100, 40)];
        assert!(diff_tokens(&t, &t, 24.0).is_empty());
    }

    #[test]
    fn right_to_left_is_one_modification() {
        let raw = vec![OcrToken::new("RIGHT", BoundingBox::new(120, 48, 40, 14))];
        let ar = vec![OcrToken::new("LEFT", BoundingBox::new(120, 48, 40, 14))];
        let d = diff_tokens(&raw, &ar, 24.0);
        assert_eq!(d.modifications.len(), 1);
        assert_eq!(d.modifications[0].edit_distance, 4);
        assert!(d.additions.is_empty() && d.removals.is_empty());
    }

    #[test]
    fn additions_only() {
        let d = diff_tokens(&[], &[tok("FREE", 10, 10), tok("WIFI", 50, 10)], 24.0);
        assert_eq!(d.additions.len(), 2);
        assert_eq!(d.len(), 2);
    }

    #[test]
    fn far_tokens_do_not_pair() {
        let d = diff_tokens(&[tok("EXIT", 0, 0)], &[tok("EXIT", 200, 200)], 24.0);
        assert_eq!((d.additions.len(), d.removals.len()), (1, 1));
    }

    #[test]
    fn radius_boundary_is_inclusive() {
        let raw = [tok("A", 0, 0)];
        let ar = [tok("B", 24, 0)];
        assert_eq!(diff_tokens(&raw, &ar, 24.0).modifications.len(), 1);
        assert_eq!(diff_tokens(&raw, &ar, 23.9).modifications.len(), 0);
    }

    #[test]
    fn nearest_pair_wins() {
        let raw = [tok("EXIT", 100, 100)];
        let ar = [tok("EXIT", 110, 100), tok("EXTT", 101, 100)];
        let d = diff_tokens(&raw, &ar, 24.0);
        assert_eq!(d.modifications.len(), 1);
        assert_eq!(d.modifications[0].after.text, "EXTT");
        assert_eq!(d.additions[0].text, "EXIT");
    }

    #[test]
    fn levenshtein_basics() {
        assert_eq!(levenshtein("", ""), 0);
        assert_eq!(levenshtein("abc", ""), 3);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("→", "←"), 1);
    }
}
