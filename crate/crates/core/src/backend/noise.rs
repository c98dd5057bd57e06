use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::BoundingBox;

/// Characters an OCR substitution may produce.
pub const CONFUSION_ALPHABET: &[char] = &[
    'A', 'B', 'C', 'D', 'E', 'F', 'G', 'H', 'I', 'J', 'K', 'L', 'M', 'N', 'O', 'P', 'Q', 'R', 'S', 'T', 'U', 'V',
    'W', 'X', 'Y', 'Z', '0', '1', '2', '3', '4', '5', '6', '7', '8', '9',
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseProfile {
    pub seed: u64,
    pub drop_object_prob: f64,
    pub box_jitter_px: u32,
    pub char_error_rate: f64,
    pub verdict_flip_prob: f64,
}

impl NoiseProfile {
    pub fn seeded(seed: u64) -> Self {
        Self { seed, ..Default::default() }
    }

    pub fn is_perfect(&self) -> bool {
        self.drop_object_prob == 0.0
            && self.box_jitter_px == 0
            && self.char_error_rate == 0.0
            && self.verdict_flip_prob == 0.0
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [
            ("drop_object_prob", self.drop_object_prob),
            ("char_error_rate", self.char_error_rate),
            ("verdict_flip_prob", self.verdict_flip_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} = {p} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Generator for one perturbation site. The stream depends only on
/// `(seed, domain, key)`, never on call order, so concurrent callers see
/// identical perturbations.
pub fn site_rng(seed: u64, domain: &str, key: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(domain.as_bytes());
    h.update([0u8]);
    h.update(key.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(bytes)
}

/// Whether the verdict for `scene_id` is flipped under this profile.
pub fn verdict_flipped(profile: &NoiseProfile, scene_id: &str) -> bool {
    profile.verdict_flip_prob > 0.0
        && site_rng(profile.seed, "verdict", scene_id).random::<f64>() < profile.verdict_flip_prob
}

/// Shifts each edge by an independent offset in `[-jitter, jitter]`, then
/// clips to the image. Falls back to the original box if it collapses.
pub fn jitter_box(b: &BoundingBox, jitter: u32, width: u32, height: u32, rng: &mut impl Rng) -> BoundingBox {
    if jitter == 0 {
        return *b;
    }
    let j = i64::from(jitter);
    let mut edge = |v: i64, max: u32| (v + rng.random_range(-j..=j)).clamp(0, i64::from(max));
    let x0 = edge(i64::from(b.x), width);
    let x1 = edge(b.right() as i64, width);
    let y0 = edge(i64::from(b.y), height);
    let y1 = edge(b.bottom() as i64, height);
    if x1 <= x0 || y1 <= y0 {
        return *b;
    }
    BoundingBox {
        x: x0 as u32,
        y: y0 as u32,
        w: (x1 - x0) as u32,
        h: (y1 - y0) as u32,
        score: b.score,
    }
}

/// Replaces each character with probability `rate` by a different one from
/// [`CONFUSION_ALPHABET`].
pub fn corrupt_text(text: &str, rate: f64, rng: &mut impl Rng) -> String {
    text.chars()
        .map(|c| {
            if rate > 0.0 && rng.random::<f64>() < rate {
                loop {
                    let idx = rng.random_range(0..CONFUSION_ALPHABET.len() as u32) as usize;
                    let sub = CONFUSION_ALPHABET[idx];
                    if sub != c {
                        break sub;
                    }
                }
            } else {
                c
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn site_streams_are_reproducible_and_distinct() {
        let a: u64 = site_rng(7, "keyobjects", "scene-1").random();
        let b: u64 = site_rng(7, "keyobjects", "scene-1").random();
        let c: u64 = site_rng(7, "keyobjects", "scene-2").random();
        let d: u64 = site_rng(8, "keyobjects", "scene-1").random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn jitter_stays_in_bounds() {
        let b = BoundingBox::new(2, 100, 50, 30);
        for i in 0..200 {
            let mut rng = site_rng(11, "detect", &i.to_string());
            let j = jitter_box(&b, 4, 60, 480, &mut rng);
            for (orig, new) in [
                (b.x as i64, j.x as i64),
                (b.y as i64, j.y as i64),
                (b.right() as i64, j.right() as i64),
                (b.bottom() as i64, j.bottom() as i64),
            ] {
                assert!((orig - new).abs() <= 4);
            }
            assert!(j.right() <= 60 && j.w > 0 && j.h > 0);
        }
    }

    #[test]
    fn corrupt_text_rates() {
        let mut rng = site_rng(3, "ocr", "x");
        assert_eq!(corrupt_text("EXIT", 0.0, &mut rng), "EXIT");
        let all = corrupt_text("EXIT", 1.0, &mut rng);
        assert_eq!(all.chars().count(), 4);
        assert!(all.chars().zip("EXIT".chars()).all(|(a, b)| a != b));
    }
}
