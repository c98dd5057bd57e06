use std::fmt::Write;

use super::diff::TokenDiff;

/// Identifier of the prompt template below. Bump it whenever the wording changes.
pub const TEMPLATE_ID: &str = "vim-diff-v1";

pub const IMAGE_ONLY_INSTRUCTION: &str = "OCR found no text differences between the two views. \
Compare the images directly and decide whether the virtual content changes the meaning of any \
real-world sign, symbol or direction.";

const PREAMBLE: &str = "You are checking an augmented reality scene for visual information manipulation. \
Image 1 is the real-world view. Image 2 is the same view with virtual content overlaid.";

const DIFF_INSTRUCTION: &str = "Decide whether these differences change the meaning of real-world \
information the user relies on.";

const ANSWER_FORMAT: &str =
    "Answer with JSON: {\"manipulated\": true or false, \"confidence\": 0 to 1, \"rationale\": \"...\"}";

/// Renders the difference prompt. Identical inputs produce identical bytes.
pub fn build_prompt(diff: &TokenDiff, scene_context: Option<&str>) -> String {
    let mut out = String::new();
    out.push_str(PREAMBLE);
    out.push('\n');
    if let Some(ctx) = scene_context.map(str::trim).filter(|c| !c.is_empty()) {
        let _ = writeln!(out, "Scene context: {ctx}");
    }
    if diff.is_empty() {
        out.push_str(IMAGE_ONLY_INSTRUCTION);
        out.push('\n');
    } else {
        let _ = writeln!(
            out,
            "OCR found {} text difference(s) between the real-world view and the AR view:",
            diff.len()
        );
        let mut n = 0;
        for m in &diff.modifications {
            n += 1;
            let _ = writeln!(
                out,
                "{n}. modified: \"{}\" became \"{}\" at ({}, {})",
                m.before.text, m.after.text, m.before.bbox.x, m.before.bbox.y
            );
        }
        for t in &diff.additions {
            n += 1;
            let _ = writeln!(out, "{n}. added: \"{}\" at ({}, {})", t.text, t.bbox.x, t.bbox.y);
        }
        for t in &diff.removals {
            n += 1;
            let _ = writeln!(out, "{n}. removed: \"{}\" at ({}, {})", t.text, t.bbox.x, t.bbox.y);
        }
        out.push_str(DIFF_INSTRUCTION);
        out.push('\n');
    }
    out.push_str(ANSWER_FORMAT);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BoundingBox, OcrToken};
    use crate::vim::diff::Modification;

    fn numbered_lines(p: &str) -> usize {
        p.lines()
            .filter(|l| {
                let digits: String = l.chars().take_while(char::is_ascii_digit).collect();
                !digits.is_empty() && l[digits.len()..].starts_with(". ")
            })
            .count()
    }

    #[test]
    fn modification_mentions_both_texts_and_location() {
        let before = OcrToken::new("RIGHT", BoundingBox::new(120, 48, 40, 14));
        let after = OcrToken::new("LEFT", BoundingBox::new(120, 48, 40, 14));
        let diff = TokenDiff {
            modifications: vec![Modification {
                before,
                after,
                edit_distance: 4,
            }],
            ..Default::default()
        };
        let p = build_prompt(&diff, None);
        assert!(p.contains("RIGHT") && p.contains("LEFT") && p.contains("(120, 48)"), "{p}");
        assert_eq!(numbered_lines(&p), 1);
    }

    #[test]
    fn empty_diff_uses_image_only_instruction() {
        let p = build_prompt(&TokenDiff::default(), None);
        assert!(p.contains(IMAGE_ONLY_INSTRUCTION));
        assert_eq!(numbered_lines(&p), 0);
    }

    #[test]
    fn three_entries_three_lines() {
        let t = |s: &str, x| OcrToken::new(s, BoundingBox::new(x, 5, 10, 7));
        let diff = TokenDiff {
            additions: vec![t("FREE", 1), t("WIFI", 30)],
            removals: vec![t("EXIT", 60)],
            modifications: vec![],
        };
        let p = build_prompt(&diff, Some("hospital corridor"));
        assert_eq!(numbered_lines(&p), 3);
        assert!(p.contains("Scene context: hospital corridor"));
        assert_eq!(p, build_prompt(&diff.clone(), Some("hospital corridor")));
    }
}
