//! Parsers for black-box generations: verbalized confidence values and
//! free-text label answers.

use std::sync::OnceLock;

use regex::Regex;

fn confidence_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)confidence\s*[:=\-]?\s*\[?\s*([0-9]{1,3}(?:\.[0-9]+)?)\s*%?").unwrap()
    })
}

fn bare_number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*\[?\s*([0-9]{1,3}(?:\.[0-9]+)?)\s*%?\s*\]?\s*\.?\s*$").unwrap()
    })
}

/// Extract a 0-100 confidence value from a generation. Tolerant about
/// format ("Confidence: 85", "confidence = 85%", "[85]", a bare "85"),
/// strict about range: values above 100 are parse failures.
pub fn parse_confidence(text: &str) -> Option<f64> {
    let capture = confidence_re()
        .captures(text)
        .or_else(|| bare_number_re().captures(text))?;
    let value: f64 = capture[1].parse().ok()?;
    (0.0..=100.0).contains(&value).then_some(value)
}

fn normalize_answer(text: &str) -> String {
    let trimmed = text
        .trim()
        .trim_matches(|c: char| "\"'`()[]".contains(c))
        .trim_end_matches(|c: char| ".!?:,;".contains(c))
        .trim();
    trimmed.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Map a free-text generation to a label index, or `None` when no label
/// matches unambiguously. Matching is case- and punctuation-insensitive:
/// exact match first, then the longest label the answer starts with, then
/// the longest label contained in the answer, then the unique label the
/// answer is a prefix of.
pub fn match_label(text: &str, labels: &[&str]) -> Option<usize> {
    let answer = normalize_answer(text);
    if answer.is_empty() {
        return None;
    }
    let normalized: Vec<String> = labels.iter().map(|l| normalize_answer(l)).collect();

    if let Some(i) = normalized.iter().position(|l| *l == answer) {
        return Some(i);
    }

    let longest = |candidates: Vec<usize>| -> Option<usize> {
        let best_len = candidates.iter().map(|&i| normalized[i].len()).max()?;
        let best: Vec<usize> = candidates
            .into_iter()
            .filter(|&i| normalized[i].len() == best_len)
            .collect();
        (best.len() == 1).then(|| best[0])
    };

    let starts: Vec<usize> = (0..normalized.len())
        .filter(|&i| !normalized[i].is_empty() && answer.starts_with(&normalized[i]))
        .collect();
    if !starts.is_empty() {
        return longest(starts);
    }

    let contains: Vec<usize> = (0..normalized.len())
        .filter(|&i| !normalized[i].is_empty() && answer.contains(&normalized[i]))
        .collect();
    if !contains.is_empty() {
        return longest(contains);
    }

    if answer.len() >= 3 {
        let prefixes: Vec<usize> =
            (0..normalized.len()).filter(|&i| normalized[i].starts_with(&answer)).collect();
        if prefixes.len() == 1 {
            return Some(prefixes[0]);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confidence_reply_corpus() {
        // One expected value per tolerated reply shape.
        let cases: &[(&str, Option<f64>)] = &[
            ("Confidence: 85", Some(85.0)),
            ("Confidence: 85%", Some(85.0)),
            ("confidence: 85", Some(85.0)),
            ("CONFIDENCE: 85", Some(85.0)),
            ("Confidence:85", Some(85.0)),
            ("Confidence = 85", Some(85.0)),
            ("Confidence - 85", Some(85.0)),
            ("Confidence: [85]", Some(85.0)),
            ("Confidence: 85.5", Some(85.5)),
            ("Confidence: 0", Some(0.0)),
            ("Confidence: 100", Some(100.0)),
            ("  Confidence: 42  ", Some(42.0)),
            ("The answer seems right.\nConfidence: 77", Some(77.0)),
            ("I'd estimate Confidence: 60 overall", Some(60.0)),
            ("85", Some(85.0)),
            ("85%", Some(85.0)),
            ("[85]", Some(85.0)),
            (" 85 .", Some(85.0)),
            ("Confidence: 150", None),
            ("Confidence: high", None),
            ("I am fairly sure about this.", None),
            ("", None),
        ];
        for (reply, expected) in cases {
            assert_eq!(parse_confidence(reply), *expected, "reply {reply:?}");
        }
    }

    #[test]
    fn label_matching_for_coreference() {
        let labels = ["coreferent", "distinct"];
        assert_eq!(match_label("coreferent", &labels), Some(0));
        assert_eq!(match_label("Coreferent.", &labels), Some(0));
        assert_eq!(match_label("\"distinct\"", &labels), Some(1));
        assert_eq!(match_label("Distinct entities", &labels), Some(1));
        assert_eq!(match_label("They are coreferent", &labels), Some(0));
        assert_eq!(match_label("no idea", &labels), None);
        assert_eq!(match_label("", &labels), None);
    }

    #[test]
    fn label_matching_prefers_longest_match() {
        let labels = ["Justified authority", "Justified authority over"];
        assert_eq!(match_label("justified authority", &labels), Some(0));
        assert_eq!(match_label("Justified authority over", &labels), Some(1));
        assert_eq!(match_label("justified authority over, I think", &labels), Some(1));
    }

    #[test]
    fn label_matching_handles_slashed_names() {
        let labels =
            ["CARE/HARM", "FAIRNESS/CHEATING", "AUTHORITY/SUBVERSION", "PURITY/DEGRADATION", "LOYALTY/BETRAYAL"];
        assert_eq!(match_label("care/harm", &labels), Some(0));
        assert_eq!(match_label("The moral foundation is FAIRNESS/CHEATING.", &labels), Some(1));
        assert_eq!(match_label("loyalty/betr", &labels), Some(4));
    }
}
