//! Versioned prompt template assets and the placeholder renderer.
//!
//! Templates live as text files under `templates/` and use `{field}`
//! placeholder syntax. Rendering is plain substitution: deterministic and
//! injective as long as the field values differ.

pub mod coref {
    pub const TRUE_FALSE: &str = include_str!("../../templates/coref/true_false.txt");
    pub const MULTIPLE_CHOICE: &str = include_str!("../../templates/coref/multiple_choice.txt");
    pub const GENERATIVE: &str = include_str!("../../templates/coref/generative.txt");
    pub const GENERATION_SAMPLING: &str =
        include_str!("../../templates/coref/generation_sampling.txt");
    pub const VERBALIZED: &str =
        include_str!("../../templates/coref/verbalized_confidence.txt");
    pub const GENERATION_DESCRIPTIONS: &str =
        include_str!("../../templates/coref/generation_descriptions.txt");
}

pub mod morality {
    pub const FOUNDATION_DEFINITIONS: &str =
        include_str!("../../templates/morality/foundation_definitions.txt");
    pub const ROLE_DEFINITIONS: &str =
        include_str!("../../templates/morality/role_definitions.txt");
    pub const FOUNDATION_TRUE_FALSE: &str =
        include_str!("../../templates/morality/foundation_true_false.txt");
    pub const FOUNDATION_MULTIPLE_CHOICE: &str =
        include_str!("../../templates/morality/foundation_multiple_choice.txt");
    pub const FOUNDATION_GENERATIVE: &str =
        include_str!("../../templates/morality/foundation_generative.txt");
    pub const FOUNDATION_GENERATION_SAMPLING: &str =
        include_str!("../../templates/morality/foundation_generation_sampling.txt");
    pub const FOUNDATION_VERBALIZED: &str =
        include_str!("../../templates/morality/foundation_verbalized.txt");
    pub const FOUNDATION_DESCRIPTIONS: &str =
        include_str!("../../templates/morality/foundation_descriptions.txt");
    pub const ROLE_TRUE_FALSE: &str =
        include_str!("../../templates/morality/role_true_false.txt");
    pub const ROLE_MULTIPLE_CHOICE: &str =
        include_str!("../../templates/morality/role_multiple_choice.txt");
    pub const ROLE_GENERATIVE: &str =
        include_str!("../../templates/morality/role_generative.txt");
    pub const ROLE_GENERATION_SAMPLING: &str =
        include_str!("../../templates/morality/role_generation_sampling.txt");
    pub const ROLE_VERBALIZED: &str =
        include_str!("../../templates/morality/role_verbalized.txt");
    pub const ROLE_DESCRIPTIONS: &str =
        include_str!("../../templates/morality/role_descriptions.txt");
}

/// Substitute `{field}` placeholders. Unknown placeholders are left as-is
/// so template typos surface in rendered output rather than vanishing.
pub fn render(template: &str, fields: &[(&str, &str)]) -> String {
    let mut out = template.trim_end().to_string();
    for (key, value) in fields {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}

/// The non-empty lines of a description file, in order.
pub fn description_lines(text: &str) -> Vec<&str> {
    text.lines().map(str::trim).filter(|l| !l.is_empty()).collect()
}

/// Prepend exemplar blocks to a query prompt.
pub fn with_shots(exemplars: &[String], query: &str) -> String {
    if exemplars.is_empty() {
        return query.to_string();
    }
    let mut out = String::new();
    for e in exemplars {
        out.push_str(e);
        out.push_str("\n\n");
    }
    out.push_str(query);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_substitutes_all_occurrences() {
        let out = render("{a} and {a} or {b}", &[("a", "x"), ("b", "y")]);
        assert_eq!(out, "x and x or y");
    }

    #[test]
    fn coref_true_false_template_has_the_answer_cue() {
        let out = render(
            coref::TRUE_FALSE,
            &[
                ("entity1", "the cell"),
                ("sent1", "The cell divides."),
                ("entity2", "it"),
                ("sent2", "Then it grows."),
                ("label", "coreferent"),
            ],
        );
        assert!(out.contains("true or false? A."));
        assert!(out.contains("Entity 1: the cell"));
        assert!(!out.contains('{'));
    }

    #[test]
    fn verbalized_template_contains_the_format_instruction() {
        let out = render(
            coref::VERBALIZED,
            &[
                ("entity1", "a"),
                ("sent1", "s1"),
                ("entity2", "b"),
                ("sent2", "s2"),
                ("label", "coreferent"),
            ],
        );
        assert!(out.contains("please only include the numerical number in the range of 0-100"));
    }

    #[test]
    fn description_files_have_ten_paraphrases() {
        assert_eq!(description_lines(coref::GENERATION_DESCRIPTIONS).len(), 10);
        assert_eq!(description_lines(morality::FOUNDATION_DESCRIPTIONS).len(), 10);
        assert_eq!(description_lines(morality::ROLE_DESCRIPTIONS).len(), 10);
    }

    #[test]
    fn shots_are_prepended_in_order() {
        let out = with_shots(&["one".into(), "two".into()], "query");
        assert_eq!(out, "one\n\ntwo\n\nquery");
        assert_eq!(with_shots(&[], "query"), "query");
    }
}
