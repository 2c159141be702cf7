//! Answer normalization and closed-form answer parsing.

use serde::{Deserialize, Serialize};

use crate::benchgen::{QaItem, QaOption, QuestionType};

/// A response reduced to something comparable with the gold answer.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ParsedAnswer {
    Yes,
    No,
    /// MC option label.
    Option(String),
    /// Normalized free-form phrase (subjective questions).
    Phrase(String),
    Unparsed,
}

impl ParsedAnswer {
    pub fn is_unparsed(&self) -> bool {
        matches!(self, ParsedAnswer::Unparsed)
    }
}

/// Lowercase words split on anything but letters, digits and apostrophes.
pub fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .replace('\u{2019}', "'")
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|w| !w.is_empty())
        .map(|w| w.trim_matches('\'').to_string())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Lowercased words joined by single spaces.
pub fn normalize(text: &str) -> String {
    words(text).join(" ")
}

/// Normalized phrase with leading articles dropped, for phrase equality.
pub fn normalize_phrase(text: &str) -> String {
    let w = words(text);
    let start = w
        .iter()
        .take_while(|w| matches!(w.as_str(), "a" | "an" | "the"))
        .count();
    w[start..].join(" ")
}

fn contains_words(haystack: &str, needle: &str) -> bool {
    !needle.is_empty() && format!(" {haystack} ").contains(&format!(" {needle} "))
}

/// The gold answer of a closed item in parsed form.
pub fn gold_answer(qa: &QaItem) -> ParsedAnswer {
    match qa.qtype {
        QuestionType::Yn => parse_yes_no(&qa.gold),
        QuestionType::Mc => ParsedAnswer::Option(qa.gold.clone()),
        QuestionType::Subj => ParsedAnswer::Phrase(normalize_phrase(&qa.gold)),
    }
}

pub fn parse_closed_answer(raw: &str, qa: &QaItem) -> ParsedAnswer {
    match qa.qtype {
        QuestionType::Yn => parse_yes_no(raw),
        QuestionType::Mc => parse_choice(raw, &qa.options),
        QuestionType::Subj => ParsedAnswer::Phrase(normalize_phrase(raw)),
    }
}

fn yes_no_word(w: &str) -> Option<ParsedAnswer> {
    match w {
        "yes" => Some(ParsedAnswer::Yes),
        "no" => Some(ParsedAnswer::No),
        _ => None,
    }
}

/// Leading "yes"/"no"; failing that, the word after a final "answer is".
pub fn parse_yes_no(raw: &str) -> ParsedAnswer {
    let w = words(raw);
    if let Some(a) = w.first().and_then(|w| yes_no_word(w)) {
        return a;
    }
    if let Some(i) = w.iter().rposition(|w| w == "answer") {
        let rest = &w[i + 1..];
        let rest = rest.strip_prefix(&["is".to_string()]).unwrap_or(rest);
        if let Some(a) = rest.first().and_then(|w| yes_no_word(w)) {
            return a;
        }
    }
    ParsedAnswer::Unparsed
}

fn is_label(c: char, options: &[QaOption]) -> bool {
    options.iter().any(|o| o.label.len() == 1 && o.label.starts_with(c))
}

fn label_at_start(raw: &str, options: &[QaOption]) -> Option<String> {
    let t = raw.trim_start().trim_start_matches(['*', '"', '\'']);
    let mut chars = t.chars();
    let first = chars.next()?;
    if first == '(' {
        let c = chars.next()?;
        return (chars.next() == Some(')') && is_label(c, options)).then(|| c.to_string());
    }
    if !is_label(first, options) {
        return None;
    }
    let rest = chars.as_str();
    match rest.chars().next() {
        None | Some('.' | ')' | ':' | ',' | '*') => Some(first.to_string()),
        Some(' ') => {
            // "B chopping some onions" is a label; "A baby ..." is prose.
            let text = options.iter().find(|o| o.label.starts_with(first))?;
            let rest = normalize(rest);
            let text = normalize(&text.text);
            (!text.is_empty() && rest.starts_with(&text)).then(|| first.to_string())
        }
        _ => None,
    }
}

/// The single distinct "(X)" label mentioned anywhere, if any.
fn parenthesized_label(raw: &str, options: &[QaOption]) -> Option<String> {
    let chars: Vec<char> = raw.chars().collect();
    let mut found: Option<char> = None;
    for w in chars.windows(3) {
        if w[0] == '(' && w[2] == ')' && is_label(w[1], options) {
            match found {
                Some(f) if f != w[1] => return None,
                _ => found = Some(w[1]),
            }
        }
    }
    found.map(|c| c.to_string())
}

/// Option label from a leading label form ("(B)", "B", "B.", "B)", "B:"),
/// a single parenthesized label, or a unique verbatim option-text match.
pub fn parse_choice(raw: &str, options: &[QaOption]) -> ParsedAnswer {
    if let Some(l) = label_at_start(raw, options).or_else(|| parenthesized_label(raw, options)) {
        return ParsedAnswer::Option(l);
    }
    let norm = normalize(raw);
    let mut matching = options
        .iter()
        .filter(|o| contains_words(&norm, &normalize(&o.text)));
    match (matching.next(), matching.next()) {
        (Some(o), None) => ParsedAnswer::Option(o.label.clone()),
        _ => ParsedAnswer::Unparsed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn options() -> Vec<QaOption> {
        ["fixing a computer", "chopping some onions", "sleeping", "a baby crying"]
            .iter()
            .enumerate()
            .map(|(i, t)| QaOption {
                label: char::from(b'A' + i as u8).to_string(),
                text: t.to_string(),
            })
            .collect()
    }

    #[test]
    fn yes_no_forms() {
        assert_eq!(parse_yes_no("Yes, the baby is fixing a computer."), ParsedAnswer::Yes);
        assert_eq!(parse_yes_no("  no."), ParsedAnswer::No);
        assert_eq!(parse_yes_no("NO"), ParsedAnswer::No);
        assert_eq!(parse_yes_no("Nobody knows"), ParsedAnswer::Unparsed);
        assert_eq!(parse_yes_no("I cannot determine this."), ParsedAnswer::Unparsed);
        assert_eq!(
            parse_yes_no("The image shows a bed. So the answer is yes."),
            ParsedAnswer::Yes
        );
    }

    #[test]
    fn choice_label_forms() {
        let o = options();
        for raw in ["(B) chopping some onions", "B", "B.", "B)", "B: onions", "**B**", "B chopping some onions"] {
            assert_eq!(parse_choice(raw, &o), ParsedAnswer::Option("B".into()), "{raw}");
        }
        assert_eq!(parse_choice("The answer is (C).", &o), ParsedAnswer::Option("C".into()));
        assert_eq!(parse_choice("(A) or (B)", &o), ParsedAnswer::Option("A".into()));
    }

    #[test]
    fn choice_text_match_must_be_unique() {
        let o = options();
        assert_eq!(parse_choice("The baby is sleeping.", &o), ParsedAnswer::Option("C".into()));
        assert_eq!(parse_choice("A baby crying", &o), ParsedAnswer::Option("D".into()));
        assert_eq!(
            parse_choice("sleeping or fixing a computer", &o),
            ParsedAnswer::Unparsed
        );
        assert_eq!(parse_choice("I cannot determine this.", &o), ParsedAnswer::Unparsed);
        assert_eq!(parse_choice("E", &o), ParsedAnswer::Unparsed);
    }

    #[test]
    fn phrase_normalization() {
        assert_eq!(normalize_phrase("The  Baby's bed!"), "baby's bed");
        assert_eq!(normalize_phrase("Fixing a computer."), "fixing a computer");
    }
}
