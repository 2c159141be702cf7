//! Reader for the annotated sentence format.
//!
//! A corpus file is UTF-8 text made of sentence blocks separated by blank
//! lines. Each token line carries seven tab-separated columns:
//!
//! ```text
//! index TAB surface TAB lemma TAB pos TAB dep TAB head TAB ner
//! ```
//!
//! `index` and `head` are 0-based; the root token points at itself. An empty
//! `ner` column (or `_`/`O`) means the token is not part of a named entity.
//! After the token lines a block may list noun chunks and semantic-role
//! spans as footer lines, and may start with an optional `#id` line:
//!
//! ```text
//! #id omcs-001
//! #chunk start end root
//! #role start end LABEL
//! ```
//!
//! Ranges are half-open token index ranges.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: malformed {field}: {message}")]
    Malformed {
        line: usize,
        field: &'static str,
        message: String,
    },
    #[error("sentence {sentence}: {message}")]
    Invalid { sentence: String, message: String },
    #[error("limit must be at least 1")]
    ZeroLimit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenAnnotation {
    pub index: usize,
    pub surface: String,
    pub lemma: String,
    pub pos: String,
    pub dep: String,
    pub head: usize,
    /// Named-entity tag, empty when the token is not part of an entity.
    pub ner: String,
}

impl TokenAnnotation {
    pub fn is_entity(&self) -> bool {
        !self.ner.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleSpan {
    pub start: usize,
    pub end: usize,
    pub role: String,
}

impl RoleSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NounChunk {
    pub start: usize,
    pub end: usize,
    pub root: usize,
}

impl NounChunk {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub id: String,
    pub tokens: Vec<TokenAnnotation>,
    pub noun_chunks: Vec<NounChunk>,
    pub roles: Vec<RoleSpan>,
}

impl AnnotatedSentence {
    /// Checks every structural invariant; the error names the sentence.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |message: String| CorpusError::Invalid {
            sentence: self.id.clone(),
            message,
        };
        let n = self.tokens.len();
        if n == 0 {
            return Err(invalid("sentence has no tokens".into()));
        }
        for (position, token) in self.tokens.iter().enumerate() {
            if token.index != position {
                return Err(invalid(format!(
                    "token index {} at position {position}; indices must be contiguous from 0",
                    token.index
                )));
            }
            if token.head >= n {
                return Err(invalid(format!(
                    "token {position} head {} out of bounds ({n} tokens)",
                    token.head
                )));
            }
        }
        for chunk in &self.noun_chunks {
            if !(chunk.start < chunk.end && chunk.end <= n) {
                return Err(invalid(format!(
                    "chunk {}..{} out of bounds ({n} tokens)",
                    chunk.start, chunk.end
                )));
            }
            if !chunk.range().contains(&chunk.root) {
                return Err(invalid(format!(
                    "chunk root {} outside chunk {}..{}",
                    chunk.root, chunk.start, chunk.end
                )));
            }
        }
        for role in &self.roles {
            if !(role.start < role.end && role.end <= n) {
                return Err(invalid(format!(
                    "role {} span {}..{} out of bounds ({n} tokens)",
                    role.role, role.start, role.end
                )));
            }
        }
        Ok(())
    }

    pub fn span(&self, range: Range<usize>) -> &[TokenAnnotation] {
        &self.tokens[range]
    }

    /// Tokens whose head is `index`, excluding the token itself.
    pub fn dependents(&self, index: usize) -> impl Iterator<Item = &TokenAnnotation> {
        self.tokens
            .iter()
            .filter(move |t| t.head == index && t.index != index)
    }
}

fn normalize_ner(raw: &str) -> String {
    match raw {
        "" | "_" | "O" => String::new(),
        other => other.to_string(),
    }
}

#[derive(Default)]
struct BlockBuilder {
    id: Option<String>,
    first_line: usize,
    tokens: Vec<TokenAnnotation>,
    noun_chunks: Vec<NounChunk>,
    roles: Vec<RoleSpan>,
}

impl BlockBuilder {
    fn is_empty(&self) -> bool {
        self.id.is_none() && self.tokens.is_empty() && self.noun_chunks.is_empty() && self.roles.is_empty()
    }

    fn finish(self, ordinal: usize) -> Result<AnnotatedSentence, CorpusError> {
        let sentence = AnnotatedSentence {
            id: self.id.unwrap_or_else(|| format!("s{ordinal}")),
            tokens: self.tokens,
            noun_chunks: self.noun_chunks,
            roles: self.roles,
        };
        sentence.validate()?;
        Ok(sentence)
    }
}

fn parse_usize(text: &str, line: usize, field: &'static str) -> Result<usize, CorpusError> {
    text.parse().map_err(|_| CorpusError::Malformed {
        line,
        field,
        message: format!("expected a non-negative integer, found {text:?}"),
    })
}

fn parse_footer(
    builder: &mut BlockBuilder,
    text: &str,
    line: usize,
) -> Result<(), CorpusError> {
    let mut parts = text.split_whitespace();
    let tag = parts.next().unwrap_or("#");
    let rest: Vec<&str> = parts.collect();
    match tag {
        "#id" => {
            if rest.len() != 1 {
                return Err(CorpusError::Malformed {
                    line,
                    field: "id",
                    message: "expected `#id <identifier>`".into(),
                });
            }
            builder.id = Some(rest[0].to_string());
        }
        "#chunk" => {
            if rest.len() != 3 {
                return Err(CorpusError::Malformed {
                    line,
                    field: "chunk",
                    message: "expected `#chunk start end root`".into(),
                });
            }
            builder.noun_chunks.push(NounChunk {
                start: parse_usize(rest[0], line, "chunk start")?,
                end: parse_usize(rest[1], line, "chunk end")?,
                root: parse_usize(rest[2], line, "chunk root")?,
            });
        }
        "#role" => {
            if rest.len() != 3 {
                return Err(CorpusError::Malformed {
                    line,
                    field: "role",
                    message: "expected `#role start end LABEL`".into(),
                });
            }
            builder.roles.push(RoleSpan {
                start: parse_usize(rest[0], line, "role start")?,
                end: parse_usize(rest[1], line, "role end")?,
                role: rest[2].to_string(),
            });
        }
        other => {
            return Err(CorpusError::Malformed {
                line,
                field: "footer",
                message: format!("unknown footer tag {other:?}"),
            })
        }
    }
    Ok(())
}

fn parse_token(text: &str, line: usize) -> Result<TokenAnnotation, CorpusError> {
    let columns: Vec<&str> = text.split('\t').collect();
    if columns.len() != 7 {
        return Err(CorpusError::Malformed {
            line,
            field: "token",
            message: format!("expected 7 tab-separated columns, found {}", columns.len()),
        });
    }
    for (value, field) in columns[1..5]
        .iter()
        .zip(["surface", "lemma", "pos", "dep"])
    {
        if value.is_empty() {
            return Err(CorpusError::Malformed {
                line,
                field,
                message: "empty value".into(),
            });
        }
    }
    Ok(TokenAnnotation {
        index: parse_usize(columns[0], line, "index")?,
        surface: columns[1].to_string(),
        lemma: columns[2].to_string(),
        pos: columns[3].to_string(),
        dep: columns[4].to_string(),
        head: parse_usize(columns[5], line, "head")?,
        ner: normalize_ner(columns[6]),
    })
}

/// Parses sentences from any reader, stopping after `limit` sentences.
pub fn read_annotated_corpus<R: BufRead>(
    reader: R,
    limit: usize,
) -> Result<Vec<AnnotatedSentence>, CorpusError> {
    if limit == 0 {
        return Err(CorpusError::ZeroLimit);
    }
    let mut sentences = Vec::new();
    let mut builder = BlockBuilder::default();
    for (offset, raw) in reader.lines().enumerate() {
        let line = offset + 1;
        let raw = raw.map_err(|source| CorpusError::Io {
            path: format!("<line {line}>"),
            source,
        })?;
        let text = raw.strip_suffix('\r').unwrap_or(&raw);
        if text.trim().is_empty() {
            if !builder.is_empty() {
                let done = std::mem::take(&mut builder);
                sentences.push(done.finish(sentences.len() + 1)?);
                if sentences.len() == limit {
                    return Ok(sentences);
                }
            }
            continue;
        }
        if builder.is_empty() {
            builder.first_line = line;
        }
        if text.starts_with('#') {
            parse_footer(&mut builder, text, line)?;
        } else {
            if !builder.noun_chunks.is_empty() || !builder.roles.is_empty() {
                return Err(CorpusError::Malformed {
                    line,
                    field: "token",
                    message: format!(
                        "token line after footer lines in block starting at line {}",
                        builder.first_line
                    ),
                });
            }
            builder.tokens.push(parse_token(text, line)?);
        }
    }
    if !builder.is_empty() && sentences.len() < limit {
        sentences.push(builder.finish(sentences.len() + 1)?);
    }
    Ok(sentences)
}

/// Loads at most `limit` sentences from `path` in file order.
pub fn load_annotated_corpus(
    path: &Path,
    limit: usize,
) -> Result<Vec<AnnotatedSentence>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_annotated_corpus(BufReader::new(file), limit)
}

/// Renders sentences back into the corpus file format.
pub fn write_annotated_corpus(sentences: &[AnnotatedSentence]) -> String {
    let mut out = String::new();
    for (i, sentence) in sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "#id {}", sentence.id);
        for t in &sentence.tokens {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                t.index, t.surface, t.lemma, t.pos, t.dep, t.head, t.ner
            );
        }
        for c in &sentence.noun_chunks {
            let _ = writeln!(out, "#chunk {} {} {}", c.start, c.end, c.root);
        }
        for r in &sentence.roles {
            let _ = writeln!(out, "#role {} {} {}", r.start, r.end, r.role);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const THREE: &str = "#id a\n0\tBabies\tbaby\tNOUN\tnsubj\t1\t\n1\tcry\tcry\tVERB\tROOT\t1\t\n#chunk 0 1 0\n\n\
#id b\n0\tCats\tcat\tNOUN\tnsubj\t1\t\n1\tsleep\tsleep\tVERB\tROOT\t1\t\n\n\
#id c\n0\tDogs\tdog\tNOUN\tnsubj\t1\t\n1\tbark\tbark\tVERB\tROOT\t1\t\n#role 0 1 ARG0\n";

    fn read(text: &str, limit: usize) -> Result<Vec<AnnotatedSentence>, CorpusError> {
        read_annotated_corpus(text.as_bytes(), limit)
    }

    #[test]
    fn truncates_in_file_order() {
        let all = read(THREE, 10).unwrap();
        assert_eq!(all.len(), 3);
        let two = read(THREE, 2).unwrap();
        let ids: Vec<_> = two.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
    }

    #[test]
    fn zero_limit_rejected() {
        assert!(matches!(read(THREE, 0), Err(CorpusError::ZeroLimit)));
    }

    #[test]
    fn role_span_past_end_names_sentence() {
        let bad = "#id broken-7\n0\tDogs\tdog\tNOUN\tnsubj\t1\t\n1\tbark\tbark\tVERB\tROOT\t1\t\n#role 0 3 ARGM-LOC\n";
        match read(bad, 5) {
            Err(CorpusError::Invalid { sentence, .. }) => assert_eq!(sentence, "broken-7"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_names_line_and_field() {
        let bad = "0\tDogs\tdog\tNOUN\tnsubj\tx\t\n";
        match read(bad, 5) {
            Err(CorpusError::Malformed { line, field, .. }) => {
                assert_eq!(line, 1);
                assert_eq!(field, "head");
            }
            other => panic!("unexpected {other:?}"),
        }
        let short = "\n\n0\tDogs\tdog\tNOUN\n";
        match read(short, 5) {
            Err(CorpusError::Malformed { line, field, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(field, "token");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn head_out_of_bounds_rejected() {
        let bad = "#id h\n0\tDogs\tdog\tNOUN\tnsubj\t4\t\n";
        assert!(matches!(read(bad, 5), Err(CorpusError::Invalid { .. })));
    }

    #[test]
    fn chunk_root_outside_chunk_rejected() {
        let bad = "#id r\n0\tA\ta\tDET\tdet\t1\t\n1\tdog\tdog\tNOUN\tROOT\t1\t\n#chunk 0 1 1\n";
        assert!(matches!(read(bad, 5), Err(CorpusError::Invalid { .. })));
    }

    #[test]
    fn sentences_without_chunks_or_roles_are_accepted() {
        let s = read("0\tHello\thello\tINTJ\tROOT\t0\t_\n", 1).unwrap();
        assert_eq!(s[0].id, "s1");
        assert!(s[0].noun_chunks.is_empty() && s[0].roles.is_empty());
        assert_eq!(s[0].tokens[0].ner, "");
    }

    fn arb_sentence() -> impl Strategy<Value = AnnotatedSentence> {
        (1usize..8)
            .prop_flat_map(|n| {
                (
                    Just(n),
                    proptest::collection::vec(0..n, n),
                    proptest::collection::vec((0..n, 1..=n), 0..3),
                    proptest::collection::vec((0..n, 1..=n), 0..3),
                    proptest::bool::ANY,
                )
            })
            .prop_map(|(n, heads, chunks, roles, ner)| AnnotatedSentence {
                id: "p".into(),
                tokens: (0..n)
                    .map(|i| TokenAnnotation {
                        index: i,
                        surface: format!("w{i}"),
                        lemma: format!("w{i}"),
                        pos: "NOUN".into(),
                        dep: "dep".into(),
                        head: heads[i],
                        ner: if ner && i == 0 { "PERSON".into() } else { String::new() },
                    })
                    .collect(),
                noun_chunks: chunks
                    .into_iter()
                    .filter(|(s, e)| s < e)
                    .map(|(s, e)| NounChunk { start: s, end: e, root: e - 1 })
                    .collect(),
                roles: roles
                    .into_iter()
                    .filter(|(s, e)| s < e)
                    .map(|(s, e)| RoleSpan { start: s, end: e, role: "ARGM-LOC".into() })
                    .collect(),
            })
    }

    proptest! {
        #[test]
        fn valid_sentences_round_trip(sentence in arb_sentence()) {
            let text = write_annotated_corpus(std::slice::from_ref(&sentence));
            let back = read(&text, 10).unwrap();
            prop_assert_eq!(back, vec![sentence]);
        }

        #[test]
        fn out_of_bounds_inputs_always_rejected(
            sentence in arb_sentence(),
            which in 0usize..3,
            overshoot in 0usize..4,
        ) {
            let mut s = sentence;
            let n = s.tokens.len();
            match which {
                0 => s.tokens[0].head = n + overshoot,
                1 => s.roles.push(RoleSpan { start: 0, end: n + 1 + overshoot, role: "X".into() }),
                _ => s.noun_chunks.push(NounChunk { start: 0, end: n + 1 + overshoot, root: 0 }),
            }
            let text = write_annotated_corpus(&[s]);
            let rejected = matches!(read(&text, 10), Err(CorpusError::Invalid { .. }));
            prop_assert!(rejected);
        }
    }
}
