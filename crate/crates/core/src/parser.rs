//! Rule-based prompt chunker.
//!
//! A prompt is lowercased, split into word and punctuation tokens, tagged from a
//! closed-class lexicon, and chunked with the regular grammar
//! `(DET|NUM)? ADJ* NOUN+`. A chunk may absorb a trailing prepositional chunk
//! when the preposition is in the attachment list, giving groups such as
//! "a young boy with a hat". Everything that is neither inside an entity group
//! nor punctuation ends up in the other-span set (verbs, layout relations, ...).

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUNDLED_LEXICON: &str = include_str!("lexicon.tsv");

/// Prepositions that attach a following noun chunk to the preceding entity.
pub const DEFAULT_ATTACH: [&str; 4] = ["with", "wearing", "holding", "of"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("prompt contains no alphabetic token")]
    EmptyPrompt,
    #[error("no entity chunk found in prompt")]
    NoEntityFound,
    #[error("lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
    #[error("failed to read lexicon: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Tag {
    Det,
    Adj,
    Noun,
    Num,
    Prep,
    Verb,
    Conj,
    Other,
}

impl Tag {
    pub const ALL: [Tag; 8] = [
        Tag::Det,
        Tag::Adj,
        Tag::Noun,
        Tag::Num,
        Tag::Prep,
        Tag::Verb,
        Tag::Conj,
        Tag::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Tag::Det => "DET",
            Tag::Adj => "ADJ",
            Tag::Noun => "NOUN",
            Tag::Num => "NUM",
            Tag::Prep => "PREP",
            Tag::Verb => "VERB",
            Tag::Conj => "CONJ",
            Tag::Other => "OTHER",
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Tag::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown tag {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub index: usize,
    pub tag: Tag,
}

impl Token {
    /// Punctuation tokens carry no word characters and are discarded by the chunker.
    pub fn is_punct(&self) -> bool {
        !self.text.chars().any(char::is_alphanumeric)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityGroup {
    pub start: usize,
    pub end: usize,
    pub head_noun_index: usize,
    pub label: String,
}

impl EntityGroup {
    pub fn span(&self) -> Range<usize> {
        self.start..self.end
    }
}

/// Token positions the attention modulators care about: one span per entity
/// group plus the sorted set of other-span indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanLayout {
    pub entities: Vec<Range<usize>>,
    pub other: Vec<usize>,
}

impl SpanLayout {
    /// Builds a layout, checking that spans are non-empty and that no index is
    /// claimed twice.
    pub fn new(entities: Vec<Range<usize>>, mut other: Vec<usize>) -> Result<Self, String> {
        other.sort_unstable();
        other.dedup();
        let mut claimed: Vec<usize> = Vec::new();
        for span in &entities {
            if span.is_empty() {
                return Err(format!("empty entity span {span:?}"));
            }
            claimed.extend(span.clone());
        }
        claimed.extend(other.iter().copied());
        let n = claimed.len();
        claimed.sort_unstable();
        claimed.dedup();
        if claimed.len() != n {
            return Err("entity spans and other indices overlap".into());
        }
        Ok(Self { entities, other })
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    /// One past the largest referenced token index.
    pub fn extent(&self) -> usize {
        let e = self.entities.iter().map(|s| s.end).max().unwrap_or(0);
        let o = self.other.last().map_or(0, |i| i + 1);
        e.max(o)
    }

    /// Entity index owning token `t`, if any.
    pub fn entity_of(&self, t: usize) -> Option<usize> {
        self.entities.iter().position(|s| s.contains(&t))
    }

    pub fn is_other(&self, t: usize) -> bool {
        self.other.binary_search(&t).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedPrompt {
    pub tokens: Vec<Token>,
    pub entities: Vec<EntityGroup>,
    pub other_spans: Vec<usize>,
}

impl ParsedPrompt {
    pub fn layout(&self) -> SpanLayout {
        SpanLayout {
            entities: self.entities.iter().map(EntityGroup::span).collect(),
            other: self.other_spans.clone(),
        }
    }

    pub fn discard_set(&self) -> Vec<usize> {
        self.tokens.iter().filter(|t| t.is_punct()).map(|t| t.index).collect()
    }

    /// Index of the first token whose text equals `word`.
    pub fn token_index(&self, word: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t.text == word)
    }

    /// Space-joined token text, suitable for re-parsing.
    pub fn reconstruct(&self) -> String {
        self.tokens
            .iter()
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone)]
pub struct Lexicon {
    words: HashMap<String, Tag>,
}

impl Lexicon {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_LEXICON).expect("bundled lexicon is well-formed")
    }

    pub fn load(path: &Path) -> Result<Self, ParseError> {
        let text = std::fs::read_to_string(path).map_err(|e| ParseError::Io(e.to_string()))?;
        Self::parse(&text)
    }

    /// Parses `word<TAB>TAG` lines. Blank lines and `#` comments are skipped;
    /// the first entry for a word wins.
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let mut words = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| ParseError::Lexicon { line: i + 1, message };
            let (word, tag) = line
                .split_once('\t')
                .ok_or_else(|| err("expected word<TAB>TAG".into()))?;
            let word = word.trim().to_lowercase();
            if word.is_empty() {
                return Err(err("empty word".into()));
            }
            let tag: Tag = tag.trim().parse().map_err(err)?;
            words.entry(word).or_insert(tag);
        }
        Ok(Self { words })
    }

    pub fn get(&self, word: &str) -> Option<Tag> {
        self.words.get(word).copied()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = (&str, Tag)> {
        self.words.iter().map(|(w, t)| (w.as_str(), *t))
    }
}

impl Default for Lexicon {
    fn default() -> Self {
        Self::bundled()
    }
}

/// Splits a prompt into lowercase tokens. Word characters (alphanumerics plus
/// inner apostrophes and hyphens) form words; every other non-space character
/// becomes its own punctuation token. Tokens come back tagged `OTHER`.
pub fn tokenize(prompt: &str) -> Result<Vec<Token>, ParseError> {
    let lower = prompt.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let mut pieces: Vec<String> = Vec::new();
    let mut word = String::new();
    for (i, &c) in chars.iter().enumerate() {
        let joiner = (c == '\'' || c == '-')
            && !word.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
        if c.is_alphanumeric() || joiner {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            pieces.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            pieces.push(c.to_string());
        }
    }
    if !word.is_empty() {
        pieces.push(word);
    }
    if !pieces.iter().any(|p| p.chars().any(char::is_alphabetic)) {
        return Err(ParseError::EmptyPrompt);
    }
    Ok(pieces
        .into_iter()
        .enumerate()
        .map(|(index, text)| Token {
            text,
            index,
            tag: Tag::Other,
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct PromptParser {
    lexicon: Lexicon,
    attach: Vec<String>,
}

impl Default for PromptParser {
    fn default() -> Self {
        Self::new(Lexicon::bundled())
    }
}

impl PromptParser {
    pub fn new(lexicon: Lexicon) -> Self {
        Self {
            lexicon,
            attach: DEFAULT_ATTACH.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn with_attach<I, S>(mut self, attach: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.attach = attach.into_iter().map(Into::into).collect();
        self
    }

    pub fn attach_list(&self) -> &[String] {
        &self.attach
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn tag(&self, mut tokens: Vec<Token>) -> Vec<Token> {
        for tok in &mut tokens {
            tok.tag = if tok.is_punct() {
                Tag::Other
            } else if let Some(tag) = self.lexicon.get(&tok.text) {
                tag
            } else if tok.text.chars().all(|c| c.is_ascii_digit()) {
                Tag::Num
            } else {
                Tag::Noun
            };
        }
        tokens
    }

    pub fn extract_entities(&self, tagged: &[Token]) -> Result<Vec<EntityGroup>, ParseError> {
        let tags: Vec<Tag> = tagged.iter().map(|t| t.tag).collect();
        let mut groups = Vec::new();
        let mut i = 0;
        while i < tags.len() {
            let Some((mut end, head)) = match_base_chunk(&tags, i) else {
                i += 1;
                continue;
            };
            while end < tags.len()
                && tags[end] == Tag::Prep
                && self.attach.iter().any(|a| *a == tagged[end].text)
            {
                match match_base_chunk(&tags, end + 1) {
                    Some((next, _)) => end = next,
                    None => break,
                }
            }
            let label = tagged[i..end]
                .iter()
                .map(|t| t.text.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            groups.push(EntityGroup {
                start: i,
                end,
                head_noun_index: head,
                label,
            });
            i = end;
        }
        if groups.is_empty() {
            return Err(ParseError::NoEntityFound);
        }
        Ok(groups)
    }

    pub fn parse(&self, prompt: &str) -> Result<ParsedPrompt, ParseError> {
        let tokens = self.tag(tokenize(prompt)?);
        let entities = self.extract_entities(&tokens)?;
        let mut in_entity = vec![false; tokens.len()];
        for g in &entities {
            in_entity[g.span()].iter_mut().for_each(|b| *b = true);
        }
        let other_spans = tokens
            .iter()
            .filter(|t| !in_entity[t.index] && !t.is_punct())
            .map(|t| t.index)
            .collect();
        Ok(ParsedPrompt {
            tokens,
            entities,
            other_spans,
        })
    }
}

/// Convenience wrapper using the bundled lexicon and default attachment list.
pub fn parse_prompt(prompt: &str) -> Result<ParsedPrompt, ParseError> {
    PromptParser::default().parse(prompt)
}

/// Greedy match of `(DET|NUM)? ADJ* NOUN+` starting at `start`. Returns the
/// exclusive end and the index of the last noun.
pub fn match_base_chunk(tags: &[Tag], start: usize) -> Option<(usize, usize)> {
    let mut i = start;
    if matches!(tags.get(i), Some(Tag::Det | Tag::Num)) {
        i += 1;
    }
    while tags.get(i) == Some(&Tag::Adj) {
        i += 1;
    }
    let noun_start = i;
    while tags.get(i) == Some(&Tag::Noun) {
        i += 1;
    }
    (i > noun_start).then(|| (i, i - 1))
}

#[cfg(test)]
#[allow(clippy::single_range_in_vec_init)]
mod tests {
    use super::*;

    fn texts(tokens: &[Token]) -> Vec<&str> {
        tokens.iter().map(|t| t.text.as_str()).collect()
    }

    fn words(tokens: &[Token]) -> Vec<&str> {
        tokens
            .iter()
            .filter(|t| !t.is_punct())
            .map(|t| t.text.as_str())
            .collect()
    }

    fn labels(p: &ParsedPrompt) -> Vec<&str> {
        p.entities.iter().map(|e| e.label.as_str()).collect()
    }

    fn other_words(p: &ParsedPrompt) -> Vec<&str> {
        p.other_spans.iter().map(|&i| p.tokens[i].text.as_str()).collect()
    }

    #[test]
    fn tokenize_strips_period() {
        let toks = tokenize("A boy in front of a female.").unwrap();
        assert_eq!(words(&toks), ["a", "boy", "in", "front", "of", "a", "female"]);
        assert_eq!(toks.len(), 8);
        assert!(toks[7].is_punct());
        assert!(toks.iter().enumerate().all(|(i, t)| t.index == i));
    }

    #[test]
    fn tokenize_single_and_empty() {
        assert_eq!(texts(&tokenize("cat").unwrap()), ["cat"]);
        assert_eq!(tokenize("  "), Err(ParseError::EmptyPrompt));
        assert_eq!(tokenize(""), Err(ParseError::EmptyPrompt));
        assert_eq!(tokenize("... !"), Err(ParseError::EmptyPrompt));
    }

    #[test]
    fn tokenize_keeps_inner_joiners() {
        let toks = tokenize("a dog's well-worn ball, 'ok'").unwrap();
        assert_eq!(
            texts(&toks),
            ["a", "dog's", "well-worn", "ball", ",", "'", "ok", "'"]
        );
    }

    #[test]
    fn tagging_examples() {
        let p = PromptParser::default();
        let tags = |s: &str| {
            p.tag(tokenize(s).unwrap())
                .into_iter()
                .map(|t| t.tag)
                .collect::<Vec<_>>()
        };
        assert_eq!(tags("a white cat"), [Tag::Det, Tag::Adj, Tag::Noun]);
        assert_eq!(tags("two giraffes"), [Tag::Num, Tag::Noun]);
        assert_eq!(tags("blorp"), [Tag::Noun]);
        assert_eq!(tags("42 cats"), [Tag::Num, Tag::Noun]);
    }

    #[test]
    fn attachment_with() {
        let p = parse_prompt("a young boy with a hat").unwrap();
        assert_eq!(p.entities.len(), 1);
        let e = &p.entities[0];
        assert_eq!((e.start, e.end, e.head_noun_index), (0, 6, 2));
        assert!(p.other_spans.is_empty());
    }

    #[test]
    fn layout_relation_stays_other() {
        let p = parse_prompt("a boy in front of a female").unwrap();
        assert_eq!(labels(&p), ["a boy", "a female"]);
        assert_eq!(p.entities[0].span(), 0..2);
        assert_eq!(p.entities[1].span(), 5..7);
        assert_eq!(other_words(&p), ["in", "front", "of"]);
    }

    #[test]
    fn minimal_chunk() {
        let p = parse_prompt("cat").unwrap();
        assert_eq!(p.entities[0].span(), 0..1);
        assert_eq!(p.entities[0].head_noun_index, 0);
    }

    #[test]
    fn conjunction_splits_entities() {
        let p = parse_prompt("a giraffe and zebra inside of a zoo enclosure").unwrap();
        assert_eq!(labels(&p), ["a giraffe", "zebra", "a zoo enclosure"]);
        let o = other_words(&p);
        for w in ["and", "inside", "of"] {
            assert!(o.contains(&w), "{w} missing from {o:?}");
        }
    }

    #[test]
    fn counts_stay_in_entity() {
        let p = parse_prompt("three birds perched on a gutter on a building").unwrap();
        assert_eq!(labels(&p), ["three birds", "a gutter", "a building"]);
        assert_eq!(other_words(&p), ["perched", "on", "on"]);
    }

    #[test]
    fn no_entity() {
        assert_eq!(parse_prompt("of the in"), Err(ParseError::NoEntityFound));
    }

    #[test]
    fn custom_attach_list() {
        let parser = PromptParser::default().with_attach(["in"]);
        let p = parser.parse("a cat in a box").unwrap();
        assert_eq!(labels(&p), ["a cat in a box"]);
        let p = parser.parse("a boy with a hat").unwrap();
        assert_eq!(labels(&p), ["a boy", "a hat"]);
    }

    #[test]
    fn chained_attachment() {
        let p = parse_prompt("a man wearing a hat with a feather on a bench").unwrap();
        assert_eq!(labels(&p), ["a man wearing a hat with a feather", "a bench"]);
        assert_eq!(p.entities[0].head_noun_index, 1);
    }

    #[test]
    fn dangling_attach_preposition_is_other() {
        let p = parse_prompt("a cat with").unwrap();
        assert_eq!(labels(&p), ["a cat"]);
        assert_eq!(other_words(&p), ["with"]);
    }

    #[test]
    fn lexicon_errors() {
        assert!(matches!(
            Lexicon::parse("cat NOUN"),
            Err(ParseError::Lexicon { line: 1, .. })
        ));
        assert!(matches!(
            Lexicon::parse("# c\ncat\tTHING"),
            Err(ParseError::Lexicon { line: 2, .. })
        ));
        let lex = Lexicon::parse("cat\tADJ\n\nCat\tNOUN\n").unwrap();
        assert_eq!(lex.get("cat"), Some(Tag::Adj));
        assert_eq!(lex.len(), 1);
    }

    #[test]
    fn custom_lexicon_changes_tags() {
        let lex = Lexicon::parse("sat\tVERB\nthe\tDET\non\tPREP\n").unwrap();
        let p = PromptParser::new(lex).parse("the cat sat on the mat").unwrap();
        assert_eq!(labels(&p), ["the cat", "the mat"]);
    }

    #[test]
    fn span_layout_rejects_overlap() {
        assert!(SpanLayout::new(vec![0..2, 1..3], vec![]).is_err());
        assert!(SpanLayout::new(vec![0..2], vec![1]).is_err());
        assert!(SpanLayout::new(vec![0..0], vec![]).is_err());
        let l = SpanLayout::new(vec![0..2, 2..4], vec![5, 4, 5]).unwrap();
        assert_eq!(l.other, [4, 5]);
        assert_eq!(l.extent(), 6);
        assert_eq!(l.entity_of(3), Some(1));
        assert!(l.is_other(4));
    }
}
