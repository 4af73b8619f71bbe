//! Tokenizer and small text utilities.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// A lowercase token together with its byte span in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

impl Token {
    /// Token text without a leading `#` or `@`.
    pub fn bare(&self) -> &str {
        self.text.trim_start_matches(['#', '@'])
    }

    pub fn is_hashtag(&self) -> bool {
        self.text.starts_with('#') && self.text.len() > 1
    }
}

fn emoticon_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^(?:[:;=][\-o'^]?[()\[\]{}dDpP/\\|*3oO$@]+|[xX8]-?[DP]+|[()\[\]dD]+[\-o'^]?[:;=]|<3+|</3|\^_*\^|-_+-|[oO]_[oO])$")
            .expect("emoticon pattern")
    })
}

pub fn is_url(chunk: &str) -> bool {
    let lower = chunk.to_ascii_lowercase();
    lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.")
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Splits `text` into lowercase tokens with byte spans.
///
/// Whitespace separates chunks; inside a chunk, runs of alphanumerics form
/// tokens. A `#` or `@` directly before a run is kept as a prefix, and an
/// apostrophe between two alphanumerics stays inside the token. URLs,
/// emoticons and punctuation-only chunks produce nothing.
pub fn tokenize_spans(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut offset = 0;
    for chunk in text.split_inclusive(char::is_whitespace) {
        let base = offset;
        offset += chunk.len();
        let chunk = chunk.trim_end_matches(char::is_whitespace);
        if chunk.is_empty() || is_url(chunk) || emoticon_re().is_match(chunk) {
            continue;
        }
        split_chunk(chunk, base, &mut out);
    }
    out
}

fn split_chunk(chunk: &str, base: usize, out: &mut Vec<Token>) {
    let chars: Vec<(usize, char)> = chunk.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        let prefixed = (c == '#' || c == '@')
            && chars.get(i + 1).is_some_and(|&(_, n)| n.is_alphanumeric());
        if !(c.is_alphanumeric() || prefixed) {
            i += 1;
            continue;
        }
        let start = pos;
        let mut j = if prefixed { i + 1 } else { i };
        while j < chars.len() {
            let ch = chars[j].1;
            // an apostrophe stays inside a word when a letter follows it
            let inner = is_apostrophe(ch) && chars.get(j + 1).is_some_and(|&(_, n)| n.is_alphanumeric());
            if ch.is_alphanumeric() || inner {
                j += 1;
            } else {
                break;
            }
        }
        let end = chars.get(j).map_or(chunk.len(), |&(p, _)| p);
        out.push(Token {
            text: chunk[start..end].to_lowercase(),
            start: base + start,
            end: base + end,
        });
        i = j;
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_spans(text).into_iter().map(|t| t.text).collect()
}

/// Lowercase hashtag bodies (without `#`) in token order, deduplicated.
pub fn hashtags(tokens: &[Token]) -> Vec<String> {
    let mut tags: Vec<String> = Vec::new();
    for t in tokens.iter().filter(|t| t.is_hashtag()) {
        let tag = t.bare().to_string();
        if !tags.contains(&tag) {
            tags.push(tag);
        }
    }
    tags
}

pub fn contains_url(text: &str) -> bool {
    text.split_whitespace().any(is_url)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalKind {
    IsoDate,
    Today,
    Yesterday,
}

/// Explicit temporal expression found in a message. Kept as metadata only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalMention {
    pub kind: TemporalKind,
    pub text: String,
    pub start: usize,
}

pub fn tag_temporal(text: &str) -> Vec<TemporalMention> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"(?i)\b(\d{4}-\d{2}-\d{2})\b|\b(today)\b|\b(yesterday)\b").expect("temporal pattern")
    });
    re.captures_iter(text)
        .filter_map(|c| {
            let (kind, m) = if let Some(m) = c.get(1) {
                (TemporalKind::IsoDate, m)
            } else if let Some(m) = c.get(2) {
                (TemporalKind::Today, m)
            } else {
                (TemporalKind::Yesterday, c.get(3)?)
            };
            Some(TemporalMention {
                kind,
                text: m.as_str().to_string(),
                start: m.start(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn drops_punctuation_and_emoticons() {
        assert_eq!(tokenize("Sore throat & fever :("), ["sore", "throat", "fever"]);
        assert_eq!(tokenize("#EHEC outbreak, Hamburg!"), ["#ehec", "outbreak", "hamburg"]);
        assert!(tokenize("").is_empty());
        assert!(tokenize("  ... !!! :-) ;P <3").is_empty());
    }

    #[test]
    fn keeps_prefixes_and_inner_apostrophes() {
        assert_eq!(tokenize("@Doc I don't feel well"), ["@doc", "i", "don't", "feel", "well"]);
        assert_eq!(tokenize("(#flu)"), ["#flu"]);
        assert_eq!(tokenize("e-coli"), ["e", "coli"]);
    }

    #[test]
    fn skips_urls() {
        let toks = tokenize("EHEC cases in Hamburg http://t.co/abc");
        assert_eq!(toks, ["ehec", "cases", "in", "hamburg"]);
        assert!(contains_url("EHEC cases in Hamburg http://t.co/abc"));
        assert!(!contains_url("no link here"));
    }

    #[test]
    fn spans_point_into_source() {
        let text = "Fièvre  ET toux, #Grippe";
        for t in tokenize_spans(text) {
            assert_eq!(text[t.start..t.end].to_lowercase(), t.text);
        }
    }

    #[test]
    fn hashtag_extraction() {
        let toks = tokenize_spans("#EHEC #ehec #hus outbreak");
        assert_eq!(hashtags(&toks), ["ehec", "hus"]);
    }

    #[test]
    fn temporal_tags() {
        let tags = tag_temporal("sick since yesterday, saw doc on 2011-05-23");
        assert_eq!(tags.len(), 2);
        assert_eq!(tags[0].kind, TemporalKind::Yesterday);
        assert_eq!(tags[1].text, "2011-05-23");
    }

    proptest! {
        #[test]
        fn idempotent_on_clean_tokens(words in prop::collection::vec("#?[a-z0-9]{1,8}", 0..12)) {
            let once = tokenize(&words.join(" "));
            prop_assert_eq!(&once, &words);
            prop_assert_eq!(tokenize(&once.join(" ")), once);
        }
    }
}
