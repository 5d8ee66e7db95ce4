//! Sentence segmentation, the tokenizer contract, and example tokenization.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{
    ContextToken, RagExample, ResponseToken, SentenceSource, SentenceSpan, Span, TokenRange,
    TokenizedExample,
};

/// Lower-cased words that never end a sentence when followed by a period.
const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "mt", "ft", "vs", "inc", "ltd", "co",
    "corp", "dept", "gov", "gen", "sen", "rep", "col", "capt", "lt", "sgt", "rev", "hon", "fig",
    "figs", "approx", "est", "al", "cf", "vol", "ed", "eds", "pp", "jan", "feb", "mar", "apr",
    "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec",
];

const TERMINALS: &[char] = &['.', '!', '?'];
const CLOSERS: &[char] = &['"', '\'', ')', ']', '}', '\u{201d}', '\u{2019}'];

/// Splits `text` into sentences.
///
/// A sentence ends at `.`, `!` or `?` (plus any trailing closing quotes or
/// brackets) when followed by whitespace. A period after a known abbreviation,
/// a single-letter initial, or a dotted acronym such as `U.S.` does not end a
/// sentence, and neither does a terminal followed by a lowercase word. Spans
/// are trimmed of surrounding whitespace. Whitespace-only input yields no
/// sentences.
pub fn segment_sentences(text: &str) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    let mut chars = text.char_indices().peekable();

    while let Some((i, c)) = chars.next() {
        if c.is_whitespace() {
            continue;
        }
        start.get_or_insert(i);
        if !TERMINALS.contains(&c) {
            continue;
        }
        // absorb runs like "?!" or '."'
        let mut end = i + c.len_utf8();
        while let Some(&(j, n)) = chars.peek() {
            if TERMINALS.contains(&n) || CLOSERS.contains(&n) {
                end = j + n.len_utf8();
                chars.next();
            } else {
                break;
            }
        }
        let followed_by_space = match chars.peek() {
            Some(&(_, n)) => n.is_whitespace(),
            None => false,
        };
        if !followed_by_space {
            continue;
        }
        if c == '.' && end == i + 1 && is_abbreviation(&text[..i]) {
            continue;
        }
        if text[end..].trim_start().starts_with(char::is_lowercase) {
            continue;
        }
        let s = start.take().expect("sentence start set above");
        spans.push(Span::new(s, end));
    }

    if let Some(s) = start {
        let end = s + text[s..].trim_end().len();
        spans.push(Span::new(s, end));
    }
    spans
}

/// `before` is the text up to (not including) a period.
fn is_abbreviation(before: &str) -> bool {
    let word_start = before
        .rfind(char::is_whitespace)
        .map(|p| p + before[p..].chars().next().map_or(1, char::len_utf8))
        .unwrap_or(0);
    let word = before[word_start..].trim_start_matches(|c: char| !c.is_alphanumeric());
    if word.is_empty() {
        return false;
    }
    if word.contains('.') {
        return true;
    }
    let mut letters = word.chars();
    if let (Some(first), None) = (letters.next(), letters.next()) {
        if first.is_uppercase() {
            return true;
        }
    }
    let lower = word.to_lowercase();
    ABBREVIATIONS.contains(&lower.as_str())
}

/// Sentence spans tagged with their source.
pub fn sentences_for(text: &str, source: SentenceSource) -> Vec<SentenceSpan> {
    segment_sentences(text)
        .into_iter()
        .enumerate()
        .map(|(index, span)| SentenceSpan {
            index,
            span,
            source,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub span: Span,
}

/// Deterministic string-to-token mapping with byte spans.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<Token>;

    fn count(&self, text: &str) -> usize {
        self.tokenize(text).len()
    }
}

/// Splits on whitespace only.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize(&self, text: &str) -> Vec<Token> {
        let mut out = Vec::new();
        let mut start: Option<usize> = None;
        for (i, c) in text.char_indices() {
            if c.is_whitespace() {
                if let Some(s) = start.take() {
                    out.push(Token {
                        text: text[s..i].to_string(),
                        span: Span::new(s, i),
                    });
                }
            } else {
                start.get_or_insert(i);
            }
        }
        if let Some(s) = start {
            out.push(Token {
                text: text[s..].to_string(),
                span: Span::new(s, text.len()),
            });
        }
        out
    }
}

/// Splits on whitespace; each run of alphanumerics is a token and every other
/// visible character is a token of its own.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordPunctTokenizer;

impl Tokenizer for WordPunctTokenizer {
    fn tokenize(&self, text: &str) -> Vec<Token> {
        let mut out = Vec::new();
        let mut word_start: Option<usize> = None;
        let flush = |out: &mut Vec<Token>, ws: &mut Option<usize>, end: usize| {
            if let Some(s) = ws.take() {
                out.push(Token {
                    text: text[s..end].to_string(),
                    span: Span::new(s, end),
                });
            }
        };
        for (i, c) in text.char_indices() {
            if c.is_alphanumeric() {
                word_start.get_or_insert(i);
            } else {
                flush(&mut out, &mut word_start, i);
                if !c.is_whitespace() {
                    let end = i + c.len_utf8();
                    out.push(Token {
                        text: text[i..end].to_string(),
                        span: Span::new(i, end),
                    });
                }
            }
        }
        flush(&mut out, &mut word_start, text.len());
        out
    }

    fn count(&self, text: &str) -> usize {
        let mut n = 0;
        let mut in_word = false;
        for c in text.chars() {
            if c.is_alphanumeric() {
                if !in_word {
                    n += 1;
                    in_word = true;
                }
            } else {
                in_word = false;
                if !c.is_whitespace() {
                    n += 1;
                }
            }
        }
        n
    }
}

/// Greedy longest-match subword tokenizer over a fixed vocabulary, applied
/// to the words produced by [`WordPunctTokenizer`]. Continuation pieces carry
/// a `##` prefix. Token text is the vocabulary piece, or the unknown token
/// when a word cannot be covered.
#[derive(Debug, Clone)]
pub struct WordPieceTokenizer {
    vocab: HashMap<String, usize>,
    unk_token: String,
    lowercase: bool,
    max_word_chars: usize,
}

impl WordPieceTokenizer {
    pub fn new(pieces: impl IntoIterator<Item = String>, unk_token: &str, lowercase: bool) -> Result<Self> {
        let vocab: HashMap<String, usize> = pieces.into_iter().enumerate().map(|(i, p)| (p, i)).collect();
        if !vocab.contains_key(unk_token) {
            return Err(Error::InvalidConfig(format!("vocabulary lacks {unk_token:?}")));
        }
        Ok(Self {
            vocab,
            unk_token: unk_token.to_string(),
            lowercase,
            max_word_chars: 100,
        })
    }

    /// Reads a vocabulary with one piece per line; the line number is the id.
    pub fn from_file(path: &Path, unk_token: &str, lowercase: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::new(text.lines().map(|l| l.trim_end_matches('\r').to_string()), unk_token, lowercase)
    }

    pub fn id(&self, piece: &str) -> Option<usize> {
        self.vocab.get(piece).copied()
    }

    pub fn unk_id(&self) -> usize {
        self.vocab[&self.unk_token]
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn split_word(&self, word: &str, offset: usize, out: &mut Vec<Token>) {
        let word_owned;
        let normalized = if self.lowercase {
            word_owned = word.to_lowercase();
            // lowercasing can change byte lengths; fall back to the raw word
            if word_owned.len() == word.len() {
                word_owned.as_str()
            } else {
                word
            }
        } else {
            word
        };
        let unk = |out: &mut Vec<Token>| {
            out.push(Token {
                text: self.unk_token.clone(),
                span: Span::new(offset, offset + word.len()),
            })
        };
        if normalized.chars().count() > self.max_word_chars {
            return unk(out);
        }
        let bounds: Vec<usize> = normalized
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(normalized.len()))
            .collect();
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < bounds.len() - 1 {
            let found = (start + 1..bounds.len()).rev().find_map(|end| {
                let sub = &normalized[bounds[start]..bounds[end]];
                let piece = if start == 0 { sub.to_string() } else { format!("##{sub}") };
                self.vocab.contains_key(&piece).then_some((end, piece))
            });
            let Some((end, piece)) = found else {
                return unk(out);
            };
            pieces.push(Token {
                text: piece,
                span: Span::new(offset + bounds[start], offset + bounds[end]),
            });
            start = end;
        }
        out.extend(pieces);
    }
}

impl Tokenizer for WordPieceTokenizer {
    fn tokenize(&self, text: &str) -> Vec<Token> {
        let mut out = Vec::new();
        for word in WordPunctTokenizer.tokenize(text) {
            self.split_word(&word.text, word.span.start, &mut out);
        }
        out
    }
}

/// Index of the sentence a token starting at `pos` belongs to. Tokens that
/// start between sentences attach to the following sentence.
fn sentence_of(sentences: &[Span], pos: usize) -> usize {
    let i = sentences.partition_point(|s| s.end <= pos);
    i.min(sentences.len().saturating_sub(1))
}

/// Tokenizes the three parts of an example and tags tokens with sentences.
pub fn tokenize_example(example: &RagExample, tokenizer: &dyn Tokenizer) -> Result<TokenizedExample> {
    example.validate()?;

    let mut context_tokens = Vec::new();
    let mut context_sentence_tokens = Vec::with_capacity(example.context.len());
    for (doc_index, doc) in example.context.iter().enumerate() {
        let sentences = segment_sentences(&doc.text);
        let mut ranges: Vec<TokenRange> = vec![0..0; sentences.len()];
        let mut filled = vec![false; sentences.len()];
        for tok in tokenizer.tokenize(&doc.text) {
            let sentence_index = sentence_of(&sentences, tok.span.start);
            let pos = context_tokens.len();
            if filled[sentence_index] {
                ranges[sentence_index].end = pos + 1;
            } else {
                ranges[sentence_index] = pos..pos + 1;
                filled[sentence_index] = true;
            }
            context_tokens.push(ContextToken {
                text: tok.text,
                doc_index,
                span: tok.span,
                sentence_index,
            });
        }
        // empty sentences get an empty range at the current position
        for (r, f) in ranges.iter_mut().zip(&filled) {
            if !f {
                *r = context_tokens.len()..context_tokens.len();
            }
        }
        context_sentence_tokens.push(ranges);
    }

    let question_tokens: Vec<String> = tokenizer
        .tokenize(&example.question)
        .into_iter()
        .map(|t| t.text)
        .collect();

    let response_sentences = sentences_for(&example.response, SentenceSource::Response);
    let spans: Vec<Span> = response_sentences.iter().map(|s| s.span).collect();
    let response_tokens: Vec<ResponseToken> = tokenizer
        .tokenize(&example.response)
        .into_iter()
        .map(|t| ResponseToken {
            sentence_index: sentence_of(&spans, t.span.start),
            text: t.text,
            span: t.span,
        })
        .collect();

    if context_tokens.is_empty() {
        return Err(Error::EmptyAfterTokenization { part: "context" });
    }
    if question_tokens.is_empty() {
        return Err(Error::EmptyAfterTokenization { part: "question" });
    }
    if response_tokens.is_empty() {
        return Err(Error::EmptyAfterTokenization { part: "response" });
    }

    Ok(TokenizedExample {
        example_id: example.id.clone(),
        context_tokens,
        question_tokens,
        response_tokens,
        context_sentence_tokens,
        response_sentences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Document;

    fn texts<'a>(text: &'a str, spans: &[Span]) -> Vec<&'a str> {
        spans.iter().map(|s| &text[s.start..s.end]).collect()
    }

    #[test]
    fn two_sentences() {
        let t = "It was founded in 1791. It is named after Washington.";
        assert_eq!(
            texts(t, &segment_sentences(t)),
            ["It was founded in 1791.", "It is named after Washington."]
        );
    }

    #[test]
    fn no_boundary() {
        assert_eq!(segment_sentences("Hello"), vec![Span::new(0, 5)]);
    }

    #[test]
    fn abbreviation_does_not_split() {
        let t = "Dr. Smith arrived. He left.";
        assert_eq!(texts(t, &segment_sentences(t)), ["Dr. Smith arrived.", "He left."]);
    }

    #[test]
    fn closing_quote_and_runs() {
        let t = "He said \"stop.\" Then what?! Nothing.";
        assert_eq!(
            texts(t, &segment_sentences(t)),
            ["He said \"stop.\"", "Then what?!", "Nothing."]
        );
    }

    #[test]
    fn whitespace_only_yields_nothing() {
        assert!(segment_sentences("  \n\t").is_empty());
    }

    #[test]
    fn tokenizer_words_and_punct() {
        let toks = WordPunctTokenizer.tokenize("Washington, D.C. (1791)");
        let t: Vec<&str> = toks.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(t, ["Washington", ",", "D", ".", "C", ".", "(", "1791", ")"]);
        assert_eq!(WordPunctTokenizer.count("Washington, D.C. (1791)"), 9);
    }

    #[test]
    fn wordpiece_greedy_longest_match() {
        let vocab = ["[UNK]", "bridge", "##s", "span", "open", "##ed", "##e", ","];
        let wp = WordPieceTokenizer::new(vocab.iter().map(|s| s.to_string()), "[UNK]", true).unwrap();
        let toks = wp.tokenize("Bridges opened, spanned");
        let t: Vec<&str> = toks.iter().map(|t| t.text.as_str()).collect();
        // "spanned" needs "##ned", which is missing, so the word is unknown
        assert_eq!(t, ["bridge", "##s", "open", "##ed", ",", "[UNK]"]);
        let spans: Vec<(usize, usize)> = toks.iter().map(|t| (t.span.start, t.span.end)).collect();
        assert_eq!(spans, [(0, 6), (6, 7), (8, 12), (12, 14), (14, 15), (16, 23)]);
        assert_eq!(wp.id("##ed"), Some(5));
        assert!(WordPieceTokenizer::new(["a".to_string()], "[UNK]", true).is_err());
    }

    fn example(ctx: &str, q: &str, r: &str) -> RagExample {
        RagExample {
            id: "e".into(),
            context: vec![Document::new("d0", ctx)],
            question: q.into(),
            response: r.into(),
        }
    }

    #[test]
    fn whitespace_counts() {
        let ex = example("a b c", "q?", "r.");
        let t = tokenize_example(&ex, &WhitespaceTokenizer).unwrap();
        assert_eq!((t.context_len(), t.question_len(), t.response_len()), (3, 1, 1));
        // the default tokenizer splits punctuation off
        let t = tokenize_example(&ex, &WordPunctTokenizer).unwrap();
        assert_eq!((t.context_len(), t.question_len(), t.response_len()), (3, 2, 2));
    }

    #[test]
    fn response_sentence_tags() {
        let ex = example("a b c", "q", "Yes. No.");
        let t = tokenize_example(&ex, &WordPunctTokenizer).unwrap();
        let tags: Vec<usize> = t.response_tokens.iter().map(|r| r.sentence_index).collect();
        assert_eq!(tags, [0, 0, 1, 1]);
    }

    #[test]
    fn context_sentence_ranges_are_dense() {
        let ex = RagExample {
            id: "e".into(),
            context: vec![
                Document::new("d0", "One two. Three."),
                Document::new("d1", "Four five six."),
            ],
            question: "q".into(),
            response: "r".into(),
        };
        let t = tokenize_example(&ex, &WordPunctTokenizer).unwrap();
        assert_eq!(t.context_sentence_tokens, vec![vec![0..3, 3..5], vec![5..9]]);
        assert_eq!(t.context_tokens[5].doc_index, 1);
    }

    struct Nothing;
    impl Tokenizer for Nothing {
        fn tokenize(&self, _: &str) -> Vec<Token> {
            Vec::new()
        }
    }

    #[test]
    fn empty_after_tokenization() {
        let ex = example("a", "q", "r");
        assert!(matches!(
            tokenize_example(&ex, &Nothing),
            Err(Error::EmptyAfterTokenization { part: "context" })
        ));
    }
}
