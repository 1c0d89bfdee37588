//! Treebank-style word tokenizer.
//!
//! Input is lowercased first, then rewritten by the ordered regex rules
//! below and split on whitespace. The rule set follows the Penn Treebank
//! `sed` tokenizer as distributed with NLTK's `TreebankWordTokenizer`
//! (without parenthesis conversion). Outputs match that tokenizer except
//! where rule 4 differs, as noted below the table:
//!
//! | # | pattern                                   | replacement |
//! |---|-------------------------------------------|-------------|
//! | 1 | `^"`                                      | ` `` `      |
//! | 2 | ` `` `                                    | pad         |
//! | 3 | `([ (\[{<])("\|'')`                       | `$1 `` `    |
//! | 4 | `[:,]` followed by a non-digit             | pad         |
//! | 5 | `([:,])$`                                 | ` $1 `      |
//! | 6 | `...`                                     | pad         |
//! | 7 | `[;@#$%&]`                                | pad         |
//! | 8 | final period (before closing brackets/quotes) | split off |
//! | 9 | `[?!]`                                    | pad         |
//! |10 | `([^'])' `                                | `$1 ' `     |
//! |11 | brackets `[]{}()<>`                       | pad         |
//! |12 | `--`                                      | pad         |
//! |13 | `''`, `"`                                 | ` '' `      |
//! |14 | clitics `'s 'm 'd '` then `'ll 're 've n't` | split off |
//! |15 | `cannot d'ye gimme gonna gotta lemme more'n wanna` | split in two |
//! |16 | `'tis 'twas`                              | split in two |
//!
//! Rule 4 pads every qualifying `:` or `,`, including one that directly
//! follows another (`,:a`); the reference regex skips the second one,
//! which would make tokenization not idempotent.
//!
//! Punctuation and stop-words are kept; no other normalization happens.

use std::sync::LazyLock;

use regex::Regex;

use crate::data::AttributeValue;

enum Rule {
    Regex { re: Regex, rep: &'static str },
    Scan(fn(&str) -> String),
}

impl Rule {
    fn apply(&self, text: &str) -> String {
        match self {
            Rule::Regex { re, rep } => re.replace_all(text, *rep).into_owned(),
            Rule::Scan(f) => f(text),
        }
    }
}

fn rule(pattern: &str, rep: &'static str) -> Rule {
    Rule::Regex {
        re: Regex::new(pattern).expect("static tokenizer pattern"),
        rep,
    }
}

/// Pads `:` and `,` when the next character is not a digit.
fn pad_colon_comma(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 8);
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if matches!(c, ':' | ',') && chars.peek().is_some_and(|n| !n.is_ascii_digit()) {
            out.push(' ');
            out.push(c);
            out.push(' ');
        } else {
            out.push(c);
        }
    }
    out
}

struct Rules {
    before_pad: Vec<Rule>,
    after_pad: Vec<Rule>,
}

static RULES: LazyLock<Rules> = LazyLock::new(|| Rules {
    before_pad: vec![
        // starting quotes
        rule(r#"^""#, "``"),
        rule(r"(``)", " $1 "),
        rule(r#"([ (\[{<])("|'{2})"#, "$1 `` "),
        // punctuation
        Rule::Scan(pad_colon_comma),
        rule(r"([:,])$", " $1 "),
        rule(r"\.\.\.", " ... "),
        rule(r"[;@#$%&]", " $0 "),
        rule(r#"([^.])(\.)([\])}>"']*)\s*$"#, "$1 $2$3 "),
        rule(r"[?!]", " $0 "),
        rule(r"([^'])' ", "$1 ' "),
        // brackets
        rule(r"[\]\[(){}<>]", " $0 "),
        rule(r"--", " -- "),
    ],
    after_pad: vec![
        // ending quotes
        rule(r"''", " '' "),
        rule(r#"""#, " '' "),
        rule(r"([^' ])('[sS]|'[mM]|'[dD]|') ", "$1 $2 "),
        rule(r"([^' ])('ll|'LL|'re|'RE|'ve|'VE|n't|N'T) ", "$1 $2 "),
        // two-part contractions
        rule(r"(?i)\b(can)(not)\b", " $1 $2 "),
        rule(r"(?i)\b(d)('ye)\b", " $1 $2 "),
        rule(r"(?i)\b(gim)(me)\b", " $1 $2 "),
        rule(r"(?i)\b(gon)(na)\b", " $1 $2 "),
        rule(r"(?i)\b(got)(ta)\b", " $1 $2 "),
        rule(r"(?i)\b(lem)(me)\b", " $1 $2 "),
        rule(r"(?i)\b(more)('n)\b", " $1 $2 "),
        // the reference uses a lookahead here; capturing the space is equivalent
        rule(r"(?i)\b(wan)(na)(\s)", " $1 $2 $3"),
        rule(r"(?i) ('t)(is)\b", " $1 $2 "),
        rule(r"(?i) ('t)(was)\b", " $1 $2 "),
    ],
});

/// Lowercases and splits `raw` into treebank tokens.
pub fn tokenize_words(raw: &str) -> Vec<String> {
    let rules = &*RULES;
    let mut text = raw.to_lowercase();
    for r in &rules.before_pad {
        text = r.apply(&text);
    }
    text = format!(" {text} ");
    for r in &rules.after_pad {
        text = r.apply(&text);
    }
    text.split_whitespace().map(str::to_owned).collect()
}

/// Tokenizes a raw cell. Blank input yields a missing value.
pub fn tokenize(raw: &str) -> AttributeValue {
    AttributeValue::from_tokens(tokenize_words(raw))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize_words(s)
    }

    #[test]
    fn brackets_and_abbreviation_period() {
        assert_eq!(
            toks("Me and Mrs. Jones [remix]"),
            ["me", "and", "mrs.", "jones", "[", "remix", "]"]
        );
    }

    #[test]
    fn adjacent_colon_and_comma() {
        assert_eq!(toks(",:a"), [",", ":", "a"]);
        assert_eq!(toks("1,000 a:b"), ["1,000", "a", ":", "b"]);
    }

    #[test]
    fn lowercases() {
        assert_eq!(toks("BOB DYLAN"), ["bob", "dylan"]);
    }

    #[test]
    fn empty_is_missing() {
        assert!(tokenize("").is_missing());
        assert!(tokenize("   \t ").is_missing());
        assert_eq!(tokenize("").len(), 0);
    }

    #[test]
    fn trailing_apostrophe() {
        assert_eq!(toks("Blowin' in the Wind"), ["blowin", "'", "in", "the", "wind"]);
    }

    #[test]
    fn contractions() {
        assert_eq!(
            toks("I can't go, won't stop!"),
            ["i", "ca", "n't", "go", ",", "wo", "n't", "stop", "!"]
        );
        assert_eq!(
            toks("cannot gonna wanna go"),
            ["can", "not", "gon", "na", "wan", "na", "go"]
        );
    }
}
