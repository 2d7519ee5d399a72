//! Grammar-based parsing of lighting instructions.
//!
//! Accepted shape, after optional courtesy words:
//!
//! ```text
//! <verb phrase> [the] <target> [in this picture|image] [by N%] [<vague amount>]
//! ```
//!
//! The verb phrase fixes the direction, an explicit percentage beats any
//! vague amount, and a target that names the whole frame (or the background)
//! changes the scope. One instruction per prompt.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Brighten,
    Darken,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Brighten => 1.0,
            Direction::Darken => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Region,
    Background,
    Global,
}

/// Byte range into the original prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    fn cover(a: Span, b: Span) -> Span {
        Span { start: a.start.min(b.start), end: a.end.max(b.end) }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    /// Original-case target words; empty unless `scope` is `Region`.
    pub target_phrase: String,
    pub scope: Scope,
    pub direction: Direction,
    /// Unsigned magnitude in `(0, 1]`, or `[0, 1]` after an explicit override.
    pub ratio: f64,
    pub source_text: String,
}

impl Instruction {
    pub fn signed_ratio(&self) -> f64 {
        self.direction.sign() * self.ratio
    }

    /// Scope one-hot followed by the signed ratio.
    pub fn embedding(&self) -> [f64; 4] {
        let mut e = [0.0; 4];
        e[match self.scope {
            Scope::Region => 0,
            Scope::Background => 1,
            Scope::Global => 2,
        }] = 1.0;
        e[3] = self.signed_ratio();
        e
    }

    /// Same target, scope, direction and ratio; the source text is ignored.
    pub fn same_command(&self, other: &Instruction) -> bool {
        self.target_phrase == other.target_phrase
            && self.scope == other.scope
            && self.direction == other.direction
            && self.ratio == other.ratio
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseError {
    #[error("empty prompt")]
    Empty,
    #[error("no brightness verb recognized at {span}")]
    NoVerb { span: Span },
    #[error("no target and no whole-image keyword at {span}")]
    NoTarget { span: Span },
    #[error("ratio {percent}% at {span} is outside (0, 100]%")]
    RatioOutOfRange { span: Span, percent: f64 },
    #[error("more than one instruction in the prompt (second starts at {span})")]
    Compound { span: Span },
    #[error("unexpected words \"{text}\" at {span}")]
    Unexpected { span: Span, text: String },
}

impl ParseError {
    pub fn kind(&self) -> &'static str {
        match self {
            ParseError::Empty => "empty",
            ParseError::NoVerb { .. } => "no_verb",
            ParseError::NoTarget { .. } => "no_target",
            ParseError::RatioOutOfRange { .. } => "ratio_out_of_range",
            ParseError::Compound { .. } => "compound",
            ParseError::Unexpected { .. } => "unexpected",
        }
    }

    pub fn span(&self) -> Option<Span> {
        match self {
            ParseError::Empty => None,
            ParseError::NoVerb { span }
            | ParseError::NoTarget { span }
            | ParseError::RatioOutOfRange { span, .. }
            | ParseError::Compound { span }
            | ParseError::Unexpected { span, .. } => Some(*span),
        }
    }
}

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("cannot read vocabulary file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed vocabulary file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid vocabulary: {0}")]
    Invalid(String),
}

/// On-disk vocabulary layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabFile {
    pub verbs: BTreeMap<String, Direction>,
    pub amounts: BTreeMap<String, f64>,
    pub global_keywords: Vec<String>,
    #[serde(default = "default_background_keywords")]
    pub background_keywords: Vec<String>,
    #[serde(default = "default_amount")]
    pub default_amount: f64,
}

fn default_background_keywords() -> Vec<String> {
    vec!["background".into(), "backdrop".into(), "surroundings".into()]
}

fn default_amount() -> f64 {
    0.20
}

type Phrase = Vec<String>;

#[derive(Debug, Clone, PartialEq)]
pub struct VocabularyTable {
    verbs: Vec<(Phrase, Direction)>,
    amounts: Vec<(Phrase, f64)>,
    global_keywords: Vec<Phrase>,
    background_keywords: Vec<Phrase>,
    default_ratio: f64,
}

impl Default for VocabularyTable {
    fn default() -> Self {
        let verbs = [
            ("brighten", Direction::Brighten),
            ("brighten up", Direction::Brighten),
            ("lighten", Direction::Brighten),
            ("lighten up", Direction::Brighten),
            ("light up", Direction::Brighten),
            ("illuminate", Direction::Brighten),
            ("increase the brightness of", Direction::Brighten),
            ("raise the brightness of", Direction::Brighten),
            ("boost the brightness of", Direction::Brighten),
            ("enhance the brightness of", Direction::Brighten),
            ("turn up the brightness of", Direction::Brighten),
            ("increase the exposure of", Direction::Brighten),
            ("darken", Direction::Darken),
            ("dim", Direction::Darken),
            ("dim down", Direction::Darken),
            ("decrease the brightness of", Direction::Darken),
            ("reduce the brightness of", Direction::Darken),
            ("lower the brightness of", Direction::Darken),
            ("turn down the brightness of", Direction::Darken),
            ("decrease the exposure of", Direction::Darken),
        ];
        let amounts = [
            ("just a little", 0.10),
            ("a little", 0.10),
            ("a little bit", 0.10),
            ("a bit", 0.10),
            ("just a bit", 0.10),
            ("slightly", 0.10),
            ("somewhat", 0.20),
            ("moderately", 0.20),
            ("a lot", 0.40),
            ("significantly", 0.40),
            ("much", 0.40),
            ("considerably", 0.40),
        ];
        let global = [
            "whole image", "entire image", "whole picture", "entire picture", "whole photo",
            "entire photo", "whole scene", "entire scene", "everything", "picture", "image",
            "photo", "scene", "all",
        ];
        let file = VocabFile {
            verbs: verbs.iter().map(|(k, d)| (k.to_string(), *d)).collect(),
            amounts: amounts.iter().map(|(k, r)| (k.to_string(), *r)).collect(),
            global_keywords: global.iter().map(|s| s.to_string()).collect(),
            background_keywords: default_background_keywords(),
            default_amount: default_amount(),
        };
        Self::from_file(file).expect("built-in vocabulary is valid")
    }
}

impl VocabularyTable {
    pub fn from_file(file: VocabFile) -> Result<Self, VocabError> {
        let phrase = |s: &str| -> Result<Phrase, VocabError> {
            let p = normalize_text(s);
            if p.is_empty() {
                return Err(VocabError::Invalid(format!("empty phrase {s:?}")));
            }
            Ok(p)
        };
        let check_ratio = |name: &str, r: f64| {
            if r > 0.0 && r <= 1.0 {
                Ok(r)
            } else {
                Err(VocabError::Invalid(format!("amount {name:?} = {r} is outside (0, 1]")))
            }
        };
        if file.verbs.is_empty() {
            return Err(VocabError::Invalid("no verbs".into()));
        }
        let mut verbs = file.verbs.iter().map(|(k, d)| Ok((phrase(k)?, *d))).collect::<Result<Vec<_>, VocabError>>()?;
        let mut amounts = file
            .amounts
            .iter()
            .map(|(k, r)| Ok((phrase(k)?, check_ratio(k, *r)?)))
            .collect::<Result<Vec<_>, VocabError>>()?;
        // Longest phrase first so "just a little" beats "a little".
        verbs.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        amounts.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        Ok(Self {
            verbs,
            amounts,
            global_keywords: file.global_keywords.iter().map(|s| phrase(s)).collect::<Result<_, _>>()?,
            background_keywords: file.background_keywords.iter().map(|s| phrase(s)).collect::<Result<_, _>>()?,
            default_ratio: check_ratio("default_amount", file.default_amount)?,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, VocabError> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VocabError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn default_ratio(&self) -> f64 {
        self.default_ratio
    }

    fn match_verb(&self, toks: &[Token], at: usize) -> Option<(usize, Direction)> {
        self.verbs.iter().find_map(|(p, d)| match_loose(toks, at, p).map(|end| (end, *d)))
    }

    fn match_amount(&self, toks: &[Token], at: usize) -> Option<(usize, f64)> {
        self.amounts.iter().find_map(|(p, r)| match_exact(toks, at, p).map(|end| (end, *r)))
    }
}

#[derive(Debug, Clone)]
struct Token {
    text: String,
    span: Span,
    /// A sentence or clause separator (`. ! ? ; ,`) precedes this token.
    after_break: bool,
}

fn is_kept(c: char) -> bool {
    c.is_alphanumeric() || c == '%'
}

fn tokenize(prompt: &str) -> Vec<Token> {
    let chars: Vec<(usize, char)> = prompt.char_indices().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    let mut pending_break = false;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if !is_kept(c) {
            if matches!(c, '.' | '!' | '?' | ';' | ',') {
                pending_break = true;
            }
            i += 1;
            continue;
        }
        let start = pos;
        let mut text = String::new();
        let mut end = pos;
        while i < chars.len() {
            let (p, ch) = chars[i];
            let between_digits = ch == '.'
                && text.chars().last().is_some_and(|l| l.is_ascii_digit())
                && chars.get(i + 1).is_some_and(|(_, n)| n.is_ascii_digit());
            if is_kept(ch) || between_digits {
                text.extend(ch.to_lowercase());
                end = p + ch.len_utf8();
                i += 1;
            } else if ch == '\'' || ch == '\u{2019}' {
                // apostrophes vanish inside a word
                i += 1;
            } else {
                break;
            }
        }
        toks.push(Token { text, span: Span { start, end }, after_break: pending_break });
        pending_break = false;
    }
    toks
}

/// Lowercases, strips punctuation and splits on whitespace. `%` stays
/// attached to its number.
pub fn normalize_text(prompt: &str) -> Vec<String> {
    tokenize(prompt).into_iter().map(|t| t.text).collect()
}

fn match_exact(toks: &[Token], at: usize, phrase: &[String]) -> Option<usize> {
    if at + phrase.len() > toks.len() {
        return None;
    }
    phrase.iter().zip(&toks[at..]).all(|(p, t)| *p == t.text).then_some(at + phrase.len())
}

/// Like `match_exact`, but "the" is optional on both sides inside the phrase.
fn match_loose(toks: &[Token], at: usize, phrase: &[String]) -> Option<usize> {
    let words: Vec<&String> = phrase.iter().filter(|w| *w != "the").collect();
    let mut i = at;
    for (k, w) in words.iter().enumerate() {
        if k > 0 {
            while toks.get(i).is_some_and(|t| t.text == "the") {
                i += 1;
            }
        }
        if toks.get(i)?.text != **w {
            return None;
        }
        i += 1;
    }
    Some(i)
}

const COURTESY: &[&[&str]] = &[&["please"], &["kindly"], &["can", "you"], &["could", "you"], &["would", "you"]];
const DETERMINERS: &[&str] = &["the", "a", "an", "this", "that", "these", "those", "my", "our"];
const CONJUNCTIONS: &[&str] = &["and", "then", "also", "but", "while"];
const COMPARATIVES: &[(&str, Direction)] = &[
    ("brighter", Direction::Brighten),
    ("lighter", Direction::Brighten),
    ("darker", Direction::Darken),
    ("dimmer", Direction::Darken),
];
const FILLERS: &[&str] = &["please", "more", "now", "thanks", "for", "me", "overall", "too", "a", "bit"];
const LOCATION_PREP: &[&str] = &["in", "on", "of", "within", "across"];
const LOCATION_DET: &[&str] = &["this", "the", "that", "my"];
const LOCATION_NOUN: &[&str] = &["picture", "image", "photo", "photograph", "scene", "shot", "frame"];

fn strs(toks: &[Token], at: usize, words: &[&str]) -> Option<usize> {
    if at + words.len() > toks.len() {
        return None;
    }
    words.iter().zip(&toks[at..]).all(|(w, t)| *w == t.text).then_some(at + words.len())
}

fn match_location(toks: &[Token], at: usize) -> Option<usize> {
    let mut i = at;
    if !LOCATION_PREP.contains(&toks.get(i)?.text.as_str()) {
        return None;
    }
    i += 1;
    if LOCATION_DET.contains(&toks.get(i)?.text.as_str()) {
        i += 1;
    }
    LOCATION_NOUN.contains(&toks.get(i)?.text.as_str()).then_some(i + 1)
}

fn number_word(w: &str) -> Option<f64> {
    const WORDS: &[(&str, f64)] = &[
        ("one", 1.0), ("two", 2.0), ("three", 3.0), ("four", 4.0), ("five", 5.0),
        ("six", 6.0), ("seven", 7.0), ("eight", 8.0), ("nine", 9.0), ("ten", 10.0),
        ("fifteen", 15.0), ("twenty", 20.0), ("thirty", 30.0), ("forty", 40.0),
        ("fifty", 50.0), ("sixty", 60.0), ("seventy", 70.0), ("eighty", 80.0),
        ("ninety", 90.0), ("hundred", 100.0),
    ];
    WORDS.iter().find(|(k, _)| *k == w).map(|(_, v)| *v)
}

fn parse_number(w: &str) -> Option<f64> {
    if w.chars().all(|c| c.is_ascii_digit() || c == '.') && w.chars().any(|c| c.is_ascii_digit()) {
        w.parse().ok()
    } else {
        number_word(w)
    }
}

/// `[by] N%`, `[by] N %`, `[by] N percent`. Returns (end, percent, span of the number).
fn match_percent(toks: &[Token], at: usize) -> Option<(usize, f64, Span)> {
    let mut i = at;
    if toks.get(i)?.text == "by" {
        i += 1;
    }
    let t = toks.get(i)?;
    if let Some(num) = t.text.strip_suffix('%') {
        if !num.contains('%') {
            if let Some(v) = parse_number(num) {
                return Some((i + 1, v, t.span));
            }
        }
    }
    let v = parse_number(&t.text)?;
    let unit = toks.get(i + 1)?;
    (unit.text == "%" || unit.text == "percent").then(|| (i + 2, v, Span::cover(t.span, unit.span)))
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn parse(prompt: &str, vocab: &VocabularyTable) -> Result<Instruction, ParseError> {
    let toks = tokenize(prompt);
    if toks.is_empty() {
        return Err(ParseError::Empty);
    }

    let mut i = 0;
    while let Some(end) = COURTESY.iter().find_map(|c| strs(&toks, i, c)) {
        i = end;
    }
    // "make <target> brighter" puts the direction after the target.
    let mut comparative: Option<usize> = None;
    let (after_verb, direction) = match vocab.match_verb(&toks, i) {
        Some(v) => v,
        None => {
            let found = (toks.get(i).is_some_and(|t| t.text == "make"))
                .then(|| {
                    (i + 1..toks.len()).find_map(|k| {
                        COMPARATIVES.iter().find(|(w, _)| toks[k].text == *w).map(|&(_, d)| (k, d))
                    })
                })
                .flatten();
            match found {
                Some((k, d)) => {
                    comparative = Some(k);
                    (i + 1, d)
                }
                None => {
                    let span = toks.get(i).map_or(toks[0].span, |t| t.span);
                    return Err(ParseError::NoVerb { span });
                }
            }
        }
    };

    // A second verb introduced by a conjunction or a clause break is a second instruction.
    for k in after_verb..toks.len() {
        let conj = k > after_verb && CONJUNCTIONS.contains(&toks[k - 1].text.as_str());
        if (conj || toks[k].after_break) && vocab.match_verb(&toks, k).is_some() {
            let start = if conj { toks[k - 1].span } else { toks[k].span };
            let span = Span { start: start.start, end: prompt.len() };
            return Err(ParseError::Compound { span });
        }
    }

    let mut target: Vec<usize> = Vec::new();
    let mut target_closed = false;
    let mut explicit: Option<(f64, Span)> = None;
    let mut vague: Option<f64> = None;
    let mut j = after_verb;
    while j < toks.len() {
        if comparative == Some(j) {
            target_closed = true;
            j += 1;
            continue;
        }
        if let Some((end, percent, span)) = match_percent(&toks, j) {
            explicit.get_or_insert((percent, span));
            target_closed = true;
            j = end;
            continue;
        }
        let by = usize::from(toks[j].text == "by");
        if let Some((end, r)) = vocab.match_amount(&toks, j + by) {
            vague.get_or_insert(r);
            target_closed = true;
            j = end;
            continue;
        }
        if let Some(end) = match_location(&toks, j) {
            target_closed = true;
            j = end;
            continue;
        }
        if !target_closed {
            target.push(j);
        } else if !FILLERS.contains(&toks[j].text.as_str()) {
            let span = Span { start: toks[j].span.start, end: toks.last().unwrap().span.end };
            return Err(ParseError::Unexpected { span, text: prompt[span.start..span.end].to_string() });
        }
        j += 1;
    }

    while target.first().is_some_and(|&k| DETERMINERS.contains(&toks[k].text.as_str())) {
        target.remove(0);
    }
    if target.is_empty() {
        let span = match toks.get(after_verb) {
            Some(t) => Span { start: t.span.start, end: prompt.len() },
            None => Span { start: toks[after_verb - 1].span.end, end: prompt.len() },
        };
        return Err(ParseError::NoTarget { span });
    }
    let words: Vec<String> = target.iter().map(|&k| toks[k].text.clone()).collect();
    let (scope, target_phrase) = if vocab.global_keywords.contains(&words) {
        (Scope::Global, String::new())
    } else if vocab.background_keywords.contains(&words) {
        (Scope::Background, String::new())
    } else {
        let first = toks[target[0]].span;
        let last = toks[*target.last().unwrap()].span;
        (Scope::Region, collapse_ws(&prompt[first.start..last.end]))
    };

    let ratio = match explicit {
        Some((percent, span)) => {
            if !(percent > 0.0 && percent <= 100.0) {
                return Err(ParseError::RatioOutOfRange { span, percent });
            }
            percent / 100.0
        }
        None => vague.unwrap_or(vocab.default_ratio),
    };

    Ok(Instruction { target_phrase, scope, direction, ratio, source_text: prompt.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Result<Instruction, ParseError> {
        parse(s, &VocabularyTable::default())
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_text("Brighten,  THE  lamp!"), ["brighten", "the", "lamp"]);
        assert!(normalize_text("").is_empty());
        assert_eq!(normalize_text("by 30%"), ["by", "30%"]);
        assert_eq!(normalize_text("ÉCLAIRE la Lampe"), ["éclaire", "la", "lampe"]);
        assert_eq!(normalize_text("by 12.5% now."), ["by", "12.5%", "now"]);
    }

    #[test]
    fn worked_examples() {
        let i = p("Brighten the Majin Buu in this picture just a little.").unwrap();
        assert_eq!(i.target_phrase, "Majin Buu");
        assert_eq!(i.scope, Scope::Region);
        assert_eq!(i.direction, Direction::Brighten);
        assert_eq!(i.ratio, 0.10);

        let i = p("Increase the brightness of the blackboard by 30%").unwrap();
        assert_eq!((i.target_phrase.as_str(), i.scope, i.direction, i.ratio), ("blackboard", Scope::Region, Direction::Brighten, 0.30));

        let i = p("darken the whole image by 25%").unwrap();
        assert_eq!((i.target_phrase.as_str(), i.scope, i.direction, i.ratio), ("", Scope::Global, Direction::Darken, 0.25));
        assert_eq!(i.signed_ratio(), -0.25);
        assert_eq!(i.embedding(), [0.0, 0.0, 1.0, -0.25]);
    }

    #[test]
    fn explicit_percentage_beats_vague_amount() {
        let i = p("brighten the lamp a lot by 15%").unwrap();
        assert_eq!(i.ratio, 0.15);
        let i = p("brighten the lamp by 15% a lot").unwrap();
        assert_eq!(i.ratio, 0.15);
    }

    #[test]
    fn background_and_defaults() {
        let i = p("dim the background").unwrap();
        assert_eq!((i.scope, i.target_phrase.as_str(), i.ratio), (Scope::Background, "", 0.20));
    }

    #[test]
    fn error_kinds() {
        assert_eq!(p("   "), Err(ParseError::Empty));
        assert_eq!(p("the lamp is nice").unwrap_err().kind(), "no_verb");
        assert_eq!(p("brighten by 20%").unwrap_err().kind(), "no_target");
        let e = p("brighten the lamp by 150%").unwrap_err();
        assert_eq!(e.kind(), "ratio_out_of_range");
        let s = e.span().unwrap();
        assert_eq!(&"brighten the lamp by 150%"[s.start..s.end], "150%");
        assert_eq!(p("brighten the lamp by 0%").unwrap_err().kind(), "ratio_out_of_range");
        assert_eq!(p("brighten the lamp and darken the wall").unwrap_err().kind(), "compound");
        assert_eq!(p("Brighten the lamp. Dim the sofa.").unwrap_err().kind(), "compound");
        assert_eq!(p("brighten the lamp a little over there").unwrap_err().kind(), "unexpected");
    }

    #[test]
    fn make_comparative() {
        let i = p("make the hallway darker a little").unwrap();
        assert_eq!((i.target_phrase.as_str(), i.direction, i.ratio), ("hallway", Direction::Darken, 0.10));
        assert_eq!(p("make brighter").unwrap_err().kind(), "no_target");
        assert_eq!(p("make it pretty").unwrap_err().kind(), "no_verb");
    }

    #[test]
    fn verb_words_inside_target_are_not_compound() {
        let i = p("brighten the dim corner").unwrap();
        assert_eq!(i.target_phrase, "dim corner");
    }

    #[test]
    fn vocab_file_roundtrip_and_errors() {
        let json = r#"{"verbs": {"boost": "brighten"}, "amounts": {"a smidge": 0.05}, "global_keywords": ["all of it"]}"#;
        let v = VocabularyTable::from_json(json).unwrap();
        let i = parse("boost the sign a smidge", &v).unwrap();
        assert_eq!((i.target_phrase.as_str(), i.ratio), ("sign", 0.05));
        assert_eq!(parse("boost all of it", &v).unwrap().scope, Scope::Global);

        assert!(matches!(VocabularyTable::from_json("{"), Err(VocabError::Json(_))));
        assert!(matches!(VocabularyTable::from_json(r#"{"verbs": {}}"#), Err(VocabError::Json(_))));
        let bad = r#"{"verbs": {"boost": "brighten"}, "amounts": {"huge": 2.0}, "global_keywords": []}"#;
        assert!(matches!(VocabularyTable::from_json(bad), Err(VocabError::Invalid(_))));
    }

    #[test]
    fn determinism() {
        let a = p("Please brighten the red car a bit").unwrap();
        let b = p("Please brighten the red car a bit").unwrap();
        assert_eq!(a, b);
    }
}
