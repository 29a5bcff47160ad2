//! Controlled-English grammar for referring instructions.
//!
//! ```text
//! utterance := step (SEP step)*
//! step      := [filler] [verb [particle]] chain [destination] [intent]
//! chain     := entity (("and" | ",") relation entity)*
//! entity    := np [memory] [relation entity]
//! np        := det* word+                      (last word is the noun)
//! memory    := ["that" | "which"] subject ["just"] verb particle* [time]
//! ```
//!
//! A relation that directly follows an anchor refines that anchor; one
//! introduced by "and" or a comma constrains the target.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::query::{
    is_generic_noun, EntitySpec, MemoryCue, ReferenceQuery, RelationClause, Step, TimeWindow,
};
use crate::scene_graph::SpatialRelation;

pub const DEFAULT_ACTION: &str = "locate";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ParseErrorKind {
    Empty,
    NoNounPhrase,
    UnsupportedRelation,
    UnexpectedToken,
    ExternalMalformed,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ParseErrorKind::Empty => "EMPTY",
            ParseErrorKind::NoNounPhrase => "NO_NOUN_PHRASE",
            ParseErrorKind::UnsupportedRelation => "UNSUPPORTED_RELATION",
            ParseErrorKind::UnexpectedToken => "UNEXPECTED_TOKEN",
            ParseErrorKind::ExternalMalformed => "EXTERNAL_MALFORMED",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[error("{kind}: {detail} (in {transcript:?})")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub transcript: String,
    pub detail: String,
}

/// Anything that turns a transcript into a query: the built-in grammar or
/// an external (LLM) backend.
pub trait ReferenceParser: Send + Sync {
    fn parse(&self, transcript: &str) -> Result<ReferenceQuery, ParseError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GrammarParser;

impl ReferenceParser for GrammarParser {
    fn parse(&self, transcript: &str) -> Result<ReferenceQuery, ParseError> {
        parse(transcript)
    }
}

/// Transport for an external parser: sends `{"transcript": ...}` and returns
/// the raw response body.
pub trait ParserBackend: Send + Sync {
    fn request(&self, request_json: &str) -> Result<String, String>;
}

/// Adapts a [`ParserBackend`] whose responses must be `ReferenceQuery` JSON.
pub struct ExternalParser<B> {
    backend: B,
}

impl<B: ParserBackend> ExternalParser<B> {
    pub fn new(backend: B) -> Self {
        ExternalParser { backend }
    }
}

impl<B: ParserBackend> ReferenceParser for ExternalParser<B> {
    fn parse(&self, transcript: &str) -> Result<ReferenceQuery, ParseError> {
        let fail = |detail: String| ParseError {
            kind: ParseErrorKind::ExternalMalformed,
            transcript: transcript.to_string(),
            detail,
        };
        let request = serde_json::json!({ "transcript": transcript }).to_string();
        let body = self.backend.request(&request).map_err(fail)?;
        let mut query: ReferenceQuery =
            serde_json::from_str(&body).map_err(|e| fail(e.to_string()))?;
        query.raw_transcript = transcript.to_string();
        query.validate().map_err(fail)?;
        Ok(query)
    }
}

const FILLERS: &[&str] = &[
    "um", "umm", "uh", "uhh", "uhm", "er", "erm", "hmm", "hm", "ah", "eh", "okay", "ok", "please",
];

const LEADING_POLITE: &[&[&str]] = &[
    &["can", "you"],
    &["could", "you"],
    &["would", "you"],
    &["i", "need", "you", "to"],
    &["i", "want", "you", "to"],
    &["go", "ahead", "and"],
    &["now"],
    &["so"],
];

const DETERMINERS: &[&str] = &["the", "a", "an", "this", "these", "those", "that", "our", "some"];

const SUBJECTS: &[&str] = &["we", "i", "you"];

const ORDINALS: &[&str] = &["first", "second", "third", "fourth", "fifth", "last"];

/// Verbs recognized at the start of a step, with optional particle.
const VERBS: &[(&str, &[&str])] = &[
    ("locate", &[]),
    ("find", &[]),
    ("select", &[]),
    ("pick", &["up"]),
    ("grab", &[]),
    ("take", &[]),
    ("get", &[]),
    ("move", &[]),
    ("put", &["down", "away"]),
    ("place", &[]),
    ("slide", &[]),
    ("push", &[]),
    ("pull", &[]),
    ("drag", &[]),
    ("shift", &[]),
    ("bring", &[]),
    ("carry", &[]),
    ("rotate", &[]),
    ("turn", &["on", "off"]),
    ("spin", &[]),
    ("flip", &[]),
    ("open", &[]),
    ("close", &[]),
    ("tighten", &[]),
    ("loosen", &[]),
    ("unscrew", &[]),
    ("check", &[]),
    ("inspect", &[]),
    ("examine", &[]),
    ("press", &[]),
    ("hit", &[]),
    ("tap", &[]),
    ("touch", &[]),
    ("remove", &[]),
    ("lift", &[]),
    ("show", &["me"]),
    ("point", &["at"]),
    ("look", &["at"]),
    ("highlight", &[]),
    ("fix", &[]),
    ("hold", &[]),
    ("clean", &[]),
    ("identify", &[]),
    ("mark", &[]),
];

const MOVE_VERBS: &[&str] = &[
    "move", "put", "place", "slide", "push", "drag", "shift", "bring", "carry",
];

/// Single-word attributes. Other non-noun words are treated as parts of a
/// name and merged with their neighbours ("quest 3", "poland spring").
const ATTRIBUTE_WORDS: &[&str] = &[
    // colors
    "red", "blue", "green", "yellow", "purple", "orange", "black", "white", "grey", "gray",
    "pink", "brown", "cyan", "magenta", "violet", "gold", "golden", "silver", "teal", "beige",
    "dark", "light", "bright", "pale",
    // surface and pattern
    "striped", "dotted", "spotted", "checkered", "plain", "glossy", "matte", "shiny", "wooden",
    "metal", "metallic", "plastic", "glass", "transparent", "patterned", "solid", "smooth",
    "rough", "textured", "marbled", "dashed", "zigzag", "speckled", "polka",
    // size and shape
    "big", "small", "large", "tiny", "tall", "short", "little", "huge", "wide", "narrow", "long",
    "round", "square", "flat", "rectangular", "circular", "cylindrical", "thin", "thick",
    // position and state
    "left", "right", "top", "bottom", "front", "back", "middle", "upper", "lower", "open",
    "closed", "empty", "full", "old", "new", "loose", "broken",
];

const RELATION_PHRASES: &[(&[&str], SpatialRelation)] = &[
    (&["to", "the", "left", "side", "of"], SpatialRelation::LeftOf),
    (&["to", "the", "right", "side", "of"], SpatialRelation::RightOf),
    (&["on", "the", "left", "side", "of"], SpatialRelation::LeftOf),
    (&["on", "the", "right", "side", "of"], SpatialRelation::RightOf),
    (&["to", "the", "left", "of"], SpatialRelation::LeftOf),
    (&["to", "the", "right", "of"], SpatialRelation::RightOf),
    (&["on", "the", "left", "of"], SpatialRelation::LeftOf),
    (&["on", "the", "right", "of"], SpatialRelation::RightOf),
    (&["in", "front", "of"], SpatialRelation::InFrontOf),
    (&["in", "back", "of"], SpatialRelation::BehindOf),
    (&["on", "top", "of"], SpatialRelation::Above),
    (&["left", "of"], SpatialRelation::LeftOf),
    (&["right", "of"], SpatialRelation::RightOf),
    (&["next", "to"], SpatialRelation::Adjacent),
    (&["close", "to"], SpatialRelation::Adjacent),
    (&["behind"], SpatialRelation::BehindOf),
    (&["above"], SpatialRelation::Above),
    (&["over"], SpatialRelation::Above),
    (&["atop"], SpatialRelation::Above),
    (&["below"], SpatialRelation::Below),
    (&["under"], SpatialRelation::Below),
    (&["underneath"], SpatialRelation::Below),
    (&["beneath"], SpatialRelation::Below),
    (&["beside"], SpatialRelation::Adjacent),
    (&["near"], SpatialRelation::Adjacent),
];

/// Destination phrases for move-class verbs.
const DESTINATION_PHRASES: &[(&[&str], SpatialRelation)] = &[
    (&["to", "the", "left", "side", "of"], SpatialRelation::LeftOf),
    (&["to", "the", "right", "side", "of"], SpatialRelation::RightOf),
    (&["to", "the", "left", "of"], SpatialRelation::LeftOf),
    (&["to", "the", "right", "of"], SpatialRelation::RightOf),
];

/// Prepositions and view words the grammar does not model.
const UNSUPPORTED: &[&str] = &[
    "between", "among", "amongst", "inside", "in", "on", "into", "onto", "within", "around",
    "against", "beyond", "across", "opposite", "from", "at", "to", "of", "toward", "towards",
    "my", "your", "what", "whats", "im", "where", "far", "by",
];

const TIME_PHRASES: &[(&[&str], TimeWindow)] = &[
    (&["a", "couple", "of", "minutes", "ago"], TimeWindow::MinutesAgo),
    (&["a", "couple", "minutes", "ago"], TimeWindow::MinutesAgo),
    (&["a", "few", "minutes", "ago"], TimeWindow::MinutesAgo),
    (&["few", "minutes", "ago"], TimeWindow::MinutesAgo),
    (&["a", "minute", "ago"], TimeWindow::MinutesAgo),
    (&["a", "moment", "ago"], TimeWindow::MinutesAgo),
    (&["minutes", "ago"], TimeWindow::MinutesAgo),
    (&["just", "now"], TimeWindow::MinutesAgo),
    (&["recently"], TimeWindow::MinutesAgo),
    (&["in", "the", "previous", "session"], TimeWindow::PreviousSession),
    (&["in", "the", "last", "session"], TimeWindow::PreviousSession),
    (&["during", "the", "last", "session"], TimeWindow::PreviousSession),
    (&["last", "session"], TimeWindow::PreviousSession),
    (&["last", "time"], TimeWindow::PreviousSession),
    (&["earlier", "today"], TimeWindow::ThisSessionEarlier),
    (&["earlier", "on"], TimeWindow::ThisSessionEarlier),
    (&["earlier"], TimeWindow::ThisSessionEarlier),
    (&["previously"], TimeWindow::ThisSessionEarlier),
    (&["before"], TimeWindow::ThisSessionEarlier),
    (&["yesterday"], TimeWindow::Yesterday),
];

const MEMORY_PARTICLES: &[&str] = &[
    "about", "at", "with", "up", "on", "over", "to", "around", "out", "off", "down", "in",
];

const INTENT_MARKERS: &[&[&str]] = &[
    &["so", "that"],
    &["in", "order", "to"],
    &["so", "we", "can"],
    &["so", "i", "can"],
    &["so", "you", "can"],
    &["because"],
];

const COMMA: &str = ",";

fn is_attribute_word(w: &str) -> bool {
    ATTRIBUTE_WORDS.contains(&w)
}

/// Lowercases, drops fillers and turns clause punctuation into comma tokens.
fn tokenize(text: &str) -> Vec<String> {
    let mut tokens: Vec<String> = Vec::new();
    let mut cur = String::new();
    let flush = |cur: &mut String, tokens: &mut Vec<String>| {
        if !cur.is_empty() {
            tokens.push(std::mem::take(cur));
        }
    };
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if ch == '\'' || ch == '\u{2019}' {
            // "what's" -> "whats"
        } else if matches!(ch, ',' | ';' | ':' | '.' | '!' | '?' | '\u{2026}') {
            flush(&mut cur, &mut tokens);
            tokens.push(COMMA.to_string());
        } else {
            flush(&mut cur, &mut tokens);
        }
    }
    flush(&mut cur, &mut tokens);
    let mut out: Vec<String> = Vec::with_capacity(tokens.len());
    for t in tokens {
        if FILLERS.contains(&t.as_str()) {
            continue;
        }
        if t == COMMA && (out.is_empty() || out.last().map(String::as_str) == Some(COMMA)) {
            continue;
        }
        out.push(t);
    }
    while out.last().map(String::as_str) == Some(COMMA) {
        out.pop();
    }
    out
}

fn starts_with(tokens: &[String], pos: usize, phrase: &[&str]) -> bool {
    tokens.len() >= pos + phrase.len()
        && phrase.iter().enumerate().all(|(i, p)| tokens[pos + i] == *p)
}

fn match_table<T: Copy>(tokens: &[String], pos: usize, table: &[(&[&str], T)]) -> Option<(T, usize)> {
    table
        .iter()
        .filter(|(phrase, _)| starts_with(tokens, pos, phrase))
        .max_by_key(|(phrase, _)| phrase.len())
        .map(|(phrase, v)| (*v, phrase.len()))
}

fn verb_at(tokens: &[String], pos: usize) -> Option<(String, usize)> {
    let word = tokens.get(pos)?;
    let (verb, particles) = VERBS.iter().find(|(v, _)| v == word)?;
    let next = tokens.get(pos + 1).map(String::as_str);
    match particles.iter().find(|p| Some(**p) == next) {
        Some(p) => {
            // "show me" keeps just the verb
            if *p == "me" {
                Some((verb.to_string(), 2))
            } else {
                Some((format!("{verb} {p}"), 2))
            }
        }
        _ => Some((verb.to_string(), 1)),
    }
}

/// Parses a transcript with the built-in grammar.
pub fn parse(transcript: &str) -> Result<ReferenceQuery, ParseError> {
    let err = |kind, detail: String| ParseError {
        kind,
        transcript: transcript.to_string(),
        detail,
    };
    let tokens = tokenize(transcript);
    if tokens.is_empty() {
        return Err(err(ParseErrorKind::Empty, "nothing to parse".into()));
    }
    let step_tokens = split_steps(&tokens).map_err(|d| err(ParseErrorKind::UnsupportedRelation, d))?;
    if step_tokens.is_empty() {
        return Err(err(ParseErrorKind::NoNounPhrase, "no instruction found".into()));
    }

    let mut parsed: Vec<ParsedStep> = Vec::with_capacity(step_tokens.len());
    for toks in &step_tokens {
        let mut step = StepParser::new(toks)
            .parse_step()
            .map_err(|(kind, detail)| err(kind, detail))?;
        if !step.target.is_identifying() && step.clauses.is_empty() {
            // "then move it": carry the previous step's referent forward.
            match parsed.last() {
                Some(prev) => {
                    step.target = prev.target.clone();
                    step.clauses = prev.clauses.clone();
                }
                None => {
                    return Err(err(
                        ParseErrorKind::NoNounPhrase,
                        "no recognizable noun phrase".into(),
                    ))
                }
            }
        }
        parsed.push(step);
    }

    let steps = if parsed.len() > 1 {
        parsed
            .iter()
            .map(|p| {
                let mut target = p.target.clone();
                target.relations = p.clauses.clone();
                Step {
                    action: p.action.clone(),
                    target,
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    let first = parsed.swap_remove(0);
    let query = ReferenceQuery {
        raw_transcript: transcript.to_string(),
        action: first.action,
        intent: first.intent,
        target: first.target,
        relation_clauses: first.clauses,
        destination: first.destination,
        steps,
    };
    query
        .validate()
        .map_err(|d| err(ParseErrorKind::NoNounPhrase, d))?;
    Ok(query)
}

/// Splits on "then", "after that", "and <verb>", ordinal step markers.
fn split_steps(tokens: &[String]) -> Result<Vec<Vec<String>>, String> {
    let mut steps: Vec<Vec<String>> = Vec::new();
    let mut cur: Vec<String> = Vec::new();
    let mut i = 0;
    let cut = |cur: &mut Vec<String>, steps: &mut Vec<Vec<String>>| {
        while matches!(cur.last().map(String::as_str), Some(COMMA) | Some("and")) {
            cur.pop();
        }
        if cur.iter().any(|t| t != COMMA) {
            steps.push(std::mem::take(cur));
        } else {
            cur.clear();
        }
    };
    while i < tokens.len() {
        let t = tokens[i].as_str();
        let next = tokens.get(i + 1).map(String::as_str);
        if t == "last" && matches!(next, Some("time") | Some("session")) {
            cur.push(tokens[i].clone());
            i += 1;
            continue;
        }
        if ORDINALS.contains(&t) {
            let prev = if i == 0 { None } else { Some(tokens[i - 1].as_str()) };
            if matches!(next, Some("to") | Some("from")) {
                return Err(format!("ordinal spatial reference `{t} {}`", next.unwrap()));
            }
            if matches!(prev, Some(p) if DETERMINERS.contains(&p)) {
                return Err(format!("ordinal reference `{t}`"));
            }
            cut(&mut cur, &mut steps);
            i += 1;
            continue;
        }
        match t {
            "then" | "afterwards" | "finally" | "lastly" => {
                cut(&mut cur, &mut steps);
                i += 1;
            }
            "after" if next == Some("that") => {
                cut(&mut cur, &mut steps);
                i += 2;
            }
            "next" if next != Some("to") => {
                cut(&mut cur, &mut steps);
                i += 1;
            }
            "and" if verb_at(tokens, i + 1).is_some() && !cur.is_empty() => {
                cut(&mut cur, &mut steps);
                i += 1;
            }
            _ => {
                cur.push(tokens[i].clone());
                i += 1;
            }
        }
    }
    cut(&mut cur, &mut steps);
    Ok(steps)
}

#[derive(Debug)]
struct ParsedStep {
    action: String,
    intent: Option<String>,
    target: EntitySpec,
    clauses: Vec<RelationClause>,
    destination: Option<RelationClause>,
}

type StepResult<T> = Result<T, (ParseErrorKind, String)>;

struct StepParser<'a> {
    tokens: &'a [String],
    pos: usize,
}

impl<'a> StepParser<'a> {
    fn new(tokens: &'a [String]) -> Self {
        StepParser { tokens, pos: 0 }
    }

    fn peek(&self) -> Option<&str> {
        self.tokens.get(self.pos).map(String::as_str)
    }

    fn peek_at(&self, pos: usize) -> Option<&str> {
        self.tokens.get(pos).map(String::as_str)
    }

    fn skip_commas(&mut self) {
        while self.peek() == Some(COMMA) {
            self.pos += 1;
        }
    }

    fn parse_step(self) -> StepResult<ParsedStep> {
        let mut tokens: Vec<String> = self.tokens.to_vec();

        // Intent runs to the end of the step.
        let mut intent = None;
        if let Some(at) = (0..tokens.len()).find(|&i| INTENT_MARKERS.iter().any(|m| starts_with(&tokens, i, m))) {
            let marker = INTENT_MARKERS
                .iter()
                .find(|m| starts_with(&tokens, at, m))
                .expect("found above");
            let rest: Vec<&str> = tokens[at + marker.len()..]
                .iter()
                .map(String::as_str)
                .filter(|t| *t != COMMA)
                .collect();
            if !rest.is_empty() {
                intent = Some(rest.join(" "));
            }
            tokens.truncate(at);
        }

        let mut start = 0;
        while start < tokens.len() && tokens[start] == COMMA {
            start += 1;
        }
        for polite in LEADING_POLITE {
            if starts_with(&tokens, start, polite) {
                start += polite.len();
                break;
            }
        }
        let (action, verb_len) = verb_at(&tokens, start).unwrap_or_else(|| (DEFAULT_ACTION.to_string(), 0));
        start += verb_len;
        let base_verb = action.split(' ').next().unwrap_or_default();

        let mut destination_at = None;
        if MOVE_VERBS.contains(&base_verb) {
            destination_at = (start..tokens.len())
                .rev()
                .find_map(|i| match_table(&tokens, i, DESTINATION_PHRASES).map(|(rel, len)| (i, rel, len)));
        }

        let body_end = destination_at.map(|(i, _, _)| i).unwrap_or(tokens.len());
        let body = &tokens[start..body_end];
        let mut bp = StepParser::new(body);
        let mut target = bp.parse_entity()?;
        let mut clauses = std::mem::take(&mut target.relations);
        loop {
            let save = bp.pos;
            if matches!(bp.peek(), Some("and") | Some(COMMA)) {
                bp.pos += 1;
                bp.skip_commas();
                if bp.peek() == Some("and") {
                    bp.pos += 1;
                }
            }
            if let Some((rel, len)) = match_table(bp.tokens, bp.pos, RELATION_PHRASES) {
                bp.pos += len;
                let anchor = bp.parse_entity()?;
                clauses.push(RelationClause::new(rel, anchor));
            } else {
                bp.pos = save;
                break;
            }
        }
        bp.skip_commas();
        if let Some(tok) = bp.peek() {
            let kind = if UNSUPPORTED.contains(&tok) {
                ParseErrorKind::UnsupportedRelation
            } else {
                ParseErrorKind::UnexpectedToken
            };
            return Err((kind, format!("unexpected `{tok}`")));
        }

        let destination = match destination_at {
            Some((at, rel, len)) => {
                let rest = &tokens[at + len..];
                let mut sub = StepParser::new(rest);
                let anchor = sub.parse_entity()?;
                sub.skip_commas();
                if let Some(tok) = sub.peek() {
                    let kind = if UNSUPPORTED.contains(&tok) {
                        ParseErrorKind::UnsupportedRelation
                    } else {
                        ParseErrorKind::UnexpectedToken
                    };
                    return Err((kind, format!("unexpected `{tok}` in destination")));
                }
                if !anchor.is_identifying() {
                    return Err((ParseErrorKind::NoNounPhrase, "destination has no anchor".into()));
                }
                Some(RelationClause::new(rel, anchor))
            }
            None => None,
        };

        Ok(ParsedStep {
            action,
            intent,
            target,
            clauses,
            destination,
        })
    }

    /// np [memory] [relation entity]
    fn parse_entity(&mut self) -> StepResult<EntitySpec> {
        let mut spec = self.parse_np()?;
        if self.at_memory_clause() {
            spec.memory_cue = Some(self.parse_memory()?);
        }
        if let Some((rel, len)) = match_table(self.tokens, self.pos, RELATION_PHRASES) {
            self.pos += len;
            let anchor = self.parse_entity()?;
            if !anchor.is_identifying() {
                return Err((ParseErrorKind::NoNounPhrase, format!("{rel} clause has no anchor")));
            }
            spec.relations.push(RelationClause::new(rel, anchor));
        }
        Ok(spec)
    }

    fn at_memory_clause(&self) -> bool {
        match self.peek() {
            Some(t) if SUBJECTS.contains(&t) => true,
            Some("that") | Some("which") => {
                matches!(self.peek_at(self.pos + 1), Some(t) if SUBJECTS.contains(&t))
            }
            _ => false,
        }
    }

    fn at_boundary(&self, pos: usize) -> bool {
        let Some(tok) = self.peek_at(pos) else {
            return true;
        };
        if tok == "and" || match_table(self.tokens, pos, RELATION_PHRASES).is_some() {
            return true;
        }
        if SUBJECTS.contains(&tok) {
            return true;
        }
        if (tok == "that" || tok == "which")
            && matches!(self.peek_at(pos + 1), Some(t) if SUBJECTS.contains(&t))
        {
            return true;
        }
        false
    }

    fn parse_np(&mut self) -> StepResult<EntitySpec> {
        self.skip_commas();
        while let Some(t) = self.peek() {
            if DETERMINERS.contains(&t) && !self.at_memory_clause() {
                self.pos += 1;
            } else {
                break;
            }
        }
        let mut words: Vec<String> = Vec::new();
        while let Some(tok) = self.peek() {
            if tok == COMMA {
                if self.at_boundary(self.pos + 1) {
                    break;
                }
                self.pos += 1;
                continue;
            }
            if self.at_boundary(self.pos) {
                break;
            }
            if ORDINALS.contains(&tok) {
                return Err((ParseErrorKind::UnsupportedRelation, format!("ordinal reference `{tok}`")));
            }
            if UNSUPPORTED.contains(&tok) {
                return Err((
                    ParseErrorKind::UnsupportedRelation,
                    format!("unsupported spatial expression at `{tok}`"),
                ));
            }
            words.push(tok.to_string());
            self.pos += 1;
        }
        if words.is_empty() {
            return Err((ParseErrorKind::NoNounPhrase, "no recognizable noun phrase".into()));
        }
        Ok(noun_phrase(words))
    }

    fn parse_memory(&mut self) -> StepResult<MemoryCue> {
        if matches!(self.peek(), Some("that") | Some("which")) {
            self.pos += 1;
        }
        self.pos += 1; // subject
        let mut window = None;
        if self.peek() == Some("just") {
            window = Some(TimeWindow::MinutesAgo);
            self.pos += 1;
        }
        let verb = match self.peek() {
            Some(v) if v != COMMA && match_table(self.tokens, self.pos, TIME_PHRASES).is_none() => {
                let v = v.to_string();
                self.pos += 1;
                Some(v)
            }
            _ => None,
        };
        while let Some(t) = self.peek() {
            if MEMORY_PARTICLES.contains(&t)
                && match_table(self.tokens, self.pos, TIME_PHRASES).is_none()
                && match_table(self.tokens, self.pos, RELATION_PHRASES).is_none()
            {
                self.pos += 1;
            } else {
                break;
            }
        }
        if let Some((w, len)) = match_table(self.tokens, self.pos, TIME_PHRASES) {
            window = Some(w);
            self.pos += len;
        }
        Ok(MemoryCue {
            verb,
            window: window.unwrap_or(TimeWindow::ThisSessionEarlier),
        })
    }
}

/// Last word is the noun; generic nouns leave the label empty.
fn noun_phrase(mut words: Vec<String>) -> EntitySpec {
    // "cube with stripes": the noun precedes "with".
    let mut trailing = Vec::new();
    if let Some(w) = words.iter().position(|w| w == "with") {
        if w > 0 {
            trailing = words.split_off(w + 1);
            words.pop();
        }
    }
    let noun = words.pop().expect("non-empty noun phrase");
    words.extend(trailing);
    let label = if is_generic_noun(&noun) { None } else { Some(noun) };

    let mut descriptors = Vec::new();
    let mut run: Vec<String> = Vec::new();
    for w in words {
        if is_generic_noun(&w) || w == "with" {
            continue;
        }
        if is_attribute_word(&w) {
            if !run.is_empty() {
                descriptors.push(run.join(" "));
                run.clear();
            }
            descriptors.push(w);
        } else {
            run.push(w);
        }
    }
    if !run.is_empty() {
        descriptors.push(run.join(" "));
    }
    EntitySpec {
        label,
        descriptors,
        memory_cue: None,
        relations: Vec::new(),
    }
}
