//! Contrastive question parsing.
//!
//! The grammar path recognizes a small family of "why" questions; the LLM
//! path asks a model for structured lines and validates them the same way.
//! Both produce a [`ParsedQuery`], which the user confirms (through its
//! [`Restatement`]) before it is compiled into a [`Foil`].

use std::collections::hash_map::RandomState;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::hash::BuildHasher;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{normalize_code, Catalog};
use crate::encoder::LabeledKb;
use crate::explainer::{ExplainError, Foil, FoilLiteral};
use crate::llm_gateway::Gateway;
use crate::scheduler::Schedule;

const PARSER_PROMPT: &str = include_str!("../prompts/query_parser.txt");

/// Candidates closer than this to the best fuzzy score make a mention ambiguous.
const AMBIGUITY_MARGIN: f64 = 0.1;

pub const SUPPORTED_FORMS: &str = "Why C? / Why not C? / Why [not] C in semester S? / \
Why [not] C1 instead of C2 [in semester S]? / several of these joined by \"and\"";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    /// The alternative places the course (in the target semester).
    Positive,
    /// The alternative removes the course (from the target semester).
    Negative,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSemester {
    /// Zero-based semester index.
    Index(usize),
    /// Wherever the named course currently sits.
    CurrentOf(String),
    Any,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QueryItem {
    pub course: String,
    pub semester: TargetSemester,
    pub condition: Condition,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseSource {
    Grammar,
    Llm,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedQuery {
    pub items: Vec<QueryItem>,
    pub source: ParseSource,
    pub complexity: usize,
    /// Set when the LLM path was tried and the grammar answered instead.
    #[serde(default)]
    pub llm_fallback: bool,
}

impl ParsedQuery {
    fn new(items: Vec<QueryItem>, source: ParseSource) -> Self {
        let complexity = items.iter().map(|i| i.course.as_str()).collect::<BTreeSet<_>>().len();
        ParsedQuery {
            items,
            source,
            complexity,
            llm_fallback: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseError {
    #[error("could not read the question ({reason}). Supported forms: {SUPPORTED_FORMS}")]
    NoMatch { reason: String },
    #[error("\"{mention}\" could mean {}", candidates.join(", "))]
    AmbiguousCourse {
        mention: String,
        candidates: Vec<String>,
    },
    #[error("no course matches \"{mention}\"")]
    UnknownCourse { mention: String },
}

fn no_match(reason: impl Into<String>) -> ParseError {
    ParseError::NoMatch {
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FoilError {
    #[error("{0} is not in the current schedule, so it has no current semester")]
    CourseNotInSchedule(String),
    #[error(transparent)]
    Compile(#[from] ExplainError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Restatement {
    pub text: String,
    pub token: String,
}

fn lead_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^(?:why|how\s+come)\b\s*(.*)$").unwrap())
}

fn and_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\s+and\s+(?:why\s+)?").unwrap())
}

fn instead_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(?:instead\s+of|rather\s+than)\b").unwrap())
}

const ORDINALS: [&str; 12] = [
    "first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth", "tenth",
    "eleventh", "twelfth",
];

fn semester_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(&format!(
            r"(?i)(?:\b(?:in|during|for)\s+)?(?:\b(?:the|my)\s+)?\b(?:semester\s+(\d+)|(\d+)(?:st|nd|rd|th)\s+semester|({})\s+semester)\b",
            ORDINALS.join("|")
        ))
        .unwrap()
    })
}

const LEAD_FILLER: [&str; 25] = [
    "not", "is", "isn't", "isnt", "was", "wasn't", "are", "aren't", "do", "does", "did", "don't",
    "doesn't", "didn't", "i", "we", "have", "has", "take", "taking", "the", "course", "class",
    "my", "schedule",
];

const TRAIL_FILLER: [&str; 16] = [
    "scheduled", "placed", "taken", "there", "is", "isn't", "isnt", "not", "in", "my", "schedule",
    "plan", "the", "be", "being", "course",
];

fn strip_filler(mention: &str) -> String {
    let text = mention.replace([',', ';', '"'], " ");
    let mut tokens: Vec<&str> = text.split_whitespace().collect();
    let is = |set: &[&str], t: &str| set.contains(&t.to_lowercase().as_str());
    while tokens.first().is_some_and(|t| is(&LEAD_FILLER, t)) {
        tokens.remove(0);
    }
    while tokens.last().is_some_and(|t| is(&TRAIL_FILLER, t)) {
        tokens.pop();
    }
    tokens.join(" ")
}

/// Resolves a course mention: an exact code wins; otherwise the best fuzzy
/// match unless another candidate is within the ambiguity margin.
pub fn resolve_mention(catalog: &Catalog, mention: &str) -> Result<String, ParseError> {
    let exact = normalize_code(mention);
    if catalog.contains(&exact) {
        return Ok(exact);
    }
    let stripped = strip_filler(mention);
    if stripped.is_empty() {
        return Err(ParseError::UnknownCourse {
            mention: mention.trim().to_string(),
        });
    }
    let matches = catalog.resolve_course(&stripped);
    match matches.as_slice() {
        [] => Err(ParseError::UnknownCourse { mention: stripped }),
        [top, ..] if top.score >= 1.0 => Ok(top.code.clone()),
        [top, second, ..] if top.score - second.score < AMBIGUITY_MARGIN => {
            Err(ParseError::AmbiguousCourse {
                mention: stripped,
                candidates: matches
                    .iter()
                    .filter(|m| top.score - m.score < AMBIGUITY_MARGIN)
                    .map(|m| m.code.clone())
                    .collect(),
            })
        }
        [top, ..] => Ok(top.code.clone()),
    }
}

fn ordinal_value(word: &str) -> Option<usize> {
    let w = word.to_lowercase();
    ORDINALS.iter().position(|o| *o == w).map(|i| i + 1)
}

/// Removes every semester phrase from `segment`; returns the remaining text
/// and the one-based semester named, if any.
fn take_semester(segment: &str) -> Result<(String, Option<usize>), ParseError> {
    let mut found: Option<usize> = None;
    for caps in semester_re().captures_iter(segment) {
        let n = if let Some(d) = caps.get(1).or_else(|| caps.get(2)) {
            d.as_str()
                .parse::<usize>()
                .map_err(|_| no_match(format!("semester {:?} is not a number", d.as_str())))?
        } else {
            ordinal_value(caps.get(3).map_or("", |m| m.as_str())).unwrap_or(0)
        };
        match found {
            Some(prev) if prev != n => {
                return Err(no_match(format!("semesters {prev} and {n} both named for one course pair")))
            }
            _ => found = Some(n),
        }
    }
    let rest = semester_re().replace_all(segment, " ");
    Ok((rest.split_whitespace().collect::<Vec<_>>().join(" "), found))
}

fn check_semester(one_based: usize, schedule: &Schedule) -> Result<usize, ParseError> {
    let n = schedule.num_semesters();
    if one_based == 0 || one_based > n {
        return Err(no_match(format!("semester {one_based} is outside 1-{n}")));
    }
    Ok(one_based - 1)
}

fn currently_holds(course: &str, target: &TargetSemester, schedule: &Schedule) -> bool {
    let at = schedule.semester_of(course);
    match target {
        TargetSemester::Index(s) => at == Some(*s),
        TargetSemester::CurrentOf(c) => at.is_some() && at == schedule.semester_of(c),
        TargetSemester::Any => at.is_some(),
    }
}

fn parse_segment(
    segment: &str,
    schedule: &Schedule,
    catalog: &Catalog,
) -> Result<Vec<QueryItem>, ParseError> {
    let (rest, semester) = take_semester(segment)?;
    let semester = semester.map(|s| check_semester(s, schedule)).transpose()?;
    let parts: Vec<&str> = instead_re().splitn(&rest, 2).collect();
    if parts.len() == 2 {
        let wanted = resolve_mention(catalog, parts[0])?;
        let displaced = resolve_mention(catalog, parts[1])?;
        if wanted == displaced {
            return Err(no_match(format!("{wanted} is compared with itself")));
        }
        let target = semester
            .map(TargetSemester::Index)
            .unwrap_or_else(|| TargetSemester::CurrentOf(displaced.clone()));
        return Ok(vec![
            QueryItem {
                course: wanted,
                semester: target.clone(),
                condition: Condition::Positive,
            },
            QueryItem {
                course: displaced,
                semester: target,
                condition: Condition::Negative,
            },
        ]);
    }
    if rest.trim().is_empty() {
        return Err(no_match("no course named"));
    }
    let course = resolve_mention(catalog, &rest)?;
    let target = semester.map(TargetSemester::Index).unwrap_or(TargetSemester::Any);
    // A question is about the opposite of what the schedule shows.
    let condition = if currently_holds(&course, &target, schedule) {
        Condition::Negative
    } else {
        Condition::Positive
    };
    Ok(vec![QueryItem {
        course,
        semester: target,
        condition,
    }])
}

fn clean(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .trim_end_matches(['?', '.', '!'])
        .trim()
        .to_string()
}

/// Grammar parser.
pub fn parse(text: &str, schedule: &Schedule, catalog: &Catalog) -> Result<ParsedQuery, ParseError> {
    let text = clean(text);
    let body = lead_re()
        .captures(&text)
        .and_then(|c| c.get(1))
        .map(|m| m.as_str().trim().to_string())
        .ok_or_else(|| no_match("questions start with \"why\""))?;
    if body.is_empty() {
        return Err(no_match("no course named"));
    }
    let mut items = Vec::new();
    for segment in and_re().split(&body) {
        items.extend(parse_segment(segment, schedule, catalog)?);
    }
    Ok(ParsedQuery::new(items, ParseSource::Grammar))
}

fn render_catalog(catalog: &Catalog) -> String {
    let mut out = String::new();
    for c in catalog.courses() {
        let _ = writeln!(out, "{}: {}", c.code, c.title);
    }
    out
}

/// The exact prompt the LLM path sends for `text`.
pub fn parser_prompt(text: &str, schedule: &Schedule, catalog: &Catalog) -> String {
    PARSER_PROMPT
        .replace("{{NUM_SEMESTERS}}", &schedule.num_semesters().to_string())
        .replace("{{CATALOG}}", render_catalog(catalog).trim_end())
        .replace("{{SCHEDULE}}", schedule.to_string().trim_end())
        .replace("{{QUESTION}}", text.trim())
}

/// Reads `COURSE:` / `SEMESTER:` / `CONDITION:` blocks, validating each
/// against the catalog and schedule exactly like the grammar path.
pub fn parse_structured(
    reply: &str,
    schedule: &Schedule,
    catalog: &Catalog,
) -> Result<Vec<QueryItem>, ParseError> {
    #[derive(Default)]
    struct Block {
        course: Option<String>,
        semester: Option<String>,
        condition: Option<String>,
    }
    let mut blocks: Vec<Block> = Vec::new();
    for line in reply.lines().map(str::trim) {
        if line.is_empty() || line.starts_with("```") {
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| no_match(format!("unexpected line {line:?}")))?;
        let value = value.trim().to_string();
        match key.trim().to_ascii_uppercase().as_str() {
            "COURSE" => blocks.push(Block {
                course: Some(value),
                ..Block::default()
            }),
            "SEMESTER" => match blocks.last_mut() {
                Some(b) if b.semester.is_none() => b.semester = Some(value),
                _ => return Err(no_match("SEMESTER outside a course block")),
            },
            "CONDITION" => match blocks.last_mut() {
                Some(b) if b.condition.is_none() => b.condition = Some(value),
                _ => return Err(no_match("CONDITION outside a course block")),
            },
            other => return Err(no_match(format!("unexpected key {other:?}"))),
        }
    }
    if blocks.is_empty() {
        return Err(no_match("no course blocks"));
    }
    blocks
        .into_iter()
        .map(|b| {
            let (Some(course), Some(semester), Some(condition)) = (b.course, b.semester, b.condition)
            else {
                return Err(no_match("incomplete course block"));
            };
            let course = resolve_mention(catalog, &course)?;
            let semester = match semester.to_ascii_lowercase().as_str() {
                "any" => TargetSemester::Any,
                "current" => TargetSemester::CurrentOf(course.clone()),
                n => TargetSemester::Index(check_semester(
                    n.parse().map_err(|_| no_match(format!("semester {n:?}")))?,
                    schedule,
                )?),
            };
            let condition = match condition.to_ascii_lowercase().as_str() {
                "positive" => Condition::Positive,
                "negative" => Condition::Negative,
                other => return Err(no_match(format!("condition {other:?}"))),
            };
            Ok(QueryItem {
                course,
                semester,
                condition,
            })
        })
        .collect()
}

/// LLM parser with grammar fallback. With the gateway disabled this is
/// exactly [`parse`].
pub fn parse_llm(
    text: &str,
    schedule: &Schedule,
    catalog: &Catalog,
    gateway: &Gateway,
) -> Result<ParsedQuery, ParseError> {
    if !gateway.is_enabled() {
        return parse(text, schedule, catalog);
    }
    let reply = gateway.complete(&parser_prompt(text, schedule, catalog));
    match reply.map(|r| parse_structured(&r, schedule, catalog)) {
        Ok(Ok(items)) => Ok(ParsedQuery::new(items, ParseSource::Llm)),
        _ => {
            let mut q = parse(text, schedule, catalog)?;
            q.llm_fallback = true;
            Ok(q)
        }
    }
}

fn resolve_target(target: &TargetSemester, schedule: &Schedule) -> Result<Option<usize>, FoilError> {
    match target {
        TargetSemester::Index(s) => Ok(Some(*s)),
        TargetSemester::Any => Ok(None),
        TargetSemester::CurrentOf(c) => schedule
            .semester_of(c)
            .map(Some)
            .ok_or_else(|| FoilError::CourseNotInSchedule(c.clone())),
    }
}

/// Compiles a confirmed query against the KB.
pub fn to_foil(query: &ParsedQuery, schedule: &Schedule, kb: &LabeledKb) -> Result<Foil, FoilError> {
    let literals = query
        .items
        .iter()
        .map(|item| {
            Ok(FoilLiteral {
                course: item.course.clone(),
                semester: resolve_target(&item.semester, schedule)?,
                positive: item.condition == Condition::Positive,
            })
        })
        .collect::<Result<Vec<_>, FoilError>>()?;
    Ok(Foil::compile(literals, kb)?)
}

fn location(target: &TargetSemester, schedule: &Schedule) -> String {
    match target {
        TargetSemester::Index(s) => format!(" in semester {}", s + 1),
        TargetSemester::Any => String::new(),
        TargetSemester::CurrentOf(c) => match schedule.semester_of(c) {
            Some(s) => format!(" in semester {}", s + 1),
            None => format!(" in the semester where {c} is scheduled"),
        },
    }
}

fn next_token() -> String {
    static NONCE: OnceLock<u64> = OnceLock::new();
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let nonce = *NONCE.get_or_init(|| RandomState::new().hash_one(0x7c3f_u64));
    format!("{nonce:016x}-{}", COUNTER.fetch_add(1, Ordering::Relaxed))
}

/// One-sentence restatement for the user to confirm, with a fresh token.
pub fn restate(query: &ParsedQuery, schedule: &Schedule) -> Restatement {
    let items = &query.items;
    let mut parts = Vec::new();
    let mut i = 0;
    while i < items.len() {
        let item = &items[i];
        let loc = location(&item.semester, schedule);
        if let Some(next) = items.get(i + 1) {
            if item.condition == Condition::Positive
                && next.condition == Condition::Negative
                && item.semester == next.semester
                && next.semester != TargetSemester::Any
            {
                parts.push(format!(
                    "why {} is NOT scheduled{loc} while {} IS",
                    item.course, next.course
                ));
                i += 2;
                continue;
            }
        }
        parts.push(match item.condition {
            Condition::Positive => format!("why {} is NOT scheduled{loc}", item.course),
            Condition::Negative => format!("why {} is scheduled{loc}", item.course),
        });
        i += 1;
    }
    Restatement {
        text: format!("You are asking {}.", parts.join(" and ")),
        token: next_token(),
    }
}
