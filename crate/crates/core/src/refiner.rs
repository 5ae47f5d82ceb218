//! English rendering of minimal explanations.
//!
//! The template path turns each parent constraint of ε into one sentence,
//! merging prerequisite chains. The LLM path may rephrase the same content;
//! its output is checked for every course code and every constraint's key
//! phrase and replaced by the template text when a check fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::catalog::{normalize_code, Catalog, Category};
use crate::encoder::ConstraintCategory;
use crate::explainer::Explanation;
use crate::llm_gateway::Gateway;
use crate::scheduler::Schedule;

const REFINER_PROMPT: &str = include_str!("../prompts/refiner.txt");

pub const WORDS_PER_CONSTRAINT: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefineMode {
    Template,
    Llm,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinedExplanation {
    pub text: String,
    /// Constraint ids the text covers.
    pub sources: Vec<String>,
    pub mode: RefineMode,
    /// The LLM was asked but its answer was replaced by the template.
    #[serde(default)]
    pub llm_fallback: bool,
}

/// Whitespace-delimited word count.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Group {
    Requirement { course: String },
    Prerequisite { course: String, prereq: String },
    Placement { course: String },
    Credit { id: String, label: String },
}

fn parse_group(id: &str, label: &str, category: ConstraintCategory) -> Group {
    let parts: Vec<&str> = id.split('/').collect();
    match (category, parts.as_slice()) {
        (ConstraintCategory::Prerequisite, ["prereq", c, p, ..]) => Group::Prerequisite {
            course: c.to_string(),
            prereq: p.to_string(),
        },
        (ConstraintCategory::Requirement, ["required", c]) => Group::Requirement {
            course: c.to_string(),
        },
        (ConstraintCategory::Placement, ["placement", c]) => Group::Placement {
            course: c.to_string(),
        },
        _ => Group::Credit {
            id: id.to_string(),
            label: label.to_string(),
        },
    }
}

/// Splits prerequisite edges into paths; each path becomes one sentence.
fn chains(edges: &BTreeSet<(String, String)>) -> Vec<Vec<String>> {
    let mut remaining: BTreeSet<(String, String)> = edges.clone();
    let mut out = Vec::new();
    while !remaining.is_empty() {
        let targets: BTreeSet<&String> = remaining.iter().map(|(_, p)| p).collect();
        let head = remaining
            .iter()
            .map(|(c, _)| c)
            .find(|c| !targets.contains(c))
            .unwrap_or(&remaining.iter().next().expect("non-empty").0)
            .clone();
        let mut path = vec![head];
        loop {
            let last = path.last().expect("non-empty").clone();
            let Some(edge) = remaining.iter().find(|(c, _)| *c == last).cloned() else {
                break;
            };
            remaining.remove(&edge);
            path.push(edge.1);
        }
        out.push(path);
    }
    out
}

fn chain_sentence(path: &[String]) -> String {
    if path.len() == 2 {
        return format!(
            "{} cannot be scheduled because its prerequisite {} has not been completed.",
            path[0], path[1]
        );
    }
    let mut s = format!(
        "{} cannot be scheduled because its prerequisite chain has not been completed: {} requires {}",
        path[0], path[0], path[1]
    );
    for p in &path[2..] {
        let _ = write!(s, ", which requires {p}");
    }
    s.push('.');
    s
}

fn sentence_case(label: &str) -> String {
    let label = label.trim();
    if label.ends_with('.') {
        label.to_string()
    } else {
        format!("{label}.")
    }
}

/// One sentence per parent constraint (prerequisite chains merged), in
/// category then id order.
pub fn refine_template(explanation: &Explanation) -> RefinedExplanation {
    let mut groups: BTreeSet<Group> = BTreeSet::new();
    for ((id, label), cat) in explanation
        .constraint_ids
        .iter()
        .zip(&explanation.labels)
        .zip(&explanation.categories)
    {
        groups.insert(parse_group(id, label, *cat));
    }
    let mut sentences = Vec::new();
    let mut edges = BTreeSet::new();
    for g in &groups {
        match g {
            Group::Requirement { course } => {
                sentences.push(format!("{course} is a required core course."))
            }
            Group::Prerequisite { course, prereq } => {
                edges.insert((course.clone(), prereq.clone()));
            }
            _ => {}
        }
    }
    sentences.extend(chains(&edges).iter().map(|p| chain_sentence(p)));
    for g in &groups {
        match g {
            Group::Placement { course } => {
                sentences.push(format!("{course} can be scheduled in only one semester."))
            }
            Group::Credit { label, .. } => sentences.push(sentence_case(label)),
            _ => {}
        }
    }
    RefinedExplanation {
        text: sentences.join(" "),
        sources: explanation.constraint_ids.clone(),
        mode: RefineMode::Template,
        llm_fallback: false,
    }
}

/// Course codes of the catalog that occur in `text`.
pub fn codes_in(text: &str, catalog: &Catalog) -> BTreeSet<String> {
    let norm = normalize_code(text);
    catalog
        .courses()
        .filter(|c| contains_code(&norm, &c.code))
        .map(|c| c.code.clone())
        .collect()
}

fn contains_code(normalized_text: &str, code: &str) -> bool {
    normalized_text.match_indices(code).any(|(i, _)| {
        let before = normalized_text[..i].chars().next_back();
        let after = normalized_text[i + code.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}

/// The phrase a rendering of constraint `id` must contain.
pub fn key_phrase(id: &str) -> String {
    let parts: Vec<&str> = id.split('/').collect();
    match parts.as_slice() {
        ["prereq", ..] => "prerequisite".into(),
        ["required", ..] => "required".into(),
        ["placement", ..] => "semester".into(),
        ["credits", "sem", s] => match s.parse::<usize>() {
            Ok(i) => format!("semester {}", i + 1),
            Err(_) => "semester".into(),
        },
        ["credits", "cat", key] => Category::ALL
            .iter()
            .find(|c| c.key() == *key)
            .map_or_else(|| (*key).to_string(), |c| c.display_name().to_string()),
        ["credits", "total"] => "total".into(),
        _ => id.to_string(),
    }
}

/// Checks that `text` keeps every course code of ε's labels and a key
/// phrase for every constraint. Returns the first problem found.
pub fn validate(text: &str, explanation: &Explanation, catalog: &Catalog) -> Result<(), String> {
    let norm = normalize_code(text);
    for label in &explanation.labels {
        for code in codes_in(label, catalog) {
            if !contains_code(&norm, &code) {
                return Err(format!("course {code} is missing"));
            }
        }
    }
    let lower = text.to_lowercase();
    for id in &explanation.constraint_ids {
        let phrase = key_phrase(id).to_lowercase();
        if !lower.contains(&phrase) {
            return Err(format!("nothing mentions {phrase:?} for {id}"));
        }
    }
    Ok(())
}

/// The exact prompt the LLM path sends.
pub fn refiner_prompt(explanation: &Explanation, schedule: &Schedule, catalog: &Catalog) -> String {
    let mut labels = String::new();
    for l in &explanation.labels {
        let _ = writeln!(labels, "- {}", sentence_case(l));
    }
    let mut mentioned = BTreeMap::new();
    for l in &explanation.labels {
        for code in codes_in(l, catalog) {
            if let Some(c) = catalog.course(&code) {
                mentioned.insert(code, c.title.clone());
            }
        }
    }
    let mut courses = String::new();
    for (code, title) in &mentioned {
        let _ = writeln!(courses, "{code}: {title}");
    }
    if courses.is_empty() {
        courses.push_str("(none)\n");
    }
    let max_words = WORDS_PER_CONSTRAINT * explanation.constraint_ids.len().max(1);
    REFINER_PROMPT
        .replace("{{MAX_WORDS}}", &max_words.to_string())
        .replace("{{LABELS}}", labels.trim_end())
        .replace("{{COURSES}}", courses.trim_end())
        .replace("{{SCHEDULE}}", schedule.to_string().trim_end())
}

/// LLM rendering, validated; falls back to [`refine_template`].
pub fn refine_llm(
    explanation: &Explanation,
    schedule: &Schedule,
    catalog: &Catalog,
    gateway: &Gateway,
) -> RefinedExplanation {
    let template = refine_template(explanation);
    if !gateway.is_enabled() {
        return template;
    }
    match gateway.complete(&refiner_prompt(explanation, schedule, catalog)) {
        Ok(reply) if validate(&reply, explanation, catalog).is_ok() => RefinedExplanation {
            text: reply.trim().to_string(),
            sources: explanation.constraint_ids.clone(),
            mode: RefineMode::Llm,
            llm_fallback: false,
        },
        _ => RefinedExplanation {
            llm_fallback: true,
            ..template
        },
    }
}
