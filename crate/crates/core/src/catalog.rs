//! Course catalog and degree requirements: loading, validation, lookup.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

const SAMPLE_CATALOG: &str = include_str!("../data/sample_catalog.json");

/// Fuzzy matches scoring below this are discarded.
pub const MATCH_THRESHOLD: f64 = 0.6;
const MAX_MATCHES: usize = 5;
const PARTIAL_CODE_SCORE: f64 = 0.85;
const TITLE_SCORE_CAP: f64 = 0.95;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Core,
    CSElective,
    ScienceElective,
    SocialHumanities,
    GenEd,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Core,
        Category::CSElective,
        Category::ScienceElective,
        Category::SocialHumanities,
        Category::GenEd,
    ];

    /// Plural noun phrase used in sentences ("CS electives").
    pub fn display_name(self) -> &'static str {
        match self {
            Category::Core => "core courses",
            Category::CSElective => "CS electives",
            Category::ScienceElective => "science electives",
            Category::SocialHumanities => "social science and humanities courses",
            Category::GenEd => "general education courses",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Category::Core => "Core",
            Category::CSElective => "CSElective",
            Category::ScienceElective => "ScienceElective",
            Category::SocialHumanities => "SocialHumanities",
            Category::GenEd => "GenEd",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Course {
    pub code: String,
    pub title: String,
    pub credits: u32,
    #[serde(default)]
    pub prerequisites: Vec<String>,
    pub category: Category,
}

fn default_semesters() -> usize {
    8
}
fn default_total() -> u32 {
    120
}
fn default_sem_min() -> u32 {
    9
}
fn default_sem_max() -> u32 {
    15
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequirementSet {
    #[serde(default = "default_semesters")]
    pub num_semesters: usize,
    #[serde(default = "default_total")]
    pub total_credit_min: u32,
    #[serde(default)]
    pub category_credit_min: BTreeMap<Category, u32>,
    #[serde(default = "default_sem_min")]
    pub semester_credit_min: u32,
    #[serde(default = "default_sem_max")]
    pub semester_credit_max: u32,
    #[serde(default)]
    pub required_courses: BTreeSet<String>,
}

impl Default for RequirementSet {
    fn default() -> Self {
        Self {
            num_semesters: default_semesters(),
            total_credit_min: default_total(),
            category_credit_min: BTreeMap::from([(Category::CSElective, 45)]),
            semester_credit_min: default_sem_min(),
            semester_credit_max: default_sem_max(),
            required_courses: BTreeSet::new(),
        }
    }
}

/// The scheduling universe. Immutable once validated.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Catalog {
    courses: BTreeMap<String, Course>,
    requirements: RequirementSet,
}

#[derive(Serialize, Deserialize)]
struct CatalogDocument {
    courses: Vec<Course>,
    requirements: RequirementSet,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("course code {0} appears more than once")]
    DuplicateCode(String),
    #[error("course {0} has zero credits")]
    BadCredits(String),
    #[error("course {0} lists itself as a prerequisite")]
    SelfPrerequisite(String),
    #[error("course {course} requires unknown course {prerequisite}")]
    UnknownPrerequisite { course: String, prerequisite: String },
    #[error("prerequisite cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("required course {0} is not in the catalog")]
    UnknownRequired(String),
    #[error("num_semesters must be positive")]
    NoSemesters,
    #[error("semester credit minimum {min} exceeds maximum {max}")]
    SemesterBounds { min: u32, max: u32 },
    #[error("total minimum {total} exceeds {semesters} semesters x {max} credits")]
    TotalExceedsCapacity { total: u32, semesters: usize, max: u32 },
    #[error("category {0} has a credit minimum but no courses")]
    EmptyCategory(Category),
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column} (field `{field}`): {message}")]
    Parse {
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("invalid catalog: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

/// Canonical course key: upper case, underscores as spaces, single spaces.
pub fn normalize_code(text: &str) -> String {
    text.replace('_', " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_uppercase()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CourseMatch {
    pub code: String,
    pub score: f64,
}

impl Catalog {
    /// Builds and validates a catalog from parts.
    pub fn new(courses: Vec<Course>, requirements: RequirementSet) -> Result<Self, CatalogError> {
        let mut violations = Vec::new();
        let mut map = BTreeMap::new();
        for mut c in courses {
            c.code = normalize_code(&c.code);
            c.prerequisites = c.prerequisites.iter().map(|p| normalize_code(p)).collect();
            if map.contains_key(&c.code) {
                violations.push(Violation::DuplicateCode(c.code.clone()));
                continue;
            }
            map.insert(c.code.clone(), c);
        }
        let mut requirements = requirements;
        requirements.required_courses = requirements
            .required_courses
            .iter()
            .map(|c| normalize_code(c))
            .collect();
        let catalog = Catalog {
            courses: map,
            requirements,
        };
        violations.extend(catalog.violations());
        if violations.is_empty() {
            Ok(catalog)
        } else {
            Err(CatalogError::Invalid(violations))
        }
    }

    /// The bundled anonymized computer-science catalog.
    pub fn sample() -> Self {
        Self::from_json(SAMPLE_CATALOG).expect("bundled sample catalog is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, CatalogError> {
        let mut de = serde_json::Deserializer::from_str(text);
        let doc: CatalogDocument = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            CatalogError::Parse {
                line: inner.line(),
                column: inner.column(),
                field,
                message: inner.to_string(),
            }
        })?;
        Self::new(doc.courses, doc.requirements)
    }

    pub fn to_json(&self) -> String {
        let doc = CatalogDocument {
            courses: self.courses.values().cloned().collect(),
            requirements: self.requirements.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("catalog serializes")
    }

    pub fn courses(&self) -> impl Iterator<Item = &Course> {
        self.courses.values()
    }

    pub fn course(&self, code: &str) -> Option<&Course> {
        self.courses.get(code)
    }

    pub fn contains(&self, code: &str) -> bool {
        self.courses.contains_key(code)
    }

    pub fn len(&self) -> usize {
        self.courses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.courses.is_empty()
    }

    pub fn requirements(&self) -> &RequirementSet {
        &self.requirements
    }

    pub fn credits(&self, code: &str) -> u32 {
        self.courses.get(code).map_or(0, |c| c.credits)
    }

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let req = &self.requirements;
        for c in self.courses.values() {
            if c.credits == 0 {
                out.push(Violation::BadCredits(c.code.clone()));
            }
            for p in &c.prerequisites {
                if p == &c.code {
                    out.push(Violation::SelfPrerequisite(c.code.clone()));
                } else if !self.courses.contains_key(p) {
                    out.push(Violation::UnknownPrerequisite {
                        course: c.code.clone(),
                        prerequisite: p.clone(),
                    });
                }
            }
        }
        if let Err(cycle) = self.topological_order() {
            out.push(Violation::Cycle(cycle));
        }
        for r in &req.required_courses {
            if !self.courses.contains_key(r) {
                out.push(Violation::UnknownRequired(r.clone()));
            }
        }
        if req.num_semesters == 0 {
            out.push(Violation::NoSemesters);
        }
        if req.semester_credit_min > req.semester_credit_max {
            out.push(Violation::SemesterBounds {
                min: req.semester_credit_min,
                max: req.semester_credit_max,
            });
        }
        let capacity = u64::from(req.semester_credit_max) * req.num_semesters as u64;
        if u64::from(req.total_credit_min) > capacity {
            out.push(Violation::TotalExceedsCapacity {
                total: req.total_credit_min,
                semesters: req.num_semesters,
                max: req.semester_credit_max,
            });
        }
        for (&cat, &min) in &req.category_credit_min {
            if min > 0 && !self.courses.values().any(|c| c.category == cat) {
                out.push(Violation::EmptyCategory(cat));
            }
        }
        out
    }

    /// Prerequisites before dependents (Kahn's algorithm, ties by code).
    /// On failure returns the members of one prerequisite cycle.
    /// Self-loops and unknown prerequisites are ignored here.
    pub fn topological_order(&self) -> Result<Vec<String>, Vec<String>> {
        let mut indegree: BTreeMap<&str, usize> =
            self.courses.keys().map(|k| (k.as_str(), 0)).collect();
        let mut dependents: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for c in self.courses.values() {
            for p in &c.prerequisites {
                if p != &c.code && self.courses.contains_key(p) {
                    *indegree.get_mut(c.code.as_str()).expect("known") += 1;
                    dependents.entry(p.as_str()).or_default().push(c.code.as_str());
                }
            }
        }
        let mut ready: VecDeque<&str> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&k, _)| k)
            .collect();
        let mut order = Vec::with_capacity(self.courses.len());
        while let Some(k) = ready.pop_front() {
            order.push(k.to_string());
            for &d in dependents.get(k).map(Vec::as_slice).unwrap_or(&[]) {
                let e = indegree.get_mut(d).expect("known");
                *e -= 1;
                if *e == 0 {
                    ready.push_back(d);
                }
            }
        }
        if order.len() == self.courses.len() {
            return Ok(order);
        }
        // Every leftover node has a leftover prerequisite; walking
        // prerequisites from any of them must revisit a node.
        let done: BTreeSet<&str> = order.iter().map(String::as_str).collect();
        let start = *indegree
            .keys()
            .find(|k| !done.contains(*k))
            .expect("leftover node");
        let mut path: Vec<&str> = vec![start];
        loop {
            let cur = *path.last().expect("non-empty");
            let next = self.courses[cur]
                .prerequisites
                .iter()
                .map(String::as_str)
                .find(|p| *p != cur && self.courses.contains_key(*p) && !done.contains(p))
                .expect("leftover node has leftover prerequisite");
            if let Some(pos) = path.iter().position(|&n| n == next) {
                let mut cycle: Vec<String> = path[pos..].iter().map(|s| s.to_string()).collect();
                cycle.sort();
                return Err(cycle);
            }
            path.push(next);
        }
    }

    /// Ranked fuzzy lookup of a user-typed course reference.
    pub fn resolve_course(&self, text: &str) -> Vec<CourseMatch> {
        let query = normalize_code(text);
        if query.is_empty() {
            return Vec::new();
        }
        let query_tokens: Vec<&str> = query.split(' ').collect();
        let title_query = title_tokens(text);
        let mut matches: Vec<CourseMatch> = self
            .courses
            .values()
            .map(|c| {
                let score = if query == c.code {
                    1.0
                } else {
                    let code_tokens: Vec<&str> = c.code.split(' ').collect();
                    let edit = strsim::normalized_levenshtein(&query, &c.code);
                    let partial = if query_tokens.len() < code_tokens.len()
                        && query_tokens.iter().all(|t| code_tokens.contains(t))
                    {
                        PARTIAL_CODE_SCORE
                    } else {
                        0.0
                    };
                    let title = dice(&title_query, &title_tokens(&c.title)) * TITLE_SCORE_CAP;
                    edit.max(partial).max(title).min(TITLE_SCORE_CAP)
                };
                CourseMatch {
                    code: c.code.clone(),
                    score,
                }
            })
            .filter(|m| m.score >= MATCH_THRESHOLD)
            .collect();
        matches.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.code.cmp(&b.code)));
        matches.truncate(MAX_MATCHES);
        matches
    }
}

const STOPWORDS: [&str; 6] = ["a", "an", "the", "of", "to", "for"];

fn title_tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

fn dice(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let common = a.intersection(b).count();
    2.0 * common as f64 / (a.len() + b.len()) as f64
}

/// Reads and validates a catalog file.
pub fn load_catalog(path: impl AsRef<Path>) -> Result<Catalog, CatalogError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Catalog::from_json(&text)
}

/// Writes the canonical form (courses sorted by code).
pub fn save_catalog(catalog: &Catalog, path: impl AsRef<Path>) -> Result<(), CatalogError> {
    let path = path.as_ref();
    std::fs::write(path, catalog.to_json()).map_err(|source| CatalogError::Io {
        path: path.to_path_buf(),
        source,
    })
}
