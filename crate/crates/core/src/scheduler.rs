//! Schedules as decoded models, enumeration by solution blocking, and an
//! independent validity checker that uses no SAT machinery.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, Category};
use crate::encoder::LabeledKb;
use crate::propcore::{Literal, SolveResult};

/// Courses per semester (zero-based), each semester sorted by code.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Schedule {
    semesters: Vec<Vec<String>>,
    credits: Vec<u32>,
}

impl Schedule {
    /// Builds a schedule; `credits_of` supplies per-course credit hours.
    pub fn from_placements(
        num_semesters: usize,
        placements: impl IntoIterator<Item = (String, usize)>,
        credits_of: impl Fn(&str) -> u32,
    ) -> Self {
        let mut semesters = vec![Vec::new(); num_semesters];
        for (code, s) in placements {
            semesters[s].push(code);
        }
        for sem in &mut semesters {
            sem.sort();
        }
        let credits = semesters
            .iter()
            .map(|sem| sem.iter().map(|c| credits_of(c)).sum())
            .collect();
        Self { semesters, credits }
    }

    pub fn empty(num_semesters: usize) -> Self {
        Self::from_placements(num_semesters, std::iter::empty(), |_| 0)
    }

    pub fn num_semesters(&self) -> usize {
        self.semesters.len()
    }

    pub fn semesters(&self) -> &[Vec<String>] {
        &self.semesters
    }

    pub fn courses_in(&self, semester: usize) -> &[String] {
        &self.semesters[semester]
    }

    pub fn credits_per_semester(&self) -> &[u32] {
        &self.credits
    }

    /// The first semester holding `code`.
    pub fn semester_of(&self, code: &str) -> Option<usize> {
        self.semesters.iter().position(|s| s.iter().any(|c| c == code))
    }

    pub fn selected(&self) -> BTreeSet<&str> {
        self.semesters.iter().flatten().map(String::as_str).collect()
    }

    pub fn placements(&self) -> impl Iterator<Item = (&str, usize)> {
        self.semesters
            .iter()
            .enumerate()
            .flat_map(|(s, cs)| cs.iter().map(move |c| (c.as_str(), s)))
    }

    pub fn num_placed(&self) -> usize {
        self.semesters.iter().map(Vec::len).sum()
    }

    pub fn to_document(&self, catalog: &Catalog) -> ScheduleDocument {
        ScheduleDocument {
            semesters: self
                .semesters
                .iter()
                .map(|sem| {
                    sem.iter()
                        .map(|code| {
                            let course = catalog.course(code);
                            CourseCard {
                                code: code.clone(),
                                title: course.map(|c| c.title.clone()).unwrap_or_default(),
                                credits: course.map_or(0, |c| c.credits),
                            }
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (s, sem) in self.semesters.iter().enumerate() {
            writeln!(
                f,
                "Semester {} ({} cr): {}",
                s + 1,
                self.credits[s],
                if sem.is_empty() {
                    "-".to_string()
                } else {
                    sem.join(", ")
                }
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CourseCard {
    pub code: String,
    pub title: String,
    pub credits: u32,
}

/// Wire form of a schedule: `semesters[s]` lists the course cards of
/// zero-based semester `s`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleDocument {
    pub semesters: Vec<Vec<CourseCard>>,
}

impl ScheduleDocument {
    pub fn to_schedule(&self) -> Schedule {
        let credits: BTreeMap<&str, u32> = self
            .semesters
            .iter()
            .flatten()
            .map(|c| (c.code.as_str(), c.credits))
            .collect();
        Schedule::from_placements(
            self.semesters.len(),
            self.semesters
                .iter()
                .enumerate()
                .flat_map(|(s, cs)| cs.iter().map(move |c| (c.code.clone(), s))),
            |code| credits.get(code).copied().unwrap_or(0),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Generated {
    Schedule(Schedule),
    Infeasible,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Next {
    Schedule(Schedule),
    Exhausted,
}

fn policy_assumptions(kb: &LabeledKb) -> Vec<Literal> {
    let mut a = kb.all_selectors();
    if let Some(g) = kb.enumeration_guard() {
        a.push(g.positive());
    }
    a
}

pub(crate) fn decode(kb: &LabeledKb, model: &crate::propcore::Model) -> Schedule {
    let credits = kb.course_credits();
    Schedule::from_placements(kb.num_semesters(), kb.decode_placements(model), |c| {
        credits.get(c).copied().unwrap_or(0)
    })
}

/// Solves the KB (with every policy clause and any accumulated blocking
/// clauses active) and decodes the model.
pub fn generate_schedule(kb: &mut LabeledKb) -> Generated {
    let assumptions = policy_assumptions(kb);
    match kb.formula_mut().solve(&assumptions) {
        SolveResult::Sat(model) => Generated::Schedule(decode(kb, &model)),
        SolveResult::Unsat(_) => Generated::Infeasible,
    }
}

/// Literals of the clause that rules out exactly `schedule` over the
/// course-semester variables: some placement is dropped, or some course
/// it leaves out is placed somewhere.
pub fn blocking_literals(kb: &LabeledKb, schedule: &Schedule) -> Vec<Literal> {
    let vm = kb.varmap();
    let placed: BTreeSet<&str> = schedule.selected();
    let mut lits: Vec<Literal> = schedule
        .placements()
        .map(|(c, s)| vm.course_sem(c, s).expect("schedule course is encoded").negative())
        .collect();
    for code in kb.course_credits().keys() {
        if !placed.contains(code.as_str()) {
            for s in 0..kb.num_semesters() {
                lits.push(vm.course_sem(code, s).expect("encoded").positive());
            }
        }
    }
    lits
}

/// Blocks `previous` and returns a different schedule, if one exists.
pub fn next_schedule(kb: &mut LabeledKb, previous: &Schedule) -> Next {
    let lits = blocking_literals(kb, previous);
    if lits.is_empty() {
        // The schedule covers nothing to flip: it was the only projection.
        return Next::Exhausted;
    }
    kb.add_blocking_clause(lits);
    match generate_schedule(kb) {
        Generated::Schedule(s) => Next::Schedule(s),
        Generated::Infeasible => Next::Exhausted,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScheduleViolation {
    UnknownCourse(String),
    DuplicatePlacement(String),
    Prerequisite { course: String, prerequisite: String },
    SemesterCredits { semester: usize, credits: u32, min: u32, max: u32 },
    TotalCredits { credits: u32, min: u32 },
    CategoryCredits { category: Category, credits: u32, min: u32 },
    MissingRequired(String),
    WrongSemesterCount { found: usize, expected: usize },
}

impl fmt::Display for ScheduleViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleViolation::UnknownCourse(c) => write!(f, "{c} is not in the catalog"),
            ScheduleViolation::DuplicatePlacement(c) => write!(f, "{c} is placed more than once"),
            ScheduleViolation::Prerequisite { course, prerequisite } => {
                write!(f, "{prerequisite} not before {course}")
            }
            ScheduleViolation::SemesterCredits { semester, credits, min, max } => write!(
                f,
                "semester {semester} has {credits} credits (allowed {min}-{max})"
            ),
            ScheduleViolation::TotalCredits { credits, min } => {
                write!(f, "{credits} total credits, at least {min} required")
            }
            ScheduleViolation::CategoryCredits { category, credits, min } => write!(
                f,
                "{credits} credits of {}, at least {min} required",
                category.display_name()
            ),
            ScheduleViolation::MissingRequired(c) => write!(f, "required course {c} is missing"),
            ScheduleViolation::WrongSemesterCount { found, expected } => {
                write!(f, "{found} semesters, expected {expected}")
            }
        }
    }
}

/// Every policy the schedule breaks, computed directly from the catalog.
pub fn check_schedule(schedule: &Schedule, catalog: &Catalog) -> Vec<ScheduleViolation> {
    let req = catalog.requirements();
    let mut out = Vec::new();
    if schedule.num_semesters() != req.num_semesters {
        out.push(ScheduleViolation::WrongSemesterCount {
            found: schedule.num_semesters(),
            expected: req.num_semesters,
        });
    }
    let mut where_placed: BTreeMap<&str, usize> = BTreeMap::new();
    for (code, s) in schedule.placements() {
        if catalog.course(code).is_none() {
            out.push(ScheduleViolation::UnknownCourse(code.to_string()));
        }
        if where_placed.insert(code, s).is_some() {
            out.push(ScheduleViolation::DuplicatePlacement(code.to_string()));
        }
    }
    for (&code, &s) in &where_placed {
        let Some(course) = catalog.course(code) else {
            continue;
        };
        for p in &course.prerequisites {
            match where_placed.get(p.as_str()) {
                Some(&t) if t < s => {}
                _ => out.push(ScheduleViolation::Prerequisite {
                    course: code.to_string(),
                    prerequisite: p.clone(),
                }),
            }
        }
    }
    for (s, sem) in schedule.semesters().iter().enumerate() {
        if sem.is_empty() {
            continue;
        }
        let credits: u32 = sem.iter().map(|c| catalog.credits(c)).sum();
        if credits < req.semester_credit_min || credits > req.semester_credit_max {
            out.push(ScheduleViolation::SemesterCredits {
                semester: s,
                credits,
                min: req.semester_credit_min,
                max: req.semester_credit_max,
            });
        }
    }
    let total: u32 = where_placed.keys().map(|c| catalog.credits(c)).sum();
    if total < req.total_credit_min {
        out.push(ScheduleViolation::TotalCredits {
            credits: total,
            min: req.total_credit_min,
        });
    }
    for (&cat, &min) in &req.category_credit_min {
        let credits: u32 = where_placed
            .keys()
            .filter_map(|c| catalog.course(c))
            .filter(|c| c.category == cat)
            .map(|c| c.credits)
            .sum();
        if credits < min {
            out.push(ScheduleViolation::CategoryCredits {
                category: cat,
                credits,
                min,
            });
        }
    }
    for r in &req.required_courses {
        if !where_placed.contains_key(r.as_str()) {
            out.push(ScheduleViolation::MissingRequired(r.clone()));
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::catalog::{Course, RequirementSet};
    use crate::encoder::encode;

    pub(crate) fn sample_schedule(catalog: &Catalog, rows: &[&[&str]]) -> Schedule {
        Schedule::from_placements(
            rows.len(),
            rows.iter()
                .enumerate()
                .flat_map(|(s, cs)| cs.iter().map(move |c| (c.to_string(), s))),
            |c| catalog.credits(c),
        )
    }

    /// A hand-built valid plan for the sample catalog.
    pub(crate) const HAND_PLAN: [&[&str]; 8] = [
        &["VPC Z88", "YNP H57", "JWF J68", "CHE E21", "ECO J11"],
        &["XOX R89", "KQM B21", "JWF J69", "PLN F33", "BIO F31"],
        &["WJW R89", "KQM B34", "RTA C45", "HZD E12", "TCE K52"],
        &["MVS G71", "XOX R92", "BXQ L19", "LAP D94", "UUE T98"],
        &["DKS M40", "DKS M55", "FRO N12", "GTP P27", "HAV Q31"],
        &["CMB S18", "NWE T09", "QPL U64", "RZI V73", "SBV W26"],
        &["TYM X81", "UKA Y15", "VHE Z37", "PSY K21", "ENG Q71"],
        &["WOD A52", "XIR B68", "ZUF C90", "HIS L31", "COM R81"],
    ];

    #[test]
    fn hand_plan_is_valid() {
        let cat = Catalog::sample();
        let s = sample_schedule(&cat, &HAND_PLAN);
        assert_eq!(check_schedule(&s, &cat), vec![]);
        assert_eq!(s.credits_per_semester(), &[15; 8]);
    }

    #[test]
    fn prerequisite_in_same_semester_is_reported() {
        let cat = Catalog::sample();
        let mut rows = HAND_PLAN;
        rows[1] = &["WJW R89", "KQM B21", "JWF J69", "PLN F33", "BIO F31"];
        rows[2] = &["XOX R89", "KQM B34", "RTA C45", "HZD E12", "TCE K52"];
        let s = sample_schedule(&cat, &rows);
        let v = check_schedule(&s, &cat);
        assert!(v.contains(&ScheduleViolation::Prerequisite {
            course: "WJW R89".into(),
            prerequisite: "XOX R89".into()
        }));
        let same = sample_schedule(
            &cat,
            &[&["XOX R89", "WJW R89"], &[], &[], &[], &[], &[], &[], &[]],
        );
        let msgs: Vec<String> = check_schedule(&same, &cat).iter().map(|v| v.to_string()).collect();
        assert!(msgs.contains(&"XOX R89 not before WJW R89".to_string()), "{msgs:?}");
    }

    #[test]
    fn overfull_semester_is_reported() {
        let cat = Catalog::sample();
        let mut rows = HAND_PLAN;
        rows[0] = &["VPC Z88", "YNP H57", "JWF J68", "CHE E21", "ECO J11", "GEO G41"];
        let s = sample_schedule(&cat, &rows);
        let v = check_schedule(&s, &cat);
        assert!(v.contains(&ScheduleViolation::SemesterCredits {
            semester: 0,
            credits: 18,
            min: 9,
            max: 15
        }));
    }

    #[test]
    fn empty_catalog_yields_empty_schedule() {
        let req = RequirementSet {
            total_credit_min: 0,
            category_credit_min: BTreeMap::new(),
            ..RequirementSet::default()
        };
        let cat = Catalog::new(vec![], req).unwrap();
        let mut kb = encode(&cat);
        let Generated::Schedule(s) = generate_schedule(&mut kb) else {
            panic!("empty catalog must be feasible")
        };
        assert_eq!(s.num_placed(), 0);
        assert_eq!(check_schedule(&s, &cat), vec![]);
        assert_eq!(next_schedule(&mut kb, &s), Next::Exhausted);
    }

    #[test]
    fn long_chain_is_infeasible() {
        let courses: Vec<Course> = (0..9)
            .map(|i| Course {
                code: format!("C{i}"),
                title: format!("Course {i}"),
                credits: 3,
                prerequisites: if i == 0 { vec![] } else { vec![format!("C{}", i - 1)] },
                category: Category::Core,
            })
            .collect();
        let req = RequirementSet {
            total_credit_min: 0,
            category_credit_min: BTreeMap::new(),
            semester_credit_min: 0,
            required_courses: BTreeSet::from(["C8".to_string()]),
            ..RequirementSet::default()
        };
        let cat = Catalog::new(courses, req).unwrap();
        let mut kb = encode(&cat);
        assert_eq!(generate_schedule(&mut kb), Generated::Infeasible);
    }

    #[test]
    fn fully_forced_instance_is_exhausted_immediately() {
        let req = RequirementSet {
            num_semesters: 1,
            total_credit_min: 0,
            category_credit_min: BTreeMap::new(),
            semester_credit_min: 0,
            required_courses: BTreeSet::from(["A".to_string()]),
            ..RequirementSet::default()
        };
        let cat = Catalog::new(
            vec![Course {
                code: "A".into(),
                title: "A".into(),
                credits: 3,
                prerequisites: vec![],
                category: Category::Core,
            }],
            req,
        )
        .unwrap();
        let mut kb = encode(&cat);
        let Generated::Schedule(first) = generate_schedule(&mut kb) else { panic!() };
        assert_eq!(next_schedule(&mut kb, &first), Next::Exhausted);
    }

    #[test]
    fn blocking_clause_literal_count() {
        let cat = Catalog::sample();
        let mut kb = encode(&cat);
        let Generated::Schedule(s) = generate_schedule(&mut kb) else { panic!() };
        let k = s.num_placed();
        let lits = blocking_literals(&kb, &s);
        assert_eq!(lits.len(), k + (cat.len() - k) * 8);
        assert_eq!(lits.iter().filter(|l| !l.is_positive()).count(), k);
    }

    #[test]
    fn document_round_trip() {
        let cat = Catalog::sample();
        let s = sample_schedule(&cat, &HAND_PLAN);
        let doc = s.to_document(&cat);
        let intro = doc.semesters.iter().flatten().find(|c| c.code == "VPC Z88").unwrap();
        assert_eq!(intro.title, "Introduction to Computer Science");
        let json = serde_json::to_string(&doc).unwrap();
        let back: ScheduleDocument = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_schedule(), s);
    }
}
