//! Contrastive explanations.
//!
//! A foil ψ is a conjunction of literals over var(c,s) / sel(c). With every
//! policy clause switched on by its selector and ψ assumed, the solver
//! either finds a model (the foil is achievable and the decoded schedule is
//! returned) or reports a core over the selectors. That core is shrunk by
//! deletion to a subset-minimal ε with ε ∧ ψ unsatisfiable.

use std::collections::hash_map::Entry;
use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{ConstraintCategory, LabeledKb};
use crate::propcore::{ClauseHandle, Literal, SolveResult, VarId};
use crate::scheduler::{decode, Schedule};

/// One conjunct of a foil: course `course` placed in `semester` (or
/// anywhere when `None`) if `positive`, otherwise not.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FoilLiteral {
    pub course: String,
    pub semester: Option<usize>,
    pub positive: bool,
}

impl FoilLiteral {
    /// Whether a concrete schedule satisfies this conjunct.
    pub fn holds_in(&self, schedule: &Schedule) -> bool {
        let placed = match self.semester {
            Some(s) => schedule.semester_of(&self.course) == Some(s),
            None => schedule.semester_of(&self.course).is_some(),
        };
        placed == self.positive
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Foil {
    pub literals: Vec<FoilLiteral>,
    pub compiled: Vec<Literal>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExplainError {
    #[error("foil names course {0}, which the knowledge base does not encode")]
    UnknownCourse(String),
    #[error("foil names semester index {semester}, outside 0..{num_semesters}")]
    SemesterOutOfRange { semester: usize, num_semesters: usize },
    #[error("foil literal references variable {0}, which the formula never allocated")]
    UnknownVariable(u32),
}

impl Foil {
    /// Compiles conjuncts against the KB's variable map. A repeated
    /// (course, semester) pair keeps its first occurrence.
    pub fn compile(literals: Vec<FoilLiteral>, kb: &LabeledKb) -> Result<Foil, ExplainError> {
        let vm = kb.varmap();
        let mut seen = BTreeSet::new();
        let mut kept = Vec::new();
        let mut compiled = Vec::new();
        for lit in literals {
            if !seen.insert((lit.course.clone(), lit.semester)) {
                continue;
            }
            let var = match lit.semester {
                Some(s) if s >= kb.num_semesters() => {
                    return Err(ExplainError::SemesterOutOfRange {
                        semester: s,
                        num_semesters: kb.num_semesters(),
                    })
                }
                Some(s) => vm.course_sem(&lit.course, s),
                None => vm.selected(&lit.course),
            }
            .ok_or_else(|| ExplainError::UnknownCourse(lit.course.clone()))?;
            compiled.push(Literal::new(var, lit.positive));
            kept.push(lit);
        }
        Ok(Foil {
            literals: kept,
            compiled,
        })
    }

    /// A foil given directly as solver literals (no course conjuncts).
    pub fn from_literals(compiled: Vec<Literal>) -> Foil {
        Foil {
            literals: Vec::new(),
            compiled,
        }
    }

    pub fn holds_in(&self, schedule: &Schedule) -> bool {
        self.literals.iter().all(|l| l.holds_in(schedule))
    }
}

/// A subset-minimal set of policy clauses refuting a foil.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Explanation {
    /// ε, in deletion order.
    pub clauses: Vec<ClauseHandle>,
    /// Parent constraint ids, deduplicated and sorted.
    pub constraint_ids: Vec<String>,
    pub labels: Vec<String>,
    pub categories: Vec<ConstraintCategory>,
    pub minimal: bool,
}

/// Wire form of an explanation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplanationDocument {
    pub constraint_ids: Vec<String>,
    pub clause_labels: Vec<String>,
    pub categories: Vec<ConstraintCategory>,
    pub minimal: bool,
}

impl Explanation {
    fn from_handles(kb: &LabeledKb, clauses: Vec<ClauseHandle>) -> Self {
        let mut rows: Vec<(String, String, ConstraintCategory)> = Vec::new();
        for &h in &clauses {
            let e = kb.entry(h).expect("selectable clause");
            if !rows.iter().any(|r| r.0 == e.constraint_id) {
                rows.push((e.constraint_id.clone(), kb.label(h).to_string(), e.category));
            }
        }
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        Explanation {
            clauses,
            constraint_ids: rows.iter().map(|r| r.0.clone()).collect(),
            labels: rows.iter().map(|r| r.1.clone()).collect(),
            categories: rows.iter().map(|r| r.2).collect(),
            minimal: true,
        }
    }

    pub fn to_document(&self) -> ExplanationDocument {
        ExplanationDocument {
            constraint_ids: self.constraint_ids.clone(),
            clause_labels: self.labels.clone(),
            categories: self.categories.clone(),
            minimal: self.minimal,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Explained {
    /// The foil is achievable; here is a schedule satisfying it.
    Alternative(Schedule),
    Minimal(Explanation),
}

fn check_foil(kb: &LabeledKb, foil: &Foil) -> Result<(), ExplainError> {
    for l in &foil.compiled {
        if !kb.formula().is_allocated(l.var()) {
            return Err(ExplainError::UnknownVariable(l.var().index()));
        }
    }
    Ok(())
}

/// Every selector, ordered by how many clause hops separate its clause
/// from the foil's variables, then by constraint id. Assumptions are
/// decided in order, so the first conflict (and with it the seed core)
/// tends to involve the constraints closest to the question.
fn local_first(kb: &LabeledKb, foil: &Foil) -> Vec<Literal> {
    let blocking: HashSet<ClauseHandle> = kb.blocking_clauses().iter().copied().collect();
    let mut clause_vars: Vec<(ClauseHandle, Vec<VarId>)> = Vec::new();
    let mut occurs: HashMap<VarId, Vec<usize>> = HashMap::new();
    for (h, c) in kb.formula().clauses() {
        if blocking.contains(&h) {
            continue;
        }
        let vars: Vec<VarId> = c.literals.iter().map(|l| l.var()).collect();
        for &v in &vars {
            occurs.entry(v).or_default().push(clause_vars.len());
        }
        clause_vars.push((h, vars));
    }
    let mut var_dist: HashMap<VarId, usize> = HashMap::new();
    let mut clause_dist: HashMap<ClauseHandle, usize> = HashMap::new();
    let mut queue = VecDeque::new();
    for l in &foil.compiled {
        if var_dist.insert(l.var(), 0).is_none() {
            queue.push_back(l.var());
        }
    }
    while let Some(v) = queue.pop_front() {
        let d = var_dist[&v];
        for &i in occurs.get(&v).into_iter().flatten() {
            let (h, vars) = &clause_vars[i];
            if clause_dist.contains_key(h) {
                continue;
            }
            clause_dist.insert(*h, d);
            for &w in vars {
                if let Entry::Vacant(e) = var_dist.entry(w) {
                    e.insert(d + 1);
                    queue.push_back(w);
                }
            }
        }
    }
    let mut ordered: Vec<(usize, &str, ClauseHandle, VarId)> = kb
        .entries()
        .iter()
        .map(|e| {
            let d = clause_dist.get(&e.handle).copied().unwrap_or(usize::MAX);
            (d, e.constraint_id.as_str(), e.handle, e.selector)
        })
        .collect();
    ordered.sort();
    ordered.into_iter().map(|(.., s)| s.positive()).collect()
}

/// Answers a contrastive query with an alternative schedule or a minimal
/// explanation. Blocking clauses from enumeration stay switched off.
pub fn explain(kb: &mut LabeledKb, foil: &Foil) -> Result<Explained, ExplainError> {
    check_foil(kb, foil)?;
    let mut assumptions = foil.compiled.clone();
    assumptions.extend(local_first(kb, foil));
    match kb.formula_mut().solve(&assumptions) {
        SolveResult::Sat(model) => Ok(Explained::Alternative(decode(kb, &model))),
        SolveResult::Unsat(core) => {
            let mus = extract_mus(kb, foil, &core)?;
            debug_assert!(is_minimal_refutation(kb, foil, &mus));
            Ok(Explained::Minimal(Explanation::from_handles(kb, mus)))
        }
    }
}

/// Deletion-based minimization of an unsatisfiable selector core.
///
/// Clauses are tried in ascending (constraint id, handle) order. Dropping a
/// clause that leaves the set unsatisfiable shrinks the working set to the
/// new core; otherwise the clause is necessary and kept. One solve per
/// tried clause.
pub fn extract_mus(
    kb: &mut LabeledKb,
    foil: &Foil,
    seed_core: &[Literal],
) -> Result<Vec<ClauseHandle>, ExplainError> {
    check_foil(kb, foil)?;
    let key = |kb: &LabeledKb, h: ClauseHandle| {
        (kb.entry(h).expect("selectable").constraint_id.clone(), h)
    };
    let mut current: Vec<(String, ClauseHandle)> = seed_core
        .iter()
        .filter(|l| l.is_positive())
        .filter_map(|l| kb.entry_for_selector(l.var()).map(|e| e.handle))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(|h| key(kb, h))
        .collect();
    current.sort();

    let mut i = 0;
    while i < current.len() {
        let tried = current[i].clone();
        let mut assumptions = foil.compiled.clone();
        assumptions.extend(
            current
                .iter()
                .filter(|k| **k != tried)
                .map(|(_, h)| kb.entry(*h).expect("selectable").selector.positive()),
        );
        match kb.formula_mut().solve(&assumptions) {
            SolveResult::Sat(_) => i += 1,
            SolveResult::Unsat(core) => {
                let in_core: BTreeSet<ClauseHandle> = core
                    .iter()
                    .filter(|l| l.is_positive())
                    .filter_map(|l| kb.entry_for_selector(l.var()).map(|e| e.handle))
                    .collect();
                current.retain(|k| *k != tried && in_core.contains(&k.1));
                // Everything ordered before `tried` was already shown necessary.
                i = current.partition_point(|k| *k < tried);
            }
        }
    }
    Ok(current.into_iter().map(|(_, h)| h).collect())
}

/// Checks both explanation invariants directly: the clauses together with
/// the foil are unsatisfiable, and dropping any one of them is not.
pub fn is_minimal_refutation(kb: &mut LabeledKb, foil: &Foil, clauses: &[ClauseHandle]) -> bool {
    let selectors: Vec<Literal> = clauses
        .iter()
        .filter_map(|h| kb.entry(*h).map(|e| e.selector.positive()))
        .collect();
    if selectors.len() != clauses.len() {
        return false;
    }
    let solve = |kb: &mut LabeledKb, skip: Option<usize>| {
        let mut a = foil.compiled.clone();
        a.extend(
            selectors
                .iter()
                .enumerate()
                .filter(|(i, _)| Some(*i) != skip)
                .map(|(_, l)| *l),
        );
        matches!(kb.formula_mut().solve(&a), SolveResult::Sat(_))
    };
    !solve(kb, None) && (0..selectors.len()).all(|i| solve(kb, Some(i)))
}
