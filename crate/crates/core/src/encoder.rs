//! Compiles a catalog into the labeled knowledge base.
//!
//! Every policy clause is guarded by its own selector variable and carries
//! a constraint id, a category and an English label. Constraint ids:
//!
//! | id                          | family        |
//! |-----------------------------|---------------|
//! | `prereq/<c>/<p>/<s>`        | Prerequisite  |
//! | `placement/<c>`             | Placement     |
//! | `credits/sem/<s>`           | CreditBound   |
//! | `credits/cat/<k>`           | CreditBound   |
//! | `credits/total`             | CreditBound   |
//! | `required/<c>`              | Requirement   |
//!
//! Credit sums use a sequential weighted counter over unary partial sums.
//! Counter and activity clauses are labeled with their parent bound.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, Category};
use crate::propcore::{Clause, ClauseHandle, Formula, Literal, Model, VarId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConstraintCategory {
    Requirement,
    Prerequisite,
    Placement,
    CreditBound,
}

impl ConstraintCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ConstraintCategory::Requirement => "Requirement",
            ConstraintCategory::Prerequisite => "Prerequisite",
            ConstraintCategory::Placement => "Placement",
            ConstraintCategory::CreditBound => "CreditBound",
        }
    }
}

impl fmt::Display for ConstraintCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn prereq_id(course: &str, prereq: &str, semester: usize) -> String {
    format!("prereq/{course}/{prereq}/{semester}")
}

pub fn placement_id(course: &str) -> String {
    format!("placement/{course}")
}

pub fn required_id(course: &str) -> String {
    format!("required/{course}")
}

pub fn semester_credits_id(semester: usize) -> String {
    format!("credits/sem/{semester}")
}

pub fn category_credits_id(category: Category) -> String {
    format!("credits/cat/{}", category.key())
}

pub const TOTAL_CREDITS_ID: &str = "credits/total";

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VarMap {
    /// var(c, s)
    pub course_sem: BTreeMap<(String, usize), VarId>,
    /// sel(c)
    pub selected: BTreeMap<String, VarId>,
    /// Counter and activity variables keyed by (constraint id, position).
    pub auxiliaries: BTreeMap<(String, usize), VarId>,
}

impl VarMap {
    pub fn course_sem(&self, code: &str, semester: usize) -> Option<VarId> {
        self.course_sem.get(&(code.to_string(), semester)).copied()
    }

    pub fn selected(&self, code: &str) -> Option<VarId> {
        self.selected.get(code).copied()
    }

    fn aux(&mut self, formula: &mut Formula, id: &str) -> VarId {
        let position = self
            .auxiliaries
            .range((id.to_string(), 0)..=(id.to_string(), usize::MAX))
            .next_back()
            .map_or(0, |((_, p), _)| p + 1);
        let v = formula.new_var();
        self.auxiliaries.insert((id.to_string(), position), v);
        v
    }
}

/// A selectable clause of the knowledge base.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KbEntry {
    pub handle: ClauseHandle,
    pub selector: VarId,
    pub constraint_id: String,
    pub category: ConstraintCategory,
}

#[derive(Clone, Debug)]
pub struct LabeledKb {
    formula: Formula,
    varmap: VarMap,
    entries: Vec<KbEntry>,
    by_handle: HashMap<ClauseHandle, usize>,
    by_selector: HashMap<VarId, usize>,
    category_index: BTreeMap<ConstraintCategory, Vec<ClauseHandle>>,
    num_semesters: usize,
    credits: BTreeMap<String, u32>,
    guard: Option<VarId>,
    blocking: Vec<ClauseHandle>,
}

impl LabeledKb {
    /// An empty knowledge base; `encode` is the usual constructor.
    pub fn new(num_semesters: usize) -> Self {
        Self {
            formula: Formula::new(),
            varmap: VarMap::default(),
            entries: Vec::new(),
            by_handle: HashMap::new(),
            by_selector: HashMap::new(),
            category_index: BTreeMap::new(),
            num_semesters,
            credits: BTreeMap::new(),
            guard: None,
            blocking: Vec::new(),
        }
    }

    pub fn formula(&self) -> &Formula {
        &self.formula
    }

    pub fn formula_mut(&mut self) -> &mut Formula {
        &mut self.formula
    }

    pub fn varmap(&self) -> &VarMap {
        &self.varmap
    }

    pub fn num_semesters(&self) -> usize {
        self.num_semesters
    }

    /// Courses known to the KB with their credit hours.
    pub fn course_credits(&self) -> &BTreeMap<String, u32> {
        &self.credits
    }

    pub fn entries(&self) -> &[KbEntry] {
        &self.entries
    }

    pub fn entry(&self, handle: ClauseHandle) -> Option<&KbEntry> {
        self.by_handle.get(&handle).map(|&i| &self.entries[i])
    }

    pub fn entry_for_selector(&self, selector: VarId) -> Option<&KbEntry> {
        self.by_selector.get(&selector).map(|&i| &self.entries[i])
    }

    pub fn category_index(&self) -> &BTreeMap<ConstraintCategory, Vec<ClauseHandle>> {
        &self.category_index
    }

    pub fn label(&self, handle: ClauseHandle) -> &str {
        self.formula.clause(handle).label.as_deref().unwrap_or("")
    }

    /// Assumption literals switching every selectable clause on.
    pub fn all_selectors(&self) -> Vec<Literal> {
        self.entries.iter().map(|e| e.selector.positive()).collect()
    }

    /// Allocates a fresh variable (used for auxiliaries outside the counters).
    pub fn new_var(&mut self) -> VarId {
        self.formula.new_var()
    }

    /// Registers a course and its decision variables var(c, s) and sel(c).
    pub fn add_course(&mut self, code: &str, credits: u32) {
        if self.credits.contains_key(code) {
            return;
        }
        self.credits.insert(code.to_string(), credits);
        for s in 0..self.num_semesters {
            let v = self.formula.new_var();
            self.varmap.course_sem.insert((code.to_string(), s), v);
        }
        let v = self.formula.new_var();
        self.varmap.selected.insert(code.to_string(), v);
    }

    /// Adds a guarded, labeled clause with a fresh selector.
    ///
    /// Panics on an empty or tautological clause; encoders never produce one.
    pub fn add_labeled(
        &mut self,
        literals: Vec<Literal>,
        constraint_id: &str,
        category: ConstraintCategory,
        label: &str,
    ) -> ClauseHandle {
        let selector = self.formula.new_var();
        let clause = Clause::new(literals)
            .with_selector(selector)
            .with_label(label)
            .with_category(category.as_str());
        let handle = self
            .formula
            .add_clause(clause)
            .unwrap_or_else(|e| panic!("encoder produced a bad clause for {constraint_id}: {e}"));
        let idx = self.entries.len();
        self.entries.push(KbEntry {
            handle,
            selector,
            constraint_id: constraint_id.to_string(),
            category,
        });
        self.by_handle.insert(handle, idx);
        self.by_selector.insert(selector, idx);
        self.category_index.entry(category).or_default().push(handle);
        handle
    }

    /// Guard literal for enumeration clauses, if any were added.
    pub fn enumeration_guard(&self) -> Option<VarId> {
        self.guard
    }

    pub fn blocking_clauses(&self) -> &[ClauseHandle] {
        &self.blocking
    }

    /// Adds an unlabeled clause that is active only while the enumeration
    /// guard is assumed. Never selectable.
    pub fn add_blocking_clause(&mut self, literals: Vec<Literal>) -> ClauseHandle {
        let guard = match self.guard {
            Some(g) => g,
            None => {
                let g = self.formula.new_var();
                self.guard = Some(g);
                g
            }
        };
        let handle = self
            .formula
            .add_clause(Clause::new(literals).with_selector(guard))
            .expect("blocking clause is well formed");
        self.blocking.push(handle);
        handle
    }

    /// Placements (course, semester) set true in the model.
    pub fn decode_placements(&self, model: &Model) -> Vec<(String, usize)> {
        self.varmap
            .course_sem
            .iter()
            .filter(|(_, &v)| model.value(v))
            .map(|((c, s), _)| (c.clone(), *s))
            .collect()
    }
}

/// Builds the full knowledge base for a validated catalog.
pub fn encode(catalog: &Catalog) -> LabeledKb {
    let req = catalog.requirements();
    let mut kb = LabeledKb::new(req.num_semesters);
    for c in catalog.courses() {
        kb.add_course(&c.code, c.credits);
    }
    for s in 0..req.num_semesters {
        let id = semester_credits_id(s);
        let act = kb.varmap.aux(&mut kb.formula, &id);
        debug_assert_eq!(kb.varmap.auxiliaries[&(id, 0)], act);
    }
    for c in catalog.courses() {
        encode_placement(&mut kb, &c.code);
    }
    for c in catalog.courses() {
        for p in &c.prerequisites {
            encode_prerequisite(&mut kb, &c.code, p);
        }
    }
    for r in &req.required_courses {
        encode_required(&mut kb, r);
    }
    encode_credit_bounds(&mut kb, catalog);
    kb
}

/// One clause per semester s: ¬var(c,s) ∨ var(p,0) ∨ … ∨ var(p,s−1).
pub fn encode_prerequisite(kb: &mut LabeledKb, course: &str, prereq: &str) -> Vec<ClauseHandle> {
    let label = format!("{prereq} must be completed before {course}");
    (0..kb.num_semesters)
        .map(|s| {
            let mut lits = vec![kb.varmap.course_sem(course, s).expect("course var").negative()];
            lits.extend((0..s).map(|t| kb.varmap.course_sem(prereq, t).expect("prereq var").positive()));
            kb.add_labeled(
                lits,
                &prereq_id(course, prereq, s),
                ConstraintCategory::Prerequisite,
                &label,
            )
        })
        .collect()
}

/// sel(c) ↔ ⋁ₛ var(c,s) plus pairwise at-most-one over the semesters.
pub fn encode_placement(kb: &mut LabeledKb, course: &str) -> Vec<ClauseHandle> {
    let id = placement_id(course);
    let label = format!("{course} is scheduled in exactly one semester");
    let sel = kb.varmap.selected(course).expect("selection var");
    let vars: Vec<VarId> = (0..kb.num_semesters)
        .map(|s| kb.varmap.course_sem(course, s).expect("course var"))
        .collect();
    let mut handles = Vec::new();
    let mut at_least = vec![sel.negative()];
    at_least.extend(vars.iter().map(|v| v.positive()));
    handles.push(kb.add_labeled(at_least, &id, ConstraintCategory::Placement, &label));
    for v in &vars {
        handles.push(kb.add_labeled(
            vec![v.negative(), sel.positive()],
            &id,
            ConstraintCategory::Placement,
            &label,
        ));
    }
    for i in 0..vars.len() {
        for j in i + 1..vars.len() {
            handles.push(kb.add_labeled(
                vec![vars[i].negative(), vars[j].negative()],
                &id,
                ConstraintCategory::Placement,
                &label,
            ));
        }
    }
    handles
}

/// Unit clause sel(c).
pub fn encode_required(kb: &mut LabeledKb, course: &str) -> ClauseHandle {
    let sel = kb.varmap.selected(course).expect("selection var");
    kb.add_labeled(
        vec![sel.positive()],
        &required_id(course),
        ConstraintCategory::Requirement,
        &format!("{course} is a required core course"),
    )
}

pub fn semester_label(semester: usize, min: u32, max: u32) -> String {
    format!(
        "Semester {} must carry between {min} and {max} credits if it has any courses.",
        semester + 1
    )
}

pub fn category_label(category: Category, min: u32) -> String {
    format!(
        "The total credits for {} must sum to {min} credits.",
        category.display_name()
    )
}

pub fn total_label(min: u32) -> String {
    format!("The total credits for the degree must sum to {min} credits.")
}

/// Per-semester bounds (minimum conditioned on activity), the degree total
/// and per-category minimums.
pub fn encode_credit_bounds(kb: &mut LabeledKb, catalog: &Catalog) -> Vec<ClauseHandle> {
    let req = catalog.requirements();
    let mut handles = Vec::new();
    let courses: Vec<(String, u32)> = catalog
        .courses()
        .map(|c| (c.code.clone(), c.credits))
        .collect();

    for s in 0..req.num_semesters {
        let id = semester_credits_id(s);
        let label = semester_label(s, req.semester_credit_min, req.semester_credit_max);
        if courses.is_empty() {
            continue;
        }
        let act = match kb.varmap.auxiliaries.get(&(id.clone(), 0)) {
            Some(&v) => v,
            None => kb.varmap.aux(&mut kb.formula, &id),
        };
        let items: Vec<(Literal, u32)> = courses
            .iter()
            .map(|(c, w)| (kb.varmap.course_sem(c, s).expect("course var").positive(), *w))
            .collect();
        let mut enc = CounterBuilder::new(kb, &id, &label);
        let mut activity = vec![act.negative()];
        activity.extend(items.iter().map(|(l, _)| *l));
        enc.clause(activity);
        for (l, _) in &items {
            enc.clause(vec![!*l, act.positive()]);
        }
        let g = gcd_all(items.iter().map(|(_, w)| *w));
        let upper = req.semester_credit_max / g;
        let lower = req.semester_credit_min.div_ceil(g);
        let scaled: Vec<(Literal, u32)> = items.iter().map(|(l, w)| (*l, w / g)).collect();
        let outputs = enc.counter(&scaled, upper + 1, true);
        if let Some(Some(over)) = outputs.get(upper as usize) {
            enc.clause(vec![over.negative()]);
        }
        if lower > 0 {
            match outputs.get(lower as usize - 1) {
                Some(Some(reached)) => enc.clause(vec![act.negative(), reached.positive()]),
                _ => enc.clause(vec![act.negative()]),
            }
        }
        handles.extend(enc.finish());
    }

    if req.total_credit_min > 0 {
        let items: Vec<(Literal, u32)> = courses
            .iter()
            .map(|(c, w)| (kb.varmap.selected(c).expect("sel var").positive(), *w))
            .collect();
        handles.extend(at_least(
            kb,
            TOTAL_CREDITS_ID,
            &total_label(req.total_credit_min),
            &items,
            req.total_credit_min,
        ));
    }

    for (&cat, &min) in &req.category_credit_min {
        if min == 0 {
            continue;
        }
        let items: Vec<(Literal, u32)> = catalog
            .courses()
            .filter(|c| c.category == cat)
            .map(|c| (kb.varmap.selected(&c.code).expect("sel var").positive(), c.credits))
            .collect();
        handles.extend(at_least(
            kb,
            &category_credits_id(cat),
            &category_label(cat, min),
            &items,
            min,
        ));
    }
    handles
}

/// Σ wᵢ·xᵢ ≥ k, encoded as Σ wᵢ·¬xᵢ ≤ W − k.
fn at_least(
    kb: &mut LabeledKb,
    id: &str,
    label: &str,
    items: &[(Literal, u32)],
    k: u32,
) -> Vec<ClauseHandle> {
    let total: u32 = items.iter().map(|(_, w)| w).sum();
    let mut enc = CounterBuilder::new(kb, id, label);
    if total < k {
        enc.falsum();
        return enc.finish();
    }
    let g = gcd_all(items.iter().map(|(_, w)| *w));
    let slack = (total - k) / g;
    let negated: Vec<(Literal, u32)> = items.iter().map(|(l, w)| (!*l, w / g)).collect();
    let outputs = enc.counter(&negated, slack + 1, false);
    if let Some(Some(over)) = outputs.get(slack as usize) {
        enc.clause(vec![over.negative()]);
    }
    enc.finish()
}

fn gcd_all(weights: impl Iterator<Item = u32>) -> u32 {
    fn gcd(a: u32, b: u32) -> u32 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    weights.fold(0, gcd).max(1)
}

struct CounterBuilder<'a> {
    kb: &'a mut LabeledKb,
    id: String,
    label: String,
    handles: Vec<ClauseHandle>,
}

impl<'a> CounterBuilder<'a> {
    fn new(kb: &'a mut LabeledKb, id: &str, label: &str) -> Self {
        Self {
            kb,
            id: id.to_string(),
            label: label.to_string(),
            handles: Vec::new(),
        }
    }

    fn clause(&mut self, lits: Vec<Literal>) {
        let h = self
            .kb
            .add_labeled(lits, &self.id, ConstraintCategory::CreditBound, &self.label);
        self.handles.push(h);
    }

    fn falsum(&mut self) {
        let f = self.kb.varmap.aux(&mut self.kb.formula, &self.id);
        self.clause(vec![f.positive()]);
        self.clause(vec![f.negative()]);
    }

    /// Partial sums r[i][j] ⟺ (Σ_{t≤i} w_t·x_t ≥ j+1), saturating at `cap`.
    /// Returns the final row; index j holds the "sum ≥ j+1" variable, or
    /// None where that sum is unreachable. Upward clauses always; downward
    /// clauses (making the row exact) when `exact`.
    fn counter(&mut self, items: &[(Literal, u32)], cap: u32, exact: bool) -> Vec<Option<VarId>> {
        let cap = cap as usize;
        let mut prev: Vec<Option<VarId>> = vec![None; cap];
        let mut reach = 0usize;
        for &(x, w) in items {
            let w = w as usize;
            let new_reach = (reach + w).min(cap);
            let mut row: Vec<Option<VarId>> = vec![None; cap];
            for slot in row.iter_mut().take(new_reach) {
                *slot = Some(self.kb.varmap.aux(&mut self.kb.formula, &self.id));
            }
            let r = |row: &Vec<Option<VarId>>, j: usize| row[j - 1].expect("reachable");
            for j in 1..=reach {
                self.clause(vec![r(&prev, j).negative(), r(&row, j).positive()]);
            }
            for j in 1..=w.min(cap) {
                self.clause(vec![!x, r(&row, j).positive()]);
            }
            for j in 1..=reach.min(cap - 1) {
                let target = (j + w).min(cap);
                self.clause(vec![!x, r(&prev, j).negative(), r(&row, target).positive()]);
            }
            if exact {
                for j in 1..=new_reach {
                    let below = (j <= reach).then(|| r(&prev, j));
                    let mut take = vec![r(&row, j).negative(), x];
                    take.extend(below.map(|v| v.positive()));
                    self.clause(take);
                    if j > w {
                        let mut carry = vec![r(&row, j).negative()];
                        carry.extend(below.map(|v| v.positive()));
                        carry.push(r(&prev, j - w).positive());
                        self.clause(carry);
                    }
                }
            }
            prev = row;
            reach = new_reach;
        }
        prev
    }

    fn finish(self) -> Vec<ClauseHandle> {
        self.handles
    }
}
