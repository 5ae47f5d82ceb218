//! Propositional foundation: variables, literals, labeled clauses and an
//! incremental, assumption-based decision procedure.
//!
//! A [`Formula`] owns both the clause records (with their optional English
//! label, category tag and selector variable) and the solver state, so
//! repeated [`Formula::solve`] calls reuse everything learned so far.

mod solver;

use std::fmt::{self, Write as _};
use std::ops::Not;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use solver::{Outcome, Solver};

/// A propositional variable. Indices are dense and start at 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarId(u32);

impl VarId {
    pub fn index(self) -> u32 {
        self.0
    }

    pub fn positive(self) -> Literal {
        Literal::new(self, true)
    }

    pub fn negative(self) -> Literal {
        Literal::new(self, false)
    }

    fn slot(self) -> usize {
        (self.0 - 1) as usize
    }
}

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

/// A variable together with a polarity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Literal(u32);

impl Literal {
    pub fn new(var: VarId, positive: bool) -> Self {
        Literal((var.0 - 1) * 2 + u32::from(!positive))
    }

    pub fn var(self) -> VarId {
        VarId(self.0 / 2 + 1)
    }

    pub fn is_positive(self) -> bool {
        self.0 & 1 == 0
    }

    /// Signed DIMACS form: `3` for x3, `-3` for ¬x3.
    pub fn to_dimacs(self) -> i64 {
        let v = i64::from(self.var().0);
        if self.is_positive() {
            v
        } else {
            -v
        }
    }

    pub fn from_dimacs(value: i64) -> Option<Self> {
        if value == 0 {
            return None;
        }
        let var = VarId(u32::try_from(value.unsigned_abs()).ok()?);
        Some(Literal::new(var, value > 0))
    }

    pub(crate) fn code(self) -> u32 {
        self.0
    }

    pub(crate) fn from_code(code: u32) -> Self {
        Literal(code)
    }

    pub(crate) fn slot(self) -> usize {
        (self.0 / 2) as usize
    }

    pub(crate) fn from_slot(slot: usize, positive: bool) -> Self {
        Literal(slot as u32 * 2 + u32::from(!positive))
    }
}

impl Not for Literal {
    type Output = Literal;

    fn not(self) -> Literal {
        Literal(self.0 ^ 1)
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_positive() {
            write!(f, "{}", self.var())
        } else {
            write!(f, "¬{}", self.var())
        }
    }
}

/// Stable reference to a clause stored in a [`Formula`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClauseHandle(u32);

impl ClauseHandle {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A disjunction of literals with optional metadata.
///
/// When a selector `s` is present the clause handed to the solver is
/// `¬s ∨ literals`; assuming `s` switches the clause on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clause {
    pub literals: Vec<Literal>,
    pub label: Option<String>,
    pub category: Option<String>,
    pub selector: Option<VarId>,
}

impl Clause {
    pub fn new(literals: impl IntoIterator<Item = Literal>) -> Self {
        Self {
            literals: literals.into_iter().collect(),
            label: None,
            category: None,
            selector: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn with_category(mut self, category: impl Into<String>) -> Self {
        self.category = Some(category.into());
        self
    }

    pub fn with_selector(mut self, selector: VarId) -> Self {
        self.selector = Some(selector);
        self
    }

    /// The literals as the solver sees them (selector guard first).
    pub fn stored_literals(&self) -> Vec<Literal> {
        let mut lits = Vec::with_capacity(self.literals.len() + 1);
        if let Some(s) = self.selector {
            lits.push(s.negative());
        }
        lits.extend_from_slice(&self.literals);
        lits
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormulaError {
    #[error("empty clause rejected")]
    EmptyClause,
    #[error("tautological clause rejected ({0} occurs in both polarities)")]
    Tautology(VarId),
    #[error("variable {0} was not allocated by this formula")]
    UnknownVariable(VarId),
}

/// A total assignment over every allocated variable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Model {
    values: Vec<bool>,
}

impl Model {
    pub fn value(&self, var: VarId) -> bool {
        self.values[var.slot()]
    }

    pub fn lit_value(&self, lit: Literal) -> bool {
        self.value(lit.var()) == lit.is_positive()
    }

    /// Whether the model satisfies the clause's stored (guarded) form.
    pub fn satisfies(&self, clause: &Clause) -> bool {
        clause
            .stored_literals()
            .iter()
            .any(|&l| self.lit_value(l))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SolveResult {
    Sat(Model),
    /// The core is a subset of the assumptions that, assumed alone,
    /// is still unsatisfiable with the formula.
    Unsat(Vec<Literal>),
}

impl SolveResult {
    pub fn is_sat(&self) -> bool {
        matches!(self, SolveResult::Sat(_))
    }
}

/// Clause store plus incremental solver.
#[derive(Clone, Debug, Default)]
pub struct Formula {
    num_vars: u32,
    clauses: Vec<Clause>,
    solver: Solver,
    solve_calls: u64,
}

impl Formula {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn new_var(&mut self) -> VarId {
        self.num_vars += 1;
        self.solver.new_var();
        VarId(self.num_vars)
    }

    pub fn num_vars(&self) -> u32 {
        self.num_vars
    }

    pub fn num_clauses(&self) -> usize {
        self.clauses.len()
    }

    pub fn is_allocated(&self, var: VarId) -> bool {
        var.0 >= 1 && var.0 <= self.num_vars
    }

    /// Normalizes (duplicate collapse) and stores a clause.
    pub fn add_clause(&mut self, mut clause: Clause) -> Result<ClauseHandle, FormulaError> {
        if clause.literals.is_empty() {
            return Err(FormulaError::EmptyClause);
        }
        let mut seen = Vec::with_capacity(clause.literals.len());
        for &l in &clause.literals {
            if !self.is_allocated(l.var()) {
                return Err(FormulaError::UnknownVariable(l.var()));
            }
            if !seen.contains(&l) {
                seen.push(l);
            }
        }
        if let Some(s) = clause.selector {
            if !self.is_allocated(s) {
                return Err(FormulaError::UnknownVariable(s));
            }
        }
        clause.literals = seen;
        let stored = clause.stored_literals();
        let mut unique = stored.clone();
        unique.sort_unstable();
        unique.dedup();
        for w in unique.windows(2) {
            if w[0].var() == w[1].var() {
                return Err(FormulaError::Tautology(w[0].var()));
            }
        }
        self.solver.add_clause(&unique_in_order(&stored));
        let handle = ClauseHandle(self.clauses.len() as u32);
        self.clauses.push(clause);
        Ok(handle)
    }

    pub fn clause(&self, handle: ClauseHandle) -> &Clause {
        &self.clauses[handle.index()]
    }

    pub fn clauses(&self) -> impl Iterator<Item = (ClauseHandle, &Clause)> {
        self.clauses
            .iter()
            .enumerate()
            .map(|(i, c)| (ClauseHandle(i as u32), c))
    }

    /// Decides the formula under the given assumption literals.
    ///
    /// Panics if an assumption names a variable this formula never allocated.
    pub fn solve(&mut self, assumptions: &[Literal]) -> SolveResult {
        for a in assumptions {
            assert!(
                self.is_allocated(a.var()),
                "assumption {a} references an unallocated variable"
            );
        }
        self.solve_calls += 1;
        match self.solver.solve(assumptions) {
            Outcome::Sat(values) => SolveResult::Sat(Model { values }),
            Outcome::Unsat(mut core) => {
                core.sort_unstable();
                core.dedup();
                SolveResult::Unsat(core)
            }
        }
    }

    /// Number of `solve` calls made on this formula (clones carry the count).
    pub fn solve_calls(&self) -> u64 {
        self.solve_calls
    }

    pub fn conflicts(&self) -> u64 {
        self.solver.conflicts
    }

    pub fn learnt_clauses(&self) -> usize {
        self.solver.num_learnts()
    }

    /// DIMACS CNF export; labeled clauses add a `c label` comment line.
    pub fn to_dimacs(&self) -> String {
        let mut out = String::new();
        for c in &self.clauses {
            if let (Some(sel), Some(label)) = (c.selector, &c.label) {
                let category = c.category.as_deref().unwrap_or("-");
                let _ = writeln!(out, "c label {} {} {}", sel.0, category, label);
            }
        }
        let _ = writeln!(out, "p cnf {} {}", self.num_vars, self.clauses.len());
        for c in &self.clauses {
            for l in c.stored_literals() {
                let _ = write!(out, "{} ", l.to_dimacs());
            }
            out.push_str("0\n");
        }
        out
    }
}

fn unique_in_order(lits: &[Literal]) -> Vec<Literal> {
    let mut out: Vec<Literal> = Vec::with_capacity(lits.len());
    for &l in lits {
        if !out.contains(&l) {
            out.push(l);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars(f: &mut Formula, n: usize) -> Vec<VarId> {
        (0..n).map(|_| f.new_var()).collect()
    }

    #[test]
    fn new_var_is_dense_from_one() {
        let mut f = Formula::new();
        assert_eq!(f.new_var(), VarId(1));
        assert_ne!(f.new_var(), f.new_var());
        let mut g = Formula::new();
        let ids: Vec<u32> = (0..1000).map(|_| g.new_var().index()).collect();
        assert_eq!(ids, (1..=1000).collect::<Vec<_>>());
    }

    #[test]
    fn negation_is_involution() {
        let mut f = Formula::new();
        let v = f.new_var();
        assert_eq!(!!v.positive(), v.positive());
        assert_eq!(!v.positive(), v.negative());
        assert_eq!(Literal::from_dimacs(-1), Some(v.negative()));
    }

    #[test]
    fn duplicate_literals_collapse() {
        let mut f = Formula::new();
        let a = f.new_var();
        let h = f.add_clause(Clause::new([a.positive(), a.positive()])).unwrap();
        assert_eq!(f.clause(h).literals, vec![a.positive()]);
    }

    #[test]
    fn tautology_and_empty_are_distinct_errors() {
        let mut f = Formula::new();
        let a = f.new_var();
        assert_eq!(
            f.add_clause(Clause::new([a.positive(), a.negative()])),
            Err(FormulaError::Tautology(a))
        );
        assert_eq!(f.add_clause(Clause::new([])), Err(FormulaError::EmptyClause));
        assert_eq!(
            f.add_clause(Clause::new([VarId(7).positive()])),
            Err(FormulaError::UnknownVariable(VarId(7)))
        );
    }

    #[test]
    fn selector_is_recorded() {
        let mut f = Formula::new();
        let [s, x, y] = vars(&mut f, 3)[..] else { unreachable!() };
        let h = f
            .add_clause(Clause::new([x.positive(), y.positive()]).with_selector(s))
            .unwrap();
        assert_eq!(f.clause(h).selector, Some(s));
        assert_eq!(
            f.clause(h).stored_literals(),
            vec![s.negative(), x.positive(), y.positive()]
        );
    }

    #[test]
    fn unit_against_assumption() {
        let mut f = Formula::new();
        let x = f.new_var();
        f.add_clause(Clause::new([x.positive()])).unwrap();
        assert_eq!(f.solve(&[x.negative()]), SolveResult::Unsat(vec![x.negative()]));
    }

    #[test]
    fn binary_clause_core() {
        let mut f = Formula::new();
        let [x, y] = vars(&mut f, 2)[..] else { unreachable!() };
        f.add_clause(Clause::new([x.positive(), y.positive()])).unwrap();
        match f.solve(&[x.negative(), y.negative()]) {
            SolveResult::Unsat(core) => {
                assert!(!core.is_empty());
                assert!(core.iter().all(|l| [x.negative(), y.negative()].contains(l)));
            }
            other => panic!("expected unsat, got {other:?}"),
        }
    }

    #[test]
    fn forced_y() {
        let mut f = Formula::new();
        let [x, y] = vars(&mut f, 2)[..] else { unreachable!() };
        f.add_clause(Clause::new([x.positive(), y.positive()])).unwrap();
        f.add_clause(Clause::new([x.negative(), y.positive()])).unwrap();
        match f.solve(&[]) {
            SolveResult::Sat(m) => assert!(m.value(y)),
            other => panic!("expected sat, got {other:?}"),
        }
    }

    #[test]
    fn selectors_switch_clauses() {
        let mut f = Formula::new();
        let [s1, s2, x] = vars(&mut f, 3)[..] else { unreachable!() };
        f.add_clause(Clause::new([x.positive()]).with_selector(s1)).unwrap();
        f.add_clause(Clause::new([x.negative()]).with_selector(s2)).unwrap();
        assert!(f.solve(&[s1.positive()]).is_sat());
        assert!(f.solve(&[s2.positive()]).is_sat());
        assert_eq!(
            f.solve(&[s1.positive(), s2.positive()]),
            SolveResult::Unsat(vec![s1.positive(), s2.positive()])
        );
        assert_eq!(f.solve_calls(), 3);
    }

    #[test]
    fn dimacs_export_has_header_and_labels() {
        let mut f = Formula::new();
        let [s, x] = vars(&mut f, 2)[..] else { unreachable!() };
        f.add_clause(
            Clause::new([x.positive()])
                .with_selector(s)
                .with_label("x holds")
                .with_category("Requirement"),
        )
        .unwrap();
        let text = f.to_dimacs();
        assert!(text.contains("c label 1 Requirement x holds\n"));
        assert!(text.contains("p cnf 2 1\n"));
        assert!(text.ends_with("-1 2 0\n"));
    }
}
