//! Conflict-driven clause learning over the formula's clause store.
//!
//! - two watched literals per clause, blocker literals in the watch lists
//! - first-UIP learning with local minimization
//! - activity-ordered decisions, ties broken by the lowest variable index
//! - assumptions occupy the first decision levels; a failed assumption is
//!   traced back over the implication graph to produce the unsat core
//! - Luby restarts on a fixed conflict schedule (no randomness)

use super::Literal;

const VAR_DECAY: f64 = 0.95;
const CLAUSE_DECAY: f64 = 0.999;
const RESTART_BASE: u64 = 100;

#[derive(Clone, Debug)]
struct ClauseSlot {
    lits: Vec<Literal>,
    learnt: bool,
    deleted: bool,
    activity: f64,
    lbd: u32,
}

#[derive(Clone, Copy, Debug)]
struct Watcher {
    cref: u32,
    blocker: Literal,
}

/// Outcome of one search, before the formula wraps it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum Outcome {
    Sat(Vec<bool>),
    Unsat(Vec<Literal>),
}

#[derive(Clone, Debug, Default)]
struct VarHeap {
    heap: Vec<u32>,
    indices: Vec<Option<usize>>,
}

impl VarHeap {
    fn grow(&mut self) {
        self.indices.push(None);
    }

    fn contains(&self, v: u32) -> bool {
        self.indices[v as usize].is_some()
    }

    fn higher(act: &[f64], a: u32, b: u32) -> bool {
        let (x, y) = (act[a as usize], act[b as usize]);
        x > y || (x == y && a < b)
    }

    fn insert(&mut self, v: u32, act: &[f64]) {
        if self.contains(v) {
            return;
        }
        self.heap.push(v);
        let pos = self.heap.len() - 1;
        self.indices[v as usize] = Some(pos);
        self.sift_up(pos, act);
    }

    fn bumped(&mut self, v: u32, act: &[f64]) {
        if let Some(pos) = self.indices[v as usize] {
            self.sift_up(pos, act);
        }
    }

    fn pop(&mut self, act: &[f64]) -> Option<u32> {
        let top = *self.heap.first()?;
        let last = self.heap.pop().expect("non-empty");
        self.indices[top as usize] = None;
        if !self.heap.is_empty() {
            self.heap[0] = last;
            self.indices[last as usize] = Some(0);
            self.sift_down(0, act);
        }
        Some(top)
    }

    fn sift_up(&mut self, mut pos: usize, act: &[f64]) {
        let v = self.heap[pos];
        while pos > 0 {
            let parent = (pos - 1) / 2;
            let p = self.heap[parent];
            if !Self::higher(act, v, p) {
                break;
            }
            self.heap[pos] = p;
            self.indices[p as usize] = Some(pos);
            pos = parent;
        }
        self.heap[pos] = v;
        self.indices[v as usize] = Some(pos);
    }

    fn sift_down(&mut self, mut pos: usize, act: &[f64]) {
        let v = self.heap[pos];
        let n = self.heap.len();
        loop {
            let left = 2 * pos + 1;
            if left >= n {
                break;
            }
            let right = left + 1;
            let child = if right < n && Self::higher(act, self.heap[right], self.heap[left]) {
                right
            } else {
                left
            };
            let c = self.heap[child];
            if !Self::higher(act, c, v) {
                break;
            }
            self.heap[pos] = c;
            self.indices[c as usize] = Some(pos);
            pos = child;
        }
        self.heap[pos] = v;
        self.indices[v as usize] = Some(pos);
    }
}

/// Truth value of a literal under `assigns`: 1 true, -1 false, 0 unassigned.
#[inline]
fn value_of(assigns: &[i8], lit: Literal) -> i8 {
    let v = assigns[lit.slot()];
    if lit.is_positive() {
        v
    } else {
        -v
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Solver {
    clauses: Vec<ClauseSlot>,
    watches: Vec<Vec<Watcher>>,
    assigns: Vec<i8>,
    level: Vec<u32>,
    reason: Vec<Option<u32>>,
    trail: Vec<Literal>,
    trail_lim: Vec<usize>,
    qhead: usize,
    activity: Vec<f64>,
    var_inc: f64,
    cla_inc: f64,
    heap: VarHeap,
    phase: Vec<bool>,
    seen: Vec<bool>,
    learnts: Vec<u32>,
    max_learnts: f64,
    ok: bool,
    pub(crate) conflicts: u64,
}

impl Default for Solver {
    fn default() -> Self {
        Self {
            clauses: Vec::new(),
            watches: Vec::new(),
            assigns: Vec::new(),
            level: Vec::new(),
            reason: Vec::new(),
            trail: Vec::new(),
            trail_lim: Vec::new(),
            qhead: 0,
            activity: Vec::new(),
            var_inc: 1.0,
            cla_inc: 1.0,
            heap: VarHeap::default(),
            phase: Vec::new(),
            seen: Vec::new(),
            learnts: Vec::new(),
            max_learnts: 2000.0,
            ok: true,
            conflicts: 0,
        }
    }
}

impl Solver {
    pub(crate) fn new_var(&mut self) {
        let slot = self.assigns.len() as u32;
        self.assigns.push(0);
        self.level.push(0);
        self.reason.push(None);
        self.activity.push(0.0);
        self.phase.push(false);
        self.seen.push(false);
        self.watches.push(Vec::new());
        self.watches.push(Vec::new());
        self.heap.grow();
        self.heap.insert(slot, &self.activity);
    }

    pub(crate) fn num_learnts(&self) -> usize {
        self.learnts.len()
    }

    fn decision_level(&self) -> usize {
        self.trail_lim.len()
    }

    /// Adds a permanent clause at decision level 0. Literals must be
    /// duplicate-free and non-tautological.
    pub(crate) fn add_clause(&mut self, lits: &[Literal]) {
        debug_assert_eq!(self.decision_level(), 0);
        if !self.ok {
            return;
        }
        let mut kept = Vec::with_capacity(lits.len());
        for &l in lits {
            match value_of(&self.assigns, l) {
                1 => return,
                -1 => {}
                _ => kept.push(l),
            }
        }
        match kept.len() {
            0 => self.ok = false,
            1 => {
                self.enqueue(kept[0], None);
                if self.propagate().is_some() {
                    self.ok = false;
                }
            }
            _ => {
                let cref = self.clauses.len() as u32;
                self.clauses.push(ClauseSlot {
                    lits: kept,
                    learnt: false,
                    deleted: false,
                    activity: 0.0,
                    lbd: 0,
                });
                self.attach(cref);
                let base = self.clauses.len();
                self.max_learnts = self.max_learnts.max(base as f64 / 3.0);
            }
        }
    }

    fn attach(&mut self, cref: u32) {
        let c = &self.clauses[cref as usize];
        let (a, b) = (c.lits[0], c.lits[1]);
        self.watches[a.code() as usize].push(Watcher { cref, blocker: b });
        self.watches[b.code() as usize].push(Watcher { cref, blocker: a });
    }

    fn enqueue(&mut self, lit: Literal, reason: Option<u32>) {
        let slot = lit.slot();
        self.assigns[slot] = if lit.is_positive() { 1 } else { -1 };
        self.level[slot] = self.decision_level() as u32;
        self.reason[slot] = reason;
        self.trail.push(lit);
    }

    fn propagate(&mut self) -> Option<u32> {
        while self.qhead < self.trail.len() {
            let p = self.trail[self.qhead];
            self.qhead += 1;
            let false_lit = !p;
            let mut ws = std::mem::take(&mut self.watches[false_lit.code() as usize]);
            let mut i = 0;
            let mut j = 0;
            let mut conflict = None;
            while i < ws.len() {
                let w = ws[i];
                i += 1;
                if value_of(&self.assigns, w.blocker) == 1 {
                    ws[j] = w;
                    j += 1;
                    continue;
                }
                let clause = &mut self.clauses[w.cref as usize];
                if clause.deleted {
                    continue;
                }
                if clause.lits[0] == false_lit {
                    clause.lits.swap(0, 1);
                }
                let first = clause.lits[0];
                let kept = Watcher {
                    cref: w.cref,
                    blocker: first,
                };
                if first != w.blocker && value_of(&self.assigns, first) == 1 {
                    ws[j] = kept;
                    j += 1;
                    continue;
                }
                let mut moved = false;
                for k in 2..clause.lits.len() {
                    if value_of(&self.assigns, clause.lits[k]) != -1 {
                        clause.lits.swap(1, k);
                        let new_watch = clause.lits[1];
                        self.watches[new_watch.code() as usize].push(kept);
                        moved = true;
                        break;
                    }
                }
                if moved {
                    continue;
                }
                ws[j] = kept;
                j += 1;
                if value_of(&self.assigns, first) == -1 {
                    conflict = Some(w.cref);
                    while i < ws.len() {
                        ws[j] = ws[i];
                        j += 1;
                        i += 1;
                    }
                    self.qhead = self.trail.len();
                } else {
                    self.enqueue(first, Some(w.cref));
                }
            }
            ws.truncate(j);
            self.watches[false_lit.code() as usize] = ws;
            if conflict.is_some() {
                return conflict;
            }
        }
        None
    }

    fn bump_var(&mut self, slot: usize) {
        self.activity[slot] += self.var_inc;
        if self.activity[slot] > 1e100 {
            for a in self.activity.iter_mut() {
                *a *= 1e-100;
            }
            self.var_inc *= 1e-100;
        }
        self.heap.bumped(slot as u32, &self.activity);
    }

    fn bump_clause(&mut self, cref: u32) {
        let c = &mut self.clauses[cref as usize];
        c.activity += self.cla_inc;
        if c.activity > 1e20 {
            for &l in &self.learnts {
                self.clauses[l as usize].activity *= 1e-20;
            }
            self.cla_inc *= 1e-20;
        }
    }

    fn analyze(&mut self, mut confl: u32) -> (Vec<Literal>, usize, u32) {
        let current = self.decision_level() as u32;
        let mut learnt = vec![Literal::from_code(0)];
        let mut path = 0usize;
        let mut p: Option<Literal> = None;
        let mut index = self.trail.len();
        loop {
            if self.clauses[confl as usize].learnt {
                self.bump_clause(confl);
            }
            let start = usize::from(p.is_some());
            let len = self.clauses[confl as usize].lits.len();
            for k in start..len {
                let q = self.clauses[confl as usize].lits[k];
                let slot = q.slot();
                if !self.seen[slot] && self.level[slot] > 0 {
                    self.bump_var(slot);
                    self.seen[slot] = true;
                    if self.level[slot] >= current {
                        path += 1;
                    } else {
                        learnt.push(q);
                    }
                }
            }
            loop {
                index -= 1;
                if self.seen[self.trail[index].slot()] {
                    break;
                }
            }
            let lit = self.trail[index];
            p = Some(lit);
            self.seen[lit.slot()] = false;
            path -= 1;
            if path == 0 {
                break;
            }
            confl = self.reason[lit.slot()].expect("implied literal has a reason");
        }
        learnt[0] = !p.expect("conflict has a UIP");

        // Local minimization: drop literals whose reason is subsumed by the clause.
        let to_clear: Vec<Literal> = learnt.clone();
        let mut kept = vec![learnt[0]];
        for &l in &learnt[1..] {
            let redundant = match self.reason[l.slot()] {
                None => false,
                Some(r) => self.clauses[r as usize].lits[1..].iter().all(|q| {
                    self.seen[q.slot()] || self.level[q.slot()] == 0
                }),
            };
            if !redundant {
                kept.push(l);
            }
        }
        for l in to_clear {
            self.seen[l.slot()] = false;
        }
        let mut learnt = kept;

        let mut back = 0usize;
        if learnt.len() > 1 {
            let mut max_i = 1;
            for k in 2..learnt.len() {
                if self.level[learnt[k].slot()] > self.level[learnt[max_i].slot()] {
                    max_i = k;
                }
            }
            learnt.swap(1, max_i);
            back = self.level[learnt[1].slot()] as usize;
        }
        let mut levels: Vec<u32> = learnt.iter().map(|l| self.level[l.slot()]).collect();
        levels.sort_unstable();
        levels.dedup();
        (learnt, back, levels.len() as u32)
    }

    /// `failed` is an assumption whose negation is currently true.
    fn analyze_final(&mut self, failed: Literal) -> Vec<Literal> {
        let mut core = vec![failed];
        if self.decision_level() == 0 {
            return core;
        }
        let p = !failed;
        self.seen[p.slot()] = true;
        for i in (self.trail_lim[0]..self.trail.len()).rev() {
            let lit = self.trail[i];
            let slot = lit.slot();
            if !self.seen[slot] {
                continue;
            }
            match self.reason[slot] {
                None => core.push(lit),
                Some(r) => {
                    for k in 1..self.clauses[r as usize].lits.len() {
                        let q = self.clauses[r as usize].lits[k];
                        if self.level[q.slot()] > 0 {
                            self.seen[q.slot()] = true;
                        }
                    }
                }
            }
            self.seen[slot] = false;
        }
        self.seen[p.slot()] = false;
        core
    }

    fn cancel_until(&mut self, level: usize) {
        if self.decision_level() <= level {
            return;
        }
        let stop = self.trail_lim[level];
        for i in (stop..self.trail.len()).rev() {
            let lit = self.trail[i];
            let slot = lit.slot();
            self.assigns[slot] = 0;
            self.reason[slot] = None;
            self.phase[slot] = lit.is_positive();
            self.heap.insert(slot as u32, &self.activity);
        }
        self.trail.truncate(stop);
        self.trail_lim.truncate(level);
        self.qhead = stop;
    }

    fn pick_branch(&mut self) -> Option<Literal> {
        while let Some(v) = self.heap.pop(&self.activity) {
            if self.assigns[v as usize] == 0 {
                return Some(Literal::from_slot(v as usize, self.phase[v as usize]));
            }
        }
        None
    }

    fn locked(&self, cref: u32) -> bool {
        let first = self.clauses[cref as usize].lits[0];
        self.reason[first.slot()] == Some(cref) && value_of(&self.assigns, first) == 1
    }

    fn reduce_db(&mut self) {
        let mut order = std::mem::take(&mut self.learnts);
        order.sort_by(|&a, &b| {
            let (ca, cb) = (&self.clauses[a as usize], &self.clauses[b as usize]);
            cb.lbd
                .cmp(&ca.lbd)
                .then(ca.activity.total_cmp(&cb.activity))
        });
        let half = order.len() / 2;
        let mut survivors = Vec::with_capacity(order.len() - half);
        for (i, cref) in order.into_iter().enumerate() {
            let c = &self.clauses[cref as usize];
            if i < half && c.lbd > 2 && !self.locked(cref) {
                let c = &mut self.clauses[cref as usize];
                c.deleted = true;
                c.lits = Vec::new();
            } else {
                survivors.push(cref);
            }
        }
        self.learnts = survivors;
        let clauses = &self.clauses;
        for ws in self.watches.iter_mut() {
            ws.retain(|w| !clauses[w.cref as usize].deleted);
        }
        self.max_learnts *= 1.1;
    }

    fn luby(y: f64, mut x: u64) -> f64 {
        let mut size = 1u64;
        let mut seq = 0i32;
        while size < x + 1 {
            seq += 1;
            size = 2 * size + 1;
        }
        while size - 1 != x {
            size = (size - 1) >> 1;
            seq -= 1;
            x %= size;
        }
        y.powi(seq)
    }

    pub(crate) fn solve(&mut self, assumptions: &[Literal]) -> Outcome {
        if !self.ok {
            return Outcome::Unsat(Vec::new());
        }
        let mut restarts = 0u64;
        loop {
            let budget = (Self::luby(2.0, restarts) * RESTART_BASE as f64) as u64;
            match self.search(assumptions, budget) {
                Some(out) => {
                    self.cancel_until(0);
                    return out;
                }
                None => {
                    restarts += 1;
                    self.cancel_until(0);
                }
            }
        }
    }

    fn search(&mut self, assumptions: &[Literal], budget: u64) -> Option<Outcome> {
        let mut local_conflicts = 0u64;
        loop {
            if let Some(confl) = self.propagate() {
                self.conflicts += 1;
                local_conflicts += 1;
                if self.decision_level() == 0 {
                    self.ok = false;
                    return Some(Outcome::Unsat(Vec::new()));
                }
                let (learnt, back, lbd) = self.analyze(confl);
                self.cancel_until(back);
                if learnt.len() == 1 {
                    self.enqueue(learnt[0], None);
                } else {
                    let cref = self.clauses.len() as u32;
                    let first = learnt[0];
                    self.clauses.push(ClauseSlot {
                        lits: learnt,
                        learnt: true,
                        deleted: false,
                        activity: 0.0,
                        lbd,
                    });
                    self.attach(cref);
                    self.learnts.push(cref);
                    self.bump_clause(cref);
                    self.enqueue(first, Some(cref));
                }
                self.var_inc /= VAR_DECAY;
                self.cla_inc /= CLAUSE_DECAY;
                continue;
            }

            if local_conflicts >= budget {
                return None;
            }
            if self.learnts.len() as f64 >= self.max_learnts {
                self.reduce_db();
            }

            let mut next = None;
            while self.decision_level() < assumptions.len() {
                let a = assumptions[self.decision_level()];
                match value_of(&self.assigns, a) {
                    1 => self.trail_lim.push(self.trail.len()),
                    -1 => return Some(Outcome::Unsat(self.analyze_final(a))),
                    _ => {
                        next = Some(a);
                        break;
                    }
                }
            }
            let decision = match next {
                Some(a) => a,
                None => match self.pick_branch() {
                    Some(l) => l,
                    None => {
                        let model = self.assigns.iter().map(|&v| v == 1).collect();
                        return Some(Outcome::Sat(model));
                    }
                },
            };
            self.trail_lim.push(self.trail.len());
            self.enqueue(decision, None);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn luby_prefix() {
        let seq: Vec<u32> = (0..9).map(|i| Solver::luby(2.0, i) as u32).collect();
        assert_eq!(seq, vec![1, 1, 2, 1, 1, 2, 4, 1, 1]);
    }

    #[test]
    fn heap_orders_by_activity_then_index() {
        let act = vec![0.0, 3.0, 3.0, 1.0];
        let mut h = VarHeap::default();
        for v in 0..4 {
            h.grow();
            h.insert(v, &act);
        }
        let order: Vec<u32> = std::iter::from_fn(|| h.pop(&act)).collect();
        assert_eq!(order, vec![1, 2, 3, 0]);
    }
}
