//! Evaluation: generated questions at fixed complexity levels, the full
//! parse / explain / refine pipeline, and an independent solver oracle.

use std::collections::BTreeSet;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;
use crate::encoder::{encode, LabeledKb};
use crate::explainer::{explain, Explained, Foil};
use crate::llm_gateway::{Gateway, GatewayError};
use crate::propcore::{Literal, SolveResult};
use crate::queryparse::{parse_llm, to_foil};
use crate::refiner::{codes_in, refine_template, word_count};
use crate::scheduler::{check_schedule, generate_schedule, next_schedule, Generated, Next, Schedule};

pub const DEFAULT_LEVELS: [usize; 4] = [1, 2, 4, 6];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("complexity level must be at least 1")]
    ZeroLevel,
    #[error("level {level} needs {level} distinct courses but the catalog has {available}")]
    CatalogTooSmall { level: usize, available: usize },
    #[error("the catalog admits no schedule")]
    Infeasible,
    #[error("cannot write report: {0}")]
    Io(String),
}

/// A short question about one or two courses.
#[derive(Clone, Debug)]
enum Unit {
    Why(String),
    WhyIn(String, usize),
    InsteadOf(String, String),
    InsteadOfIn(String, String, usize),
}

impl Unit {
    fn courses(&self) -> usize {
        match self {
            Unit::Why(_) | Unit::WhyIn(..) => 1,
            _ => 2,
        }
    }
}

fn render(unit: &Unit, schedule: &Schedule) -> String {
    let not = |c: &str| if schedule.semester_of(c).is_some() { "" } else { "not " };
    match unit {
        Unit::Why(c) => format!("{}{c}", not(c)),
        Unit::WhyIn(c, s) => {
            let neg = if schedule.semester_of(c) == Some(*s) { "" } else { "not " };
            format!("{neg}{c} in semester {}", s + 1)
        }
        Unit::InsteadOf(a, b) => format!("not {a} instead of {b}"),
        Unit::InsteadOfIn(a, b, s) => format!("{a} instead of {b} in semester {}", s + 1),
    }
}

/// `n` canonical questions, each naming exactly `level` distinct courses.
/// Deterministic in `seed`.
pub fn generate_queries(
    schedule: &Schedule,
    catalog: &Catalog,
    level: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<String>, EvalError> {
    if level == 0 {
        return Err(EvalError::ZeroLevel);
    }
    if catalog.len() < level {
        return Err(EvalError::CatalogTooSmall {
            level,
            available: catalog.len(),
        });
    }
    let codes: Vec<String> = catalog.courses().map(|c| c.code.clone()).collect();
    let sems = schedule.num_semesters();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (level as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut pool = codes.clone();
        pool.shuffle(&mut rng);
        let mut units = Vec::new();
        let mut left = level;
        while left > 0 {
            let scheduled_pos = pool.iter().position(|c| schedule.semester_of(c).is_some());
            let pair = left >= 2 && pool.len() >= 2 && scheduled_pos.is_some() && rng.gen_bool(0.5);
            if pair {
                let b = pool.remove(scheduled_pos.expect("checked"));
                let a = pool.pop().expect("pool has another course");
                units.push(if rng.gen_bool(0.5) {
                    Unit::InsteadOf(a, b)
                } else {
                    let s = match rng.gen_range(0..2) {
                        0 => schedule.semester_of(&b).expect("scheduled"),
                        _ => rng.gen_range(0..sems),
                    };
                    Unit::InsteadOfIn(a, b, s)
                });
            } else {
                let c = pool.pop().expect("enough courses");
                units.push(match rng.gen_range(0..3) {
                    0 => Unit::Why(c),
                    1 => {
                        let s = schedule.semester_of(&c).unwrap_or_else(|| rng.gen_range(0..sems));
                        Unit::WhyIn(c, s)
                    }
                    _ => {
                        let s = rng.gen_range(0..sems);
                        Unit::WhyIn(c, s)
                    }
                });
            }
            left -= units.last().expect("pushed").courses();
        }
        let body: Vec<String> = units.iter().map(|u| render(u, schedule)).collect();
        out.push(format!("Why {}?", body.join(" and ")));
    }
    Ok(out)
}

/// Splits `total` queries as evenly as possible over `levels` (earlier
/// levels take the remainder).
pub fn split_total(total: usize, levels: usize) -> Vec<usize> {
    if levels == 0 {
        return Vec::new();
    }
    (0..levels)
        .map(|i| total / levels + usize::from(i < total % levels))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    /// Complexity level, or "overall".
    pub level: String,
    pub n: usize,
    pub accuracy_pct: f64,
    pub avg_words: f64,
    pub avg_runtime_sec: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalFailure {
    pub level: usize,
    pub query: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub overall: Option<EvalRow>,
    pub failures: Vec<EvalFailure>,
    /// Answers that were alternative schedules rather than explanations.
    pub alternatives: usize,
}

impl EvalReport {
    /// CSV with columns level, n, accuracy_pct, avg_words, avg_runtime_sec
    /// and a final `overall` row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| EvalError::Io(e.to_string());
        w.write_record(["level", "n", "accuracy_pct", "avg_words", "avg_runtime_sec"])
            .map_err(io)?;
        for row in self.rows.iter().chain(self.overall.as_ref()) {
            w.write_record([
                row.level.clone(),
                row.n.to_string(),
                format!("{:.1}", row.accuracy_pct),
                format!("{:.1}", row.avg_words),
                format!("{:.4}", row.avg_runtime_sec),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| EvalError::Io(e.to_string()))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

#[derive(Clone, Debug)]
pub struct EvalConfig {
    pub levels: Vec<usize>,
    /// Queries per level, parallel to `levels`.
    pub per_level: Vec<usize>,
    pub seed: u64,
    /// Distinct schedules the questions are spread over.
    pub schedules: usize,
}

impl EvalConfig {
    pub fn uniform(levels: &[usize], n: usize, seed: u64) -> Self {
        EvalConfig {
            levels: levels.to_vec(),
            per_level: vec![n; levels.len()],
            seed,
            schedules: 5,
        }
    }

    pub fn with_total(levels: &[usize], total: usize, seed: u64) -> Self {
        EvalConfig {
            levels: levels.to_vec(),
            per_level: split_total(total, levels.len()),
            seed,
            schedules: 5,
        }
    }
}

fn solve_is_sat(kb: &mut LabeledKb, assumptions: &[Literal]) -> bool {
    matches!(kb.formula_mut().solve(assumptions), SolveResult::Sat(_))
}

/// Independent check of one answer using only solver calls and the
/// schedule checker.
fn oracle(
    kb: &mut LabeledKb,
    catalog: &Catalog,
    foil: &Foil,
    answer: &Explained,
    text: Option<&str>,
) -> Result<(), String> {
    match answer {
        Explained::Alternative(s) => {
            let v = check_schedule(s, catalog);
            if !v.is_empty() {
                return Err(format!("alternative violates policy: {}", v[0]));
            }
            if !foil.holds_in(s) {
                return Err("alternative does not realize the foil".into());
            }
            Ok(())
        }
        Explained::Minimal(e) => {
            if e.clauses.is_empty() {
                return Err("empty explanation".into());
            }
            let blocking: BTreeSet<_> = kb.blocking_clauses().iter().copied().collect();
            let mut selectors = Vec::new();
            for h in &e.clauses {
                if blocking.contains(h) {
                    return Err("explanation contains a blocking clause".into());
                }
                let entry = kb.entry(*h).ok_or("explanation names an unselectable clause")?;
                selectors.push(entry.selector.positive());
            }
            let with = |skip: Option<usize>| {
                let mut a = foil.compiled.clone();
                a.extend(selectors.iter().enumerate().filter(|(i, _)| Some(*i) != skip).map(|(_, l)| *l));
                a
            };
            if solve_is_sat(kb, &with(None)) {
                return Err("explanation does not refute the foil".into());
            }
            for i in 0..selectors.len() {
                if !solve_is_sat(kb, &with(Some(i))) {
                    return Err(format!("explanation is not minimal (clause {i} redundant)"));
                }
            }
            if let Some(text) = text {
                let said = codes_in(text, catalog);
                for label in &e.labels {
                    for code in codes_in(label, catalog) {
                        if !said.contains(&code) {
                            return Err(format!("answer omits {code}"));
                        }
                    }
                }
            }
            Ok(())
        }
    }
}

fn enumerate_schedules(kb: &mut LabeledKb, k: usize) -> Result<Vec<Schedule>, EvalError> {
    let Generated::Schedule(first) = generate_schedule(kb) else {
        return Err(EvalError::Infeasible);
    };
    let mut out = vec![first];
    while out.len() < k.max(1) {
        match next_schedule(kb, out.last().expect("non-empty")) {
            Next::Schedule(s) => out.push(s),
            Next::Exhausted => break,
        }
    }
    Ok(out)
}

struct Tally {
    n: usize,
    passed: usize,
    words: usize,
    explained: usize,
    runtime: f64,
}

fn row(level: String, t: &Tally) -> EvalRow {
    let div = |a: f64, b: usize| if b == 0 { 0.0 } else { a / b as f64 };
    EvalRow {
        level,
        n: t.n,
        accuracy_pct: div(100.0 * t.passed as f64, t.n),
        avg_words: div(t.words as f64, t.explained),
        avg_runtime_sec: div(t.runtime, t.n),
    }
}

/// Runs every generated question through parse, foil compilation,
/// explanation and template refinement, and checks each answer with the
/// oracle. Pipeline errors count as failures; they never stop the run.
pub fn run_eval(catalog: &Catalog, config: &EvalConfig, gateway: &Gateway) -> Result<EvalReport, EvalError> {
    let mut report = EvalReport::default();
    if config.levels.is_empty() {
        return Ok(report);
    }
    let mut kb = encode(catalog);
    let schedules = enumerate_schedules(&mut kb, config.schedules)?;
    let mut total = Tally { n: 0, passed: 0, words: 0, explained: 0, runtime: 0.0 };
    for (li, &level) in config.levels.iter().enumerate() {
        let n = config.per_level.get(li).copied().unwrap_or(0);
        let mut tally = Tally { n: 0, passed: 0, words: 0, explained: 0, runtime: 0.0 };
        for (si, schedule) in schedules.iter().enumerate() {
            let share = split_total(n, schedules.len())[si];
            let seed = config.seed.wrapping_mul(31).wrapping_add(si as u64);
            for query in generate_queries(schedule, catalog, level, share, seed)? {
                tally.n += 1;
                let outcome = (|| -> Result<(f64, Option<usize>), String> {
                    let parsed = parse_llm(&query, schedule, catalog, gateway).map_err(|e| e.to_string())?;
                    if parsed.complexity != level {
                        return Err(format!("parsed complexity {} != {level}", parsed.complexity));
                    }
                    let foil = to_foil(&parsed, schedule, &kb).map_err(|e| e.to_string())?;
                    let start = Instant::now();
                    let answer = explain(&mut kb, &foil).map_err(|e| e.to_string())?;
                    let refined = match &answer {
                        Explained::Minimal(e) => Some(refine_template(e)),
                        Explained::Alternative(_) => None,
                    };
                    let elapsed = start.elapsed().as_secs_f64();
                    oracle(&mut kb, catalog, &foil, &answer, refined.as_ref().map(|r| r.text.as_str()))?;
                    Ok((elapsed, refined.map(|r| word_count(&r.text))))
                })();
                match outcome {
                    Ok((elapsed, words)) => {
                        tally.passed += 1;
                        tally.runtime += elapsed;
                        match words {
                            Some(w) => {
                                tally.words += w;
                                tally.explained += 1;
                            }
                            None => report.alternatives += 1,
                        }
                    }
                    Err(reason) => report.failures.push(EvalFailure { level, query, reason }),
                }
            }
        }
        total.n += tally.n;
        total.passed += tally.passed;
        total.words += tally.words;
        total.explained += tally.explained;
        total.runtime += tally.runtime;
        report.rows.push(row(level.to_string(), &tally));
    }
    report.overall = Some(row("overall".into(), &total));
    Ok(report)
}

/// Interface for the LLM-only comparison: the question and a textual
/// context (schedule, courses, constraints) in, an answer out.
pub trait BaselineAdapter {
    fn answer(&self, question: &str, context: &str) -> Result<String, GatewayError>;
}

/// Baseline that sends question and context straight to a gateway.
pub struct GatewayBaseline<'a> {
    pub gateway: &'a Gateway,
}

pub fn baseline_prompt(question: &str, context: &str) -> String {
    format!(
        "You help students understand their course schedule.\n\n{}\n\nQuestion: {}\nAnswer:",
        context.trim_end(),
        question.trim()
    )
}

impl BaselineAdapter for GatewayBaseline<'_> {
    fn answer(&self, question: &str, context: &str) -> Result<String, GatewayError> {
        self.gateway.complete(&baseline_prompt(question, context))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::queryparse::parse;
    use crate::scheduler::tests::{sample_schedule, HAND_PLAN};

    #[test]
    fn split_is_even() {
        assert_eq!(split_total(550, 4), vec![138, 138, 137, 137]);
        assert_eq!(split_total(3, 0), Vec::<usize>::new());
    }

    #[test]
    fn generated_queries_have_their_level() {
        let cat = Catalog::sample();
        let s = sample_schedule(&cat, &HAND_PLAN);
        for level in DEFAULT_LEVELS {
            let qs = generate_queries(&s, &cat, level, 30, 7).unwrap();
            assert_eq!(qs.len(), 30);
            for q in &qs {
                let p = parse(q, &s, &cat).unwrap_or_else(|e| panic!("{q}: {e}"));
                assert_eq!(p.complexity, level, "{q}");
            }
        }
        assert_eq!(
            generate_queries(&s, &cat, 2, 10, 3).unwrap(),
            generate_queries(&s, &cat, 2, 10, 3).unwrap()
        );
    }

    #[test]
    fn level_one_forms() {
        let cat = Catalog::sample();
        let s = sample_schedule(&cat, &HAND_PLAN);
        for q in generate_queries(&s, &cat, 1, 40, 1).unwrap() {
            assert!(q.starts_with("Why "), "{q}");
            assert!(!q.contains(" and "), "{q}");
        }
    }

    #[test]
    fn too_small_and_zero_level() {
        let cat = Catalog::sample();
        let s = sample_schedule(&cat, &HAND_PLAN);
        assert_eq!(generate_queries(&s, &cat, 0, 1, 0), Err(EvalError::ZeroLevel));
        assert!(matches!(
            generate_queries(&s, &cat, 100, 1, 0),
            Err(EvalError::CatalogTooSmall { .. })
        ));
    }

    #[test]
    fn empty_levels_give_header_only() {
        let r = run_eval(&Catalog::sample(), &EvalConfig::uniform(&[], 5, 0), &Gateway::disabled()).unwrap();
        assert_eq!(r.to_csv_string(), "level,n,accuracy_pct,avg_words,avg_runtime_sec\n");
    }

    #[test]
    fn small_run_is_fully_correct() {
        let cat = Catalog::sample();
        let r = run_eval(&cat, &EvalConfig::uniform(&[1, 2], 10, 3), &Gateway::disabled()).unwrap();
        assert!(r.failures.is_empty(), "{:?}", r.failures);
        assert_eq!(r.overall.as_ref().unwrap().accuracy_pct, 100.0);
        assert_eq!(r.rows.len(), 2);
        let csv = r.to_csv_string();
        assert!(csv.lines().last().unwrap().starts_with("overall,20,100.0,"));
    }

    #[test]
    fn baseline_goes_through_gateway() {
        let prompt = baseline_prompt("Why not XOX R89?", "ctx");
        let g = Gateway::stub([(prompt.as_str(), "Because.")]);
        let b = GatewayBaseline { gateway: &g };
        assert_eq!(b.answer("Why not XOX R89?", "ctx").unwrap(), "Because.");
    }
}
