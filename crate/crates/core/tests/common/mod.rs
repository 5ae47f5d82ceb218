//! Independent oracles and generators shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use whynot_core::catalog::{Catalog, Category, Course, RequirementSet};
use whynot_core::scheduler::Schedule;

/// Truth-table satisfiability over variables 1..=n. Clauses and
/// assumptions are DIMACS integers.
pub fn brute_sat(num_vars: u32, clauses: &[Vec<i64>], assumptions: &[i64]) -> bool {
    (0u64..1 << num_vars).any(|bits| {
        let val = |l: i64| {
            let v = (bits >> (l.unsigned_abs() - 1)) & 1 == 1;
            if l > 0 {
                v
            } else {
                !v
            }
        };
        assumptions.iter().all(|&a| val(a)) && clauses.iter().all(|c| c.iter().any(|&l| val(l)))
    })
}

pub const HAND_PLAN: [&[&str]; 8] = [
    &["VPC Z88", "YNP H57", "JWF J68", "CHE E21", "ECO J11"],
    &["XOX R89", "KQM B21", "JWF J69", "PLN F33", "BIO F31"],
    &["WJW R89", "KQM B34", "RTA C45", "HZD E12", "TCE K52"],
    &["MVS G71", "XOX R92", "BXQ L19", "LAP D94", "UUE T98"],
    &["DKS M40", "DKS M55", "FRO N12", "GTP P27", "HAV Q31"],
    &["CMB S18", "NWE T09", "QPL U64", "RZI V73", "SBV W26"],
    &["TYM X81", "UKA Y15", "VHE Z37", "PSY K21", "ENG Q71"],
    &["WOD A52", "XIR B68", "ZUF C90", "HIS L31", "COM R81"],
];

pub fn plan(catalog: &Catalog, rows: &[&[&str]]) -> Schedule {
    Schedule::from_placements(
        rows.len(),
        rows.iter()
            .enumerate()
            .flat_map(|(s, cs)| cs.iter().map(move |c| (c.to_string(), s))),
        |c| catalog.credits(c),
    )
}

pub fn hand_plan(catalog: &Catalog) -> Schedule {
    plan(catalog, &HAND_PLAN)
}

/// Placement sets of a schedule, in a canonical order.
pub fn placement_set(schedule: &Schedule) -> Vec<(String, usize)> {
    let mut v: Vec<(String, usize)> = schedule.placements().map(|(c, s)| (c.to_string(), s)).collect();
    v.sort();
    v
}

/// Validity of a placement map, written directly from the requirement set.
pub fn valid_placement(catalog: &Catalog, placed: &BTreeMap<&str, usize>) -> bool {
    let req = catalog.requirements();
    if !req.required_courses.iter().all(|r| placed.contains_key(r.as_str())) {
        return false;
    }
    for (&c, &s) in placed {
        let course = catalog.course(c).expect("catalog course");
        for p in &course.prerequisites {
            match placed.get(p.as_str()) {
                Some(&t) if t < s => {}
                _ => return false,
            }
        }
    }
    let mut per_sem = vec![0u32; req.num_semesters];
    let mut per_cat: BTreeMap<Category, u32> = BTreeMap::new();
    let mut total = 0;
    for (&c, &s) in placed {
        let course = catalog.course(c).expect("catalog course");
        per_sem[s] += course.credits;
        *per_cat.entry(course.category).or_default() += course.credits;
        total += course.credits;
    }
    if per_sem
        .iter()
        .any(|&cr| cr > 0 && (cr < req.semester_credit_min || cr > req.semester_credit_max))
    {
        return false;
    }
    if total < req.total_credit_min {
        return false;
    }
    req.category_credit_min
        .iter()
        .all(|(cat, &min)| per_cat.get(cat).copied().unwrap_or(0) >= min)
}

/// Every valid schedule by exhaustive assignment of each course to
/// "absent" or one semester. Gives up (None) past `cap` results.
pub fn brute_schedules(catalog: &Catalog, cap: usize) -> Option<BTreeSet<Vec<(String, usize)>>> {
    let codes: Vec<&str> = catalog.courses().map(|c| c.code.as_str()).collect();
    let sems = catalog.requirements().num_semesters;
    let base = sems + 1;
    let total = base.pow(codes.len() as u32);
    let mut out = BTreeSet::new();
    let mut placed = BTreeMap::new();
    for mut k in 0..total {
        placed.clear();
        for code in &codes {
            let digit = k % base;
            k /= base;
            if digit > 0 {
                placed.insert(*code, digit - 1);
            }
        }
        if valid_placement(catalog, &placed) {
            let mut v: Vec<(String, usize)> = placed.iter().map(|(c, s)| (c.to_string(), *s)).collect();
            v.sort();
            out.insert(v);
            if out.len() > cap {
                return None;
            }
        }
    }
    Some(out)
}

/// A random valid catalog with at most `max_courses` courses and
/// `max_sems` semesters. Prerequisites point at earlier courses only.
pub fn random_catalog<R: Rng>(rng: &mut R, max_courses: usize, max_sems: usize) -> Catalog {
    let n = rng.gen_range(1..=max_courses);
    let sems = rng.gen_range(1..=max_sems);
    let cats = [Category::Core, Category::CSElective, Category::ScienceElective];
    let mut courses = Vec::new();
    for i in 0..n {
        let prerequisites = (0..i)
            .filter(|_| rng.gen_bool(0.25))
            .map(|j| format!("C {j}"))
            .collect();
        courses.push(Course {
            code: format!("C {i}"),
            title: format!("Course {i}"),
            credits: rng.gen_range(1..=4),
            prerequisites,
            category: cats[rng.gen_range(0..cats.len())],
        });
    }
    let semester_credit_min = rng.gen_range(0..=4);
    let semester_credit_max = rng.gen_range(semester_credit_min.max(1)..=semester_credit_min + 6);
    let sum: u32 = courses.iter().map(|c| c.credits).sum();
    let capacity = semester_credit_max * sems as u32;
    let total_credit_min = rng.gen_range(0..=sum.min(capacity));
    let mut category_credit_min = BTreeMap::new();
    for cat in cats {
        let have: u32 = courses.iter().filter(|c| c.category == cat).map(|c| c.credits).sum();
        if have > 0 && rng.gen_bool(0.4) {
            category_credit_min.insert(cat, rng.gen_range(1..=have));
        }
    }
    let required_courses = courses
        .iter()
        .filter(|_| rng.gen_bool(0.3))
        .map(|c| c.code.clone())
        .collect();
    Catalog::new(
        courses,
        RequirementSet {
            num_semesters: sems,
            total_credit_min,
            category_credit_min,
            semester_credit_min,
            semester_credit_max,
            required_courses,
        },
    )
    .expect("generator builds valid catalogs")
}
