use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use whynot_core::catalog::{load_catalog, save_catalog, Catalog, CatalogError, Category, Course, RequirementSet, Violation};

fn course(code: String, prerequisites: Vec<String>) -> Course {
    Course {
        code,
        title: "t".into(),
        credits: 3,
        prerequisites,
        category: Category::CSElective,
    }
}

fn reqs() -> RequirementSet {
    RequirementSet {
        num_semesters: 4,
        total_credit_min: 0,
        category_credit_min: BTreeMap::new(),
        semester_credit_min: 0,
        semester_credit_max: 15,
        required_courses: BTreeSet::new().into_iter().collect(),
    }
}

/// Plain recursive DFS with colors.
fn has_cycle(edges: &BTreeMap<usize, Vec<usize>>, n: usize) -> bool {
    fn visit(u: usize, edges: &BTreeMap<usize, Vec<usize>>, color: &mut [u8]) -> bool {
        color[u] = 1;
        for &v in edges.get(&u).into_iter().flatten() {
            if color[v] == 1 || (color[v] == 0 && visit(v, edges, color)) {
                return true;
            }
        }
        color[u] = 2;
        false
    }
    let mut color = vec![0u8; n];
    (0..n).any(|u| color[u] == 0 && visit(u, &edges, &mut color))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn cycle_detection_matches_dfs(n in 1usize..8, raw in prop::collection::vec((0usize..8, 0usize..8), 0..14)) {
        let mut edges: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (a, b) in raw {
            let (a, b) = (a % n, b % n);
            if a != b && !edges.get(&a).is_some_and(|v| v.contains(&b)) {
                edges.entry(a).or_default().push(b);
            }
        }
        let courses = (0..n)
            .map(|i| course(format!("K {i}"), edges.get(&i).into_iter().flatten().map(|p| format!("K {p}")).collect()))
            .collect();
        let expect = has_cycle(&edges, n);
        match Catalog::new(courses, reqs()) {
            Ok(c) => {
                prop_assert!(!expect);
                let order = c.topological_order().unwrap();
                let pos: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
                for course in c.courses() {
                    for p in &course.prerequisites {
                        prop_assert!(pos[p.as_str()] < pos[course.code.as_str()]);
                    }
                }
            }
            Err(CatalogError::Invalid(v)) => {
                prop_assert!(expect);
                let cycle = v.iter().find_map(|x| match x { Violation::Cycle(c) => Some(c.clone()), _ => None });
                let cycle = cycle.expect("cycle violation reported");
                prop_assert!(cycle.len() >= 2);
            }
            Err(e) => prop_assert!(false, "{e}"),
        }
    }
}

#[test]
fn sample_round_trips_through_json_and_disk() {
    let cat = Catalog::sample();
    let again = Catalog::from_json(&cat.to_json()).unwrap();
    assert_eq!(again, cat);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    save_catalog(&cat, &path).unwrap();
    assert_eq!(load_catalog(&path).unwrap(), cat);
    assert!(matches!(load_catalog(dir.path().join("missing.json")), Err(CatalogError::Io { .. })));
}

#[test]
fn sample_shape() {
    let cat = Catalog::sample();
    let req = cat.requirements();
    assert_eq!(req.num_semesters, 8);
    assert_eq!(req.total_credit_min, 120);
    assert_eq!(req.category_credit_min.get(&Category::CSElective), Some(&45));
    assert!(cat.topological_order().is_ok());
    assert_eq!(cat.course("WJW R89").unwrap().prerequisites, vec!["XOX R89".to_string()]);
}

/// Independent scorer: the best of normalized edit similarity, partial
/// code-token containment and title token overlap, per course.
fn reference_score(query: &str, code: &str, title: &str) -> f64 {
    let q = query.split_whitespace().collect::<Vec<_>>().join(" ").to_uppercase();
    if q == code {
        return 1.0;
    }
    let edit = strsim::normalized_levenshtein(&q, code);
    let qt: Vec<&str> = q.split(' ').collect();
    let ct: Vec<&str> = code.split(' ').collect();
    let partial = if qt.len() < ct.len() && qt.iter().all(|t| ct.contains(t)) { 0.85 } else { 0.0 };
    let words = |s: &str| -> BTreeSet<String> {
        s.split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .filter(|w| !["a", "an", "the", "of", "to", "for"].contains(&w.as_str()))
            .collect()
    };
    let (a, b) = (words(query), words(title));
    let dice = if a.is_empty() || b.is_empty() {
        0.0
    } else {
        2.0 * a.intersection(&b).count() as f64 / (a.len() + b.len()) as f64
    };
    edit.max(partial).max(dice * 0.95).min(0.95)
}

#[test]
fn resolve_course_matches_reference_scorer() {
    let cat = Catalog::sample();
    let queries = [
        "XOX R89", "xox r89", "XOX", "R89", "XOX R8", "Data Structures", "Machine Learning",
        "calculus", "PHY", "Intro Computer Science", "algorithms", "KQM B3", "nonsense words",
    ];
    for q in queries {
        let got = cat.resolve_course(q);
        let mut want: Vec<(String, f64)> = cat
            .courses()
            .map(|c| (c.code.clone(), reference_score(q, &c.code, &c.title)))
            .filter(|(_, s)| *s >= 0.6)
            .collect();
        want.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        want.truncate(5);
        let got: Vec<(String, f64)> = got.into_iter().map(|m| (m.code, m.score)).collect();
        assert_eq!(got.len(), want.len(), "{q}: {got:?} vs {want:?}");
        for (g, w) in got.iter().zip(&want) {
            assert_eq!(g.0, w.0, "{q}");
            assert!((g.1 - w.1).abs() < 1e-12, "{q}");
        }
    }
}
