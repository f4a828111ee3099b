mod common;

use std::collections::BTreeMap;
use std::path::PathBuf;

use proptest::prelude::*;
use serde::Deserialize;
use simdist_core::config::RunConfig;
use simdist_core::pipeline::{build_data, clean_parsed};
use simdist_core::survey_data::{
    build_splits, filter_countries, parse_survey, read_dataset_jsonl, strip_invalid_options, write_dataset_jsonl,
    Codebook, DataReport, InvalidOptionPolicy, ReportKind, SplitConfig,
};

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/microdata")
}

#[derive(Deserialize)]
struct Expected {
    subsets: BTreeMap<String, usize>,
    set_sizes: BTreeMap<String, usize>,
    questions_kept: usize,
    countries_filtered: usize,
    unknown_codes: usize,
    rows_without_country: usize,
}

fn expected() -> Expected {
    serde_json::from_str(&std::fs::read_to_string(fixture_dir().join("expected_counts.json")).unwrap()).unwrap()
}

#[test]
fn microdata_fixture_reproduces_counts() {
    let cfg = RunConfig::load(&fixture_dir().join("config.json")).unwrap();
    let built = build_data(&cfg).unwrap();
    let want = expected();
    let got: BTreeMap<String, usize> = built.dataset.counts().into_iter().collect();
    assert_eq!(got, want.subsets);
    assert_eq!(built.dataset.effective_set_sizes(), want.set_sizes);
    let questions: std::collections::BTreeSet<u32> = built
        .dataset
        .subsets
        .iter()
        .flat_map(|s| s.entries.iter().map(|e| e.question.question_id))
        .collect();
    // excluded questions are kept by the cleaner but belong to no set
    assert_eq!(questions.len() + 2, want.questions_kept);
    assert_eq!(built.report.count(ReportKind::CountryFiltered), want.countries_filtered);
    assert_eq!(built.report.count(ReportKind::UnknownAnswerCode), want.unknown_codes);
    assert_eq!(built.report.count(ReportKind::MissingCountry), want.rows_without_country);
    // Glenhaven was never surveyed, Mirewood is filtered out and question 24 is dropped
    assert_eq!(built.report.count(ReportKind::MissingSplitMember), 3);
}

#[test]
fn hand_tallied_fixture() {
    let codebook: Codebook = serde_json::from_str(
        r#"{"survey_id": "H", "country_column": "cntry", "questions": [
            {"question_id": 1, "column": "v1", "text": "Trust?", "options": [
                {"code": 1, "label": "Yes"}, {"code": 2, "label": "No"}, {"code": -2, "label": "Refuse to answer"}]},
            {"question_id": 2, "column": "v2", "text": "Happy?", "options": [
                {"code": 1, "label": "Very"}, {"code": 2, "label": "Rather"}, {"code": 3, "label": "Not"}]}]}"#,
    )
    .unwrap();
    let csv = "cntry,v1,v2\n\
               Aland,1,1\nAland,1,2\nAland,2,2\nAland,-2,3\n\
               Bryn,2,1\nBryn,2,\nBryn,1,1\n\
               Cora,1,3\nCora,1,3\nCora,2,3\nCora,2,2\nCora,-2,1\n";
    let parsed = parse_survey(csv.as_bytes(), &codebook).unwrap();
    let cleaned = clean_parsed(parsed, None, &InvalidOptionPolicy::default());
    let got: BTreeMap<(String, u32), Vec<f64>> =
        cleaned.distributions.iter().map(|d| ((d.group.clone(), d.question_id), d.probs.clone())).collect();
    // counted by hand from the rows above
    let want: BTreeMap<(String, u32), Vec<f64>> = [
        (("Aland", 1), vec![2.0 / 3.0, 1.0 / 3.0]),
        (("Aland", 2), vec![0.25, 0.5, 0.25]),
        (("Bryn", 1), vec![1.0 / 3.0, 2.0 / 3.0]),
        (("Bryn", 2), vec![1.0, 0.0, 0.0]),
        (("Cora", 1), vec![0.5, 0.5]),
        (("Cora", 2), vec![0.2, 0.2, 0.6]),
    ]
    .into_iter()
    .map(|((c, q), p)| ((c.to_string(), q), p))
    .collect();
    assert_eq!(got.len(), want.len());
    for (k, p) in &want {
        for (a, b) in got[k].iter().zip(p) {
            common::assert_close(*a, *b, 1e-12);
        }
    }
    let counts: BTreeMap<&str, u64> = cleaned.distributions.iter().map(|d| (d.group.as_str(), d.respondent_count)).collect();
    assert_eq!(counts, BTreeMap::from([("Aland", 4), ("Bryn", 3), ("Cora", 5)]));
}

#[test]
fn filter_and_strip_commute_on_fixture() {
    let dir = fixture_dir();
    let codebook: Codebook = serde_json::from_str(&std::fs::read_to_string(dir.join("codebook.json")).unwrap()).unwrap();
    let raw = std::fs::read(dir.join("raw.csv")).unwrap();
    let parsed = parse_survey(raw.as_slice(), &codebook).unwrap();
    let policy = InvalidOptionPolicy::default();

    let filter_first = clean_parsed(parsed.clone(), Some(50), &policy);

    let mut report = DataReport::default();
    let mut stripped = Vec::new();
    let mut questions = Vec::new();
    for q in &parsed.questions {
        let dists = parsed.distributions.iter().filter(|d| d.question_id == q.question_id).cloned().collect();
        if let Some((q, d)) = strip_invalid_options(q, dists, &policy, &mut report) {
            questions.push(q);
            stripped.extend(d);
        }
    }
    let strip_first = filter_countries(stripped, 50, &mut report);
    let key = |d: &simdist_core::ResponseDistribution| (d.group.clone(), d.question_id);
    let mut a = filter_first.distributions.clone();
    let mut b = strip_first;
    a.sort_by_key(key);
    b.sort_by_key(key);
    assert_eq!(a, b);
    assert_eq!(filter_first.questions, questions);
}

#[test]
fn splits_are_deterministic_and_disjoint() {
    let cfg = RunConfig::load(&fixture_dir().join("config.json")).unwrap();
    let a = build_data(&cfg).unwrap();
    let b = build_data(&cfg).unwrap();
    let mut bytes_a = Vec::new();
    let mut bytes_b = Vec::new();
    write_dataset_jsonl(&mut bytes_a, &a.dataset.subsets).unwrap();
    write_dataset_jsonl(&mut bytes_b, &b.dataset.subsets).unwrap();
    assert_eq!(bytes_a, bytes_b);

    for s in &a.dataset.subsets {
        let mut keys: Vec<String> = s.entries.iter().map(|e| e.key()).collect();
        let n = keys.len();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), n, "duplicate cell in {}", s.name);
    }
    let pairs: std::collections::BTreeSet<(String, String)> = a
        .dataset
        .splits
        .assignments
        .iter()
        .map(|x| (x.country_set.clone(), x.question_set.clone()))
        .collect();
    assert_eq!(pairs.len(), a.dataset.splits.assignments.len());

    let back = read_dataset_jsonl(bytes_a.as_slice()).unwrap();
    assert_eq!(back.len(), a.dataset.subsets.len());
    for (x, y) in back.iter().zip(&a.dataset.subsets) {
        assert_eq!(x.name, y.name);
        assert_eq!(x.entries.len(), y.entries.len());
        for (e, f) in x.entries.iter().zip(&y.entries) {
            assert_eq!(e.key(), f.key());
            assert_eq!(e.target.probs, f.target.probs);
        }
    }
}

#[test]
fn distributions_are_normalized() {
    let cfg = RunConfig::load(&fixture_dir().join("config.json")).unwrap();
    let built = build_data(&cfg).unwrap();
    for s in &built.dataset.subsets {
        for e in &s.entries {
            assert!(e.target.probs.iter().all(|p| *p >= 0.0));
            assert!((e.target.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            assert_eq!(e.target.probs.len(), e.question.options.len());
        }
    }
}

proptest! {
    #[test]
    fn complete_grid_has_product_counts(nc in 3usize..7, nq in 3u32..9) {
        let questions: Vec<_> = (1..=nq).map(|id| common::question(id, &["a", "b", "c"])).collect();
        let countries: Vec<String> = (0..nc).map(|i| format!("Land{i}")).collect();
        let dists: Vec<_> = countries
            .iter()
            .flat_map(|c| questions.iter().map(move |q| common::entry(c, q, &[0.2, 0.3, 0.5]).target))
            .collect();
        let cfg = SplitConfig { c2: vec![countries[0].clone()], c3: vec![countries[1].clone()], q2: vec![1], q3: vec![2], ..Default::default() };
        let ds = build_splits(&questions, &dists, &cfg, &mut DataReport::default()).unwrap();
        let counts: BTreeMap<String, usize> = ds.counts().into_iter().collect();
        let c1 = nc - 2;
        let q1 = nq as usize - 2;
        prop_assert_eq!(counts["train"], c1 * q1);
        prop_assert_eq!(counts["valid"], c1);
        prop_assert_eq!(counts["C2-Q1"], q1);
        prop_assert_eq!(counts["C3-Q3"], 1);
    }
}
