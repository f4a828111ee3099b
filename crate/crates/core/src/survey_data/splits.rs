use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{DataReport, Entry, ReportKind, ResponseDistribution, SurveyQuestion};
use crate::error::{Error, Result};

/// Subset names in canonical order: training, validation, then the five test subsets.
pub const SUBSET_NAMES: [&str; 7] = ["train", "valid", "C1-Q3", "C2-Q1", "C2-Q3", "C3-Q1", "C3-Q3"];
pub const TEST_SUBSETS: [&str; 5] = ["C1-Q3", "C2-Q1", "C2-Q3", "C3-Q1", "C3-Q3"];

const ASSIGNMENTS: [(&str, &str, &str); 7] = [
    ("train", "C1", "Q1"),
    ("valid", "C1", "Q2"),
    ("C1-Q3", "C1", "Q3"),
    ("C2-Q1", "C2", "Q1"),
    ("C2-Q3", "C2", "Q3"),
    ("C3-Q1", "C3", "Q1"),
    ("C3-Q3", "C3", "Q3"),
];

/// Country and question lists. `c1` and `q1` default to the complements of
/// the other sets; `exclude_questions` never enter any set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default)]
    pub c1: Option<Vec<String>>,
    pub c2: Vec<String>,
    pub c3: Vec<String>,
    #[serde(default)]
    pub q1: Option<Vec<u32>>,
    pub q2: Vec<u32>,
    pub q3: Vec<u32>,
    #[serde(default)]
    pub exclude_questions: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetAssignment {
    pub subset: String,
    pub country_set: String,
    pub question_set: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplits {
    pub country_sets: BTreeMap<String, Vec<String>>,
    pub question_sets: BTreeMap<String, Vec<u32>>,
    pub assignments: Vec<SubsetAssignment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subset {
    pub name: String,
    pub entries: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub splits: DatasetSplits,
    pub subsets: Vec<Subset>,
}

impl SplitDataset {
    pub fn subset(&self, name: &str) -> Option<&[Entry]> {
        self.subsets.iter().find(|s| s.name == name).map(|s| s.entries.as_slice())
    }

    pub fn counts(&self) -> Vec<(String, usize)> {
        self.subsets.iter().map(|s| (s.name.clone(), s.entries.len())).collect()
    }

    /// Members of each country and question set that contribute at least one entry.
    pub fn effective_set_sizes(&self) -> BTreeMap<String, usize> {
        let mut countries: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        let mut questions: BTreeMap<&str, BTreeSet<u32>> = BTreeMap::new();
        for a in &self.splits.assignments {
            countries.entry(&a.country_set).or_default();
            questions.entry(&a.question_set).or_default();
            for e in self.subset(&a.subset).unwrap_or_default() {
                countries.get_mut(a.country_set.as_str()).unwrap().insert(&e.target.group);
                questions.get_mut(a.question_set.as_str()).unwrap().insert(e.question.question_id);
            }
        }
        let c = countries.into_iter().map(|(k, v)| (k.to_string(), v.len()));
        let q = questions.into_iter().map(|(k, v)| (k.to_string(), v.len()));
        c.chain(q).collect()
    }

    /// Every country that appears in any subset, sorted.
    pub fn countries(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.splits.country_sets.values().flatten().collect();
        set.into_iter().cloned().collect()
    }
}

fn clean_names(list: &[String], set: &str) -> Result<Vec<String>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(list.len());
    for name in list {
        let name = name.trim().to_string();
        if !seen.insert(name.clone()) {
            return Err(Error::Split(format!("country {name:?} listed twice in {set}")));
        }
        out.push(name);
    }
    Ok(out)
}

fn check_ids(list: &[u32], set: &str) -> Result<()> {
    let mut seen = BTreeSet::new();
    for id in list {
        if !seen.insert(*id) {
            return Err(Error::Split(format!("question {id} listed twice in {set}")));
        }
    }
    Ok(())
}

fn disjoint_ids(a: &[u32], b: &[u32], names: (&str, &str)) -> Result<()> {
    let b: BTreeSet<_> = b.iter().collect();
    if let Some(id) = a.iter().find(|id| b.contains(id)) {
        return Err(Error::Split(format!("question {id} is in both {} and {}", names.0, names.1)));
    }
    Ok(())
}

/// Partitions the (country, question) grid into train/valid/test subsets.
///
/// C2 and C3 may share countries; neither may intersect C1. Question sets
/// must be pairwise disjoint. Cells without an observed distribution are
/// simply absent. Entry order is country-set order, then question-set order.
pub fn build_splits(
    questions: &[SurveyQuestion],
    distributions: &[ResponseDistribution],
    config: &SplitConfig,
    report: &mut DataReport,
) -> Result<SplitDataset> {
    let c2 = clean_names(&config.c2, "C2")?;
    let c3 = clean_names(&config.c3, "C3")?;
    let held_out: BTreeSet<&String> = c2.iter().chain(&c3).collect();

    let c1 = match &config.c1 {
        Some(list) => {
            let c1 = clean_names(list, "C1")?;
            if let Some(c) = c1.iter().find(|c| held_out.contains(c)) {
                return Err(Error::Split(format!("country {c:?} is in C1 and in C2/C3")));
            }
            c1
        }
        None => {
            let all: BTreeSet<&String> = distributions.iter().map(|d| &d.group).collect();
            all.into_iter().filter(|c| !held_out.contains(c)).cloned().collect()
        }
    };

    for (list, name) in [(&config.q2, "Q2"), (&config.q3, "Q3"), (&config.exclude_questions, "excluded")] {
        check_ids(list, name)?;
    }
    disjoint_ids(&config.q2, &config.q3, ("Q2", "Q3"))?;
    disjoint_ids(&config.exclude_questions, &config.q2, ("excluded", "Q2"))?;
    disjoint_ids(&config.exclude_questions, &config.q3, ("excluded", "Q3"))?;
    let q1 = match &config.q1 {
        Some(list) => {
            check_ids(list, "Q1")?;
            disjoint_ids(list, &config.q2, ("Q1", "Q2"))?;
            disjoint_ids(list, &config.q3, ("Q1", "Q3"))?;
            disjoint_ids(list, &config.exclude_questions, ("Q1", "excluded"))?;
            list.clone()
        }
        None => {
            let taken: BTreeSet<u32> = config
                .q2
                .iter()
                .chain(&config.q3)
                .chain(&config.exclude_questions)
                .copied()
                .collect();
            let mut ids: Vec<u32> =
                questions.iter().map(|q| q.question_id).filter(|id| !taken.contains(id)).collect();
            ids.sort_unstable();
            ids.dedup();
            ids
        }
    };

    let by_id: HashMap<u32, &SurveyQuestion> = questions.iter().map(|q| (q.question_id, q)).collect();
    let cells: HashMap<(&str, u32), &ResponseDistribution> =
        distributions.iter().map(|d| ((d.group.as_str(), d.question_id), d)).collect();

    let observed: BTreeSet<&str> = distributions.iter().map(|d| d.group.as_str()).collect();
    for (set, list) in [("C1", &c1), ("C2", &c2), ("C3", &c3)] {
        for c in list.iter().filter(|c| !observed.contains(c.as_str())) {
            report.push(ReportKind::MissingSplitMember, format!("{set} country {c:?} has no data"));
        }
    }
    for (set, list) in [("Q1", &q1), ("Q2", &config.q2), ("Q3", &config.q3)] {
        for id in list.iter().filter(|id| !by_id.contains_key(id)) {
            report.push(ReportKind::MissingSplitMember, format!("{set} question {id} has no data"));
        }
    }

    let country_sets: BTreeMap<String, Vec<String>> =
        [("C1", c1), ("C2", c2), ("C3", c3)].into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    let question_sets: BTreeMap<String, Vec<u32>> =
        [("Q1", q1), ("Q2", config.q2.clone()), ("Q3", config.q3.clone())]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();

    let mut subsets = Vec::with_capacity(ASSIGNMENTS.len());
    for (name, cset, qset) in ASSIGNMENTS {
        let mut entries = Vec::new();
        for country in &country_sets[cset] {
            for qid in &question_sets[qset] {
                let (Some(q), Some(d)) = (by_id.get(qid), cells.get(&(country.as_str(), *qid))) else {
                    continue;
                };
                if d.probs.len() != q.options.len() {
                    return Err(Error::validation(format!(
                        "{country}: question {qid} has {} options but {} probabilities",
                        q.options.len(),
                        d.probs.len()
                    )));
                }
                entries.push(Entry::new((*q).clone(), (*d).clone()));
            }
        }
        subsets.push(Subset { name: name.to_string(), entries });
    }

    let assignments = ASSIGNMENTS
        .iter()
        .map(|(s, c, q)| SubsetAssignment {
            subset: s.to_string(),
            country_set: c.to_string(),
            question_set: q.to_string(),
        })
        .collect();

    Ok(SplitDataset { splits: DatasetSplits { country_sets, question_sets, assignments }, subsets })
}
