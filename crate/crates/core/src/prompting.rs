//! Prompt rendering and the control / option-shuffle transformations.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survey_data::Entry;

pub const MAX_OPTIONS: usize = 26;

const DEFAULT_TEMPLATE: &str = include_str!("../templates/default.tmpl");
const REQUIRED_SECTIONS: [&str; 4] = ["instruction", "input", "option", "format"];

/// Option label for display position `index`: `A`, `B`, ...
pub fn option_label(index: usize) -> String {
    assert!(index < MAX_OPTIONS, "label index {index} out of range");
    char::from(b'A' + index as u8).to_string()
}

/// Replaces `{name}` placeholders in one pass; unknown placeholders stay literal.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let value = after
            .find('}')
            .and_then(|end| values.iter().find(|(k, _)| *k == &after[..end]).map(|(k, v)| (k.len(), *v)));
        match value {
            Some((len, v)) => {
                out.push_str(v);
                rest = &after[len + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn single_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Anchored regex matching one rendered template line, capturing the named placeholders.
fn line_regex(template: &str, captures: &[&str]) -> Regex {
    let mut pattern = String::from("^");
    let mut rest = template;
    loop {
        let next = captures
            .iter()
            .filter_map(|c| rest.find(&format!("{{{c}}}")).map(|pos| (pos, *c)))
            .min_by_key(|(pos, _)| *pos);
        match next {
            Some((pos, name)) => {
                pattern.push_str(&regex::escape(&rest[..pos]));
                pattern.push_str(&format!("(?P<{name}>.*?)"));
                rest = &rest[pos + name.len() + 2..];
            }
            None => {
                pattern.push_str(&regex::escape(rest));
                break;
            }
        }
    }
    pattern.push('$');
    Regex::new(&pattern).expect("escaped template compiles")
}

/// Named prompt sections loaded from a versioned template file.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub version: u32,
    sections: BTreeMap<String, String>,
    instruction_re: Regex,
    input_re: Regex,
    option_re: Regex,
}

impl PartialEq for PromptTemplate {
    fn eq(&self, other: &Self) -> bool {
        self.version == other.version && self.sections == other.sections
    }
}

impl Eq for PromptTemplate {}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("bundled template is valid")
    }
}

impl PromptTemplate {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| Error::Read { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut version = None;
        let mut sections: BTreeMap<String, Vec<&str>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for line in text.lines() {
            if let Some(name) = line.strip_prefix('@') {
                let name = name.trim().to_string();
                if sections.contains_key(&name) {
                    return Err(Error::Template(format!("section @{name} defined twice")));
                }
                sections.insert(name.clone(), Vec::new());
                current = Some(name);
                continue;
            }
            match &current {
                Some(name) => sections.get_mut(name).expect("section exists").push(line),
                None => {
                    let line = line.trim();
                    if line.is_empty() || line.starts_with('#') {
                        continue;
                    }
                    let value = line
                        .strip_prefix("version")
                        .and_then(|v| v.trim().strip_prefix('='))
                        .and_then(|v| v.trim().parse::<u32>().ok())
                        .ok_or_else(|| Error::Template(format!("unexpected header line {line:?}")))?;
                    version = Some(value);
                }
            }
        }
        let version = version.ok_or_else(|| Error::Template("missing `version = N` header".into()))?;
        let sections: BTreeMap<String, String> = sections
            .into_iter()
            .map(|(k, lines)| {
                let mut lines = lines;
                while lines.last().is_some_and(|l| l.trim().is_empty()) {
                    lines.pop();
                }
                (k, lines.join("\n"))
            })
            .collect();
        for name in REQUIRED_SECTIONS {
            let body = sections
                .get(name)
                .ok_or_else(|| Error::Template(format!("missing section @{name}")))?;
            if body.contains('\n') {
                return Err(Error::Template(format!("section @{name} must be a single line")));
            }
        }
        for (name, needed) in [("instruction", "{country}"), ("input", "{question}"), ("option", "{label}")] {
            if !sections[name].contains(needed) {
                return Err(Error::Template(format!("section @{name} lacks {needed}")));
            }
        }
        let instruction_re = line_regex(&sections["instruction"], &["country"]);
        let input_re = line_regex(&sections["input"], &["question"]);
        let option_re = line_regex(&sections["option"], &["label", "option"]);
        Ok(Self { version, sections, instruction_re, input_re, option_re })
    }

    pub fn section(&self, name: &str) -> Option<&str> {
        self.sections.get(name).map(String::as_str)
    }

    fn required(&self, name: &str) -> &str {
        &self.sections[name]
    }

    fn option_lines(&self, labels: &[String], options: &[String]) -> Vec<String> {
        labels
            .iter()
            .zip(options)
            .map(|(l, o)| {
                let o = single_line(o);
                fill(self.required("option"), &[("label", l), ("option", &o)])
            })
            .collect()
    }

    /// Renders the first-token prompt for `country`, `question` and display-ordered options.
    pub fn render(&self, country: &str, question: &str, labels: &[String], options: &[String]) -> String {
        let country = single_line(country);
        let question = single_line(question);
        let mut lines = vec![
            fill(self.required("instruction"), &[("country", &country)]),
            fill(self.required("input"), &[("question", &question)]),
        ];
        lines.extend(self.option_lines(labels, options));
        lines.push(self.required("format").to_string());
        lines.join("\n")
    }

    /// Renders the JSON-distribution prompt. `retry` appends the retry instruction.
    pub fn render_json_zs(&self, record: &PromptRecord, retry: bool) -> Result<String> {
        let body = self
            .section("json_zs")
            .ok_or_else(|| Error::Template("template has no @json_zs section".into()))?;
        let options = self.option_lines(&record.option_labels, &record.entry.question.options).join("\n");
        let labels = record.option_labels.join("/");
        let country = single_line(record.displayed_country());
        let question = single_line(&record.entry.question.text);
        let mut text = fill(
            body,
            &[("country", &country), ("question", &question), ("options", &options), ("labels", &labels)],
        );
        if retry {
            if let Some(suffix) = self.section("json_zs_retry") {
                text.push('\n');
                text.push_str(suffix);
            }
        }
        Ok(text)
    }

    /// Recovers country, question and labelled options from a rendered prompt.
    pub fn parse_rendered(&self, text: &str) -> Option<ParsedPrompt> {
        let lines: Vec<&str> = text.split('\n').collect();
        if lines.len() < 4 || lines[lines.len() - 1] != self.required("format") {
            return None;
        }
        let country = self.instruction_re.captures(lines[0])?["country"].to_string();
        let question = self.input_re.captures(lines[1])?["question"].to_string();
        let mut options = Vec::new();
        for line in &lines[2..lines.len() - 1] {
            let caps = self.option_re.captures(line)?;
            options.push((caps["label"].to_string(), caps["option"].to_string()));
        }
        Some(ParsedPrompt { country, question, options })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPrompt {
    pub country: String,
    pub question: String,
    pub options: Vec<(String, String)>,
}

/// A rendered prompt with its target distribution, both in display order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    /// Entry with options and target probabilities in display order.
    pub entry: Entry,
    pub rendered_text: String,
    pub option_labels: Vec<String>,
    /// `permutation[k]` is the original index of the option shown at position `k`.
    pub permutation: Vec<usize>,
    pub control_country: Option<String>,
}

impl PromptRecord {
    pub fn id(&self) -> String {
        self.entry.key()
    }

    pub fn displayed_country(&self) -> &str {
        self.control_country.as_deref().unwrap_or(&self.entry.group)
    }

    pub fn option_count(&self) -> usize {
        self.option_labels.len()
    }

    /// Maps a display-order vector back to the original option order.
    pub fn to_original_order(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; values.len()];
        for (k, &orig) in self.permutation.iter().enumerate() {
            out[orig] = values[k];
        }
        out
    }

    fn rerender(&mut self, template: &PromptTemplate) {
        self.rendered_text = template.render(
            self.displayed_country(),
            &self.entry.question.text,
            &self.option_labels,
            &self.entry.question.options,
        );
    }
}

pub fn build_prompt(entry: &Entry, template: &PromptTemplate) -> Result<PromptRecord> {
    let n = entry.question.options.len();
    if n > MAX_OPTIONS {
        return Err(Error::UnsupportedQuestion { question_id: entry.question.question_id, options: n });
    }
    if entry.target.probs.len() != n {
        return Err(Error::validation(format!(
            "{}: {} options but {} target probabilities",
            entry.key(),
            n,
            entry.target.probs.len()
        )));
    }
    let option_labels: Vec<String> = (0..n).map(option_label).collect();
    let mut record = PromptRecord {
        entry: entry.clone(),
        rendered_text: String::new(),
        option_labels,
        permutation: (0..n).collect(),
        control_country: None,
    };
    record.rerender(template);
    Ok(record)
}

/// Replaces each record's displayed country with a uniform draw (with
/// replacement) from `pool`. Targets are untouched.
pub fn apply_control_permutation<R: Rng + ?Sized>(
    records: &[PromptRecord],
    pool: &[String],
    template: &PromptTemplate,
    rng: &mut R,
) -> Result<Vec<PromptRecord>> {
    if pool.len() < 2 {
        return Err(Error::validation(format!(
            "control permutation needs at least two countries in the pool, got {}",
            pool.len()
        )));
    }
    Ok(records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.control_country = Some(pool[rng.gen_range(0..pool.len())].clone());
            r.rerender(template);
            r
        })
        .collect())
}

pub fn apply_control_permutation_seeded(
    records: &[PromptRecord],
    pool: &[String],
    template: &PromptTemplate,
    seed: u64,
) -> Result<Vec<PromptRecord>> {
    apply_control_permutation(records, pool, template, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Reorders options and target probabilities so position `k` shows the
/// option previously at `order[k]`.
pub fn permute_options(record: &PromptRecord, order: &[usize], template: &PromptTemplate) -> Result<PromptRecord> {
    let n = record.option_count();
    let mut seen = vec![false; n];
    if order.len() != n || order.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
        return Err(Error::validation(format!("{order:?} is not a permutation of {n} options")));
    }
    let mut out = record.clone();
    out.entry.question.options = order.iter().map(|&i| record.entry.question.options[i].clone()).collect();
    out.entry.target.probs = order.iter().map(|&i| record.entry.target.probs[i]).collect();
    out.permutation = order.iter().map(|&i| record.permutation[i]).collect();
    out.rerender(template);
    Ok(out)
}

pub fn shuffle_options<R: Rng + ?Sized>(
    record: &PromptRecord,
    template: &PromptTemplate,
    rng: &mut R,
) -> PromptRecord {
    let mut order: Vec<usize> = (0..record.option_count()).collect();
    order.shuffle(rng);
    permute_options(record, &order, template).expect("shuffled indices form a permutation")
}

pub fn shuffle_options_seeded(record: &PromptRecord, template: &PromptTemplate, seed: u64) -> PromptRecord {
    shuffle_options(record, template, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survey_data::{ResponseDistribution, SurveyQuestion};

    fn andorra() -> Entry {
        Entry::new(
            SurveyQuestion {
                question_id: 4,
                text: "How interested would you say you are in politics?".into(),
                options: vec![
                    "Very interested".into(),
                    "Somewhat interested".into(),
                    "Not very interested".into(),
                    "Not at all interested".into(),
                ],
                dimension: "Political interest and political participation".into(),
                survey_id: "WVS".into(),
            },
            ResponseDistribution {
                group: "Andorra".into(),
                question_id: 4,
                probs: vec![0.1516, 0.2902, 0.2831, 0.2751],
                respondent_count: 1004,
            },
        )
    }

    #[test]
    fn renders_reference_prompt() {
        let record = build_prompt(&andorra(), &PromptTemplate::default()).unwrap();
        let expected = "How would someone from Andorra answer the following question:\n\
How interested would you say you are in politics? Here are the options:\n\
(A) Very interested\n\
(B) Somewhat interested\n\
(C) Not very interested\n\
(D) Not at all interested\n\
If had to select one of the options, my answer would be (";
        assert_eq!(record.rendered_text, expected);
        assert_eq!(record.option_labels, ["A", "B", "C", "D"]);
        assert_eq!(record.permutation, [0, 1, 2, 3]);
    }

    #[test]
    fn two_options_get_two_labels() {
        let mut entry = andorra();
        entry.question.options.truncate(2);
        entry.target.probs = vec![0.4, 0.6];
        let record = build_prompt(&entry, &PromptTemplate::default()).unwrap();
        assert_eq!(record.option_labels, ["A", "B"]);
        assert!(!record.rendered_text.contains("(C)"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let t = PromptTemplate::default();
        assert_eq!(build_prompt(&andorra(), &t).unwrap(), build_prompt(&andorra(), &t).unwrap());
    }

    #[test]
    fn too_many_options_rejected() {
        let mut entry = andorra();
        entry.question.options = (0..27).map(|i| format!("o{i}")).collect();
        entry.target.probs = vec![1.0 / 27.0; 27];
        assert!(matches!(
            build_prompt(&entry, &PromptTemplate::default()),
            Err(Error::UnsupportedQuestion { options: 27, .. })
        ));
    }

    #[test]
    fn rendered_text_parses_back() {
        let t = PromptTemplate::default();
        let record = build_prompt(&andorra(), &t).unwrap();
        let parsed = t.parse_rendered(&record.rendered_text).unwrap();
        assert_eq!(parsed.country, "Andorra");
        assert_eq!(parsed.question, "How interested would you say you are in politics?");
        assert_eq!(parsed.options.len(), 4);
        assert_eq!(parsed.options[3], ("D".to_string(), "Not at all interested".to_string()));
    }

    #[test]
    fn control_keeps_target() {
        let t = PromptTemplate::default();
        let record = build_prompt(&andorra(), &t).unwrap();
        let pool = vec!["Chile".to_string(), "Andorra".to_string()];
        // a constant zero draw selects the first pool entry
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let out = apply_control_permutation(&[record.clone()], &pool, &t, &mut rng).unwrap();
        assert_eq!(out[0].control_country.as_deref(), Some("Chile"));
        assert!(out[0].rendered_text.starts_with("How would someone from Chile"));
        assert_eq!(out[0].entry, record.entry);
    }

    #[test]
    fn control_needs_two_countries() {
        let t = PromptTemplate::default();
        let record = build_prompt(&andorra(), &t).unwrap();
        assert!(apply_control_permutation_seeded(&[record], &["Andorra".into()], &t, 1).is_err());
    }

    #[test]
    fn reverse_permutation() {
        let t = PromptTemplate::default();
        let mut entry = andorra();
        entry.question.options.truncate(3);
        entry.target.probs = vec![0.7, 0.2, 0.1];
        let record = build_prompt(&entry, &t).unwrap();
        let out = permute_options(&record, &[2, 1, 0], &t).unwrap();
        assert_eq!(out.entry.target.probs, [0.1, 0.2, 0.7]);
        assert_eq!(out.entry.question.options[0], "Not very interested");
        assert_eq!(out.permutation, [2, 1, 0]);
        assert_eq!(out.to_original_order(&out.entry.target.probs), [0.7, 0.2, 0.1]);
        let same = permute_options(&record, &[0, 1, 2], &t).unwrap();
        assert_eq!(same, record);
    }

    #[test]
    fn template_validation() {
        assert!(PromptTemplate::parse("@instruction\nx {country}\n").is_err());
        let missing_placeholder = "version = 1\n@instruction\nno country\n@input\n{question}\n@option\n({label}) {option}\n@format\n(";
        assert!(PromptTemplate::parse(missing_placeholder).is_err());
    }

    #[test]
    fn fill_keeps_unknown_braces() {
        assert_eq!(fill(r#"{"A": 1} {x}"#, &[("x", "y")]), r#"{"A": 1} y"#);
    }
}
