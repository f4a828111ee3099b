//! Seeded synthetic surveys with a known latent country structure.
//!
//! Country `c` has a latent vector `u_c`; question `q` has option intercepts
//! `b_q` and loadings `A_q`. The target is `softmax(b_q + A_q u_c)`, so
//! countries disagree in proportion to `loading_scale`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::alignment::softmax;
use crate::error::{Error, Result};
use crate::survey_data::{ResponseDistribution, SplitConfig, SurveyQuestion};

const WORDS: [&str; 48] = [
    "family", "work", "religion", "government", "science", "money", "friends", "leisure", "politics", "tradition",
    "neighbours", "police", "courts", "press", "army", "parliament", "schools", "health", "migration", "climate",
    "security", "freedom", "equality", "honesty", "trust", "children", "marriage", "elders", "youth", "nation",
    "markets", "banks", "taxes", "charity", "music", "sport", "internet", "cities", "farming", "travel", "language",
    "history", "justice", "duty", "luck", "effort", "wealth", "community",
];

const COUNTRIES: [&str; 12] = [
    "Avalon", "Borealis", "Cascadia", "Dalmora", "Elyria", "Fenwick", "Galdor", "Hesperia", "Istria", "Jorvik",
    "Kaldra", "Lumen",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    #[serde(default = "default_countries")]
    pub countries: usize,
    #[serde(default = "default_questions")]
    pub questions: usize,
    #[serde(default = "default_min_options")]
    pub min_options: usize,
    #[serde(default = "default_max_options")]
    pub max_options: usize,
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    /// Standard deviation of the option intercepts.
    #[serde(default = "default_intercept_scale")]
    pub intercept_scale: f64,
    /// Standard deviation of the country loadings.
    #[serde(default = "default_loading_scale")]
    pub loading_scale: f64,
    /// Held-out countries, taken from the end of the country list.
    #[serde(default = "default_c2")]
    pub c2_countries: usize,
    #[serde(default = "default_c3")]
    pub c3_countries: usize,
    #[serde(default = "default_q2")]
    pub q2_questions: usize,
    #[serde(default = "default_q3")]
    pub q3_questions: usize,
    #[serde(default = "default_respondents")]
    pub respondents: u64,
    #[serde(default = "default_survey_id")]
    pub survey_id: String,
    #[serde(default)]
    pub seed: u64,
}

fn default_countries() -> usize {
    8
}
fn default_questions() -> usize {
    30
}
fn default_min_options() -> usize {
    3
}
fn default_max_options() -> usize {
    5
}
fn default_latent_dim() -> usize {
    4
}
fn default_intercept_scale() -> f64 {
    1.0
}
fn default_loading_scale() -> f64 {
    1.0
}
fn default_c2() -> usize {
    2
}
fn default_c3() -> usize {
    1
}
fn default_q2() -> usize {
    4
}
fn default_q3() -> usize {
    6
}
fn default_respondents() -> u64 {
    1200
}
fn default_survey_id() -> String {
    "SYN".into()
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSurvey {
    pub countries: Vec<String>,
    pub questions: Vec<SurveyQuestion>,
    pub distributions: Vec<ResponseDistribution>,
    /// Latent country vectors, usable as backend country knowledge.
    pub knowledge: BTreeMap<String, Vec<f64>>,
    pub splits: SplitConfig,
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.countries > COUNTRIES.len() {
            return Err(Error::validation(format!("at most {} synthetic countries", COUNTRIES.len())));
        }
        if self.c2_countries + self.c3_countries >= self.countries {
            return Err(Error::validation("held-out countries leave no training countries"));
        }
        if self.q2_questions + self.q3_questions >= self.questions {
            return Err(Error::validation("held-out questions leave no training questions"));
        }
        if self.min_options < 2 || self.max_options < self.min_options || self.max_options > 26 {
            return Err(Error::validation("option counts must satisfy 2 <= min <= max <= 26"));
        }
        if self.latent_dim == 0 {
            return Err(Error::validation("latent_dim must be positive"));
        }
        Ok(())
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticSurvey> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let countries: Vec<String> = COUNTRIES[..config.countries].iter().map(|s| s.to_string()).collect();
    let knowledge: BTreeMap<String, Vec<f64>> =
        countries.iter().map(|c| (c.clone(), normal_vec(&mut rng, config.latent_dim, 1.0))).collect();

    let mut questions = Vec::with_capacity(config.questions);
    let mut params = Vec::with_capacity(config.questions);
    for q in 0..config.questions {
        let n = rng.gen_range(config.min_options..=config.max_options);
        let words: Vec<&str> = WORDS.choose_multiple(&mut rng, 3).copied().collect();
        let text = format!(
            "Item {}: how important are {}, {} and {} in your life?",
            q + 1,
            words[0],
            words[1],
            words[2]
        );
        let options = (1..=n).map(|k| format!("Level {k} of {n}")).collect();
        questions.push(SurveyQuestion {
            question_id: q as u32 + 1,
            text,
            options,
            dimension: format!("Theme {}", q % 5 + 1),
            survey_id: config.survey_id.clone(),
        });
        let intercepts = normal_vec(&mut rng, n, config.intercept_scale);
        let loadings: Vec<Vec<f64>> = (0..n).map(|_| normal_vec(&mut rng, config.latent_dim, config.loading_scale)).collect();
        params.push((intercepts, loadings));
    }

    let mut distributions = Vec::new();
    for country in &countries {
        let u = &knowledge[country];
        for (q, (b, a)) in questions.iter().zip(&params) {
            let logits: Vec<f64> =
                b.iter().zip(a).map(|(bi, ai)| bi + ai.iter().zip(u).map(|(x, y)| x * y).sum::<f64>()).collect();
            distributions.push(ResponseDistribution {
                group: country.clone(),
                question_id: q.question_id,
                probs: softmax(&logits),
                respondent_count: config.respondents,
            });
        }
    }

    let n_c = config.countries;
    let c3_start = n_c - config.c3_countries;
    let c2_start = c3_start - config.c2_countries;
    let n_q = config.questions as u32;
    let q3_start = n_q - config.q3_questions as u32 + 1;
    let q2_start = q3_start - config.q2_questions as u32;
    let splits = SplitConfig {
        c1: None,
        c2: countries[c2_start..c3_start].to_vec(),
        c3: countries[c3_start..].to_vec(),
        q1: None,
        q2: (q2_start..q3_start).collect(),
        q3: (q3_start..=n_q).collect(),
        exclude_questions: Vec::new(),
    };
    Ok(SyntheticSurvey { countries, questions, distributions, knowledge, splits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::validate_distribution;

    #[test]
    fn shape_and_determinism() {
        let cfg = SyntheticConfig::default();
        let a = generate(&cfg).unwrap();
        assert_eq!(a.countries.len(), 8);
        assert_eq!(a.questions.len(), 30);
        assert_eq!(a.distributions.len(), 240);
        assert!(a.questions.iter().all(|q| (3..=5).contains(&q.options.len())));
        assert!(a.distributions.iter().all(|d| validate_distribution(&d.probs).is_ok()));
        assert_eq!(a, generate(&cfg).unwrap());
        assert_eq!(a.splits.q3, (25..=30).collect::<Vec<u32>>());
        assert_eq!(a.splits.c3, vec!["Hesperia".to_string()]);
    }

    #[test]
    fn rejects_impossible_holdouts() {
        let cfg = SyntheticConfig { c2_countries: 5, c3_countries: 3, ..Default::default() };
        assert!(generate(&cfg).is_err());
    }
}
