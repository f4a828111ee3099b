//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use proptest::prelude::*;
use simdist_core::pipeline::build_records;
use simdist_core::prompting::{build_prompt, PromptRecord, PromptTemplate};
use simdist_core::survey_data::{build_splits, DataReport, Entry, ResponseDistribution, SplitDataset, SurveyQuestion};
use simdist_core::synthetic::{generate, SyntheticConfig, SyntheticSurvey};

/// Optimal transport cost between `p` and `q` on positions `0..n` with ground
/// distance `|i - j| / (n - 1)`, solved as a min-cost flow with successive
/// shortest paths (Bellman-Ford on the residual graph).
pub fn transport_cost(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len();
    assert_eq!(n, q.len());
    assert!(n >= 2);
    // nodes: source, supplies 1..=n, demands n+1..=2n, sink 2n+1
    let source = 0;
    let sink = 2 * n + 1;
    let nodes = 2 * n + 2;
    struct Edge {
        to: usize,
        cap: f64,
        cost: f64,
    }
    let mut edges: Vec<Edge> = Vec::new();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    let add = |edges: &mut Vec<Edge>, adj: &mut Vec<Vec<usize>>, a: usize, b: usize, cap: f64, cost: f64| {
        adj[a].push(edges.len());
        edges.push(Edge { to: b, cap, cost });
        adj[b].push(edges.len());
        edges.push(Edge { to: a, cap: 0.0, cost: -cost });
    };
    for i in 0..n {
        add(&mut edges, &mut adj, source, 1 + i, p[i], 0.0);
        add(&mut edges, &mut adj, 1 + n + i, sink, q[i], 0.0);
        for j in 0..n {
            let d = (i as f64 - j as f64).abs() / (n - 1) as f64;
            add(&mut edges, &mut adj, 1 + i, 1 + n + j, f64::INFINITY, d);
        }
    }
    const EPS: f64 = 1e-15;
    let mut total = 0.0;
    loop {
        let mut dist = vec![f64::INFINITY; nodes];
        let mut via: Vec<Option<usize>> = vec![None; nodes];
        dist[source] = 0.0;
        for _ in 0..nodes {
            let mut changed = false;
            for a in 0..nodes {
                if dist[a].is_infinite() {
                    continue;
                }
                for &e in &adj[a] {
                    let edge = &edges[e];
                    if edge.cap > EPS && dist[a] + edge.cost < dist[edge.to] - 1e-15 {
                        dist[edge.to] = dist[a] + edge.cost;
                        via[edge.to] = Some(e);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if dist[sink].is_infinite() {
            break;
        }
        let mut push = f64::INFINITY;
        let mut v = sink;
        while let Some(e) = via[v] {
            push = push.min(edges[e].cap);
            v = edges[e ^ 1].to;
        }
        let mut v = sink;
        while let Some(e) = via[v] {
            edges[e].cap -= push;
            edges[e ^ 1].cap += push;
            v = edges[e ^ 1].to;
        }
        total += push * dist[sink];
    }
    total
}

/// Probability vectors of length `n`, with exact zeros appearing often.
pub fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![1 => Just(0.0), 4 => 0.0..1.0f64], n).prop_map(|w| {
        let total: f64 = w.iter().sum();
        if total <= 0.0 {
            let mut v = vec![0.0; w.len()];
            v[0] = 1.0;
            v
        } else {
            w.iter().map(|x| x / total).collect()
        }
    })
}

/// Two distributions over the same option count in `2..=max`.
pub fn distribution_pair(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2..=max).prop_flat_map(|n| (distribution(n), distribution(n)))
}

pub fn question(id: u32, options: &[&str]) -> SurveyQuestion {
    SurveyQuestion {
        question_id: id,
        text: format!("How much do you agree with statement {id}?"),
        options: options.iter().map(|s| s.to_string()).collect(),
        dimension: String::new(),
        survey_id: "T".into(),
    }
}

pub fn entry(country: &str, q: &SurveyQuestion, probs: &[f64]) -> Entry {
    Entry::new(
        q.clone(),
        ResponseDistribution {
            group: country.into(),
            question_id: q.question_id,
            probs: probs.to_vec(),
            respondent_count: 1500,
        },
    )
}

pub fn record(country: &str, q: &SurveyQuestion, probs: &[f64]) -> PromptRecord {
    build_prompt(&entry(country, q, probs), &PromptTemplate::default()).unwrap()
}

/// A synthetic survey together with its split dataset.
pub struct Synthetic {
    pub survey: SyntheticSurvey,
    pub dataset: SplitDataset,
    pub template: PromptTemplate,
}

impl Synthetic {
    pub fn new(config: &SyntheticConfig) -> Self {
        let survey = generate(config).unwrap();
        let mut report = DataReport::default();
        let dataset = build_splits(&survey.questions, &survey.distributions, &survey.splits, &mut report).unwrap();
        Self { survey, dataset, template: PromptTemplate::default() }
    }

    pub fn records(&self, subset: &str) -> Vec<PromptRecord> {
        build_records(self.dataset.subset(subset).unwrap(), &self.template, &mut DataReport::default())
    }

    pub fn knowledge(&self) -> BTreeMap<String, Vec<f64>> {
        self.survey.knowledge.clone()
    }
}

pub fn assert_close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b} (tolerance {tol})");
}

/// Relative error between the analytic adapter gradient of `kind` on a small
/// embedding backend and central finite differences, at a random point.
pub fn adapter_gradient_error(kind: simdist_core::LossKind, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;
    use simdist_core::alignment::{label_token_ids, restrict_logits, softmax, Objective};
    use simdist_core::backend::{EmbeddingBackend, EmbeddingConfig};
    use simdist_core::{Backend, TrainableBackend};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let config = EmbeddingConfig { question_dim: 4, country_dim: 3, rank: 2, dropout: 0.1, seed, ..Default::default() };
    let knowledge: BTreeMap<String, Vec<f64>> =
        BTreeMap::from([("Ruritania".to_string(), (0..3).map(|_| rng.sample(StandardNormal)).collect())]);
    let mut backend = EmbeddingBackend::new(config, knowledge, PromptTemplate::default()).unwrap();
    let n = rng.gen_range(2..=5);
    let options: Vec<String> = (0..n).map(|i| format!("Answer {i}")).collect();
    let option_refs: Vec<&str> = options.iter().map(String::as_str).collect();
    let weights: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen::<f64>() + 0.01 }).collect();
    let total: f64 = weights.iter().sum();
    let target: Vec<f64> = if total > 0.0 { weights.iter().map(|w| w / total).collect() } else { uniform(n) };
    let rec = record("Ruritania", &question(seed as u32 % 97 + 1, &option_refs), &target);

    let params: Vec<f64> =
        backend.adapter_params().iter().map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
    backend.load_adapter_params(&params).unwrap();
    let ids = label_token_ids(&backend, &rec.option_labels).unwrap();
    let objective = Objective::new(kind);
    let dropout_seed: u64 = rng.gen();
    let text = rec.rendered_text.clone();

    let loss_at = |b: &EmbeddingBackend| {
        let full = b.forward_train(&text, dropout_seed).unwrap();
        let z = restrict_logits(&full, &ids, "r").unwrap();
        objective.value(&target, &softmax(&z)).unwrap()
    };

    backend.zero_grad();
    let full = backend.forward_train(&text, dropout_seed).unwrap();
    let z = restrict_logits(&full, &ids, "r").unwrap();
    let (_, g) = objective.value_and_logit_grad(&target, &z).unwrap();
    let mut full_grad = vec![0.0; backend.vocab_size()];
    for (&id, gi) in ids.iter().zip(&g) {
        full_grad[id as usize] += gi;
    }
    backend.backward(&text, dropout_seed, &full_grad).unwrap();
    let analytic = backend.params_and_grads().1.to_vec();

    let h = 1e-6;
    let mut numeric = vec![0.0; params.len()];
    let mut probe = params.clone();
    for i in 0..params.len() {
        probe[i] = params[i] + h;
        backend.load_adapter_params(&probe).unwrap();
        let up = loss_at(&backend);
        probe[i] = params[i] - h;
        backend.load_adapter_params(&probe).unwrap();
        let down = loss_at(&backend);
        probe[i] = params[i];
        numeric[i] = (up - down) / (2.0 * h);
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}
