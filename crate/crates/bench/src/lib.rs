//! Shared inputs for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simdist_core::pipeline::{build_data, subset_records, BuiltData};
use simdist_core::survey_data::DataReport;
use simdist_core::{PromptRecord, PromptTemplate, RunConfig};

/// `count` seeded random distributions over `n` options.
pub fn distributions(seed: u64, n: usize, count: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
        .collect()
}

/// The default synthetic survey and the records of one subset.
pub fn synthetic(subset: &str) -> (BuiltData, Vec<PromptRecord>) {
    let cfg = RunConfig::from_json(r#"{"data": {"source": "synthetic"}}"#).expect("valid config");
    let data = build_data(&cfg).expect("synthetic data builds");
    let records = subset_records(&data.dataset, subset, &PromptTemplate::default(), &mut DataReport::default())
        .expect("subset exists");
    (data, records)
}
