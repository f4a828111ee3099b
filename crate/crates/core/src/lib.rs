//! Survey response distribution prediction: data pipeline, prompting,
//! first-token alignment training, baselines and evaluation.

pub mod alignment;
pub mod backend;
pub mod baselines;
pub mod config;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod pipeline;
pub mod prompting;
pub mod survey_data;
pub mod synthetic;
pub mod util;

pub use alignment::{LossKind, OptionLogits, TrainConfig, TrainingLog};
pub use backend::{Backend, BackendDescriptor, BackendKind, TrainableBackend};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use eval::{EvalResult, Predictor, Variant};
pub use prompting::{PromptRecord, PromptTemplate};
pub use survey_data::{Entry, ResponseDistribution, SurveyQuestion};
