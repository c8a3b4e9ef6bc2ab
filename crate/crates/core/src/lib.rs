//! Multiplier method estimation of disease prevalence from registry data.

pub mod config;
pub mod consistency;
pub mod data;
pub mod design;
pub mod diagnostics;
pub mod episodes;
pub mod error;
pub mod fit;
pub mod likelihood;
pub mod sampler;
pub mod select;
pub mod synthetic;
pub mod table;

pub use config::{Family, ModelConfig, RegressionId, RegressionSpec, Term};
pub use consistency::{consistency_analysis, ConsistencyAnalysis, SourceSeries};
pub use data::{Factor, Levels, StrataDataset, StratumCounts, StratumKey};
pub use design::{build_design, linear_predictor, Design, ParamLayout, ParameterVector};
pub use diagnostics::{
    consistency_pvalue, deviance_report, pd_and_dic, residual_deviance, Aggregation,
    ConsistencyResult, DevianceReport, UnitTotals,
};
pub use episodes::{code_treatment_episodes, CodedEpisodes, TreatmentEpisode};
pub use error::{MpepError, Result};
pub use fit::{convergence_gate, fit, fit_model, summarize, Fit, GateResult, RunWarnings, Summary, SummaryRow};
pub use likelihood::{
    extra_time_at_risk, grad_log_posterior, joint_log_posterior, log_lik_count, rmst, CountFamily,
    Model,
};
pub use select::{select_terms, stepwise_select, Candidate, CandidateList, FitScore, SelectionTrace};
pub use synthetic::{generate_synthetic, SyntheticShape, SyntheticTruth};
