//! Forward stepwise term selection on residual deviance plus pD.

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, RegressionId, Term};
use crate::data::StrataDataset;
use crate::diagnostics::deviance_report;
use crate::error::{MpepError, Result};
use crate::fit::{fit, Fit};
use crate::sampler::SamplerConfig;
use crate::table::Table;

/// A term is kept when it lowers `ResDev + pD` by at least this much.
pub const SELECTION_THRESHOLD: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Candidate {
    /// Regression name: an event type, `exit` or `prevalence`.
    pub regression: String,
    pub term: Term,
    #[serde(default)]
    pub random: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateList {
    #[serde(default, rename = "candidate")]
    pub candidates: Vec<Candidate>,
}

impl CandidateList {
    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| MpepError::InvalidConfig(format!("candidates: {e}")))
    }
}

/// Fit statistics a selection step is judged on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitScore {
    pub resdev: f64,
    pub pd: f64,
    pub dic: f64,
    pub converged: bool,
}

impl FitScore {
    pub fn criterion(&self) -> f64 {
        self.resdev + self.pd
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub candidate: Candidate,
    /// `None` when the fit failed outright.
    pub score: Option<FitScore>,
    /// Change in `ResDev + pD` against the model current at this step.
    pub change: Option<f64>,
    pub retained: bool,
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub base: FitScore,
    pub steps: Vec<SelectionStep>,
}

impl SelectionTrace {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["candidate", "ResDev", "pD", "DIC", "change", "decision"]);
        let f = |v: Option<f64>| v.map_or("-".into(), |v| format!("{v:.1}"));
        t.row(vec![
            "base".into(),
            format!("{:.1}", self.base.resdev),
            format!("{:.1}", self.base.pd),
            format!("{:.1}", self.base.dic),
            "-".into(),
            "-".into(),
        ]);
        for s in &self.steps {
            let kind = if s.candidate.random { "re" } else { "fixed" };
            let decision = match (&s.flag, s.retained) {
                (Some(flag), _) => format!("skipped: {flag}"),
                (None, true) => "retained".into(),
                (None, false) => "rejected".into(),
            };
            t.row(vec![
                format!("{} {} {}", s.candidate.regression, kind, s.candidate.term),
                f(s.score.map(|x| x.resdev)),
                f(s.score.map(|x| x.pd)),
                f(s.score.map(|x| x.dic)),
                f(s.change),
                decision,
            ]);
        }
        t
    }
}

fn with_candidate(config: &ModelConfig, c: &Candidate) -> Result<ModelConfig> {
    let id = config
        .regression_id(&c.regression)
        .ok_or_else(|| MpepError::InvalidConfig(format!("candidate names unknown regression {:?}", c.regression)))?;
    let mut next = config.clone();
    let spec = next.regression_mut(id);
    if spec.fixed.contains(&c.term) || spec.re.contains(&c.term) {
        return Err(MpepError::InvalidConfig(format!(
            "candidate {} is already in the {} regression",
            c.term, c.regression
        )));
    }
    if c.random {
        spec.re.push(c.term.clone());
    } else {
        spec.fixed.push(c.term.clone());
    }
    next.validate()?;
    Ok(next)
}

/// Adds candidates one at a time and keeps each that lowers `ResDev + pD`
/// by at least three. Event-rate and exit candidates are considered
/// before prevalence candidates; within each group the given order holds.
/// Failed or non-converged fits are skipped and flagged.
pub fn stepwise_select<F>(base: &ModelConfig, candidates: &[Candidate], mut fitter: F) -> Result<(ModelConfig, SelectionTrace)>
where
    F: FnMut(&ModelConfig) -> Result<FitScore>,
{
    base.validate()?;
    for c in candidates {
        with_candidate(base, c)?;
    }
    let is_prev = |c: &Candidate| base.regression_id(&c.regression) == Some(RegressionId::Prevalence);
    let ordered: Vec<&Candidate> = candidates
        .iter()
        .filter(|c| !is_prev(c))
        .chain(candidates.iter().filter(|c| is_prev(c)))
        .collect();

    let base_score = fitter(base)?;
    if !base_score.converged {
        return Err(MpepError::NotConverged("base model failed the convergence gate".into()));
    }
    let mut current = base.clone();
    let mut current_score = base_score;
    let mut steps = Vec::with_capacity(ordered.len());
    for c in ordered {
        let trial = match with_candidate(&current, c) {
            Ok(t) => t,
            Err(e) => {
                steps.push(SelectionStep {
                    candidate: c.clone(),
                    score: None,
                    change: None,
                    retained: false,
                    flag: Some(e.to_string()),
                });
                continue;
            }
        };
        let step = match fitter(&trial) {
            Err(e) => SelectionStep {
                candidate: c.clone(),
                score: None,
                change: None,
                retained: false,
                flag: Some(e.to_string()),
            },
            Ok(score) => {
                let change = score.criterion() - current_score.criterion();
                let flag = (!score.converged).then(|| "fit did not converge".to_string());
                let retained = flag.is_none() && change <= -SELECTION_THRESHOLD;
                if retained {
                    current = trial;
                    current_score = score;
                }
                SelectionStep {
                    candidate: c.clone(),
                    score: Some(score),
                    change: Some(change),
                    retained,
                    flag,
                }
            }
        };
        steps.push(step);
    }
    Ok((
        current,
        SelectionTrace {
            base: base_score,
            steps,
        },
    ))
}

/// Scores a completed fit by its deviance report.
pub fn score_fit(fit: &Fit) -> Result<FitScore> {
    let r = deviance_report(&fit.model, &fit.draws)?;
    Ok(FitScore {
        resdev: r.total.resdev,
        pd: r.total.pd,
        dic: r.total.dic,
        converged: fit.gate.passed,
    })
}

/// [`stepwise_select`] with every candidate fitted by the sampler.
pub fn select_terms(
    base: &ModelConfig,
    candidates: &[Candidate],
    dataset: &StrataDataset,
    sampler: &SamplerConfig,
) -> Result<(ModelConfig, SelectionTrace)> {
    stepwise_select(base, candidates, |cfg| score_fit(&fit(cfg, dataset, sampler)?))
}
