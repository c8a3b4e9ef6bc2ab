//! Dummy coding of the regression term lists and the flat parameter layout.
//!
//! Every regression row is stored sparsely: the parameter indices of its
//! active fixed-effect columns plus, for each random-effect block touching
//! the row, the index of the raw (standard-normal) level value and of the
//! block's log scale. Random effects use the non-centred form
//! `value = scale * raw`.

use std::collections::HashMap;
use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::{Family, ModelConfig, RegressionId, Selector, Term};
use crate::data::{Factor, Levels, StrataDataset, StratumKey};
use crate::error::{MpepError, Result};

/// Treatment status of a cohort row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Status {
    Off = 0,
    On = 1,
}

/// What a parameter is, for transforms and priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParamKind {
    Fixed {
        regression: RegressionId,
    },
    ReRaw {
        regression: RegressionId,
        block: usize,
    },
    ReLogScale {
        regression: RegressionId,
        block: usize,
    },
    LogTheta {
        regression: RegressionId,
    },
    LogitPi {
        regression: RegressionId,
    },
    LogitPrevC {
        stratum: usize,
    },
    Bias {
        event: usize,
        stratum: usize,
    },
    LogitPmatch,
}

/// Names and kinds of every entry of the flat unconstrained vector. The
/// entries partition the vector exactly.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ParamLayout {
    names: Vec<String>,
    kinds: Vec<ParamKind>,
    #[serde(skip)]
    lookup: HashMap<String, usize>,
}

impl ParamLayout {
    fn push(&mut self, name: String, kind: ParamKind) -> usize {
        let i = self.names.len();
        self.lookup.insert(name.clone(), i);
        self.names.push(name);
        self.kinds.push(kind);
        i
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn kinds(&self) -> &[ParamKind] {
        &self.kinds
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.lookup.get(name).copied()
    }

    pub fn zeros(&self) -> ParameterVector {
        ParameterVector::new(vec![0.0; self.len()])
    }

    /// Builds a vector from a name → value map; every name must be present.
    pub fn from_named(&self, values: &HashMap<String, f64>) -> Result<ParameterVector> {
        let mut out = vec![0.0; self.len()];
        let mut missing = Vec::new();
        for (i, n) in self.names.iter().enumerate() {
            match values.get(n) {
                Some(v) => out[i] = *v,
                None => missing.push(n.clone()),
            }
        }
        if !missing.is_empty() {
            let shown: Vec<_> = missing.iter().take(5).cloned().collect();
            return Err(MpepError::InvalidParameters(format!(
                "{} parameter(s) missing, e.g. {}",
                missing.len(),
                shown.join(", ")
            )));
        }
        for k in values.keys() {
            if !self.lookup.contains_key(k) {
                return Err(MpepError::InvalidParameters(format!(
                    "unknown parameter {k}"
                )));
            }
        }
        Ok(ParameterVector::new(out))
    }

    pub fn to_named(&self, params: &ParameterVector) -> indexmap::IndexMap<String, f64> {
        self.names
            .iter()
            .cloned()
            .zip(params.values().iter().copied())
            .collect()
    }
}

/// Flat unconstrained parameter values (log / logit for constrained
/// quantities), interpreted through a [`ParamLayout`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParameterVector(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReEntry {
    pub raw: usize,
    pub log_scale: usize,
}

/// One sparse design row.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DesignRow {
    pub fixed: Vec<usize>,
    pub re: Vec<ReEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReBlock {
    pub term: Term,
    pub raw: Range<usize>,
    pub log_scale: usize,
}

/// The coded regression: parameter ranges and one row per unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionDesign {
    pub id: RegressionId,
    pub name: String,
    pub family: Option<Family>,
    pub fixed: Range<usize>,
    pub fixed_columns: Vec<String>,
    pub blocks: Vec<ReBlock>,
    pub log_theta: Option<usize>,
    pub logit_pi: Option<usize>,
    /// For event-rate regressions rows are `stratum * 2 + status`; for exit
    /// and prevalence one row per stratum.
    pub rows: Vec<DesignRow>,
}

impl RegressionDesign {
    pub fn row_index(&self, stratum: usize, status: Status) -> usize {
        match self.id {
            RegressionId::Event(_) => stratum * 2 + status as usize,
            _ => stratum,
        }
    }
}

/// Coded design for all regressions plus the indices of the remaining
/// per-stratum parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Design {
    pub layout: ParamLayout,
    pub levels: Levels,
    pub event_types: Vec<String>,
    /// Event-rate regressions in config order, then exit, then prevalence.
    pub regressions: Vec<RegressionDesign>,
    pub logit_prev_c: Range<usize>,
    /// `bias[event][stratum]` is the parameter index of that cell's bias.
    pub bias: Vec<Vec<Option<usize>>>,
    pub logit_pmatch: Option<usize>,
}

impl Design {
    pub fn regression(&self, id: RegressionId) -> &RegressionDesign {
        let n_events = self.event_types.len();
        match id {
            RegressionId::Event(i) => &self.regressions[i],
            RegressionId::Exit => &self.regressions[n_events],
            RegressionId::Prevalence => &self.regressions[n_events + 1],
        }
    }

    pub fn n_strata(&self) -> usize {
        self.levels.n_strata()
    }

    pub fn n_events(&self) -> usize {
        self.event_types.len()
    }
}

/// Dummy levels a selector spans, as (factor-or-treatment, level) lists.
fn selector_levels(sel: &Selector, levels: &Levels) -> Result<Vec<usize>> {
    match sel {
        Selector::Treatment => Ok(vec![1]),
        Selector::Factor(f) => Ok((1..levels.count(*f)).collect()),
        Selector::Level(f, l) => {
            if *l >= levels.count(*f) {
                Err(MpepError::InvalidConfig(format!(
                    "term references level {l} of {} which has {} levels",
                    f.name(),
                    levels.count(*f)
                )))
            } else {
                Ok(vec![*l])
            }
        }
    }
}

fn level_of(sel: &Selector, key: &StratumKey, status: Status) -> usize {
    match sel {
        Selector::Treatment => status as usize,
        Selector::Factor(f) | Selector::Level(f, _) => key.level(*f),
    }
}

fn level_label(sel: &Selector, level: usize, levels: &Levels) -> String {
    match sel {
        Selector::Treatment => "on".to_string(),
        Selector::Factor(f) | Selector::Level(f, _) => levels.of(*f)[level].clone(),
    }
}

fn selector_name(sel: &Selector) -> &'static str {
    match sel {
        Selector::Treatment => "treatment",
        Selector::Factor(f) | Selector::Level(f, _) => f.name(),
    }
}

/// Columns of a term: the cartesian product of each selector's dummy levels.
struct TermColumns {
    per_selector: Vec<Vec<usize>>,
    labels: Vec<String>,
}

impl TermColumns {
    fn new(term: &Term, levels: &Levels) -> Result<Self> {
        let per_selector: Vec<Vec<usize>> = term
            .selectors()
            .iter()
            .map(|s| selector_levels(s, levels))
            .collect::<Result<_>>()?;
        let mut labels = vec![String::new()];
        for (sel, lv) in term.selectors().iter().zip(&per_selector) {
            let mut next = Vec::with_capacity(labels.len() * lv.len());
            for prefix in &labels {
                for &l in lv {
                    let part = format!("{}={}", selector_name(sel), level_label(sel, l, levels));
                    next.push(if prefix.is_empty() {
                        part
                    } else {
                        format!("{prefix}:{part}")
                    });
                }
            }
            labels = next;
        }
        Ok(TermColumns {
            per_selector,
            labels,
        })
    }

    fn len(&self) -> usize {
        self.labels.len()
    }

    /// Active column for a row, if the row is non-baseline on every selector.
    fn active(&self, term: &Term, key: &StratumKey, status: Status) -> Option<usize> {
        let mut idx = 0;
        for (sel, lv) in term.selectors().iter().zip(&self.per_selector) {
            let level = level_of(sel, key, status);
            let pos = lv.iter().position(|&l| l == level)?;
            idx = idx * lv.len() + pos;
        }
        Some(idx)
    }
}

/// Codes every regression of `config` over the strata of `dataset`.
pub fn build_design(config: &ModelConfig, dataset: &StrataDataset) -> Result<Design> {
    config.validate()?;
    let levels = dataset.levels().clone();
    for name in config.events.keys() {
        if dataset.event_index(name).is_none() {
            return Err(MpepError::InvalidConfig(format!(
                "event type {name} not present in dataset"
            )));
        }
    }
    if let Some(d) = config.deaths_event() {
        let ds_deaths = dataset
            .header()
            .deaths
            .map(|i| dataset.event_types()[i].as_str());
        if ds_deaths != Some(d) {
            return Err(MpepError::InvalidConfig(format!(
                "config marks {d} as deaths but the dataset designates {ds_deaths:?}"
            )));
        }
    }

    let n_strata = levels.n_strata();
    let keys: Vec<StratumKey> = levels.keys().collect();
    let mut layout = ParamLayout {
        names: Vec::new(),
        kinds: Vec::new(),
        lookup: HashMap::new(),
    };
    let mut regressions = Vec::new();

    for id in config.regression_ids() {
        let spec = config.regression(id);
        let rname = config.regression_name(id).to_string();
        let is_rate = matches!(id, RegressionId::Event(_));
        let statuses: &[Status] = if is_rate {
            &[Status::Off, Status::On]
        } else {
            &[Status::Off]
        };
        let mut rows = vec![DesignRow::default(); n_strata * statuses.len()];
        let row_of = |s: usize, st: Status| if is_rate { s * 2 + st as usize } else { s };

        // fixed effects: intercept then each term's columns
        let fixed_start = layout.len();
        let mut fixed_columns = vec!["intercept".to_string()];
        let icpt = layout.push(
            format!("{rname}.beta.intercept"),
            ParamKind::Fixed { regression: id },
        );
        for row in rows.iter_mut() {
            row.fixed.push(icpt);
        }
        for term in &spec.fixed {
            let cols = TermColumns::new(term, &levels)?;
            let base = layout.len();
            for label in &cols.labels {
                layout.push(
                    format!("{rname}.beta.{label}"),
                    ParamKind::Fixed { regression: id },
                );
                fixed_columns.push(label.clone());
            }
            for (s, key) in keys.iter().enumerate() {
                for &st in statuses {
                    if let Some(c) = cols.active(term, key, st) {
                        rows[row_of(s, st)].fixed.push(base + c);
                    }
                }
            }
        }
        let fixed = fixed_start..layout.len();

        let mut blocks = Vec::new();
        for (b, term) in spec.re.iter().enumerate() {
            let cols = TermColumns::new(term, &levels)?;
            if cols.len() == 0 {
                continue;
            }
            let base = layout.len();
            for label in &cols.labels {
                layout.push(
                    format!("{rname}.re.{term}.{label}"),
                    ParamKind::ReRaw {
                        regression: id,
                        block: b,
                    },
                );
            }
            let log_scale = layout.push(
                format!("{rname}.re.{term}.log_sigma"),
                ParamKind::ReLogScale {
                    regression: id,
                    block: b,
                },
            );
            for (s, key) in keys.iter().enumerate() {
                for &st in statuses {
                    if let Some(c) = cols.active(term, key, st) {
                        rows[row_of(s, st)].re.push(ReEntry {
                            raw: base + c,
                            log_scale,
                        });
                    }
                }
            }
            blocks.push(ReBlock {
                term: term.clone(),
                raw: base..base + cols.len(),
                log_scale,
            });
        }

        check_full_rank(&rname, &rows, &fixed)?;

        regressions.push(RegressionDesign {
            id,
            name: rname,
            family: if id == RegressionId::Prevalence {
                None
            } else {
                Some(config.family(id))
            },
            fixed,
            fixed_columns,
            blocks,
            log_theta: None,
            logit_pi: None,
            rows,
        });
    }

    for reg in regressions.iter_mut() {
        if let Some(fam) = reg.family {
            if fam.has_dispersion() {
                reg.log_theta = Some(layout.push(
                    format!("{}.log_theta", reg.name),
                    ParamKind::LogTheta { regression: reg.id },
                ));
            }
            if fam.has_inflation() {
                reg.logit_pi = Some(layout.push(
                    format!("{}.logit_pi", reg.name),
                    ParamKind::LogitPi { regression: reg.id },
                ));
            }
        }
    }

    let prev_start = layout.len();
    for (s, key) in keys.iter().enumerate() {
        layout.push(
            format!("logit_prev_c.{}", levels.label(key)),
            ParamKind::LogitPrevC { stratum: s },
        );
    }
    let logit_prev_c = prev_start..layout.len();

    let event_types = config.event_names();
    let mut bias = vec![vec![None; n_strata]; event_types.len()];
    for spec in &config.bias {
        let e = event_types
            .iter()
            .position(|n| n == &spec.event)
            .expect("validated");
        let mut allowed: Vec<Option<Vec<usize>>> = Vec::new();
        for f in Factor::ALL {
            let wanted = spec.levels(f);
            if wanted.is_empty() {
                allowed.push(None);
                continue;
            }
            let idx = wanted
                .iter()
                .map(|w| {
                    levels.of(f).iter().position(|l| l == w).ok_or_else(|| {
                        MpepError::InvalidConfig(format!("bias: unknown {} level {w:?}", f.name()))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            allowed.push(Some(idx));
        }
        for (s, key) in keys.iter().enumerate() {
            let matches = Factor::ALL.iter().zip(&allowed).all(|(f, a)| match a {
                None => true,
                Some(v) => v.contains(&key.level(*f)),
            });
            if matches && bias[e][s].is_none() {
                bias[e][s] = Some(layout.push(
                    format!("bias.{}.{}", spec.event, levels.label(key)),
                    ParamKind::Bias {
                        event: e,
                        stratum: s,
                    },
                ));
            }
        }
    }

    let logit_pmatch = config
        .pmatch
        .as_ref()
        .map(|_| layout.push("logit_pmatch".into(), ParamKind::LogitPmatch));

    Ok(Design {
        layout,
        levels,
        event_types,
        regressions,
        logit_prev_c,
        bias,
        logit_pmatch,
    })
}

fn check_full_rank(name: &str, rows: &[DesignRow], fixed: &Range<usize>) -> Result<()> {
    let ncol = fixed.len();
    let m = DMatrix::from_fn(rows.len(), ncol, |r, c| {
        if rows[r].fixed.contains(&(fixed.start + c)) {
            1.0
        } else {
            0.0
        }
    });
    let rank = m.rank(1e-9);
    if rank < ncol {
        return Err(MpepError::InvalidConfig(format!(
            "[model.{name}] fixed-effect design is rank deficient ({rank} of {ncol} columns)"
        )));
    }
    Ok(())
}

/// Linear predictor of every row of a regression.
pub fn linear_predictor(
    design: &Design,
    params: &ParameterVector,
    regression: RegressionId,
) -> Result<Vec<f64>> {
    if params.len() != design.layout.len() {
        return Err(MpepError::InvalidParameters(format!(
            "expected {} parameters, got {}",
            design.layout.len(),
            params.len()
        )));
    }
    let p = params.values();
    let reg = design.regression(regression);
    Ok(reg.rows.iter().map(|row| row_eta(row, p)).collect())
}

#[inline]
pub(crate) fn row_eta(row: &DesignRow, p: &[f64]) -> f64 {
    let mut eta = 0.0;
    for &c in &row.fixed {
        eta += p[c];
    }
    for re in &row.re {
        eta += p[re.log_scale].exp() * p[re.raw];
    }
    eta
}
