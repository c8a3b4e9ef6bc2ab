//! Model configuration: likelihood families, regression term lists, priors
//! and the bias / linkage extensions. Serialized as TOML.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::data::Factor;
use crate::error::{MpepError, Result};

/// Count likelihood family of a sub-model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    #[default]
    Poisson,
    Nb,
    Zip,
    Zinb,
}

impl Family {
    pub fn has_dispersion(self) -> bool {
        matches!(self, Family::Nb | Family::Zinb)
    }

    pub fn has_inflation(self) -> bool {
        matches!(self, Family::Zip | Family::Zinb)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Poisson => "poisson",
            Family::Nb => "nb",
            Family::Zip => "zip",
            Family::Zinb => "zinb",
        }
    }
}

impl FromStr for Family {
    type Err = MpepError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poisson" => Ok(Family::Poisson),
            "nb" => Ok(Family::Nb),
            "zip" => Ok(Family::Zip),
            "zinb" => Ok(Family::Zinb),
            _ => Err(MpepError::InvalidConfig(format!("unknown family {s:?}"))),
        }
    }
}

/// One component of a regression term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Selector {
    /// On-treatment indicator.
    Treatment,
    /// All non-baseline levels of a factor.
    Factor(Factor),
    /// A single non-baseline level of a factor (0-based level index).
    Level(Factor, usize),
}

impl Selector {
    pub fn factor(&self) -> Option<Factor> {
        match self {
            Selector::Treatment => None,
            Selector::Factor(f) | Selector::Level(f, _) => Some(*f),
        }
    }

    fn sort_key(&self) -> (u8, usize) {
        match self {
            Selector::Treatment => (0, 0),
            Selector::Factor(f) => (1 + *f as u8, 0),
            Selector::Level(f, l) => (1 + *f as u8, *l),
        }
    }
}

impl FromStr for Selector {
    type Err = MpepError;
    fn from_str(s: &str) -> Result<Self> {
        let factor = |name: &str| -> Option<Factor> {
            Factor::ALL.iter().copied().find(|f| f.name() == name)
        };
        match s {
            "treatment" => return Ok(Selector::Treatment),
            // age bands written as in age^2 / age^3
            "age2" => return Ok(Selector::Level(Factor::Age, 1)),
            "age3" => return Ok(Selector::Level(Factor::Age, 2)),
            _ => {}
        }
        if let Some(f) = factor(s) {
            return Ok(Selector::Factor(f));
        }
        if let Some((name, level)) = s.split_once('@') {
            if let (Some(f), Ok(l)) = (factor(name), level.parse::<usize>()) {
                if l == 0 {
                    return Err(MpepError::InvalidConfig(format!(
                        "{s}: level 0 is the baseline and has no dummy"
                    )));
                }
                return Ok(Selector::Level(f, l));
            }
        }
        Err(MpepError::InvalidConfig(format!(
            "term references unknown factor {s:?}"
        )))
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Selector::Treatment => write!(f, "treatment"),
            Selector::Factor(x) => write!(f, "{}", x.name()),
            Selector::Level(Factor::Age, 1) => write!(f, "age2"),
            Selector::Level(Factor::Age, 2) => write!(f, "age3"),
            Selector::Level(x, l) => write!(f, "{}@{l}", x.name()),
        }
    }
}

/// A main effect (one selector) or an interaction (several).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Term(Vec<Selector>);

impl Term {
    pub fn new(mut selectors: Vec<Selector>) -> Result<Self> {
        if selectors.is_empty() {
            return Err(MpepError::InvalidConfig("empty term".into()));
        }
        selectors.sort_by_key(Selector::sort_key);
        for w in selectors.windows(2) {
            if w[0].factor() == w[1].factor() {
                return Err(MpepError::InvalidConfig(format!(
                    "term {} uses the same factor twice",
                    Term(selectors.clone())
                )));
            }
        }
        Ok(Term(selectors))
    }

    pub fn main(selector: Selector) -> Self {
        Term(vec![selector])
    }

    pub fn selectors(&self) -> &[Selector] {
        &self.0
    }

    pub fn involves_treatment(&self) -> bool {
        self.0.contains(&Selector::Treatment)
    }

    pub fn involves(&self, factor: Factor) -> bool {
        self.0.iter().any(|s| s.factor() == Some(factor))
    }

    pub fn is_interaction(&self) -> bool {
        self.0.len() > 1
    }
}

impl FromStr for Term {
    type Err = MpepError;
    fn from_str(s: &str) -> Result<Self> {
        Term::new(
            s.split(':')
                .map(|p| p.trim().parse())
                .collect::<Result<_>>()?,
        )
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|s| s.to_string()).collect();
        write!(f, "{}", parts.join(":"))
    }
}

impl Serialize for Term {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Term {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Joined(String),
            Parts(Vec<String>),
        }
        let joined = match Raw::deserialize(d)? {
            Raw::Joined(s) => s,
            Raw::Parts(p) => p.join(":"),
        };
        joined.parse().map_err(serde::de::Error::custom)
    }
}

/// Which regression a term or parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegressionId {
    /// Cohort event-rate regression for the event type at this index.
    Event(usize),
    /// Other-cause exit rate.
    Exit,
    /// Logit extra prevalence.
    Prevalence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<Family>,
    /// Marks the event type whose extra counts are deaths.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub deaths: bool,
    #[serde(default)]
    pub fixed: Vec<Term>,
    #[serde(default)]
    pub re: Vec<Term>,
}

impl RegressionSpec {
    /// All main effects, optionally with treatment.
    pub fn main_effects(family: Option<Family>, treatment: bool) -> Self {
        let mut fixed = Vec::new();
        if treatment {
            fixed.push(Term::main(Selector::Treatment));
        }
        fixed.extend(Factor::ALL.iter().map(|&f| Term::main(Selector::Factor(f))));
        RegressionSpec {
            family,
            deaths: false,
            fixed,
            re: Vec::new(),
        }
    }
}

/// Prior settings. All normal priors are on the unconstrained scale except
/// the random-effect scales, which are half-normal on the natural scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Priors {
    pub fixed_sd: f64,
    pub re_scale_sd: f64,
    pub log_theta_mean: f64,
    pub log_theta_sd: f64,
    pub logit_pi_mean: f64,
    pub logit_pi_sd: f64,
    pub logit_prev_c_mean: f64,
    pub logit_prev_c_sd: f64,
    pub bias_sd: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Priors {
            fixed_sd: 10.0,
            re_scale_sd: 1.0,
            log_theta_mean: 0.0,
            log_theta_sd: 5.0,
            logit_pi_mean: -3.0,
            logit_pi_sd: 2.0,
            logit_prev_c_mean: 0.0,
            logit_prev_c_sd: 10.0,
            bias_sd: 10.0,
        }
    }
}

/// Informative normal prior on logit pmatch. Required when linkage
/// adjustment is enabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PmatchPrior {
    pub logit_mean: f64,
    pub logit_sd: f64,
}

/// Extra-count cells of one event type that receive their own bias term.
/// Empty level lists match every level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BiasSpec {
    pub event: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sex: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub age: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub year: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub region: Vec<String>,
}

impl BiasSpec {
    pub fn levels(&self, factor: Factor) -> &[String] {
        match factor {
            Factor::Sex => &self.sex,
            Factor::Age => &self.age,
            Factor::Year => &self.year,
            Factor::Region => &self.region,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawConfig {
    model: IndexMap<String, RegressionSpec>,
    #[serde(default)]
    priors: Priors,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pmatch: Option<PmatchPrior>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    bias: Vec<BiasSpec>,
}

pub const EXIT_SECTION: &str = "exit";
pub const PREVALENCE_SECTION: &str = "prevalence";

/// A validated model configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Event types in declaration order with their rate regressions.
    pub events: IndexMap<String, RegressionSpec>,
    pub exit: RegressionSpec,
    pub prevalence: RegressionSpec,
    pub priors: Priors,
    pub pmatch: Option<PmatchPrior>,
    pub bias: Vec<BiasSpec>,
}

impl ModelConfig {
    /// Main-effects model with one family for every count sub-model.
    pub fn main_effects(event_types: &[&str], family: Family) -> Self {
        ModelConfig {
            events: event_types
                .iter()
                .map(|e| {
                    (
                        e.to_string(),
                        RegressionSpec::main_effects(Some(family), true),
                    )
                })
                .collect(),
            exit: RegressionSpec::main_effects(Some(family), false),
            prevalence: RegressionSpec::main_effects(None, false),
            priors: Priors::default(),
            pmatch: None,
            bias: Vec::new(),
        }
    }

    pub fn event_names(&self) -> Vec<String> {
        self.events.keys().cloned().collect()
    }

    pub fn regression(&self, id: RegressionId) -> &RegressionSpec {
        match id {
            RegressionId::Event(i) => &self.events[i],
            RegressionId::Exit => &self.exit,
            RegressionId::Prevalence => &self.prevalence,
        }
    }

    pub fn regression_mut(&mut self, id: RegressionId) -> &mut RegressionSpec {
        match id {
            RegressionId::Event(i) => &mut self.events[i],
            RegressionId::Exit => &mut self.exit,
            RegressionId::Prevalence => &mut self.prevalence,
        }
    }

    pub fn regression_ids(&self) -> Vec<RegressionId> {
        (0..self.events.len())
            .map(RegressionId::Event)
            .chain([RegressionId::Exit, RegressionId::Prevalence])
            .collect()
    }

    pub fn regression_name(&self, id: RegressionId) -> &str {
        match id {
            RegressionId::Event(i) => self
                .events
                .get_index(i)
                .map(|(k, _)| k.as_str())
                .unwrap_or("?"),
            RegressionId::Exit => EXIT_SECTION,
            RegressionId::Prevalence => PREVALENCE_SECTION,
        }
    }

    pub fn regression_id(&self, name: &str) -> Option<RegressionId> {
        match name {
            EXIT_SECTION => Some(RegressionId::Exit),
            PREVALENCE_SECTION => Some(RegressionId::Prevalence),
            _ => self.events.get_index_of(name).map(RegressionId::Event),
        }
    }

    /// Family of a count sub-model (event type or exit).
    pub fn family(&self, id: RegressionId) -> Family {
        self.regression(id).family.unwrap_or_default()
    }

    pub fn deaths_event(&self) -> Option<&str> {
        self.events
            .iter()
            .find(|(_, r)| r.deaths)
            .map(|(k, _)| k.as_str())
    }

    /// Restricts the model to a subset of event types (node splitting).
    /// Bias specs for dropped event types are removed.
    pub fn with_events(&self, names: &[String]) -> Result<Self> {
        let mut events = IndexMap::new();
        for n in names {
            let spec = self
                .events
                .get(n)
                .ok_or_else(|| MpepError::InvalidConfig(format!("unknown event type {n}")))?;
            events.insert(n.clone(), spec.clone());
        }
        let mut out = self.clone();
        out.events = events;
        out.bias.retain(|b| names.contains(&b.event));
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.events.is_empty() {
            return Err(MpepError::InvalidConfig(
                "at least one event type is required".into(),
            ));
        }
        if self.events.values().filter(|r| r.deaths).count() > 1 {
            return Err(MpepError::InvalidConfig(
                "more than one event type marked deaths".into(),
            ));
        }
        for id in self.regression_ids() {
            let name = self.regression_name(id);
            let spec = self.regression(id);
            let rate = matches!(id, RegressionId::Event(_));
            if id == RegressionId::Prevalence && spec.family.is_some() {
                return Err(MpepError::InvalidConfig(
                    "the prevalence regression has no count family".into(),
                ));
            }
            if !rate && spec.deaths {
                return Err(MpepError::InvalidConfig(format!(
                    "[model.{name}] cannot be marked deaths"
                )));
            }
            let mut required: Vec<Term> = Factor::ALL
                .iter()
                .map(|&f| Term::main(Selector::Factor(f)))
                .collect();
            if rate {
                required.push(Term::main(Selector::Treatment));
            }
            for t in &required {
                if !spec.fixed.contains(t) {
                    return Err(MpepError::InvalidConfig(format!(
                        "[model.{name}] must include main effect {t}"
                    )));
                }
            }
            for t in spec.fixed.iter().chain(&spec.re) {
                if !rate && t.involves_treatment() {
                    return Err(MpepError::InvalidConfig(format!(
                        "[model.{name}] term {t}: treatment may appear only in event-rate regressions"
                    )));
                }
            }
            for t in &spec.re {
                if !t.is_interaction() || !(t.involves(Factor::Year) || t.involves(Factor::Region))
                {
                    return Err(MpepError::InvalidConfig(format!(
                        "[model.{name}] random-effect term {t} must be an interaction involving year or region"
                    )));
                }
            }
            let mut all: Vec<&Term> = spec.fixed.iter().chain(&spec.re).collect();
            all.sort();
            for w in all.windows(2) {
                if w[0] == w[1] {
                    return Err(MpepError::InvalidConfig(format!(
                        "[model.{name}] repeats term {}",
                        w[0]
                    )));
                }
            }
        }
        for b in &self.bias {
            if !self.events.contains_key(&b.event) {
                return Err(MpepError::InvalidConfig(format!(
                    "bias on unknown event type {}",
                    b.event
                )));
            }
        }
        let p = &self.priors;
        for (name, sd) in [
            ("fixed_sd", p.fixed_sd),
            ("re_scale_sd", p.re_scale_sd),
            ("log_theta_sd", p.log_theta_sd),
            ("logit_pi_sd", p.logit_pi_sd),
            ("logit_prev_c_sd", p.logit_prev_c_sd),
            ("bias_sd", p.bias_sd),
        ] {
            if !(sd > 0.0 && sd.is_finite()) {
                return Err(MpepError::InvalidConfig(format!(
                    "prior {name} must be positive"
                )));
            }
        }
        if let Some(pm) = &self.pmatch {
            if !(pm.logit_sd > 0.0 && pm.logit_sd.is_finite() && pm.logit_mean.is_finite()) {
                return Err(MpepError::InvalidConfig(
                    "pmatch prior must have finite mean and positive sd".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(s).map_err(|e| MpepError::Toml(e.to_string()))?;
        let mut model = raw.model;
        let exit = model
            .shift_remove(EXIT_SECTION)
            .ok_or_else(|| MpepError::InvalidConfig("missing [model.exit]".into()))?;
        let prevalence = model
            .shift_remove(PREVALENCE_SECTION)
            .ok_or_else(|| MpepError::InvalidConfig("missing [model.prevalence]".into()))?;
        let cfg = ModelConfig {
            events: model,
            exit,
            prevalence,
            priors: raw.priors,
            pmatch: raw.pmatch,
            bias: raw.bias,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| MpepError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        let mut model = self.events.clone();
        model.insert(EXIT_SECTION.into(), self.exit.clone());
        model.insert(PREVALENCE_SECTION.into(), self.prevalence.clone());
        let raw = RawConfig {
            model,
            priors: self.priors.clone(),
            pmatch: self.pmatch.clone(),
            bias: self.bias.clone(),
        };
        toml::to_string(&raw).map_err(|e| MpepError::Toml(e.to_string()))
    }
}
