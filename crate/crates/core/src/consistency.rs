//! Node-split consistency analysis of two event sources.

use serde::{Deserialize, Serialize};

use crate::config::{BiasSpec, ModelConfig};
use crate::data::StrataDataset;
use crate::diagnostics::{consistency_pvalue, Aggregation, ConsistencyResult, UnitTotals};
use crate::error::{MpepError, Result};
use crate::fit::{fit, DerivedDraws, Fit, GateResult, SummaryRow};
use crate::sampler::SamplerConfig;
use crate::table::Table;

/// Yearly prevalence of one fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSeries {
    pub source: String,
    pub gate: GateResult,
    pub years: Vec<SummaryRow>,
}

impl SourceSeries {
    pub fn from_fit(source: impl Into<String>, fit: &Fit) -> Result<Self> {
        let d = DerivedDraws::new(&fit.model, &fit.draws)?;
        let years = d
            .year_labels
            .iter()
            .zip(&d.year_prev)
            .map(|(l, s)| SummaryRow::from_chains(l.clone(), s))
            .collect();
        Ok(SourceSeries {
            source: source.into(),
            gate: fit.gate.clone(),
            years,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyAnalysis {
    /// The two single-source event types.
    pub events: [String; 2],
    pub aggregation: Aggregation,
    /// Single-source fits, the joint fit, and the bias-adjusted joint fit
    /// when requested.
    pub series: Vec<SourceSeries>,
    pub result: ConsistencyResult,
    /// Fits in the order of `series`.
    #[serde(skip)]
    pub fits: Vec<Fit>,
}

impl ConsistencyAnalysis {
    pub fn series(&self, source: &str) -> Option<&SourceSeries> {
        self.series.iter().find(|s| s.source == source)
    }

    pub fn fit(&self, source: &str) -> Option<&Fit> {
        self.series.iter().position(|s| s.source == source).map(|i| &self.fits[i])
    }

    pub fn gates_passed(&self) -> bool {
        self.series.iter().all(|s| s.gate.passed)
    }

    /// Yearly prevalence (percent, mean and 95% CrI) by source, with the
    /// p-value column when units are years.
    pub fn table(&self) -> Table {
        let mut header: Vec<&str> = vec!["year"];
        header.extend(self.series.iter().map(|s| s.source.as_str()));
        let by_year = self.aggregation == Aggregation::Year;
        if by_year {
            header.push("p-value");
        }
        let mut t = Table::new(&header);
        let n_years = self.series.first().map_or(0, |s| s.years.len());
        for y in 0..n_years {
            let mut row = vec![self.series[0].years[y].name.clone()];
            for s in &self.series {
                let r = &s.years[y];
                row.push(format!(
                    "{:.3} ({:.3}, {:.3})",
                    100.0 * r.mean,
                    100.0 * r.lower,
                    100.0 * r.upper
                ));
            }
            if by_year {
                row.push(format!("{:.3}", self.result.units[y].p_value));
            }
            t.row(row);
        }
        t
    }

    /// Plot-ready rows: `source, year, estimate, lower, upper` in percent.
    pub fn write_series_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["source", "year", "estimate", "lower", "upper"])?;
        for s in &self.series {
            for r in &s.years {
                w.write_record([
                    s.source.clone(),
                    r.name.clone(),
                    (100.0 * r.mean).to_string(),
                    (100.0 * r.lower).to_string(),
                    (100.0 * r.upper).to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| MpepError::io("series csv", e))?;
        Ok(())
    }
}

/// Bias terms on every extra cell of the non-deaths source, unless the
/// config already declares some.
pub fn with_default_bias(config: &ModelConfig) -> Result<ModelConfig> {
    let mut out = config.clone();
    if out.bias.is_empty() {
        let deaths = config.deaths_event();
        let target = config
            .events
            .keys()
            .find(|k| Some(k.as_str()) != deaths)
            .ok_or_else(|| MpepError::InvalidConfig("no non-deaths event type for the bias term".into()))?;
        out.bias.push(BiasSpec {
            event: target.clone(),
            ..BiasSpec::default()
        });
    }
    out.validate()?;
    Ok(out)
}

/// Fits each source alone and both jointly, then compares the two
/// single-source totals per aggregation unit.
pub fn consistency_analysis(
    config: &ModelConfig,
    dataset: &StrataDataset,
    sampler: &SamplerConfig,
    aggregation: Aggregation,
    bias: bool,
) -> Result<ConsistencyAnalysis> {
    let names = config.event_names();
    if names.len() != 2 {
        return Err(MpepError::InvalidConfig(format!(
            "consistency analysis needs exactly 2 event types, got {}",
            names.len()
        )));
    }
    let mut joint_cfg = config.clone();
    joint_cfg.bias.clear();
    let mut series = Vec::new();
    let mut totals = Vec::new();
    let mut fits = Vec::new();
    for name in &names {
        let cfg = joint_cfg.with_events(std::slice::from_ref(name))?;
        let data = dataset.select_events(std::slice::from_ref(name))?;
        let f = fit(&cfg, &data, sampler)?;
        totals.push(UnitTotals::from_draws(&f.model, &f.draws, aggregation)?);
        series.push(SourceSeries::from_fit(name.clone(), &f)?);
        fits.push(f);
    }
    let joint = fit(&joint_cfg, dataset, sampler)?;
    series.push(SourceSeries::from_fit("joint", &joint)?);
    fits.push(joint);
    if bias {
        let f = fit(&with_default_bias(config)?, dataset, sampler)?;
        series.push(SourceSeries::from_fit("joint with bias", &f)?);
        fits.push(f);
    }
    let result = consistency_pvalue(&totals[0], &totals[1], sampler.seed)?;
    Ok(ConsistencyAnalysis {
        events: [names[0].clone(), names[1].clone()],
        aggregation,
        series,
        result,
        fits,
    })
}
