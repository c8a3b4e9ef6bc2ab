use std::path::Path;

use mpep_core::config::RegressionId;
use mpep_core::data::{load_dataset, save_dataset, LoadOptions};
use mpep_core::diagnostics::{deviance_report, Aggregation};
use mpep_core::fit::Fit;
use mpep_core::select::{score_fit, select_terms, CandidateList};
use mpep_core::table::Table;
use mpep_core::{
    consistency_analysis, Model, ModelConfig, MpepError, StrataDataset, SyntheticShape, SyntheticTruth,
};
use serde::Serialize;

use crate::output::{hash_file, summary_csv, summary_text, Manifest, NamedChains, NamedGate, NamedWarnings, OutDir};
use crate::{DataArgs, Failure, GlobalArgs, EXIT_CONVERGENCE};

fn load_data(args: &DataArgs) -> Result<StrataDataset, Failure> {
    let opts = LoadOptions {
        deaths_event: args.deaths_event.clone(),
        levels: None,
    };
    Ok(load_dataset(&args.data, &opts)?)
}

/// Adds gate, warnings and chain statistics of one fit to the manifest.
fn record_fit(m: &mut Manifest, name: &str, f: &Fit) -> Result<(), Failure> {
    let warnings = f.warnings()?;
    for msg in &warnings.messages {
        eprintln!("warning ({name}): {msg}");
    }
    if !f.gate.passed {
        eprintln!(
            "warning ({name}): convergence gate failed: max R-hat {:.3} ({}), min ESS {:.0} ({})",
            f.gate.max_rhat, f.gate.worst_rhat_param, f.gate.min_ess, f.gate.worst_ess_param
        );
    }
    m.gate.push(NamedGate {
        fit: name.into(),
        gate: f.gate.clone(),
    });
    m.warnings.push(NamedWarnings {
        fit: name.into(),
        warnings,
    });
    m.chains.push(NamedChains {
        fit: name.into(),
        chains: f.draws.info().to_vec(),
    });
    Ok(())
}

fn gate_code(m: &Manifest) -> u8 {
    if m.gate.iter().all(|g| g.gate.passed) {
        0
    } else {
        EXIT_CONVERGENCE
    }
}

pub fn fit(g: &GlobalArgs, data: &DataArgs, config: &Path) -> Result<u8, Failure> {
    let mut m = Manifest::new("fit", g);
    let sampler = g.sampler();
    sampler.validate()?;
    m.inputs.push(hash_file("data", &data.data)?);
    m.inputs.push(hash_file("config", config)?);
    m.sampler = Some(sampler.clone());
    let cfg = ModelConfig::load(config)?;
    let ds = load_data(data)?;
    let f = mpep_core::fit(&cfg, &ds, &sampler)?;

    let mut out = OutDir::create(&g.out)?;
    f.draws.save_csv(out.path("draws.csv"))?;
    let summary = f.summary()?;
    let text = summary_text(&summary);
    out.write("summary.txt", &text)?;
    out.json("summary.json", &summary)?;
    out.write("parameters.csv", summary_csv(&summary.parameters, "parameter")?)?;
    out.write("strata.csv", summary_csv(&summary.stratum_prev, "stratum")?)?;
    out.write("years.csv", summary_csv(&summary.year_prev, "year")?)?;
    let dev = deviance_report(&f.model, &f.draws)?;
    out.write("deviance.txt", dev.to_string())?;
    out.json("deviance.json", &dev)?;

    record_fit(&mut m, "model", &f)?;
    m.exit_code = gate_code(&m);
    println!("Yearly prevalence (%)\n{}", summary.year_table());
    println!("{dev}");
    let code = m.exit_code;
    out.finish(m)?;
    Ok(code)
}

#[derive(Debug, Serialize)]
struct CompareRow {
    model: String,
    families: Vec<(String, String)>,
    resdev: f64,
    pd: f64,
    dic: f64,
    /// Posterior means of theta and pi per count sub-model.
    dispersion: Vec<(String, f64)>,
    converged: bool,
}

pub fn compare(g: &GlobalArgs, data: &DataArgs, configs: &[std::path::PathBuf]) -> Result<u8, Failure> {
    let mut m = Manifest::new("compare", g);
    let sampler = g.sampler();
    sampler.validate()?;
    m.inputs.push(hash_file("data", &data.data)?);
    m.sampler = Some(sampler.clone());
    let ds = load_data(data)?;
    let mut rows = Vec::new();
    for (i, path) in configs.iter().enumerate() {
        m.inputs.push(hash_file("config", path)?);
        let stem = path.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
        let seen = configs[..i].iter().filter(|p| p.file_stem() == path.file_stem()).count();
        let label = if seen > 0 { format!("{stem}#{}", seen + 1) } else { stem };
        let cfg = ModelConfig::load(path)?;
        let f = mpep_core::fit(&cfg, &ds, &sampler)?;
        record_fit(&mut m, &label, &f)?;
        let score = score_fit(&f)?;
        let summary = f.summary()?;
        let mut dispersion = Vec::new();
        let mut families = Vec::new();
        for id in cfg.regression_ids() {
            if id == RegressionId::Prevalence {
                continue;
            }
            let name = cfg.regression_name(id).to_string();
            families.push((name.clone(), cfg.family(id).name().to_string()));
            for par in ["theta", "pi"] {
                if let Some(r) = summary.parameter(&format!("{name}.{par}")) {
                    dispersion.push((format!("{name}.{par}"), r.mean));
                }
            }
        }
        rows.push(CompareRow {
            model: label,
            families,
            resdev: score.resdev,
            pd: score.pd,
            dic: score.dic,
            dispersion,
            converged: score.converged,
        });
    }

    let mut t = Table::new(&["model", "ResDev", "pD", "DIC", "dispersion", "gate"]);
    for r in &rows {
        let disp: Vec<String> = r.dispersion.iter().map(|(n, v)| format!("{n}={v:.3}")).collect();
        t.row(vec![
            r.model.clone(),
            format!("{:.1}", r.resdev),
            format!("{:.1}", r.pd),
            format!("{:.1}", r.dic),
            if disp.is_empty() { "-".into() } else { disp.join(" ") },
            if r.converged { "ok".into() } else { "FLAGGED".into() },
        ]);
    }
    let mut out = OutDir::create(&g.out)?;
    out.write("compare.txt", t.to_string())?;
    out.json("compare.json", &rows)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Failure::input(e.to_string());
    w.write_record(["model", "resdev", "pd", "dic", "converged"]).map_err(err)?;
    for r in &rows {
        w.write_record([
            r.model.clone(),
            r.resdev.to_string(),
            r.pd.to_string(),
            r.dic.to_string(),
            r.converged.to_string(),
        ])
        .map_err(err)?;
    }
    out.write("compare.csv", w.into_inner().map_err(|e| Failure::input(e.to_string()))?)?;
    print!("{t}");
    m.exit_code = gate_code(&m);
    let code = m.exit_code;
    out.finish(m)?;
    Ok(code)
}

pub fn consistency(g: &GlobalArgs, data: &DataArgs, config: &Path, bias: bool, by: Aggregation) -> Result<u8, Failure> {
    let mut m = Manifest::new("consistency", g);
    let sampler = g.sampler();
    sampler.validate()?;
    m.inputs.push(hash_file("data", &data.data)?);
    m.inputs.push(hash_file("config", config)?);
    m.sampler = Some(sampler.clone());
    let cfg = ModelConfig::load(config)?;
    let ds = load_data(data)?;
    let a = consistency_analysis(&cfg, &ds, &sampler, by, bias)?;
    for (s, f) in a.series.iter().zip(&a.fits) {
        record_fit(&mut m, &s.source, f)?;
    }
    let mut text = format!("Yearly prevalence (%) by source\n{}", a.table());
    if by != Aggregation::Year {
        text.push_str(&format!("\nConsistency of {} and {}\n{}", a.events[0], a.events[1], a.result.table()));
    }
    let mut out = OutDir::create(&g.out)?;
    out.write("consistency.txt", &text)?;
    out.json("consistency.json", &a)?;
    let mut series = Vec::new();
    a.write_series_csv(&mut series)?;
    out.write("series.csv", series)?;
    print!("{text}");
    m.exit_code = gate_code(&m);
    let code = m.exit_code;
    out.finish(m)?;
    Ok(code)
}

pub fn select(g: &GlobalArgs, data: &DataArgs, config: &Path, candidates: &Path) -> Result<u8, Failure> {
    let mut m = Manifest::new("select", g);
    let sampler = g.sampler();
    sampler.validate()?;
    m.inputs.push(hash_file("data", &data.data)?);
    m.inputs.push(hash_file("config", config)?);
    m.inputs.push(hash_file("candidates", candidates)?);
    m.sampler = Some(sampler.clone());
    let cfg = ModelConfig::load(config)?;
    let ds = load_data(data)?;
    let text = std::fs::read_to_string(candidates).map_err(|e| Failure::input(format!("{}: {e}", candidates.display())))?;
    let list = CandidateList::from_toml(&text)?;
    let (selected, trace) = select_terms(&cfg, &list.candidates, &ds, &sampler)?;
    let mut out = OutDir::create(&g.out)?;
    out.write("selected.toml", selected.to_toml_string()?)?;
    out.json("trace.json", &trace)?;
    let table = trace.table().to_string();
    out.write("trace.txt", &table)?;
    print!("{table}");
    out.finish(m)?;
    Ok(0)
}

/// Plausible default values for a truth template.
fn template_value(model: &Model, name: &str) -> f64 {
    let logit = |p: f64| (p / (1.0 - p)).ln();
    let is_event_intercept = model
        .design()
        .event_types
        .iter()
        .any(|e| name == format!("{e}.beta.intercept"));
    if is_event_intercept {
        0.02f64.ln()
    } else if name == "exit.beta.intercept" {
        0.03f64.ln()
    } else if name == "prevalence.beta.intercept" {
        logit(0.005)
    } else if name.starts_with("logit_prev_c.") {
        logit(0.008)
    } else if name.ends_with(".log_theta") {
        20f64.ln()
    } else if name.ends_with(".logit_pi") {
        logit(0.05)
    } else if name.ends_with(".log_sigma") {
        0.1f64.ln()
    } else if name == "logit_pmatch" {
        logit(0.9)
    } else {
        0.0
    }
}

pub fn simulate(
    g: &GlobalArgs,
    config: &Path,
    truth: Option<&Path>,
    template: bool,
    shape: SyntheticShape,
) -> Result<u8, Failure> {
    let mut m = Manifest::new("simulate", g);
    m.inputs.push(hash_file("config", config)?);
    let cfg = ModelConfig::load(config)?;
    let mut out = OutDir::create(&g.out)?;
    if template {
        shape.validate()?;
        let model = Model::new(&cfg, &shape.skeleton(&cfg)?)?;
        let params = model
            .design()
            .layout
            .names()
            .iter()
            .map(|n| (n.clone(), template_value(&model, n)))
            .collect();
        let t = SyntheticTruth { shape, params };
        t.save(out.path("truth.json"))?;
    } else {
        let path = truth.ok_or_else(|| Failure::input("--truth is required"))?;
        m.inputs.push(hash_file("truth", path)?);
        let t = SyntheticTruth::load(path)?;
        let ds = t.generate(&cfg, g.seed)?;
        save_dataset(&ds, out.path("data.csv"))?;
    }
    out.finish(m)?;
    Ok(0)
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        MpepError::Csv(e).into()
    }
}
