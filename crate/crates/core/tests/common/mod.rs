#![allow(dead_code)]

use mpep_core::config::Family;
use mpep_core::{Model, ModelConfig, ParameterVector, SyntheticShape};

pub const EVENTS: [&str; 2] = ["deaths", "hosp"];

/// Main-effects two-event model (deaths and hospitalisations).
pub fn desk_config(family: Family) -> ModelConfig {
    let mut cfg = ModelConfig::main_effects(&EVENTS, family);
    cfg.events[0].deaths = true;
    cfg
}

/// 2 sexes x 3 age groups x 3 years x 2 regions.
pub fn desk_shape() -> SyntheticShape {
    SyntheticShape::new(2, 3, 3, 2, 200_000)
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Known truth: cohort of about 1600 per stratum, extra population of
/// about 1000, off-treatment death rate 0.02 (0.008 on treatment).
pub fn desk_truth(cfg: &ModelConfig, shape: &SyntheticShape) -> ParameterVector {
    let model = Model::new(cfg, &shape.skeleton(cfg).unwrap()).unwrap();
    let layout = &model.design().layout;
    let mut p = layout.zeros();
    let mut set = |name: &str, v: f64| {
        let i = layout
            .index(name)
            .unwrap_or_else(|| panic!("no parameter {name}"));
        p.values_mut()[i] = v;
    };
    let effects = |prefix: &str, vals: [f64; 6]| -> Vec<(String, f64)> {
        let names = [
            "sex=male",
            "age=A2",
            "age=A3",
            "year=Y1",
            "year=Y2",
            "region=R1",
        ];
        names
            .iter()
            .zip(vals)
            .map(|(n, v)| (format!("{prefix}.beta.{n}"), v))
            .collect()
    };
    set("deaths.beta.intercept", 0.02f64.ln());
    set("deaths.beta.treatment=on", 0.4f64.ln());
    for (n, v) in effects("deaths", [0.2, 0.3, 0.6, 0.05, 0.1, -0.1]) {
        set(&n, v);
    }
    set("hosp.beta.intercept", 0.06f64.ln());
    set("hosp.beta.treatment=on", -0.3);
    for (n, v) in effects("hosp", [-0.1, 0.2, 0.4, -0.05, -0.1, 0.15]) {
        set(&n, v);
    }
    set("exit.beta.intercept", 0.03f64.ln());
    for (n, v) in effects("exit", [0.1, 0.2, 0.4, 0.0, 0.05, 0.1]) {
        set(&n, v);
    }
    set("prevalence.beta.intercept", logit(0.005));
    for (n, v) in effects("prevalence", [0.3, -0.2, 0.1, 0.05, 0.1, -0.2]) {
        set(&n, v);
    }
    let start = model.design().logit_prev_c.start;
    let n = model.n_strata();
    for s in 0..n {
        let name = layout.names()[start + s].clone();
        set(&name, logit(0.008) + 0.1 * ((s % 5) as f64 - 2.0) / 2.0);
    }
    for name in ["deaths.log_theta", "hosp.log_theta", "exit.log_theta"] {
        if layout.index(name).is_some() {
            set(name, 20f64.ln());
        }
    }
    for name in ["deaths.logit_pi", "hosp.logit_pi", "exit.logit_pi"] {
        if layout.index(name).is_some() {
            set(name, logit(0.05));
        }
    }
    p
}
