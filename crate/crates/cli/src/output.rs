//! Run manifest and artifact writers.

use std::fs;
use std::path::{Path, PathBuf};

use mpep_core::fit::{GateResult, RunWarnings, Summary, SummaryRow};
use mpep_core::sampler::{ChainInfo, SamplerConfig};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{Failure, GlobalArgs};

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: &'static str,
    pub inputs: Vec<InputHash>,
    pub seed: u64,
    pub sampler: Option<SamplerConfig>,
    pub started: String,
    pub finished: String,
    pub gate: Vec<NamedGate>,
    pub warnings: Vec<NamedWarnings>,
    pub chains: Vec<NamedChains>,
    pub outputs: Vec<String>,
    pub exit_code: u8,
}

#[derive(Debug, Serialize)]
pub struct InputHash {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct NamedGate {
    pub fit: String,
    #[serde(flatten)]
    pub gate: GateResult,
}

#[derive(Debug, Serialize)]
pub struct NamedWarnings {
    pub fit: String,
    #[serde(flatten)]
    pub warnings: RunWarnings,
}

#[derive(Debug, Serialize)]
pub struct NamedChains {
    pub fit: String,
    pub chains: Vec<ChainInfo>,
}

impl Manifest {
    pub fn new(command: &str, g: &GlobalArgs) -> Self {
        Manifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION"),
            inputs: Vec::new(),
            seed: g.seed,
            sampler: None,
            started: now(),
            finished: String::new(),
            gate: Vec::new(),
            warnings: Vec::new(),
            chains: Vec::new(),
            outputs: Vec::new(),
            exit_code: 0,
        }
    }
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn hash_file(role: &str, path: &Path) -> Result<InputHash, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    Ok(InputHash {
        role: role.into(),
        path: path.to_path_buf(),
        sha256: format!("{:x}", Sha256::digest(&bytes)),
    })
}

/// Collects artifacts written into the output directory.
pub struct OutDir {
    dir: PathBuf,
    pub written: Vec<String>,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dir).map_err(|e| Failure::input(format!("{}: {e}", dir.display())))?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
        let p = self.path(name);
        fs::write(&p, contents).map_err(|e| Failure {
            code: crate::EXIT_INPUT,
            message: format!("{}: {e}", p.display()),
        })
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Failure::input(e.to_string()))?;
        self.write(name, text + "\n")
    }

    pub fn finish(mut self, mut manifest: Manifest) -> Result<(), Failure> {
        self.written.push("manifest.json".into());
        manifest.outputs = std::mem::take(&mut self.written);
        manifest.finished = now();
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::input(e.to_string()))?;
        let p = self.dir.join("manifest.json");
        fs::write(&p, text + "\n").map_err(|e| Failure::input(format!("{}: {e}", p.display())))
    }
}

/// `name,mean,median,lower,upper,rhat,ess` rows.
pub fn summary_csv(rows: &[SummaryRow], label: &str) -> Result<Vec<u8>, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Failure::input(e.to_string());
    w.write_record([label, "mean", "median", "lower", "upper", "rhat", "ess"]).map_err(err)?;
    for r in rows {
        w.write_record([
            r.name.clone(),
            r.mean.to_string(),
            r.median.to_string(),
            r.lower.to_string(),
            r.upper.to_string(),
            r.rhat.to_string(),
            r.ess.to_string(),
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| Failure::input(e.to_string()))
}

pub fn summary_text(s: &Summary) -> String {
    format!(
        "Yearly prevalence (%)\n{}\nStratum prevalence (%)\n{}\nParameters\n{}",
        s.year_table(),
        s.stratum_table(),
        s.parameters_table()
    )
}
