//! `mpep episodes`: per-person treatment episodes from reimbursement dates.

use std::path::Path;

use chrono::NaiveDate;
use indexmap::IndexMap;
use mpep_core::episodes::code_treatment_episodes;
use serde::Serialize;

use crate::output::{hash_file, Manifest, OutDir};
use crate::{Failure, GlobalArgs};

#[derive(Debug, serde::Deserialize)]
struct InputRow {
    person_id: String,
    #[serde(default)]
    date: String,
}

#[derive(Debug, Serialize)]
struct EpisodeRow<'a> {
    person_id: &'a str,
    start: i64,
    end: i64,
}

#[derive(Debug, Serialize)]
struct TotalsRow<'a> {
    person_id: &'a str,
    t_on: i64,
    t_off: i64,
}

#[derive(Debug, Serialize)]
struct Rejected<'a> {
    person_id: &'a str,
    reason: String,
}

/// Day number of `text`: an integer, or a date counted from `start`.
fn parse_day(text: &str, start: Option<NaiveDate>) -> Result<i64, String> {
    let text = text.trim();
    if let Ok(d) = text.parse::<i64>() {
        return Ok(d);
    }
    let origin = start.ok_or_else(|| format!("'{text}' is not a day number (give --start to use dates)"))?;
    let date = NaiveDate::parse_from_str(text, "%Y-%m-%d").map_err(|e| format!("bad date '{text}': {e}"))?;
    Ok((date - origin).num_days())
}

pub fn run(g: &GlobalArgs, input: &Path, start: Option<&str>, end: &str) -> Result<u8, Failure> {
    let mut m = Manifest::new("episodes", g);
    m.inputs.push(hash_file("reimbursements", input)?);
    let start = start
        .map(|s| NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|e| Failure::input(format!("--start '{s}': {e}"))))
        .transpose()?;
    let end = parse_day(end, start).map_err(|e| Failure::input(format!("--end: {e}")))?;

    let mut reader = csv::Reader::from_path(input).map_err(|e| Failure::input(format!("{}: {e}", input.display())))?;
    let mut people: IndexMap<String, Vec<i64>> = IndexMap::new();
    for (line, row) in reader.deserialize::<InputRow>().enumerate() {
        let row = row.map_err(|e| Failure::input(format!("{}: {e}", input.display())))?;
        let days = people.entry(row.person_id.trim().to_string()).or_default();
        if row.date.trim().is_empty() {
            continue;
        }
        let day = parse_day(&row.date, start).map_err(|e| Failure::input(format!("row {}: {e}", line + 2)))?;
        days.push(day);
    }

    for days in people.values_mut() {
        days.sort_unstable();
        // several reimbursements on one day cover the same interval
        days.dedup();
    }

    let mut episodes = csv::Writer::from_writer(Vec::new());
    let mut totals = csv::Writer::from_writer(Vec::new());
    let mut rejected = Vec::new();
    for (person, days) in &people {
        match code_treatment_episodes(days, end) {
            Ok(coded) => {
                for e in &coded.episodes {
                    episodes.serialize(EpisodeRow {
                        person_id: person,
                        start: e.start,
                        end: e.end,
                    })?;
                }
                totals.serialize(TotalsRow {
                    person_id: person,
                    t_on: coded.t_on,
                    t_off: coded.t_off,
                })?;
            }
            Err(e) => rejected.push(Rejected {
                person_id: person,
                reason: e.to_string(),
            }),
        }
    }

    let mut out = OutDir::create(&g.out)?;
    let bytes = |w: csv::Writer<Vec<u8>>| w.into_inner().map_err(|e| Failure::input(e.to_string()));
    out.write("episodes.csv", bytes(episodes)?)?;
    out.write("totals.csv", bytes(totals)?)?;
    if !rejected.is_empty() {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &rejected {
            eprintln!("warning: person {} rejected: {}", r.person_id, r.reason);
            w.serialize(r)?;
        }
        out.write("rejected.csv", bytes(w)?)?;
    }
    println!(
        "{} people coded, {} rejected",
        people.len() - rejected.len(),
        rejected.len()
    );
    out.finish(m)?;
    Ok(0)
}
