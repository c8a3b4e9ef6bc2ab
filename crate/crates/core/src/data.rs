//! Stratified input data: the cross-classification of sex, age group, year
//! and region, with cohort counts, person-time and event counts per cell.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MpepError, Result};

/// The four stratifying factors, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Factor {
    Sex,
    Age,
    Year,
    Region,
}

impl Factor {
    pub const ALL: [Factor; 4] = [Factor::Sex, Factor::Age, Factor::Year, Factor::Region];

    pub fn name(self) -> &'static str {
        match self {
            Factor::Sex => "sex",
            Factor::Age => "age",
            Factor::Year => "year",
            Factor::Region => "region",
        }
    }
}

/// One cell of the cross-classification. Level 0 of each factor is the
/// baseline (female, youngest age band, first year, reference region).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StratumKey {
    pub sex: usize,
    pub age: usize,
    pub year: usize,
    pub region: usize,
}

impl StratumKey {
    pub fn level(&self, factor: Factor) -> usize {
        match factor {
            Factor::Sex => self.sex,
            Factor::Age => self.age,
            Factor::Year => self.year,
            Factor::Region => self.region,
        }
    }
}

/// Level labels for each factor. The first label of each list is the
/// baseline level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Levels {
    pub sex: Vec<String>,
    pub age: Vec<String>,
    pub year: Vec<String>,
    pub region: Vec<String>,
}

impl Levels {
    pub fn of(&self, factor: Factor) -> &[String] {
        match factor {
            Factor::Sex => &self.sex,
            Factor::Age => &self.age,
            Factor::Year => &self.year,
            Factor::Region => &self.region,
        }
    }

    pub fn count(&self, factor: Factor) -> usize {
        self.of(factor).len()
    }

    /// Number of strata in the complete cross-classification.
    pub fn n_strata(&self) -> usize {
        Factor::ALL.iter().map(|&f| self.count(f)).product()
    }

    /// Canonical position of a key: region varies fastest, sex slowest.
    pub fn index_of(&self, key: &StratumKey) -> usize {
        ((key.sex * self.age.len() + key.age) * self.year.len() + key.year) * self.region.len()
            + key.region
    }

    pub fn key_at(&self, mut index: usize) -> StratumKey {
        let region = index % self.region.len();
        index /= self.region.len();
        let year = index % self.year.len();
        index /= self.year.len();
        let age = index % self.age.len();
        let sex = index / self.age.len();
        StratumKey {
            sex,
            age,
            year,
            region,
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = StratumKey> + '_ {
        (0..self.n_strata()).map(|i| self.key_at(i))
    }

    pub fn label(&self, key: &StratumKey) -> String {
        format!(
            "{}/{}/{}/{}",
            self.sex[key.sex], self.age[key.age], self.year[key.year], self.region[key.region]
        )
    }

    /// Generic labels for a synthetic grid: `female/male`, `A1..`, `Y0..`, `R0..`.
    pub fn synthetic(n_sex: usize, n_age: usize, n_year: usize, n_region: usize) -> Self {
        let sex = ["female", "male"]
            .iter()
            .map(|s| s.to_string())
            .chain((2..n_sex).map(|i| format!("sex{i}")))
            .take(n_sex)
            .collect();
        Levels {
            sex,
            age: (1..=n_age).map(|i| format!("A{i}")).collect(),
            year: (0..n_year).map(|i| format!("Y{i}")).collect(),
            region: (0..n_region).map(|i| format!("R{i}")).collect(),
        }
    }
}

/// Observed inputs for one stratum. Event vectors are indexed by event type
/// in header order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumCounts {
    /// Baseline cohort size.
    pub n_c: u64,
    /// General population.
    pub population: u64,
    /// Cohort person-years on treatment.
    pub t_on: f64,
    /// Cohort person-years off treatment.
    pub t_off: f64,
    /// Denominator for the other-cause exit model.
    pub t_o: f64,
    /// Other-cause exits off treatment.
    pub x_o: u64,
    /// Pre-death person-time of extra deaths.
    pub t_d: f64,
    pub x_c_on: Vec<u64>,
    pub x_c_off: Vec<u64>,
    /// Events not linked to the cohort.
    pub x_e: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub levels: Levels,
    pub event_types: Vec<String>,
    /// Index into `event_types` of the event type whose extra occurrences
    /// are deaths (and so bound `t_d`).
    pub deaths: Option<usize>,
}

/// A complete, validated cross-classification. Rows are stored in the
/// canonical order of [`Levels::index_of`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrataDataset {
    header: DatasetHeader,
    rows: Vec<StratumCounts>,
}

impl fmt::Display for StratumKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(sex={}, age={}, year={}, region={})",
            self.sex, self.age, self.year, self.region
        )
    }
}

impl StrataDataset {
    /// Builds a dataset from rows already in canonical order.
    pub fn new(header: DatasetHeader, rows: Vec<StratumCounts>) -> Result<Self> {
        if rows.len() != header.levels.n_strata() {
            return Err(MpepError::InvalidDataset(format!(
                "expected {} strata, got {}",
                header.levels.n_strata(),
                rows.len()
            )));
        }
        if let Some(d) = header.deaths {
            if d >= header.event_types.len() {
                return Err(MpepError::InvalidDataset(
                    "deaths index out of range".into(),
                ));
            }
        }
        check_labels(&header)?;
        let ds = StrataDataset { header, rows };
        for (i, row) in ds.rows.iter().enumerate() {
            let key = ds.header.levels.key_at(i);
            ds.validate_row(row).map_err(|m| MpepError::InvalidRow {
                row: i + 1,
                message: format!("{} {key}: {m}", ds.header.levels.label(&key)),
            })?;
        }
        Ok(ds)
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    pub fn levels(&self) -> &Levels {
        &self.header.levels
    }

    pub fn event_types(&self) -> &[String] {
        &self.header.event_types
    }

    pub fn event_index(&self, name: &str) -> Option<usize> {
        self.header.event_types.iter().position(|e| e == name)
    }

    pub fn rows(&self) -> &[StratumCounts] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, key: &StratumKey) -> &StratumCounts {
        &self.rows[self.header.levels.index_of(key)]
    }

    pub fn iter(&self) -> impl Iterator<Item = (StratumKey, &StratumCounts)> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| (self.header.levels.key_at(i), r))
    }

    /// Mutable access for building derived datasets (e.g. inflating a source).
    /// The result is revalidated.
    pub fn map_rows(&self, mut f: impl FnMut(StratumKey, &mut StratumCounts)) -> Result<Self> {
        let mut rows = self.rows.clone();
        for (i, row) in rows.iter_mut().enumerate() {
            f(self.header.levels.key_at(i), row);
        }
        StrataDataset::new(self.header.clone(), rows)
    }

    fn validate_row(&self, row: &StratumCounts) -> std::result::Result<(), String> {
        let n_events = self.header.event_types.len();
        if row.x_c_on.len() != n_events
            || row.x_c_off.len() != n_events
            || row.x_e.len() != n_events
        {
            return Err("event-type set differs from header".into());
        }
        if row.n_c > row.population {
            return Err(format!("n_c = {} exceeds P = {}", row.n_c, row.population));
        }
        for (name, v) in [
            ("t_on", row.t_on),
            ("t_off", row.t_off),
            ("t_o", row.t_o),
            ("t_d", row.t_d),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(format!(
                    "{name} = {v} must be a finite non-negative person-time"
                ));
            }
        }
        if row.t_on + row.t_off > row.n_c as f64 * (1.0 + 1e-12) {
            return Err(format!(
                "t_on + t_off = {} exceeds cohort size {}",
                row.t_on + row.t_off,
                row.n_c
            ));
        }
        if let Some(d) = self.header.deaths {
            if row.t_d > row.x_e[d] as f64 {
                return Err(format!(
                    "t_d = {} exceeds extra deaths x_e = {} (pre-death person-time cannot exceed the number of deaths)",
                    row.t_d, row.x_e[d]
                ));
            }
        }
        for (e, name) in self.header.event_types.iter().enumerate() {
            if row.t_on == 0.0 && row.x_c_on[e] > 0 {
                return Err(format!(
                    "x_c_on_{name} > 0 with zero on-treatment person-time"
                ));
            }
            if row.t_off == 0.0 && row.x_c_off[e] > 0 {
                return Err(format!(
                    "x_c_off_{name} > 0 with zero off-treatment person-time"
                ));
            }
        }
        if row.t_o == 0.0 && row.x_o > 0 {
            return Err("x_o > 0 with zero exit person-time".into());
        }
        Ok(())
    }

    /// Restricts the dataset to a subset of event types (used for
    /// single-source fits).
    pub fn select_events(&self, names: &[String]) -> Result<Self> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.event_index(n)
                    .ok_or_else(|| MpepError::InvalidDataset(format!("unknown event type {n}")))
            })
            .collect::<Result<_>>()?;
        let deaths = self
            .header
            .deaths
            .and_then(|d| idx.iter().position(|&i| i == d));
        let header = DatasetHeader {
            levels: self.header.levels.clone(),
            event_types: names.to_vec(),
            deaths,
        };
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let pick = |v: &Vec<u64>| idx.iter().map(|&i| v[i]).collect();
                StratumCounts {
                    x_c_on: pick(&r.x_c_on),
                    x_c_off: pick(&r.x_c_off),
                    x_e: pick(&r.x_e),
                    ..r.clone()
                }
            })
            .collect();
        // t_d stays with the dataset even when the deaths type is dropped:
        // it is observed data entering the extra person-time.
        let ds = StrataDataset { header, rows };
        Ok(ds)
    }
}

fn check_labels(header: &DatasetHeader) -> Result<()> {
    for f in Factor::ALL {
        let levels = header.levels.of(f);
        if levels.is_empty() {
            return Err(MpepError::InvalidDataset(format!(
                "factor {} has no levels",
                f.name()
            )));
        }
        let distinct: BTreeSet<_> = levels.iter().collect();
        if distinct.len() != levels.len() {
            return Err(MpepError::InvalidDataset(format!(
                "factor {} has repeated level labels",
                f.name()
            )));
        }
        if levels.iter().any(|l| l.contains(',') || l.contains('"')) {
            return Err(MpepError::InvalidDataset(format!(
                "factor {} labels must not contain commas or quotes",
                f.name()
            )));
        }
    }
    if header.levels.sex.len() > 2 || header.levels.age.len() > 3 {
        return Err(MpepError::InvalidDataset(
            "at most two sex levels and three age groups are supported".into(),
        ));
    }
    for e in &header.event_types {
        if e.is_empty() || e.contains(',') || e == "exit" || e == "prevalence" {
            return Err(MpepError::InvalidDataset(format!(
                "invalid event type name {e:?}"
            )));
        }
    }
    Ok(())
}

/// Options for [`load_dataset`].
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Event type whose extra counts are deaths. Defaults to an event type
    /// literally named `deaths`, if present.
    pub deaths_event: Option<String>,
    /// Explicit level order; otherwise levels are sorted (numerically when
    /// every label parses as an integer) and the first is the baseline.
    pub levels: Option<Levels>,
}

const KEY_COLUMNS: [&str; 4] = ["sex", "age_group", "year", "region"];
const FIXED_COLUMNS: [&str; 7] = ["n_c", "P", "t_on", "t_off", "t_o", "x_o", "t_d"];

/// Reads and validates a stratified dataset from CSV.
pub fn load_dataset(path: impl AsRef<Path>, options: &LoadOptions) -> Result<StrataDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| MpepError::io(path, e))?;
    read_dataset(file, options)
}

pub fn read_dataset<R: Read>(reader: R, options: &LoadOptions) -> Result<StrataDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| MpepError::InvalidDataset(format!("missing column {name}")))
    };
    let key_cols: Vec<usize> = KEY_COLUMNS.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let fixed_cols: Vec<usize> = FIXED_COLUMNS
        .iter()
        .map(|c| col(c))
        .collect::<Result<_>>()?;
    let event_types: Vec<String> = headers
        .iter()
        .filter_map(|h| h.strip_prefix("x_c_on_").map(str::to_string))
        .collect();
    if event_types.is_empty() {
        return Err(MpepError::InvalidDataset(
            "no event-type columns (x_c_on_<E>)".into(),
        ));
    }
    let mut event_cols = Vec::with_capacity(event_types.len());
    for e in &event_types {
        event_cols.push([
            col(&format!("x_c_on_{e}"))?,
            col(&format!("x_c_off_{e}"))?,
            col(&format!("x_e_{e}"))?,
        ]);
    }
    let deaths = match &options.deaths_event {
        Some(name) => Some(event_types.iter().position(|e| e == name).ok_or_else(|| {
            MpepError::InvalidDataset(format!("designated deaths event {name} not in file"))
        })?),
        None => event_types.iter().position(|e| e == "deaths"),
    };

    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        records.push((i + 2, rec?));
    }

    let levels = match &options.levels {
        Some(l) => l.clone(),
        None => {
            let mut per_factor: [Vec<String>; 4] = Default::default();
            for (slot, &c) in per_factor.iter_mut().zip(&key_cols) {
                let set: BTreeSet<&str> = records.iter().map(|(_, r)| &r[c]).collect();
                *slot = sort_levels(set.into_iter().map(str::to_string).collect());
            }
            let [sex, age, year, region] = per_factor;
            Levels {
                sex,
                age,
                year,
                region,
            }
        }
    };
    let header = DatasetHeader {
        levels,
        event_types,
        deaths,
    };
    check_labels(&header)?;

    let lookup: Vec<HashMap<&str, usize>> = Factor::ALL
        .iter()
        .map(|&f| {
            header
                .levels
                .of(f)
                .iter()
                .enumerate()
                .map(|(i, l)| (l.as_str(), i))
                .collect()
        })
        .collect();

    let n = header.levels.n_strata();
    let mut rows: Vec<Option<(usize, StratumCounts)>> = vec![None; n];
    for (line, rec) in &records {
        let line = *line;
        let bad = |message: String| MpepError::InvalidRow { row: line, message };
        let mut idx = [0usize; 4];
        for (k, &c) in key_cols.iter().enumerate() {
            idx[k] = *lookup[k]
                .get(&rec[c])
                .ok_or_else(|| bad(format!("unknown {} level {:?}", KEY_COLUMNS[k], &rec[c])))?;
        }
        let key = StratumKey {
            sex: idx[0],
            age: idx[1],
            year: idx[2],
            region: idx[3],
        };
        let label = header.levels.label(&key);
        let count = |c: usize, name: &str| -> Result<u64> {
            rec[c].parse::<u64>().map_err(|_| {
                bad(format!(
                    "{label}: {name} = {:?} is not a non-negative integer count",
                    &rec[c]
                ))
            })
        };
        let time = |c: usize, name: &str| -> Result<f64> {
            let v: f64 = rec[c]
                .parse()
                .map_err(|_| bad(format!("{label}: {name} = {:?} is not a number", &rec[c])))?;
            if !v.is_finite() || v < 0.0 {
                return Err(bad(format!(
                    "{label}: {name} = {v} is negative or not finite"
                )));
            }
            Ok(v)
        };
        let t_off = time(fixed_cols[3], "t_off")?;
        let t_o = if rec[fixed_cols[4]].is_empty() {
            t_off
        } else {
            time(fixed_cols[4], "t_o")?
        };
        let mut counts = StratumCounts {
            n_c: count(fixed_cols[0], "n_c")?,
            population: count(fixed_cols[1], "P")?,
            t_on: time(fixed_cols[2], "t_on")?,
            t_off,
            t_o,
            x_o: count(fixed_cols[5], "x_o")?,
            t_d: time(fixed_cols[6], "t_d")?,
            x_c_on: Vec::new(),
            x_c_off: Vec::new(),
            x_e: Vec::new(),
        };
        for (e, cols) in event_cols.iter().enumerate() {
            let name = &header.event_types[e];
            counts
                .x_c_on
                .push(count(cols[0], &format!("x_c_on_{name}"))?);
            counts
                .x_c_off
                .push(count(cols[1], &format!("x_c_off_{name}"))?);
            counts.x_e.push(count(cols[2], &format!("x_e_{name}"))?);
        }
        let pos = header.levels.index_of(&key);
        if let Some((prev, _)) = &rows[pos] {
            return Err(bad(format!(
                "duplicate stratum {label} (first seen on row {prev})"
            )));
        }
        rows[pos] = Some((line, counts));
    }

    let mut out = Vec::with_capacity(n);
    for (i, slot) in rows.into_iter().enumerate() {
        match slot {
            Some((_, c)) => out.push(c),
            None => {
                let key = header.levels.key_at(i);
                return Err(MpepError::InvalidDataset(format!(
                    "missing stratum {} {key}",
                    header.levels.label(&key)
                )));
            }
        }
    }
    // Re-run validation so that row numbers refer to file lines.
    let ds = StrataDataset { header, rows: out };
    for (i, row) in ds.rows.iter().enumerate() {
        if let Err(message) = ds.validate_row(row) {
            let key = ds.header.levels.key_at(i);
            let line = records
                .iter()
                .find(|(_, r)| {
                    KEY_COLUMNS.iter().enumerate().all(|(k, _)| {
                        r[key_cols[k]]
                            == ds.header.levels.of(Factor::ALL[k])[key.level(Factor::ALL[k])]
                    })
                })
                .map(|(l, _)| *l)
                .unwrap_or(0);
            return Err(MpepError::InvalidRow {
                row: line,
                message: format!("{}: {message}", ds.header.levels.label(&key)),
            });
        }
    }
    Ok(ds)
}

fn sort_levels(mut levels: Vec<String>) -> Vec<String> {
    if levels.iter().all(|l| l.parse::<i64>().is_ok()) {
        levels.sort_by_key(|l| l.parse::<i64>().unwrap());
    } else {
        levels.sort();
    }
    levels
}

/// Writes the dataset in the CSV schema read by [`load_dataset`].
pub fn save_dataset(ds: &StrataDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| MpepError::io(path, e))?;
    write_dataset(ds, file)
}

pub fn write_dataset<W: Write>(ds: &StrataDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = KEY_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(FIXED_COLUMNS.iter().map(|s| s.to_string()));
    for e in ds.event_types() {
        header.push(format!("x_c_on_{e}"));
        header.push(format!("x_c_off_{e}"));
        header.push(format!("x_e_{e}"));
    }
    w.write_record(&header)?;
    let levels = ds.levels();
    for (key, r) in ds.iter() {
        let mut rec = vec![
            levels.sex[key.sex].clone(),
            levels.age[key.age].clone(),
            levels.year[key.year].clone(),
            levels.region[key.region].clone(),
            r.n_c.to_string(),
            r.population.to_string(),
            r.t_on.to_string(),
            r.t_off.to_string(),
            r.t_o.to_string(),
            r.x_o.to_string(),
            r.t_d.to_string(),
        ];
        for e in 0..ds.event_types().len() {
            rec.push(r.x_c_on[e].to_string());
            rec.push(r.x_c_off[e].to_string());
            rec.push(r.x_e[e].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| MpepError::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_csv(rows: &[(&str, &str, &str, &str, &str)]) -> String {
        // (sex, age, year, region, t_d) with fixed counts
        let mut s = String::from(
            "sex,age_group,year,region,n_c,P,t_on,t_off,t_o,x_o,t_d,x_c_on_deaths,x_c_off_deaths,x_e_deaths\n",
        );
        for (sex, age, year, region, t_d) in rows {
            s.push_str(&format!(
                "{sex},{age},{year},{region},100,10000,40,50,,2,{t_d},1,2,5\n"
            ));
        }
        s
    }

    fn full_grid() -> Vec<(
        &'static str,
        &'static str,
        &'static str,
        &'static str,
        &'static str,
    )> {
        let mut v = Vec::new();
        for sex in ["female", "male"] {
            for age in ["15-34", "35-49"] {
                v.push((sex, age, "2014", "0", "1.5"));
            }
        }
        v
    }

    #[test]
    fn loads_complete_grid_and_defaults_t_o() {
        let ds = read_dataset(small_csv(&full_grid()).as_bytes(), &LoadOptions::default()).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.header().deaths, Some(0));
        assert_eq!(ds.levels().sex, vec!["female", "male"]);
        assert!(ds.rows().iter().all(|r| r.t_o == r.t_off));
    }

    #[test]
    fn row_order_does_not_matter() {
        let mut grid = full_grid();
        let a = read_dataset(small_csv(&grid).as_bytes(), &LoadOptions::default()).unwrap();
        grid.reverse();
        let b = read_dataset(small_csv(&grid).as_bytes(), &LoadOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_stratum_names_the_key() {
        let mut grid = full_grid();
        grid.push(("female", "50-64", "2014", "0", "0"));
        // 2 x 3 x 1 x 1 grid now declared, but male/50-64 is absent
        let err = read_dataset(small_csv(&grid).as_bytes(), &LoadOptions::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("missing stratum"), "{msg}");
        assert!(msg.contains("male/50-64/2014/0"), "{msg}");
    }

    #[test]
    fn t_d_above_extra_deaths_is_rejected() {
        let mut grid = full_grid();
        grid[2].4 = "6";
        let err = read_dataset(small_csv(&grid).as_bytes(), &LoadOptions::default()).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("t_d = 6 exceeds extra deaths x_e = 5"),
            "{msg}"
        );
        assert!(msg.starts_with("row 4"), "{msg}");
    }

    #[test]
    fn duplicate_and_negative_rows_are_rejected() {
        let mut grid = full_grid();
        grid.push(grid[0]);
        let err = read_dataset(small_csv(&grid).as_bytes(), &LoadOptions::default()).unwrap_err();
        assert!(err
            .to_string()
            .contains("duplicate stratum female/15-34/2014/0"));

        let csv = small_csv(&full_grid()).replace("male,35-49,2014,0,100", "male,35-49,2014,0,-3");
        let err = read_dataset(csv.as_bytes(), &LoadOptions::default()).unwrap_err();
        assert!(err.to_string().contains("n_c"), "{err}");
    }

    #[test]
    fn numeric_levels_sort_numerically() {
        assert_eq!(
            sort_levels(vec!["10".into(), "2".into(), "0".into()]),
            vec!["0", "2", "10"]
        );
    }

    #[test]
    fn paper_scale_grid_has_432_rows() {
        let levels = Levels::synthetic(2, 3, 9, 8);
        let mut s = String::from(
            "sex,age_group,year,region,n_c,P,t_on,t_off,t_o,x_o,t_d,x_c_on_deaths,x_c_off_deaths,x_e_deaths\n",
        );
        for k in levels.keys() {
            s.push_str(&format!(
                "{},{},{},{},10,1000,4,5,5,0,0,0,0,0\n",
                levels.sex[k.sex], levels.age[k.age], levels.year[k.year], levels.region[k.region]
            ));
        }
        let ds = read_dataset(s.as_bytes(), &LoadOptions::default()).unwrap();
        assert_eq!(ds.len(), 432);
    }

    #[test]
    fn save_then_load_is_identity() {
        let ds = read_dataset(small_csv(&full_grid()).as_bytes(), &LoadOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let back = read_dataset(buf.as_slice(), &LoadOptions::default()).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn key_index_roundtrip() {
        let levels = Levels::synthetic(2, 3, 4, 5);
        for i in 0..levels.n_strata() {
            assert_eq!(levels.index_of(&levels.key_at(i)), i);
        }
    }
}
