//! Ensemble forecasts and realizations in long-format CSV.
//!
//! Ensembles: `issue_time,horizon_h,location,member,variable,value`.
//! Realizations: `valid_time,location,variable,value`.
//! Timestamps are ISO-8601 UTC, horizons whole hours. Wind is given as
//! `wind_u`/`wind_v` components (a precomputed `wind_speed` is accepted
//! too); temperature as `t2m`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ENSEMBLE_HEADER: [&str; 6] = ["issue_time", "horizon_h", "location", "member", "variable", "value"];
pub const REALIZATION_HEADER: [&str; 4] = ["valid_time", "location", "variable", "value"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    Temperature,
    WindSpeed,
    LogWindSpeed,
}

impl Variable {
    pub fn name(self) -> &'static str {
        match self {
            Variable::Temperature => "temperature",
            Variable::WindSpeed => "wind_speed",
            Variable::LogWindSpeed => "log_wind_speed",
        }
    }
}

impl std::str::FromStr for Variable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "temperature" | "t2m" => Ok(Variable::Temperature),
            "wind_speed" | "wind" => Ok(Variable::WindSpeed),
            "log_wind_speed" => Ok(Variable::LogWindSpeed),
            other => Err(Error::invalid(format!("unknown variable '{other}'"))),
        }
    }
}

impl std::fmt::Display for Variable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One ensemble forecast, optionally joined with its realization.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRecord {
    pub issue_time: DateTime<Utc>,
    pub horizon_h: u32,
    pub location: String,
    pub members: Vec<f64>,
    pub realization: Option<f64>,
}

impl EnsembleRecord {
    pub fn valid_time(&self) -> DateTime<Utc> {
        self.issue_time + Duration::hours(self.horizon_h as i64)
    }
}

pub fn derive_wind_speed(u: f64, v: f64) -> f64 {
    u.hypot(v)
}

pub fn parse_time(s: &str) -> std::result::Result<DateTime<Utc>, String> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .map(|n| n.and_utc())
        .map_err(|e| format!("bad timestamp '{s}': {e}"))
}

pub fn format_time(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::invalid(format!("cannot open {}: {e}", path.display())))
}

fn check_header(r: &mut csv::Reader<impl Read>, expected: &[&str], label: &str) -> Result<()> {
    let header = r.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Parse {
            path: label.into(),
            line: 1,
            msg: format!("header must be '{}', got '{}'", expected.join(","), header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    Ok(())
}

/// Which raw CSV variables feed a dataset variable.
fn raw_components(variable: Variable) -> &'static [&'static str] {
    match variable {
        Variable::Temperature => &["t2m"],
        Variable::WindSpeed | Variable::LogWindSpeed => &["wind_u", "wind_v", "wind_speed"],
    }
}

type Key = (DateTime<Utc>, u32, String);

enum Cell {
    Scalar(f64),
    Components(Option<f64>, Option<f64>),
}

fn merge_component(cell: &mut Cell, var: &str, value: f64) -> std::result::Result<(), &'static str> {
    match (cell, var) {
        (Cell::Components(u @ None, _), "wind_u") => *u = Some(value),
        (Cell::Components(_, v @ None), "wind_v") => *v = Some(value),
        _ => return Err("duplicate (key, member, variable) row"),
    }
    Ok(())
}

fn finish(variable: Variable, cell: &Cell) -> Option<f64> {
    let v = match *cell {
        Cell::Scalar(x) => x,
        Cell::Components(Some(u), Some(v)) => derive_wind_speed(u, v),
        Cell::Components(..) => return None,
    };
    Some(if variable == Variable::LogWindSpeed { v.ln() } else { v })
}

/// Parses ensemble forecasts for one dataset variable. Rows of other
/// variables are ignored. Every key must carry the same member set.
pub fn read_ensembles<R: Read>(input: R, label: &str, variable: Variable) -> Result<Vec<EnsembleRecord>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    check_header(&mut r, &ENSEMBLE_HEADER, label)?;
    let wanted = raw_components(variable);
    let mut cells: BTreeMap<Key, BTreeMap<u32, Cell>> = BTreeMap::new();
    let mut members: BTreeSet<u32> = BTreeSet::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let err = |msg: String| Error::Parse { path: label.into(), line, msg };
        if rec.len() != 6 {
            return Err(err(format!("expected 6 fields, got {}", rec.len())));
        }
        let var = &rec[4];
        if !wanted.contains(&var) {
            continue;
        }
        let issue = parse_time(&rec[0]).map_err(err)?;
        let horizon: u32 = rec[1].parse().map_err(|e| err(format!("horizon_h: {e}")))?;
        if horizon == 0 {
            return Err(err("horizon_h must be > 0".into()));
        }
        let member: u32 = rec[3].parse().map_err(|e| err(format!("member: {e}")))?;
        let value: f64 = rec[5].parse().map_err(|e| err(format!("value: {e}")))?;
        if !value.is_finite() {
            return Err(err("value must be finite".into()));
        }
        members.insert(member);
        let slot = cells.entry((issue, horizon, rec[2].to_string())).or_default();
        match (slot.get_mut(&member), var) {
            (None, "t2m" | "wind_speed") => {
                slot.insert(member, Cell::Scalar(value));
            }
            (None, comp) => {
                let mut c = Cell::Components(None, None);
                merge_component(&mut c, comp, value).map_err(|m| err(m.into()))?;
                slot.insert(member, c);
            }
            (Some(c), comp) => merge_component(c, comp, value).map_err(|m| err(m.into()))?,
        }
    }
    let mut out = Vec::with_capacity(cells.len());
    for ((issue, horizon, location), row) in cells {
        let describe = || format!("({}, {horizon}h, {location})", format_time(&issue));
        if row.len() != members.len() {
            let missing: Vec<String> = members.iter().filter(|m| !row.contains_key(m)).map(|m| m.to_string()).collect();
            return Err(Error::invalid(format!(
                "{label}: key {} is missing members [{}]",
                describe(),
                missing.join(",")
            )));
        }
        let mut vals = Vec::with_capacity(row.len());
        for (m, cell) in &row {
            match finish(variable, cell) {
                Some(v) if v.is_finite() => vals.push(v),
                Some(_) => {
                    return Err(Error::invalid(format!("{label}: key {} member {m} is not positive", describe())))
                }
                None => {
                    return Err(Error::invalid(format!(
                        "{label}: key {} member {m} lacks a wind component",
                        describe()
                    )))
                }
            }
        }
        if vals.len() < 2 {
            return Err(Error::invalid(format!("{label}: key {} has fewer than 2 members", describe())));
        }
        out.push(EnsembleRecord { issue_time: issue, horizon_h: horizon, location, members: vals, realization: None });
    }
    Ok(out)
}

pub fn load_ensemble_csv(path: &Path, variable: Variable) -> Result<Vec<EnsembleRecord>> {
    read_ensembles(open(path)?, &path.display().to_string(), variable)
}

pub type Realizations = HashMap<(DateTime<Utc>, String), f64>;

pub fn read_realizations<R: Read>(input: R, label: &str, variable: Variable) -> Result<Realizations> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    check_header(&mut r, &REALIZATION_HEADER, label)?;
    let wanted = raw_components(variable);
    let mut cells: BTreeMap<(DateTime<Utc>, String), Cell> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let err = |msg: String| Error::Parse { path: label.into(), line, msg };
        if rec.len() != 4 {
            return Err(err(format!("expected 4 fields, got {}", rec.len())));
        }
        let var = &rec[2];
        if !wanted.contains(&var) {
            continue;
        }
        let t = parse_time(&rec[0]).map_err(err)?;
        let value: f64 = rec[3].parse().map_err(|e| err(format!("value: {e}")))?;
        if !value.is_finite() {
            return Err(err("value must be finite".into()));
        }
        let key = (t, rec[1].to_string());
        match (cells.get_mut(&key), var) {
            (None, "t2m" | "wind_speed") => {
                cells.insert(key, Cell::Scalar(value));
            }
            (None, comp) => {
                let mut c = Cell::Components(None, None);
                merge_component(&mut c, comp, value).map_err(|m| err(m.into()))?;
                cells.insert(key, c);
            }
            (Some(c), comp) => merge_component(c, comp, value).map_err(|m| err(m.into()))?,
        }
    }
    let mut out = HashMap::with_capacity(cells.len());
    for (key, cell) in cells {
        match finish(variable, &cell) {
            Some(v) if v.is_finite() => {
                out.insert(key, v);
            }
            _ => {
                return Err(Error::invalid(format!(
                    "{label}: realization ({}, {}) is incomplete or not positive",
                    format_time(&key.0),
                    key.1
                )))
            }
        }
    }
    Ok(out)
}

pub fn load_realizations_csv(path: &Path, variable: Variable) -> Result<Realizations> {
    read_realizations(open(path)?, &path.display().to_string(), variable)
}

/// Joined forecasts grouped by horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub variable: Variable,
    pub by_horizon: BTreeMap<u32, Vec<EnsembleRecord>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JoinReport {
    pub joined: usize,
    pub dropped: usize,
    /// Dropped record count per horizon.
    pub dropped_by_horizon: BTreeMap<u32, usize>,
}

/// Attaches to every forecast the realization at `issue_time + horizon`
/// for its location. Forecasts without a realization are dropped and
/// counted.
pub fn join_forecast_realization(
    variable: Variable,
    forecasts: Vec<EnsembleRecord>,
    realizations: &Realizations,
) -> Result<(Dataset, JoinReport)> {
    let mut report = JoinReport::default();
    let mut by_horizon: BTreeMap<u32, Vec<EnsembleRecord>> = BTreeMap::new();
    for mut rec in forecasts {
        match realizations.get(&(rec.valid_time(), rec.location.clone())) {
            Some(&y) => {
                rec.realization = Some(y);
                report.joined += 1;
                by_horizon.entry(rec.horizon_h).or_default().push(rec);
            }
            None => {
                report.dropped += 1;
                *report.dropped_by_horizon.entry(rec.horizon_h).or_default() += 1;
            }
        }
    }
    if report.joined == 0 {
        return Err(Error::invalid("no forecast could be joined with a realization"));
    }
    let ds = Dataset { variable, by_horizon };
    ds.validate()?;
    Ok((ds, report))
}

impl Dataset {
    pub fn new(variable: Variable, records: Vec<EnsembleRecord>) -> Result<Self> {
        let mut by_horizon: BTreeMap<u32, Vec<EnsembleRecord>> = BTreeMap::new();
        for r in records {
            by_horizon.entry(r.horizon_h).or_default().push(r);
        }
        let ds = Dataset { variable, by_horizon };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        for (h, recs) in &self.by_horizon {
            let mut seen = BTreeSet::new();
            for r in recs {
                if r.horizon_h != *h {
                    return Err(Error::invalid("record filed under the wrong horizon"));
                }
                if r.members.len() < 2 || r.members.iter().any(|x| !x.is_finite()) {
                    return Err(Error::invalid("ensembles need at least 2 finite members"));
                }
                if !seen.insert((r.issue_time, r.location.as_str())) {
                    return Err(Error::invalid(format!(
                        "duplicate record ({}, {h}h, {})",
                        format_time(&r.issue_time),
                        r.location
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn horizons(&self) -> Vec<u32> {
        self.by_horizon.keys().copied().collect()
    }

    pub fn records(&self, horizon: u32) -> &[EnsembleRecord] {
        self.by_horizon.get(&horizon).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.by_horizon.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_issue_times(&self) -> usize {
        self.by_horizon.values().flatten().map(|r| r.issue_time).collect::<BTreeSet<_>>().len()
    }

    pub fn n_locations(&self) -> usize {
        self.by_horizon.values().flatten().map(|r| r.location.as_str()).collect::<BTreeSet<_>>().len()
    }

    /// Records of one horizon keyed by (valid time, location).
    pub fn index_by_valid_time(&self, horizon: u32) -> HashMap<(DateTime<Utc>, &str), &EnsembleRecord> {
        self.records(horizon).iter().map(|r| ((r.valid_time(), r.location.as_str()), r)).collect()
    }

    /// Keeps only records with `issue_time` in `[from, to)`.
    pub fn filter_issue_times(&self, from: DateTime<Utc>, to: DateTime<Utc>) -> Dataset {
        let by_horizon = self
            .by_horizon
            .iter()
            .map(|(h, recs)| {
                (*h, recs.iter().filter(|r| r.issue_time >= from && r.issue_time < to).cloned().collect())
            })
            .collect();
        Dataset { variable: self.variable, by_horizon }
    }

    /// The same records with log-transformed members and realizations.
    pub fn to_log(&self) -> Result<Dataset> {
        if self.variable != Variable::WindSpeed {
            return Err(Error::invalid("only wind speed has a log transform"));
        }
        let mut out = self.clone();
        out.variable = Variable::LogWindSpeed;
        for r in out.by_horizon.values_mut().flatten() {
            if r.members.iter().chain(r.realization.iter()).any(|&x| !(x > 0.0)) {
                return Err(Error::invalid("log transform of a non-positive wind speed"));
            }
            r.members.iter_mut().for_each(|x| *x = x.ln());
            r.realization = r.realization.map(f64::ln);
        }
        Ok(out)
    }

    fn raw_variable(&self) -> Result<&'static str> {
        match self.variable {
            Variable::Temperature => Ok("t2m"),
            Variable::WindSpeed => Ok("wind_speed"),
            Variable::LogWindSpeed => {
                Err(Error::invalid("write the wind speed dataset, not its log transform"))
            }
        }
    }

    /// Writes the ensembles in the long format, members numbered from 1.
    pub fn write_ensembles<W: Write>(&self, out: W) -> Result<()> {
        let var = self.raw_variable()?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(ENSEMBLE_HEADER)?;
        for r in self.by_horizon.values().flatten() {
            let t = format_time(&r.issue_time);
            let h = r.horizon_h.to_string();
            for (i, x) in r.members.iter().enumerate() {
                w.write_record([t.as_str(), &h, &r.location, &(i + 1).to_string(), var, &x.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Writes every distinct realization once.
    pub fn write_realizations<W: Write>(&self, out: W) -> Result<()> {
        let var = self.raw_variable()?;
        let mut rows: BTreeMap<(DateTime<Utc>, &str), f64> = BTreeMap::new();
        for r in self.by_horizon.values().flatten() {
            if let Some(y) = r.realization {
                rows.insert((r.valid_time(), r.location.as_str()), y);
            }
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(REALIZATION_HEADER)?;
        for ((t, loc), y) in rows {
            w.write_record([format_time(&t).as_str(), loc, var, &y.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, ensembles: &Path, realizations: &Path) -> Result<()> {
        self.write_ensembles(File::create(ensembles)?)?;
        self.write_realizations(File::create(realizations)?)?;
        Ok(())
    }

    pub fn load(ensembles: &Path, realizations: &Path, variable: Variable) -> Result<(Dataset, JoinReport)> {
        let f = load_ensemble_csv(ensembles, variable)?;
        let r = load_realizations_csv(realizations, variable)?;
        join_forecast_realization(variable, f, &r)
    }
}
