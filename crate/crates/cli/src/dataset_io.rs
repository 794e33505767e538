//! Subject-level dataset CSV.
//!
//! Columns (header required, any order): `id`, `arm` (0 = control,
//! 1 = treatment), `time` (months, > 0), `event` (0/1), and either
//! `stratum` (0-11) or the factor triple `x1`, `x2`, `x3`.

use std::io::{Read, Write};

use stratsurv_core::{Arm, StratumProfile, SurvivalRecord, TrialDataset};

use crate::CliError;

pub fn read_records<R: Read>(reader: R) -> Result<Vec<SurvivalRecord>, CliError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Validation(format!("dataset header: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| CliError::Validation(format!("dataset header is missing column `{name}`")));
    let (id_col, arm_col, time_col, event_col) = (need("id")?, need("arm")?, need("time")?, need("event")?);
    let stratum_cols = match (col("stratum"), col("x1"), col("x2"), col("x3")) {
        (Some(s), _, _, _) => StratumColumns::Index(s),
        (None, Some(a), Some(b), Some(c)) => StratumColumns::Factors(a, b, c),
        _ => {
            return Err(CliError::Validation(
                "dataset header needs `stratum` or all of `x1`, `x2`, `x3`".into(),
            ))
        }
    };

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let bad = |msg: String| CliError::Validation(format!("dataset row {row_no}: {msg}"));
        let row = row.map_err(|e| bad(e.to_string()))?;
        let field = |c: usize, name: &str| {
            row.get(c)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| bad(format!("missing `{name}`")))
        };
        let int = |c: usize, name: &str| {
            field(c, name)?
                .parse::<u64>()
                .map_err(|_| bad(format!("`{name}` must be a non-negative integer")))
        };
        let flag = |c: usize, name: &str| match int(c, name)? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(bad(format!("`{name}` must be 0 or 1, got {v}"))),
        };

        let id = int(id_col, "id")? as usize;
        let arm = if flag(arm_col, "arm")? { Arm::Treatment } else { Arm::Control };
        let time: f64 = field(time_col, "time")?
            .parse()
            .map_err(|_| bad("`time` is not a number".into()))?;
        if !(time.is_finite() && time > 0.0) {
            return Err(bad(format!("`time` must be > 0, got {time}")));
        }
        let event = flag(event_col, "event")?;
        let stratum = match stratum_cols {
            StratumColumns::Index(c) => StratumProfile::from_index(int(c, "stratum")? as usize),
            StratumColumns::Factors(a, b, c) => {
                let lvl = |c, n| int(c, n).map(|v| v.min(u8::MAX as u64) as u8);
                StratumProfile::new(lvl(a, "x1")?, lvl(b, "x2")?, lvl(c, "x3")?)
            }
        }
        .map_err(|e| bad(e.to_string()))?;
        records.push(SurvivalRecord { id, stratum, arm, time, event });
    }
    if records.is_empty() {
        return Err(CliError::Validation("dataset has no rows".into()));
    }
    Ok(records)
}

#[derive(Clone, Copy)]
enum StratumColumns {
    Index(usize),
    Factors(usize, usize, usize),
}

/// Writes records with positive follow-up in `id,stratum,arm,time,event`
/// form. Times use the shortest representation that parses back exactly.
pub fn write_records<W: Write>(writer: W, records: &[SurvivalRecord]) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let io = |e: csv::Error| CliError::Runtime(format!("writing dataset: {e}"));
    w.write_record(["id", "stratum", "arm", "time", "event"]).map_err(io)?;
    for r in records.iter().filter(|r| r.time > 0.0) {
        w.write_record([
            r.id.to_string(),
            r.stratum.index().to_string(),
            r.arm.code().to_string(),
            format!("{}", r.time),
            (r.event as u8).to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Runtime(format!("writing dataset: {e}")))
}

pub fn write_dataset<W: Write>(writer: W, dataset: &TrialDataset) -> Result<(), CliError> {
    write_records(writer, &dataset.records())
}
