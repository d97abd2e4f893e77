//! The canonical signal CSV: `subject,gesture,rep,domain,t,ax,ay,az`,
//! rows grouped by (subject, gesture, rep, domain). This is the format the
//! synthetic generator emits, so every downstream tool is dataset-agnostic.

use super::{Domain, RawTrial, AXES};
use crate::error::{Error, Result};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

pub const CANONICAL_HEADER: &str = "subject,gesture,rep,domain,t,ax,ay,az";

pub fn ingest_canonical(path: &Path) -> Result<Vec<RawTrial>> {
    let file = fs::File::open(path)?;
    read_canonical(BufReader::new(file))
}

pub fn read_canonical<R: Read>(reader: R) -> Result<Vec<RawTrial>> {
    let mut lines = BufReader::new(reader).lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::ParseError {
            line: 1,
            message: "empty file".into(),
        })?;
    if header.trim_end() != CANONICAL_HEADER {
        return Err(Error::ParseError {
            line: 1,
            message: format!("expected header `{CANONICAL_HEADER}`, found `{header}`"),
        });
    }

    let mut trials: Vec<RawTrial> = Vec::new();
    let mut current: Option<(u32, u32, u32, Domain, Vec<[f64; AXES]>)> = None;

    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::ParseError {
                line: line_no,
                message: format!("expected 8 columns, found {}", fields.len()),
            });
        }
        let parse_u32 = |s: &str, what: &str| {
            s.parse::<u32>().map_err(|_| Error::ParseError {
                line: line_no,
                message: format!("bad {what} `{s}`"),
            })
        };
        let parse_f64 = |s: &str, what: &str| {
            s.parse::<f64>().map_err(|_| Error::ParseError {
                line: line_no,
                message: format!("bad {what} `{s}`"),
            })
        };
        let subject = parse_u32(fields[0], "subject")?;
        let gesture = parse_u32(fields[1], "gesture")?;
        let rep = parse_u32(fields[2], "rep")?;
        let domain: Domain = fields[3].parse().map_err(|_| Error::ParseError {
            line: line_no,
            message: format!("bad domain `{}`", fields[3]),
        })?;
        let _t = parse_f64(fields[4], "t")?;
        let reading = [
            parse_f64(fields[5], "ax")?,
            parse_f64(fields[6], "ay")?,
            parse_f64(fields[7], "az")?,
        ];

        let key = (subject, gesture, rep, domain);
        match &mut current {
            Some((s, g, r, d, readings)) if (*s, *g, *r, *d) == key => readings.push(reading),
            _ => {
                if let Some((s, g, r, d, readings)) = current.take() {
                    trials.push(RawTrial::new(s, g, r, d, readings).map_err(|e| {
                        Error::ParseError {
                            line: line_no,
                            message: e.to_string(),
                        }
                    })?);
                }
                current = Some((subject, gesture, rep, domain, vec![reading]));
            }
        }
    }
    if let Some((s, g, r, d, readings)) = current {
        trials.push(
            RawTrial::new(s, g, r, d, readings).map_err(|e| Error::DataError(e.to_string()))?,
        );
    }
    if trials.is_empty() {
        return Err(Error::DatasetError("canonical file contains no trials".into()));
    }
    Ok(trials)
}

pub fn export_canonical(trials: &[RawTrial], path: &Path) -> Result<()> {
    let mut file = fs::File::create(path)?;
    write_canonical(&mut file, trials)
}

pub fn write_canonical<W: Write>(w: &mut W, trials: &[RawTrial]) -> Result<()> {
    writeln!(w, "{CANONICAL_HEADER}")?;
    for trial in trials {
        for (t, reading) in trial.readings.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                trial.subject,
                trial.gesture,
                trial.rep,
                trial.domain,
                t,
                reading[0],
                reading[1],
                reading[2]
            )?;
        }
    }
    Ok(())
}
