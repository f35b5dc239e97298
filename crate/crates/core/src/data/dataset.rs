//! Dataset CSV in NONMEM-like layout.
//!
//! Required columns: `ID, TIME, AMT, DV, MDV, POD, ALB, ASAT, WT`. `TXDATE` (YYYY-MM-DD) is
//! optional; any other column is kept as a per-patient numeric attribute. Empty cells and
//! `.` read as missing. A row with `AMT > 0` is a dose, a row with `DV` is an observation,
//! and a row with neither only carries covariates.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use sha2::{Digest, Sha256};

use super::cohort::{Cohort, Exclusion, Provenance};
use crate::error::{Error, Result};
use crate::pk::{Covariate, CovariateRecord, Event, EventTimeline, LAB_COVARIATES};

pub const REQUIRED_COLUMNS: [&str; 9] = ["ID", "TIME", "AMT", "DV", "MDV", "POD", "ALB", "ASAT", "WT"];
pub const TXDATE: &str = "TXDATE";

pub fn parse_dataset(path: impl AsRef<Path>) -> Result<Cohort> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    parse_dataset_bytes(&bytes, &path.display().to_string())
}

pub fn parse_dataset_reader(mut reader: impl Read, source: &str) -> Result<Cohort> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    parse_dataset_bytes(&bytes, source)
}

#[derive(Default)]
struct PatientRows {
    events: Vec<Event>,
    covariates: BTreeMap<u32, CovariateRecord>,
    pod_offset: Option<i64>,
    last_time: Option<f64>,
    txdate: Option<NaiveDate>,
    attributes: BTreeMap<String, f64>,
}

struct Row {
    id: String,
    time: f64,
    event: Option<Event>,
    pod: u32,
    covariates: CovariateRecord,
    txdate: Option<NaiveDate>,
    attributes: Vec<(String, f64)>,
}

fn cell(s: &str) -> Option<&str> {
    let t = s.trim();
    (!t.is_empty() && t != ".").then_some(t)
}

fn number(s: &str, col: &str) -> std::result::Result<Option<f64>, String> {
    match cell(s) {
        None => Ok(None),
        Some(t) => match t.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Some(v)),
            _ => Err(format!("{col} is not a finite number: '{t}'")),
        },
    }
}

struct Columns {
    idx: [usize; 9],
    txdate: Option<usize>,
    extra: Vec<(usize, String)>,
}

fn parse_row(rec: &csv::StringRecord, cols: &Columns) -> std::result::Result<Row, String> {
    let get = |i: usize| rec.get(cols.idx[i]).unwrap_or("");
    let id = cell(get(0)).ok_or("ID is empty")?.to_string();
    let time = number(get(1), "TIME")?.ok_or("TIME is empty")?;
    let amt = number(get(2), "AMT")?.filter(|a| *a != 0.0);
    let dv = number(get(3), "DV")?;
    let mdv = match cell(get(4)) {
        None | Some("0") => false,
        Some("1") => true,
        Some(other) => return Err(format!("MDV must be 0 or 1, got '{other}'")),
    };
    let pod_raw = number(get(5), "POD")?.ok_or("POD is empty")?;
    if pod_raw.fract() != 0.0 || pod_raw < 1.0 || pod_raw > u32::MAX as f64 {
        return Err(format!("POD must be an integer ≥ 1, got {pod_raw}"));
    }
    let pod = pod_raw as u32;

    let event = match (amt, dv) {
        (Some(_), Some(_)) => return Err("both AMT and DV are set".into()),
        (Some(a), None) if a < 0.0 => return Err(format!("AMT must be > 0, got {a}")),
        (Some(a), None) => Some(Event::Dose { time, amount: a }),
        (None, Some(v)) => {
            if !mdv && v <= 0.0 {
                return Err(format!("DV must be > 0 for MDV=0, got {v}"));
            }
            Some(Event::Observation {
                time,
                value: Some(v),
                mdv,
            })
        }
        (None, None) => None,
    };

    let mut covariates = CovariateRecord::default();
    for (k, cov) in LAB_COVARIATES.iter().enumerate() {
        let v = number(get(6 + k), cov.column())?;
        if let Some(x) = v {
            if x <= 0.0 {
                return Err(format!("{} must be > 0, got {x}", cov.column()));
            }
        }
        covariates.set(*cov, v);
    }
    let txdate = match cols.txdate.and_then(|i| rec.get(i)).and_then(cell) {
        None => None,
        Some(t) => {
            Some(NaiveDate::parse_from_str(t, "%Y-%m-%d").map_err(|_| format!("TXDATE is not YYYY-MM-DD: '{t}'"))?)
        }
    };
    let mut attributes = Vec::new();
    for (i, name) in &cols.extra {
        if let Some(t) = rec.get(*i).and_then(cell) {
            if let Ok(v) = t.parse::<f64>() {
                if v.is_finite() {
                    attributes.push((name.clone(), v));
                }
            }
        }
    }
    Ok(Row {
        id,
        time,
        event,
        pod,
        covariates,
        txdate,
        attributes,
    })
}

/// Parses dataset bytes; `source` labels the provenance.
pub fn parse_dataset_bytes(bytes: &[u8], source: &str) -> Result<Cohort> {
    let digest = hex::encode(Sha256::digest(bytes));
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let mut idx = [0usize; 9];
    for (k, name) in REQUIRED_COLUMNS.iter().enumerate() {
        idx[k] = find(name).ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }
    let txdate = find(TXDATE);
    let extra = headers
        .iter()
        .enumerate()
        .filter(|(i, h)| !idx.contains(i) && Some(*i) != txdate && !h.is_empty())
        .map(|(i, h)| (i, h.to_string()))
        .collect();
    let cols = Columns { idx, txdate, extra };

    let mut order: Vec<String> = Vec::new();
    let mut patients: BTreeMap<String, PatientRows> = BTreeMap::new();
    let mut exclusions = Vec::new();
    let mut n_rows = 0;
    let mut n_accepted = 0;
    for (k, rec) in rdr.records().enumerate() {
        n_rows += 1;
        let line = rec
            .as_ref()
            .ok()
            .and_then(|r| r.position())
            .map_or(k as u64 + 2, |p| p.line());
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                exclusions.push(Exclusion {
                    line,
                    patient_id: None,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        if rec.iter().all(|c| c.trim().is_empty()) {
            n_rows -= 1;
            continue;
        }
        let row = match parse_row(&rec, &cols) {
            Ok(r) => r,
            Err(reason) => {
                let patient_id = rec.get(cols.idx[0]).and_then(cell).map(str::to_string);
                log::warn!("line {line}: row excluded: {reason}");
                exclusions.push(Exclusion {
                    line,
                    patient_id,
                    reason,
                });
                continue;
            }
        };
        n_accepted += 1;
        if !patients.contains_key(&row.id) {
            order.push(row.id.clone());
        }
        let p = patients.entry(row.id.clone()).or_default();
        if p.last_time.is_some_and(|t| row.time < t) {
            return Err(Error::data(&row.id, format!("TIME is not monotone at line {line}")));
        }
        p.last_time = Some(row.time);
        let offset = i64::from(row.pod) - (row.time / 24.0).floor() as i64;
        match p.pod_offset {
            None => p.pod_offset = Some(offset),
            Some(o) if o != offset => {
                return Err(Error::data(
                    &row.id,
                    format!(
                        "POD at line {line} is inconsistent with TIME (expected {})",
                        (row.time / 24.0).floor() as i64 + o
                    ),
                ))
            }
            _ => {}
        }
        if let Some(d) = row.txdate {
            match p.txdate {
                None => p.txdate = Some(d),
                Some(prev) if prev != d => {
                    return Err(Error::data(&row.id, format!("conflicting TXDATE at line {line}")));
                }
                _ => {}
            }
        }
        p.covariates.entry(row.pod).or_default().merge(&row.covariates);
        if let Some(ev) = row.event {
            p.events.push(ev);
        }
        for (name, v) in row.attributes {
            p.attributes.entry(name).or_insert(v);
        }
    }

    let mut timelines = Vec::with_capacity(order.len());
    let mut attributes = BTreeMap::new();
    for id in order {
        let p = patients.remove(&id).expect("patient rows");
        let tl = EventTimeline::new(id.clone(), p.events, p.covariates, p.pod_offset.unwrap_or(0))?
            .with_transplant_date(p.txdate);
        if !p.attributes.is_empty() {
            attributes.insert(id, p.attributes);
        }
        timelines.push(tl);
    }
    let mut cohort = Cohort::new(
        timelines,
        Provenance {
            source: source.to_string(),
            digest,
            n_rows,
            n_rows_accepted: n_accepted,
            exclusions,
            ..Provenance::default()
        },
    )?;
    cohort.attributes = attributes;
    Ok(cohort)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `cohort` in the dataset layout; `parse_dataset_bytes` reads it back to the same
/// events, covariate records and attributes.
pub fn write_dataset(cohort: &Cohort) -> Result<String> {
    let has_txdate = cohort.patients.iter().any(|p| p.transplant_date.is_some());
    let extra: Vec<String> = {
        let mut names: Vec<String> = cohort.attributes.values().flat_map(|a| a.keys().cloned()).collect();
        names.sort();
        names.dedup();
        names
    };
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let mut header: Vec<String> = REQUIRED_COLUMNS.iter().map(|s| s.to_string()).collect();
    if has_txdate {
        header.push(TXDATE.into());
    }
    header.extend(extra.iter().cloned());
    w.write_record(&header)?;

    for tl in &cohort.patients {
        let attrs = cohort.attributes.get(&tl.patient_id);
        let tx = tl
            .transplant_date
            .map(|d| d.format("%Y-%m-%d").to_string())
            .unwrap_or_default();
        // Covariate-only rows for PODs without events, placed at that POD's midnight.
        let event_pods: std::collections::BTreeSet<u32> =
            tl.events().iter().map(|e| tl.pod_at(e.time()) as u32).collect();
        let mut items: Vec<(f64, Option<&Event>)> = tl.events().iter().map(|e| (e.time(), Some(e))).collect();
        for pod in tl.covariates().keys() {
            if !event_pods.contains(pod) {
                items.push((tl.pod_start(i64::from(*pod)), None));
            }
        }
        items.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.is_some().cmp(&b.1.is_some())));
        let mut written_pods = std::collections::BTreeSet::new();
        for (time, ev) in items {
            let pod = tl.pod_at(time) as u32;
            let (amt, dv, mdv) = match ev {
                Some(Event::Dose { amount, .. }) => (amount.to_string(), String::new(), "1"),
                Some(Event::Observation { value, mdv, .. }) => {
                    (String::new(), fmt_opt(*value), if *mdv { "1" } else { "0" })
                }
                None => (String::new(), String::new(), "1"),
            };
            let cov = if written_pods.insert(pod) {
                tl.covariates().get(&pod).copied().unwrap_or_default()
            } else {
                CovariateRecord::default()
            };
            let mut rec = vec![
                tl.patient_id.clone(),
                time.to_string(),
                amt,
                dv,
                mdv.to_string(),
                pod.to_string(),
                fmt_opt(cov.get(Covariate::Alb)),
                fmt_opt(cov.get(Covariate::Asat)),
                fmt_opt(cov.get(Covariate::Weight)),
            ];
            if has_txdate {
                rec.push(tx.clone());
            }
            for name in &extra {
                rec.push(fmt_opt(attrs.and_then(|a| a.get(name)).copied()));
            }
            w.write_record(&rec)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
