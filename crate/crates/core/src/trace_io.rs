//! CSV trace files.
//!
//! Columns, for `m` converters:
//!
//! ```text
//! t, phi_1..phi_m, Q, v, C_1..C_{m-1}, phi_T, d_1..d_m,
//! lambda_1..lambda_{m-1}, mu, xi, H, H_d, J, sat_1..sat_m
//! ```
//!
//! Values use the shortest decimal form that parses back to the same `f64`
//! (`NaN` for `H_d` in open loop); saturation flags are `0`/`1`.

use std::io::{Read, Write};

use crate::sim::TraceRecord;

#[derive(Debug, thiserror::Error)]
pub enum TraceIoError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("malformed trace: {0}")]
    Format(String),
}

pub fn header(m: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=m).map(|k| format!("phi_{k}")));
    h.push("Q".into());
    h.push("v".into());
    h.extend((1..m).map(|k| format!("C_{k}")));
    h.push("phi_T".into());
    h.extend((1..=m).map(|k| format!("d_{k}")));
    h.extend((1..m).map(|k| format!("lambda_{k}")));
    for s in ["mu", "xi", "H", "H_d", "J"] {
        h.push(s.into());
    }
    h.extend((1..=m).map(|k| format!("sat_{k}")));
    h
}

fn row(r: &TraceRecord) -> Vec<String> {
    let mut out = Vec::with_capacity(6 * r.phi.len() + 8);
    let mut push = |v: f64| out.push(v.to_string());
    push(r.t);
    r.phi.iter().for_each(|v| push(*v));
    push(r.q);
    push(r.v);
    r.casimir.iter().for_each(|v| push(*v));
    push(r.phi_t);
    r.duty.iter().for_each(|v| push(*v));
    r.lambda.iter().for_each(|v| push(*v));
    for v in [r.mu, r.xi, r.h, r.h_d, r.cost] {
        push(v);
    }
    out.extend(
        r.saturated
            .iter()
            .map(|s| if *s { "1" } else { "0" }.to_string()),
    );
    out
}

pub fn write_trace<W: Write>(
    writer: W,
    m: usize,
    records: &[TraceRecord],
) -> Result<(), TraceIoError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header(m))?;
    for r in records {
        if r.phi.len() != m {
            return Err(TraceIoError::Format(format!(
                "record at t={} has {} fluxes, expected {m}",
                r.t,
                r.phi.len()
            )));
        }
        w.write_record(row(r))?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads a trace written by [`write_trace`]; returns `(m, records)`.
pub fn read_trace<R: Read>(reader: R) -> Result<(usize, Vec<TraceRecord>), TraceIoError> {
    let mut rd = csv::Reader::from_reader(reader);
    let hdr: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    let m = hdr
        .iter()
        .filter(|h| h.starts_with("phi_") && *h != "phi_T")
        .count();
    if m < 2 || hdr != header(m) {
        return Err(TraceIoError::Format("unexpected header".into()));
    }
    let mut records = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let bad =
            |col: usize| TraceIoError::Format(format!("row {}: bad `{}`", line + 1, hdr[col]));
        let mut vals = Vec::with_capacity(rec.len());
        for (i, field) in rec.iter().enumerate().take(hdr.len() - m) {
            vals.push(field.parse::<f64>().map_err(|_| bad(i))?);
        }
        let mut saturated = Vec::with_capacity(m);
        for i in hdr.len() - m..hdr.len() {
            saturated.push(match rec.get(i) {
                Some("0") => false,
                Some("1") => true,
                _ => return Err(bad(i)),
            });
        }
        let mut it = vals.into_iter();
        let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
        let t = take(1)[0];
        let phi = take(m);
        let qv = take(2);
        let casimir = take(m - 1);
        let phi_t = take(1)[0];
        let duty = take(m);
        let lambda = take(m - 1);
        let tail = take(5);
        records.push(TraceRecord {
            t,
            phi,
            q: qv[0],
            v: qv[1],
            casimir,
            phi_t,
            duty,
            lambda,
            mu: tail[0],
            xi: tail[1],
            h: tail[2],
            h_d: tail[3],
            cost: tail[4],
            saturated,
        });
    }
    Ok((m, records))
}
