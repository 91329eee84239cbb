//! Trace CSV: one row per recorded sample, fixed column order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

pub const TRACE_HEADER: [&str; 18] = [
    "t",
    "ia",
    "ib",
    "ic",
    "i_mid",
    "v_dc1",
    "v_dc2",
    "psis_alpha",
    "psis_beta",
    "psis_hat_alpha",
    "psis_hat_beta",
    "te",
    "te_ref",
    "omega_m",
    "omega_ref",
    "vector",
    "mode",
    "health",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub ia: f64,
    pub ib: f64,
    pub ic: f64,
    pub i_mid: f64,
    pub v_dc1: f64,
    pub v_dc2: f64,
    pub psis_alpha: f64,
    pub psis_beta: f64,
    pub psis_hat_alpha: f64,
    pub psis_hat_beta: f64,
    pub te: f64,
    pub te_ref: f64,
    pub omega_m: f64,
    pub omega_ref: f64,
    /// Index into the vector table active when the sample was taken.
    pub vector: usize,
    pub mode: String,
    /// One code per device S1..S6: H healthy, O open, S shorted, B blocked.
    pub health: String,
}

impl TraceRecord {
    pub fn currents(&self) -> [f64; 3] {
        [self.ia, self.ib, self.ic]
    }
}

pub fn write_trace<W: Write>(out: W, records: &[TraceRecord]) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum TraceReadError {
    #[error("trace header does not match the expected columns")]
    Header,
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<TraceRecord>, TraceReadError> {
    let mut rd = csv::Reader::from_reader(input);
    if rd.headers()?.iter().ne(TRACE_HEADER.iter().copied()) {
        return Err(TraceReadError::Header);
    }
    Ok(rd.deserialize().collect::<Result<Vec<TraceRecord>, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: f64) -> TraceRecord {
        TraceRecord {
            t,
            ia: 1.5,
            ib: -0.75,
            ic: -0.75,
            i_mid: 0.0,
            v_dc1: 150.0,
            v_dc2: 150.0,
            psis_alpha: 0.6,
            psis_beta: 0.0,
            psis_hat_alpha: 0.59,
            psis_hat_beta: 0.01,
            te: 10.0,
            te_ref: 10.2,
            omega_m: 40.0,
            omega_ref: 40.0,
            vector: 3,
            mode: "postfault:a".into(),
            health: "OBHHHH".into(),
        }
    }

    #[test]
    fn round_trip_and_header() {
        let rows = vec![rec(0.0), rec(5e-5)];
        let mut buf = Vec::new();
        write_trace(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&TRACE_HEADER.join(",")));
        assert_eq!(read_trace(&buf[..]).unwrap(), rows);
        let bad = text.replacen("ia,ib", "ib,ia", 1);
        assert!(matches!(read_trace(bad.as_bytes()), Err(TraceReadError::Header)));
    }

    #[test]
    fn empty_trace_has_header_only() {
        let mut buf = Vec::new();
        write_trace(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim_end(), TRACE_HEADER.join(","));
        let mut buf = Vec::new();
        write_trace(&mut buf, &[]).unwrap();
        assert!(read_trace(&buf[..]).unwrap().is_empty());
    }
}
