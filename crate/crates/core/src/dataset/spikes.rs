use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RegionLabel;
use crate::error::{Error, Result};
use crate::matfile;

pub const SPIKE_CSV_HEADER: [&str; 4] = ["session_id", "unit_id", "region", "spike_time_s"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub unit_id: String,
    pub region: RegionLabel,
    /// Sorted, finite, non-negative spike times in seconds.
    pub spike_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecording {
    pub session_id: String,
    pub units: Vec<UnitRecord>,
}

impl SessionRecording {
    pub fn validate(&self) -> Result<()> {
        if self.session_id.is_empty() {
            return Err(Error::Validation("session_id is empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for u in &self.units {
            if !seen.insert(u.unit_id.as_str()) {
                return Err(Error::Validation(format!("duplicate unit id {:?}", u.unit_id)));
            }
            if u.spike_times.iter().any(|t| !t.is_finite() || *t < 0.0) {
                return Err(Error::Validation(format!("unit {:?} has invalid spike times", u.unit_id)));
            }
            if u.spike_times.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::Validation(format!("unit {:?} spike times are not sorted", u.unit_id)));
            }
        }
        Ok(())
    }

    pub fn total_spikes(&self) -> usize {
        self.units.iter().map(|u| u.spike_times.len()).sum()
    }
}

/// Parses spike CSV text. `origin` is used in error messages and, for a
/// header-only file, as the session id.
pub fn parse_spike_csv(text: &str, origin: &str) -> Result<SessionRecording> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let parse_err = |line: usize, msg: String| Error::Parse { path: origin.to_string(), line, msg };

    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != SPIKE_CSV_HEADER {
        return Err(parse_err(1, format!("expected header {}", SPIKE_CSV_HEADER.join(","))));
    }

    let mut session: Option<String> = None;
    // unit id -> (region, times); insertion order preserved separately
    let mut units: BTreeMap<String, (RegionLabel, Vec<f64>)> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != 4 {
            return Err(parse_err(line, format!("expected 4 fields, found {}", rec.len())));
        }
        let (sid, uid, region, t) = (&rec[0], &rec[1], &rec[2], &rec[3]);
        if sid.is_empty() || uid.is_empty() {
            return Err(parse_err(line, "empty session or unit id".into()));
        }
        match &session {
            None => session = Some(sid.to_string()),
            Some(s) if s != sid => {
                return Err(Error::Validation(format!(
                    "line {line}: file mixes sessions {s:?} and {sid:?}"
                )))
            }
            _ => {}
        }
        let region: RegionLabel = region
            .parse()
            .map_err(|_| Error::Validation(format!("line {line}: unknown region code {region:?}")))?;
        let t: f64 = t
            .parse()
            .map_err(|_| parse_err(line, format!("spike time {t:?} is not a number")))?;
        if !t.is_finite() || t < 0.0 {
            return Err(parse_err(line, format!("spike time {t} must be finite and non-negative")));
        }
        match units.get_mut(uid) {
            Some((r, times)) => {
                if *r != region {
                    return Err(Error::Validation(format!(
                        "line {line}: unit {uid:?} changes region from {r} to {region}"
                    )));
                }
                times.push(t);
            }
            None => {
                order.push(uid.to_string());
                units.insert(uid.to_string(), (region, vec![t]));
            }
        }
    }

    let units = order
        .into_iter()
        .map(|uid| {
            let (region, mut spike_times) = units.remove(&uid).expect("inserted above");
            spike_times.sort_by(f64::total_cmp);
            UnitRecord { unit_id: uid, region, spike_times }
        })
        .collect();
    let session_id = session.unwrap_or_else(|| {
        Path::new(origin)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| "session".into())
    });
    Ok(SessionRecording { session_id, units })
}

pub fn load_spike_file(path: &Path) -> Result<SessionRecording> {
    let bytes = matfile::read_artifact(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::Parse { path: path.display().to_string(), line: 0, msg: "not UTF-8".into() })?;
    parse_spike_csv(&text, &path.display().to_string())
}

pub fn spike_csv_string(rec: &SessionRecording) -> String {
    let mut out = SPIKE_CSV_HEADER.join(",");
    out.push('\n');
    for u in &rec.units {
        for t in &u.spike_times {
            out.push_str(&format!("{},{},{},{:.9}\n", rec.session_id, u.unit_id, u.region, t));
        }
    }
    out
}

/// Writes one spike per row. Units without spikes produce no rows.
pub fn write_spike_file(rec: &SessionRecording, path: &Path) -> Result<()> {
    matfile::write_new(path, spike_csv_string(rec).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "session_id,unit_id,region,spike_time_s\n";

    #[test]
    fn rows_are_sorted_per_unit() {
        let text = format!("{HEADER}s1,u1,VISl,0.10\ns1,u1,VISl,0.05\n");
        let rec = parse_spike_csv(&text, "x.csv").unwrap();
        assert_eq!(rec.session_id, "s1");
        assert_eq!(rec.units.len(), 1);
        assert_eq!(rec.units[0].spike_times, vec![0.05, 0.10]);
    }

    #[test]
    fn header_only_gives_empty_session() {
        let rec = parse_spike_csv(HEADER, "dir/sess7.csv").unwrap();
        assert!(rec.units.is_empty());
        assert_eq!(rec.session_id, "sess7");
    }

    #[test]
    fn unknown_region_names_line() {
        let text = format!("{HEADER}s1,u1,VISx,0.10\n");
        let err = parse_spike_csv(&text, "x.csv").unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn malformed_time_is_parse_error_with_line() {
        let text = format!("{HEADER}s1,u1,VISp,0.1\ns1,u1,VISp,abc\n");
        match parse_spike_csv(&text, "x.csv").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn alias_region_is_canonicalised() {
        let text = format!("{HEADER}s1,u1,VISI,0.10\n");
        let rec = parse_spike_csv(&text, "x.csv").unwrap();
        assert_eq!(rec.units[0].region, RegionLabel::VisL);
    }

    #[test]
    fn write_then_parse_keeps_spikes() {
        let rec = SessionRecording {
            session_id: "s".into(),
            units: vec![UnitRecord { unit_id: "a".into(), region: RegionLabel::VisP, spike_times: vec![0.25, 1.5] }],
        };
        let back = parse_spike_csv(&spike_csv_string(&rec), "s.csv").unwrap();
        assert_eq!(back, rec);
    }
}
