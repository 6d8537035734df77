//! Plain-text interchange: raw recordings and row manifests.
//!
//! A raw recording is a CSV whose first line is the header
//! `subject_id,sample_rate,label`, second line the matching values (label
//! may be empty), followed by one sample value per line.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::Signal;

pub const RAW_HEADER: &str = "subject_id,sample_rate,label";

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub signal: Signal,
    pub label: Option<u8>,
}

pub fn parse_raw_signal(text: &str) -> Result<RawRecord> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let header = lines.next().ok_or_else(|| Error::InvalidInput("empty raw signal file".into()))?;
    if header != RAW_HEADER {
        return Err(Error::InvalidInput(format!("expected header {RAW_HEADER:?}, found {header:?}")));
    }
    let meta = lines.next().ok_or_else(|| Error::InvalidInput("missing metadata line".into()))?;
    let fields: Vec<&str> = meta.split(',').map(str::trim).collect();
    if fields.len() != 3 {
        return Err(Error::InvalidInput(format!("metadata line has {} fields, expected 3", fields.len())));
    }
    let sample_rate: u32 = fields[1]
        .parse()
        .map_err(|_| Error::InvalidInput(format!("bad sample rate {:?}", fields[1])))?;
    let label = match fields[2] {
        "" => None,
        s => Some(s.parse().map_err(|_| Error::InvalidInput(format!("bad label {s:?}")))?),
    };
    let samples = lines
        .enumerate()
        .map(|(i, l)| l.parse::<f64>().map_err(|_| Error::InvalidInput(format!("bad sample {l:?} on data row {i}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(RawRecord { signal: Signal::new(samples, sample_rate, fields[0])?, label })
}

pub fn format_raw_signal(record: &RawRecord) -> String {
    let mut out = String::with_capacity(16 * record.signal.len() + 64);
    out.push_str(RAW_HEADER);
    out.push('\n');
    let label = record.label.map(|l| l.to_string()).unwrap_or_default();
    out.push_str(&format!("{},{},{}\n", record.signal.subject_id(), record.signal.sample_rate(), label));
    for v in record.signal.samples() {
        out.push_str(&format!("{v}\n"));
    }
    out
}

pub fn read_raw_signal(path: impl AsRef<Path>) -> Result<RawRecord> {
    parse_raw_signal(&fs::read_to_string(path)?)
}

pub fn write_raw_signal(path: impl AsRef<Path>, record: &RawRecord) -> Result<()> {
    fs::write(path, format_raw_signal(record))?;
    Ok(())
}

/// `row_index,class` manifest.
pub fn write_label_manifest(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "row_index,class")?;
    for (i, l) in labels.iter().enumerate() {
        writeln!(f, "{i},{l}")?;
    }
    f.flush()?;
    Ok(())
}

/// `row_index,subject_id` sidecar used for subject-level fold splits.
pub fn write_subject_manifest(path: impl AsRef<Path>, subjects: &[String]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "row_index,subject_id")?;
    for (i, s) in subjects.iter().enumerate() {
        writeln!(f, "{i},{s}")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_subject_manifest(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("row_index,subject_id") {
        return Err(Error::InvalidInput("subject manifest header must be row_index,subject_id".into()));
    }
    lines
        .enumerate()
        .map(|(expected, line)| {
            let (idx, subject) = line
                .split_once(',')
                .ok_or_else(|| Error::InvalidInput(format!("malformed manifest line {line:?}")))?;
            if idx.parse::<usize>().ok() != Some(expected) {
                return Err(Error::InvalidInput(format!("manifest rows out of order at {line:?}")));
            }
            Ok(subject.to_owned())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_signal_round_trip() {
        let rec = RawRecord { signal: Signal::new(vec![0.5, -1.25, 3.0], 700, "s01").unwrap(), label: Some(1) };
        let text = format_raw_signal(&rec);
        assert!(text.starts_with("subject_id,sample_rate,label\ns01,700,1\n0.5\n"));
        assert_eq!(parse_raw_signal(&text).unwrap(), rec);
    }

    #[test]
    fn raw_signal_errors() {
        assert!(parse_raw_signal("").is_err());
        assert!(parse_raw_signal("a,b,c\ns,1,\n1.0").is_err());
        assert!(parse_raw_signal("subject_id,sample_rate,label\ns,x,\n1.0").is_err());
        assert!(parse_raw_signal("subject_id,sample_rate,label\ns,256,\nfoo").is_err());
        assert!(parse_raw_signal("subject_id,sample_rate,label\ns,256,\n").is_err());
        let unlabeled = parse_raw_signal("subject_id,sample_rate,label\ns,256,\n1\n2").unwrap();
        assert_eq!(unlabeled.label, None);
    }

    #[test]
    fn subject_manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let subjects = vec!["a".to_string(), "b".to_string(), "a".to_string()];
        write_subject_manifest(&p, &subjects).unwrap();
        assert_eq!(read_subject_manifest(&p).unwrap(), subjects);
    }
}
