//! Tab-separated input files.
//!
//! Transcript: `label<TAB>start_seconds<TAB>token_id` per line, where the
//! label is a diarization speaker (before channel assignment) or a channel
//! name. Diarization: `speaker<TAB>start_seconds<TAB>end_seconds`. Blank
//! lines and lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::path::Path;

use super::{DiarSegment, Interval, TimedToken};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptRecord {
    pub label: String,
    pub token: TimedToken,
}

fn records<'a>(text: &'a str) -> impl Iterator<Item = (usize, Vec<&'a str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            None
        } else {
            Some((i + 1, line.split('\t').collect()))
        }
    })
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, raw: &str, what: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("cannot parse {what} from {raw:?}")))
}

pub fn parse_transcript(text: &str, path: &Path) -> Result<Vec<TranscriptRecord>> {
    records(text)
        .map(|(line, fields)| {
            if fields.len() != 3 {
                return Err(parse_err(path, line, format!("expected 3 fields, found {}", fields.len())));
            }
            let start: f64 = field(path, line, fields[1], "start time")?;
            if !start.is_finite() || start < 0.0 {
                return Err(parse_err(path, line, format!("invalid start time {start}")));
            }
            Ok(TranscriptRecord {
                label: fields[0].to_string(),
                token: TimedToken {
                    token_id: field(path, line, fields[2], "token id")?,
                    start,
                },
            })
        })
        .collect()
}

pub fn parse_diarization(text: &str, path: &Path) -> Result<Vec<DiarSegment>> {
    records(text)
        .map(|(line, fields)| {
            if fields.len() != 3 {
                return Err(parse_err(path, line, format!("expected 3 fields, found {}", fields.len())));
            }
            let start: f64 = field(path, line, fields[1], "start time")?;
            let end: f64 = field(path, line, fields[2], "end time")?;
            let interval = Interval::new(start, end).map_err(|e| parse_err(path, line, e.to_string()))?;
            Ok(DiarSegment {
                speaker: fields[0].to_string(),
                interval,
            })
        })
        .collect()
}

pub fn read_transcript(path: impl AsRef<Path>) -> Result<Vec<TranscriptRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_transcript(&text, path)
}

pub fn read_diarization(path: impl AsRef<Path>) -> Result<Vec<DiarSegment>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_diarization(&text, path)
}

pub fn write_transcript(path: impl AsRef<Path>, records: &[TranscriptRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        writeln!(out, "{}\t{}\t{}", r.label, r.token.start, r.token.token_id).unwrap();
    }
    let path = path.as_ref();
    std::fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn write_diarization(path: impl AsRef<Path>, segments: &[DiarSegment]) -> Result<()> {
    let mut out = String::new();
    for s in segments {
        writeln!(out, "{}\t{}\t{}", s.speaker, s.interval.start, s.interval.end).unwrap();
    }
    let path = path.as_ref();
    std::fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_reports_line_numbers() {
        let path = Path::new("t.tsv");
        let ok = parse_transcript("# header\nA\t0.5\t12\n\nB\t1.25\t3\n", path).unwrap();
        assert_eq!(ok.len(), 2);
        assert_eq!(ok[1].label, "B");
        assert_eq!(ok[1].token.token_id, 3);
        let err = parse_transcript("A\t0.5\t12\nA\tx\t1\n", path).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_diarization("A\t0\t1\nB\t2\t1\n", path).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(parse_diarization("A\t0\n", path).is_err());
    }
}
