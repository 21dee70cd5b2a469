//! One JSON object per line, UTF-8.

use std::io::{self, BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl JsonlError {
    /// Malformed content, as opposed to an I/O failure.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, JsonlError::Io(_))
    }
}

/// Lazily decodes records, skipping blank lines. Line numbers are 1-based.
pub fn read_jsonl<T, R>(reader: R) -> impl Iterator<Item = Result<T, JsonlError>>
where
    T: DeserializeOwned,
    R: BufRead,
{
    reader
        .lines()
        .enumerate()
        .filter_map(|(idx, line)| match line {
            Err(e) => Some(Err(JsonlError::Io(e))),
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(serde_json::from_str(&l).map_err(|source| JsonlError::Parse {
                line: idx + 1,
                source,
            })),
        })
}

pub fn read_jsonl_vec<T, R>(reader: R) -> Result<Vec<T>, JsonlError>
where
    T: DeserializeOwned,
    R: BufRead,
{
    read_jsonl(reader).collect()
}

pub fn write_jsonl_record<T: Serialize, W: Write>(out: &mut W, record: &T) -> io::Result<()> {
    serde_json::to_writer(&mut *out, record)?;
    out.write_all(b"\n")
}

pub fn write_jsonl<'a, T, W, I>(out: &mut W, records: I) -> io::Result<()>
where
    T: Serialize + 'a,
    W: Write,
    I: IntoIterator<Item = &'a T>,
{
    for r in records {
        write_jsonl_record(out, r)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Trajectory;

    #[test]
    fn skips_blank_lines_and_reports_line_numbers() {
        let input = "{\"points\":[[1,2]]}\n\n{\"points\":[]}\n";
        let out: Vec<Result<Trajectory, _>> = read_jsonl(input.as_bytes()).collect();
        assert_eq!(out.len(), 2);
        assert!(out[0].is_ok());
        match &out[1] {
            Err(JsonlError::Parse { line, .. }) => assert_eq!(*line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn write_then_read() {
        let t = Trajectory::from_xy([(1.0, 0.25), (2.0, -0.5)]).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, [&t, &t]).unwrap();
        let back: Vec<Trajectory> = read_jsonl_vec(buf.as_slice()).unwrap();
        assert_eq!(back, vec![t.clone(), t]);
    }
}
