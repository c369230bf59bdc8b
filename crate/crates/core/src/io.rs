//! JSON / JSONL file helpers. A path of `-` reads stdin or writes stdout.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

fn is_stdio(path: &Path) -> bool {
    path.as_os_str() == "-"
}

fn io_err(path: &Path, source: io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn open_input(path: &Path) -> Result<Box<dyn BufRead>> {
    if is_stdio(path) {
        return Ok(Box::new(BufReader::new(io::stdin())));
    }
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    Ok(Box::new(BufReader::new(file)))
}

pub fn open_output(path: &Path) -> Result<Box<dyn Write>> {
    if is_stdio(path) {
        return Ok(Box::new(BufWriter::new(io::stdout())));
    }
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    Ok(Box::new(BufWriter::new(file)))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    let mut s = String::new();
    open_input(path)?
        .read_to_string(&mut s)
        .map_err(|e| io_err(path, e))?;
    Ok(s)
}

pub fn write_string(path: &Path, contents: &str) -> Result<()> {
    let mut out = open_output(path)?;
    out.write_all(contents.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| io_err(path, e))
}

/// Pulls the offending field name out of a serde_json message when it names one.
fn field_of(err: &serde_json::Error) -> String {
    let msg = err.to_string();
    msg.split('`')
        .nth(1)
        .filter(|_| msg.contains("field"))
        .unwrap_or("record")
        .to_string()
}

pub(crate) fn json_error(path: &Path, line_offset: usize, err: serde_json::Error) -> Error {
    let line = if err.line() == 0 { 0 } else { line_offset + err.line() };
    Error::parse(path, line, field_of(&err), err.to_string())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| json_error(path, 0, e))
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_string(path, &to_json_pretty(value))
}

/// One parsed JSONL record with its 1-based source line.
#[derive(Debug, Clone)]
pub struct Line<T> {
    pub line: usize,
    pub value: T,
}

pub fn parse_jsonl<T: DeserializeOwned>(path: &Path, text: &str) -> Result<Vec<Line<T>>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(raw).map_err(|e| {
            let mut err = json_error(path, 0, e);
            if let Error::Parse { line, .. } = &mut err {
                *line = i + 1;
            }
            err
        })?;
        out.push(Line { line: i + 1, value });
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<Line<T>>> {
    let text = read_to_string(path)?;
    parse_jsonl(path, &text)
}

pub fn to_jsonl<T: Serialize>(rows: &[T]) -> String {
    let mut s = String::new();
    for row in rows {
        s.push_str(&serde_json::to_string(row).expect("serializable row"));
        s.push('\n');
    }
    s
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_string(path, &to_jsonl(rows))
}

/// Resolves `rel` against the directory containing `base`.
pub fn sibling(base: &Path, rel: &Path) -> PathBuf {
    if rel.is_absolute() {
        return rel.to_path_buf();
    }
    base.parent().unwrap_or_else(|| Path::new(".")).join(rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Deserialize)]
    #[allow(dead_code)]
    struct Row {
        id: String,
        vector: Vec<f64>,
    }

    #[test]
    fn jsonl_error_names_line_and_field() {
        let text = "{\"id\":\"a\",\"vector\":[1]}\n\n{\"id\":\"b\"}\n";
        let err = parse_jsonl::<Row>(Path::new("x.jsonl"), text).unwrap_err();
        match err {
            Error::Parse { line, field, .. } => {
                assert_eq!(line, 3);
                assert_eq!(field, "vector");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_input_error() {
        let err = read_to_string(Path::new("/nonexistent/file")).unwrap_err();
        assert!(err.is_input_error());
        assert!(err.to_string().contains("/nonexistent/file"));
    }
}
