//! `report.json` (deterministic, merged across commands), `timings.json` (wall clock)
//! and tab-separated plot data.

use std::fmt::Display;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const REPORT_FILE: &str = "report.json";
pub const TIMINGS_FILE: &str = "timings.json";

/// Replaces `section` in the JSON object stored at `path`, creating the file if needed.
/// Keys are kept sorted so the bytes depend only on the content.
pub fn merge_section(path: &Path, section: &str, value: &impl Serialize) -> Result<()> {
    let mut root = match fs::read(path) {
        Ok(bytes) => match serde_json::from_slice::<Value>(&bytes)? {
            Value::Object(map) => map,
            _ => return Err(Error::Corruption(format!("{} is not a JSON object", path.display()))),
        },
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Map::new(),
        Err(e) => return Err(Error::io(path, e)),
    };
    root.insert(section.to_string(), serde_json::to_value(value)?);
    write_json(path, &Value::Object(root))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Header line plus one line per row; floats use the shortest round-trip form.
pub struct Tsv {
    text: String,
}

impl Tsv {
    pub fn new(columns: &[&str]) -> Self {
        Self { text: columns.join("\t") + "\n" }
    }

    pub fn row(&mut self, cells: &[&dyn Display]) {
        let line: Vec<String> = cells.iter().map(|c| c.to_string()).collect();
        self.text.push_str(&line.join("\t"));
        self.text.push('\n');
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, &self.text).map_err(|e| Error::io(path, e))
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_merge_in_sorted_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        merge_section(&p, "zeta", &1).unwrap();
        merge_section(&p, "alpha", &vec![0.1, 2.5e-300]).unwrap();
        merge_section(&p, "zeta", &2).unwrap();
        let v: Value = read_json(&p).unwrap();
        assert_eq!(v["zeta"], 2);
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.find("alpha").unwrap() < text.find("zeta").unwrap());
        assert!(text.contains("2.5e-300"));
    }

    #[test]
    fn tsv_rows() {
        let mut t = Tsv::new(&["x", "label"]);
        t.row(&[&0.1, &3]);
        assert_eq!(t.as_str(), "x\tlabel\n0.1\t3\n");
    }
}
