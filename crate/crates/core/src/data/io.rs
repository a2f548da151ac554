//! One JSON object per line: the header first, then one sample per line.
//! Floats use the shortest representation that parses back to the same
//! bits, so `load(save(d)) == d` exactly.

use std::fs;
use std::path::Path;

use super::{DatasetFile, DatasetHeader};
use crate::encoder::SampleRecord;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub fn to_jsonl(dataset: &DatasetFile) -> String {
    let mut out = serde_json::to_string(dataset.header()).expect("header serializes");
    out.push('\n');
    for r in dataset.records() {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn save(dataset: &DatasetFile, path: &Path) -> Result<()> {
    fs::write(path, to_jsonl(dataset)).map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub fn load(path: &Path) -> Result<DatasetFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, first) = lines
        .next()
        .ok_or_else(|| parse_error(path, 1, "empty file, expected a header line"))?;
    let raw: serde_json::Value =
        serde_json::from_str(first).map_err(|e| parse_error(path, 1, format!("header: {e}")))?;
    let version = raw
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| parse_error(path, 1, "header has no schema_version"))?;
    if version != u64::from(SCHEMA_VERSION) {
        return Err(Error::SchemaVersion {
            path: path.to_path_buf(),
            found: version.try_into().unwrap_or(u32::MAX),
            expected: SCHEMA_VERSION,
        });
    }
    let header: DatasetHeader =
        serde_json::from_value(raw).map_err(|e| parse_error(path, 1, format!("header: {e}")))?;
    let mut records = Vec::with_capacity(header.counts.total());
    let mut last_good = 1;
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let r: SampleRecord = serde_json::from_str(line)
            .map_err(|e| parse_error(path, n, format!("{e} (last good line {last_good})")))?;
        records.push(r);
        last_good = n;
    }
    let expected = header.counts.total();
    if records.len() != expected {
        return Err(parse_error(
            path,
            last_good,
            format!(
                "header declares {expected} records but the file ends after {} (last good line {last_good})",
                records.len()
            ),
        ));
    }
    DatasetFile::new(header, records).map_err(|e| parse_error(path, last_good, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, DomainCounts, GeneratorConfig, SplitCounts};

    fn tiny() -> DatasetFile {
        let counts = SplitCounts {
            train: 6,
            val: 2,
            test: 2,
        };
        generate_synthetic(&GeneratorConfig {
            source: counts,
            target: counts,
            ..GeneratorConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let d = tiny();
        save(&d, &p).unwrap();
        let back = load(&p).unwrap();
        assert_eq!(back, d);
        for (a, b) in back.records().iter().zip(d.records()) {
            for (x, y) in a.inst.iter().zip(&b.inst) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn truncated_file_names_last_good_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let text = to_jsonl(&tiny());
        let cut = text.len() - 40;
        fs::write(&p, &text[..cut]).unwrap();
        let err = load(&p).unwrap_err().to_string();
        assert!(err.contains("line 21"), "{err}");
        assert!(err.contains("last good line 20"), "{err}");
    }

    #[test]
    fn empty_record_list_loads() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let header = DatasetHeader {
            schema_version: SCHEMA_VERSION,
            d_inst: 3,
            d_vis: 2,
            n_det: 1,
            counts: DomainCounts::default(),
            generator: None,
            probe: None,
        };
        let d = DatasetFile::new(header, Vec::new()).unwrap();
        save(&d, &p).unwrap();
        assert!(load(&p).unwrap().is_empty());
    }

    #[test]
    fn schema_version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let text = to_jsonl(&tiny()).replacen("\"schema_version\":1", "\"schema_version\":9", 1);
        fs::write(&p, text).unwrap();
        assert!(matches!(load(&p), Err(Error::SchemaVersion { found: 9, .. })));
    }
}
