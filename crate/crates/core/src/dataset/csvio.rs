//! CSV ingestion and the canonical writer.
//!
//! Layout: optional `# key=value` metadata lines, a header row containing
//! `build`, `test`, `verdict`, `exec_time` and at least one feature column,
//! then one row per test case execution. Feature columns keep header order.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{BuildId, Dataset, FeatureSchema, TestCaseRecord, Verdict};
use crate::error::{Error, Result};

const REQUIRED: [&str; 4] = ["build", "test", "verdict", "exec_time"];
const MISSING_TOKENS: [&str; 5] = ["", "na", "nan", "null", "?"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Replace the cell with 0 and record it in [`Dataset::imputed`].
    #[default]
    ImputeZero,
    Reject,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    pub missing: MissingPolicy,
}

/// A feature cell that was missing or non-numeric and imputed with 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImputedCell {
    pub line: u64,
    pub build_id: BuildId,
    pub test_id: String,
    pub feature: String,
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

pub fn parse_csv<R: Read>(mut source: R, options: IngestOptions) -> Result<Dataset> {
    let mut text = String::new();
    source
        .read_to_string(&mut text)
        .map_err(|e| parse_err(0, format!("input is not readable UTF-8: {e}")))?;

    let mut metadata = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some(comment) = line.strip_prefix('#') else {
            break;
        };
        if let Some((k, v)) = comment.split_once('=') {
            metadata.insert(k.trim().to_string(), v.trim().to_string());
        }
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let header = reader.headers()?.clone();
    let header_line = reader.position().line();
    let mut cols = BTreeMap::new();
    for (i, name) in header.iter().enumerate() {
        if REQUIRED.contains(&name) && cols.insert(name, i).is_some() {
            return Err(parse_err(header_line, format!("duplicate column {name:?}")));
        }
    }
    for name in REQUIRED {
        if !cols.contains_key(name) {
            return Err(parse_err(header_line, format!("missing required column {name:?}")));
        }
    }
    let feature_cols: Vec<usize> = (0..header.len())
        .filter(|i| !REQUIRED.contains(&&header[*i]))
        .collect();
    if feature_cols.is_empty() {
        return Err(parse_err(header_line, "no feature columns"));
    }
    let schema = FeatureSchema::new(feature_cols.iter().map(|&i| header[i].to_string()).collect())
        .map_err(|e| parse_err(header_line, e.to_string()))?;

    let mut records = Vec::new();
    let mut imputed = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != header.len() {
            return Err(parse_err(
                line,
                format!("expected {} columns, found {}", header.len(), row.len()),
            ));
        }
        let build_id: BuildId = row[cols["build"]]
            .parse()
            .map_err(|_| parse_err(line, format!("bad build id {:?}", &row[cols["build"]])))?;
        let test_id = row[cols["test"]].to_string();
        if test_id.is_empty() {
            return Err(parse_err(line, "empty test id"));
        }
        let verdict: Verdict = row[cols["verdict"]]
            .parse()
            .map_err(|e: Error| parse_err(line, e.to_string()))?;
        let execution_time: f64 = row[cols["exec_time"]]
            .parse()
            .ok()
            .filter(|t: &f64| t.is_finite() && *t >= 0.0)
            .ok_or_else(|| {
                parse_err(line, format!("bad execution time {:?}", &row[cols["exec_time"]]))
            })?;
        let mut features = Vec::with_capacity(feature_cols.len());
        for (f, &c) in feature_cols.iter().enumerate() {
            let cell = &row[c];
            match cell.parse::<f64>().ok().filter(|v| v.is_finite()) {
                Some(v) => features.push(v),
                None => {
                    let token = cell.to_ascii_lowercase();
                    if options.missing == MissingPolicy::Reject {
                        let what = if MISSING_TOKENS.contains(&token.as_str()) {
                            "missing"
                        } else {
                            "non-numeric"
                        };
                        return Err(parse_err(
                            line,
                            format!("{what} value {cell:?} in feature {:?}", schema.name(f)),
                        ));
                    }
                    imputed.push(ImputedCell {
                        line,
                        build_id,
                        test_id: test_id.clone(),
                        feature: schema.name(f).to_string(),
                    });
                    features.push(0.0);
                }
            }
        }
        records.push(TestCaseRecord {
            build_id,
            test_id,
            verdict,
            execution_time,
            features,
        });
    }
    if !imputed.is_empty() {
        log::warn!("imputed {} missing feature value(s) with 0", imputed.len());
    }
    let mut ds = Dataset::from_records(schema, records)?;
    ds.metadata = metadata;
    ds.imputed = imputed;
    Ok(ds)
}

/// Writes the canonical form: metadata comments, header, rows in build order.
pub fn emit_csv<W: Write>(ds: &Dataset, mut out: W) -> Result<()> {
    let io = |e| Error::io("<csv output>", e);
    for (k, v) in &ds.metadata {
        writeln!(out, "# {k}={v}").map_err(io)?;
    }
    let mut w = csv::WriterBuilder::new().from_writer(out);
    let mut header: Vec<&str> = REQUIRED.to_vec();
    header.extend(ds.schema.names().iter().map(String::as_str));
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for b in &ds.builds {
        for r in &b.records {
            row.clear();
            row.push(r.build_id.to_string());
            row.push(r.test_id.clone());
            row.push(r.verdict.to_string());
            row.push(r.execution_time.to_string());
            row.extend(r.features.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticConfig};

    fn parse(s: &str) -> Result<Dataset> {
        parse_csv(s.as_bytes(), IngestOptions::default())
    }

    #[test]
    fn small_file() {
        let ds = parse("build,test,verdict,exec_time,a,b\n1,x,failed,1.5,0.1,2\n1,y,passed,2,0,0\n1,z,passed,3,1,1\n").unwrap();
        assert_eq!((ds.m(), ds.n_records(), ds.p()), (1, 3, 2));
        assert_eq!(ds.schema.names(), &["a", "b"]);
        assert_eq!(ds.builds[0].records[0].features, vec![0.1, 2.0]);
    }

    #[test]
    fn reorders_builds_and_columns_anywhere() {
        let ds = parse("f1,build,verdict,test,exec_time\n0,5,pass,a,1\n0,2,pass,a,1\n0,9,fail,a,1\n").unwrap();
        let ids: Vec<_> = ds.builds.iter().map(|b| b.build_id).collect();
        assert_eq!(ids, vec![2, 5, 9]);
        assert_eq!(ds.schema.names(), &["f1"]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse("build,test,verdict,exec_time,a\n1,x,failed,1,0\n1,y,passed,1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = parse("build,test,verdict,exec_time,a\n1,x,skipped,1,0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(parse("build,test,verdict,a\n1,x,failed,0\n").is_err());
        assert!(parse("build,test,verdict,exec_time\n1,x,failed,0\n").is_err());
        assert!(parse("build,test,verdict,exec_time,a\n1,x,failed,-2,0\n").is_err());
    }

    #[test]
    fn missing_values() {
        let src = "build,test,verdict,exec_time,a,b\n1,x,failed,1,,abc\n1,y,passed,1,NA,3\n";
        let ds = parse(src).unwrap();
        assert_eq!(ds.builds[0].records[0].features, vec![0.0, 0.0]);
        assert_eq!(ds.imputed.len(), 3);
        assert_eq!(ds.imputed[0].feature, "a");
        let rejected = parse_csv(
            src.as_bytes(),
            IngestOptions {
                missing: MissingPolicy::Reject,
            },
        );
        assert!(matches!(rejected, Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn round_trip_is_identity() {
        let mut cfg = SyntheticConfig::new(6, 7, 3);
        cfg.exec_prob = 0.8;
        let ds = generate_synthetic(&cfg, 11).unwrap();
        let mut buf = Vec::new();
        emit_csv(&ds, &mut buf).unwrap();
        let back = parse_csv(buf.as_slice(), IngestOptions::default()).unwrap();
        assert_eq!(back, ds);
        let mut again = Vec::new();
        emit_csv(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }
}
