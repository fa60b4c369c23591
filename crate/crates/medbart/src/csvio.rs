//! CSV ingestion and emission of daily time-series datasets.
//!
//! One format: comma-separated with a header row, ISO-8601 dates, '.'
//! decimal point, UTF-8. Column names are remappable through the config so
//! arbitrary upstream headers work.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use medbart_core::data::{Date, DayRecord, TimeSeriesDataset};
use medbart_core::Error as CoreError;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

/// Input column mapping; fields default to the canonical names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnSchema {
    pub date: String,
    pub y: String,
    pub x: String,
    pub m: String,
    pub humidity: String,
    /// Optional holiday indicator column (0/1 or true/false); absent means
    /// all-false unless a holiday date list is supplied.
    pub holiday: Option<String>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        ColumnSchema {
            date: "date".into(),
            y: "y".into(),
            x: "x".into(),
            m: "m".into(),
            humidity: "humidity".into(),
            holiday: None,
        }
    }
}

pub fn parse_iso_date(s: &str) -> Option<Date> {
    let mut parts = s.split('-');
    let year: i32 = parts.next()?.parse().ok()?;
    let month: u32 = parts.next()?.parse().ok()?;
    let day: u32 = parts.next()?.parse().ok()?;
    if parts.next().is_some() {
        return None;
    }
    Date::checked_new(year, month, day)
}

/// Holiday date list: one ISO date per line, `#` comments and blank lines
/// ignored.
pub fn load_holiday_list(path: &Path) -> AppResult<BTreeSet<Date>> {
    if !path.exists() {
        return Err(AppError::io_not_found(path));
    }
    let text = fs::read_to_string(path)?;
    let mut out = BTreeSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let date = parse_iso_date(line).ok_or_else(|| {
            AppError::new(
                "data.parse",
                2,
                format!("bad date `{line}` at line {} of {}", lineno + 1, path.display()),
            )
        })?;
        out.insert(date);
    }
    Ok(out)
}

/// Parse errors cite 1-based data rows (the first row after the header is
/// row 1).
fn parse_error(row_idx: usize, column: &str, message: impl Into<String>) -> CoreError {
    CoreError::Parse {
        row: row_idx + 1,
        column: column.to_string(),
        message: message.into(),
    }
}

/// Load, derive calendar features, and sort a daily dataset.
pub fn load_dataset(
    path: &Path,
    schema: &ColumnSchema,
    holidays: Option<&BTreeSet<Date>>,
) -> AppResult<TimeSeriesDataset> {
    if !path.exists() {
        return Err(AppError::io_not_found(path));
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> AppResult<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| AppError::from(CoreError::Schema(name.to_string())))
    };
    let date_i = col(&schema.date)?;
    let y_i = col(&schema.y)?;
    let x_i = col(&schema.x)?;
    let m_i = col(&schema.m)?;
    let hum_i = col(&schema.humidity)?;
    // An explicit mapping makes the column required; otherwise a column
    // literally named "holiday" is picked up when present.
    let holiday_i = match &schema.holiday {
        Some(name) => Some(col(name)?),
        None => headers.iter().position(|h| h == "holiday"),
    };
    let holiday_name = schema.holiday.clone().unwrap_or_else(|| "holiday".into());

    let mut rows = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let field = |i: usize, name: &str| -> Result<String, CoreError> {
            record
                .get(i)
                .map(str::to_string)
                .ok_or_else(|| parse_error(row_idx, name, "missing cell"))
        };
        let date_s = field(date_i, &schema.date)?;
        let date = parse_iso_date(&date_s)
            .ok_or_else(|| parse_error(row_idx, &schema.date, format!("bad date `{date_s}`")))?;
        let y: i64 = field(y_i, &schema.y)?
            .parse()
            .map_err(|_| parse_error(row_idx, &schema.y, "not an integer"))?;
        let parse_f = |i: usize, name: &str| -> Result<f64, CoreError> {
            field(i, name)?
                .parse::<f64>()
                .map_err(|_| parse_error(row_idx, name, "not a number"))
        };
        let x = parse_f(x_i, &schema.x)?;
        let m = parse_f(m_i, &schema.m)?;
        let humidity = parse_f(hum_i, &schema.humidity)?;
        let holiday = match holiday_i {
            Some(i) => {
                let raw = field(i, &holiday_name)?;
                match raw.as_str() {
                    "1" | "true" | "TRUE" | "True" => true,
                    "0" | "false" | "FALSE" | "False" | "" => false,
                    other => {
                        return Err(parse_error(
                            row_idx,
                            &holiday_name,
                            format!("bad holiday flag `{other}`"),
                        )
                        .into())
                    }
                }
            }
            None => holidays.map(|set| set.contains(&date)).unwrap_or(false),
        };
        rows.push(DayRecord::new(date, y, x, m, humidity, holiday));
    }
    Ok(TimeSeriesDataset::from_rows(rows)?)
}

/// Emit a dataset with the canonical header
/// `date,y,x,m,humidity,holiday`.
pub fn write_dataset(ds: &TimeSeriesDataset, path: &Path) -> AppResult<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["date", "y", "x", "m", "humidity", "holiday"])?;
    for r in &ds.rows {
        writer.write_record([
            r.date.to_string(),
            r.y.to_string(),
            format!("{}", r.x),
            format!("{}", r.m),
            format!("{}", r.humidity),
            if r.holiday { "1".into() } else { "0".to_string() },
        ])?;
    }
    writer.flush().map_err(AppError::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use medbart_core::data::{synthesize_dataset, SynthParams};
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn loads_three_rows_in_date_order() {
        let f = write_tmp(
            "date,y,x,m,humidity\n\
             2005-05-01,10,20.5,0.04,9.1\n\
             2005-05-02,12,21.0,0.05,9.0\n\
             2005-05-03,11,22.5,0.045,8.8\n",
        );
        let ds = load_dataset(f.path(), &ColumnSchema::default(), None).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.rows[0].date, Date::new(2005, 5, 1));
        assert_eq!(ds.rows[0].doy, 121);
        assert!(!ds.rows[0].holiday);
    }

    #[test]
    fn sorts_out_of_order_dates() {
        let f = write_tmp(
            "date,y,x,m,humidity\n\
             2005-05-03,11,22.5,0.045,8.8\n\
             2005-05-01,10,20.5,0.04,9.1\n\
             2005-05-02,12,21.0,0.05,9.0\n",
        );
        let ds = load_dataset(f.path(), &ColumnSchema::default(), None).unwrap();
        let days: Vec<u32> = ds.rows.iter().map(|r| r.date.day).collect();
        assert_eq!(days, vec![1, 2, 3]);
    }

    #[test]
    fn parse_error_cites_row_and_column() {
        let f = write_tmp(
            "date,y,x,m,humidity\n\
             2005-05-01,10,20.5,0.04,9.1\n\
             2005-05-02,abc,21.0,0.05,9.0\n",
        );
        let err = load_dataset(f.path(), &ColumnSchema::default(), None).unwrap_err();
        assert_eq!(err.kind, "data.parse");
        assert!(err.message.contains("row 2"), "{}", err.message);
        assert!(err.message.contains("`y`"), "{}", err.message);
    }

    #[test]
    fn missing_column_is_schema_error() {
        let f = write_tmp("date,y,x,humidity\n2005-05-01,10,20.5,9.1\n");
        let err = load_dataset(f.path(), &ColumnSchema::default(), None).unwrap_err();
        assert_eq!(err.kind, "data.schema");
        assert!(err.message.contains('m'));
    }

    #[test]
    fn duplicate_dates_rejected() {
        let f = write_tmp(
            "date,y,x,m,humidity\n\
             2005-05-01,10,20.5,0.04,9.1\n\
             2005-05-01,12,21.0,0.05,9.0\n",
        );
        let err = load_dataset(f.path(), &ColumnSchema::default(), None).unwrap_err();
        assert_eq!(err.kind, "data.validation");
    }

    #[test]
    fn schema_remapping_and_holiday_column() {
        let f = write_tmp(
            "DATUM,VISITS,TMAX,O3,SH,HOL\n\
             2005-05-01,10,20.5,0.04,9.1,1\n\
             2005-05-02,12,21.0,0.05,9.0,0\n",
        );
        let schema = ColumnSchema {
            date: "DATUM".into(),
            y: "VISITS".into(),
            x: "TMAX".into(),
            m: "O3".into(),
            humidity: "SH".into(),
            holiday: Some("HOL".into()),
        };
        let ds = load_dataset(f.path(), &schema, None).unwrap();
        assert!(ds.rows[0].holiday);
        assert!(!ds.rows[1].holiday);
    }

    #[test]
    fn holiday_list_applies_when_no_column() {
        let f = write_tmp(
            "date,y,x,m,humidity\n\
             2005-07-04,10,20.5,0.04,9.1\n\
             2005-07-05,12,21.0,0.05,9.0\n",
        );
        let hol = write_tmp("# federal holidays\n2005-07-04\n");
        let set = load_holiday_list(hol.path()).unwrap();
        let ds = load_dataset(f.path(), &ColumnSchema::default(), Some(&set)).unwrap();
        assert!(ds.rows[0].holiday);
        assert!(!ds.rows[1].holiday);
    }

    #[test]
    fn missing_file_reports_not_found() {
        let err = load_dataset(
            Path::new("/nonexistent/file.csv"),
            &ColumnSchema::default(),
            None,
        )
        .unwrap_err();
        assert_eq!(err.kind, "io.not_found");
        assert_eq!(err.exit_code, 2);
    }

    /// Round trip: write then load restores the dataset exactly.
    #[test]
    fn write_load_roundtrip() {
        let ds = synthesize_dataset(368, 5, &SynthParams::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        write_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path, &ColumnSchema::default(), None).unwrap();
        assert_eq!(ds, back);
    }
}

