use std::fs::File;
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order of the raw check-in format.
pub const COLUMNS: [&str; 6] = [
    "user_id",
    "poi_id",
    "category_id",
    "latitude",
    "longitude",
    "timestamp",
];

/// One raw visit record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckIn {
    pub user_id: String,
    pub poi_id: String,
    pub category_id: String,
    pub lat: f64,
    pub lon: f64,
    /// Local-clock seconds since the epoch.
    pub timestamp: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimestampFormat {
    /// Integer seconds since the epoch.
    #[default]
    Epoch,
    /// A `chrono` strftime pattern, interpreted as local wall-clock time.
    Pattern(String),
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub delimiter: u8,
    pub has_header: bool,
    pub timestamp_format: TimestampFormat,
    /// Added to every parsed timestamp to move it onto the dataset's local clock.
    pub tz_offset_seconds: i64,
    /// Fraction of malformed rows above which loading fails.
    pub max_skip_fraction: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            delimiter: b',',
            has_header: false,
            timestamp_format: TimestampFormat::Epoch,
            tz_offset_seconds: 0,
            max_skip_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowWarning {
    /// 1-based data row number.
    pub row: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub records: Vec<CheckIn>,
    pub warnings: Vec<RowWarning>,
}

pub fn load_checkins(path: impl AsRef<Path>, options: &LoadOptions) -> Result<LoadReport> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkins(file, options).map_err(|e| match e {
        Error::Format { message, .. } => Error::Format {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

pub fn read_checkins<R: std::io::Read>(reader: R, options: &LoadOptions) -> Result<LoadReport> {
    let mut csv = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(options.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut order = [0, 1, 2, 3, 4, 5];
    if options.has_header {
        let header = csv.headers().map_err(|e| format_error(e.to_string()))?.clone();
        for (slot, name) in COLUMNS.iter().enumerate() {
            match header.iter().position(|h| h.eq_ignore_ascii_case(name)) {
                Some(pos) => order[slot] = pos,
                None => {
                    return Err(Error::InvalidInput(format!(
                        "missing column `{name}` in header"
                    )))
                }
            }
        }
    }

    let mut report = LoadReport::default();
    let mut total = 0usize;
    for (i, row) in csv.records().enumerate() {
        let row_no = i + 1;
        let row = match row {
            Ok(row) => row,
            Err(e) => {
                total += 1;
                report.warnings.push(RowWarning {
                    row: row_no,
                    message: e.to_string(),
                });
                continue;
            }
        };
        if row.iter().all(|f| f.is_empty()) {
            continue;
        }
        total += 1;
        let width = order.iter().max().copied().unwrap_or(5) + 1;
        if row.len() < width {
            let missing = COLUMNS[order.iter().position(|&c| c >= row.len()).unwrap_or(5)];
            if total == 1 {
                return Err(Error::InvalidInput(format!(
                    "missing column `{missing}`: first row has {} of {} fields",
                    row.len(),
                    COLUMNS.len()
                )));
            }
            report.warnings.push(RowWarning {
                row: row_no,
                message: format!("missing column `{missing}`"),
            });
            continue;
        }
        match parse_row(&row, &order, options) {
            Ok(c) => report.records.push(c),
            Err(message) => report.warnings.push(RowWarning {
                row: row_no,
                message,
            }),
        }
    }

    for w in &report.warnings {
        log::warn!("skipping row {}: {}", w.row, w.message);
    }
    let skipped = report.warnings.len();
    if total > 0 && skipped as f64 > options.max_skip_fraction * total as f64 {
        return Err(Error::TooManyMalformed { skipped, total });
    }
    Ok(report)
}

fn format_error(message: String) -> Error {
    Error::Format {
        path: Default::default(),
        message,
    }
}

fn parse_row(
    row: &csv::StringRecord,
    order: &[usize; 6],
    options: &LoadOptions,
) -> std::result::Result<CheckIn, String> {
    let field = |slot: usize| row.get(order[slot]).unwrap_or("");
    let lat: f64 = field(3)
        .parse()
        .map_err(|_| format!("unparseable latitude `{}`", field(3)))?;
    let lon: f64 = field(4)
        .parse()
        .map_err(|_| format!("unparseable longitude `{}`", field(4)))?;
    if !(-90.0..=90.0).contains(&lat) {
        return Err(format!("latitude {lat} out of range"));
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err(format!("longitude {lon} out of range"));
    }
    let raw_ts = field(5);
    let timestamp = match &options.timestamp_format {
        TimestampFormat::Epoch => raw_ts
            .parse::<i64>()
            .map_err(|_| format!("unparseable timestamp `{raw_ts}`"))?,
        TimestampFormat::Pattern(p) => NaiveDateTime::parse_from_str(raw_ts, p)
            .map_err(|e| format!("unparseable timestamp `{raw_ts}`: {e}"))?
            .and_utc()
            .timestamp(),
    };
    if timestamp <= 0 {
        return Err(format!("non-positive timestamp {timestamp}"));
    }
    let (user_id, poi_id) = (field(0), field(1));
    if user_id.is_empty() || poi_id.is_empty() {
        return Err("empty user or poi id".to_string());
    }
    Ok(CheckIn {
        user_id: user_id.to_string(),
        poi_id: poi_id.to_string(),
        category_id: field(2).to_string(),
        lat,
        lon,
        timestamp: timestamp + options.tz_offset_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str) -> Result<LoadReport> {
        read_checkins(text.as_bytes(), &LoadOptions::default())
    }

    #[test]
    fn empty_input_is_empty() {
        let r = read("").unwrap();
        assert!(r.records.is_empty());
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn malformed_latitude_is_skipped() {
        let text = "u1,p1,c1,40.7,-73.9,1000\n\
                    u1,p2,c1,north,-73.9,2000\n\
                    u2,p1,c1,40.7,-73.9,3000\n";
        let opts = LoadOptions {
            max_skip_fraction: 0.5,
            ..Default::default()
        };
        let r = read_checkins(text.as_bytes(), &opts).unwrap();
        assert_eq!(r.records.len(), 2);
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.warnings[0].row, 2);
        assert_eq!(r.records[1].user_id, "u2");
    }

    #[test]
    fn too_many_malformed_rows_is_fatal() {
        let text = "u1,p1,c1,40.7,-73.9,1000\nu1,p2,c1,north,-73.9,2000\n";
        assert!(matches!(
            read(text),
            Err(Error::TooManyMalformed {
                skipped: 1,
                total: 2
            })
        ));
    }

    #[test]
    fn missing_column_is_named() {
        let err = read("u1,p1,c1,40.7,-73.9\n").unwrap_err();
        assert!(err.to_string().contains("timestamp"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn header_columns_may_be_reordered() {
        let text = "timestamp\tuser_id\tpoi_id\tcategory_id\tlatitude\tlongitude\n\
                    1000\tu\tp\tc\t1.5\t2.5\n";
        let opts = LoadOptions {
            delimiter: b'\t',
            has_header: true,
            ..Default::default()
        };
        let r = read_checkins(text.as_bytes(), &opts).unwrap();
        assert_eq!(
            r.records,
            vec![CheckIn {
                user_id: "u".into(),
                poi_id: "p".into(),
                category_id: "c".into(),
                lat: 1.5,
                lon: 2.5,
                timestamp: 1000
            }]
        );
    }

    #[test]
    fn header_missing_column() {
        let opts = LoadOptions {
            has_header: true,
            ..Default::default()
        };
        let err = read_checkins("user_id,poi_id,latitude,longitude,timestamp\n".as_bytes(), &opts)
            .unwrap_err();
        assert!(err.to_string().contains("category_id"));
    }

    #[test]
    fn pattern_timestamps_and_offset() {
        let opts = LoadOptions {
            timestamp_format: TimestampFormat::Pattern("%Y-%m-%d %H:%M:%S".into()),
            tz_offset_seconds: -4 * 3600,
            ..Default::default()
        };
        let r = read_checkins("u,p,c,1,2,2012-04-03 18:00:09\n".as_bytes(), &opts).unwrap();
        assert_eq!(r.records[0].timestamp, 1_333_476_009 - 4 * 3600);
    }

    #[test]
    fn out_of_range_coordinates_rejected() {
        let opts = LoadOptions {
            max_skip_fraction: 1.0,
            ..Default::default()
        };
        let r = read_checkins("u,p,c,91,0,10\nu,p,c,0,-181,10\nu,p,c,0,0,0\n".as_bytes(), &opts)
            .unwrap();
        assert!(r.records.is_empty());
        assert_eq!(r.warnings.len(), 3);
    }
}
