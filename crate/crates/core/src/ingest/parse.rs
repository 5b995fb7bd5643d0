use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use rayon::prelude::*;

use super::{
    item_column, AcquisitionEvent, Activity, DatabasePaths, Demographic, QuestionnaireTable,
    RawDatabase, RowReject, Status, UserProfile, DEMOGRAPHICS_HEADER,
};
use crate::error::{Error, Result};

const TIMESTAMP_FORMATS: [&str; 4] = [
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%dT%H:%M:%S%.f",
];

/// Parses a date or date-time. Only the calendar date is used downstream.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    for fmt in TIMESTAMP_FORMATS {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(r)
}

fn row_ref(file: &str, rec: &csv::StringRecord) -> String {
    let line = rec.position().map(|p| p.line()).unwrap_or(0);
    format!("{file}:{line}")
}

fn find_column(header: &csv::StringRecord, name: &str) -> Option<usize> {
    header.iter().position(|h| h.eq_ignore_ascii_case(name))
}

fn require_column(header: &csv::StringRecord, file: &str, name: &str) -> Result<usize> {
    find_column(header, name).ok_or_else(|| Error::MissingColumn {
        file: file.to_string(),
        column: name.to_string(),
    })
}

/// Output of parsing one acquisition table.
#[derive(Debug, Default)]
pub struct AcquisitionTable {
    pub events: Vec<AcquisitionEvent>,
    pub rejects: Vec<RowReject>,
    pub warnings: Vec<String>,
}

/// Parses one acquisition table whose rows all belong to `activity`.
pub fn parse_acquisitions<R: Read>(
    input: R,
    file: &str,
    activity: Activity,
) -> Result<AcquisitionTable> {
    let mut rdr = reader(input);
    let header = rdr.headers()?.clone();
    let user_col = require_column(&header, file, "user_id")?;
    let ts_col = require_column(&header, file, "timestamp")?;
    let activity_col = find_column(&header, "activity");
    let mut out = AcquisitionTable::default();
    for (i, h) in header.iter().enumerate() {
        if i != user_col && i != ts_col && Some(i) != activity_col {
            let msg = format!("{file}: ignoring extra column `{h}`");
            log::warn!("{msg}");
            out.warnings.push(msg);
        }
    }
    for rec in rdr.records() {
        let rec = rec?;
        let row = row_ref(file, &rec);
        if rec.len() != header.len() {
            out.rejects.push(RowReject {
                row,
                reason: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
            continue;
        }
        if let Some(col) = activity_col {
            match Activity::parse(&rec[col]) {
                None => {
                    out.rejects.push(RowReject { row, reason: "unknown activity".into() });
                    continue;
                }
                Some(a) if a != activity => {
                    out.rejects.push(RowReject {
                        row,
                        reason: format!("activity `{}` does not match table {activity}", &rec[col]),
                    });
                    continue;
                }
                Some(_) => {}
            }
        }
        let user_id = &rec[user_col];
        if user_id.is_empty() {
            out.rejects.push(RowReject { row, reason: "missing user_id".into() });
            continue;
        }
        let Some(timestamp) = parse_timestamp(&rec[ts_col]) else {
            out.rejects.push(RowReject { row, reason: "unparseable timestamp".into() });
            continue;
        };
        out.events.push(AcquisitionEvent {
            user_id: user_id.to_string(),
            activity,
            timestamp,
        });
    }
    Ok(out)
}

fn parse_optional_int(s: &str) -> std::result::Result<Option<i32>, ()> {
    if s.is_empty() {
        return Ok(None);
    }
    if let Ok(v) = s.parse::<i32>() {
        return Ok(Some(v));
    }
    // tolerate integral floats such as "3.0"
    match s.parse::<f64>() {
        Ok(f) if f.fract() == 0.0 && f.abs() < 1e9 => Ok(Some(f as i32)),
        _ => Err(()),
    }
}

fn check_header(header: &csv::StringRecord, file: &str, expected: &[String]) -> Result<Vec<usize>> {
    for h in header.iter() {
        if !expected.iter().any(|e| e.eq_ignore_ascii_case(h)) {
            return Err(Error::UnknownColumn {
                file: file.to_string(),
                column: h.to_string(),
            });
        }
    }
    expected
        .iter()
        .map(|e| require_column(header, file, e))
        .collect()
}

fn parse_demographics<R: Read>(
    input: R,
    file: &str,
    profiles: &mut BTreeMap<String, UserProfile>,
    rejects: &mut Vec<RowReject>,
) -> Result<()> {
    let mut rdr = reader(input);
    let header = rdr.headers()?.clone();
    let expected: Vec<String> = DEMOGRAPHICS_HEADER.iter().map(|s| s.to_string()).collect();
    let cols = check_header(&header, file, &expected)?;
    'rows: for rec in rdr.records() {
        let rec = rec?;
        let row = row_ref(file, &rec);
        if rec.len() != header.len() {
            rejects.push(RowReject {
                row,
                reason: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
            continue;
        }
        let user_id = &rec[cols[0]];
        if user_id.is_empty() {
            rejects.push(RowReject { row, reason: "missing user_id".into() });
            continue;
        }
        if profiles.contains_key(user_id) {
            rejects.push(RowReject { row, reason: "duplicate user".into() });
            continue;
        }
        let mut profile = UserProfile::new(user_id, Status::parse(&rec[cols[1]]));
        for field in Demographic::ALL {
            let raw = &rec[cols[2 + field.index()]];
            let Ok(value) = parse_optional_int(raw) else {
                rejects.push(RowReject {
                    row,
                    reason: format!("{} is not an integer", field.column()),
                });
                continue 'rows;
            };
            if let (Some(v), Some((lo, hi))) = (value, field.range()) {
                if v < lo || v > hi {
                    rejects.push(RowReject {
                        row,
                        reason: format!("{} out of range", field.column()),
                    });
                    continue 'rows;
                }
            }
            profile.demographics[field.index()] = value;
        }
        profiles.insert(user_id.to_string(), profile);
    }
    Ok(())
}

type QuestionnaireRows = Vec<(String, String, Vec<Option<i32>>)>;

fn parse_questionnaire<R: Read>(
    input: R,
    file: &str,
    table: QuestionnaireTable,
    rejects: &mut Vec<RowReject>,
) -> Result<QuestionnaireRows> {
    let mut rdr = reader(input);
    let header = rdr.headers()?.clone();
    let mut expected = vec!["user_id".to_string()];
    expected.extend((0..table.item_count()).map(item_column));
    let cols = check_header(&header, file, &expected)?;
    let mut rows = Vec::new();
    'rows: for rec in rdr.records() {
        let rec = rec?;
        let row = row_ref(file, &rec);
        if rec.len() != header.len() {
            rejects.push(RowReject {
                row,
                reason: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
            continue;
        }
        let user_id = rec[cols[0]].to_string();
        if user_id.is_empty() {
            rejects.push(RowReject { row, reason: "missing user_id".into() });
            continue;
        }
        let mut items = Vec::with_capacity(table.item_count());
        for &c in &cols[1..] {
            match parse_optional_int(&rec[c]) {
                Ok(v) => items.push(v),
                Err(()) => {
                    rejects.push(RowReject {
                        row,
                        reason: format!("non-integer item value `{}`", &rec[c]),
                    });
                    continue 'rows;
                }
            }
        }
        rows.push((row, user_id, items));
    }
    Ok(rows)
}

/// Reads every table. Malformed rows land in `rejects`; schema problems and
/// missing files are hard errors.
pub fn parse_database(paths: &DatabasePaths) -> Result<RawDatabase> {
    let acquisition_tables: Vec<AcquisitionTable> = paths
        .acquisitions
        .par_iter()
        .map(|(&activity, path)| parse_acquisitions(open(path)?, &file_name(path), activity))
        .collect::<Result<_>>()?;

    let mut db = RawDatabase::default();
    for t in acquisition_tables {
        db.events.extend(t.events);
        db.rejects.extend(t.rejects);
        db.warnings.extend(t.warnings);
    }
    db.sort_events();

    parse_demographics(
        open(&paths.demographics)?,
        &file_name(&paths.demographics),
        &mut db.profiles,
        &mut db.rejects,
    )?;

    for (&table, path) in &paths.questionnaires {
        let file = file_name(path);
        let rows = parse_questionnaire(open(path)?, &file, table, &mut db.rejects)?;
        let mut seen = std::collections::BTreeSet::new();
        for (row, user_id, items) in rows {
            if !seen.insert(user_id.clone()) {
                db.rejects.push(RowReject { row, reason: "duplicate user".into() });
                continue;
            }
            match db.profiles.get_mut(&user_id) {
                Some(p) => {
                    p.responses.insert(table, items);
                }
                None => db.rejects.push(RowReject { row, reason: "unknown user".into() }),
            }
        }
    }
    Ok(db)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_row_acquisition_file() {
        let csv = "user_id,timestamp\nU1,2019-01-01 10:00:00\nU1,2019-01-02\nU2,2019-01-03T08:30:00\n";
        let t = parse_acquisitions(csv.as_bytes(), "a.csv", Activity::Physical).unwrap();
        assert_eq!(t.events.len(), 3);
        assert!(t.rejects.is_empty());
        assert_eq!(t.events[2].date(), NaiveDate::from_ymd_opt(2019, 1, 3).unwrap());
    }

    #[test]
    fn unknown_activity_is_rejected() {
        let csv = "user_id,activity,timestamp\nU1,Swimming,2019-01-01\nU1,physical,2019-01-02\n";
        let t = parse_acquisitions(csv.as_bytes(), "a.csv", Activity::Physical).unwrap();
        assert_eq!(t.events.len(), 1);
        assert_eq!(t.rejects.len(), 1);
        assert_eq!(t.rejects[0].reason, "unknown activity");
        assert_eq!(t.rejects[0].row, "a.csv:2");
    }

    #[test]
    fn empty_file_with_header() {
        let t = parse_acquisitions("user_id,timestamp\n".as_bytes(), "a.csv", Activity::Mindfulness)
            .unwrap();
        assert!(t.events.is_empty());
        assert!(t.rejects.is_empty());
    }

    #[test]
    fn bad_timestamp_is_row_reject() {
        let csv = "user_id,timestamp\nU1,yesterday\n";
        let t = parse_acquisitions(csv.as_bytes(), "a.csv", Activity::Physical).unwrap();
        assert_eq!(t.rejects[0].reason, "unparseable timestamp");
    }

    #[test]
    fn extra_acquisition_columns_warn() {
        let csv = "user_id,timestamp,device\nU1,2019-01-01,phone\n";
        let t = parse_acquisitions(csv.as_bytes(), "a.csv", Activity::Physical).unwrap();
        assert_eq!(t.events.len(), 1);
        assert_eq!(t.warnings.len(), 1);
    }

    #[test]
    fn missing_timestamp_column_is_error() {
        let err = parse_acquisitions("user_id\nU1\n".as_bytes(), "a.csv", Activity::Physical)
            .unwrap_err();
        assert!(matches!(err, Error::MissingColumn { .. }));
    }

    #[test]
    fn demographics_unknown_column_is_error() {
        let csv = "user_id,status,birth_year,education,technology,living_environment,living_conditions,living_status,use_case,shoe_size\n";
        let mut profiles = BTreeMap::new();
        let mut rejects = Vec::new();
        let err = parse_demographics(csv.as_bytes(), "d.csv", &mut profiles, &mut rejects)
            .unwrap_err();
        assert!(matches!(err, Error::UnknownColumn { ref column, .. } if column == "shoe_size"));
    }

    #[test]
    fn demographics_range_checks() {
        let csv = "user_id,status,birth_year,education,technology,living_environment,living_conditions,living_status,use_case\n\
                   U1,Finished,1940,3,2,1,1,2,5\n\
                   U2,Finished,1940,9,2,1,1,2,5\n\
                   U3,Unknown,,,,,,,\n\
                   U1,Finished,1940,3,2,1,1,2,5\n";
        let mut profiles = BTreeMap::new();
        let mut rejects = Vec::new();
        parse_demographics(csv.as_bytes(), "d.csv", &mut profiles, &mut rejects).unwrap();
        assert_eq!(profiles.len(), 2);
        assert_eq!(profiles["U3"].status, Status::Other("Unknown".into()));
        assert_eq!(profiles["U1"].demographic(Demographic::UseCase), Some(5));
        let reasons: Vec<_> = rejects.iter().map(|r| r.reason.as_str()).collect();
        assert_eq!(reasons, ["education out of range", "duplicate user"]);
    }

    #[test]
    fn questionnaire_nulls_and_item_count() {
        let table = QuestionnaireTable::ALL[0];
        let csv = "user_id,Q1,Q2,Q3,Q4,Q5,Q6\nU1,1,,3,4,5,\n";
        let mut rejects = Vec::new();
        let rows = parse_questionnaire(csv.as_bytes(), "spq_1.csv", table, &mut rejects).unwrap();
        assert_eq!(rows[0].2, vec![Some(1), None, Some(3), Some(4), Some(5), None]);

        let short = "user_id,Q1,Q2\n";
        let err = parse_questionnaire(short.as_bytes(), "spq_1.csv", table, &mut rejects).unwrap_err();
        assert!(matches!(err, Error::MissingColumn { .. }));
    }

    #[test]
    fn missing_file_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = parse_database(&DatabasePaths::in_dir(dir.path())).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }
}
