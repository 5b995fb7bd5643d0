use std::fs;
use std::path::Path;

use super::{item_column, Activity, DatabasePaths, QuestionnaireTable, RawDatabase, RowReject, DEMOGRAPHICS_HEADER};
use crate::error::Result;

fn fmt_opt(v: Option<i32>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes every table of `db` under `dir` using the default file names.
/// Output is fully determined by `db` (events already sorted, profiles keyed
/// by user id).
pub fn write_database(db: &RawDatabase, dir: &Path) -> Result<DatabasePaths> {
    fs::create_dir_all(dir)?;
    let paths = DatabasePaths::in_dir(dir);

    for activity in Activity::ALL {
        let mut w = csv::Writer::from_path(&paths.acquisitions[&activity])?;
        w.write_record(["user_id", "timestamp"])?;
        for e in db.events.iter().filter(|e| e.activity == activity) {
            w.write_record([
                e.user_id.as_str(),
                &e.timestamp.format("%Y-%m-%d %H:%M:%S").to_string(),
            ])?;
        }
        w.flush()?;
    }

    let mut w = csv::Writer::from_path(&paths.demographics)?;
    w.write_record(DEMOGRAPHICS_HEADER)?;
    for p in db.profiles.values() {
        let mut rec = vec![p.user_id.clone(), p.status.as_str().to_string()];
        rec.extend(p.demographics.iter().map(|v| fmt_opt(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;

    for table in QuestionnaireTable::ALL {
        let mut w = csv::Writer::from_path(&paths.questionnaires[&table])?;
        let mut header = vec!["user_id".to_string()];
        header.extend((0..table.item_count()).map(item_column));
        w.write_record(&header)?;
        for p in db.profiles.values() {
            let mut rec = vec![p.user_id.clone()];
            rec.extend(p.responses(table).iter().map(|v| fmt_opt(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    Ok(paths)
}

/// Rejects report: `row,reason`.
pub fn write_rejects(rejects: &[RowReject], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row", "reason"])?;
    for r in rejects {
        w.write_record([&r.row, &r.reason])?;
    }
    w.flush()?;
    Ok(())
}
