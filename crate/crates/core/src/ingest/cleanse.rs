use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::RawDatabase;
use crate::error::Result;

/// Users active for fewer days than this (first to last raw acquisition) are removed.
pub const MIN_SPAN_DAYS: i64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalReason {
    InvalidStatus,
    NoAcquisitions,
    ShortSpan,
}

impl RemovalReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RemovalReason::InvalidStatus => "invalid_status",
            RemovalReason::NoAcquisitions => "no_acquisitions",
            RemovalReason::ShortSpan => "short_span",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovedUser {
    pub user_id: String,
    pub reason: RemovalReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanseReport {
    pub input_users: usize,
    pub retained_users: usize,
    pub removed: Vec<RemovedUser>,
    /// Events whose user is not in the socio-demographic table.
    pub orphan_events: usize,
}

impl CleanseReport {
    pub fn count(&self, reason: RemovalReason) -> usize {
        self.removed.iter().filter(|r| r.reason == reason).count()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["user_id", "reason"])?;
        for r in &self.removed {
            w.write_record([r.user_id.as_str(), r.reason.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Drops users with an unrecognised status, with no acquisitions, or whose
/// raw first-to-last acquisition span is under [`MIN_SPAN_DAYS`]. Events of
/// removed or unknown users are dropped too.
pub fn cleanse(db: RawDatabase) -> (RawDatabase, CleanseReport) {
    let mut spans: BTreeMap<&str, (NaiveDate, NaiveDate)> = BTreeMap::new();
    for e in &db.events {
        let d = e.date();
        spans
            .entry(e.user_id.as_str())
            .and_modify(|(lo, hi)| {
                *lo = (*lo).min(d);
                *hi = (*hi).max(d);
            })
            .or_insert((d, d));
    }

    let mut report = CleanseReport {
        input_users: db.profiles.len(),
        ..Default::default()
    };
    let mut retained = BTreeSet::new();
    for (id, profile) in &db.profiles {
        let reason = if !profile.status.is_valid() {
            Some(RemovalReason::InvalidStatus)
        } else {
            match spans.get(id.as_str()) {
                None => Some(RemovalReason::NoAcquisitions),
                Some((first, last)) if (*last - *first).num_days() < MIN_SPAN_DAYS => {
                    Some(RemovalReason::ShortSpan)
                }
                Some(_) => None,
            }
        };
        match reason {
            Some(reason) => report.removed.push(RemovedUser { user_id: id.clone(), reason }),
            None => {
                retained.insert(id.clone());
            }
        }
    }
    report.retained_users = retained.len();
    report.orphan_events = db
        .events
        .iter()
        .filter(|e| !db.profiles.contains_key(&e.user_id))
        .count();

    let RawDatabase { events, profiles, rejects, warnings } = db;
    let events = events.into_iter().filter(|e| retained.contains(&e.user_id)).collect();
    let profiles = profiles.into_iter().filter(|(id, _)| retained.contains(id)).collect();
    (RawDatabase { events, profiles, rejects, warnings }, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{AcquisitionEvent, Activity, Status, UserProfile};

    fn day(offset: i64) -> chrono::NaiveDateTime {
        NaiveDate::from_ymd_opt(2019, 1, 7).unwrap().and_hms_opt(9, 0, 0).unwrap()
            + chrono::Duration::days(offset)
    }

    fn db_with(users: &[(&str, Status, &[i64])]) -> RawDatabase {
        let mut db = RawDatabase::default();
        for (id, status, days) in users {
            db.profiles.insert(id.to_string(), UserProfile::new(*id, status.clone()));
            for &d in *days {
                db.events.push(AcquisitionEvent {
                    user_id: id.to_string(),
                    activity: Activity::BrainGames,
                    timestamp: day(d),
                });
            }
        }
        db.sort_events();
        db
    }

    #[test]
    fn removal_reasons() {
        let db = db_with(&[
            ("a", Status::Other("Unknown".into()), &[0, 100]),
            ("b", Status::Finished, &[0, 41]),
            ("c", Status::Dropout, &[0, 100]),
            ("d", Status::StillUsing, &[]),
            ("e", Status::Finished, &[0, 42]),
        ]);
        let (clean, report) = cleanse(db);
        assert_eq!(report.input_users, 5);
        assert_eq!(report.retained_users, 2);
        let removed: Vec<_> = report.removed.iter().map(|r| (r.user_id.as_str(), r.reason)).collect();
        assert_eq!(
            removed,
            [
                ("a", RemovalReason::InvalidStatus),
                ("b", RemovalReason::ShortSpan),
                ("d", RemovalReason::NoAcquisitions),
            ]
        );
        assert!(clean.profiles.contains_key("c") && clean.profiles.contains_key("e"));
        assert!(clean.events.iter().all(|e| e.user_id == "c" || e.user_id == "e"));
    }

    #[test]
    fn orphan_events_are_dropped() {
        let mut db = db_with(&[("c", Status::Dropout, &[0, 100])]);
        db.events.push(AcquisitionEvent {
            user_id: "ghost".into(),
            activity: Activity::Physical,
            timestamp: day(3),
        });
        let (clean, report) = cleanse(db);
        assert_eq!(report.orphan_events, 1);
        assert_eq!(clean.events.len(), 2);
    }

    #[test]
    fn idempotent_and_counts_add_up() {
        let db = db_with(&[
            ("a", Status::Other("x".into()), &[0]),
            ("b", Status::Finished, &[0, 10, 50]),
            ("c", Status::Dropout, &[5]),
        ]);
        let (once, r1) = cleanse(db);
        assert_eq!(r1.retained_users + r1.removed.len(), r1.input_users);
        let (twice, r2) = cleanse(once.clone());
        assert_eq!(once, twice);
        assert!(r2.removed.is_empty());
    }
}
