//! Half-week sessionization and sliding-window sample extraction.
//!
//! Each week of a user's active period is split into a Monday–Thursday and a
//! Friday–Sunday session. A session's value is the number of distinct
//! activities completed in it, so it lies in `0..=4`. Every run of 15
//! consecutive sessions becomes one sample: the first 12 values are the
//! features and the last 3, binarized, decide the adherence label.

use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{AcquisitionEvent, RawDatabase};

pub const HISTORY_LEN: usize = 12;
pub const FUTURE_LEN: usize = 3;
pub const SPAN_LEN: usize = HISTORY_LEN + FUTURE_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionKind {
    MonThu,
    FriSun,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub start: NaiveDate,
    pub kind: SessionKind,
    pub value: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionSeries {
    pub user_id: String,
    pub sessions: Vec<Session>,
}

impl SessionSeries {
    pub fn values(&self) -> Vec<u8> {
        self.sessions.iter().map(|s| s.value).collect()
    }
}

/// How the last acquisition date is rounded to a Sunday.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LastDateRounding {
    /// Latest Sunday on or before the last date (drops a trailing partial week).
    #[default]
    Previous,
    /// Earliest Sunday on or after the last date.
    Next,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActivePeriod {
    pub monday: NaiveDate,
    pub sunday: NaiveDate,
}

impl ActivePeriod {
    pub fn is_empty(&self) -> bool {
        self.sunday < self.monday
    }

    pub fn weeks(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            ((self.sunday - self.monday).num_days() as usize + 1) / 7
        }
    }
}

fn previous_monday(d: NaiveDate) -> NaiveDate {
    d - Duration::days(i64::from(d.weekday().num_days_from_monday()))
}

fn previous_sunday(d: NaiveDate) -> NaiveDate {
    d - Duration::days(i64::from(d.weekday().num_days_from_sunday()))
}

fn next_sunday(d: NaiveDate) -> NaiveDate {
    match d.weekday() {
        Weekday::Sun => d,
        w => d + Duration::days(7 - i64::from(w.num_days_from_sunday())),
    }
}

/// Rounds `first` back to its Monday and `last` back to its Sunday.
pub fn round_active_period(first: NaiveDate, last: NaiveDate) -> Result<ActivePeriod> {
    round_active_period_with(first, last, LastDateRounding::Previous)
}

pub fn round_active_period_with(
    first: NaiveDate,
    last: NaiveDate,
    rounding: LastDateRounding,
) -> Result<ActivePeriod> {
    if first > last {
        return Err(Error::InvalidInput(format!(
            "first date {first} is after last date {last}"
        )));
    }
    let sunday = match rounding {
        LastDateRounding::Previous => previous_sunday(last),
        LastDateRounding::Next => next_sunday(last),
    };
    Ok(ActivePeriod { monday: previous_monday(first), sunday })
}

/// Two sessions per week of `period`; events outside it are ignored.
pub fn build_sessions<'a, I>(user_id: &str, events: I, period: ActivePeriod) -> SessionSeries
where
    I: IntoIterator<Item = &'a AcquisitionEvent>,
{
    let n = period.weeks() * 2;
    let mut masks = vec![0u8; n];
    for e in events {
        let offset = (e.date() - period.monday).num_days();
        if offset < 0 {
            continue;
        }
        let (week, dow) = (offset as usize / 7, offset as usize % 7);
        let idx = week * 2 + usize::from(dow >= 4);
        if idx < n {
            masks[idx] |= 1 << e.activity.index();
        }
    }
    let sessions = masks
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let week_start = period.monday + Duration::days(7 * (i / 2) as i64);
            let (start, kind) = if i % 2 == 0 {
                (week_start, SessionKind::MonThu)
            } else {
                (week_start + Duration::days(4), SessionKind::FriSun)
            };
            Session { start, kind, value: m.count_ones() as u8 }
        })
        .collect();
    SessionSeries { user_id: user_id.to_string(), sessions }
}

/// One labelled sliding-window sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSample {
    pub user_id: String,
    pub s: [u8; HISTORY_LEN],
    /// Binarized future sessions.
    pub future: [u8; FUTURE_LEN],
    pub label: u8,
    /// Start date of the 12th history session.
    pub window_end_date: NaiveDate,
}

impl WindowSample {
    pub fn history_sum(&self) -> u32 {
        self.s.iter().map(|&v| u32::from(v)).sum()
    }
}

/// High adherence (1) iff at least two of the three future sessions are active.
pub fn label_adherence(fs: [u8; FUTURE_LEN]) -> Result<u8> {
    if let Some(bad) = fs.iter().find(|&&v| v > 1) {
        return Err(Error::InvalidInput(format!(
            "future session indicator {bad} is not 0 or 1"
        )));
    }
    let active: u8 = fs.iter().sum();
    Ok(u8::from(active >= 2))
}

/// Every contiguous run of 15 sessions (stride 1) as a sample.
pub fn extract_windows(series: &SessionSeries) -> Vec<WindowSample> {
    series
        .sessions
        .windows(SPAN_LEN)
        .map(|w| {
            let mut s = [0u8; HISTORY_LEN];
            for (dst, src) in s.iter_mut().zip(&w[..HISTORY_LEN]) {
                *dst = src.value;
            }
            let mut future = [0u8; FUTURE_LEN];
            for (dst, src) in future.iter_mut().zip(&w[HISTORY_LEN..]) {
                *dst = u8::from(src.value >= 1);
            }
            let label = label_adherence(future).expect("binarized indicators");
            WindowSample {
                user_id: series.user_id.clone(),
                s,
                future,
                label,
                window_end_date: w[HISTORY_LEN - 1].start,
            }
        })
        .collect()
}

/// Session series of every user with events, in user id order.
pub fn sessionize(db: &RawDatabase, rounding: LastDateRounding) -> Vec<SessionSeries> {
    let by_user: Vec<(&str, Vec<&AcquisitionEvent>)> = db.events_by_user().into_iter().collect();
    by_user
        .par_iter()
        .filter_map(|(user, events)| {
            let first = events.iter().map(|e| e.date()).min()?;
            let last = events.iter().map(|e| e.date()).max()?;
            let period = round_active_period_with(first, last, rounding).ok()?;
            Some(build_sessions(user, events.iter().copied(), period))
        })
        .collect()
}

/// Sessionize then extract windows, in stable user order.
pub fn window_samples(db: &RawDatabase, rounding: LastDateRounding) -> Vec<WindowSample> {
    sessionize(db, rounding)
        .par_iter()
        .map(extract_windows)
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// `user_id,S1..S12,FS1..FS3,A,window_end_date`
pub fn write_windows_csv(samples: &[WindowSample], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["user_id".to_string()];
    header.extend((1..=HISTORY_LEN).map(|i| format!("S{i}")));
    header.extend((1..=FUTURE_LEN).map(|i| format!("FS{i}")));
    header.push("A".into());
    header.push("window_end_date".into());
    w.write_record(&header)?;
    for s in samples {
        let mut rec = vec![s.user_id.clone()];
        rec.extend(s.s.iter().map(|v| v.to_string()));
        rec.extend(s.future.iter().map(|v| v.to_string()));
        rec.push(s.label.to_string());
        rec.push(s.window_end_date.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Activity;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn ev(activity: Activity, d: NaiveDate) -> AcquisitionEvent {
        AcquisitionEvent {
            user_id: "u".into(),
            activity,
            timestamp: d.and_hms_opt(12, 0, 0).unwrap(),
        }
    }

    fn series(values: &[u8]) -> SessionSeries {
        let monday = date(2019, 1, 7);
        SessionSeries {
            user_id: "u".into(),
            sessions: values
                .iter()
                .enumerate()
                .map(|(i, &value)| Session {
                    start: monday + Duration::days(7 * (i / 2) as i64 + 4 * (i % 2) as i64),
                    kind: if i % 2 == 0 { SessionKind::MonThu } else { SessionKind::FriSun },
                    value,
                })
                .collect(),
        }
    }

    #[test]
    fn rounding_examples() {
        let p = round_active_period(date(2018, 8, 15), date(2021, 3, 20)).unwrap();
        assert_eq!(p.monday, date(2018, 8, 13));
        assert_eq!(p.sunday, date(2021, 3, 14));
        let p = round_active_period(date(2018, 8, 13), date(2018, 8, 26)).unwrap();
        assert_eq!(p.monday, date(2018, 8, 13));
        assert_eq!(p.sunday, date(2018, 8, 26));
        assert_eq!(p.weeks(), 2);
    }

    #[test]
    fn next_sunday_rounding_switch() {
        let p = round_active_period_with(date(2018, 8, 15), date(2021, 3, 20), LastDateRounding::Next)
            .unwrap();
        assert_eq!(p.sunday, date(2021, 3, 21));
    }

    #[test]
    fn inverted_dates_error_and_short_period_is_empty() {
        assert!(round_active_period(date(2019, 1, 2), date(2019, 1, 1)).is_err());
        // Wed..Sat of the same week: Monday after the previous Sunday.
        let p = round_active_period(date(2019, 1, 9), date(2019, 1, 12)).unwrap();
        assert!(p.is_empty());
        assert_eq!(p.weeks(), 0);
    }

    #[test]
    fn distinct_activities_per_session() {
        let mon = date(2019, 1, 7);
        let events = [
            ev(Activity::BrainGames, mon),
            ev(Activity::BrainGames, mon + Duration::days(2)),
            ev(Activity::Physical, mon + Duration::days(1)),
            // Friday of week 2: all four
            ev(Activity::BrainGames, mon + Duration::days(11)),
            ev(Activity::FingerTapping, mon + Duration::days(11)),
            ev(Activity::Mindfulness, mon + Duration::days(11)),
            ev(Activity::Physical, mon + Duration::days(11)),
            // outside the period
            ev(Activity::Physical, mon + Duration::days(30)),
        ];
        let period = ActivePeriod { monday: mon, sunday: mon + Duration::days(20) };
        let s = build_sessions("u", events.iter(), period);
        assert_eq!(s.values(), vec![2, 0, 0, 4, 0, 0]);
        assert_eq!(s.sessions[1].start, date(2019, 1, 11));
        assert_eq!(s.sessions[1].kind, SessionKind::FriSun);
    }

    #[test]
    fn window_counts() {
        assert_eq!(extract_windows(&series(&[1; 15])).len(), 1);
        assert!(extract_windows(&series(&[1; 14])).is_empty());
        assert_eq!(extract_windows(&series(&[0; 40])).len(), 26);
    }

    #[test]
    fn future_sessions_are_binarized() {
        let mut v = vec![1u8; 12];
        v.extend([0, 2, 0]);
        let w = extract_windows(&series(&v));
        assert_eq!(w[0].future, [0, 1, 0]);
        assert_eq!(w[0].label, 0);
        assert_eq!(w[0].window_end_date, series(&v).sessions[11].start);
    }

    #[test]
    fn label_truth_table() {
        assert_eq!(label_adherence([0, 0, 1]).unwrap(), 0);
        assert_eq!(label_adherence([1, 1, 0]).unwrap(), 1);
        assert_eq!(label_adherence([1, 1, 1]).unwrap(), 1);
        assert!(label_adherence([0, 2, 0]).is_err());
    }
}
