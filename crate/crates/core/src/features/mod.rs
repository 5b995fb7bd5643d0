//! Column-named numeric datasets and the seven incremental feature sets.
//!
//! | variant | adds                                   | columns |
//! |---------|----------------------------------------|---------|
//! | D0      | session values S1..S12                 | 12      |
//! | D1      | ISO week, month, year of window end    | 15      |
//! | D2      | 7 demographic fields                   | 22      |
//! | D3      | SPQ instances 1 and 3                  | 34      |
//! | D4      | UCLA instances 1 and 3                 | 74      |
//! | D5      | EQ5D3L instances 1 and 3               | 84      |
//! | D6      | UTAUT instance 3                       | 115     |
//!
//! Nulls are stored as NaN until [`transform`] imputes them.

mod io;
mod preprocess;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

pub use io::{meta_path, read_dataset, read_features_csv, write_dataset, DatasetMeta, FeatureTable, LABEL_COLUMN};
pub use preprocess::{fit_preprocess, mode, transform, PreprocessState};

use crate::error::{Error, Result};
use crate::ingest::{Demographic, QuestionnaireTable, UserProfile};
use crate::session::{WindowSample, HISTORY_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    D0,
    D1,
    D2,
    D3,
    D4,
    D5,
    D6,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::D0,
        Variant::D1,
        Variant::D2,
        Variant::D3,
        Variant::D4,
        Variant::D5,
        Variant::D6,
    ];

    pub fn level(self) -> usize {
        self as usize
    }

    pub fn column_count(self) -> usize {
        variant_columns(self).len()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "D{}", self.level())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s.trim().trim_start_matches(['D', 'd']);
        digits
            .parse::<usize>()
            .ok()
            .and_then(|i| Variant::ALL.get(i).copied())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown dataset variant `{s}`")))
    }
}

pub const TIMESTAMP_COLUMNS: [&str; 3] = ["week", "month", "year"];

/// ISO week-of-year, month and calendar year of a window's end date.
pub fn timestamp_features(date: NaiveDate) -> [f64; 3] {
    [
        f64::from(date.iso_week().week()),
        f64::from(date.month()),
        f64::from(date.year()),
    ]
}

fn questionnaire_columns(table: QuestionnaireTable) -> impl Iterator<Item = String> {
    let prefix = format!(
        "{}{}",
        table.questionnaire.name().to_ascii_lowercase(),
        table.instance
    );
    (1..=table.item_count()).map(move |i| format!("{prefix}_q{i}"))
}

/// Questionnaire tables included up to `variant`.
fn variant_tables(variant: Variant) -> &'static [QuestionnaireTable] {
    let n = match variant.level() {
        0..=2 => 0,
        3 => 2,
        4 => 4,
        5 => 6,
        _ => 7,
    };
    &QuestionnaireTable::ALL[..n]
}

/// Ordered feature column names of `variant`.
pub fn variant_columns(variant: Variant) -> Vec<String> {
    let mut cols: Vec<String> = (1..=HISTORY_LEN).map(|i| format!("S{i}")).collect();
    if variant >= Variant::D1 {
        cols.extend(TIMESTAMP_COLUMNS.iter().map(|s| s.to_string()));
    }
    if variant >= Variant::D2 {
        cols.extend(Demographic::ALL.iter().map(|d| d.column().to_string()));
    }
    for &table in variant_tables(variant) {
        cols.extend(questionnaire_columns(table));
    }
    cols
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularDataset {
    pub columns: Vec<String>,
    /// Row-major, `n_rows * columns.len()`; NaN marks a null cell.
    pub data: Vec<f64>,
    pub labels: Vec<u8>,
    /// Number of leading session columns, which are never scaled.
    pub n_dynamic: usize,
    pub variant: Option<Variant>,
}

/// Borrowed feature matrix with its column names.
#[derive(Debug, Clone, Copy)]
pub struct FeatureView<'a> {
    pub columns: &'a [String],
    pub data: &'a [f64],
}

impl<'a> FeatureView<'a> {
    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn n_rows(&self) -> usize {
        if self.columns.is_empty() {
            0
        } else {
            self.data.len() / self.columns.len()
        }
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        let d = self.columns.len();
        &self.data[i * d..(i + 1) * d]
    }
}

impl TabularDataset {
    pub fn new(
        columns: Vec<String>,
        data: Vec<f64>,
        labels: Vec<u8>,
        n_dynamic: usize,
    ) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InvalidInput("dataset needs at least one column".into()));
        }
        if data.len() != columns.len() * labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} cells do not fit {} rows of {} columns",
                data.len(),
                labels.len(),
                columns.len()
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::InvalidInput("labels must be 0 or 1".into()));
        }
        if n_dynamic > columns.len() {
            return Err(Error::InvalidInput("more dynamic columns than columns".into()));
        }
        Ok(Self { columns, data, labels, n_dynamic, variant: None })
    }

    /// Dataset from row slices; handy in tests.
    pub fn from_rows(columns: Vec<String>, rows: &[Vec<f64>], labels: Vec<u8>) -> Result<Self> {
        if rows.iter().any(|r| r.len() != columns.len()) {
            return Err(Error::InvalidInput("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(columns, data, labels, 0)
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_cols();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_cols())
    }

    pub fn view(&self) -> FeatureView<'_> {
        FeatureView { columns: &self.columns, data: &self.data }
    }

    /// `[negatives, positives]`
    pub fn class_counts(&self) -> [usize; 2] {
        let pos = self.labels.iter().filter(|&&l| l == 1).count();
        [self.labels.len() - pos, pos]
    }

    pub fn null_count(&self) -> usize {
        self.data.iter().filter(|v| v.is_nan()).count()
    }

    pub fn select_rows(&self, idx: &[usize]) -> TabularDataset {
        let mut data = Vec::with_capacity(idx.len() * self.n_cols());
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        TabularDataset {
            columns: self.columns.clone(),
            data,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            n_dynamic: self.n_dynamic,
            variant: self.variant,
        }
    }

    pub fn push_row(&mut self, row: &[f64], label: u8) {
        debug_assert_eq!(row.len(), self.n_cols());
        self.data.extend_from_slice(row);
        self.labels.push(label);
    }

    pub fn is_static(&self, col: usize) -> bool {
        col >= self.n_dynamic
    }
}

fn opt(v: Option<i32>) -> f64 {
    v.map_or(f64::NAN, f64::from)
}

/// Joins window samples with user profiles into the columns of `variant`.
/// User identifiers are not emitted as features.
pub fn build_variant(
    samples: &[WindowSample],
    profiles: &BTreeMap<String, UserProfile>,
    variant: Variant,
) -> Result<TabularDataset> {
    let columns = variant_columns(variant);
    let mut data = Vec::with_capacity(samples.len() * columns.len());
    let mut labels = Vec::with_capacity(samples.len());
    for sample in samples {
        data.extend(sample.s.iter().map(|&v| f64::from(v)));
        if variant >= Variant::D1 {
            data.extend(timestamp_features(sample.window_end_date));
        }
        if variant >= Variant::D2 {
            let profile = profiles
                .get(&sample.user_id)
                .ok_or_else(|| Error::UnknownUser(sample.user_id.clone()))?;
            data.extend(profile.demographics.iter().map(|v| opt(*v)));
            for &table in variant_tables(variant) {
                data.extend(profile.responses(table).iter().map(|v| opt(*v)));
            }
        }
        labels.push(sample.label);
    }
    let mut ds = TabularDataset::new(columns, data, labels, HISTORY_LEN)?;
    ds.variant = Some(variant);
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Status;

    fn sample(user: &str) -> WindowSample {
        WindowSample {
            user_id: user.into(),
            s: [1; 12],
            future: [1, 1, 0],
            label: 1,
            window_end_date: NaiveDate::from_ymd_opt(2019, 12, 30).unwrap(),
        }
    }

    #[test]
    fn column_counts_match_table() {
        let expected = [12, 15, 22, 34, 74, 84, 115];
        for (v, n) in Variant::ALL.into_iter().zip(expected) {
            assert_eq!(v.column_count(), n, "{v}");
        }
    }

    #[test]
    fn variants_nest_as_prefixes() {
        for w in Variant::ALL.windows(2) {
            let (small, big) = (variant_columns(w[0]), variant_columns(w[1]));
            assert_eq!(&big[..small.len()], &small[..]);
        }
    }

    #[test]
    fn iso_week_crosses_year() {
        // 2019-12-30 is a Monday in ISO week 1 of 2020
        let f = timestamp_features(NaiveDate::from_ymd_opt(2019, 12, 30).unwrap());
        assert_eq!(f, [1.0, 12.0, 2019.0]);
    }

    #[test]
    fn build_and_unknown_user() {
        let mut profiles = BTreeMap::new();
        let mut p = UserProfile::new("a", Status::Finished);
        p.demographics[0] = Some(1950);
        profiles.insert("a".to_string(), p);
        let ds = build_variant(&[sample("a")], &profiles, Variant::D3).unwrap();
        assert_eq!(ds.n_cols(), 34);
        assert_eq!(ds.row(0)[15], 1950.0);
        assert!(ds.row(0)[16].is_nan());
        assert!(ds.columns.iter().all(|c| c != "user_id"));
        // D0/D1 never consult profiles
        assert!(build_variant(&[sample("zz")], &profiles, Variant::D1).is_ok());
        assert!(matches!(
            build_variant(&[sample("zz")], &profiles, Variant::D2),
            Err(Error::UnknownUser(_))
        ));
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("D3".parse::<Variant>().unwrap(), Variant::D3);
        assert_eq!("6".parse::<Variant>().unwrap(), Variant::D6);
        assert!("D7".parse::<Variant>().is_err());
    }
}
