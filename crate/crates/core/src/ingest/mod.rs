//! Typed records for the acquisition/questionnaire database, CSV parsing and
//! cleansing.
//!
//! On-disk layout (UTF-8, comma separated, header row):
//!
//! * `acquisitions_<activity>.csv`: `user_id,timestamp` (an optional
//!   `activity` column is validated; other extra columns are ignored)
//! * `demographics.csv`: `user_id,status,birth_year,education,technology,
//!   living_environment,living_conditions,living_status,use_case`
//! * `<questionnaire>_<instance>.csv`: `user_id,Q1..Qn`, empty cell = null

mod cleanse;
mod parse;
mod write;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

pub use cleanse::{cleanse, CleanseReport, RemovalReason, RemovedUser, MIN_SPAN_DAYS};
pub use parse::{parse_acquisitions, parse_database, parse_timestamp};
pub use write::{write_database, write_rejects};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Activity {
    BrainGames,
    FingerTapping,
    Mindfulness,
    Physical,
}

impl Activity {
    pub const ALL: [Activity; 4] = [
        Activity::BrainGames,
        Activity::FingerTapping,
        Activity::Mindfulness,
        Activity::Physical,
    ];

    pub fn file_stem(self) -> &'static str {
        match self {
            Activity::BrainGames => "brain_games",
            Activity::FingerTapping => "finger_tapping",
            Activity::Mindfulness => "mindfulness",
            Activity::Physical => "physical",
        }
    }

    /// Accepts `BrainGames`, `brain_games`, `Brain-games` and similar spellings.
    pub fn parse(s: &str) -> Option<Activity> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        match key.as_str() {
            "braingames" => Some(Activity::BrainGames),
            "fingertapping" => Some(Activity::FingerTapping),
            "mindfulness" => Some(Activity::Mindfulness),
            "physical" | "physicalactivity" => Some(Activity::Physical),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Activity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_stem())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AcquisitionEvent {
    pub user_id: String,
    pub activity: Activity,
    pub timestamp: NaiveDateTime,
}

impl AcquisitionEvent {
    pub fn date(&self) -> NaiveDate {
        self.timestamp.date()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Status {
    StillUsing,
    Finished,
    Dropout,
    /// Anything outside the three recognised values; removed by cleansing.
    Other(String),
}

impl Status {
    pub fn parse(s: &str) -> Status {
        match s.trim().to_ascii_lowercase().as_str() {
            "still using technology" => Status::StillUsing,
            "finished" => Status::Finished,
            "dropout" => Status::Dropout,
            _ => Status::Other(s.to_string()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Status::StillUsing => "Still using technology",
            Status::Finished => "Finished",
            Status::Dropout => "Dropout",
            Status::Other(s) => s,
        }
    }

    pub fn is_valid(&self) -> bool {
        !matches!(self, Status::Other(_))
    }
}

/// The seven ordinal socio-demographic fields, in feature order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Demographic {
    BirthYear,
    Education,
    Technology,
    LivingEnvironment,
    LivingConditions,
    LivingStatus,
    UseCase,
}

impl Demographic {
    pub const ALL: [Demographic; 7] = [
        Demographic::BirthYear,
        Demographic::Education,
        Demographic::Technology,
        Demographic::LivingEnvironment,
        Demographic::LivingConditions,
        Demographic::LivingStatus,
        Demographic::UseCase,
    ];

    pub fn column(self) -> &'static str {
        match self {
            Demographic::BirthYear => "birth_year",
            Demographic::Education => "education",
            Demographic::Technology => "technology",
            Demographic::LivingEnvironment => "living_environment",
            Demographic::LivingConditions => "living_conditions",
            Demographic::LivingStatus => "living_status",
            Demographic::UseCase => "use_case",
        }
    }

    /// Admissible values; `None` for birth year, which is only checked for sanity.
    pub fn range(self) -> Option<(i32, i32)> {
        match self {
            Demographic::BirthYear => None,
            Demographic::Education => Some((0, 8)),
            Demographic::Technology => Some((1, 3)),
            Demographic::LivingEnvironment
            | Demographic::LivingConditions
            | Demographic::LivingStatus => Some((1, 2)),
            Demographic::UseCase => Some((3, 7)),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Questionnaire {
    Spq,
    Ucla,
    Eq5d3l,
    Utaut,
}

impl Questionnaire {
    pub fn item_count(self) -> usize {
        match self {
            Questionnaire::Spq => 6,
            Questionnaire::Ucla => 20,
            Questionnaire::Eq5d3l => 5,
            Questionnaire::Utaut => 31,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Questionnaire::Spq => "SPQ",
            Questionnaire::Ucla => "UCLA",
            Questionnaire::Eq5d3l => "EQ5D3L",
            Questionnaire::Utaut => "UTAUT",
        }
    }
}

/// One administered questionnaire instance, i.e. one questionnaire table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QuestionnaireTable {
    pub questionnaire: Questionnaire,
    pub instance: u8,
}

impl QuestionnaireTable {
    pub const fn new(questionnaire: Questionnaire, instance: u8) -> Self {
        Self { questionnaire, instance }
    }

    /// All tables in feature order: SPQ 1/3, UCLA 1/3, EQ5D3L 1/3, UTAUT 3.
    pub const ALL: [QuestionnaireTable; 7] = [
        QuestionnaireTable::new(Questionnaire::Spq, 1),
        QuestionnaireTable::new(Questionnaire::Spq, 3),
        QuestionnaireTable::new(Questionnaire::Ucla, 1),
        QuestionnaireTable::new(Questionnaire::Ucla, 3),
        QuestionnaireTable::new(Questionnaire::Eq5d3l, 1),
        QuestionnaireTable::new(Questionnaire::Eq5d3l, 3),
        QuestionnaireTable::new(Questionnaire::Utaut, 3),
    ];

    pub fn item_count(self) -> usize {
        self.questionnaire.item_count()
    }

    /// `spq_1`, `utaut_3`, ...
    pub fn file_stem(self) -> String {
        format!(
            "{}_{}",
            self.questionnaire.name().to_ascii_lowercase(),
            self.instance
        )
    }

    pub fn parse_stem(stem: &str) -> Option<QuestionnaireTable> {
        Self::ALL.into_iter().find(|t| t.file_stem() == stem)
    }
}

impl fmt::Display for QuestionnaireTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} inst{}", self.questionnaire.name(), self.instance)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserProfile {
    pub user_id: String,
    pub status: Status,
    pub demographics: [Option<i32>; 7],
    /// One entry per table in [`QuestionnaireTable::ALL`], each exactly
    /// `item_count` long. Users absent from a table have all-null responses.
    pub responses: BTreeMap<QuestionnaireTable, Vec<Option<i32>>>,
}

impl UserProfile {
    pub fn new(user_id: impl Into<String>, status: Status) -> Self {
        let responses = QuestionnaireTable::ALL
            .into_iter()
            .map(|t| (t, vec![None; t.item_count()]))
            .collect();
        Self {
            user_id: user_id.into(),
            status,
            demographics: [None; 7],
            responses,
        }
    }

    pub fn demographic(&self, field: Demographic) -> Option<i32> {
        self.demographics[field.index()]
    }

    pub fn responses(&self, table: QuestionnaireTable) -> &[Option<i32>] {
        &self.responses[&table]
    }
}

/// A row that failed validation, kept for the rejects report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowReject {
    /// `<file>:<line>`
    pub row: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawDatabase {
    /// Sorted by `(user_id, timestamp, activity)`.
    pub events: Vec<AcquisitionEvent>,
    pub profiles: BTreeMap<String, UserProfile>,
    pub rejects: Vec<RowReject>,
    pub warnings: Vec<String>,
}

impl RawDatabase {
    pub fn sort_events(&mut self) {
        self.events.sort_by(|a, b| {
            (&a.user_id, a.timestamp, a.activity).cmp(&(&b.user_id, b.timestamp, b.activity))
        });
    }

    /// Events grouped by user, in user order.
    pub fn events_by_user(&self) -> BTreeMap<&str, Vec<&AcquisitionEvent>> {
        let mut map: BTreeMap<&str, Vec<&AcquisitionEvent>> = BTreeMap::new();
        for e in &self.events {
            map.entry(e.user_id.as_str()).or_default().push(e);
        }
        map
    }
}

/// File locations of every table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatabasePaths {
    pub acquisitions: BTreeMap<Activity, PathBuf>,
    pub demographics: PathBuf,
    pub questionnaires: BTreeMap<QuestionnaireTable, PathBuf>,
}

impl DatabasePaths {
    /// Default file names under `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            acquisitions: Activity::ALL
                .into_iter()
                .map(|a| (a, dir.join(format!("acquisitions_{}.csv", a.file_stem()))))
                .collect(),
            demographics: dir.join("demographics.csv"),
            questionnaires: QuestionnaireTable::ALL
                .into_iter()
                .map(|t| (t, dir.join(format!("{}.csv", t.file_stem()))))
                .collect(),
        }
    }

    /// Every file path: acquisitions, demographics, then questionnaires.
    pub fn all(&self) -> Vec<PathBuf> {
        let mut v: Vec<PathBuf> = self.acquisitions.values().cloned().collect();
        v.push(self.demographics.clone());
        v.extend(self.questionnaires.values().cloned());
        v
    }
}

pub const DEMOGRAPHICS_HEADER: [&str; 9] = [
    "user_id",
    "status",
    "birth_year",
    "education",
    "technology",
    "living_environment",
    "living_conditions",
    "living_status",
    "use_case",
];

pub(crate) fn item_column(i: usize) -> String {
    format!("Q{}", i + 1)
}
