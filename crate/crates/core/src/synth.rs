//! Seeded synthetic database generator.
//!
//! Each user is enrolled for a random number of weeks. Engagement is a
//! per-session Markov chain: an engaged user completes each activity
//! independently with a user-level probability drawn from `Beta(a, b)`; after
//! each session an engaged user may drop out for good (`dropout_hazard`) or
//! lapse (`lapse_hazard`), and a lapsed user comes back with
//! `return_probability`. Dropped and lapsed users emit nothing. Questionnaire
//! answers follow a one-factor item model with configurable missingness.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{
    write_database, AcquisitionEvent, Activity, DatabasePaths, Demographic, Questionnaire,
    QuestionnaireTable, RawDatabase, Status, UserProfile,
};
use crate::seed;

/// Null probability for a questionnaire table, or for a group of its items.
///
/// A table-level rule nulls a respondent's whole row. An item-level rule nulls
/// the listed items together, calibrated so their marginal null rate equals
/// `rate` when it exceeds the table-level rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NullRateRule {
    /// Table stem, e.g. `ucla_3`.
    pub table: String,
    /// 1-based item numbers; `None` means the whole table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items: Option<Vec<usize>>,
    pub rate: f64,
}

impl NullRateRule {
    pub fn table(table: &str, rate: f64) -> Self {
        Self { table: table.into(), items: None, rate }
    }

    pub fn items(table: &str, items: &[usize], rate: f64) -> Self {
        Self { table: table.into(), items: Some(items.to_vec()), rate }
    }
}

/// Inclusive sampling ranges of the demographic fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemographicRanges {
    pub birth_year: (i32, i32),
    pub education: (i32, i32),
    pub technology: (i32, i32),
    pub living_environment: (i32, i32),
    pub living_conditions: (i32, i32),
    pub living_status: (i32, i32),
    pub use_case: (i32, i32),
}

impl Default for DemographicRanges {
    fn default() -> Self {
        Self {
            birth_year: (1924, 1974),
            education: (0, 8),
            technology: (1, 3),
            living_environment: (1, 2),
            living_conditions: (1, 2),
            living_status: (1, 2),
            use_case: (3, 7),
        }
    }
}

impl DemographicRanges {
    fn get(&self, field: Demographic) -> (i32, i32) {
        match field {
            Demographic::BirthYear => self.birth_year,
            Demographic::Education => self.education,
            Demographic::Technology => self.technology,
            Demographic::LivingEnvironment => self.living_environment,
            Demographic::LivingConditions => self.living_conditions,
            Demographic::LivingStatus => self.living_status,
            Demographic::UseCase => self.use_case,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_users: usize,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub min_weeks: u32,
    pub max_weeks: u32,
    pub engagement_alpha: f64,
    pub engagement_beta: f64,
    pub dropout_hazard: f64,
    pub lapse_hazard: f64,
    pub return_probability: f64,
    /// Probability that an activity completed in a session is logged twice.
    pub repeat_probability: f64,
    pub invalid_status_rate: f64,
    pub null_rates: Vec<NullRateRule>,
    pub demographics: DemographicRanges,
}

/// Null rates observed on the real questionnaires after cleansing.
pub fn reference_null_rates() -> Vec<NullRateRule> {
    vec![
        NullRateRule::table("spq_1", 0.0),
        NullRateRule::items("spq_1", &[2, 4, 6], 0.4060),
        NullRateRule::table("spq_3", 0.2117),
        NullRateRule::items("spq_3", &[6], 0.2160),
        NullRateRule::table("ucla_1", 0.5335),
        NullRateRule::table("ucla_3", 0.8121),
        NullRateRule::table("eq5d3l_1", 0.4082),
        NullRateRule::table("eq5d3l_3", 0.5572),
        NullRateRule::table("utaut_3", 0.2527),
    ]
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_users: 300,
            start_date: NaiveDate::from_ymd_opt(2018, 8, 1).expect("valid date"),
            end_date: NaiveDate::from_ymd_opt(2021, 3, 31).expect("valid date"),
            min_weeks: 6,
            max_weeks: 60,
            engagement_alpha: 0.8,
            engagement_beta: 1.2,
            dropout_hazard: 0.01,
            lapse_hazard: 0.12,
            return_probability: 0.04,
            repeat_probability: 0.3,
            invalid_status_rate: 0.02,
            null_rates: reference_null_rates(),
            demographics: DemographicRanges::default(),
        }
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} = {p} is not a probability")))
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 {
            return Err(Error::InvalidConfig("n_users must be at least 1".into()));
        }
        if self.start_date >= self.end_date {
            return Err(Error::InvalidConfig("start_date must precede end_date".into()));
        }
        if self.min_weeks == 0 || self.min_weeks > self.max_weeks {
            return Err(Error::InvalidConfig("need 1 <= min_weeks <= max_weeks".into()));
        }
        if !(self.engagement_alpha > 0.0 && self.engagement_beta > 0.0) {
            return Err(Error::InvalidConfig("engagement Beta parameters must be positive".into()));
        }
        check_probability("dropout_hazard", self.dropout_hazard)?;
        check_probability("lapse_hazard", self.lapse_hazard)?;
        check_probability("return_probability", self.return_probability)?;
        check_probability("repeat_probability", self.repeat_probability)?;
        check_probability("invalid_status_rate", self.invalid_status_rate)?;
        for rule in &self.null_rates {
            check_probability(&format!("null rate of {}", rule.table), rule.rate)?;
            let table = QuestionnaireTable::parse_stem(&rule.table).ok_or_else(|| {
                Error::InvalidConfig(format!("unknown questionnaire table `{}`", rule.table))
            })?;
            if let Some(items) = &rule.items {
                if items.iter().any(|&i| i == 0 || i > table.item_count()) {
                    return Err(Error::InvalidConfig(format!(
                        "item numbers of {} must be in 1..={}",
                        rule.table,
                        table.item_count()
                    )));
                }
            }
        }
        for field in Demographic::ALL {
            let (lo, hi) = self.demographics.get(field);
            if lo > hi {
                return Err(Error::InvalidConfig(format!("empty range for {}", field.column())));
            }
            if let Some((min, max)) = field.range() {
                if lo < min || hi > max {
                    return Err(Error::InvalidConfig(format!(
                        "{} range must lie within {min}..={max}",
                        field.column()
                    )));
                }
            }
        }
        Ok(())
    }

    fn table_rate(&self, table: QuestionnaireTable) -> f64 {
        self.null_rates
            .iter()
            .rev()
            .find(|r| r.items.is_none() && QuestionnaireTable::parse_stem(&r.table) == Some(table))
            .map(|r| r.rate)
            .unwrap_or(0.0)
    }
}

/// Response scale and one-factor loading for each questionnaire.
fn item_model(q: Questionnaire) -> (i32, i32, f64, f64) {
    // (lowest, highest, loading, noise sd)
    match q {
        Questionnaire::Spq => (1, 5, 0.9, 1.0),
        Questionnaire::Ucla => (1, 4, 0.15, 0.8),
        Questionnaire::Eq5d3l => (1, 3, 0.45, 0.6),
        Questionnaire::Utaut => (1, 5, 0.6, 1.0),
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Engagement {
    Engaged,
    Lapsed,
    Dropped,
}

fn monday_of(d: NaiveDate) -> NaiveDate {
    d - Duration::days(i64::from(d.weekday().num_days_from_monday()))
}

struct UserActivity {
    events: Vec<AcquisitionEvent>,
    dropped: bool,
    enrolment_end: NaiveDate,
}

fn simulate_user(
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
    user_id: &str,
    engagement: &Beta<f64>,
) -> UserActivity {
    let range_start = monday_of(cfg.start_date);
    let total_weeks = ((cfg.end_date - range_start).num_days() / 7).max(1) as u32;
    let weeks = rng.random_range(cfg.min_weeks..=cfg.max_weeks).min(total_weeks);
    let start_week = rng.random_range(0..=total_weeks - weeks);
    let first_monday = range_start + Duration::weeks(i64::from(start_week));
    let p = engagement.sample(rng);

    let mut state = Engagement::Engaged;
    let mut events = Vec::new();
    for session in 0..weeks * 2 {
        let week_monday = first_monday + Duration::weeks(i64::from(session / 2));
        let (first_day, n_days) = if session % 2 == 0 { (0, 4) } else { (4, 3) };
        if state == Engagement::Engaged {
            for activity in Activity::ALL {
                if !rng.random_bool(p) {
                    continue;
                }
                let reps = 1 + usize::from(rng.random_bool(cfg.repeat_probability));
                for _ in 0..reps {
                    let day = week_monday + Duration::days(first_day + rng.random_range(0..n_days));
                    if day > cfg.end_date {
                        continue;
                    }
                    let ts = day
                        .and_hms_opt(
                            rng.random_range(7..22),
                            rng.random_range(0..60),
                            rng.random_range(0..60),
                        )
                        .expect("valid time");
                    events.push(AcquisitionEvent {
                        user_id: user_id.to_string(),
                        activity,
                        timestamp: ts,
                    });
                }
            }
        }
        state = match state {
            Engagement::Engaged if rng.random_bool(cfg.dropout_hazard) => Engagement::Dropped,
            Engagement::Engaged if rng.random_bool(cfg.lapse_hazard) => Engagement::Lapsed,
            Engagement::Lapsed if rng.random_bool(cfg.return_probability) => Engagement::Engaged,
            s => s,
        };
    }
    UserActivity {
        events,
        dropped: state == Engagement::Dropped,
        enrolment_end: first_monday + Duration::weeks(i64::from(weeks)) - Duration::days(1),
    }
}

fn sample_demographics(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> [Option<i32>; 7] {
    let mut out = [None; 7];
    for field in Demographic::ALL {
        let (lo, hi) = cfg.demographics.get(field);
        let v = match field {
            Demographic::BirthYear => {
                let mid = f64::from(lo + hi) / 2.0;
                let sd = (f64::from(hi - lo) / 6.0).max(1e-9);
                let draw: f64 = Normal::new(mid - 3.0, sd).expect("positive sd").sample(rng);
                (draw.round() as i32).clamp(lo, hi)
            }
            _ => rng.random_range(lo..=hi),
        };
        out[field.index()] = Some(v);
    }
    out
}

fn sample_responses(
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> BTreeMap<QuestionnaireTable, Vec<Option<i32>>> {
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = BTreeMap::new();
    for table in QuestionnaireTable::ALL {
        let (lo, hi, loading, noise) = item_model(table.questionnaire);
        let centre = f64::from(lo + hi) / 2.0;
        let trait_level: f64 = std_normal.sample(rng);
        let mut items: Vec<Option<i32>> = (0..table.item_count())
            .map(|_| {
                let e: f64 = std_normal.sample(rng);
                let v = centre + loading * trait_level + noise * e;
                Some((v.round() as i32).clamp(lo, hi))
            })
            .collect();

        let table_rate = cfg.table_rate(table);
        if rng.random_bool(table_rate) {
            items.iter_mut().for_each(|v| *v = None);
        } else {
            for rule in cfg.null_rates.iter().filter(|r| {
                r.items.is_some() && QuestionnaireTable::parse_stem(&r.table) == Some(table)
            }) {
                let conditional = if table_rate >= 1.0 {
                    0.0
                } else {
                    ((rule.rate - table_rate) / (1.0 - table_rate)).clamp(0.0, 1.0)
                };
                if rng.random_bool(conditional) {
                    for &i in rule.items.as_deref().unwrap_or_default() {
                        items[i - 1] = None;
                    }
                }
            }
        }
        out.insert(table, items);
    }
    out
}

/// Deterministic for a fixed `cfg` (including its seed).
pub fn generate(cfg: &SynthConfig) -> Result<RawDatabase> {
    cfg.validate()?;
    let mut rng = seed::stream_rng(cfg.seed, "generation", 0);
    let engagement = Beta::new(cfg.engagement_alpha, cfg.engagement_beta)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let width = cfg.n_users.to_string().len().max(4);
    let mut db = RawDatabase::default();
    for i in 0..cfg.n_users {
        let user_id = format!("U{:0width$}", i + 1);
        let activity = simulate_user(cfg, &mut rng, &user_id, &engagement);
        let status = if rng.random_bool(cfg.invalid_status_rate) {
            Status::Other("Unknown".into())
        } else if activity.dropped {
            Status::Dropout
        } else if activity.enrolment_end + Duration::days(14) >= cfg.end_date {
            Status::StillUsing
        } else {
            Status::Finished
        };
        let mut profile = UserProfile::new(user_id, status);
        profile.demographics = sample_demographics(cfg, &mut rng);
        profile.responses = sample_responses(cfg, &mut rng);
        db.events.extend(activity.events);
        db.profiles.insert(profile.user_id.clone(), profile);
    }
    db.sort_events();
    Ok(db)
}

/// Generates and writes the database files under `dir`.
pub fn generate_to_dir(cfg: &SynthConfig, dir: &Path) -> Result<DatabasePaths> {
    let db = generate(cfg)?;
    write_database(&db, dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            SynthConfig { n_users: 0, ..Default::default() },
            SynthConfig { dropout_hazard: 1.5, ..Default::default() },
            SynthConfig {
                start_date: NaiveDate::from_ymd_opt(2022, 1, 1).unwrap(),
                ..Default::default()
            },
            SynthConfig {
                null_rates: vec![NullRateRule::table("ucla_2", 0.5)],
                ..Default::default()
            },
            SynthConfig {
                null_rates: vec![NullRateRule::items("spq_1", &[7], 0.5)],
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(generate(&cfg), Err(Error::InvalidConfig(_))), "{cfg:?}");
        }
    }

    #[test]
    fn deterministic_in_memory() {
        let cfg = SynthConfig { n_users: 20, ..Default::default() };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
    }

    #[test]
    fn full_hazard_stops_after_first_session() {
        let cfg = SynthConfig {
            n_users: 50,
            dropout_hazard: 1.0,
            engagement_alpha: 5.0,
            engagement_beta: 1.0,
            ..Default::default()
        };
        let db = generate(&cfg).unwrap();
        for (_, events) in db.events_by_user() {
            let first = events.iter().map(|e| e.date()).min().unwrap();
            let last = events.iter().map(|e| e.date()).max().unwrap();
            assert!((last - first).num_days() < 4);
        }
    }
}
