//! Descriptive diagnostics: session correlations, questionnaire reliability,
//! missingness, demographic summaries, acquisition distribution and
//! duplicate feature tuples.
//!
//! Variances use the `n - 1` denominator throughout.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::TabularDataset;
use crate::ingest::{Demographic, Questionnaire, QuestionnaireTable, UserProfile};
use crate::session::{WindowSample, HISTORY_LEN};

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance; `None` for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    Some(xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64)
}

/// Pearson product-moment correlation. Constant input is an error, not NaN.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "pearson: lengths {} and {} differ",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InvalidInput("pearson needs at least two points".into()));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("pearson correlation of a constant vector".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Correlations among S1..S12 and the label A. Cells involving a constant
/// column are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    pub cells: Vec<Vec<Option<f64>>>,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.cells[i][j]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec![String::new()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (label, row) in self.labels.iter().zip(&self.cells) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|c| c.map(|v| v.to_string()).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn session_correlation_matrix(ds: &TabularDataset) -> Result<CorrelationMatrix> {
    let expected: Vec<String> = (1..=HISTORY_LEN).map(|i| format!("S{i}")).collect();
    if ds.columns.len() < HISTORY_LEN || ds.columns[..HISTORY_LEN] != expected[..] {
        return Err(Error::ColumnMismatch(
            "correlation matrix needs S1..S12 as the leading columns".into(),
        ));
    }
    let d = ds.n_cols();
    let mut series: Vec<Vec<f64>> = (0..HISTORY_LEN)
        .map(|j| ds.data.iter().skip(j).step_by(d).copied().collect())
        .collect();
    series.push(ds.labels.iter().map(|&l| f64::from(l)).collect());
    let n = series.len();
    let mut cells = vec![vec![None; n]; n];
    for i in 0..n {
        for j in i..n {
            let r = pearson(&series[i], &series[j]).ok();
            cells[i][j] = r;
            cells[j][i] = r;
        }
        if cells[i][i].is_some() {
            cells[i][i] = Some(1.0);
        }
    }
    let mut labels = expected;
    labels.push("A".into());
    Ok(CorrelationMatrix { labels, cells })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaEstimate {
    pub alpha: Option<f64>,
    /// Complete-case respondents used.
    pub n_respondents: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub undefined_reason: Option<String>,
}

/// Cronbach's alpha over respondents with no missing item.
pub fn cronbach_alpha(rows: &[Vec<Option<f64>>]) -> AlphaEstimate {
    let k = rows.first().map_or(0, Vec::len);
    let complete: Vec<Vec<f64>> = rows
        .iter()
        .filter(|r| r.len() == k && r.iter().all(Option::is_some))
        .map(|r| r.iter().map(|v| v.expect("complete row")).collect())
        .collect();
    let n = complete.len();
    let undefined = |reason: &str| AlphaEstimate {
        alpha: None,
        n_respondents: n,
        undefined_reason: Some(reason.to_string()),
    };
    if k < 2 {
        return undefined("fewer than 2 items");
    }
    if n < 2 {
        return undefined("fewer than 2 complete respondents");
    }
    let item_var_sum: f64 = (0..k)
        .map(|j| {
            let col: Vec<f64> = complete.iter().map(|r| r[j]).collect();
            sample_variance(&col).expect("n >= 2")
        })
        .sum();
    let totals: Vec<f64> = complete.iter().map(|r| r.iter().sum()).collect();
    let total_var = sample_variance(&totals).expect("n >= 2");
    if total_var <= 0.0 {
        return undefined("total score variance is zero");
    }
    let k = k as f64;
    AlphaEstimate {
        alpha: Some(k / (k - 1.0) * (1.0 - item_var_sum / total_var)),
        n_respondents: n,
        undefined_reason: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaReport {
    pub questionnaire: String,
    pub instance: u8,
    #[serde(flatten)]
    pub estimate: AlphaEstimate,
}

/// One alpha per questionnaire table, in table order.
pub fn questionnaire_alphas<'a>(
    profiles: impl IntoIterator<Item = &'a UserProfile> + Clone,
) -> Vec<AlphaReport> {
    QuestionnaireTable::ALL
        .into_iter()
        .map(|table| {
            let rows: Vec<Vec<Option<f64>>> = profiles
                .clone()
                .into_iter()
                .map(|p| p.responses(table).iter().map(|v| v.map(f64::from)).collect())
                .collect();
            AlphaReport {
                questionnaire: table.questionnaire.name().into(),
                instance: table.instance,
                estimate: cronbach_alpha(&rows),
            }
        })
        .collect()
}

pub fn write_alpha_csv(reports: &[AlphaReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["questionnaire", "instance", "alpha", "n_respondents"])?;
    for r in reports {
        w.write_record([
            r.questionnaire.clone(),
            r.instance.to_string(),
            r.estimate.alpha.map(|a| format!("{a:.4}")).unwrap_or_else(|| "undefined".into()),
            r.estimate.n_respondents.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Item groups reported per table, as 1-based item numbers.
pub fn null_rate_groups(table: QuestionnaireTable) -> Vec<(String, Vec<usize>)> {
    match (table.questionnaire, table.instance) {
        (Questionnaire::Spq, 1) => vec![
            ("Q1,Q3,Q5".into(), vec![1, 3, 5]),
            ("Q2,Q4,Q6".into(), vec![2, 4, 6]),
        ],
        (Questionnaire::Spq, 3) => vec![
            ("Q1-Q5".into(), vec![1, 2, 3, 4, 5]),
            ("Q6".into(), vec![6]),
        ],
        _ => vec![("all".into(), (1..=table.item_count()).collect())],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullRateRow {
    pub questionnaire: String,
    pub feature_group: String,
    pub instance: u8,
    /// Percentage of users who answered none of the group's items.
    pub pct_null: f64,
    pub n_users: usize,
}

pub fn null_rates<'a>(profiles: impl IntoIterator<Item = &'a UserProfile> + Clone) -> Vec<NullRateRow> {
    let mut out = Vec::new();
    for table in QuestionnaireTable::ALL {
        for (label, items) in null_rate_groups(table) {
            let (mut n, mut nulls) = (0usize, 0usize);
            for p in profiles.clone() {
                n += 1;
                let r = p.responses(table);
                if items.iter().all(|&i| r[i - 1].is_none()) {
                    nulls += 1;
                }
            }
            out.push(NullRateRow {
                questionnaire: table.questionnaire.name().into(),
                feature_group: label,
                instance: table.instance,
                pct_null: if n == 0 { 0.0 } else { 100.0 * nulls as f64 / n as f64 },
                n_users: n,
            });
        }
    }
    out
}

pub fn write_null_rates_csv(rows: &[NullRateRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["table", "feature", "instance", "null_pct"])?;
    for r in rows {
        w.write_record([
            r.questionnaire.clone(),
            r.feature_group.clone(),
            r.instance.to_string(),
            format!("{:.2}", r.pct_null),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Most frequent value, smallest on ties.
    pub mode: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::Empty("no non-null values to summarize".into()));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mode = crate::features::mode(values.iter().copied()).expect("non-empty");
    Ok(Summary { min, max, mean: mean(values), mode, n: values.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicRow {
    pub field: Demographic,
    #[serde(flatten)]
    pub summary: Summary,
}

pub fn demographic_summary<'a>(
    profiles: impl IntoIterator<Item = &'a UserProfile> + Clone,
) -> Result<Vec<DemographicRow>> {
    Demographic::ALL
        .into_iter()
        .map(|field| {
            let values: Vec<f64> = profiles
                .clone()
                .into_iter()
                .filter_map(|p| p.demographic(field).map(f64::from))
                .collect();
            let summary = summarize(&values).map_err(|_| {
                Error::Empty(format!("demographic field {} has no values", field.column()))
            })?;
            Ok(DemographicRow { field, summary })
        })
        .collect()
}

pub fn write_demographics_csv(rows: &[DemographicRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["characteristic", "min", "max", "mean", "mode", "n"])?;
    for r in rows {
        let s = &r.summary;
        w.write_record([
            r.field.column().to_string(),
            s.min.to_string(),
            s.max.to_string(),
            format!("{:.2}", s.mean),
            s.mode.to_string(),
            s.n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_start: f64,
    pub bin_end: f64,
    pub count: usize,
}

pub fn write_histogram_csv(bins: &[HistogramBin], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bin_start", "bin_end", "count"])?;
    for b in bins {
        w.write_record([b.bin_start.to_string(), b.bin_end.to_string(), b.count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserMean {
    pub user_id: String,
    pub n_windows: usize,
    pub mean_window_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionStats {
    pub per_user: Vec<UserMean>,
    /// Mean over users of the per-user means.
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub histogram: Vec<HistogramBin>,
}

/// Largest possible window sum: 12 sessions of 4 activities.
pub const MAX_WINDOW_SUM: f64 = (HISTORY_LEN * 4) as f64;

/// Per-user mean of window sums, histogrammed over `[0, 48]` with `bin_width`.
pub fn acquisition_distribution(samples: &[WindowSample], bin_width: f64) -> Result<AcquisitionStats> {
    if samples.is_empty() {
        return Err(Error::Empty("no window samples".into()));
    }
    if bin_width <= 0.0 {
        return Err(Error::InvalidInput("bin width must be positive".into()));
    }
    let mut by_user: BTreeMap<&str, (usize, u64)> = BTreeMap::new();
    for s in samples {
        let e = by_user.entry(&s.user_id).or_default();
        e.0 += 1;
        e.1 += u64::from(s.history_sum());
    }
    let per_user: Vec<UserMean> = by_user
        .into_iter()
        .map(|(user, (n, sum))| UserMean {
            user_id: user.to_string(),
            n_windows: n,
            mean_window_sum: sum as f64 / n as f64,
        })
        .collect();
    let means: Vec<f64> = per_user.iter().map(|u| u.mean_window_sum).collect();
    let n_bins = (MAX_WINDOW_SUM / bin_width).ceil() as usize;
    let mut histogram: Vec<HistogramBin> = (0..n_bins)
        .map(|b| HistogramBin {
            bin_start: b as f64 * bin_width,
            bin_end: ((b + 1) as f64 * bin_width).min(MAX_WINDOW_SUM),
            count: 0,
        })
        .collect();
    for &m in &means {
        let b = ((m / bin_width).floor() as usize).min(n_bins - 1);
        histogram[b].count += 1;
    }
    Ok(AcquisitionStats {
        mean: mean(&means),
        min: means.iter().copied().fold(f64::INFINITY, f64::min),
        max: means.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        per_user,
        histogram,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateGroup {
    pub tuple: Vec<f64>,
    pub multiplicity: usize,
    pub negatives: usize,
    pub positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateReport {
    pub n_rows: usize,
    pub n_distinct: usize,
    /// Rows whose tuple occurs at least twice.
    pub n_duplicated_rows: usize,
    pub max_multiplicity: usize,
    /// `(multiplicity, number of distinct tuples with it)`, ascending.
    pub multiplicity_histogram: Vec<(usize, usize)>,
    /// Tuples occurring at least twice, most frequent first.
    pub groups: Vec<DuplicateGroup>,
}

impl DuplicateReport {
    pub fn write_histogram_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["multiplicity", "tuples"])?;
        for (m, c) in &self.multiplicity_histogram {
            w.write_record([m.to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn tuple_key(row: &[f64]) -> Vec<u64> {
    row.iter()
        .map(|&v| {
            if v.is_nan() {
                f64::NAN.to_bits()
            } else if v == 0.0 {
                0
            } else {
                v.to_bits()
            }
        })
        .collect()
}

/// Groups rows by exact feature-tuple equality (nulls compare equal).
pub fn duplicate_analysis(ds: &TabularDataset) -> DuplicateReport {
    let mut groups: HashMap<Vec<u64>, (usize, usize)> = HashMap::new();
    for (row, &label) in ds.rows().zip(&ds.labels) {
        let e = groups.entry(tuple_key(row)).or_default();
        e.0 += 1;
        e.1 += usize::from(label);
    }
    let n_distinct = groups.len();
    let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
    for (m, _) in groups.values() {
        *hist.entry(*m).or_default() += 1;
    }
    let mut dup: Vec<(Vec<u64>, usize, usize)> = groups
        .into_iter()
        .filter(|(_, (m, _))| *m >= 2)
        .map(|(k, (m, pos))| (k, m, pos))
        .collect();
    dup.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    DuplicateReport {
        n_rows: ds.n_rows(),
        n_distinct,
        n_duplicated_rows: dup.iter().map(|g| g.1).sum(),
        max_multiplicity: hist.keys().next_back().copied().unwrap_or(0),
        multiplicity_histogram: hist.into_iter().collect(),
        groups: dup
            .into_iter()
            .map(|(k, m, pos)| DuplicateGroup {
                tuple: k.into_iter().map(f64::from_bits).collect(),
                multiplicity: m,
                negatives: m - pos,
                positives: pos,
            })
            .collect(),
    }
}

/// Copy of `ds` with session columns reduced to active (1) / inactive (0).
pub fn binarize_sessions(ds: &TabularDataset) -> TabularDataset {
    let mut out = ds.clone();
    let d = out.n_cols();
    for (k, v) in out.data.iter_mut().enumerate() {
        if k % d < out.n_dynamic {
            *v = if *v >= 1.0 { 1.0 } else { 0.0 };
        }
    }
    out
}
