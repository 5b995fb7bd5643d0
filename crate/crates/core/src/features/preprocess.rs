use serde::{Deserialize, Serialize};

use super::TabularDataset;
use crate::error::{Error, Result};
use crate::float_bits;

/// Mode imputation and min-max scaling statistics fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessState {
    pub columns: Vec<String>,
    pub n_dynamic: usize,
    #[serde(with = "float_bits::vec")]
    pub modes: Vec<f64>,
    /// `(min, max)` after imputation for static columns; `None` for session columns.
    #[serde(with = "float_bits::opt_pair_vec")]
    pub ranges: Vec<Option<(f64, f64)>>,
    pub fitted_on: usize,
}

/// Most frequent non-null value, smallest on ties; `None` if all null.
pub fn mode(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.filter(|x| !x.is_nan()).collect();
    v.sort_by(f64::total_cmp);
    let mut best: Option<(f64, usize)> = None;
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j < v.len() && v[j] == v[i] {
            j += 1;
        }
        if best.is_none_or(|(_, n)| j - i > n) {
            best = Some((v[i], j - i));
        }
        i = j;
    }
    best.map(|(x, _)| x)
}

pub fn fit_preprocess(train: &TabularDataset) -> Result<PreprocessState> {
    if train.n_rows() == 0 {
        return Err(Error::Empty("cannot fit preprocessing on an empty dataset".into()));
    }
    let d = train.n_cols();
    let column = |j: usize| train.data.iter().skip(j).step_by(d).copied();
    let modes: Vec<f64> = (0..d).map(|j| mode(column(j)).unwrap_or(0.0)).collect();
    let ranges = (0..d)
        .map(|j| {
            train.is_static(j).then(|| {
                column(j)
                    .map(|x| if x.is_nan() { modes[j] } else { x })
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                        (lo.min(x), hi.max(x))
                    })
            })
        })
        .collect();
    Ok(PreprocessState {
        columns: train.columns.clone(),
        n_dynamic: train.n_dynamic,
        modes,
        ranges,
        fitted_on: train.n_rows(),
    })
}

/// Imputes nulls with the fitted modes and scales static columns to `[0, 1]`,
/// clamping values outside the fitted range. Constant columns map to 0.
pub fn transform(ds: &TabularDataset, st: &PreprocessState) -> Result<TabularDataset> {
    if ds.columns != st.columns {
        return Err(Error::ColumnMismatch(format!(
            "dataset has {} columns {:?}..., preprocessing was fitted on {} columns",
            ds.n_cols(),
            ds.columns.iter().take(3).collect::<Vec<_>>(),
            st.columns.len()
        )));
    }
    let d = ds.n_cols();
    let mut out = ds.clone();
    for (k, v) in out.data.iter_mut().enumerate() {
        let j = k % d;
        if v.is_nan() {
            *v = st.modes[j];
        }
        if let Some((lo, hi)) = st.ranges[j] {
            *v = if hi > lo { ((*v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(cols: &[&str], rows: &[Vec<f64>], n_dynamic: usize) -> TabularDataset {
        let mut d = TabularDataset::from_rows(
            cols.iter().map(|s| s.to_string()).collect(),
            rows,
            vec![0; rows.len()],
        )
        .unwrap();
        d.n_dynamic = n_dynamic;
        d
    }

    const NAN: f64 = f64::NAN;

    #[test]
    fn mode_rules() {
        assert_eq!(mode([1.0, 2.0, 2.0, NAN].into_iter()), Some(2.0));
        assert_eq!(mode([2.0, 2.0, 1.0, 1.0].into_iter()), Some(1.0));
        assert_eq!(mode([NAN, NAN].into_iter()), None);
    }

    #[test]
    fn all_null_column_imputes_zero() {
        let train = ds(&["a"], &[vec![NAN], vec![NAN]], 0);
        let st = fit_preprocess(&train).unwrap();
        assert_eq!(st.modes, vec![0.0]);
        assert_eq!(st.ranges, vec![Some((0.0, 0.0))]);
        let out = transform(&train, &st).unwrap();
        assert_eq!(out.data, vec![0.0, 0.0]);
    }

    #[test]
    fn scaling_and_clamping() {
        let train = ds(&["S1", "x", "c"], &[vec![4.0, 2.0, 5.0], vec![0.0, 4.0, 5.0], vec![1.0, 6.0, 5.0]], 1);
        let st = fit_preprocess(&train).unwrap();
        let out = transform(&train, &st).unwrap();
        let col = |j: usize| out.rows().map(|r| r[j]).collect::<Vec<_>>();
        assert_eq!(col(0), vec![4.0, 0.0, 1.0]);
        assert_eq!(col(1), vec![0.0, 0.5, 1.0]);
        assert_eq!(col(2), vec![0.0, 0.0, 0.0]);

        let test = ds(&["S1", "x", "c"], &[vec![3.0, 8.0, 5.0], vec![3.0, NAN, 1.0]], 1);
        let out = transform(&test, &st).unwrap();
        assert_eq!(out.row(0), &[3.0, 1.0, 0.0]);
        // null imputed with the mode 2 (all distinct, smallest wins)
        assert_eq!(out.row(1), &[3.0, 0.0, 0.0]);
    }

    #[test]
    fn imputed_before_range() {
        let train = ds(&["x"], &[vec![NAN], vec![3.0], vec![3.0], vec![9.0]], 0);
        let st = fit_preprocess(&train).unwrap();
        assert_eq!(st.ranges[0], Some((3.0, 9.0)));
        assert_eq!(st.fitted_on, 4);
    }

    #[test]
    fn column_mismatch_and_empty() {
        let a = ds(&["x"], &[vec![1.0]], 0);
        let b = ds(&["y"], &[vec![1.0]], 0);
        let st = fit_preprocess(&a).unwrap();
        assert!(matches!(transform(&b, &st), Err(Error::ColumnMismatch(_))));
        let empty = ds(&["x"], &[], 0);
        assert!(fit_preprocess(&empty).is_err());
    }
}
