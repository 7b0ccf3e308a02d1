use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::experiment::CellResult;
use crate::distill::Mode;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub mode: Mode,
    pub subset_pct: f64,
    pub seed: usize,
    /// Empty when the cell failed.
    pub accuracy: Option<f64>,
    /// `ok` or the error message.
    pub status: String,
}

impl ResultRow {
    pub fn from_result(r: &CellResult) -> Self {
        let (accuracy, status) = match &r.outcome {
            Ok(rep) => (Some(rep.accuracy), "ok".to_string()),
            Err(e) => (None, e.replace(['\n', '\r'], " ")),
        };
        Self { mode: r.cell.mode, subset_pct: r.cell.subset_pct, seed: r.cell.rep, accuracy, status }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub mode: Mode,
    pub subset_pct: f64,
    pub seed: usize,
    pub wall_s: f64,
    pub peak_bytes: Option<u64>,
}

impl CostRow {
    pub fn from_result(r: &CellResult) -> Self {
        Self {
            mode: r.cell.mode,
            subset_pct: r.cell.subset_pct,
            seed: r.cell.rep,
            wall_s: r.cost.wall_s,
            peak_bytes: r.cost.peak_bytes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub mode: Mode,
    pub subset_pct: f64,
    pub mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub std: f64,
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Successful accuracies of `mode` at `subset_pct`.
pub fn accuracies(rows: &[ResultRow], mode: Mode, subset_pct: f64) -> Vec<f64> {
    rows.iter().filter(|r| r.mode == mode && r.subset_pct == subset_pct).filter_map(|r| r.accuracy).collect()
}

/// Mean and sample std per (mode, subset) in first-appearance order.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(Mode, f64)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.mode, r.subset_pct)) {
            keys.push((r.mode, r.subset_pct));
        }
    }
    keys.into_iter()
        .filter_map(|(mode, subset_pct)| {
            let a = accuracies(rows, mode, subset_pct);
            (!a.is_empty()).then(|| SummaryRow { mode, subset_pct, mean: mean(&a), std: sample_std(&a) })
        })
        .collect()
}

pub fn accuracy_of(confusion: &[Vec<usize>]) -> f64 {
    let total: usize = confusion.iter().flatten().sum();
    let hits: usize = confusion.iter().enumerate().map(|(i, row)| row[i]).sum();
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Rows are true classes, columns predictions; `normalize` divides each row
/// by its total.
pub fn confusion_csv(confusion: &[Vec<usize>], normalize: bool) -> String {
    let k = confusion.len();
    let mut out = String::from("true");
    for c in 0..k {
        out.push_str(&format!(",pred{c}"));
    }
    out.push('\n');
    for (i, row) in confusion.iter().enumerate() {
        out.push_str(&i.to_string());
        let total: usize = row.iter().sum();
        for &v in row {
            if normalize {
                let f = if total == 0 { 0.0 } else { v as f64 / total as f64 };
                out.push_str(&format!(",{f:.6}"));
            } else {
                out.push_str(&format!(",{v}"));
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Io { path: path.to_path_buf(), source: e.into() };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let csv_err = |e: csv::Error| Error::Io { path: path.to_path_buf(), source: e.into() };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<std::result::Result<Vec<T>, _>>().map_err(csv_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statistics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!((sample_std(&[1.0, 2.0, 3.0, 4.0]) - 1.2909944).abs() < 1e-6);
        assert_eq!(sample_std(&[5.0]), 0.0);
    }

    #[test]
    fn confusion_rows_are_true_classes() {
        let c = vec![vec![3, 1], vec![0, 4]];
        assert_eq!(accuracy_of(&c), 0.875);
        assert_eq!(confusion_csv(&c, false), "true,pred0,pred1\n0,3,1\n1,0,4\n");
        assert_eq!(confusion_csv(&c, true), "true,pred0,pred1\n0,0.750000,0.250000\n1,0.000000,1.000000\n");
    }

    #[test]
    fn results_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        let rows = vec![
            ResultRow { mode: Mode::Ours, subset_pct: 5.0, seed: 0, accuracy: Some(0.5), status: "ok".into() },
            ResultRow { mode: Mode::Cm1, subset_pct: 5.0, seed: 1, accuracy: None, status: "diverged, loss nan".into() },
        ];
        write_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("mode,subset_pct,seed,accuracy,status\nours,5.0,0,0.5,ok\n"), "{text}");
        assert_eq!(read_csv::<ResultRow>(&path).unwrap(), rows);
        let s = summarize(&rows);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].mean, 0.5);
    }
}
