use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Source × target grid of test MAPEs. `cells[t][s]` is the error of the
/// model from `sources[s]` on `targets[t]`; `None` where undefined (the
/// diagonal, or infeasible pairs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    pub cells: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub avg: f64,
    pub sd: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSummary {
    /// Per target (row).
    pub row: Vec<Option<CellStats>>,
    /// Per source (column).
    pub column: Vec<Option<CellStats>>,
    /// Index into `sources` of the lowest-error source for each target.
    pub best_per_target: Vec<Option<usize>>,
    /// Label of the best source per target.
    pub best_source: Vec<Option<String>>,
}

/// Mean and sample standard deviation (n − 1 denominator; 0 for a single
/// value).
pub fn cell_stats(values: &[f64]) -> Option<CellStats> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let avg = values.iter().sum::<f64>() / n as f64;
    let sd = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - avg).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Some(CellStats { avg, sd, n })
}

impl TransferMatrix {
    pub fn new(sources: Vec<String>, targets: Vec<String>) -> Self {
        let cells = vec![vec![None; sources.len()]; targets.len()];
        Self { sources, targets, cells }
    }

    pub fn get(&self, source: &str, target: &str) -> Option<f64> {
        let s = self.sources.iter().position(|x| x == source)?;
        let t = self.targets.iter().position(|x| x == target)?;
        self.cells[t][s]
    }

    pub fn n_defined(&self) -> usize {
        self.cells.iter().flatten().filter(|c| c.is_some()).count()
    }

    fn row_values(&self, t: usize) -> Vec<f64> {
        self.cells[t].iter().flatten().copied().collect()
    }

    fn column_values(&self, s: usize) -> Vec<f64> {
        self.cells.iter().filter_map(|row| row[s]).collect()
    }

    pub fn summary(&self) -> MatrixSummary {
        let best_per_target: Vec<Option<usize>> = self
            .cells
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter_map(|(i, c)| c.map(|v| (i, v)))
                    // Strict comparison keeps the lowest index on ties.
                    .fold(None, |best: Option<(usize, f64)>, (i, v)| match best {
                        Some((_, b)) if b <= v => best,
                        _ => Some((i, v)),
                    })
                    .map(|(i, _)| i)
            })
            .collect();
        MatrixSummary {
            row: (0..self.targets.len()).map(|t| cell_stats(&self.row_values(t))).collect(),
            column: (0..self.sources.len()).map(|s| cell_stats(&self.column_values(s))).collect(),
            best_source: best_per_target.iter().map(|b| b.map(|s| self.sources[s].clone())).collect(),
            best_per_target,
        }
    }

    pub fn best_source(&self, target: &str) -> Option<&str> {
        let t = self.targets.iter().position(|x| x == target)?;
        self.summary().best_per_target[t].map(|s| self.sources[s].as_str())
    }

    /// Largest absolute difference between defined cells of two matrices with
    /// the same layout. Errors if the layouts or defined cells differ.
    pub fn max_abs_diff(&self, other: &TransferMatrix) -> Result<f64> {
        if self.sources != other.sources || self.targets != other.targets {
            return Err(Error::Evaluation("matrices have different layouts".into()));
        }
        let mut worst = 0.0f64;
        for (ra, rb) in self.cells.iter().zip(&other.cells) {
            for (a, b) in ra.iter().zip(rb) {
                match (a, b) {
                    (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                    (None, None) => {}
                    _ => return Err(Error::Evaluation("matrices define different cells".into())),
                }
            }
        }
        Ok(worst)
    }

    /// Rows are targets, columns sources, followed by `AVG,SD,best_source`;
    /// two trailing rows carry per-source `AVG` and `SD`. Undefined cells are
    /// empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let summary = self.summary();
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["target".to_string()];
        header.extend(self.sources.iter().cloned());
        header.extend(["AVG", "SD", "best_source"].map(String::from));
        w.write_record(&header)?;
        for (t, target) in self.targets.iter().enumerate() {
            let mut rec = vec![target.clone()];
            rec.extend(self.cells[t].iter().map(|c| fmt(*c)));
            rec.push(fmt(summary.row[t].map(|s| s.avg)));
            rec.push(fmt(summary.row[t].map(|s| s.sd)));
            rec.push(summary.best_per_target[t].map(|s| self.sources[s].clone()).unwrap_or_default());
            w.write_record(&rec)?;
        }
        for (label, pick) in [("AVG", 0), ("SD", 1)] {
            let mut rec = vec![label.to_string()];
            rec.extend(
                summary
                    .column
                    .iter()
                    .map(|c| fmt(c.map(|s| if pick == 0 { s.avg } else { s.sd }))),
            );
            rec.extend([String::new(), String::new(), String::new()]);
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Row and column AVG/SD over defined cells plus the best source per target.
pub fn transfer_matrix_summary(matrix: &TransferMatrix) -> MatrixSummary {
    matrix.summary()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("b{i}")).collect()
    }

    #[test]
    fn single_cell_sd_is_zero() {
        let s = cell_stats(&[12.5]).unwrap();
        assert_eq!((s.avg, s.sd), (12.5, 0.0));
        assert!(cell_stats(&[]).is_none());
    }

    #[test]
    fn ties_go_to_lowest_source() {
        let mut m = TransferMatrix::new(ids(3), ids(1));
        m.cells[0] = vec![Some(5.0), Some(3.0), Some(3.0)];
        assert_eq!(m.summary().best_per_target, vec![Some(1)]);
        assert_eq!(m.best_source("b1"), Some("b2"));
    }

    #[test]
    fn csv_layout() {
        let mut m = TransferMatrix::new(ids(2), ids(2));
        m.cells[0][1] = Some(10.0);
        m.cells[1][0] = Some(20.0);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "target,b1,b2,AVG,SD,best_source");
        assert_eq!(lines[1], "b1,,10.0000,10.0000,0.0000,b2");
        assert_eq!(lines.len(), 5);
        assert!(lines[3].starts_with("AVG,20.0000,10.0000"));
    }

    #[test]
    fn diff_requires_same_layout() {
        let a = TransferMatrix::new(ids(2), ids(2));
        let b = TransferMatrix::new(ids(3), ids(2));
        assert!(a.max_abs_diff(&b).is_err());
        assert_eq!(a.max_abs_diff(&a).unwrap(), 0.0);
    }
}
