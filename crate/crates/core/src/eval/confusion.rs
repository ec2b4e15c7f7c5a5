//! Confusion matrix between a reference and a candidate label map, and the
//! precision/recall/F1 summaries derived from it.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::UNKNOWN;

/// Rows are reference classes, columns candidate classes. Row/column `i`
/// holds label code `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    names: Vec<String>,
    counts: Array2<u64>,
}

impl ConfusionMatrix {
    pub fn new(names: Vec<String>, counts: Array2<u64>) -> Result<Self> {
        let (r, c) = counts.dim();
        if r != c || r != names.len() {
            return Err(Error::Shape(format!(
                "{r}×{c} counts for {} class names",
                names.len()
            )));
        }
        Ok(ConfusionMatrix { names, counts })
    }

    pub fn zeros(names: Vec<String>) -> Self {
        let k = names.len();
        ConfusionMatrix {
            names,
            counts: Array2::zeros((k, k)),
        }
    }

    /// Counts pixels that are known in both maps.
    pub fn accumulate(&mut self, reference: &Array2<u8>, candidate: &Array2<u8>) -> Result<()> {
        if reference.dim() != candidate.dim() {
            return Err(Error::Shape(format!(
                "reference {:?} vs candidate {:?}",
                reference.dim(),
                candidate.dim()
            )));
        }
        let k = self.num_classes();
        let mut bad = None;
        Zip::from(reference).and(candidate).for_each(|&r, &c| {
            if r == UNKNOWN || c == UNKNOWN {
                return;
            }
            if r as usize > k || c as usize > k {
                bad.get_or_insert((r, c));
                return;
            }
            self.counts[(r as usize - 1, c as usize - 1)] += 1;
        });
        match bad {
            Some((r, c)) => Err(Error::Contract(format!(
                "label pair ({r}, {c}) outside the {k}-class catalog"
            ))),
            None => Ok(()),
        }
    }

    pub fn from_labels(
        names: Vec<String>,
        reference: &Array2<u8>,
        candidate: &Array2<u8>,
    ) -> Result<Self> {
        let mut m = Self::zeros(names);
        m.accumulate(reference, candidate)?;
        Ok(m)
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Shape(
                "merging matrices over different classes".into(),
            ));
        }
        self.counts += &other.counts;
        Ok(())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }

    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.sum()
    }

    pub fn trace(&self) -> u64 {
        self.counts.diag().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.sum_axis(Axis(1)).to_vec()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        self.counts.sum_axis(Axis(0)).to_vec()
    }

    /// `1 − trace / total`.
    pub fn disagreement_ratio(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Empty("confusion matrix"));
        }
        Ok(1.0 - self.trace() as f64 / total as f64)
    }

    pub fn prf1(&self) -> Result<Metrics> {
        let all: Vec<usize> = (0..self.num_classes()).collect();
        self.prf1_subset(&all)
    }

    /// Per-class metrics of the listed classes (computed on the full
    /// matrix), their plain and support-weighted means, and the accuracy
    /// of the sub-matrix restricted to those classes.
    pub fn prf1_subset(&self, classes: &[usize]) -> Result<Metrics> {
        if self.total() == 0 {
            return Err(Error::Empty("confusion matrix"));
        }
        if let Some(&i) = classes.iter().find(|&&i| i >= self.num_classes()) {
            return Err(Error::Shape(format!("class index {i} out of range")));
        }
        if classes.is_empty() {
            return Err(Error::Empty("class subset"));
        }
        let rows = self.row_sums();
        let cols = self.col_sums();
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let per_class: Vec<ClassMetrics> = classes
            .iter()
            .map(|&i| {
                let tp = self.counts[(i, i)];
                let precision = ratio(tp, cols[i]);
                let recall = ratio(tp, rows[i]);
                ClassMetrics {
                    name: self.names[i].clone(),
                    precision,
                    recall,
                    f1: harmonic(precision, recall),
                    support: rows[i],
                }
            })
            .collect();
        let support: u64 = per_class.iter().map(|m| m.support).sum();
        // Classes absent from both maps stay out of the unweighted mean.
        let present: Vec<&ClassMetrics> = classes
            .iter()
            .zip(&per_class)
            .filter(|(&i, _)| rows[i] + cols[i] > 0)
            .map(|(_, m)| m)
            .collect();
        let unweighted = |f: fn(&ClassMetrics) -> f64| {
            if present.is_empty() {
                0.0
            } else {
                present.iter().map(|m| f(m)).sum::<f64>() / present.len() as f64
            }
        };
        let mean = Averages {
            precision: unweighted(|m| m.precision),
            recall: unweighted(|m| m.recall),
            f1: unweighted(|m| m.f1),
        };
        let weighted = |f: fn(&ClassMetrics) -> f64| {
            if support == 0 {
                0.0
            } else {
                per_class
                    .iter()
                    .map(|m| f(m) * m.support as f64)
                    .sum::<f64>()
                    / support as f64
            }
        };
        let weighted_mean = Averages {
            precision: weighted(|m| m.precision),
            recall: weighted(|m| m.recall),
            f1: weighted(|m| m.f1),
        };
        let mut sub_total = 0;
        let mut sub_trace = 0;
        for &r in classes {
            sub_trace += self.counts[(r, r)];
            for &c in classes {
                sub_total += self.counts[(r, c)];
            }
        }
        Ok(Metrics {
            per_class,
            mean,
            weighted_mean,
            accuracy: ratio(sub_trace, sub_total),
            support,
        })
    }

    /// Reads a matrix with a header row and a leading name column.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let bad = |m: String| Error::Contract(format!("confusion CSV: {m}"));
        let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
        let names: Vec<String> = header
            .iter()
            .skip(1)
            .map(|s| s.trim().to_string())
            .collect();
        let k = names.len();
        let mut counts = Array2::zeros((k, k));
        let mut n_rows = 0;
        for (i, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| bad(e.to_string()))?;
            if i >= k {
                return Err(bad(format!("more than {k} rows")));
            }
            if record.get(0).map(str::trim) != Some(names[i].as_str()) {
                return Err(bad(format!("row {i} is not labelled {:?}", names[i])));
            }
            if record.len() != k + 1 {
                return Err(bad(format!("row {i} has {} fields", record.len())));
            }
            for (j, field) in record.iter().skip(1).enumerate() {
                counts[(i, j)] = field
                    .trim()
                    .parse()
                    .map_err(|_| bad(format!("bad count {field:?} at ({i}, {j})")))?;
            }
            n_rows += 1;
        }
        if n_rows != k {
            return Err(bad(format!("{n_rows} rows for {k} columns")));
        }
        Self::new(names, counts)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file).map_err(|e| match e {
            Error::Contract(m) => Error::format(path, m),
            other => other,
        })
    }

    pub fn to_csv_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let csv_err = |e: csv::Error| Error::Contract(format!("writing confusion CSV: {e}"));
        let mut header = vec!["reference\\candidate".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (name, row) in self.names.iter().zip(self.counts.rows()) {
            let mut record = vec![name.clone()];
            record.extend(row.iter().map(u64::to_string));
            w.write_record(&record).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Contract(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::npy::write_atomic(path, |out| self.to_csv_writer(out))
    }
}

pub fn harmonic(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Reference pixels of the class.
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub per_class: Vec<ClassMetrics>,
    pub mean: Averages,
    pub weighted_mean: Averages,
    pub accuracy: f64,
    pub support: u64,
}
