//! Evaluation statistics: accuracy, Cohen's kappa, macro precision / recall /
//! F1, confusion matrices and per-batch accuracy matrices.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::ClassBatchSchedule;
use crate::error::{Error, Result};

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::shape("predictions and labels differ in length"));
    }
    if labels.is_empty() {
        return Err(Error::param("accuracy of an empty set"));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// `K × K` counts, row = true class, column = predicted class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if counts.iter().any(|r| r.len() != k) {
            return Err(Error::shape("confusion matrix must be square"));
        }
        Ok(Self { counts })
    }

    pub fn from_predictions(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::shape("predictions and labels differ in length"));
        }
        let mut counts = vec![vec![0u64; num_classes]; num_classes];
        for (&p, &l) in predictions.iter().zip(labels) {
            if p >= num_classes || l >= num_classes {
                return Err(Error::shape(format!(
                    "class index beyond {num_classes} classes"
                )));
            }
            counts[l][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let k = self.num_classes();
        let header: Vec<String> = (0..k).map(|c| format!("pred_{c}")).collect();
        writeln!(w, "true_class,{}", header.join(","))?;
        for (i, row) in self.counts.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            writeln!(w, "{i},{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// `(p_o − p_e) / (1 − p_e)` with chance agreement from the marginals.
pub fn cohen_kappa(confusion: &ConfusionMatrix) -> Result<f64> {
    let n = confusion.total() as f64;
    if n == 0.0 {
        return Err(Error::UndefinedStatistic("kappa of an empty matrix".into()));
    }
    let p_o = confusion.trace() as f64 / n;
    let p_e: f64 = (0..confusion.num_classes())
        .map(|i| confusion.row_sum(i) as f64 * confusion.col_sum(i) as f64)
        .sum::<f64>()
        / (n * n);
    if p_e >= 1.0 {
        return Err(Error::UndefinedStatistic(
            "chance agreement is 1 (single class)".into(),
        ));
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Unweighted means over classes. A class that is never predicted (or never
/// present) contributes 0 to the undefined ratio, and so does its F1.
pub fn macro_prf(confusion: &ConfusionMatrix) -> MacroScores {
    let k = confusion.num_classes();
    if k == 0 {
        return MacroScores {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        };
    }
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
    for i in 0..k {
        let tp = confusion.counts[i][i];
        let prec = ratio(tp, confusion.col_sum(i));
        let rec = ratio(tp, confusion.row_sum(i));
        p += prec;
        r += rec;
        if prec + rec > 0.0 {
            f += 2.0 * prec * rec / (prec + rec);
        }
    }
    let k = k as f64;
    MacroScores {
        precision: p / k,
        recall: r / k,
        f1: f / k,
    }
}

/// Predictions made after one increment over the cumulative test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncrementPredictions {
    pub increment: usize,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
}

/// Rows are increments, columns are class batches; `None` for batches not
/// yet seen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub entries: Vec<Vec<Option<f64>>>,
}

impl AccuracyMatrix {
    pub fn get(&self, time: usize, batch: usize) -> Option<f64> {
        self.entries.get(time).and_then(|r| r.get(batch).copied().flatten())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let cols = self.entries.first().map_or(0, Vec::len);
        let header: Vec<String> = (0..cols).map(|b| format!("batch_{b}")).collect();
        writeln!(w, "increment,{}", header.join(","))?;
        for (t, row) in self.entries.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .map(|v| v.map_or(String::new(), |a| format!("{a:.6}")))
                .collect();
            writeln!(w, "{t},{}", cells.join(","))?;
        }
        Ok(())
    }
}

pub fn accuracy_matrix(records: &[IncrementPredictions], schedule: &ClassBatchSchedule) -> Result<AccuracyMatrix> {
    if records.len() > schedule.len() {
        return Err(Error::Log("more increments than schedule groups".into()));
    }
    let mut entries = Vec::with_capacity(records.len());
    for (t, rec) in records.iter().enumerate() {
        if rec.increment != t {
            return Err(Error::Log(format!(
                "expected increment {t}, found {}",
                rec.increment
            )));
        }
        if rec.predictions.len() != rec.labels.len() {
            return Err(Error::Log(format!("increment {t} is misaligned")));
        }
        let mut row = vec![None; schedule.len()];
        for (b, group) in schedule.groups().iter().enumerate().take(t + 1) {
            let (mut hits, mut total) = (0usize, 0usize);
            for (p, l) in rec.predictions.iter().zip(&rec.labels) {
                if group.contains(l) {
                    total += 1;
                    hits += usize::from(p == l);
                }
            }
            if total > 0 {
                row[b] = Some(hits as f64 / total as f64);
            }
        }
        entries.push(row);
    }
    Ok(AccuracyMatrix { entries })
}
