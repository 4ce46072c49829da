//! Confusion matrices and accuracy.

use serde::Serialize;

use crate::error::{Error, Result};

/// K×K counts; rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    classes: Vec<String>,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::invalid("confusion matrix", "no classes"));
        }
        let k = classes.len();
        Ok(Self {
            classes,
            counts: vec![0; k * k],
        })
    }

    /// Builds a matrix from explicit rows.
    pub fn from_rows(classes: Vec<String>, rows: &[Vec<u64>]) -> Result<Self> {
        let k = classes.len();
        if rows.len() != k || rows.iter().any(|r| r.len() != k) {
            return Err(Error::shape(
                "confusion matrix",
                format!("expected {k}x{k} counts for {k} class names"),
            ));
        }
        let mut m = Self::new(classes)?;
        m.counts = rows.concat();
        Ok(m)
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let k = self.class_count();
        for label in [truth, predicted] {
            if label >= k {
                return Err(Error::LabelOutOfRange { label, classes: k });
            }
        }
        self.counts[truth * k + predicted] += 1;
        Ok(())
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.class_count() + predicted]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        let k = self.class_count();
        &self.counts[truth * k..(truth + 1) * k]
    }

    pub fn row_sums(&self) -> Vec<u64> {
        (0..self.class_count())
            .map(|i| self.row(i).iter().sum())
            .collect()
    }

    pub fn trace(&self) -> u64 {
        (0..self.class_count()).map(|i| self.get(i, i)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Trace over total. `None` for an empty matrix.
    pub fn accuracy(&self) -> Option<f64> {
        match self.total() {
            0 => None,
            n => Some(self.trace() as f64 / n as f64),
        }
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if self.classes != other.classes {
            return Err(Error::invalid("confusion matrix", "class tables differ"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// CSV with a header row of class names and one row per true class.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["true\\predicted".to_string()];
        header.extend(self.classes.iter().cloned());
        w.write_record(&header)?;
        for (i, name) in self.classes.iter().enumerate() {
            let mut rec = vec![name.clone()];
            rec.extend(self.row(i).iter().map(u64::to_string));
            w.write_record(&rec)?;
        }
        w.into_inner()
            .map_err(|e| Error::invalid("confusion matrix", e.to_string()))
    }
}

/// Accuracy as a percentage with two decimals, e.g. `58.68`.
pub fn format_percent(accuracy: f64) -> String {
    format!("{:.2}", accuracy * 100.0)
}

/// Mean and sample standard deviation of the `k` best accuracies.
pub fn top_k_summary(accuracies: &[f64], k: usize) -> Option<(f64, f64)> {
    if k == 0 || accuracies.len() < k {
        return None;
    }
    let mut sorted = accuracies.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let best = &sorted[..k];
    let mean = best.iter().sum::<f64>() / k as f64;
    let std = if k > 1 {
        (best.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some((mean, std))
}
