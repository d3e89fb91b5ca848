//! Confusion matrix with weighted accuracy (overall) and unweighted accuracy
//! (mean of per-class recalls, classes without samples skipped).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{ArmError, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub weighted_acc: f64,
    pub unweighted_acc: f64,
    /// `None` for classes with no evaluated samples.
    pub per_class_acc: Vec<Option<f64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_predictions(classes: usize, truth: &[usize], pred: &[usize]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(ArmError::data(format!(
                "{} labels vs {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        let mut cm = Self::new(classes);
        for (&t, &p) in truth.iter().zip(pred) {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.classes || pred >= self.classes {
            return Err(ArmError::data(format!(
                "class pair ({truth}, {pred}) outside {} classes",
                self.classes
            )));
        }
        self.counts[truth * self.classes + pred] += 1;
        Ok(())
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_total(&self, truth: usize) -> u64 {
        self.counts[truth * self.classes..(truth + 1) * self.classes].iter().sum()
    }

    pub fn metrics(&self) -> Result<Metrics> {
        let total = self.total();
        if total == 0 {
            return Err(ArmError::data("confusion matrix is empty"));
        }
        let trace: u64 = (0..self.classes).map(|c| self.get(c, c)).sum();
        let per_class_acc: Vec<Option<f64>> = (0..self.classes)
            .map(|c| {
                let row = self.row_total(c);
                (row > 0).then(|| self.get(c, c) as f64 / row as f64)
            })
            .collect();
        let present: Vec<f64> = per_class_acc.iter().flatten().copied().collect();
        Ok(Metrics {
            weighted_acc: trace as f64 / total as f64,
            unweighted_acc: present.iter().sum::<f64>() / present.len() as f64,
            per_class_acc,
        })
    }

    /// Header `true,<class>...`, then one row per true class.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut out = String::from("true");
        for n in names {
            let _ = write!(out, ",{n}");
        }
        out.push('\n');
        for t in 0..self.classes {
            out.push_str(&names[t]);
            for p in 0..self.classes {
                let _ = write!(out, ",{}", self.get(t, p));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<(Vec<String>, Self)> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| ArmError::data(e.to_string()))?.clone();
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let k = names.len();
        let mut cm = Self::new(k);
        let mut rows = 0;
        for (t, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| ArmError::data(format!("confusion row {}: {e}", t + 2)))?;
            if t >= k || rec.len() != k + 1 {
                return Err(ArmError::data(format!("confusion row {} has the wrong shape", t + 2)));
            }
            for p in 0..k {
                cm.counts[t * k + p] = rec[p + 1]
                    .parse()
                    .map_err(|_| ArmError::data(format!("confusion row {}: bad count", t + 2)))?;
            }
            rows += 1;
        }
        if rows != k {
            return Err(ArmError::data(format!("{rows} confusion rows for {k} classes")));
        }
        Ok((names, cm))
    }
}
