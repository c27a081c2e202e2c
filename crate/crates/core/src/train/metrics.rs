use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        for label in [truth, predicted] {
            if label >= self.classes {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: self.classes,
                });
            }
        }
        self.counts[truth * self.classes + predicted] += 1;
        Ok(())
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    /// Samples per true class.
    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.chunks(self.classes).map(|r| r.iter().sum()).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    /// `trace / total`; zero for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.trace() as f64 / t as f64,
        }
    }

    /// Grid with class names as header row and first column.
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let name = |i: usize| class_names.get(i).cloned().unwrap_or_else(|| i.to_string());
        let mut out = String::from("true\\predicted");
        for j in 0..self.classes {
            out.push(',');
            out.push_str(&name(j));
        }
        out.push('\n');
        for i in 0..self.classes {
            out.push_str(&name(i));
            for j in 0..self.classes {
                out.push_str(&format!(",{}", self.get(i, j)));
            }
            out.push('\n');
        }
        out
    }
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's (augmented) training batches.
    pub train_loss: f64,
    /// Accuracy on those same batches, as seen during the epoch.
    pub train_acc: f64,
    /// Unaugmented validation accuracy; `None` without a validation set.
    pub val_acc: Option<f64>,
}

/// `epoch,train_loss,train_acc,val_acc` with an empty cell for missing values.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,train_acc,val_acc\n");
    for h in history {
        let val = h.val_acc.map_or(String::new(), |v| format!("{v:.6}"));
        out.push_str(&format!("{},{:.6},{:.6},{}\n", h.epoch, h.train_loss, h.train_acc, val));
    }
    out
}
