use super::{evaluate_set, fit, split_records, Checkpoint, TrainConfig, TrainData};
use crate::dataset::{DatasetManifest, LoadedSet, SplitSpec};
use crate::error::Result;
use crate::model::{init_params, HeadKind, ModelSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub model: usize,
    pub attention: bool,
    pub backbone: String,
    pub epochs: usize,
    pub batch: usize,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

const COLUMNS: [&str; 8] = ["model", "attention", "backbone", "epoch", "batch", "train_acc", "val_acc", "test_acc"];

impl ComparisonRow {
    fn cells(&self) -> [String; 8] {
        let acc = |a: Option<f64>| a.map_or(String::new(), |v| format!("{v:.4}"));
        [
            self.model.to_string(),
            if self.attention { "yes" } else { "no" }.to_string(),
            self.backbone.clone(),
            self.epochs.to_string(),
            self.batch.to_string(),
            acc(Some(self.train_acc)),
            acc(self.val_acc),
            acc(self.test_acc),
        ]
    }
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = COLUMNS.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.cells().join(","));
            out.push('\n');
        }
        out
    }

    /// Space-aligned table for terminals.
    pub fn to_text(&self) -> String {
        let cells: Vec<[String; 8]> = self.rows.iter().map(ComparisonRow::cells).collect();
        let widths: Vec<usize> = (0..8)
            .map(|j| cells.iter().map(|r| r[j].len()).chain([COLUMNS[j].len()]).max().unwrap_or(0))
            .collect();
        let line = |row: Vec<&str>| -> String {
            let padded: Vec<String> = row.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
            padded.join("  ").trim_end().to_string() + "\n"
        };
        let mut out = line(COLUMNS.to_vec());
        for r in &cells {
            out.push_str(&line(r.iter().map(String::as_str).collect()));
        }
        out
    }
}

/// Trains the CSAB and plain heads on `base`'s backbone with identical seeds
/// and data order, then reports final train/val/test accuracy for each.
/// Train accuracy is measured on unaugmented training images after the
/// last epoch.
pub fn compare_models(
    manifest: &DatasetManifest,
    split: &SplitSpec,
    base: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<(Comparison, Vec<Checkpoint>)> {
    cfg.validate()?;
    let (train, val, test) = split_records(manifest, split, cfg)?;
    let size = base.input_size;
    let data = TrainData {
        train: LoadedSet::from_records(&train, size)?,
        val: LoadedSet::from_records(&val, size)?,
    };
    let test = LoadedSet::from_records(&test, size)?;

    let mut rows = Vec::new();
    let mut checkpoints = Vec::new();
    for (i, head) in [HeadKind::Csab, HeadKind::Plain].into_iter().enumerate() {
        let spec = base.with_head(head);
        spec.validate()?;
        let mut params = init_params(&spec, cfg.seed)?;
        let history = fit(&spec, &mut params, &data, cfg)?;
        let score = |set: &LoadedSet| -> Result<Option<f64>> {
            if set.is_empty() {
                Ok(None)
            } else {
                Ok(Some(evaluate_set(&spec, &params, set)?.0))
            }
        };
        rows.push(ComparisonRow {
            model: i + 1,
            attention: head == HeadKind::Csab,
            backbone: spec.backbone_name.clone(),
            epochs: cfg.epochs,
            batch: cfg.batch_size,
            train_acc: evaluate_set(&spec, &params, &data.train)?.0,
            val_acc: score(&data.val)?,
            test_acc: score(&test)?,
        });
        checkpoints.push(Checkpoint {
            spec,
            params,
            label_map: manifest.label_map.clone(),
            train_config: cfg.clone(),
            split: Some(split.clone()),
            history,
        });
    }
    Ok((Comparison { rows }, checkpoints))
}
