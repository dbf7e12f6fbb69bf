//! Overlap and size metrics, fold aggregation, and the text/CSV tables the
//! experiment reports are built from.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{LabelVolume, Structure, VolumeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("cannot aggregate an empty score list")]
    Empty,
    #[error("score {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("table has no cell for model `{model}`, row `{row}`")]
    MissingCell { model: String, row: String },
    #[error("test layout needs a volume-similarity row for every model; missing for `{0}`")]
    MissingVs(String),
    #[error("no rows to tabulate")]
    NoRows,
}

fn counts(
    pred: &LabelVolume,
    gt: &LabelVolume,
    member: impl Fn(u8) -> bool,
) -> Result<(usize, usize, usize), MetricsError> {
    pred.same_grid(gt)?;
    let (mut a, mut b, mut both) = (0, 0, 0);
    for (&p, &g) in pred.classes().iter().zip(gt.classes()) {
        let (ip, ig) = (member(p), member(g));
        a += ip as usize;
        b += ig as usize;
        both += (ip && ig) as usize;
    }
    Ok((a, b, both))
}

/// `2|A∩B| / (|A| + |B|)` over voxels of `class_id`; 1 when both are empty.
pub fn dice(pred: &LabelVolume, gt: &LabelVolume, class_id: u8) -> Result<f64, MetricsError> {
    let (a, b, both) = counts(pred, gt, |c| c == class_id)?;
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (a + b) as f64)
}

/// `1 − ||A| − |B|| / (|A| + |B|)` over the union of `classes`; 1 when both
/// are empty.
pub fn volume_similarity(
    pred: &LabelVolume,
    gt: &LabelVolume,
    classes: &[u8],
) -> Result<f64, MetricsError> {
    let (a, b, _) = counts(pred, gt, |c| classes.contains(&c))?;
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(1.0 - a.abs_diff(b) as f64 / (a + b) as f64)
}

/// Foreground classes making up the "heart volume".
pub const HEART_CLASSES: [u8; 3] = [1, 2, 3];

/// Arithmetic mean and population standard deviation.
pub fn aggregate(scores: &[f64]) -> Result<(f64, f64), MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Scores of one case: Dice per structure and an optional heart-volume VS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureScores {
    pub case_id: String,
    pub dice: BTreeMap<Structure, f64>,
    pub vs: Option<f64>,
}

impl StructureScores {
    /// Dice for every structure and VS over the heart union.
    pub fn compute(
        case_id: impl Into<String>,
        pred: &LabelVolume,
        gt: &LabelVolume,
    ) -> Result<Self, MetricsError> {
        let mut dice_map = BTreeMap::new();
        for s in Structure::ALL {
            dice_map.insert(s, dice(pred, gt, s.class_id())?);
        }
        Ok(Self {
            case_id: case_id.into(),
            dice: dice_map,
            vs: Some(volume_similarity(pred, gt, &HEART_CLASSES)?),
        })
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        for &v in self.dice.values().chain(self.vs.iter()) {
            if !(0.0..=1.0).contains(&v) {
                return Err(MetricsError::OutOfRange(v));
            }
        }
        Ok(())
    }
}

/// Row key of an aggregate table: a structure's Dice or the heart-volume VS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    Dice(Structure),
    HeartVs,
}

impl Metric {
    pub fn label(self) -> String {
        match self {
            Metric::Dice(s) => s.name().to_string(),
            Metric::HeartVs => "Heart Volume VS".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub model: String,
    pub metric: Metric,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl AggregateRow {
    pub fn from_scores(
        model: impl Into<String>,
        metric: Metric,
        scores: &[f64],
    ) -> Result<Self, MetricsError> {
        let (mean, std) = aggregate(scores)?;
        Ok(Self {
            model: model.into(),
            metric,
            mean,
            std,
            n: scores.len(),
        })
    }

    /// `0.926 ± 0.006`.
    pub fn cell(&self) -> String {
        format!("{:.3} ± {:.3}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableLayout {
    /// Dice rows per structure.
    Validation,
    /// Dice rows plus a heart-volume VS row.
    Test,
}

/// One column per model (first-seen order), one row per structure, plus the
/// VS row in the test layout. The best mean in each row is marked with `*`.
pub fn report_tables(rows: &[AggregateRow], layout: TableLayout) -> Result<String, MetricsError> {
    if rows.is_empty() {
        return Err(MetricsError::NoRows);
    }
    let mut models: Vec<&str> = Vec::new();
    for r in rows {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    let mut metrics: Vec<Metric> = Vec::new();
    for r in rows {
        if let Metric::Dice(_) = r.metric {
            if !metrics.contains(&r.metric) {
                metrics.push(r.metric);
            }
        }
    }
    metrics.sort();
    if layout == TableLayout::Test {
        for m in &models {
            if !rows
                .iter()
                .any(|r| r.model == *m && r.metric == Metric::HeartVs)
            {
                return Err(MetricsError::MissingVs(m.to_string()));
            }
        }
        metrics.push(Metric::HeartVs);
    }

    let lookup = |model: &str, metric: Metric| {
        rows.iter()
            .find(|r| r.model == model && r.metric == metric)
            .ok_or_else(|| MetricsError::MissingCell {
                model: model.to_string(),
                row: metric.label(),
            })
    };

    let mut grid: Vec<(String, Vec<String>)> = Vec::with_capacity(metrics.len());
    for &metric in &metrics {
        let cells: Vec<&AggregateRow> = models
            .iter()
            .map(|m| lookup(m, metric))
            .collect::<Result<_, _>>()?;
        let best = cells
            .iter()
            .map(|c| c.mean)
            .fold(f64::NEG_INFINITY, f64::max);
        let text = cells
            .iter()
            .map(|c| {
                // Compare at display precision so visible ties are all marked.
                let star = if format!("{:.3}", c.mean) == format!("{best:.3}") {
                    "*"
                } else {
                    ""
                };
                format!("{}{star}", c.cell())
            })
            .collect();
        grid.push((metric.label(), text));
    }

    let first_width = grid
        .iter()
        .map(|(l, _)| l.chars().count())
        .chain(["Structure".len()])
        .max()
        .unwrap_or(0);
    let widths: Vec<usize> = models
        .iter()
        .enumerate()
        .map(|(j, m)| {
            grid.iter()
                .map(|(_, cells)| cells[j].chars().count())
                .chain([m.chars().count()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let pad = |s: &str, w: usize| format!("{s}{}", " ".repeat(w - s.chars().count()));

    let mut out = String::new();
    let mut line = pad("Structure", first_width);
    for (m, w) in models.iter().zip(&widths) {
        line.push_str(" | ");
        line.push_str(&pad(m, *w));
    }
    out.push_str(line.trim_end());
    out.push('\n');
    let rule: usize = first_width + widths.iter().map(|w| w + 3).sum::<usize>();
    out.push_str(&"-".repeat(rule));
    out.push('\n');
    for (label, cells) in &grid {
        let mut line = pad(label, first_width);
        for (c, w) in cells.iter().zip(&widths) {
            line.push_str(" | ");
            line.push_str(&pad(c, *w));
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    Ok(out)
}

/// `model,structure,mean,std,n`.
pub fn aggregate_rows_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from("model,structure,mean,std,n\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.model,
            r.metric.label(),
            r.mean,
            r.std,
            r.n
        );
    }
    out
}

/// `case_id,structure,dice` rows, plus `Heart Volume VS` rows when present.
pub fn structure_scores_csv(scores: &[StructureScores]) -> String {
    let mut out = String::from("case_id,metric,value\n");
    for s in scores {
        for (structure, d) in &s.dice {
            let _ = writeln!(out, "{},{},{}", s.case_id, structure, d);
        }
        if let Some(vs) = s.vs {
            let _ = writeln!(out, "{},{},{}", s.case_id, Metric::HeartVs.label(), vs);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(dims: [usize; 3], fill: impl Fn(usize, usize, usize) -> u8) -> LabelVolume {
        let mut v = Vec::new();
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    v.push(fill(x, y, z));
                }
            }
        }
        LabelVolume::new(dims, [1.0; 3], v).unwrap()
    }

    #[test]
    fn offset_cubes_give_half() {
        let a = labels([4, 2, 2], |x, _, _| (x < 2) as u8);
        let b = labels([4, 2, 2], |x, _, _| (1..3).contains(&x) as u8);
        assert_eq!(dice(&a, &b, 1).unwrap(), 0.5);
    }

    #[test]
    fn empty_conventions() {
        let a = labels([2, 2, 2], |_, _, _| 0);
        assert_eq!(dice(&a, &a, 2).unwrap(), 1.0);
        assert_eq!(volume_similarity(&a, &a, &[1]).unwrap(), 1.0);
        let b = labels([2, 2, 2], |_, _, _| 1);
        assert_eq!(dice(&a, &b, 1).unwrap(), 0.0);
        assert_eq!(volume_similarity(&b, &a, &[1]).unwrap(), 0.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = labels([2, 2, 2], |_, _, _| 0);
        let b = labels([2, 2, 1], |_, _, _| 0);
        assert!(dice(&a, &b, 1).is_err());
        assert!(volume_similarity(&a, &b, &[1]).is_err());
    }

    #[test]
    fn aggregate_rejects_empty() {
        assert_eq!(aggregate(&[]), Err(MetricsError::Empty));
        assert_eq!(aggregate(&[0.5]).unwrap(), (0.5, 0.0));
    }
}
