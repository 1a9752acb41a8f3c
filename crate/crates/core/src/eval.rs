//! Per-pixel benchmark metrics and their reports.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{colorize, write_pnm, CLASS_NAMES};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub f1: Vec<f64>,
    /// Classes with no pixels in truth or prediction; their F1 reads 0.
    pub absent: Vec<bool>,
    /// Fraction of correct pixels in `[0, 1]`.
    pub overall_accuracy: f64,
    pub total: u64,
}

pub fn evaluate(pred: &[u8], truth: &[u8], num_classes: usize) -> Result<Metrics> {
    if pred.len() != truth.len() {
        return Err(Error::Usage(format!(
            "prediction has {} pixels, truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    let mut confusion = vec![vec![0u64; num_classes]; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        let (p, t) = (p as usize, t as usize);
        if p >= num_classes || t >= num_classes {
            return Err(Error::Usage(format!(
                "label {} out of range for {num_classes} classes",
                p.max(t)
            )));
        }
        confusion[t][p] += 1;
    }
    let mut f1 = Vec::with_capacity(num_classes);
    let mut absent = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let tp = confusion[c][c];
        let fn_: u64 = confusion[c].iter().sum::<u64>() - tp;
        let fp: u64 = (0..num_classes).map(|t| confusion[t][c]).sum::<u64>() - tp;
        let denom = 2 * tp + fp + fn_;
        absent.push(denom == 0);
        f1.push(if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        });
    }
    let total = pred.len() as u64;
    let correct: u64 = (0..num_classes).map(|c| confusion[c][c]).sum();
    Ok(Metrics {
        confusion,
        f1,
        absent,
        overall_accuracy: if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        },
        total,
    })
}

fn class_name(c: usize) -> String {
    CLASS_NAMES
        .get(c)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("class{c}"))
}

impl Metrics {
    /// Header: per-class F1 in class order, then overall accuracy in percent.
    pub fn csv_header(&self) -> String {
        let mut cols: Vec<String> = (0..self.f1.len())
            .map(|c| format!("f1_{}", class_name(c)))
            .collect();
        cols.push("overall_accuracy_pct".into());
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols: Vec<String> = self.f1.iter().map(|f| format!("{f:.6}")).collect();
        cols.push(format!("{:.6}", 100.0 * self.overall_accuracy));
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", self.csv_header(), self.csv_row())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (c, f) in self.f1.iter().enumerate() {
            let note = if self.absent[c] { "  (absent)" } else { "" };
            let _ = writeln!(s, "{:<22} F1 {:.6}{note}", class_name(c), f);
        }
        let _ = writeln!(
            s,
            "{:<22} {:.6} %",
            "overall accuracy",
            100.0 * self.overall_accuracy
        );
        let _ = writeln!(s, "confusion (rows truth, columns predicted):");
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "  {}", cells.join(" "));
        }
        s
    }
}

/// Per-pixel agreement: 255 where prediction equals truth, 0 elsewhere.
pub fn agreement_mask(pred: &[u8], truth: &[u8]) -> Result<Vec<u8>> {
    if pred.len() != truth.len() {
        return Err(Error::Usage(
            "agreement needs equal-sized label maps".into(),
        ));
    }
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(p, t)| if p == t { 255 } else { 0 })
        .collect())
}

/// Writes the CSV to `csv`, plus a text rendering (`.txt`), a colorized
/// prediction (`.pred.ppm`) and the agreement mask (`.agreement.pgm`)
/// next to it.
pub fn write_report(
    csv: &Path,
    metrics: &Metrics,
    pred: &[u8],
    truth: &[u8],
    height: usize,
    width: usize,
) -> Result<()> {
    std::fs::write(csv, metrics.to_csv()).map_err(|e| Error::io(csv, e))?;
    let txt = csv.with_extension("txt");
    std::fs::write(&txt, metrics.to_text()).map_err(|e| Error::io(&txt, e))?;
    let [r, g, b] = colorize(pred);
    write_pnm(
        &csv.with_extension("pred.ppm"),
        width,
        height,
        &[&r, &g, &b],
    )?;
    let mask = agreement_mask(pred, truth)?;
    write_pnm(
        &csv.with_extension("agreement.pgm"),
        width,
        height,
        &[&mask],
    )
}
