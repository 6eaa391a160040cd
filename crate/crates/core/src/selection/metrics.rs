use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::SelectionError;
use crate::dataset::{ParentClass, SubClass};
use crate::nn::NUM_CLASSES;

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Rows are true subclasses, columns predicted subclasses.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix8 {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix8 {
    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn diagonal_total(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for s in SubClass::ALL {
            write!(out, ",{s}").unwrap();
        }
        out.push('\n');
        for (s, row) in SubClass::ALL.iter().zip(&self.counts) {
            out.push_str(s.as_str());
            for c in row {
                write!(out, ",{c}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Aligned grid with row and column labels.
    pub fn render(&self) -> String {
        let labels: Vec<&str> = SubClass::ALL.iter().map(|s| s.as_str()).collect();
        let rows: Vec<(&str, Vec<u64>)> = labels.iter().zip(&self.counts).map(|(l, r)| (*l, r.to_vec())).collect();
        render_grid(&labels, &rows)
    }
}

/// Keyword-positive binary confusion matrix.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix2 {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl ConfusionMatrix2 {
    pub fn add(&mut self, truth: ParentClass, predicted: ParentClass) {
        match (truth, predicted) {
            (ParentClass::Name, ParentClass::Name) => self.tp += 1,
            (ParentClass::Name, ParentClass::NotName) => self.fn_ += 1,
            (ParentClass::NotName, ParentClass::Name) => self.fp += 1,
            (ParentClass::NotName, ParentClass::NotName) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }

    /// Zero when the matrix is empty.
    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn to_csv(&self) -> String {
        format!(
            "true\\predicted,NAME,NOT_NAME\nNAME,{},{}\nNOT_NAME,{},{}\n",
            self.tp, self.fn_, self.fp, self.tn
        )
    }

    pub fn render(&self) -> String {
        render_grid(
            &["NAME", "NOT_NAME"],
            &[("NAME", vec![self.tp, self.fn_]), ("NOT_NAME", vec![self.fp, self.tn])],
        )
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn render_grid(columns: &[&str], rows: &[(&str, Vec<u64>)]) -> String {
    let corner = "true \\ predicted";
    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(corner.len());
    let widths: Vec<usize> = columns
        .iter()
        .enumerate()
        .map(|(j, c)| rows.iter().map(|(_, r)| r[j].to_string().len()).max().unwrap_or(0).max(c.len()))
        .collect();
    let mut out = format!("{corner:<label_w$}");
    for (c, w) in columns.iter().zip(&widths) {
        write!(out, "  {c:>w$}").unwrap();
    }
    out.push('\n');
    for (label, row) in rows {
        write!(out, "{label:<label_w$}").unwrap();
        for (v, w) in row.iter().zip(&widths) {
            write!(out, "  {v:>w$}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Counts `argmax(prediction)` against the true subclass of each sample.
pub fn confusion_from_predictions<P: AsRef<[f64]>>(
    predictions: &[P],
    labels: &[SubClass],
) -> Result<ConfusionMatrix8, SelectionError> {
    if predictions.is_empty() {
        return Err(SelectionError::EmptyInput);
    }
    if predictions.len() != labels.len() {
        return Err(SelectionError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let mut cm = ConfusionMatrix8::default();
    for (p, l) in predictions.iter().zip(labels) {
        let p = p.as_ref();
        if p.len() != NUM_CLASSES {
            return Err(SelectionError::BadPrediction(p.len()));
        }
        cm.add(l.index(), argmax(p));
    }
    Ok(cm)
}

/// Sums subclass cells into their parent classes; intra-parent confusions
/// count as correct.
pub fn collapse_to_parent(cm: &ConfusionMatrix8) -> ConfusionMatrix2 {
    let mut out = ConfusionMatrix2::default();
    for (t, row) in SubClass::ALL.iter().zip(&cm.counts) {
        for (p, &n) in SubClass::ALL.iter().zip(row) {
            match (t.parent(), p.parent()) {
                (ParentClass::Name, ParentClass::Name) => out.tp += n,
                (ParentClass::Name, ParentClass::NotName) => out.fn_ += n,
                (ParentClass::NotName, ParentClass::Name) => out.fp += n,
                (ParentClass::NotName, ParentClass::NotName) => out.tn += n,
            }
        }
    }
    out
}

/// F1 of the keyword class. Undefined precision or recall counts as 0, and so
/// does an undefined F1.
pub fn f1_name(cm: &ConfusionMatrix2) -> f64 {
    let (p, r) = (cm.precision(), cm.recall());
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}
