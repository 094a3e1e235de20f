//! Segmentation overlap scores and rater-study statistics.

mod raters;

pub use raters::{
    rater_mean, rater_statistics, Arm, CaseScore, RaterCounts, RaterStats, RaterSummary, RaterTable, WelchBasis,
    SCORE_LEVELS,
};

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::morphology::BinaryMask;
use crate::volume::LabelVolume;

/// `2|A∩B| / (|A|+|B|)`; two empty masks agree perfectly (1.0).
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::DimsMismatch {
            expected: a.dims(),
            actual: b.dims(),
        });
    }
    let (mut both, mut total) = (0usize, 0usize);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        both += (x && y) as usize;
        total += x as usize + y as usize;
    }
    Ok(if total == 0 { 1.0 } else { 2.0 * both as f64 / total as f64 })
}

/// Dice of the indicator masks of each code in `codes`.
pub fn per_label_dice(pred: &LabelVolume, truth: &LabelVolume, codes: &[u16]) -> Result<Vec<f64>> {
    if pred.dims() != truth.dims() {
        return Err(Error::DimsMismatch {
            expected: truth.dims(),
            actual: pred.dims(),
        });
    }
    for &c in codes {
        if !pred.vocabulary().contains(c) || !truth.vocabulary().contains(c) {
            return Err(Error::Vocabulary(format!("label {c} is not in both vocabularies")));
        }
    }
    // one pass over the grids instead of one mask pair per label
    let mut both = vec![0usize; codes.len()];
    let mut total = vec![0usize; codes.len()];
    let slot = |c: u16| codes.iter().position(|&k| k == c);
    for (&p, &t) in pred.voxels().iter().zip(truth.voxels()) {
        if let Some(i) = slot(p) {
            total[i] += 1;
            if p == t {
                both[i] += 1;
            }
        }
        if let Some(i) = slot(t) {
            total[i] += 1;
        }
    }
    Ok(both
        .iter()
        .zip(&total)
        .map(|(&b, &n)| if n == 0 { 1.0 } else { 2.0 * b as f64 / n as f64 })
        .collect())
}

/// Median; an even count gives the mean of the middle two.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Statistics("median of an empty sample".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Statistics("median of a sample containing NaN".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelName {
    pub code: u16,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiceReport {
    pub labels: Vec<LabelName>,
    pub subjects: Vec<String>,
    /// `scores[subject][label]`.
    pub scores: Vec<Vec<f64>>,
    pub medians: Vec<f64>,
    /// Mean of the per-label medians.
    pub summary: f64,
}

/// Per-label medians over subjects, then their mean.
pub fn summarize(labels: Vec<LabelName>, subjects: Vec<String>, scores: Vec<Vec<f64>>) -> Result<DiceReport> {
    if scores.is_empty() || labels.is_empty() {
        return Err(Error::Statistics("no subjects or no labels to summarize".into()));
    }
    if subjects.len() != scores.len() {
        return Err(Error::Statistics(format!(
            "{} subject names for {} score rows",
            subjects.len(),
            scores.len()
        )));
    }
    for (s, row) in subjects.iter().zip(&scores) {
        if row.len() != labels.len() {
            return Err(Error::Statistics(format!("subject {s} has {} scores, expected {}", row.len(), labels.len())));
        }
        if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Statistics(format!("subject {s} has Dice {v} outside [0, 1]")));
        }
    }
    let medians = (0..labels.len())
        .map(|j| median(&scores.iter().map(|row| row[j]).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    let summary = mean(&medians);
    Ok(DiceReport {
        labels,
        subjects,
        scores,
        medians,
        summary,
    })
}

impl DiceReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// Long format: one `subject,code,label,dice` row per score.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Statistics(format!("CSV encoding failed: {e}"));
        w.write_record(["subject", "code", "label", "dice"]).map_err(csv_err)?;
        for (s, row) in self.subjects.iter().zip(&self.scores) {
            for (l, v) in self.labels.iter().zip(row) {
                w.write_record([s.as_str(), &l.code.to_string(), &l.name, &v.to_string()])
                    .map_err(csv_err)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Statistics(format!("CSV encoding failed: {e}")))?;
        Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
    }

    pub fn to_text_table(&self) -> String {
        let width = self.subjects.iter().map(String::len).max().unwrap_or(0).max(7);
        let mut out = format!("{:width$}", "subject");
        for l in &self.labels {
            let _ = write!(out, " {:>12}", truncate(&l.name, 12));
        }
        out.push('\n');
        for (s, row) in self.subjects.iter().zip(&self.scores) {
            let _ = write!(out, "{s:width$}");
            for v in row {
                let _ = write!(out, " {v:>12.4}");
            }
            out.push('\n');
        }
        let _ = write!(out, "{:width$}", "median");
        for m in &self.medians {
            let _ = write!(out, " {m:>12.4}");
        }
        let _ = writeln!(out, "\nmean of medians: {:.4}", self.summary);
        out
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

/// Welch's unequal-variance t-test.
pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Statistics(format!(
            "Welch test needs at least 2 values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Statistics("Welch test sample contains a non-finite value".into()));
    }
    let var = |x: &[f64]| {
        let m = mean(x);
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
    };
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (qa, qb) = (var(a) / na, var(b) / nb);
    let se2 = qa + qb;
    if se2 == 0.0 {
        return Err(Error::Statistics("both samples have zero variance".into()));
    }
    let t = (mean(a) - mean(b)) / se2.sqrt();
    let df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Statistics(format!("t distribution: {e}")))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(WelchResult { t, df, p })
}
