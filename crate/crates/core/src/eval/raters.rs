//! Rater quality scores (0 unusable, 1 poor, 2 good, 3 excellent) for
//! real and synthetic images.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{mean, welch_ttest, WelchResult};
use crate::error::{Error, Result};

pub const SCORE_LEVELS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Real,
    Synthetic,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Real, Arm::Synthetic];
}

/// How many cases one rater gave each score in one arm. Counts may be
/// fractional when they are averages over raters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaterCounts {
    pub rater: String,
    pub arm: Arm,
    pub counts: [f64; SCORE_LEVELS],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseScore {
    pub rater: String,
    pub arm: Arm,
    pub case: String,
    pub score: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "format", content = "rows")]
pub enum RaterTable {
    Counts(Vec<RaterCounts>),
    Cases(Vec<CaseScore>),
}

/// `Σ score·count / Σ count`.
pub fn rater_mean(counts: &[f64; SCORE_LEVELS]) -> Result<f64> {
    if counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(Error::Statistics(format!("invalid score counts {counts:?}")));
    }
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return Err(Error::Statistics("score counts sum to zero".into()));
    }
    let weighted: f64 = counts.iter().enumerate().map(|(s, c)| s as f64 * c).sum();
    Ok(weighted / total)
}

#[derive(Deserialize)]
struct CountsRow {
    rater: String,
    arm: Arm,
    unusable: f64,
    poor: f64,
    good: f64,
    excellent: f64,
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Statistics(format!("{}: {e}", path.display()))
}

impl RaterTable {
    /// Reads either `rater,arm,unusable,poor,good,excellent` (counts) or
    /// `rater,arm,case,score` (one row per rated case); the header decides.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text).map_err(|e| match e {
            Error::Statistics(m) => Error::Statistics(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| csv_error(Path::new("<csv>"), e))?
            .iter()
            .map(str::to_ascii_lowercase)
            .collect::<Vec<_>>();
        let has = |h: &str| headers.iter().any(|x| x == h);
        let table = if has("case") && has("score") {
            let rows = reader
                .deserialize::<CaseScore>()
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| csv_error(Path::new("<csv>"), e))?;
            RaterTable::Cases(rows)
        } else if ["unusable", "poor", "good", "excellent"].iter().all(|h| has(h)) {
            let rows = reader
                .deserialize::<CountsRow>()
                .map(|r| {
                    r.map(|r| RaterCounts {
                        rater: r.rater,
                        arm: r.arm,
                        counts: [r.unusable, r.poor, r.good, r.excellent],
                    })
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| csv_error(Path::new("<csv>"), e))?;
            RaterTable::Counts(rows)
        } else {
            return Err(Error::Statistics(format!(
                "unrecognised rater table header {headers:?}; expected rater,arm,unusable,poor,good,excellent or rater,arm,case,score"
            )));
        };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            RaterTable::Counts(rows) => {
                if rows.is_empty() {
                    return Err(Error::Statistics("rater table is empty".into()));
                }
                for r in rows {
                    rater_mean(&r.counts)
                        .map_err(|e| Error::Statistics(format!("rater {} ({:?}): {e}", r.rater, r.arm)))?;
                }
            }
            RaterTable::Cases(rows) => {
                if rows.is_empty() {
                    return Err(Error::Statistics("rater table is empty".into()));
                }
                if let Some(r) = rows.iter().find(|r| r.score as usize >= SCORE_LEVELS) {
                    return Err(Error::Statistics(format!("rater {} case {}: score {} outside 0..=3", r.rater, r.case, r.score)));
                }
            }
        }
        Ok(())
    }

    /// Count rows, aggregating per-case rows by rater and arm.
    pub fn counts(&self) -> Vec<RaterCounts> {
        match self {
            RaterTable::Counts(rows) => rows.clone(),
            RaterTable::Cases(rows) => {
                let mut acc: BTreeMap<(String, Arm), [f64; SCORE_LEVELS]> = BTreeMap::new();
                for r in rows {
                    acc.entry((r.rater.clone(), r.arm)).or_default()[r.score as usize] += 1.0;
                }
                acc.into_iter()
                    .map(|((rater, arm), counts)| RaterCounts { rater, arm, counts })
                    .collect()
            }
        }
    }
}

/// What the Welch test compared.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WelchBasis {
    /// Per-case means over raters.
    CaseMeans,
    /// Every individual rating, expanded from integer counts.
    PooledRatings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaterSummary {
    pub rater: String,
    pub real_mean: Option<f64>,
    pub synthetic_mean: Option<f64>,
    pub welch: Option<WelchResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaterStats {
    pub raters: Vec<RaterSummary>,
    /// Counts averaged over raters, per arm.
    pub average_counts_real: [f64; SCORE_LEVELS],
    pub average_counts_synthetic: [f64; SCORE_LEVELS],
    /// Count-weighted means of the averaged counts.
    pub real_mean: f64,
    pub synthetic_mean: f64,
    pub welch: Option<WelchResult>,
    pub welch_basis: Option<WelchBasis>,
}

/// Expands integer counts into individual scores; `None` if any count is
/// fractional.
fn expand(counts: &[f64; SCORE_LEVELS]) -> Option<Vec<f64>> {
    let mut out = Vec::new();
    for (s, &c) in counts.iter().enumerate() {
        if c.fract() != 0.0 {
            return None;
        }
        out.extend(std::iter::repeat_n(s as f64, c as usize));
    }
    Some(out)
}

fn try_welch(a: &[f64], b: &[f64]) -> Option<WelchResult> {
    welch_ttest(a, b).ok()
}

pub fn rater_statistics(table: &RaterTable) -> Result<RaterStats> {
    table.validate()?;
    let counts = table.counts();
    let mut raters: Vec<String> = counts.iter().map(|r| r.rater.clone()).collect();
    raters.sort();
    raters.dedup();

    let mut average = [[0.0; SCORE_LEVELS]; 2];
    let mut pooled: [Option<Vec<f64>>; 2] = [Some(Vec::new()), Some(Vec::new())];
    for (a, arm) in Arm::BOTH.into_iter().enumerate() {
        let rows: Vec<&RaterCounts> = counts.iter().filter(|r| r.arm == arm).collect();
        if rows.is_empty() {
            return Err(Error::Statistics(format!("no {arm:?} ratings in the table")));
        }
        for r in &rows {
            for s in 0..SCORE_LEVELS {
                average[a][s] += r.counts[s];
            }
            pooled[a] = pooled[a].take().and_then(|mut p| {
                p.extend(expand(&r.counts)?);
                Some(p)
            });
        }
        for v in &mut average[a] {
            *v /= rows.len() as f64;
        }
    }

    let per_case = match table {
        RaterTable::Cases(rows) => Some(rows),
        RaterTable::Counts(_) => None,
    };
    let summaries = raters
        .iter()
        .map(|name| {
            let arm_counts = |arm: Arm| counts.iter().find(|r| &r.rater == name && r.arm == arm);
            let mean_of = |arm: Arm| arm_counts(arm).and_then(|r| rater_mean(&r.counts).ok());
            let welch = match per_case {
                Some(rows) => {
                    let scores = |arm: Arm| {
                        rows.iter()
                            .filter(|r| &r.rater == name && r.arm == arm)
                            .map(|r| r.score as f64)
                            .collect::<Vec<_>>()
                    };
                    try_welch(&scores(Arm::Real), &scores(Arm::Synthetic))
                }
                None => {
                    let real = arm_counts(Arm::Real).and_then(|r| expand(&r.counts));
                    let syn = arm_counts(Arm::Synthetic).and_then(|r| expand(&r.counts));
                    real.zip(syn).and_then(|(a, b)| try_welch(&a, &b))
                }
            };
            RaterSummary {
                rater: name.clone(),
                real_mean: mean_of(Arm::Real),
                synthetic_mean: mean_of(Arm::Synthetic),
                welch,
            }
        })
        .collect();

    let (welch, welch_basis) = match per_case {
        Some(rows) => {
            let case_means = |arm: Arm| {
                let mut by_case: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
                for r in rows.iter().filter(|r| r.arm == arm) {
                    by_case.entry(&r.case).or_default().push(r.score as f64);
                }
                by_case.values().map(|v| mean(v)).collect::<Vec<_>>()
            };
            let w = try_welch(&case_means(Arm::Real), &case_means(Arm::Synthetic));
            (w, w.map(|_| WelchBasis::CaseMeans))
        }
        None => match &pooled {
            [Some(a), Some(b)] => {
                let w = try_welch(a, b);
                (w, w.map(|_| WelchBasis::PooledRatings))
            }
            _ => (None, None),
        },
    };

    Ok(RaterStats {
        raters: summaries,
        real_mean: rater_mean(&average[0])?,
        synthetic_mean: rater_mean(&average[1])?,
        average_counts_real: average[0],
        average_counts_synthetic: average[1],
        welch,
        welch_basis,
    })
}

impl RaterStats {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn to_text_table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        let mut out = format!("{:<12} {:>10} {:>10} {:>10} {:>10}\n", "rater", "real", "synthetic", "t", "p");
        for r in &self.raters {
            let _ = writeln!(
                out,
                "{:<12} {:>10} {:>10} {:>10} {:>10}",
                r.rater,
                opt(r.real_mean),
                opt(r.synthetic_mean),
                opt(r.welch.map(|w| w.t)),
                opt(r.welch.map(|w| w.p)),
            );
        }
        let _ = writeln!(
            out,
            "{:<12} {:>10.4} {:>10.4} {:>10} {:>10}",
            "all",
            self.real_mean,
            self.synthetic_mean,
            opt(self.welch.map(|w| w.t)),
            opt(self.welch.map(|w| w.p)),
        );
        let fmt_counts = |c: &[f64; SCORE_LEVELS]| c.map(|v| format!("{v}")).join(" / ");
        let _ = writeln!(out, "average counts (unusable / poor / good / excellent)");
        let _ = writeln!(out, "  real:      {}", fmt_counts(&self.average_counts_real));
        let _ = writeln!(out, "  synthetic: {}", fmt_counts(&self.average_counts_synthetic));
        if let (Some(w), Some(basis)) = (self.welch, self.welch_basis) {
            let basis = match basis {
                WelchBasis::CaseMeans => "per-case means",
                WelchBasis::PooledRatings => "pooled ratings",
            };
            let _ = writeln!(out, "Welch ({basis}): t = {:.4}, df = {:.2}, p = {:.4}", w.t, w.df, w.p);
        }
        out
    }
}
