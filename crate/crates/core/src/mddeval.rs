//! Alignment, phone error rate, and the mispronunciation detection and
//! diagnosis tally.
//!
//! Precision and recall use the detection hierarchy literally: a correctly
//! detected mispronunciation is counted as TN, so
//! `precision = TN / (TN + FN)` and `recall = TN / (TN + FP)`.

use std::fmt;
use std::io::{BufRead, Write};
use std::ops::{Add, AddAssign};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MddError, Result};
use crate::seqmodel::DELETION_MARKER;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Match,
    Substitute,
    Delete,
    Insert,
}

/// One alignment column. `ref_pos` is absent for insertions and `hyp_pos`
/// for deletions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentOp {
    pub kind: OpKind,
    pub ref_pos: Option<usize>,
    pub hyp_pos: Option<usize>,
}

fn distance_table<T: PartialEq>(r: &[T], h: &[T]) -> Vec<Vec<usize>> {
    let mut d = vec![vec![0usize; h.len() + 1]; r.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=h.len() {
        d[0][j] = j;
    }
    for i in 1..=r.len() {
        for j in 1..=h.len() {
            let diag = d[i - 1][j - 1] + usize::from(r[i - 1] != h[j - 1]);
            d[i][j] = diag.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d
}

/// Unit-cost Levenshtein distance.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    distance_table(reference, hypothesis)[reference.len()][hypothesis.len()]
}

/// Minimal alignment with ties broken diagonal, then delete, then insert.
pub fn align<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> (usize, Vec<AlignmentOp>) {
    let d = distance_table(reference, hypothesis);
    let (mut i, mut j) = (reference.len(), hypothesis.len());
    let mut ops = Vec::with_capacity(i.max(j));
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            if d[i][j] == d[i - 1][j - 1] + usize::from(!same) {
                ops.push(AlignmentOp {
                    kind: if same { OpKind::Match } else { OpKind::Substitute },
                    ref_pos: Some(i - 1),
                    hyp_pos: Some(j - 1),
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            ops.push(AlignmentOp {
                kind: OpKind::Delete,
                ref_pos: Some(i - 1),
                hyp_pos: None,
            });
            i -= 1;
        } else {
            ops.push(AlignmentOp {
                kind: OpKind::Insert,
                ref_pos: None,
                hyp_pos: Some(j - 1),
            });
            j -= 1;
        }
    }
    ops.reverse();
    (d[reference.len()][hypothesis.len()], ops)
}

/// `100 * sum(distance) / sum(reference length)` over a corpus.
pub fn per<T: PartialEq>(pairs: &[(Vec<T>, Vec<T>)]) -> Result<f64> {
    let total: usize = pairs.iter().map(|(r, _)| r.len()).sum();
    if total == 0 {
        return Err(MddError::Domain("PER is undefined for zero total reference length".into()));
    }
    let errors: usize = pairs.iter().map(|(r, h)| edit_distance(r, h)).sum();
    Ok(100.0 * errors as f64 / total as f64)
}

/// Canonical prompt phones and, position by position, what was actually said.
/// `None` in `perceived` marks a deleted phone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UttAnnotation {
    pub utt_id: String,
    pub canonical: Vec<String>,
    pub perceived: Vec<Option<String>>,
}

impl UttAnnotation {
    pub fn new(utt_id: impl Into<String>, canonical: Vec<String>, perceived: Vec<Option<String>>) -> Result<Self> {
        let a = UttAnnotation {
            utt_id: utt_id.into(),
            canonical,
            perceived,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.canonical.len() != self.perceived.len() {
            return Err(MddError::Input(format!(
                "{}: canonical has {} phones but perceived has {}",
                self.utt_id,
                self.canonical.len(),
                self.perceived.len()
            )));
        }
        Ok(())
    }

    pub fn is_mispronounced(&self, i: usize) -> bool {
        self.perceived[i].as_deref() != Some(self.canonical[i].as_str())
    }

    pub fn error_count(&self) -> usize {
        (0..self.canonical.len()).filter(|&i| self.is_mispronounced(i)).count()
    }

    /// The perceived phones with deletions removed.
    pub fn realized(&self) -> Vec<String> {
        self.perceived.iter().flatten().cloned().collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub cd: u64,
    pub de: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl Add for ConfusionCounts {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
        self.cd += o.cd;
        self.de += o.de;
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

/// Tallies one utterance. Hypothesis insertions do not enter the counts.
pub fn mdd_classify<S: AsRef<str>>(annotation: &UttAnnotation, hypothesis: &[S]) -> Result<ConfusionCounts> {
    annotation.validate()?;
    let hyp: Vec<&str> = hypothesis.iter().map(AsRef::as_ref).collect();
    let canon: Vec<&str> = annotation.canonical.iter().map(String::as_str).collect();
    let (_, ops) = align(&canon, &hyp);
    let mut c = ConfusionCounts::default();
    for op in ops {
        let Some(i) = op.ref_pos else { continue };
        let said = op.hyp_pos.map(|j| hyp[j]);
        let hyp_is_canonical = said == Some(canon[i]);
        if !annotation.is_mispronounced(i) {
            if hyp_is_canonical {
                c.tp += 1;
            } else {
                c.fn_ += 1;
            }
        } else if hyp_is_canonical {
            c.fp += 1;
        } else {
            c.tn += 1;
            if said == annotation.perceived[i].as_deref() {
                c.cd += 1;
            } else {
                c.de += 1;
            }
        }
    }
    Ok(c)
}

/// Reasons a metric was reported as 0 instead of being computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricFlag {
    PrecisionUndefined,
    RecallUndefined,
    F1Undefined,
    DarUndefined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub dar: f64,
    pub per: Option<f64>,
    pub flags: Vec<MetricFlag>,
}

fn pct(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

/// Harmonic mean of two percentages.
pub fn f1_score(precision: f64, recall: f64) -> Option<f64> {
    let s = precision + recall;
    (s > 0.0).then(|| 2.0 * precision * recall / s)
}

pub fn metrics(counts: &ConfusionCounts) -> MetricsReport {
    let mut flags = Vec::new();
    let mut or_flag = |v: Option<f64>, f| {
        v.unwrap_or_else(|| {
            flags.push(f);
            0.0
        })
    };
    let precision = or_flag(pct(counts.tn, counts.tn + counts.fn_), MetricFlag::PrecisionUndefined);
    let recall = or_flag(pct(counts.tn, counts.tn + counts.fp), MetricFlag::RecallUndefined);
    let f1 = or_flag(f1_score(precision, recall), MetricFlag::F1Undefined);
    let dar = or_flag(pct(counts.cd, counts.cd + counts.de), MetricFlag::DarUndefined);
    MetricsReport {
        counts: *counts,
        precision,
        recall,
        f1,
        dar,
        per: None,
        flags,
    }
}

impl MetricsReport {
    pub fn with_per(mut self, per: f64) -> Self {
        self.per = Some(per);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.counts;
        writeln!(f, "{:<10} {:>8}", "TP", c.tp)?;
        writeln!(f, "{:<10} {:>8}", "FP", c.fp)?;
        writeln!(f, "{:<10} {:>8}", "FN", c.fn_)?;
        writeln!(f, "{:<10} {:>8}", "TN", c.tn)?;
        writeln!(f, "{:<10} {:>8}", "CD", c.cd)?;
        writeln!(f, "{:<10} {:>8}", "DE", c.de)?;
        writeln!(f, "{:<10} {:>8.2}", "Recall", self.recall)?;
        writeln!(f, "{:<10} {:>8.2}", "Precision", self.precision)?;
        writeln!(f, "{:<10} {:>8.2}", "F1", self.f1)?;
        writeln!(f, "{:<10} {:>8.2}", "DAR", self.dar)?;
        match self.per {
            Some(p) => writeln!(f, "{:<10} {:>8.2}", "PER", p)?,
            None => writeln!(f, "{:<10} {:>8}", "PER", "-")?,
        }
        for flag in &self.flags {
            writeln!(f, "note: {}", serde_json::to_string(flag).unwrap_or_default().trim_matches('"'))?;
        }
        Ok(())
    }
}

/// Scores hypotheses (by utterance id) against annotations.
pub fn evaluate<S: AsRef<str>>(
    annotations: &[UttAnnotation],
    hypotheses: &std::collections::BTreeMap<String, Vec<S>>,
) -> Result<MetricsReport> {
    let mut counts = ConfusionCounts::default();
    let mut pairs = Vec::with_capacity(annotations.len());
    for a in annotations {
        let hyp = hypotheses
            .get(&a.utt_id)
            .ok_or_else(|| MddError::Input(format!("no hypothesis for utterance {}", a.utt_id)))?;
        counts += mdd_classify(a, hyp)?;
        let h: Vec<&str> = hyp.iter().map(AsRef::as_ref).collect();
        pairs.push((a.realized(), h.iter().map(|p| p.to_string()).collect::<Vec<_>>()));
    }
    let report = metrics(&counts);
    Ok(match per(&pairs) {
        Ok(p) => report.with_per(p),
        Err(_) => report,
    })
}

fn split_phones(field: &str) -> Vec<String> {
    field.split_whitespace().map(str::to_string).collect()
}

pub fn read_annotations(path: &Path) -> Result<Vec<UttAnnotation>> {
    let file = std::fs::File::open(path).map_err(|e| MddError::io(path, e))?;
    parse_annotations(std::io::BufReader::new(file), path)
}

pub fn parse_annotations<R: BufRead>(reader: R, origin: &Path) -> Result<Vec<UttAnnotation>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| MddError::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(MddError::format(
                origin,
                format!("line {}: expected 3 tab-separated columns, found {}", n + 1, cols.len()),
            ));
        }
        let perceived = cols[2]
            .split_whitespace()
            .map(|p| (p != DELETION_MARKER).then(|| p.to_string()))
            .collect();
        let a = UttAnnotation {
            utt_id: cols[0].to_string(),
            canonical: split_phones(cols[1]),
            perceived,
        };
        a.validate()
            .map_err(|e| MddError::format(origin, format!("line {}: {e}", n + 1)))?;
        out.push(a);
    }
    Ok(out)
}

pub fn write_annotations<W: Write>(mut w: W, annotations: &[UttAnnotation]) -> std::io::Result<()> {
    for a in annotations {
        let perceived: Vec<&str> = a
            .perceived
            .iter()
            .map(|p| p.as_deref().unwrap_or(DELETION_MARKER))
            .collect();
        writeln!(w, "{}\t{}\t{}", a.utt_id, a.canonical.join(" "), perceived.join(" "))?;
    }
    Ok(())
}
