//! Word-level outcome accounting, the accuracy/P/R/F-beta metrics, the
//! real-word vs non-word breakdown, and report serialization.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::noise::{classify_misspelling, MisspellingClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// Corrupted and fixed: noisy ≠ gold, prediction == gold.
    Tp,
    /// Clean but broken: noisy == gold, prediction ≠ gold.
    Fp,
    /// Corrupted and missed: noisy ≠ gold, prediction ≠ gold.
    Fn,
    /// Clean and left alone.
    Tn,
}

pub fn classify_outcome(noisy: &str, predicted: &str, gold: &str) -> Outcome {
    match (noisy == gold, predicted == gold) {
        (false, true) => Outcome::Tp,
        (true, false) => Outcome::Fp,
        (false, false) => Outcome::Fn,
        (true, true) => Outcome::Tn,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl OutcomeCounts {
    pub fn add(&mut self, outcome: Outcome) {
        match outcome {
            Outcome::Tp => self.tp += 1,
            Outcome::Fp => self.fp += 1,
            Outcome::Fn => self.fn_ += 1,
            Outcome::Tn => self.tn += 1,
        }
    }

    pub fn merge(&mut self, other: &OutcomeCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if denom == 0.0 {
        return 0.0;
    }
    (1.0 + b2) * precision * recall / denom
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverallMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_beta: f64,
    /// Set when any denominator was zero and the metric was reported as 0.
    pub zero_denominator: bool,
}

pub fn compute_metrics(counts: &OutcomeCounts, beta: f64) -> Result<OverallMetrics> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let mut zero = false;
    let mut ratio = |num: usize, den: usize| -> f64 {
        if den == 0 {
            zero = true;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let accuracy = (counts.tp + counts.tn) as f64 / total as f64;
    let precision = ratio(counts.tp, counts.tp + counts.fp);
    let recall = ratio(counts.tp, counts.tp + counts.fn_);
    if precision == 0.0 && recall == 0.0 {
        zero = true;
    }
    Ok(OverallMetrics {
        accuracy,
        precision,
        recall,
        f_beta: f_beta(precision, recall, beta),
        zero_denominator: zero,
    })
}

/// Per-category accounting over corrupted positions only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    /// Corrupted positions falling in this category.
    pub positions: usize,
    /// Positions where the prediction differs from the noisy input.
    pub detections: usize,
    /// Detections matching the gold word.
    pub corrected: usize,
    pub detection_recall: f64,
    pub correction_precision: f64,
    pub f_beta: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct CategoryTally {
    positions: usize,
    detections: usize,
    corrected: usize,
}

impl CategoryTally {
    fn finish(&self, beta: f64) -> Option<CategoryMetrics> {
        if self.positions == 0 {
            return None;
        }
        let recall = self.detections as f64 / self.positions as f64;
        let precision = if self.detections == 0 {
            0.0
        } else {
            self.corrected as f64 / self.detections as f64
        };
        Some(CategoryMetrics {
            positions: self.positions,
            detections: self.detections,
            corrected: self.corrected,
            detection_recall: recall,
            correction_precision: precision,
            f_beta: f_beta(precision, recall, beta),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryBreakdown {
    pub real_word: Option<CategoryMetrics>,
    pub non_word: Option<CategoryMetrics>,
}

/// Restricts to corrupted positions (noisy ≠ gold) and splits them by whether
/// the noisy token is itself a vocabulary word. Empty categories are reported
/// as absent.
pub fn category_breakdown<'a, I>(
    triples: I,
    word_vocab: &Vocabulary,
    beta: f64,
) -> CategoryBreakdown
where
    I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
{
    let mut real = CategoryTally::default();
    let mut non = CategoryTally::default();
    for (noisy, pred, gold) in triples {
        if noisy == gold {
            continue;
        }
        let tally = match classify_misspelling(noisy, word_vocab) {
            MisspellingClass::RealWord => &mut real,
            MisspellingClass::NonWord => &mut non,
        };
        tally.positions += 1;
        if pred != noisy {
            tally.detections += 1;
            if pred == gold {
                tally.corrected += 1;
            }
        }
    }
    CategoryBreakdown {
        real_word: real.finish(beta),
        non_word: non.finish(beta),
    }
}

/// Counters carried through from the correction pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportCounters {
    /// BIO2 I-positions disagreeing with their span's head tag.
    pub disagreements: usize,
    /// Subword positions whose role violated the BIO2 scheme.
    pub malformed_roles: usize,
    /// Sentences skipped because they exceeded the encoder's maximum length.
    pub skipped_sentences: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub beta: f64,
    pub counts: OutcomeCounts,
    pub overall: OverallMetrics,
    pub real_word: Option<CategoryMetrics>,
    pub non_word: Option<CategoryMetrics>,
    pub counters: ReportCounters,
}

/// One-pass evaluation of aligned (noisy, predicted, gold) token triples.
pub fn evaluate<'a, I>(
    triples: I,
    word_vocab: &Vocabulary,
    beta: f64,
    counters: ReportCounters,
) -> Result<MetricsReport>
where
    I: IntoIterator<Item = (&'a str, &'a str, &'a str)> + Clone,
{
    let mut counts = OutcomeCounts::default();
    for (noisy, pred, gold) in triples.clone() {
        counts.add(classify_outcome(noisy, pred, gold));
    }
    let overall = compute_metrics(&counts, beta)?;
    let breakdown = category_breakdown(triples, word_vocab, beta);
    Ok(MetricsReport {
        beta,
        counts,
        overall,
        real_word: breakdown.real_word,
        non_word: breakdown.non_word,
        counters,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    TextTable,
    Csv,
    Json,
}

impl MetricsReport {
    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::TextTable => self.render_text(),
            ReportFormat::Csv => self.render_csv(),
            ReportFormat::Json => {
                let mut s = serde_json::to_string_pretty(self).expect("report serializes");
                s.push('\n');
                s
            }
        }
    }

    pub fn write(&self, path: &Path, format: ReportFormat) -> Result<()> {
        std::fs::write(path, self.render(format))?;
        Ok(())
    }

    fn render_text(&self) -> String {
        let mut out = String::new();
        let o = &self.overall;
        let _ = writeln!(out, "{:<12} {:>8} {:>8} {:>8} {:>8}", "", "Acc", "P", "R", "F0.5");
        let _ = writeln!(
            out,
            "{:<12} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
            "overall", o.accuracy, o.precision, o.recall, o.f_beta
        );
        for (name, cat) in [("real-word", &self.real_word), ("non-word", &self.non_word)] {
            if let Some(c) = cat {
                let _ = writeln!(
                    out,
                    "{:<12} {:>8} {:>8.3} {:>8.3} {:>8.3}",
                    name, "-", c.correction_precision, c.detection_recall, c.f_beta
                );
            }
        }
        out
    }

    fn csv_rows(&self) -> Vec<(String, String)> {
        let mut rows: Vec<(String, String)> = vec![
            ("beta".into(), self.beta.to_string()),
            ("tp".into(), self.counts.tp.to_string()),
            ("fp".into(), self.counts.fp.to_string()),
            ("fn".into(), self.counts.fn_.to_string()),
            ("tn".into(), self.counts.tn.to_string()),
            ("accuracy".into(), self.overall.accuracy.to_string()),
            ("precision".into(), self.overall.precision.to_string()),
            ("recall".into(), self.overall.recall.to_string()),
            ("f_beta".into(), self.overall.f_beta.to_string()),
            (
                "zero_denominator".into(),
                (self.overall.zero_denominator as u8).to_string(),
            ),
        ];
        for (name, cat) in [("real_word", &self.real_word), ("non_word", &self.non_word)] {
            if let Some(c) = cat {
                rows.push((format!("{name}_positions"), c.positions.to_string()));
                rows.push((format!("{name}_detections"), c.detections.to_string()));
                rows.push((format!("{name}_corrected"), c.corrected.to_string()));
                rows.push((format!("{name}_detection_recall"), c.detection_recall.to_string()));
                rows.push((
                    format!("{name}_correction_precision"),
                    c.correction_precision.to_string(),
                ));
                rows.push((format!("{name}_f_beta"), c.f_beta.to_string()));
            }
        }
        rows.push(("disagreements".into(), self.counters.disagreements.to_string()));
        rows.push(("malformed_roles".into(), self.counters.malformed_roles.to_string()));
        rows.push((
            "skipped_sentences".into(),
            self.counters.skipped_sentences.to_string(),
        ));
        rows
    }

    fn render_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (k, v) in self.csv_rows() {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }

    /// Inverse of the CSV rendering; floats round-trip exactly because the
    /// writer uses shortest round-trip formatting.
    pub fn from_csv(text: &str) -> Result<MetricsReport> {
        let mut map = std::collections::HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                continue;
            }
            let (k, v) = line
                .split_once(',')
                .ok_or_else(|| Error::Config(format!("bad CSV report line: {line}")))?;
            map.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| -> Result<String> {
            map.get(k)
                .cloned()
                .ok_or_else(|| Error::Config(format!("CSV report missing field {k}")))
        };
        let usize_of = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|_| Error::Config(format!("bad integer for {k}")))
        };
        let f64_of = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| Error::Config(format!("bad float for {k}")))
        };
        let category = |name: &str| -> Result<Option<CategoryMetrics>> {
            if !map.contains_key(&format!("{name}_positions")) {
                return Ok(None);
            }
            Ok(Some(CategoryMetrics {
                positions: usize_of(&format!("{name}_positions"))?,
                detections: usize_of(&format!("{name}_detections"))?,
                corrected: usize_of(&format!("{name}_corrected"))?,
                detection_recall: f64_of(&format!("{name}_detection_recall"))?,
                correction_precision: f64_of(&format!("{name}_correction_precision"))?,
                f_beta: f64_of(&format!("{name}_f_beta"))?,
            }))
        };
        Ok(MetricsReport {
            beta: f64_of("beta")?,
            counts: OutcomeCounts {
                tp: usize_of("tp")?,
                fp: usize_of("fp")?,
                fn_: usize_of("fn")?,
                tn: usize_of("tn")?,
            },
            overall: OverallMetrics {
                accuracy: f64_of("accuracy")?,
                precision: f64_of("precision")?,
                recall: f64_of("recall")?,
                f_beta: f64_of("f_beta")?,
                zero_denominator: get("zero_denominator")? == "1",
            },
            real_word: category("real_word")?,
            non_word: category("non_word")?,
            counters: ReportCounters {
                disagreements: usize_of("disagreements")?,
                malformed_roles: usize_of("malformed_roles")?,
                skipped_sentences: usize_of("skipped_sentences")?,
            },
        })
    }
}
