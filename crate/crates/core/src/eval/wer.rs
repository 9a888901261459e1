//! Word error rate with a fixed text normalizer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Lowercases, drops every punctuation character except apostrophes, and
/// splits on whitespace.
pub fn normalize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .flat_map(char::to_lowercase)
        .filter(|c| c.is_alphanumeric() || c.is_whitespace() || *c == '\'')
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

/// Edit operation counts between a reference and a hypothesis.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

/// Minimal unit-cost edit distance, decomposed by backtrace. When several
/// optimal paths exist the backtrace prefers substitution, then deletion,
/// then insertion.
pub fn align<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = diag.min(del).min(ins);
        }
    }
    let mut c = EditCounts::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let differ = reference[i - 1] != hypothesis[j - 1];
            if d[(i - 1) * w + j - 1] + usize::from(differ) == here {
                c.substitutions += usize::from(differ);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[(i - 1) * w + j] + 1 == here {
            c.deletions += 1;
            i -= 1;
        } else {
            c.insertions += 1;
            j -= 1;
        }
    }
    c
}

/// Scores of one utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WerRow {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
    pub ref_words: usize,
    #[serde(flatten)]
    pub counts: EditCounts,
}

impl WerRow {
    pub fn score(id: impl Into<String>, reference: &str, hypothesis: &str) -> Self {
        let r = normalize(reference);
        let h = normalize(hypothesis);
        Self {
            id: id.into(),
            reference: r.join(" "),
            hypothesis: h.join(" "),
            ref_words: r.len(),
            counts: align(&r, &h),
        }
    }

    /// Per-utterance rate; infinite for an empty reference with insertions.
    pub fn wer(&self) -> f64 {
        match (self.counts.errors(), self.ref_words) {
            (0, _) => 0.0,
            (_, 0) => f64::INFINITY,
            (e, n) => e as f64 / n as f64,
        }
    }
}

/// Word error rate of one ref/hyp pair after normalization.
pub fn wer(reference: &str, hypothesis: &str) -> f64 {
    WerRow::score("", reference, hypothesis).wer()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WerReport {
    pub rows: Vec<WerRow>,
}

impl WerReport {
    pub fn new(rows: Vec<WerRow>) -> Self {
        Self { rows }
    }

    pub fn totals(&self) -> (EditCounts, usize) {
        let mut c = EditCounts::default();
        let mut words = 0;
        for r in &self.rows {
            c.substitutions += r.counts.substitutions;
            c.insertions += r.counts.insertions;
            c.deletions += r.counts.deletions;
            words += r.ref_words;
        }
        (c, words)
    }

    /// Σ errors / Σ reference words over all utterances.
    pub fn wer(&self) -> f64 {
        let (c, words) = self.totals();
        if c.errors() == 0 {
            0.0
        } else if words == 0 {
            f64::INFINITY
        } else {
            c.errors() as f64 / words as f64
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,ref_words,substitutions,insertions,deletions,reference,hypothesis\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.id, r.ref_words, r.counts.substitutions, r.counts.insertions, r.counts.deletions, r.reference, r.hypothesis
            ));
        }
        s
    }

    /// Writes `{stem}.json` and `{stem}.csv` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::json!({ "wer": finite_or_null(self.wer()), "rows": self.rows });
        let p = dir.join(format!("{stem}.json"));
        std::fs::write(&p, serde_json::to_string_pretty(&json)?).map_err(|e| Error::io(&p, e))?;
        let p = dir.join(format!("{stem}.csv"));
        std::fs::write(&p, self.to_csv()).map_err(|e| Error::io(&p, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Stored {
            rows: Vec<WerRow>,
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Stored = serde_json::from_str(&text)?;
        Ok(Self { rows: s.rows })
    }
}

fn finite_or_null(x: f64) -> serde_json::Value {
    serde_json::Number::from_f64(x).map_or(serde_json::Value::Null, serde_json::Value::Number)
}
