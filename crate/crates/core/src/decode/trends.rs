use serde::{Deserialize, Serialize};

use super::eval::EvalReport;
use crate::error::{Error, Result};
use crate::model::DecodeMode;

/// Relative WER reduction in percent, `100 · (base − new) / base`; `None`
/// when the base WER is zero.
pub fn werr(base: f64, new: f64) -> Option<f64> {
    (base != 0.0).then(|| 100.0 * (base - new) / base)
}

/// WER of every system on one condition, with WERR against the first system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub condition: String,
    pub wer: Vec<Option<f64>>,
    pub werr: Vec<Option<f64>>,
}

/// Cross-system comparison; the first system is the base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSummary {
    /// `label/mode` per system.
    pub systems: Vec<String>,
    pub rows: Vec<TrendRow>,
}

/// Compares every (report, mode) system against the first one, condition by
/// condition. Reports must cover identical utterance sets wherever they
/// share a condition.
pub fn compare_modes(reports: &[&EvalReport]) -> Result<TrendSummary> {
    let mut conditions: Vec<String> = Vec::new();
    for r in reports {
        for row in &r.rows {
            if !conditions.contains(&row.condition) {
                conditions.push(row.condition.clone());
            }
        }
    }
    if reports.iter().any(|r| r.split != reports[0].split) {
        return Err(Error::Invalid("reports cover different splits".into()));
    }
    for c in &conditions {
        let hashes: Vec<(&str, &String)> = reports
            .iter()
            .filter_map(|r| r.test_sets.get(c).map(|h| (r.label.as_str(), h)))
            .collect();
        if let Some((label, h)) = hashes.iter().find(|(_, h)| *h != hashes[0].1) {
            return Err(Error::Invalid(format!(
                "test set {c} of {label} ({h}) differs from {} ({})",
                hashes[0].0, hashes[0].1
            )));
        }
    }
    let mut systems = Vec::new();
    for (i, r) in reports.iter().enumerate() {
        let mut modes: Vec<DecodeMode> = Vec::new();
        for row in &r.rows {
            if !modes.contains(&row.mode) {
                modes.push(row.mode);
            }
        }
        for m in modes {
            let name = format!("{}/{}", r.label, m.as_str());
            if systems.iter().any(|(s, _, _)| *s == name) {
                return Err(Error::Invalid(format!(
                    "system {name} appears in more than one report; give the reports distinct labels"
                )));
            }
            systems.push((name, i, m));
        }
    }
    if systems.len() < 2 {
        return Err(Error::Invalid(format!(
            "comparison needs at least 2 systems, got {}",
            systems.len()
        )));
    }
    let rows = conditions
        .into_iter()
        .map(|c| {
            let wer: Vec<Option<f64>> = systems
                .iter()
                .map(|&(_, i, m)| {
                    reports[i]
                        .rows
                        .iter()
                        .find(|row| row.condition == c && row.mode == m)
                        .map(|row| row.wer)
                })
                .collect();
            let werr = wer
                .iter()
                .map(|w| match (wer[0], w) {
                    (Some(b), Some(n)) => werr(b, *n),
                    _ => None,
                })
                .collect();
            TrendRow {
                condition: c,
                wer,
                werr,
            }
        })
        .collect();
    let systems = systems.into_iter().map(|(s, _, _)| s).collect();
    Ok(TrendSummary { systems, rows })
}

impl TrendSummary {
    /// WER table with a WERR column per non-base system.
    pub fn to_table(&self) -> String {
        let width = self
            .systems
            .iter()
            .map(|s| s.len())
            .max()
            .unwrap_or(0)
            .max(10);
        let mut out = format!("{:<11}", "condition");
        for s in &self.systems {
            out.push_str(&format!(" {s:>width$}"));
        }
        for s in &self.systems[1..] {
            out.push_str(&format!(" {:>width$}", format!("WERR {s}")));
        }
        out.push('\n');
        let cell = |v: Option<f64>, suffix: &str| {
            v.map_or("n/a".to_string(), |x| format!("{x:.2}{suffix}"))
        };
        for r in &self.rows {
            out.push_str(&format!("{:<11}", r.condition));
            for w in &r.wer {
                out.push_str(&format!(" {:>width$}", cell(*w, "")));
            }
            for w in &r.werr[1..] {
                out.push_str(&format!(" {:>width$}", cell(*w, "%")));
            }
            out.push('\n');
        }
        out
    }
}
