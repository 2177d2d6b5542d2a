use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Per-step losses of a training run plus a key-value footer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossReport {
    /// Mean loss of each optimiser step, in order.
    pub steps: Vec<f64>,
    /// Mean step loss of each epoch.
    pub epoch_means: Vec<f64>,
    pub metrics: BTreeMap<String, f64>,
}

pub const FOOTER_MARKER: &str = "#metrics";

impl LossReport {
    pub(crate) fn push_epoch(&mut self, losses: &[f64]) {
        self.steps.extend_from_slice(losses);
        if !losses.is_empty() {
            self.epoch_means
                .push(losses.iter().sum::<f64>() / losses.len() as f64);
        }
    }

    /// `step \t loss` lines (1-based), then [`FOOTER_MARKER`] and
    /// `key \t value` lines sorted by key.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, loss) in self.steps.iter().enumerate() {
            let _ = writeln!(out, "{}\t{}", i + 1, loss);
        }
        out.push_str(FOOTER_MARKER);
        out.push('\n');
        for (k, v) in &self.metrics {
            let _ = writeln!(out, "{k}\t{v}");
        }
        out
    }

    /// Parses [`LossReport::to_text`] output. Epoch means are not stored in
    /// the text form and come back empty.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut report = LossReport::default();
        let mut in_footer = false;
        for (i, line) in text.lines().enumerate() {
            if line == FOOTER_MARKER {
                in_footer = true;
                continue;
            }
            let (a, b) = line
                .split_once('\t')
                .ok_or_else(|| Error::malformed(i + 1, "expected two tab-separated fields"))?;
            let value: f64 = b
                .parse()
                .map_err(|_| Error::malformed(i + 1, "bad number"))?;
            if in_footer {
                report.metrics.insert(a.to_string(), value);
            } else {
                report.steps.push(value);
            }
        }
        Ok(report)
    }
}
