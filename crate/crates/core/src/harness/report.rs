//! Per-payment records, aggregates and the three report encodings.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agents::world::RunCounters;
use crate::agents::PaymentOutcome;

use super::scenario::Scenario;

/// Outcome and timing metrics of one payment. `setup_time_us` is present
/// iff the attack fired; `notification_delay_us` iff a notification was
/// shown.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct PaymentRecord {
    pub index: u32,
    pub outcome: PaymentOutcome,
    pub setup_time_us: Option<u64>,
    pub notification_delay_us: Option<u64>,
    pub stolen_amount: u64,
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean_us: f64,
    /// Population standard deviation.
    pub sd_us: f64,
    pub n: u32,
}

/// Population mean and standard deviation over microsecond samples.
pub fn mean_sd(values: &[u64]) -> Option<MeanSd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = values
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    Some(MeanSd {
        mean_us: mean,
        sd_us: var.sqrt(),
        n: values.len() as u32,
    })
}

#[derive(Clone, Copy, PartialEq, Debug, Default, Serialize, Deserialize)]
pub struct Aggregates {
    pub setup_time: Option<MeanSd>,
    pub notification_delay: Option<MeanSd>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub legit_payment: u32,
    pub stolen_undetected: u32,
    pub stolen_detected: u32,
    pub blocked: u32,
    pub dos: u32,
}

impl OutcomeCounts {
    pub fn count(&mut self, outcome: PaymentOutcome) {
        match outcome {
            PaymentOutcome::LegitPayment => self.legit_payment += 1,
            PaymentOutcome::StolenUndetected => self.stolen_undetected += 1,
            PaymentOutcome::StolenDetected => self.stolen_detected += 1,
            PaymentOutcome::Blocked => self.blocked += 1,
            PaymentOutcome::Dos => self.dos += 1,
        }
    }

    pub fn total(&self) -> u32 {
        self.legit_payment + self.stolen_undetected + self.stolen_detected + self.blocked + self.dos
    }
}

pub const CSV_HEADER: &str = "index,outcome,setup_time_us,notification_delay_us,stolen_amount";

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum EmitFormat {
    Csv,
    Json,
    Summary,
}

impl FromStr for EmitFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(EmitFormat::Csv),
            "json" => Ok(EmitFormat::Json),
            "summary" => Ok(EmitFormat::Summary),
            other => Err(format!("unknown format {other:?} (csv|json|summary)")),
        }
    }
}

impl fmt::Display for EmitFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmitFormat::Csv => "csv",
            EmitFormat::Json => "json",
            EmitFormat::Summary => "summary",
        })
    }
}

/// Complete result of one scenario run.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Report {
    /// The scenario as parsed, defaults filled in.
    pub scenario: Scenario,
    /// Seed actually used (after any override).
    pub seed: u64,
    pub records: Vec<PaymentRecord>,
    pub aggregates: Aggregates,
    pub outcome_counts: OutcomeCounts,
    pub total_stolen: u64,
    pub fake_notifications: u32,
    pub dropped_notifications: u32,
    pub missing_notifications: u32,
}

impl Report {
    pub fn assemble(
        scenario: Scenario,
        seed: u64,
        records: Vec<PaymentRecord>,
        counters: &RunCounters,
    ) -> Report {
        let setup: Vec<u64> = records.iter().filter_map(|r| r.setup_time_us).collect();
        let delays: Vec<u64> = records
            .iter()
            .filter_map(|r| r.notification_delay_us)
            .collect();
        let mut outcome_counts = OutcomeCounts::default();
        for r in &records {
            outcome_counts.count(r.outcome);
        }
        let report = Report {
            scenario,
            seed,
            total_stolen: records.iter().map(|r| r.stolen_amount).sum(),
            aggregates: Aggregates {
                setup_time: mean_sd(&setup),
                notification_delay: mean_sd(&delays),
            },
            outcome_counts,
            records,
            fake_notifications: counters.fake_notifications,
            dropped_notifications: counters.dropped_notifications,
            missing_notifications: counters.missing_notifications,
        };
        debug_assert!(report.aggregates_consistent(1.0));
        report
    }

    /// Recompute the aggregates from the records and compare within
    /// `tolerance_us`.
    pub fn aggregates_consistent(&self, tolerance_us: f64) -> bool {
        let close = |a: Option<MeanSd>, b: Option<MeanSd>| match (a, b) {
            (None, None) => true,
            (Some(x), Some(y)) => {
                x.n == y.n
                    && (x.mean_us - y.mean_us).abs() <= tolerance_us
                    && (x.sd_us - y.sd_us).abs() <= tolerance_us
            }
            _ => false,
        };
        let setup: Vec<u64> = self.records.iter().filter_map(|r| r.setup_time_us).collect();
        let delays: Vec<u64> = self
            .records
            .iter()
            .filter_map(|r| r.notification_delay_us)
            .collect();
        let mut counts = OutcomeCounts::default();
        for r in &self.records {
            counts.count(r.outcome);
        }
        close(self.aggregates.setup_time, mean_sd(&setup))
            && close(self.aggregates.notification_delay, mean_sd(&delays))
            && counts == self.outcome_counts
            && self.total_stolen == self.records.iter().map(|r| r.stolen_amount).sum::<u64>()
    }

    pub fn emit(&self, format: EmitFormat) -> String {
        match format {
            EmitFormat::Csv => self.to_csv(),
            EmitFormat::Json => self.to_json(),
            EmitFormat::Summary => self.to_summary(),
        }
    }

    /// One row per payment; absent durations are empty fields.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.index,
                r.outcome,
                opt(r.setup_time_us),
                opt(r.notification_delay_us),
                r.stolen_amount
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Human-readable digest: outcome counts plus mean ± sd of the two
    /// measured intervals.
    pub fn to_summary(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "seed: {}\npayments: {}  attack: {}  link: {}\n",
            self.seed,
            self.records.len(),
            serde_json::to_value(self.scenario.attack)
                .expect("serializes")
                .as_str()
                .unwrap_or("?"),
            self.scenario.link
        ));
        let c = &self.outcome_counts;
        out.push_str(&format!(
            "outcomes: legit_payment={} stolen_undetected={} stolen_detected={} blocked={} dos={}\n",
            c.legit_payment, c.stolen_undetected, c.stolen_detected, c.blocked, c.dos
        ));
        out.push_str(&format!("total stolen: {}\n", self.total_stolen));
        let line = |name: &str, m: &MeanSd| {
            format!(
                "{name}: mean {:.3} ms \u{00b1} {:.3} ms (n={})\n",
                m.mean_us / 1_000.0,
                m.sd_us / 1_000.0,
                m.n
            )
        };
        if let Some(m) = &self.aggregates.setup_time {
            out.push_str(&line("setup time", m));
        }
        if let Some(m) = &self.aggregates.notification_delay {
            out.push_str(&line("notification delay", m));
        }
        if self.missing_notifications > 0 || self.dropped_notifications > 0 {
            out.push_str(&format!(
                "notification losses: dropped={} missing={}\n",
                self.dropped_notifications, self.missing_notifications
            ));
        }
        out
    }
}
