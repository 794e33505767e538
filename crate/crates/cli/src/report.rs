//! Results CSV and JSON sidecar.

use std::io::Write;

use serde::{Deserialize, Serialize};
use stratsurv_core::simharness::{AggregateMetrics, CoxMethod, TestKind};

use crate::config::StudyConfigFile;
use crate::CliError;

pub const COLUMNS: [&str; 23] = [
    "scenario",
    "allocation",
    "true_hr",
    "events",
    "n",
    "bias_unstrat",
    "bias_mult",
    "bias_strat",
    "se_unstrat",
    "se_mult",
    "se_strat",
    "mse_unstrat",
    "mse_mult",
    "mse_strat",
    "power_lr",
    "power_strat_lr",
    "power_mult_cox",
    "power_strat_cox",
    "power_unstrat_cox",
    "replicates_excluded_unstrat",
    "replicates_excluded_mult",
    "replicates_excluded_strat",
    "status",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowOutcome {
    pub scenario: String,
    pub allocation: String,
    pub true_hr: f64,
    pub events: usize,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<AggregateMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RowOutcome {
    pub fn status(&self) -> String {
        match (&self.metrics, &self.error) {
            (_, Some(e)) => format!("failed: {e}"),
            (Some(m), None) if !m.diagnostics.is_empty() => format!("warning: {}", m.diagnostics.join("; ")),
            _ => "ok".to_string(),
        }
    }

    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

fn three(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.3}"))
}

/// Writes the metric table: three decimals for bias/SE/MSE, power as a
/// percentage with one decimal, `\n` line endings.
pub fn write_results_csv<W: Write>(writer: W, rows: &[RowOutcome]) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let io = |e: csv::Error| CliError::Runtime(format!("writing results: {e}"));
    w.write_record(COLUMNS).map_err(io)?;
    for row in rows {
        let mut rec = vec![
            row.scenario.clone(),
            row.allocation.clone(),
            format!("{}", row.true_hr),
            row.events.to_string(),
            row.n.to_string(),
        ];
        match &row.metrics {
            Some(m) => {
                for pick in [
                    |c: &stratsurv_core::simharness::MethodMetrics| c.avg_bias,
                    |c: &stratsurv_core::simharness::MethodMetrics| c.avg_se,
                    |c: &stratsurv_core::simharness::MethodMetrics| c.mse,
                ] {
                    rec.extend(CoxMethod::ALL.iter().map(|&cm| three(pick(m.method(cm)))));
                }
                rec.extend(
                    [
                        TestKind::LogRank,
                        TestKind::StratifiedLogRank,
                        TestKind::WaldMultivariate,
                        TestKind::WaldStratified,
                        TestKind::WaldUnstratified,
                    ]
                    .iter()
                    .map(|&t| format!("{:.1}", 100.0 * m.power_of(t))),
                );
                rec.extend(CoxMethod::ALL.iter().map(|&cm| m.method(cm).replicates_excluded.to_string()));
            }
            None => rec.extend(std::iter::repeat_n("NA".to_string(), 17)),
        }
        rec.push(row.status());
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Runtime(format!("writing results: {e}")))
}

/// Provenance record written next to the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    /// Effective configuration, including any command-line seed override.
    pub config: StudyConfigFile,
    pub rows: Vec<RowOutcome>,
}

impl Sidecar {
    pub fn new(config: StudyConfigFile, rows: Vec<RowOutcome>) -> Self {
        Sidecar {
            tool: "stratsurv".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: config.run.seed,
            config,
            rows,
        }
    }
}
