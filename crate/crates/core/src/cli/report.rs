//! Machine-readable run reports.
//!
//! JSON is the primary format. Floating-point values that feed verification
//! (residuals, the tolerance, the final factor) are written with 17
//! significant digits so that a report read back compares equal to the one
//! written.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::densela::TriangularFactor;
use crate::error::{Error, Result};
use crate::tsqr::{AlgorithmKind, RunConfig, RunReport, Verdict};

pub const SCHEMA_VERSION: &str = "ft-tsqr/1";

/// Serde helpers that print `f64` in `{:.16e}` form.
pub(crate) mod sci17 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use serde_json::value::RawValue;

    fn raw(x: f64) -> Box<RawValue> {
        RawValue::from_string(format!("{x:.16e}")).expect("exponent form is valid JSON")
    }

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        raw(*x).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        f64::deserialize(d)
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            x.map(raw).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            Option::<f64>::deserialize(d)
        }
    }

    pub mod rows {
        use super::*;

        pub fn serialize<S: Serializer>(
            x: &Option<Vec<Vec<f64>>>,
            s: S,
        ) -> Result<S::Ok, S::Error> {
            x.as_ref()
                .map(|rows| {
                    rows.iter()
                        .map(|row| row.iter().copied().map(raw).collect::<Vec<_>>())
                        .collect::<Vec<_>>()
                })
                .serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(
            d: D,
        ) -> Result<Option<Vec<Vec<f64>>>, D::Error> {
            Option::<Vec<Vec<f64>>>::deserialize(d)
        }
    }
}

/// Where the global matrix came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSource {
    Seeded,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub algorithm: AlgorithmKind,
    pub procs: usize,
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
    pub failures: String,
    #[serde(with = "sci17")]
    pub tol: f64,
    pub input: InputSource,
}

impl ConfigEcho {
    pub fn new(config: &RunConfig, input: InputSource) -> Self {
        Self {
            algorithm: config.algorithm,
            procs: config.procs,
            rows: config.rows,
            cols: config.cols,
            seed: config.seed,
            failures: config.schedule.to_string(),
            tol: config.tol,
            input,
        }
    }

    pub fn to_config(&self) -> Result<RunConfig> {
        let config = RunConfig::new(self.algorithm, self.procs, self.rows, self.cols, self.seed)
            .with_schedule(self.failures.parse()?)
            .with_tol(self.tol);
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankOutcome {
    pub rank: usize,
    pub status: String,
    pub step: usize,
    pub holds_final: bool,
    #[serde(with = "sci17::option")]
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema_version: String,
    pub config: ConfigEcho,
    pub verdict: Verdict,
    pub holders: Vec<usize>,
    pub budget_ok: bool,
    pub data_loss: bool,
    pub respawns: usize,
    pub rounds: usize,
    pub alive_at_end: usize,
    #[serde(with = "sci17::option")]
    pub max_residual: Option<f64>,
    pub ranks: Vec<RankOutcome>,
    /// Rows of the factor all holders agree on.
    #[serde(with = "sci17::rows")]
    pub final_r: Option<Vec<Vec<f64>>>,
    pub wall_time_ms: u64,
}

impl ReportDocument {
    pub fn new(
        config: &RunConfig,
        input: InputSource,
        report: &RunReport,
        wall_time_ms: u64,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.to_string(),
            config: ConfigEcho::new(config, input),
            verdict: report.verdict(),
            holders: report.holders.iter().map(|r| r.0).collect(),
            budget_ok: report.budget_ok,
            data_loss: report.data_loss,
            respawns: report.respawns,
            rounds: report.rounds,
            alive_at_end: report.alive_count(),
            max_residual: report.max_residual(),
            ranks: report
                .procs
                .iter()
                .map(|p| RankOutcome {
                    rank: p.rank.0,
                    status: p.status.label().to_string(),
                    step: p.step,
                    holds_final: p.holds_final,
                    residual: p.residual,
                })
                .collect(),
            final_r: report.final_r.as_ref().map(|r| r.as_matrix().to_rows()),
            wall_time_ms,
        }
    }

    pub fn final_factor(&self) -> Result<Option<TriangularFactor>> {
        self.final_r
            .as_ref()
            .map(|rows| {
                crate::densela::Matrix::from_rows(rows).and_then(TriangularFactor::try_from)
            })
            .transpose()
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("report: {e}")))?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported report schema {:?}",
                doc.schema_version
            )));
        }
        Ok(doc)
    }

    /// One row per rank.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
        wtr.write_record(["rank", "status", "step", "holds_final", "residual"])
            .map_err(io)?;
        for r in &self.ranks {
            wtr.write_record([
                r.rank.to_string(),
                r.status.clone(),
                r.step.to_string(),
                r.holds_final.to_string(),
                r.residual.map(|x| format!("{x:.16e}")).unwrap_or_default(),
            ])
            .map_err(io)?;
        }
        wtr.flush()
            .map_err(|e| Error::InvalidArgument(format!("csv: {e}")))
    }
}
