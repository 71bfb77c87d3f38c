//! Machine-readable run summaries (`summary.json`) and check outcomes.
//!
//! Field order is fixed by the struct layout and metric maps are sorted, so
//! two runs of the same manifest produce byte-identical JSON apart from the
//! explicitly volatile `wall_ms` counter.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub const SUMMARY_SCHEMA: &str = "coagdiff.summary/1";

/// One named numeric check with its threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    /// Comparison applied: "le" (value <= threshold) or "ge".
    pub op: String,
    pub pass: bool,
}

impl CheckOutcome {
    pub fn le(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, op: "le".into(), pass: value <= threshold }
    }

    pub fn ge(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, op: "ge".into(), pass: value >= threshold }
    }

    /// One formatted pass/fail line for terminal output.
    pub fn line(&self) -> String {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        let rel = match self.op.as_str() {
            "le" => "<=",
            "ge" => ">=",
            other => other,
        };
        format!("[{verdict}] {}: {:.6e} {rel} {:.6e}", self.name, self.value, self.threshold)
    }
}

/// Versioned summary written next to the CSV artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub schema: String,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<String>,
    pub version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Resolved configuration snapshot.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<CheckOutcome>,
    pub passed: bool,
    pub counters: BTreeMap<String, u64>,
    /// Wall-clock milliseconds; excluded from reproducibility guarantees.
    pub wall_ms: u64,
}

impl Summary {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            schema: SUMMARY_SCHEMA.into(),
            command: command.into(),
            experiment: None,
            version: env!("CARGO_PKG_VERSION").into(),
            seed: None,
            config: None,
            metrics: BTreeMap::new(),
            checks: Vec::new(),
            passed: true,
            counters: BTreeMap::new(),
            wall_ms: 0,
        }
    }

    pub fn with_config_snapshot(mut self, snapshot: &toml::Value) -> Self {
        self.config = serde_json::to_value(snapshot).ok();
        self
    }

    pub fn push_check(&mut self, check: CheckOutcome) {
        self.passed &= check.pass;
        self.checks.push(check);
    }

    pub fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    pub fn counter(&mut self, name: impl Into<String>, value: u64) {
        self.counters.insert(name.into(), value);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes") + "\n"
    }
}

/// Reproducibility manifest describing one experiment invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub experiment: String,
    pub version: String,
    pub seed: Option<u64>,
    /// Resolved config snapshot (TOML text).
    pub config_toml: String,
    /// Files the run writes, relative to the output directory.
    pub artifacts: Vec<String>,
}

impl Manifest {
    pub fn new(experiment: impl Into<String>) -> Self {
        Self {
            schema: "coagdiff.manifest/1".into(),
            experiment: experiment.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: None,
            config_toml: String::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_outcomes() {
        let c = CheckOutcome::le("drift", 1e-9, 1e-8);
        assert!(c.pass);
        assert!(c.line().starts_with("[PASS]"));
        let c = CheckOutcome::ge("estimate", 0.5, 1.0 - 1e-6);
        assert!(!c.pass);
        assert!(c.line().contains(">="));
    }

    #[test]
    fn summary_round_trip_and_determinism() {
        let mut s = Summary::new("experiment");
        s.experiment = Some("E1".into());
        s.metric("mass_drift_rel", 3e-10);
        s.counter("steps", 2000);
        s.push_check(CheckOutcome::le("mass_drift_rel", 3e-10, 1e-8));
        let a = s.to_json();
        let b = s.to_json();
        assert_eq!(a, b);
        let back: Summary = serde_json::from_str(&a).unwrap();
        assert_eq!(back.schema, SUMMARY_SCHEMA);
        assert!(back.passed);
    }
}
