use super::{Partials, Weights};
use crate::engine::{ActorId, Outcome};
use crate::scenario::TaskFamily;
use serde::{Deserialize, Serialize};
use std::fmt::Write;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScores {
    pub scenario: String,
    pub pr: f64,
    pub rc: f64,
    pub humanness: f64,
    /// MTE or SFD, following the suite's task family.
    pub task: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentScores {
    pub scenario: String,
    pub agent: ActorId,
    pub pr: f64,
    pub rc: f64,
    pub humanness: f64,
    pub task: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: TaskFamily,
    #[serde(flatten)]
    pub partials: Partials,
    pub s_bench: f64,
    pub weights: Weights,
    pub scenarios: Vec<ScenarioScores>,
    pub agents: Vec<AgentScores>,
}

impl MetricReport {
    pub fn task_metric(&self) -> (&'static str, f64) {
        match (self.partials.mte, self.partials.sfd) {
            (Some(m), _) => ("MTE", m),
            (_, Some(s)) => ("SFD", s),
            _ => ("MTE", f64::NAN),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Header plus one summary row.
    pub fn to_csv(&self, method: &str) -> String {
        let (name, v) = self.task_metric();
        let p = &self.partials;
        format!(
            "Method,PR,RC,Humanness,{name},S_bench\n{},{:.3},{:.3},{:.3},{:.3},{:.3}\n",
            csv_field(method),
            p.pr,
            p.rc,
            p.humanness,
            v,
            self.s_bench
        )
    }

    /// Plain-text table with the per-scenario breakdown under the summary.
    pub fn to_table(&self, method: &str) -> String {
        let (name, v) = self.task_metric();
        let p = &self.partials;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24} {:>6} {:>6} {:>10} {:>6} {:>8}",
            "Method", "PR", "RC", "Humanness", name, "S_bench"
        );
        let _ = writeln!(
            out,
            "{:<24} {:>6.3} {:>6.3} {:>10.3} {:>6.3} {:>8.3}",
            method, p.pr, p.rc, p.humanness, v, self.s_bench
        );
        if !self.scenarios.is_empty() {
            let _ = writeln!(out);
            for s in &self.scenarios {
                let _ = writeln!(
                    out,
                    "  {:<22} {:>6.3} {:>6.3} {:>10.3} {:>6.3}",
                    s.scenario, s.pr, s.rc, s.humanness, s.task
                );
            }
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> MetricReport {
        MetricReport {
            task: TaskFamily::Adaptive,
            partials: Partials {
                pr: 0.5,
                rc: 0.25,
                humanness: 1.0,
                mte: None,
                sfd: Some(0.125),
            },
            s_bench: 0.4,
            weights: Weights::default(),
            scenarios: vec![],
            agents: vec![],
        }
    }

    #[test]
    fn csv_uses_task_column() {
        let csv = report().to_csv("a,b");
        assert_eq!(
            csv,
            "Method,PR,RC,Humanness,SFD,S_bench\n\"a,b\",0.500,0.250,1.000,0.125,0.400\n"
        );
    }

    #[test]
    fn json_omits_absent_metric() {
        let v: serde_json::Value = serde_json::from_str(&report().to_json()).unwrap();
        assert!(v.get("mte").is_none());
        assert_eq!(v["sfd"], 0.125);
        assert_eq!(v["task"], "adaptive");
    }
}
