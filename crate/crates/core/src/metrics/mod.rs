//! Benchmark metrics over trajectory logs: progress rate, humanness, rule
//! compliance, mission time efficiency, safe following distance and the
//! weighted S_bench combination.

mod report;

pub use report::{AgentScores, MetricReport, ScenarioScores};

use crate::dynamics::{LongLat, VehicleState};
use crate::engine::{ActorId, ActorRecord, TrajectoryLog};
use crate::map::OffroadStatus;
use crate::scenario::TaskFamily;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("no logs to evaluate")]
    Empty,
    #[error("log `{0}` has no mission vehicles")]
    NoMissions(String),
    #[error("log `{scenario}`: mission `{agent}` starts at its goal")]
    DegenerateMission { scenario: String, agent: ActorId },
    #[error("adaptive log `{0}` names no lead vehicle")]
    NoLead(String),
    #[error("logs mix task families")]
    MixedTasks,
    #[error("weights must be non-negative and sum to 1 (got {0})")]
    Weights(f64),
    #[error("exactly one task metric (MTE or SFD) is required")]
    TaskMetric,
    #[error("invalid metric config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub pr: f64,
    pub rc: f64,
    pub humanness: f64,
    /// MTE for collaborative suites, SFD for adaptive ones.
    pub task: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            pr: 0.1,
            rc: 0.45,
            humanness: 0.15,
            task: 0.3,
        }
    }
}

impl Weights {
    pub fn sum(&self) -> f64 {
        self.pr + self.rc + self.humanness + self.task
    }

    pub fn validate(&self) -> Result<(), String> {
        let all = [self.pr, self.rc, self.humanness, self.task];
        if all.iter().any(|w| !(*w >= 0.0)) || (self.sum() - 1.0).abs() > 1e-9 {
            return Err(format!(
                "weights must be non-negative and sum to 1, got {}",
                self.sum()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub jerk_max: LongLat,
    pub acc_max: LongLat,
    /// Rolling penalty window, seconds.
    pub penalty_period: f64,
    /// Follow-margin headway behind the lead, seconds.
    pub min_headway: f64,
    /// Largest acceptable time gap to the follow margin, seconds.
    pub t_max: f64,
    pub weights: Weights,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            jerk_max: LongLat::new(0.9, 0.9),
            acc_max: LongLat::new(2.0, 1.47),
            penalty_period: 1.0,
            min_headway: 1.0,
            t_max: 3.0,
            weights: Weights::default(),
        }
    }
}

/// Follow margins never shrink below this, meters.
pub const MIN_FOLLOW_MARGIN: f64 = 2.0;

impl MetricConfig {
    pub fn validate(&self) -> Result<(), MetricError> {
        let pos = [
            self.jerk_max.long,
            self.jerk_max.lat,
            self.acc_max.long,
            self.acc_max.lat,
            self.min_headway,
            self.t_max,
        ];
        if pos.iter().any(|v| !(*v > 0.0)) || !(self.penalty_period >= 0.0) {
            return Err(MetricError::Config(
                "limits, headway and t_max must be positive; penalty period non-negative".into(),
            ));
        }
        self.weights
            .validate()
            .map_err(|_| MetricError::Weights(self.weights.sum()))
    }

    /// Dimensionless discomfort: largest of the four jerk and acceleration
    /// ratios.
    pub fn dyn_ratio(&self, s: &VehicleState) -> f64 {
        [
            s.jerk.long.abs() / self.jerk_max.long,
            s.jerk.lat.abs() / self.jerk_max.lat,
            s.accel.long.abs() / self.acc_max.long,
            s.accel.lat.abs() / self.acc_max.lat,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// One mission vehicle's slice of a log.
struct Agent<'a> {
    log: &'a TrajectoryLog,
    id: &'a ActorId,
    /// Last step that counts: arrival, termination or timeout, else the
    /// final snapshot.
    end: u64,
    arrival: Option<u64>,
}

impl<'a> Agent<'a> {
    fn record(&self, step: u64) -> Option<&'a ActorRecord> {
        self.log.snapshot(step)?.actor(self.id)
    }

    /// Records of steps `1..=end` (missing steps skipped).
    fn window(&self) -> impl Iterator<Item = &'a ActorRecord> + '_ {
        (1..=self.end).filter_map(|s| self.record(s))
    }

    fn steps(&self, dt: f64, seconds: f64) -> u64 {
        (seconds / dt).round() as u64
    }
}

fn agents(log: &TrajectoryLog) -> Result<Vec<Agent<'_>>, MetricError> {
    if log.header.missions.is_empty() {
        return Err(MetricError::NoMissions(log.header.scenario_id.clone()));
    }
    Ok(log
        .header
        .missions
        .iter()
        .map(|m| {
            let outcome = log.outcomes.get(&m.id);
            Agent {
                log,
                id: &m.id,
                end: outcome.map_or(log.last_step(), |o| o.step().min(log.last_step())),
                arrival: outcome.filter(|o| o.arrived()).map(|o| o.step()),
            }
        })
        .collect())
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for x in xs {
        sum += x;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// `1 - mean over scenarios of mean over agents of term`, with per-agent
/// terms kept for the report.
fn aggregate<F>(logs: &[TrajectoryLog], mut term: F) -> Result<(f64, Vec<Vec<f64>>), MetricError>
where
    F: FnMut(&TrajectoryLog, &Agent) -> Result<f64, MetricError>,
{
    if logs.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut per = Vec::with_capacity(logs.len());
    for log in logs {
        let terms = agents(log)?
            .iter()
            .map(|a| term(log, a).map(|t| t.clamp(0.0, 1.0)))
            .collect::<Result<Vec<_>, _>>()?;
        per.push(terms);
    }
    let score = 1.0 - mean(per.iter().map(|t| mean(t.iter().copied()).unwrap())).unwrap();
    Ok((score.clamp(0.0, 1.0), per))
}

fn pr_term(log: &TrajectoryLog, a: &Agent) -> Result<f64, MetricError> {
    let m = log.header.missions.iter().find(|m| &m.id == a.id).unwrap();
    let d_init = m.start.distance(m.goal.position);
    if m.goal.reached(m.start) || d_init == 0.0 {
        return Err(MetricError::DegenerateMission {
            scenario: log.header.scenario_id.clone(),
            agent: a.id.clone(),
        });
    }
    if a.arrival.is_some() {
        return Ok(0.0);
    }
    let last = (0..=a.end)
        .rev()
        .find_map(|s| a.record(s))
        .map_or(m.start, |r| r.state.position);
    Ok(last.distance(m.goal.position).min(d_init) / d_init)
}

fn humanness_term(log: &TrajectoryLog, a: &Agent, cfg: &MetricConfig) -> f64 {
    let dt = log.header.dt;
    let n_trv = a.steps(dt, a.arrival.map_or(log.header.time_limit, |s| s as f64 * dt));
    let n_p = a.steps(dt, cfg.penalty_period);
    // dyn per step 0..=n_trv; beyond the agent's window it is zero.
    let dyn_at: Vec<f64> = (0..=n_trv)
        .map(|s| {
            if s == 0 || s > a.end {
                0.0
            } else {
                a.record(s).map_or(0.0, |r| cfg.dyn_ratio(&r.state))
            }
        })
        .collect();
    let mut uncomfortable = 0u64;
    for t in 1..=n_trv + n_p {
        let lo = t.saturating_sub(n_p);
        let hi = t.min(n_trv);
        if (lo..=hi).any(|s| dyn_at[s as usize] > 1.0) {
            uncomfortable += 1;
        }
    }
    let total = n_trv + n_p;
    let comf = if total == 0 {
        0.0
    } else {
        uncomfortable as f64 / total as f64
    };
    let lc_off = mean(a.window().map(|r| {
        if r.offroad == OffroadStatus::FullOffroad {
            1.0
        } else {
            (r.lane.offset.abs() / (0.5 * r.lane.width)).clamp(0.0, 1.0)
        }
    }))
    .unwrap_or(0.0);
    0.5 * (comf + lc_off)
}

fn rc_term(a: &Agent) -> f64 {
    let per_step = a.window().map(|r| {
        let limit = r.lane.speed_limit;
        let over = (r.state.speed - limit).max(0.0);
        let s = (over / (0.5 * limit)).min(1.0);
        let w = if r.wrong_way { 1.0 } else { 0.0 };
        let po = if r.offroad == OffroadStatus::OnRoad {
            0.0
        } else {
            1.0
        };
        (s + w + po) / 3.0
    });
    mean(per_step).unwrap_or(0.0)
}

fn mte_term(log: &TrajectoryLog, a: &Agent) -> f64 {
    let t_sc = log.header.time_limit;
    let tr = a.arrival.map_or(t_sc, |s| s as f64 * log.header.dt);
    (tr / t_sc).min(1.0)
}

/// Follow-margin penalty for one step.
pub fn gap_penalty(ego: &VehicleState, lead: &VehicleState, cfg: &MetricConfig) -> f64 {
    let f = lead.forward();
    let rear = lead.position - f * (0.5 * lead.length);
    let front = ego.position + ego.forward() * (0.5 * ego.length);
    let gap = (rear - front).dot(f);
    let margin = (cfg.min_headway * lead.speed).max(MIN_FOLLOW_MARGIN);
    let to_boundary = gap - margin;
    if to_boundary < 0.0 {
        return 1.0;
    }
    let tg = to_boundary / ego.speed.max(0.1);
    if tg > cfg.t_max {
        1.0
    } else {
        tg / cfg.t_max
    }
}

fn sfd_term(log: &TrajectoryLog, a: &Agent, cfg: &MetricConfig) -> Result<f64, MetricError> {
    let lead = log
        .header
        .lead
        .as_ref()
        .ok_or_else(|| MetricError::NoLead(log.header.scenario_id.clone()))?;
    let penalties = (1..=a.end).filter_map(|s| {
        let snap = log.snapshot(s)?;
        let ego = snap.actor(a.id)?;
        let l = snap.actor(lead)?;
        Some(gap_penalty(&ego.state, &l.state, cfg))
    });
    Ok(mean(penalties).unwrap_or(1.0))
}

pub fn progress_rate(logs: &[TrajectoryLog]) -> Result<f64, MetricError> {
    aggregate(logs, pr_term).map(|r| r.0)
}

pub fn humanness(logs: &[TrajectoryLog], cfg: &MetricConfig) -> Result<f64, MetricError> {
    aggregate(logs, |l, a| Ok(humanness_term(l, a, cfg))).map(|r| r.0)
}

pub fn rule_compliance(logs: &[TrajectoryLog]) -> Result<f64, MetricError> {
    aggregate(logs, |_, a| Ok(rc_term(a))).map(|r| r.0)
}

pub fn mission_time_efficiency(logs: &[TrajectoryLog]) -> Result<f64, MetricError> {
    aggregate(logs, |l, a| Ok(mte_term(l, a))).map(|r| r.0)
}

pub fn safe_following_distance(
    logs: &[TrajectoryLog],
    cfg: &MetricConfig,
) -> Result<f64, MetricError> {
    aggregate(logs, |l, a| sfd_term(l, a, cfg)).map(|r| r.0)
}

/// Metric values entering the weighted combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Partials {
    pub pr: f64,
    pub rc: f64,
    pub humanness: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mte: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sfd: Option<f64>,
}

/// Weighted average `sum(w * M) / sum(w)`.
pub fn combine(p: &Partials, w: &Weights) -> Result<f64, MetricError> {
    w.validate().map_err(|_| MetricError::Weights(w.sum()))?;
    let task = match (p.mte, p.sfd) {
        (Some(t), None) | (None, Some(t)) => t,
        _ => return Err(MetricError::TaskMetric),
    };
    Ok((w.pr * p.pr + w.rc * p.rc + w.humanness * p.humanness + w.task * task) / w.sum())
}

/// Full report over the logs of one suite.
pub fn evaluate(logs: &[TrajectoryLog], cfg: &MetricConfig) -> Result<MetricReport, MetricError> {
    cfg.validate()?;
    let task = logs.first().ok_or(MetricError::Empty)?.header.task;
    if logs.iter().any(|l| l.header.task != task) {
        return Err(MetricError::MixedTasks);
    }
    let (pr, pr_t) = aggregate(logs, pr_term)?;
    let (rc, rc_t) = aggregate(logs, |_, a| Ok(rc_term(a)))?;
    let (hu, hu_t) = aggregate(logs, |l, a| Ok(humanness_term(l, a, cfg)))?;
    let (tm, tm_t) = match task {
        TaskFamily::Collaborative => aggregate(logs, |l, a| Ok(mte_term(l, a)))?,
        TaskFamily::Adaptive => aggregate(logs, |l, a| sfd_term(l, a, cfg))?,
    };
    let partials = Partials {
        pr,
        rc,
        humanness: hu,
        mte: (task == TaskFamily::Collaborative).then_some(tm),
        sfd: (task == TaskFamily::Adaptive).then_some(tm),
    };
    let s_bench = combine(&partials, &cfg.weights)?;
    let mut scenarios = Vec::new();
    let mut agent_rows = Vec::new();
    for (k, log) in logs.iter().enumerate() {
        let one = |t: &Vec<Vec<f64>>| 1.0 - mean(t[k].iter().copied()).unwrap();
        scenarios.push(ScenarioScores {
            scenario: log.header.scenario_id.clone(),
            pr: one(&pr_t),
            rc: one(&rc_t),
            humanness: one(&hu_t),
            task: one(&tm_t),
        });
        for (i, m) in log.header.missions.iter().enumerate() {
            agent_rows.push(AgentScores {
                scenario: log.header.scenario_id.clone(),
                agent: m.id.clone(),
                pr: 1.0 - pr_t[k][i],
                rc: 1.0 - rc_t[k][i],
                humanness: 1.0 - hu_t[k][i],
                task: 1.0 - tm_t[k][i],
                outcome: log.outcomes.get(&m.id).copied(),
            });
        }
    }
    Ok(MetricReport {
        task,
        partials,
        s_bench,
        weights: cfg.weights,
        scenarios,
        agents: agent_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_weights_sum_to_one() {
        Weights::default().validate().unwrap();
    }

    #[test]
    fn combine_all_ones() {
        let p = Partials {
            pr: 1.0,
            rc: 1.0,
            humanness: 1.0,
            mte: Some(1.0),
            sfd: None,
        };
        assert!((combine(&p, &Weights::default()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn combine_needs_exactly_one_task_metric() {
        let mut p = Partials {
            pr: 1.0,
            rc: 1.0,
            humanness: 1.0,
            mte: Some(1.0),
            sfd: Some(1.0),
        };
        assert_eq!(combine(&p, &Weights::default()), Err(MetricError::TaskMetric));
        p.mte = None;
        p.sfd = None;
        assert_eq!(combine(&p, &Weights::default()), Err(MetricError::TaskMetric));
    }

    #[test]
    fn combine_rejects_bad_weights() {
        let p = Partials {
            pr: 1.0,
            rc: 1.0,
            humanness: 1.0,
            mte: Some(1.0),
            sfd: None,
        };
        let w = Weights {
            task: 0.5,
            ..Weights::default()
        };
        assert!(matches!(combine(&p, &w), Err(MetricError::Weights(_))));
    }

    #[test]
    fn dyn_is_max_of_four_ratios() {
        let cfg = MetricConfig::default();
        let mut s = VehicleState::new(crate::geom::Vec2::ZERO, 0.0, 0.0);
        s.accel = LongLat::new(-1.0, 1.47 * 1.5);
        s.jerk = LongLat::new(0.45, 0.0);
        assert!((cfg.dyn_ratio(&s) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn gap_penalty_branches() {
        let cfg = MetricConfig::default();
        let lead = VehicleState::new(crate::geom::Vec2::new(100.0, 0.0), 0.0, 10.0);
        // Margin 10 m behind the rear bumper at x = 97.75; boundary at 87.75.
        let at = |front: f64, v: f64| {
            VehicleState::new(crate::geom::Vec2::new(front - 2.25, 0.0), 0.0, v)
        };
        assert_eq!(gap_penalty(&at(87.75, 10.0), &lead, &cfg), 0.0);
        assert_eq!(gap_penalty(&at(90.0, 10.0), &lead, &cfg), 1.0);
        assert!((gap_penalty(&at(72.75, 10.0), &lead, &cfg) - 0.5).abs() < 1e-12);
        assert_eq!(gap_penalty(&at(10.0, 10.0), &lead, &cfg), 1.0);
    }
}
