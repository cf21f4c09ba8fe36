//! Trajectory log: the per-step record of an episode and its line-delimited
//! JSON serialization.

use super::{ActorId, ActorStatus, Event, LaneContext, Outcome, Role};
use crate::dynamics::VehicleState;
use crate::geom::Vec2;
use crate::map::{Goal, MapSpec, OffroadStatus};
use crate::scenario::TaskFamily;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed log line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("malformed log: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionRecord {
    pub id: ActorId,
    pub start: Vec2,
    pub goal: Goal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub scenario_id: String,
    pub task: TaskFamily,
    pub dt: f64,
    pub time_limit: f64,
    pub seed: u64,
    pub missions: Vec<MissionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lead: Option<ActorId>,
    pub map: MapSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorRecord {
    pub id: ActorId,
    pub role: Role,
    pub status: ActorStatus,
    pub state: VehicleState,
    pub lane: LaneContext,
    pub offroad: OffroadStatus,
    pub wrong_way: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: u64,
    pub actors: Vec<ActorRecord>,
}

impl Snapshot {
    pub fn actor(&self, id: &ActorId) -> Option<&ActorRecord> {
        self.actors
            .binary_search_by(|a| a.id.cmp(id))
            .ok()
            .map(|i| &self.actors[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OutcomeLine {
    actor: ActorId,
    #[serde(flatten)]
    outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    Header(LogHeader),
    Snapshot(Snapshot),
    Event(Event),
    Outcome(OutcomeLine),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub header: LogHeader,
    /// Contiguous from step 0; actors sorted by id.
    pub snapshots: Vec<Snapshot>,
    /// Sorted by step.
    pub events: Vec<Event>,
    pub outcomes: BTreeMap<ActorId, Outcome>,
}

impl TrajectoryLog {
    pub fn new(header: LogHeader) -> Self {
        Self {
            header,
            snapshots: Vec::new(),
            events: Vec::new(),
            outcomes: BTreeMap::new(),
        }
    }

    pub fn last_step(&self) -> u64 {
        self.snapshots.last().map_or(0, |s| s.step)
    }

    pub fn snapshot(&self, step: u64) -> Option<&Snapshot> {
        self.snapshots.get(step as usize).filter(|s| s.step == step)
    }

    pub fn events_of<'a>(&'a self, actor: &'a ActorId) -> impl Iterator<Item = &'a Event> + 'a {
        self.events.iter().filter(move |e| &e.actor == actor)
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<(), LogError> {
        let bad = |m: String| Err(LogError::Malformed(m));
        if !(self.header.dt > 0.0 && self.header.time_limit > 0.0) {
            return bad("dt and time_limit must be positive".into());
        }
        if self.snapshots.is_empty() {
            return bad("no snapshots".into());
        }
        for (i, s) in self.snapshots.iter().enumerate() {
            if s.step != i as u64 {
                return bad(format!("snapshot {i} has step {}", s.step));
            }
            if s.actors.windows(2).any(|w| w[0].id >= w[1].id) {
                return bad(format!("snapshot {i}: actors not sorted by unique id"));
            }
        }
        let last = self.last_step();
        let mut prev = 0;
        for e in &self.events {
            if e.step > last || e.step < prev {
                return bad(format!("event at step {} out of order or range", e.step));
            }
            prev = e.step;
        }
        for m in &self.header.missions {
            if !(m.goal.arrival_radius > 0.0) {
                return bad(format!("mission `{}` has no arrival radius", m.id));
            }
            if let Some(o) = self.outcomes.get(&m.id) {
                if o.step() > last {
                    return bad(format!("outcome of `{}` beyond the last snapshot", m.id));
                }
            }
        }
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), LogError> {
        let line = |l: &Line, w: &mut W| -> Result<(), LogError> {
            serde_json::to_writer(&mut *w, l).map_err(|e| LogError::Io(e.into()))?;
            w.write_all(b"\n")?;
            Ok(())
        };
        line(&Line::Header(self.header.clone()), &mut w)?;
        let mut ev = self.events.iter().peekable();
        for snap in &self.snapshots {
            line(&Line::Snapshot(snap.clone()), &mut w)?;
            while let Some(e) = ev.next_if(|e| e.step <= snap.step) {
                line(&Line::Event(e.clone()), &mut w)?;
            }
        }
        for e in ev {
            line(&Line::Event(e.clone()), &mut w)?;
        }
        for (actor, outcome) in &self.outcomes {
            line(
                &Line::Outcome(OutcomeLine {
                    actor: actor.clone(),
                    outcome: *outcome,
                }),
                &mut w,
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, LogError> {
        let mut log: Option<TrajectoryLog> = None;
        for (i, text) in r.lines().enumerate() {
            let text = text?;
            if text.trim().is_empty() {
                continue;
            }
            let line: Line = serde_json::from_str(&text).map_err(|source| LogError::Parse {
                line: i + 1,
                source,
            })?;
            match (line, log.as_mut()) {
                (Line::Header(h), None) => log = Some(TrajectoryLog::new(h)),
                (Line::Header(_), Some(_)) => {
                    return Err(LogError::Malformed(format!("line {}: second header", i + 1)))
                }
                (_, None) => {
                    return Err(LogError::Malformed("log must start with a header".into()))
                }
                (Line::Snapshot(s), Some(l)) => l.snapshots.push(s),
                (Line::Event(e), Some(l)) => l.events.push(e),
                (Line::Outcome(o), Some(l)) => {
                    l.outcomes.insert(o.actor, o.outcome);
                }
            }
        }
        let log = log.ok_or_else(|| LogError::Malformed("empty log".into()))?;
        log.validate()?;
        Ok(log)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, LogError> {
        let f = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::EventKind;
    use crate::map::build;

    fn empty(steps: u64) -> TrajectoryLog {
        let mut log = TrajectoryLog::new(LogHeader {
            scenario_id: "s".into(),
            task: TaskFamily::Collaborative,
            dt: 0.1,
            time_limit: 1.0,
            seed: 0,
            missions: vec![MissionRecord {
                id: "m0".into(),
                start: Vec2::ZERO,
                goal: Goal::new(Vec2::new(5.0, 0.0)),
            }],
            lead: None,
            map: build::straight_road(1, 20.0, 3.5, 10.0),
        });
        for step in 0..=steps {
            log.snapshots.push(Snapshot { step, actors: vec![] });
        }
        log
    }

    fn event(step: u64) -> Event {
        Event {
            step,
            actor: "m0".into(),
            kind: EventKind::WrongWay,
        }
    }

    #[test]
    fn events_follow_their_snapshot() {
        let mut log = empty(2);
        log.events = vec![event(1), event(1), event(2)];
        let kinds: Vec<String> = log
            .to_jsonl()
            .lines()
            .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["type"].as_str().unwrap().to_string())
            .collect();
        assert_eq!(kinds, ["header", "snapshot", "snapshot", "event", "event", "snapshot", "event"]);
    }

    #[test]
    fn structural_checks() {
        let mut log = empty(2);
        log.snapshots[1].step = 5;
        assert!(matches!(log.validate(), Err(LogError::Malformed(_))));
        let mut log = empty(2);
        log.events = vec![event(2), event(1)];
        assert!(log.validate().is_err());
        let mut log = empty(2);
        log.outcomes.insert("m0".into(), Outcome::TimedOut { step: 3 });
        assert!(log.validate().is_err());
        assert!(empty(0).validate().is_ok());
    }

    #[test]
    fn reader_errors_carry_line_numbers() {
        let text = empty(1).to_jsonl();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[2] = "{oops";
        match TrajectoryLog::read_jsonl(lines.join("\n").as_bytes()) {
            Err(LogError::Parse { line, .. }) => assert_eq!(line, 3),
            r => panic!("{r:?}"),
        }
        let headless: String = text.lines().skip(1).collect::<Vec<_>>().join("\n");
        assert!(matches!(TrajectoryLog::read_jsonl(headless.as_bytes()), Err(LogError::Malformed(_))));
        let twice = format!("{}\n{text}", text.lines().next().unwrap());
        assert!(matches!(TrajectoryLog::read_jsonl(twice.as_bytes()), Err(LogError::Malformed(_))));
        assert!(TrajectoryLog::read_jsonl(&b""[..]).is_err());
    }
}
