use super::{
    check_termination, collisions, wrong_way_flag, Actor, ActorId, ActorStatus, Event, EventKind,
    LaneContext, LogHeader, MissionRecord, Outcome, Role, Snapshot, TrajectoryLog, WorldState,
};
use super::log::ActorRecord;
use crate::agents::{reactive_action, IdmParams, LeadController, ReplayTrack};
use crate::dynamics::{self, footprint, Action, ActionError, DynamicsLimits, VehicleState};
use crate::geom::{OrientedRect, Pose, Vec2};
use crate::map::{Goal, OffroadStatus, RoadNetwork, Route};
use crate::scenario::{Scenario, SocialBehavior, SocialSpec};
use crate::sensors::{self, MissionInfo, Observation, Sensor, SensorConfig, SensorError};
use crate::v2v::{self, SendError, V2vBus, V2vMessage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("unknown actor `{0}` in actions")]
    UnknownActor(ActorId),
    #[error("actor `{0}` is not a mission vehicle")]
    NotControllable(ActorId),
    #[error("no action for mission vehicle `{0}`")]
    MissingAction(ActorId),
    #[error("invalid action for `{actor}`: {source}")]
    InvalidAction { actor: ActorId, source: ActionError },
    #[error("episode already finished")]
    Finished,
    #[error(transparent)]
    Sensor(#[from] SensorError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// Keep per-step snapshots for the trajectory log.
    pub record: bool,
    /// Sensor used by scripted traffic (kinematic mode, no ray casting).
    pub traffic_sensor: SensorConfig,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            record: true,
            traffic_sensor: SensorConfig {
                range: 40.0,
                waypoint_horizon: 30.0,
                waypoint_spacing: 2.0,
                ..SensorConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
enum Controller {
    Replay(ReplayTrack),
    Reactive { route: Route, idm: IdmParams },
    Lead(Box<LeadController>),
}

enum Control {
    Place(Pose),
    Drive(Action),
}

/// A running episode of one scenario.
pub struct Simulation {
    net: Arc<RoadNetwork>,
    world: WorldState,
    limits: DynamicsLimits,
    max_steps: u64,
    routes: BTreeMap<ActorId, Route>,
    goals: BTreeMap<ActorId, Goal>,
    lead: Option<ActorId>,
    controllers: BTreeMap<ActorId, Controller>,
    pending: Vec<SocialSpec>,
    bus: V2vBus,
    inbox: BTreeMap<ActorId, Vec<V2vMessage>>,
    outcomes: BTreeMap<ActorId, Outcome>,
    traffic_sensor: Sensor,
    log: TrajectoryLog,
    record: bool,
    done: bool,
}

fn frozen(state: &VehicleState) -> VehicleState {
    let mut s = *state;
    s.step += 1;
    s.speed = 0.0;
    s.velocity = Vec2::ZERO;
    s.accel = dynamics::LongLat::ZERO;
    s.jerk = dynamics::LongLat::ZERO;
    s
}

impl Simulation {
    /// Starts an episode. The scenario must already be validated against
    /// `net`.
    pub fn new(scenario: &Scenario, net: Arc<RoadNetwork>) -> Self {
        Self::with_options(scenario, net, SimOptions::default())
    }

    pub fn with_options(scenario: &Scenario, net: Arc<RoadNetwork>, opts: SimOptions) -> Self {
        let mut world = WorldState {
            step: 0,
            dt: scenario.dt,
            sim_time: 0.0,
            actors: BTreeMap::new(),
            signal_phases: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
        };
        let mut routes = BTreeMap::new();
        let mut goals = BTreeMap::new();
        for m in &scenario.missions {
            let state = m.start.vehicle(m.dimensions, 0);
            world
                .actors
                .insert(m.id.clone(), Actor::new(&net, Role::Mission, state));
            routes.insert(m.id.clone(), m.route.clone());
            goals.insert(m.id.clone(), m.route.goal);
        }
        let mut controllers = BTreeMap::new();
        if let Some(l) = &scenario.lead {
            let state = l.start.vehicle(l.dimensions, 0);
            world
                .actors
                .insert(l.id.clone(), Actor::new(&net, Role::Lead, state));
            let ctrl = LeadController::new(
                &net,
                l.script.clone(),
                l.lanes.clone(),
                l.cruise_speed,
                scenario.limits,
            );
            controllers.insert(l.id.clone(), Controller::Lead(Box::new(ctrl)));
        }
        let mut pending = scenario.social.clone();
        pending.sort_by(|a, b| (a.spawn_step, &a.id).cmp(&(b.spawn_step, &b.id)));
        let header = LogHeader {
            scenario_id: scenario.id.clone(),
            task: scenario.task,
            dt: scenario.dt,
            time_limit: scenario.time_limit,
            seed: scenario.seed,
            missions: scenario
                .missions
                .iter()
                .map(|m| MissionRecord {
                    id: m.id.clone(),
                    start: Vec2::new(m.start.x, m.start.y),
                    goal: m.route.goal,
                })
                .collect(),
            lead: scenario.lead.as_ref().map(|l| l.id.clone()),
            map: net.spec().clone(),
        };
        let mut sim = Simulation {
            net,
            world,
            limits: scenario.limits,
            max_steps: scenario.max_steps(),
            routes,
            goals,
            lead: scenario.lead.as_ref().map(|l| l.id.clone()),
            controllers,
            pending,
            bus: V2vBus::new(scenario.v2v.unwrap_or_default()),
            inbox: BTreeMap::new(),
            outcomes: BTreeMap::new(),
            traffic_sensor: Sensor::new(opts.traffic_sensor).expect("valid traffic sensor"),
            log: TrajectoryLog::new(header),
            record: opts.record,
            done: false,
        };
        sim.update_signals();
        sim.spawn_due();
        sim.record_snapshot();
        sim
    }

    pub fn net(&self) -> &RoadNetwork {
        &self.net
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn step_index(&self) -> u64 {
        self.world.step
    }

    pub fn max_steps(&self) -> u64 {
        self.max_steps
    }

    pub fn done(&self) -> bool {
        self.done
    }

    pub fn outcomes(&self) -> &BTreeMap<ActorId, Outcome> {
        &self.outcomes
    }

    pub fn route(&self, id: &ActorId) -> Option<&Route> {
        self.routes.get(id)
    }

    pub fn bus(&self) -> &V2vBus {
        &self.bus
    }

    /// Mission vehicles that need an action this step.
    pub fn active_missions(&self) -> Vec<ActorId> {
        self.world
            .actors
            .iter()
            .filter(|(_, a)| a.role == Role::Mission && a.active())
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Observation of a mission vehicle. Off-route vehicles get no waypoints.
    pub fn observe(&self, id: &ActorId, sensor: &Sensor) -> Result<Observation, SensorError> {
        let route = self.routes.get(id);
        let mut obs = match sensors::observe(&self.net, &self.world, id, route, sensor) {
            Err(SensorError::Route(_)) => {
                sensors::observe(&self.net, &self.world, id, None, sensor)?
            }
            r => r?,
        };
        self.decorate(id, &mut obs);
        Ok(obs)
    }

    /// Like `observe` without ray casting: neighbors are unoccluded.
    pub fn observe_kinematic(
        &self,
        id: &ActorId,
        sensor: &Sensor,
    ) -> Result<Observation, SensorError> {
        let route = self.routes.get(id);
        let mut obs = match sensors::observe_kinematic(&self.net, &self.world, id, route, sensor) {
            Err(SensorError::Route(_)) => {
                sensors::observe_kinematic(&self.net, &self.world, id, None, sensor)?
            }
            r => r?,
        };
        self.decorate(id, &mut obs);
        Ok(obs)
    }

    fn decorate(&self, id: &ActorId, obs: &mut Observation) {
        if let Some(goal) = self.goals.get(id) {
            obs.mission = Some(MissionInfo {
                goal: *goal,
                lead: self.lead.clone(),
            });
        }
        obs.messages = self.inbox.get(id).cloned().unwrap_or_default();
    }

    /// Queues a V2V message; it is delivered during the step at
    /// `send_step + latency` and shows up in the following observation.
    pub fn send(&mut self, mut msg: V2vMessage) -> Result<u64, SendError> {
        let exists = self
            .world
            .actors
            .get(&msg.sender)
            .is_some_and(Actor::present);
        msg.send_step = self.world.step;
        v2v::send(&mut self.bus, msg, exists)
    }

    fn update_signals(&mut self) {
        for s in self.net.signals() {
            self.world
                .signal_phases
                .insert(s.id.clone(), s.phase_at(self.world.sim_time));
        }
    }

    fn spawn_due(&mut self) {
        let step = self.world.step;
        let mut deferred = Vec::new();
        for spec in std::mem::take(&mut self.pending) {
            if spec.spawn_step > step {
                deferred.push(spec);
                continue;
            }
            let state = spec.start_state(step);
            let clearance = {
                let f = footprint(&state);
                OrientedRect {
                    half_length: f.half_length + 1.0,
                    half_width: f.half_width + 0.3,
                    ..f
                }
            };
            let blocked = self
                .world
                .present()
                .any(|(_, a)| footprint(&a.state).overlaps(&clearance));
            if blocked {
                deferred.push(spec);
                continue;
            }
            let ctrl = match &spec.behavior {
                SocialBehavior::Replay { track } => Controller::Replay(track.clone()),
                SocialBehavior::Reactive { route, idm, .. } => Controller::Reactive {
                    route: route.clone(),
                    idm: *idm,
                },
            };
            self.world
                .actors
                .insert(spec.id.clone(), Actor::new(&self.net, Role::Social, state));
            self.controllers.insert(spec.id.clone(), ctrl);
        }
        self.pending = deferred;
    }

    fn traffic_controls(&mut self) -> BTreeMap<ActorId, Control> {
        let step = self.world.step;
        let mut out = BTreeMap::new();
        for (id, ctrl) in self.controllers.iter_mut() {
            let Some(actor) = self.world.actors.get(id).filter(|a| a.active()) else {
                continue;
            };
            let observe = |route: &Route| {
                sensors::observe_kinematic(
                    &self.net,
                    &self.world,
                    id,
                    Some(route),
                    &self.traffic_sensor,
                )
                .or_else(|_| {
                    sensors::observe_kinematic(&self.net, &self.world, id, None, &self.traffic_sensor)
                })
                .expect("actor is present")
            };
            let control = match ctrl {
                Controller::Replay(track) => Control::Place(track.sample(step + 1).0),
                Controller::Reactive { route, idm } => {
                    Control::Drive(reactive_action(&observe(route), idm, &self.limits))
                }
                Controller::Lead(c) => {
                    c.update(&self.net, step, actor.state.position);
                    let obs = observe(c.route());
                    Control::Drive(c.action(&obs))
                }
            };
            out.insert(id.clone(), control);
        }
        out
    }

    fn traffic_done(&self, id: &ActorId, p: Vec2) -> bool {
        match self.controllers.get(id) {
            Some(Controller::Reactive { route, .. }) => route.goal.reached(p),
            Some(Controller::Lead(c)) => c.route().goal.reached(p),
            _ => false,
        }
    }

    /// Advances the world by one step. Every active mission vehicle needs an
    /// action; traffic is advanced internally. Returns the step's events.
    pub fn step(&mut self, actions: &BTreeMap<ActorId, Action>) -> Result<Vec<Event>, EngineError> {
        if self.done {
            return Err(EngineError::Finished);
        }
        for (id, action) in actions {
            let actor = self
                .world
                .actors
                .get(id)
                .ok_or_else(|| EngineError::UnknownActor(id.clone()))?;
            if actor.role != Role::Mission {
                return Err(EngineError::NotControllable(id.clone()));
            }
            action.validate().map_err(|source| EngineError::InvalidAction {
                actor: id.clone(),
                source,
            })?;
        }
        for id in self.active_missions() {
            if !actions.contains_key(&id) {
                return Err(EngineError::MissingAction(id));
            }
        }

        let mut events = Vec::new();
        let step = self.world.step;
        let positions: BTreeMap<ActorId, Vec2> = self
            .world
            .present()
            .map(|(id, a)| (id.clone(), a.state.position))
            .collect();
        self.inbox = v2v::deliver(&mut self.bus, &positions, step, &mut self.world.rng);
        for rec in self.bus.take_log() {
            events.push(Event {
                step,
                actor: rec.sender.clone(),
                kind: EventKind::V2v(rec),
            });
        }

        let controls = self.traffic_controls();
        self.world.actors.retain(|_, a| a.present());
        let dt = self.world.dt;
        for (id, actor) in self.world.actors.iter_mut() {
            actor.state = match actor.status {
                ActorStatus::Active => match (actor.role, controls.get(id)) {
                    (Role::Mission, _) => {
                        dynamics::step(&actor.state, &actions[id], &self.limits, dt)
                    }
                    (_, Some(Control::Place(pose))) => dynamics::step_replayed(&actor.state, *pose, dt),
                    (_, Some(Control::Drive(a))) => dynamics::step(&actor.state, a, &self.limits, dt),
                    (_, None) => frozen(&actor.state),
                },
                _ => frozen(&actor.state),
            };
            if actor.active() {
                actor.lane = LaneContext::at(&self.net, actor.state.position);
                actor.offroad = self.net.offroad_status(&footprint(&actor.state));
                actor.wrong_way = wrong_way_flag(&self.net, &actor.state);
            }
        }
        self.world.step += 1;
        let step = self.world.step;
        self.world.sim_time = step as f64 * dt;
        self.update_signals();

        let mut collided: BTreeMap<ActorId, u64> = BTreeMap::new();
        for (a, b) in collisions(&self.world) {
            events.push(Event {
                step,
                actor: a.clone(),
                kind: EventKind::Collision { other: b.clone() },
            });
            for id in [a, b] {
                if self.world.actors[&id].active() {
                    collided.insert(id, step);
                }
            }
        }
        for (id, actor) in self.world.actors.iter().filter(|(_, a)| a.active()) {
            let mut push = |kind| {
                events.push(Event {
                    step,
                    actor: id.clone(),
                    kind,
                })
            };
            match actor.offroad {
                OffroadStatus::FullOffroad => push(EventKind::FullOffroad),
                OffroadStatus::PartialOffroad => push(EventKind::PartialOffroad),
                OffroadStatus::OnRoad => {}
            }
            if actor.wrong_way {
                push(EventKind::WrongWay);
            }
            let limit = actor.lane.speed_limit;
            if actor.state.speed > limit {
                push(EventKind::SpeedViolation {
                    amount: actor.state.speed - limit,
                    limit,
                });
            }
        }

        let resolved = check_termination(&self.world, &self.goals, self.max_steps, &collided);
        for (id, outcome) in resolved {
            if self.outcomes.contains_key(&id) || !self.world.actors[&id].active() {
                continue;
            }
            let actor = self.world.actors.get_mut(&id).unwrap();
            match outcome {
                Outcome::GoalReached { .. } => {
                    actor.status = ActorStatus::Finished;
                    events.push(Event {
                        step,
                        actor: id.clone(),
                        kind: EventKind::GoalReached,
                    });
                }
                Outcome::Terminated { .. } => actor.status = ActorStatus::Terminated,
                Outcome::TimedOut { .. } => events.push(Event {
                    step,
                    actor: id.clone(),
                    kind: EventKind::Timeout,
                }),
            }
            self.outcomes.insert(id, outcome);
        }
        // Traffic: collisions and leaving the road freeze; route ends despawn.
        let traffic: Vec<ActorId> = self
            .world
            .actors
            .iter()
            .filter(|(_, a)| a.role != Role::Mission && a.active())
            .map(|(id, _)| id.clone())
            .collect();
        for id in traffic {
            let p = self.world.actors[&id].state.position;
            let off = self.world.actors[&id].offroad == OffroadStatus::FullOffroad;
            let done = self.traffic_done(&id, p);
            let actor = self.world.actors.get_mut(&id).unwrap();
            if collided.contains_key(&id) || off {
                actor.status = ActorStatus::Terminated;
            } else if done {
                actor.status = ActorStatus::Finished;
            }
        }

        self.spawn_due();
        if step >= self.max_steps || self.outcomes.len() == self.goals.len() {
            self.done = true;
        }
        self.log.events.extend(events.iter().cloned());
        self.record_snapshot();
        Ok(events)
    }

    fn record_snapshot(&mut self) {
        if !self.record {
            return;
        }
        let actors = self
            .world
            .actors
            .iter()
            .map(|(id, a)| ActorRecord {
                id: id.clone(),
                role: a.role,
                status: a.status,
                state: a.state,
                lane: a.lane.clone(),
                offroad: a.offroad,
                wrong_way: a.wrong_way,
            })
            .collect();
        self.log.snapshots.push(Snapshot {
            step: self.world.step,
            actors,
        });
    }

    pub fn log(&self) -> &TrajectoryLog {
        &self.log
    }

    pub fn into_log(mut self) -> TrajectoryLog {
        self.log.outcomes = self.outcomes.clone();
        self.log
    }
}

impl std::fmt::Debug for Simulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulation")
            .field("step", &self.world.step)
            .field("actors", &self.world.actors.len())
            .field("done", &self.done)
            .finish()
    }
}
