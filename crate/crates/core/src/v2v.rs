//! Vehicle-to-vehicle message bus with range, latency and loss.
//!
//! Messages are queued at send time with a delivery step of
//! `send_step + latency`. At delivery the recipients are resolved against
//! positions at delivery time, and every candidate delivery is dropped
//! independently with `drop_probability`.

use crate::engine::ActorId;
use crate::geom::Vec2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    /// Every actor in range receives the message; recipients are ignored.
    Broadcast,
    /// Messages must name a recipient.
    Unicast,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct V2vConfig {
    pub max_range: f64,
    pub latency: u64,
    pub drop_probability: f64,
    pub max_payload: usize,
    pub mode: ChannelMode,
}

impl Default for V2vConfig {
    fn default() -> Self {
        Self {
            max_range: 300.0,
            latency: 1,
            drop_probability: 0.0,
            max_payload: 1024,
            mode: ChannelMode::Broadcast,
        }
    }
}

impl V2vConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.max_range > 0.0) {
            return Err("max_range must be positive".into());
        }
        if !(0.0..1.0).contains(&self.drop_probability) {
            return Err("drop_probability must be in [0, 1)".into());
        }
        if self.max_payload < 64 {
            return Err("max_payload must be at least 64 bytes".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct V2vMessage {
    pub sender: ActorId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipient: Option<ActorId>,
    pub send_step: u64,
    pub payload: Vec<u8>,
    /// Assigned by the bus on acceptance.
    #[serde(default)]
    pub delivery_step: u64,
}

impl V2vMessage {
    pub fn broadcast(sender: ActorId, send_step: u64, payload: Vec<u8>) -> Self {
        Self {
            sender,
            recipient: None,
            send_step,
            payload,
            delivery_step: 0,
        }
    }

    pub fn unicast(sender: ActorId, recipient: ActorId, send_step: u64, payload: Vec<u8>) -> Self {
        Self {
            recipient: Some(recipient),
            ..Self::broadcast(sender, send_step, payload)
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SendError {
    #[error("payload of {size} bytes exceeds the {cap}-byte cap")]
    PayloadOverflow { size: usize, cap: usize },
    #[error("unknown sender `{0}`")]
    UnknownSender(ActorId),
    #[error("unicast channel requires a recipient")]
    MissingRecipient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryOutcome {
    Delivered,
    Dropped,
    OutOfRange,
    UnknownRecipient,
    SenderGone,
}

/// One line of the bus traffic log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub step: u64,
    pub sender: ActorId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub receiver: Option<ActorId>,
    pub send_step: u64,
    pub bytes: usize,
    pub outcome: DeliveryOutcome,
}

#[derive(Debug, Clone)]
pub struct V2vBus {
    config: V2vConfig,
    pending: Vec<V2vMessage>,
    log: Vec<DeliveryRecord>,
}

impl V2vBus {
    pub fn new(config: V2vConfig) -> Self {
        Self {
            config,
            pending: Vec::new(),
            log: Vec::new(),
        }
    }

    pub fn config(&self) -> &V2vConfig {
        &self.config
    }

    pub fn pending(&self) -> &[V2vMessage] {
        &self.pending
    }

    /// All delivery attempts so far.
    pub fn log(&self) -> &[DeliveryRecord] {
        &self.log
    }

    /// Drains the delivery log, e.g. into the trajectory event stream.
    pub fn take_log(&mut self) -> Vec<DeliveryRecord> {
        std::mem::take(&mut self.log)
    }
}

/// Queues `msg`, returning its delivery step. `sender_exists` reports whether
/// the sender is present in the world.
pub fn send(
    bus: &mut V2vBus,
    mut msg: V2vMessage,
    sender_exists: bool,
) -> Result<u64, SendError> {
    if !sender_exists {
        return Err(SendError::UnknownSender(msg.sender));
    }
    if msg.payload.len() > bus.config.max_payload {
        return Err(SendError::PayloadOverflow {
            size: msg.payload.len(),
            cap: bus.config.max_payload,
        });
    }
    if bus.config.mode == ChannelMode::Unicast && msg.recipient.is_none() {
        return Err(SendError::MissingRecipient);
    }
    if bus.config.mode == ChannelMode::Broadcast {
        msg.recipient = None;
    }
    msg.delivery_step = msg.send_step + bus.config.latency;
    let step = msg.delivery_step;
    bus.pending.push(msg);
    Ok(step)
}

/// Delivers every message due at `step` using `positions` at delivery time.
/// Candidate receivers are visited in id order so the RNG stream is
/// reproducible.
pub fn deliver<R: Rng>(
    bus: &mut V2vBus,
    positions: &BTreeMap<ActorId, Vec2>,
    step: u64,
    rng: &mut R,
) -> BTreeMap<ActorId, Vec<V2vMessage>> {
    let mut inbox: BTreeMap<ActorId, Vec<V2vMessage>> = BTreeMap::new();
    let (due, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut bus.pending)
        .into_iter()
        .partition(|m| m.delivery_step <= step);
    bus.pending = rest;
    let range2 = bus.config.max_range * bus.config.max_range;
    for msg in due {
        let record = |receiver: Option<ActorId>, outcome| DeliveryRecord {
            step,
            sender: msg.sender.clone(),
            receiver,
            send_step: msg.send_step,
            bytes: msg.payload.len(),
            outcome,
        };
        let Some(&origin) = positions.get(&msg.sender) else {
            bus.log.push(record(msg.recipient.clone(), DeliveryOutcome::SenderGone));
            continue;
        };
        let candidates: Vec<(&ActorId, Vec2)> = match &msg.recipient {
            Some(r) => match positions.get_key_value(r) {
                Some((id, &p)) => vec![(id, p)],
                None => {
                    bus.log.push(record(Some(r.clone()), DeliveryOutcome::UnknownRecipient));
                    continue;
                }
            },
            None => positions
                .iter()
                .filter(|(id, _)| **id != msg.sender)
                .map(|(id, &p)| (id, p))
                .collect(),
        };
        for (id, p) in candidates {
            if (p - origin).norm_sq() > range2 {
                if msg.recipient.is_some() {
                    bus.log.push(record(Some(id.clone()), DeliveryOutcome::OutOfRange));
                }
                continue;
            }
            let dropped = rng.random::<f64>() < bus.config.drop_probability;
            if dropped {
                bus.log.push(record(Some(id.clone()), DeliveryOutcome::Dropped));
            } else {
                bus.log.push(record(Some(id.clone()), DeliveryOutcome::Delivered));
                inbox.entry(id.clone()).or_default().push(msg.clone());
            }
        }
    }
    inbox
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn id(s: &str) -> ActorId {
        ActorId::from(s)
    }

    fn positions(list: &[(&str, f64)]) -> BTreeMap<ActorId, Vec2> {
        list.iter().map(|&(n, x)| (id(n), Vec2::new(x, 0.0))).collect()
    }

    #[test]
    fn small_broadcast_accepted() {
        let mut bus = V2vBus::new(V2vConfig::default());
        let m = V2vMessage::broadcast(id("a"), 0, vec![0; 100]);
        assert_eq!(send(&mut bus, m, true), Ok(1));
    }

    #[test]
    fn oversize_rejected() {
        let mut bus = V2vBus::new(V2vConfig::default());
        let m = V2vMessage::broadcast(id("a"), 0, vec![0; 1025]);
        assert_eq!(
            send(&mut bus, m, true),
            Err(SendError::PayloadOverflow {
                size: 1025,
                cap: 1024
            })
        );
    }

    #[test]
    fn unknown_sender_rejected() {
        let mut bus = V2vBus::new(V2vConfig::default());
        let m = V2vMessage::broadcast(id("ghost"), 0, vec![1]);
        assert!(matches!(send(&mut bus, m, false), Err(SendError::UnknownSender(_))));
    }

    #[test]
    fn unicast_to_missing_actor_is_logged_at_delivery() {
        let cfg = V2vConfig {
            mode: ChannelMode::Unicast,
            latency: 0,
            ..Default::default()
        };
        let mut bus = V2vBus::new(cfg);
        let m = V2vMessage::unicast(id("a"), id("nobody"), 3, vec![1, 2, 3]);
        assert_eq!(send(&mut bus, m, true), Ok(3));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let inbox = deliver(&mut bus, &positions(&[("a", 0.0), ("b", 5.0)]), 3, &mut rng);
        assert!(inbox.is_empty());
        assert_eq!(bus.log().len(), 1);
        assert_eq!(bus.log()[0].outcome, DeliveryOutcome::UnknownRecipient);
    }

    #[test]
    fn same_step_delivery_in_range_only() {
        let cfg = V2vConfig {
            max_range: 50.0,
            latency: 0,
            ..Default::default()
        };
        let mut bus = V2vBus::new(cfg);
        send(&mut bus, V2vMessage::broadcast(id("a"), 7, vec![9]), true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pos = positions(&[("a", 0.0), ("near", 10.0), ("far", 60.0)]);
        let inbox = deliver(&mut bus, &pos, 7, &mut rng);
        assert_eq!(inbox.len(), 1);
        assert_eq!(inbox[&id("near")][0].delivery_step, 7);
    }

    #[test]
    fn uses_positions_at_delivery_time() {
        let cfg = V2vConfig {
            max_range: 50.0,
            latency: 3,
            ..Default::default()
        };
        let mut bus = V2vBus::new(cfg);
        send(&mut bus, V2vMessage::broadcast(id("a"), 0, vec![1]), true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // In range at send time, gone out of range by delivery.
        assert!(deliver(&mut bus, &positions(&[("a", 0.0), ("b", 10.0)]), 2, &mut rng).is_empty());
        let inbox = deliver(&mut bus, &positions(&[("a", 0.0), ("b", 80.0)]), 3, &mut rng);
        assert!(inbox.is_empty());
        assert!(bus.pending().is_empty());
    }

    #[test]
    fn half_drop_rate_over_many_deliveries() {
        let cfg = V2vConfig {
            latency: 0,
            drop_probability: 0.5,
            ..Default::default()
        };
        let mut bus = V2vBus::new(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pos = positions(&[("a", 0.0), ("b", 10.0)]);
        for step in 0..10_000 {
            send(&mut bus, V2vMessage::broadcast(id("a"), step, vec![0]), true).unwrap();
            deliver(&mut bus, &pos, step, &mut rng);
        }
        let delivered = bus
            .log()
            .iter()
            .filter(|r| r.outcome == DeliveryOutcome::Delivered)
            .count();
        assert_eq!(bus.log().len(), 10_000);
        let rate = delivered as f64 / 10_000.0;
        // Four standard deviations of Binomial(10000, 0.5) is 0.02.
        assert!((0.48..=0.52).contains(&rate), "{rate}");
    }

    proptest::proptest! {
        #[test]
        fn lossless_delivery_is_exactly_once_at_latency(
            latency in 0u64..6,
            sends in proptest::collection::vec((0u64..20, 0usize..3), 1..30),
            seed in 0u64..1000,
        ) {
            let cfg = V2vConfig { latency, max_range: 50.0, ..Default::default() };
            let mut bus = V2vBus::new(cfg);
            let names = ["a", "b", "c"];
            let pos = positions(&[("a", 0.0), ("b", 20.0), ("c", 45.0)]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut got: Vec<(u64, ActorId, ActorId, u64)> = Vec::new();
            for step in 0..30 {
                for &(s, who) in &sends {
                    if s == step {
                        send(&mut bus, V2vMessage::broadcast(id(names[who]), s, vec![who as u8]), true).unwrap();
                    }
                }
                for (rx, msgs) in deliver(&mut bus, &pos, step, &mut rng) {
                    for m in msgs {
                        got.push((step, rx.clone(), m.sender.clone(), m.send_step));
                    }
                }
            }
            let mut want = Vec::new();
            for &(s, who) in &sends {
                for rx in names.iter().filter(|n| **n != names[who]) {
                    want.push((s + latency, id(rx), id(names[who]), s));
                }
            }
            got.sort();
            want.sort();
            proptest::prop_assert_eq!(got, want);
        }
    }
}
