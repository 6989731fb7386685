//! Executes wirings: compiles derivations into operator instance graphs and
//! pushes capability events through them to application requirements.
//!
//! The route table is a synchronous state machine. Events are queued per
//! wiring and processed by [`RouteTable::drain`]; a reconfiguration drains
//! first, so every event is processed entirely under one table version.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{Event, EventType};
use crate::operator::{apply_split, Catalog, OperatorKind, OperatorSpec, OperatorState};
use crate::solver::{validate, CapabilityId, Derivation, ValidationError, Wiring};

/// Default bound of each wiring's inbox.
pub const DEFAULT_QUEUE_CAPACITY: usize = 1024;

/// Broker-assigned wiring handle, displayed as `w<n>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WiringId(pub u64);

impl fmt::Display for WiringId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w{}", self.0)
    }
}

impl std::str::FromStr for WiringId {
    type Err = RouterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix('w')
            .and_then(|n| n.parse().ok())
            .map(WiringId)
            .ok_or_else(|| RouterError::UnknownWiring(s.to_string()))
    }
}

impl Serialize for WiringId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for WiringId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Application endpoint a wiring delivers to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Target {
    pub app_id: String,
    pub requirement_id: String,
}

impl Target {
    pub fn new(app_id: impl Into<String>, requirement_id: impl Into<String>) -> Self {
        Target {
            app_id: app_id.into(),
            requirement_id: requirement_id.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Active,
    /// A capability leaf lost its device; events are dropped until the
    /// wiring is re-applied.
    Degraded,
}

/// Per-wiring counters. Once the inbox is drained,
/// `events_in = delivered + dropped`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub events_in: u64,
    /// Input events that produced a delivery.
    pub delivered: u64,
    /// Inbox overflow, malformed events and events reaching a degraded wiring.
    pub dropped: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RouterError {
    #[error("wiring {id} refused: {source}")]
    Invalid {
        /// Position of the refused wiring in the request.
        id: usize,
        #[source]
        source: ValidationError,
    },
    #[error("unknown wiring `{0}`")]
    UnknownWiring(String),
}

/// One emission at a wiring's root.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    /// Sequence number of the input event that caused it.
    pub seq: u64,
    /// Table version the input event was processed under.
    pub version: u64,
    pub wiring_id: WiringId,
    pub target: Target,
    /// `source_id` is the requirement id.
    pub event: Event,
}

/// Where an instance lane reads from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Source {
    Leaf(usize),
    Port { instance: usize, port: usize },
}

#[derive(Debug, Clone)]
struct Instance {
    spec: Arc<OperatorSpec>,
    state: OperatorState,
    inputs: Vec<Source>,
}

/// A compiled wiring: operator instances in dependency order, each with its
/// own state. Identical subtrees share one instance, so a split feeding two
/// lanes runs once per event.
#[derive(Debug, Clone)]
pub struct ActiveWiring {
    wiring: Wiring,
    target: Target,
    requirement_type: EventType,
    leaves: Vec<(CapabilityId, EventType)>,
    instances: Vec<Instance>,
    root: Source,
    status: Status,
    counters: Counters,
}

/// Validates `w` against the available capabilities and compiles it.
pub fn compile(
    w: Wiring,
    target: Target,
    capabilities: &BTreeMap<CapabilityId, EventType>,
    catalog: &Catalog,
) -> Result<ActiveWiring, ValidationError> {
    validate(&w, capabilities, catalog)?;
    let mut builder = Builder {
        catalog,
        leaves: Vec::new(),
        instances: Vec::new(),
        shared: HashMap::new(),
    };
    let root = builder.add(&w.derivation);
    Ok(ActiveWiring {
        requirement_type: w.derivation.root_type(),
        wiring: w,
        target,
        leaves: builder.leaves,
        instances: builder.instances,
        root,
        status: Status::Active,
        counters: Counters::default(),
    })
}

struct Builder<'c> {
    catalog: &'c Catalog,
    leaves: Vec<(CapabilityId, EventType)>,
    instances: Vec<Instance>,
    /// (operator, input sources) → instance; the port is not part of the key.
    shared: HashMap<(String, Vec<Source>), usize>,
}

impl Builder<'_> {
    fn add(&mut self, d: &Derivation) -> Source {
        match d {
            Derivation::Leaf { capability, ty } => {
                let i = match self.leaves.iter().position(|(c, _)| c == capability) {
                    Some(i) => i,
                    None => {
                        self.leaves.push((capability.clone(), *ty));
                        self.leaves.len() - 1
                    }
                };
                Source::Leaf(i)
            }
            Derivation::Op { op, port, inputs, .. } => {
                let sources: Vec<Source> = inputs.iter().map(|c| self.add(c)).collect();
                let key = (op.clone(), sources);
                let instance = match self.shared.get(&key) {
                    Some(&i) => i,
                    None => {
                        let spec = self.catalog.get(op).expect("validated operator").clone();
                        self.instances.push(Instance {
                            state: OperatorState::new(&spec),
                            spec: Arc::new(spec),
                            inputs: key.1.clone(),
                        });
                        self.shared.insert(key, self.instances.len() - 1);
                        self.instances.len() - 1
                    }
                };
                Source::Port {
                    instance,
                    port: *port,
                }
            }
        }
    }
}

impl ActiveWiring {
    pub fn wiring(&self) -> &Wiring {
        &self.wiring
    }

    pub fn target(&self) -> &Target {
        &self.target
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    /// Capability ids read by the wiring.
    pub fn capabilities(&self) -> impl Iterator<Item = &str> {
        self.leaves.iter().map(|(c, _)| c.as_str())
    }

    /// Operator instances in dependency order.
    pub fn operators(&self) -> impl Iterator<Item = &OperatorSpec> {
        self.instances.iter().map(|i| &*i.spec)
    }

    /// Pushes one event from `capability` through the instance graph. All
    /// lanes updated by the event are held before a merge fires, so one
    /// input yields at most one emission at the root.
    fn process(&mut self, capability: &str, e: &Event) -> Result<Option<Event>, String> {
        let Some(leaf) = self.leaves.iter().position(|(c, _)| c == capability) else {
            return Ok(None);
        };
        let declared = self.leaves[leaf].1;
        if e.event_type != declared || !e.is_valid() {
            return Err(format!(
                "event of type {} on `{capability}` (declared {declared})",
                e.event_type
            ));
        }
        let mut outputs: Vec<Vec<Option<Event>>> = vec![Vec::new(); self.instances.len()];
        let value = |outputs: &[Vec<Option<Event>>], s: Source| -> Option<Event> {
            match s {
                Source::Leaf(i) => (i == leaf).then(|| e.clone()),
                Source::Port { instance, port } => outputs[instance].get(port).cloned().flatten(),
            }
        };
        for i in 0..self.instances.len() {
            let updated: Vec<(usize, Event)> = self.instances[i]
                .inputs
                .iter()
                .enumerate()
                .filter_map(|(lane, &s)| value(&outputs, s).map(|v| (lane, v)))
                .collect();
            if updated.is_empty() {
                continue;
            }
            let inst = &mut self.instances[i];
            let spec = &*inst.spec;
            outputs[i] = if spec.kind == OperatorKind::Split {
                let parts = apply_split(spec, &updated[0].1).map_err(|err| err.to_string())?;
                parts.into_iter().map(Some).collect()
            } else {
                for (lane, v) in &updated {
                    inst.state.hold(spec, *lane, v).map_err(|err| err.to_string())?;
                }
                vec![Some(inst.state.fire(spec, e.timestamp).map_err(|err| err.to_string())?)]
            };
        }
        Ok(value(&outputs, self.root).map(|mut out| {
            out.source_id = self.target.requirement_id.clone();
            debug_assert_eq!(out.event_type, self.requirement_type);
            debug_assert!(out.is_valid(), "delivery outside its type: {out:?}");
            out
        }))
    }
}

struct Slot {
    wiring: ActiveWiring,
    inbox: VecDeque<(u64, CapabilityId, Event)>,
}

/// The set of active wirings plus the capability index used to route
/// events to them.
pub struct RouteTable {
    version: u64,
    next_id: u64,
    next_seq: u64,
    queue_capacity: usize,
    slots: BTreeMap<WiringId, Slot>,
    index: HashMap<CapabilityId, Vec<WiringId>>,
    unrouted: u64,
}

impl Default for RouteTable {
    fn default() -> Self {
        Self::new()
    }
}

impl RouteTable {
    pub fn new() -> Self {
        Self::with_queue_capacity(DEFAULT_QUEUE_CAPACITY)
    }

    pub fn with_queue_capacity(queue_capacity: usize) -> Self {
        RouteTable {
            version: 0,
            next_id: 1,
            next_seq: 0,
            queue_capacity: queue_capacity.max(1),
            slots: BTreeMap::new(),
            index: HashMap::new(),
            unrouted: 0,
        }
    }

    /// Incremented by every successful reconfiguration.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Events for capabilities no wiring reads.
    pub fn unrouted(&self) -> u64 {
        self.unrouted
    }

    pub fn get(&self, id: WiringId) -> Option<&ActiveWiring> {
        self.slots.get(&id).map(|s| &s.wiring)
    }

    pub fn iter(&self) -> impl Iterator<Item = (WiringId, &ActiveWiring)> {
        self.slots.iter().map(|(id, s)| (*id, &s.wiring))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Wirings reading `capability`.
    pub fn subscribers(&self, capability: &str) -> &[WiringId] {
        self.index.get(capability).map_or(&[], Vec::as_slice)
    }

    /// Removes the wirings in `remove` and adds the compiled `add`, in one
    /// step. Pending events are processed under the old table first and
    /// their deliveries returned along with the new ids. Unknown ids leave
    /// the table untouched.
    pub fn reconfigure(
        &mut self,
        add: Vec<ActiveWiring>,
        remove: &[WiringId],
    ) -> Result<(Vec<WiringId>, Vec<Delivery>), RouterError> {
        if let Some(missing) = remove.iter().find(|id| !self.slots.contains_key(id)) {
            return Err(RouterError::UnknownWiring(missing.to_string()));
        }
        let flushed = self.drain();
        for id in remove {
            self.slots.remove(id);
        }
        let mut added = Vec::with_capacity(add.len());
        for wiring in add {
            let id = WiringId(self.next_id);
            self.next_id += 1;
            self.slots.insert(
                id,
                Slot {
                    wiring,
                    inbox: VecDeque::new(),
                },
            );
            added.push(id);
        }
        self.rebuild_index();
        self.version += 1;
        Ok((added, flushed))
    }

    /// Validates and compiles every wiring, then applies them with
    /// [`RouteTable::reconfigure`]. Any failure leaves the table unchanged.
    pub fn apply(
        &mut self,
        add: Vec<(Wiring, Target)>,
        remove: &[WiringId],
        capabilities: &BTreeMap<CapabilityId, EventType>,
        catalog: &Catalog,
    ) -> Result<(Vec<WiringId>, Vec<Delivery>), RouterError> {
        let compiled = add
            .into_iter()
            .enumerate()
            .map(|(i, (w, t))| {
                compile(w, t, capabilities, catalog).map_err(|source| RouterError::Invalid { id: i, source })
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.reconfigure(compiled, remove)
    }

    fn rebuild_index(&mut self) {
        self.index.clear();
        for (id, slot) in &self.slots {
            for cap in slot.wiring.capabilities() {
                self.index.entry(cap.to_string()).or_default().push(*id);
            }
        }
    }

    /// Flags every wiring reading one of `capabilities` as degraded and
    /// returns the newly degraded ids.
    pub fn degrade<'a>(&mut self, capabilities: impl IntoIterator<Item = &'a str>) -> Vec<WiringId> {
        let mut hit = Vec::new();
        for cap in capabilities {
            for id in self.index.get(cap).into_iter().flatten() {
                let slot = self.slots.get_mut(id).expect("index is consistent");
                if slot.wiring.status == Status::Active {
                    slot.wiring.status = Status::Degraded;
                    hit.push(*id);
                }
            }
        }
        hit.sort();
        hit
    }

    /// Queues an event for every wiring reading `capability`. A full inbox
    /// drops its oldest event. Returns the event's sequence number.
    pub fn enqueue(&mut self, capability: &str, e: Event) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        let Some(ids) = self.index.get(capability) else {
            self.unrouted += 1;
            return seq;
        };
        for id in ids {
            let slot = self.slots.get_mut(id).expect("index is consistent");
            slot.wiring.counters.events_in += 1;
            if slot.inbox.len() == self.queue_capacity {
                slot.inbox.pop_front();
                slot.wiring.counters.dropped += 1;
            }
            slot.inbox.push_back((seq, capability.to_string(), e.clone()));
        }
        seq
    }

    /// Processes every queued event, oldest first.
    pub fn drain(&mut self) -> Vec<Delivery> {
        let mut work: Vec<(u64, WiringId, CapabilityId, Event)> = Vec::new();
        for (id, slot) in &mut self.slots {
            work.extend(slot.inbox.drain(..).map(|(seq, c, e)| (seq, *id, c, e)));
        }
        work.sort_by_key(|(seq, id, _, _)| (*seq, *id));
        let mut out = Vec::new();
        for (seq, id, cap, e) in work {
            let slot = self.slots.get_mut(&id).expect("drained slot exists");
            let w = &mut slot.wiring;
            if w.status == Status::Degraded {
                w.counters.dropped += 1;
                continue;
            }
            match w.process(&cap, &e) {
                Ok(Some(event)) => {
                    w.counters.delivered += 1;
                    out.push(Delivery {
                        seq,
                        version: self.version,
                        wiring_id: id,
                        target: w.target.clone(),
                        event,
                    });
                }
                Ok(None) => w.counters.dropped += 1,
                Err(detail) => {
                    w.counters.dropped += 1;
                    tracing::warn!(wiring = %id, capability = %cap, %detail, "malformed event dropped");
                }
            }
        }
        out
    }

    /// Enqueues and drains in one step.
    pub fn on_event(&mut self, capability: &str, e: Event) -> Vec<Delivery> {
        self.enqueue(capability, e);
        self.drain()
    }
}
