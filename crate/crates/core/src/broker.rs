//! The broker: one serialized owner of the registry, the route table and the
//! profile store, plus the TCP session loop that feeds it.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, mpsc};

use crate::operator::Catalog;
use crate::registry::{
    Direction, Profile, ProfileError, ProfileStore, Registry, RegistryError, HEARTBEAT_INTERVAL_MS,
};
use crate::router::{compile, Delivery, RouteTable, RouterError, Target, WiringId};
use crate::solver::{Derivation, ValidationError, Wiring};
use crate::transport::{
    read_message, write_message, DecodeError, EventFrame, Message, Role, TransportError, HANDSHAKE_TIMEOUT,
};

/// Capacity of the change-notification and sample channels.
pub const NOTICE_BACKLOG: usize = 64;
/// Outgoing frames buffered per session before deliveries are dropped.
pub const SESSION_OUTBOX: usize = 4096;

pub type SessionId = u64;

/// A wiring as posted by clients: either a full wiring object or a bare
/// derivation.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum WiringBody {
    Wiring(Wiring),
    Derivation(Derivation),
}

impl WiringBody {
    pub fn into_derivation(self) -> Derivation {
        match self {
            WiringBody::Wiring(w) => w.derivation,
            WiringBody::Derivation(d) => d,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ApplyError {
    #[error(transparent)]
    NotFound(#[from] RegistryError),
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

impl ApplyError {
    /// `{code, detail, path}` report.
    pub fn report(&self) -> Value {
        match self {
            ApplyError::NotFound(e) => json!({ "code": e.code(), "detail": e.to_string(), "path": null }),
            ApplyError::Invalid(e) => e.report(),
        }
    }
}

#[derive(Debug)]
struct Session {
    role: Role,
    id: String,
    tx: mpsc::Sender<Message>,
}

struct State {
    registry: Registry,
    table: RouteTable,
    profiles: Option<ProfileStore>,
    /// In-memory copy of every touched profile, by app id.
    profile_cache: BTreeMap<String, Profile>,
    sessions: BTreeMap<SessionId, Session>,
    app_sessions: HashMap<String, SessionId>,
    next_session: SessionId,
    next_ui: u64,
    /// (app, requirement) → wiring currently feeding it.
    active: BTreeMap<(String, String), WiringId>,
    outbox_dropped: u64,
}

pub struct Broker {
    state: Mutex<State>,
    notices: broadcast::Sender<Arc<str>>,
    samples: broadcast::Sender<Arc<str>>,
    started: Instant,
}

impl Broker {
    pub fn new(catalog: Catalog, profiles: Option<ProfileStore>) -> Arc<Self> {
        Arc::new(Broker {
            state: Mutex::new(State {
                registry: Registry::new(catalog),
                table: RouteTable::new(),
                profiles,
                profile_cache: BTreeMap::new(),
                sessions: BTreeMap::new(),
                app_sessions: HashMap::new(),
                next_session: 1,
                next_ui: 1,
                active: BTreeMap::new(),
                outbox_dropped: 0,
            }),
            notices: broadcast::channel(NOTICE_BACKLOG).0,
            samples: broadcast::channel(NOTICE_BACKLOG).0,
            started: Instant::now(),
        })
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn now_ms(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }

    /// Change notifications and 1 Hz digests, as JSON text.
    pub fn subscribe(&self) -> broadcast::Receiver<Arc<str>> {
        self.notices.subscribe()
    }

    /// One JSON object per delivery, for sampled live views.
    pub fn subscribe_samples(&self) -> broadcast::Receiver<Arc<str>> {
        self.samples.subscribe()
    }

    /// Number of live notification subscribers.
    pub fn subscriber_count(&self) -> usize {
        self.notices.receiver_count()
    }

    fn notify(&self, v: Value) {
        let _ = self.notices.send(v.to_string().into());
    }

    fn publish_changes(&self, st: &mut State) {
        for c in st.registry.take_changes() {
            self.notify(serde_json::to_value(c).expect("change serializes"));
        }
    }

    /// Registers a session after a successful HELLO. Returns the session
    /// handle and the id assigned to the peer.
    pub fn open_session(&self, role: Role, name: &str, tx: mpsc::Sender<Message>) -> (SessionId, String) {
        let now = self.now_ms();
        let mut st = self.lock();
        let sid = st.next_session;
        st.next_session += 1;
        let id = match role {
            Role::Device => st
                .registry
                .register_device(name, Vec::new(), Some(sid), now)
                .expect("empty capability list"),
            Role::App => {
                let id = st.registry.register_app(name, Vec::new(), Some(sid)).expect("empty requirement list");
                st.app_sessions.insert(id.clone(), sid);
                id
            }
            Role::Ui => {
                st.next_ui += 1;
                format!("ui-{}", st.next_ui - 1)
            }
        };
        st.sessions.insert(sid, Session { role, id: id.clone(), tx });
        self.publish_changes(&mut st);
        (sid, id)
    }

    /// Removes a session and whatever it registered.
    pub fn close_session(&self, sid: SessionId) {
        let mut st = self.lock();
        let Some(s) = st.sessions.remove(&sid) else { return };
        match s.role {
            Role::Device => {
                if let Ok(lost) = st.registry.unregister_device(&s.id) {
                    self.degrade(&mut st, &lost);
                }
            }
            Role::App => {
                st.app_sessions.remove(&s.id);
                let _ = st.registry.unregister_app(&s.id);
                let ids: Vec<WiringId> = st
                    .active
                    .iter()
                    .filter(|((app, _), _)| *app == s.id)
                    .map(|(_, id)| *id)
                    .collect();
                st.active.retain(|(app, _), _| *app != s.id);
                if let Ok((_, flushed)) = st.table.reconfigure(Vec::new(), &ids) {
                    self.dispatch(&mut st, flushed);
                }
                for id in ids {
                    self.notify(json!({ "kind": "wiring_removed", "wiring_id": id }));
                }
            }
            Role::Ui => {}
        }
        self.publish_changes(&mut st);
    }

    fn degrade(&self, st: &mut State, capabilities: &[String]) {
        for id in st.table.degrade(capabilities.iter().map(String::as_str)) {
            self.notify(json!({ "kind": "wiring_degraded", "wiring_id": id }));
        }
    }

    /// Handles one post-handshake message. Returns the reply, if any.
    pub fn handle(&self, sid: SessionId, m: Message) -> Option<Message> {
        let now = self.now_ms();
        let mut st = self.lock();
        let (role, id) = match st.sessions.get(&sid) {
            Some(s) => (s.role, s.id.clone()),
            None => return Some(Message::error("session", "session is closed")),
        };
        let reply = match (role, m) {
            (_, Message::Heartbeat {}) => {
                if role == Role::Device {
                    let _ = st.registry.heartbeat(&id, now);
                }
                None
            }
            (Role::Device, Message::AnnounceCaps { capabilities }) => {
                match st.registry.announce_capabilities(&id, capabilities) {
                    Ok(lost) => {
                        self.degrade(&mut st, &lost);
                        self.notify(json!({ "kind": "device_updated", "device_id": id }));
                        self.restore_profiles(&mut st);
                        None
                    }
                    Err(e) => Some(Message::error(e.code(), e.to_string())),
                }
            }
            (Role::App, Message::AnnounceReqs { requirements }) => {
                match st.registry.announce_requirements(&id, requirements) {
                    Ok(()) => {
                        self.notify(json!({ "kind": "app_updated", "app_id": id }));
                        self.restore_profiles(&mut st);
                        None
                    }
                    Err(e) => Some(Message::error(e.code(), e.to_string())),
                }
            }
            (Role::Device, Message::Event(frame)) => self.device_event(&mut st, &id, &frame).err(),
            (_, other) => Some(Message::error(
                "unexpected",
                format!("{} is not accepted from a {:?} session", other.type_tag(), role),
            )),
        };
        self.publish_changes(&mut st);
        reply
    }

    fn device_event(&self, st: &mut State, device_id: &str, frame: &EventFrame) -> Result<(), Message> {
        let Some(cap_id) = frame.capability_id.as_deref() else {
            return Err(Message::error("invalid_event", "device events name a capability_id"));
        };
        let device = st.registry.device(device_id).expect("session device is registered");
        let cap = device
            .capabilities
            .iter()
            .find(|c| c.id == cap_id && c.direction == Direction::Produces)
            .ok_or_else(|| Message::error("unknown_capability", format!("no produced capability `{cap_id}`")))?;
        if cap.ty != frame.ty {
            return Err(Message::error(
                "type_mismatch",
                format!("`{cap_id}` produces {}, event is {}", cap.ty, frame.ty),
            ));
        }
        let mut e = frame.to_event().map_err(|e| Message::error("invalid_event", e.to_string()))?;
        let global = device.global_id(cap_id);
        e.source_id = global.clone();
        let out = st.table.on_event(&global, e);
        self.dispatch(st, out);
        Ok(())
    }

    fn dispatch(&self, st: &mut State, out: Vec<Delivery>) {
        let sampling = self.samples.receiver_count() > 0;
        for d in out {
            if sampling {
                let sample = json!({
                    "kind": "sample",
                    "wiring_id": d.wiring_id,
                    "app_id": d.target.app_id,
                    "requirement_id": d.target.requirement_id,
                    "ts_ns": d.event.timestamp,
                    "payload": d.event.payload,
                });
                let _ = self.samples.send(sample.to_string().into());
            }
            let Some(s) = st.app_sessions.get(&d.target.app_id).and_then(|sid| st.sessions.get(sid)) else {
                continue;
            };
            if s.tx.try_send(Message::Event(EventFrame::delivery(&d.event))).is_err() {
                st.outbox_dropped += 1;
            }
        }
    }

    /// Validates, compiles and activates a wiring for one requirement,
    /// replacing the wiring that fed it before.
    pub fn apply(&self, app_id: &str, requirement_id: &str, derivation: Derivation) -> Result<WiringId, ApplyError> {
        let mut st = self.lock();
        let r = self.apply_locked(&mut st, app_id, requirement_id, derivation, true);
        self.publish_changes(&mut st);
        r
    }

    fn apply_locked(
        &self,
        st: &mut State,
        app_id: &str,
        requirement_id: &str,
        derivation: Derivation,
        persist: bool,
    ) -> Result<WiringId, ApplyError> {
        let req = st.registry.requirement(app_id, requirement_id)?.clone();
        let found = derivation.root_type();
        if found != req.ty {
            return Err(ValidationError::RootMismatch {
                requirement: req.id,
                expected: req.ty,
                found,
            }
            .into());
        }
        let catalog = st.registry.catalog();
        let w = Wiring {
            requirement_id: requirement_id.to_string(),
            cost: derivation.cost(catalog).unwrap_or(u64::MAX),
            derivation,
        };
        let compiled = compile(
            w.clone(),
            Target::new(app_id, requirement_id),
            &st.registry.capability_types(),
            catalog,
        )?;
        let key = (app_id.to_string(), requirement_id.to_string());
        let remove: Vec<WiringId> = st.active.get(&key).copied().into_iter().collect();
        let (ids, flushed) = match st.table.reconfigure(vec![compiled], &remove) {
            Ok(r) => r,
            Err(RouterError::UnknownWiring(_) | RouterError::Invalid { .. }) => unreachable!("ids come from the table"),
        };
        self.dispatch(st, flushed);
        let id = ids[0];
        st.active.insert(key, id);
        if persist {
            self.persist(st, app_id, requirement_id, &w);
        }
        if let Some(s) = st.app_sessions.get(app_id).and_then(|sid| st.sessions.get(sid)) {
            let _ = s.tx.try_send(Message::WiringSet {
                requirement_id: requirement_id.to_string(),
                wiring: w.derivation.clone(),
            });
        }
        for old in remove {
            self.notify(json!({ "kind": "wiring_removed", "wiring_id": old }));
        }
        self.notify(json!({
            "kind": "wiring_applied",
            "wiring_id": id,
            "app_id": app_id,
            "requirement_id": requirement_id,
        }));
        Ok(id)
    }

    fn profile<'s>(&self, st: &'s mut State, app_id: &str) -> &'s mut Profile {
        if !st.profile_cache.contains_key(app_id) {
            let loaded = match &st.profiles {
                Some(store) => match store.load(app_id) {
                    Ok(p) => Some(p),
                    Err(ProfileError::Missing(_)) => None,
                    Err(e) => {
                        tracing::warn!(app = app_id, error = %e, "profile ignored");
                        None
                    }
                },
                None => None,
            };
            let p = loaded.unwrap_or_else(|| Profile::new(app_id, self.now_ms()));
            st.profile_cache.insert(app_id.to_string(), p);
        }
        st.profile_cache.get_mut(app_id).expect("inserted above")
    }

    fn persist(&self, st: &mut State, app_id: &str, requirement_id: &str, w: &Wiring) {
        let now = self.now_ms();
        let p = self.profile(st, app_id);
        p.chosen.insert(requirement_id.to_string(), w.clone());
        p.modified_ms = now;
        let p = p.clone();
        if let Some(store) = &st.profiles {
            if let Err(e) = store.save(&p) {
                tracing::error!(app = app_id, error = %e, "profile not saved");
            }
        }
    }

    /// Re-activates saved wirings for requirements that have none, when
    /// they validate against the live capabilities.
    fn restore_profiles(&self, st: &mut State) {
        let apps: Vec<(String, Vec<String>)> = st
            .registry
            .apps()
            .map(|a| (a.app_id.clone(), a.requirements.iter().map(|r| r.id.clone()).collect()))
            .collect();
        for (app, reqs) in apps {
            let pending: Vec<String> = reqs
                .into_iter()
                .filter(|r| !st.active.contains_key(&(app.clone(), r.clone())))
                .collect();
            if pending.is_empty() {
                continue;
            }
            let chosen = self.profile(st, &app).chosen.clone();
            for r in pending {
                if let Some(w) = chosen.get(&r) {
                    if self.apply_locked(st, &app, &r, w.derivation.clone(), false).is_ok() {
                        tracing::info!(app = %app, requirement = %r, "wiring restored from profile");
                    }
                }
            }
        }
    }

    /// Drops devices that stopped sending heartbeats.
    pub fn expire(&self) {
        let now = self.now_ms();
        let mut st = self.lock();
        for (device, lost) in st.registry.expire(now) {
            tracing::info!(device = %device, "device timed out");
            self.degrade(&mut st, &lost);
            let sids: Vec<SessionId> = st
                .sessions
                .iter()
                .filter(|(_, s)| s.role == Role::Device && s.id == device)
                .map(|(sid, _)| *sid)
                .collect();
            for sid in sids {
                st.sessions.remove(&sid);
            }
        }
        self.publish_changes(&mut st);
    }

    /// Writes every cached profile.
    pub fn flush_profiles(&self) -> Result<(), ProfileError> {
        let st = self.lock();
        if let Some(store) = &st.profiles {
            for p in st.profile_cache.values().filter(|p| !p.chosen.is_empty()) {
                store.save(p)?;
            }
        }
        Ok(())
    }

    /// Candidate wirings for one requirement.
    pub fn candidates(&self, app_id: &str, requirement_id: &str) -> Result<Vec<Wiring>, RegistryError> {
        self.lock().registry.candidate_wirings(app_id, requirement_id)
    }

    /// Devices, apps, active wirings with counters, and candidate wirings
    /// per requirement.
    pub fn snapshot(&self) -> Value {
        let st = self.lock();
        let reg = &st.registry;
        let devices: Vec<Value> = reg.devices().map(|d| serde_json::to_value(d).unwrap()).collect();
        let apps: Vec<Value> = reg.apps().map(|a| serde_json::to_value(a).unwrap()).collect();
        let mut candidates = Vec::new();
        for a in reg.apps() {
            for r in &a.requirements {
                let ws = reg.candidate_wirings(&a.app_id, &r.id).unwrap_or_default();
                candidates.push(json!({
                    "app_id": a.app_id,
                    "requirement_id": r.id,
                    "wirings": ws,
                }));
            }
        }
        json!({
            "version": st.table.version(),
            "devices": devices,
            "apps": apps,
            "wirings": wirings_json(&st, true),
            "candidates": candidates,
        })
    }

    /// Router counters.
    pub fn stats(&self) -> Value {
        let st = self.lock();
        json!({
            "version": st.table.version(),
            "unrouted": st.table.unrouted(),
            "outbox_dropped": st.outbox_dropped,
            "wirings": wirings_json(&st, false),
        })
    }

    /// Broadcasts a counter digest to subscribers.
    pub fn publish_digest(&self) {
        if self.notices.receiver_count() > 0 {
            let mut v = self.stats();
            v["kind"] = "digest".into();
            self.notify(v);
        }
    }
}

fn wirings_json(st: &State, with_wiring: bool) -> Vec<Value> {
    st.table
        .iter()
        .map(|(id, w)| {
            let mut v = json!({
                "wiring_id": id,
                "app_id": w.target().app_id,
                "requirement_id": w.target().requirement_id,
                "status": w.status(),
                "counters": w.counters(),
            });
            if with_wiring {
                v["wiring"] = serde_json::to_value(w.wiring()).unwrap();
            }
            v
        })
        .collect()
}

/// Serves the wire protocol on `listener` until the task is dropped.
pub async fn serve_tcp(broker: Arc<Broker>, listener: TcpListener) {
    loop {
        match listener.accept().await {
            Ok((stream, peer)) => {
                let broker = broker.clone();
                tokio::spawn(async move {
                    if let Err(e) = session(broker, stream).await {
                        tracing::debug!(%peer, error = %e, "session ended");
                    }
                });
            }
            Err(e) => tracing::warn!(error = %e, "accept failed"),
        }
    }
}

/// Runs heartbeat expiry and counter digests once per heartbeat interval.
pub async fn housekeeping(broker: Arc<Broker>) {
    let mut tick = tokio::time::interval(Duration::from_millis(HEARTBEAT_INTERVAL_MS));
    loop {
        tick.tick().await;
        broker.expire();
        broker.publish_digest();
    }
}

async fn session(broker: Arc<Broker>, stream: TcpStream) -> Result<(), TransportError> {
    stream.set_nodelay(true)?;
    let (mut rd, mut wr) = stream.into_split();
    let first = match tokio::time::timeout(HANDSHAKE_TIMEOUT, read_message(&mut rd)).await {
        Err(_) => {
            write_message(&mut wr, &Message::error("handshake", "no HELLO within 5 s")).await?;
            return Ok(());
        }
        Ok(r) => r,
    };
    let (role, name) = match first {
        Ok(Some(Message::Hello { role, name })) => (role, name),
        Ok(None) => return Ok(()),
        Ok(Some(other)) => {
            let detail = format!("expected HELLO, got {}", other.type_tag());
            write_message(&mut wr, &Message::error("handshake", detail)).await?;
            return Ok(());
        }
        Err(TransportError::Decode(e @ DecodeError::Version(_))) => {
            write_message(&mut wr, &Message::error("version", e.to_string())).await?;
            return Ok(());
        }
        Err(TransportError::Decode(e)) => {
            write_message(&mut wr, &Message::error("handshake", e.to_string())).await?;
            return Ok(());
        }
        Err(e) => return Err(e),
    };
    let (tx, mut rx) = mpsc::channel::<Message>(SESSION_OUTBOX);
    let (sid, assigned_id) = broker.open_session(role, &name, tx.clone());
    tracing::info!(session = sid, id = %assigned_id, ?role, "session opened");
    tx.send(Message::Welcome { assigned_id }).await.expect("receiver alive");
    let writer = tokio::spawn(async move {
        while let Some(m) = rx.recv().await {
            if write_message(&mut wr, &m).await.is_err() {
                break;
            }
        }
    });
    let result = loop {
        match read_message(&mut rd).await {
            Ok(Some(m)) => {
                if let Some(reply) = broker.handle(sid, m) {
                    if tx.send(reply).await.is_err() {
                        break Ok(());
                    }
                }
            }
            Ok(None) => break Ok(()),
            // the frame boundary is known, so the stream stays usable
            Err(TransportError::Decode(
                e @ (DecodeError::Utf8
                | DecodeError::Json(_)
                | DecodeError::UnknownType(_)
                | DecodeError::Version(_)
                | DecodeError::Schema(_)),
            )) => {
                let _ = tx.send(Message::error(e.code(), e.to_string())).await;
            }
            Err(e) => break Err(e),
        }
    };
    broker.close_session(sid);
    drop(tx);
    let _ = writer.await;
    tracing::info!(session = sid, "session closed");
    result
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub listen: SocketAddr,
    pub http: SocketAddr,
    pub profiles: Option<PathBuf>,
    pub ui: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("profile directory: {0}")]
    Profiles(std::io::Error),
    #[error(transparent)]
    Flush(#[from] ProfileError),
}

/// Bound broker listeners, ready to serve.
pub struct Server {
    pub broker: Arc<Broker>,
    tcp: TcpListener,
    http: TcpListener,
    ui: Option<PathBuf>,
}

impl Server {
    pub async fn bind(cfg: &ServeConfig) -> Result<Self, ServeError> {
        let profiles = cfg
            .profiles
            .as_ref()
            .map(ProfileStore::open)
            .transpose()
            .map_err(ServeError::Profiles)?;
        let bind = |addr: SocketAddr| async move {
            TcpListener::bind(addr).await.map_err(|source| ServeError::Bind { addr, source })
        };
        Ok(Server {
            broker: Broker::new(Catalog::standard(), profiles),
            tcp: bind(cfg.listen).await?,
            http: bind(cfg.http).await?,
            ui: cfg.ui.clone(),
        })
    }

    pub fn tcp_addr(&self) -> SocketAddr {
        self.tcp.local_addr().expect("bound socket")
    }

    pub fn http_addr(&self) -> SocketAddr {
        self.http.local_addr().expect("bound socket")
    }

    /// Serves until `shutdown` resolves, then flushes profiles.
    pub async fn run(self, shutdown: impl std::future::Future<Output = ()> + Send + 'static) -> Result<(), ServeError> {
        let broker = self.broker.clone();
        let app = crate::config_service::router(broker.clone(), self.ui.as_deref());
        let tcp = tokio::spawn(serve_tcp(broker.clone(), self.tcp));
        let house = tokio::spawn(housekeeping(broker.clone()));
        let http = axum::serve(self.http, app).with_graceful_shutdown(shutdown);
        if let Err(e) = http.await {
            tracing::error!(error = %e, "http server failed");
        }
        tcp.abort();
        house.abort();
        broker.flush_profiles()?;
        Ok(())
    }
}
