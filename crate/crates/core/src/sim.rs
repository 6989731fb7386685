//! Simulated devices and the demo application.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::io::AsyncBufReadExt;

use crate::client::{Client, ClientError};
use crate::event::{Event, EventType, Payload};
use crate::registry::{Capability, Requirement, HEARTBEAT_INTERVAL_MS};
use crate::transport::{EventFrame, Message, Role};

fn ty(s: &str) -> EventType {
    s.parse().expect("built-in type")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DeviceKind {
    Gamepad,
    KeyboardArrows,
    PhoneSwipe,
    Joystick,
}

impl DeviceKind {
    pub const ALL: [DeviceKind; 4] = [
        DeviceKind::Gamepad,
        DeviceKind::KeyboardArrows,
        DeviceKind::PhoneSwipe,
        DeviceKind::Joystick,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DeviceKind::Gamepad => "gamepad",
            DeviceKind::KeyboardArrows => "keyboard-arrows",
            DeviceKind::PhoneSwipe => "phone-swipe",
            DeviceKind::Joystick => "joystick",
        }
    }

    /// The fixed capability set announced by this kind.
    pub fn capabilities(self) -> Vec<Capability> {
        let button = ty("button/1/discrete/absolute");
        match self {
            DeviceKind::Gamepad => {
                let mut caps = vec![Capability::produces("dpad", ty("axis/2/unit_signed/absolute"))];
                caps.extend(["a", "b", "x", "y"].map(|id| Capability::produces(id, button)));
                caps
            }
            // two button pairs: left/right and down/up
            DeviceKind::KeyboardArrows => ["left", "right", "up", "down"]
                .map(|id| Capability::produces(id, button))
                .to_vec(),
            DeviceKind::PhoneSwipe => vec![Capability::produces("swipe", ty("position/2/unit_signed/relative"))],
            DeviceKind::Joystick => vec![
                Capability::produces("stick", ty("rotation/1/unit_signed/relative")),
                Capability::produces("trigger", ty("trigger/1/discrete/absolute")),
            ],
        }
    }
}

impl fmt::Display for DeviceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DeviceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DeviceKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown device kind `{s}`"))
    }
}

/// Requirements the demo application can announce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DemoRequirement {
    Rotation3d,
    Motion3d,
}

impl DemoRequirement {
    pub fn id(self) -> &'static str {
        match self {
            DemoRequirement::Rotation3d => "rotation3d",
            DemoRequirement::Motion3d => "motion3d",
        }
    }

    pub fn requirement(self) -> Requirement {
        match self {
            DemoRequirement::Rotation3d => {
                Requirement::new(self.id(), ty("rotation/3/unit_signed/absolute"), "3D rotation")
            }
            DemoRequirement::Motion3d => Requirement::new(self.id(), ty("axis/3/unit_signed/relative"), "3D motion"),
        }
    }
}

impl FromStr for DemoRequirement {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rotation3d" => Ok(DemoRequirement::Rotation3d),
            "motion3d" => Ok(DemoRequirement::Motion3d),
            _ => Err(format!("unknown requirement `{s}`")),
        }
    }
}

/// Event timestamps: nanoseconds since start, or a per-process counter.
#[derive(Debug)]
pub struct Clock {
    start: Instant,
    counter: Option<AtomicU64>,
}

impl Clock {
    pub fn new(deterministic: bool) -> Self {
        Clock {
            start: Instant::now(),
            counter: deterministic.then(|| AtomicU64::new(0)),
        }
    }

    pub fn now_ns(&self) -> u64 {
        match &self.counter {
            Some(c) => c.fetch_add(1, Ordering::Relaxed) + 1,
            None => self.start.elapsed().as_nanos() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    #[serde(default)]
    pub delay_ms: u64,
    pub capability_id: String,
    pub payload: Payload,
}

/// A replayable list of device events.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimScript {
    pub steps: Vec<Step>,
    #[serde(default, rename = "loop")]
    pub looped: bool,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("script {path}: {detail}")]
    Script { path: String, detail: String },
    #[error("step {index}: {detail}")]
    StepType { index: usize, detail: String },
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SimScript {
    /// Parses a JSON list of steps, or an object `{steps, loop}`.
    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Form {
            Steps(Vec<Step>),
            Full(SimScript),
        }
        Ok(match serde_json::from_str(text)? {
            Form::Steps(steps) => SimScript { steps, looped: false },
            Form::Full(s) => s,
        })
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let err = |detail: String| SimError::Script {
            path: path.display().to_string(),
            detail,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        Self::parse(&text).map_err(|e| err(e.to_string()))
    }

    /// Checks every step against the device's capabilities.
    pub fn check(&self, kind: DeviceKind) -> Result<(), SimError> {
        let caps = kind.capabilities();
        for (index, s) in self.steps.iter().enumerate() {
            let cap = caps.iter().find(|c| c.id == s.capability_id).ok_or_else(|| SimError::StepType {
                index,
                detail: format!("{kind} has no capability `{}`", s.capability_id),
            })?;
            Event::new("", cap.ty, 0, s.payload.clone()).map_err(|e| SimError::StepType {
                index,
                detail: format!("`{}`: {e}", s.capability_id),
            })?;
        }
        Ok(())
    }
}

/// Parses an interactive line: `<capability> <v1> [v2 ...]` or a JSON step.
pub fn parse_line(line: &str) -> Option<Step> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return None;
    }
    if line.starts_with('{') {
        return serde_json::from_str(line).ok();
    }
    let mut parts = line.split_whitespace();
    let capability_id = parts.next()?.to_string();
    let xs: Option<Vec<f64>> = parts.map(|p| p.parse().ok()).collect();
    Some(Step {
        delay_ms: 0,
        capability_id,
        payload: Payload::Scalars(xs?),
    })
}

async fn heartbeats(tx: tokio::sync::mpsc::Sender<Message>) {
    let mut tick = tokio::time::interval(Duration::from_millis(HEARTBEAT_INTERVAL_MS));
    loop {
        tick.tick().await;
        if tx.send(Message::Heartbeat {}).await.is_err() {
            return;
        }
    }
}

fn step_frame(kind: DeviceKind, s: &Step, clock: &Clock) -> Option<Message> {
    let cap = kind.capabilities().into_iter().find(|c| c.id == s.capability_id)?;
    Some(Message::Event(EventFrame {
        capability_id: Some(s.capability_id.clone()),
        requirement_id: None,
        ty: cap.ty,
        ts_ns: clock.now_ns(),
        payload: s.payload.clone(),
    }))
}

/// Runs a simulated device until the broker closes the connection. Without
/// a script, events are read from stdin when `stdin` is set.
pub async fn run_device(
    addr: &str,
    kind: DeviceKind,
    script: Option<SimScript>,
    stdin: bool,
    clock: Clock,
) -> Result<(), SimError> {
    if let Some(s) = &script {
        s.check(kind)?;
    }
    let mut client = Client::connect(addr, Role::Device, kind.name()).await?;
    tracing::info!(device = %client.assigned_id, "connected");
    client
        .send(&Message::AnnounceCaps {
            capabilities: kind.capabilities(),
        })
        .await?;
    let (mut rx, mut wr) = client.split();
    let (tx, mut out) = tokio::sync::mpsc::channel::<Message>(1024);
    let writer = tokio::spawn(async move {
        while let Some(m) = out.recv().await {
            if wr.send(&m).await.is_err() {
                break;
            }
        }
    });
    tokio::spawn(heartbeats(tx.clone()));
    let feeder = tokio::spawn(async move {
        match script {
            Some(s) => loop {
                for step in &s.steps {
                    tokio::time::sleep(Duration::from_millis(step.delay_ms)).await;
                    let m = step_frame(kind, step, &clock).expect("checked script");
                    if tx.send(m).await.is_err() {
                        return;
                    }
                }
                if !s.looped || s.steps.is_empty() {
                    break;
                }
            },
            None if stdin => {
                let mut lines = tokio::io::BufReader::new(tokio::io::stdin()).lines();
                while let Ok(Some(line)) = lines.next_line().await {
                    let Some(step) = parse_line(&line) else { continue };
                    match step_frame(kind, &step, &clock) {
                        Some(m) => {
                            if tx.send(m).await.is_err() {
                                return;
                            }
                        }
                        None => eprintln!("{kind} has no capability `{}`", step.capability_id),
                    }
                }
            }
            None => {}
        }
        // keep the sender alive so the heartbeat writer stays open
        std::future::pending::<()>().await;
    });
    let result = loop {
        match rx.recv().await {
            Ok(Some(Message::Error { code, detail })) => {
                tracing::warn!(%code, %detail, "broker error");
            }
            Ok(Some(_)) => {}
            Ok(None) => break Ok(()),
            Err(e) => break Err(e.into()),
        }
    };
    feeder.abort();
    writer.abort();
    result
}

/// Connects as the demo application and writes every delivered event as
/// one JSON line to `out`. Returns after `max_events` deliveries, or when
/// the broker closes the connection.
pub async fn run_demo_app(
    addr: &str,
    require: DemoRequirement,
    clock: Clock,
    max_events: Option<u64>,
    out: &mut (dyn Write + Send),
) -> Result<(), SimError> {
    let mut client = Client::connect(addr, Role::App, "demo").await?;
    tracing::info!(app = %client.assigned_id, "connected");
    client
        .send(&Message::AnnounceReqs {
            requirements: vec![require.requirement()],
        })
        .await?;
    let (mut rx, mut wr) = client.split();
    let (tx, mut outbox) = tokio::sync::mpsc::channel::<Message>(16);
    let writer = tokio::spawn(async move {
        while let Some(m) = outbox.recv().await {
            if wr.send(&m).await.is_err() {
                break;
            }
        }
    });
    let beat = tokio::spawn(heartbeats(tx));
    let mut seen = 0u64;
    let result = loop {
        if max_events.is_some_and(|n| seen >= n) {
            break Ok(());
        }
        match rx.recv().await {
            Ok(Some(Message::Event(mut f))) => {
                if clock.counter.is_some() {
                    f.ts_ns = clock.now_ns();
                }
                let line = serde_json::to_value(&f).expect("frame serializes").to_string();
                writeln!(out, "{line}")?;
                out.flush()?;
                seen += 1;
            }
            Ok(Some(Message::WiringSet { requirement_id, wiring })) => {
                tracing::info!(requirement = %requirement_id, operators = wiring.operator_count(), "wiring set");
            }
            Ok(Some(Message::Error { code, detail })) => tracing::warn!(%code, %detail, "broker error"),
            Ok(Some(_)) => {}
            Ok(None) => break Ok(()),
            Err(e) => break Err(e.into()),
        }
    };
    beat.abort();
    writer.abort();
    result
}
