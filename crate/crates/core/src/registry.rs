//! Connected devices and applications, their announced capabilities and
//! requirements, and persisted profiles.
//!
//! Times are caller-supplied milliseconds so that liveness is testable
//! without a wall clock.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::EventType;
use crate::operator::Catalog;
use crate::solver::{build_graph, solve_distinct, CapabilityId, Wiring, DEFAULT_MAX_DEPTH, DEFAULT_MAX_RESULTS};

pub const HEARTBEAT_INTERVAL_MS: u64 = 1000;
/// Missed heartbeats after which a device is dropped.
pub const MISSED_HEARTBEATS: u64 = 3;
pub const PROFILE_FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Produces,
    Consumes,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capability {
    pub id: String,
    #[serde(rename = "type")]
    pub ty: EventType,
    pub direction: Direction,
}

impl Capability {
    pub fn produces(id: &str, ty: EventType) -> Self {
        Capability {
            id: id.to_string(),
            ty,
            direction: Direction::Produces,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceDescriptor {
    pub device_id: String,
    pub name: String,
    pub capabilities: Vec<Capability>,
    /// Transport session handle.
    #[serde(skip)]
    pub session: Option<u64>,
    pub last_heartbeat_ms: u64,
}

impl DeviceDescriptor {
    /// Broker-wide id of one of this device's capabilities.
    pub fn global_id(&self, capability: &str) -> CapabilityId {
        format!("{}.{}", self.device_id, capability)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Requirement {
    pub id: String,
    #[serde(rename = "type")]
    pub ty: EventType,
    #[serde(default)]
    pub label: String,
}

impl Requirement {
    pub fn new(id: &str, ty: EventType, label: &str) -> Self {
        Requirement {
            id: id.to_string(),
            ty,
            label: label.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppDescriptor {
    pub app_id: String,
    pub name: String,
    pub requirements: Vec<Requirement>,
    #[serde(skip)]
    pub session: Option<u64>,
}

impl AppDescriptor {
    pub fn requirement(&self, id: &str) -> Option<&Requirement> {
        self.requirements.iter().find(|r| r.id == id)
    }
}

/// The wirings a user chose for one application.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    pub format_version: String,
    pub profile_id: String,
    pub app_id: String,
    /// requirement id → wiring
    pub chosen: BTreeMap<String, Wiring>,
    pub created_ms: u64,
    pub modified_ms: u64,
}

impl Profile {
    pub fn new(app_id: &str, now_ms: u64) -> Self {
        Profile {
            format_version: PROFILE_FORMAT_VERSION.to_string(),
            profile_id: app_id.to_string(),
            app_id: app_id.to_string(),
            chosen: BTreeMap::new(),
            created_ms: now_ms,
            modified_ms: now_ms,
        }
    }

    /// Canonical JSON form (sorted keys, no whitespace).
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_value(self).expect("profile serializes").to_string()
    }
}

/// Change notification, in registry order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Change {
    DeviceJoined { device_id: String },
    DeviceLeft { device_id: String, capabilities: Vec<CapabilityId> },
    AppJoined { app_id: String },
    AppLeft { app_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
    #[error("unknown app `{0}`")]
    UnknownApp(String),
    #[error("app `{app}` has no requirement `{requirement}`")]
    UnknownRequirement { app: String, requirement: String },
    #[error("duplicate id `{0}` in announcement")]
    DuplicateId(String),
    #[error("wiring for `{requirement}` yields {got}, requirement is {want}")]
    WrongRoot {
        requirement: String,
        want: EventType,
        got: EventType,
    },
}

impl RegistryError {
    pub fn code(&self) -> &'static str {
        match self {
            RegistryError::UnknownDevice(_) => "unknown_device",
            RegistryError::UnknownApp(_) => "unknown_app",
            RegistryError::UnknownRequirement { .. } => "unknown_requirement",
            RegistryError::DuplicateId(_) => "duplicate_id",
            RegistryError::WrongRoot { .. } => "type_mismatch",
        }
    }
}

#[derive(Debug, Default)]
pub struct Registry {
    catalog: Catalog,
    devices: BTreeMap<String, DeviceDescriptor>,
    apps: BTreeMap<String, AppDescriptor>,
    changes: Vec<Change>,
}

/// Lowercase alphanumerics and dashes; other characters become dashes.
fn slug(name: &str) -> String {
    let s: String = name
        .trim()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect();
    let s = s.trim_matches('-');
    if s.is_empty() { "anon".to_string() } else { s.to_string() }
}

fn unique_id<V>(name: &str, taken: &BTreeMap<String, V>) -> String {
    let base = slug(name);
    if !taken.contains_key(&base) {
        return base;
    }
    (2..).map(|n| format!("{base}-{n}")).find(|id| !taken.contains_key(id)).unwrap()
}

fn check_unique<'a>(ids: impl Iterator<Item = &'a str>) -> Result<(), RegistryError> {
    let mut seen = std::collections::BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(RegistryError::DuplicateId(id.to_string()));
        }
    }
    Ok(())
}

impl Registry {
    pub fn new(catalog: Catalog) -> Self {
        Registry {
            catalog,
            ..Default::default()
        }
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    /// Registers a device under an id derived from its name.
    pub fn register_device(
        &mut self,
        name: &str,
        capabilities: Vec<Capability>,
        session: Option<u64>,
        now_ms: u64,
    ) -> Result<String, RegistryError> {
        check_unique(capabilities.iter().map(|c| c.id.as_str()))?;
        let device_id = unique_id(name, &self.devices);
        self.devices.insert(
            device_id.clone(),
            DeviceDescriptor {
                device_id: device_id.clone(),
                name: name.to_string(),
                capabilities,
                session,
                last_heartbeat_ms: now_ms,
            },
        );
        self.changes.push(Change::DeviceJoined {
            device_id: device_id.clone(),
        });
        Ok(device_id)
    }

    /// Replaces a registered device's capability list. Returns the global
    /// ids of capabilities that disappeared.
    pub fn announce_capabilities(
        &mut self,
        device_id: &str,
        capabilities: Vec<Capability>,
    ) -> Result<Vec<CapabilityId>, RegistryError> {
        check_unique(capabilities.iter().map(|c| c.id.as_str()))?;
        let d = self
            .devices
            .get_mut(device_id)
            .ok_or_else(|| RegistryError::UnknownDevice(device_id.to_string()))?;
        let lost = d
            .capabilities
            .iter()
            .filter(|old| !capabilities.iter().any(|c| c == *old))
            .map(|c| format!("{device_id}.{}", c.id))
            .collect();
        d.capabilities = capabilities;
        Ok(lost)
    }

    /// Removes a device; returns the global ids of its capabilities.
    pub fn unregister_device(&mut self, device_id: &str) -> Result<Vec<CapabilityId>, RegistryError> {
        let d = self
            .devices
            .remove(device_id)
            .ok_or_else(|| RegistryError::UnknownDevice(device_id.to_string()))?;
        let lost: Vec<CapabilityId> = d.capabilities.iter().map(|c| d.global_id(&c.id)).collect();
        self.changes.push(Change::DeviceLeft {
            device_id: device_id.to_string(),
            capabilities: lost.clone(),
        });
        Ok(lost)
    }

    pub fn register_app(
        &mut self,
        name: &str,
        requirements: Vec<Requirement>,
        session: Option<u64>,
    ) -> Result<String, RegistryError> {
        check_unique(requirements.iter().map(|r| r.id.as_str()))?;
        let app_id = unique_id(name, &self.apps);
        self.apps.insert(
            app_id.clone(),
            AppDescriptor {
                app_id: app_id.clone(),
                name: name.to_string(),
                requirements,
                session,
            },
        );
        self.changes.push(Change::AppJoined { app_id: app_id.clone() });
        Ok(app_id)
    }

    pub fn announce_requirements(
        &mut self,
        app_id: &str,
        requirements: Vec<Requirement>,
    ) -> Result<(), RegistryError> {
        check_unique(requirements.iter().map(|r| r.id.as_str()))?;
        let a = self
            .apps
            .get_mut(app_id)
            .ok_or_else(|| RegistryError::UnknownApp(app_id.to_string()))?;
        a.requirements = requirements;
        Ok(())
    }

    pub fn unregister_app(&mut self, app_id: &str) -> Result<AppDescriptor, RegistryError> {
        let a = self
            .apps
            .remove(app_id)
            .ok_or_else(|| RegistryError::UnknownApp(app_id.to_string()))?;
        self.changes.push(Change::AppLeft {
            app_id: app_id.to_string(),
        });
        Ok(a)
    }

    pub fn device(&self, id: &str) -> Option<&DeviceDescriptor> {
        self.devices.get(id)
    }

    pub fn devices(&self) -> impl Iterator<Item = &DeviceDescriptor> {
        self.devices.values()
    }

    pub fn app(&self, id: &str) -> Option<&AppDescriptor> {
        self.apps.get(id)
    }

    pub fn apps(&self) -> impl Iterator<Item = &AppDescriptor> {
        self.apps.values()
    }

    pub fn heartbeat(&mut self, device_id: &str, now_ms: u64) -> Result<(), RegistryError> {
        let d = self
            .devices
            .get_mut(device_id)
            .ok_or_else(|| RegistryError::UnknownDevice(device_id.to_string()))?;
        d.last_heartbeat_ms = d.last_heartbeat_ms.max(now_ms);
        Ok(())
    }

    /// Drops devices that missed [`MISSED_HEARTBEATS`] beats. Returns the
    /// removed device ids and their capability ids.
    pub fn expire(&mut self, now_ms: u64) -> Vec<(String, Vec<CapabilityId>)> {
        let limit = HEARTBEAT_INTERVAL_MS * MISSED_HEARTBEATS;
        let dead: Vec<String> = self
            .devices
            .values()
            .filter(|d| now_ms.saturating_sub(d.last_heartbeat_ms) > limit)
            .map(|d| d.device_id.clone())
            .collect();
        dead.into_iter()
            .map(|id| {
                let lost = self.unregister_device(&id).expect("listed device");
                (id, lost)
            })
            .collect()
    }

    /// Live produced capabilities keyed by global id.
    pub fn capability_types(&self) -> BTreeMap<CapabilityId, EventType> {
        self.devices
            .values()
            .flat_map(|d| {
                d.capabilities
                    .iter()
                    .filter(|c| c.direction == Direction::Produces)
                    .map(|c| (d.global_id(&c.id), c.ty))
            })
            .collect()
    }

    pub fn requirement(&self, app_id: &str, requirement_id: &str) -> Result<&Requirement, RegistryError> {
        let app = self
            .apps
            .get(app_id)
            .ok_or_else(|| RegistryError::UnknownApp(app_id.to_string()))?;
        app.requirement(requirement_id)
            .ok_or_else(|| RegistryError::UnknownRequirement {
                app: app_id.to_string(),
                requirement: requirement_id.to_string(),
            })
    }

    /// Ranked wiring choices for one requirement over the live capabilities.
    pub fn candidate_wirings(&self, app_id: &str, requirement_id: &str) -> Result<Vec<Wiring>, RegistryError> {
        let req = self.requirement(app_id, requirement_id)?;
        let caps: Vec<_> = self.capability_types().into_iter().collect();
        if caps.is_empty() {
            return Ok(Vec::new());
        }
        let g = build_graph(&caps, self.catalog.iter(), req.ty);
        Ok(solve_distinct(&g, requirement_id, DEFAULT_MAX_DEPTH, DEFAULT_MAX_RESULTS))
    }

    /// Checks that every chosen wiring targets an existing requirement of
    /// the profile's app and yields its type.
    pub fn check_profile(&self, p: &Profile) -> Result<(), RegistryError> {
        for (rid, w) in &p.chosen {
            let req = self.requirement(&p.app_id, rid)?;
            let got = w.derivation.root_type();
            if got != req.ty {
                return Err(RegistryError::WrongRoot {
                    requirement: rid.clone(),
                    want: req.ty,
                    got,
                });
            }
        }
        Ok(())
    }

    /// Pending change notifications, oldest first.
    pub fn take_changes(&mut self) -> Vec<Change> {
        std::mem::take(&mut self.changes)
    }
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("no profile `{0}`")]
    Missing(String),
    #[error("profile `{id}` is malformed: {detail}")]
    Parse { id: String, detail: String },
    #[error("profile `{id}` has format version {found}")]
    Version { id: String, found: String },
    #[error("invalid profile id `{0}`")]
    BadId(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One JSON document per profile in a directory.
#[derive(Debug, Clone)]
pub struct ProfileStore {
    dir: PathBuf,
}

impl ProfileStore {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(ProfileStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, id: &str) -> Result<PathBuf, ProfileError> {
        if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
            return Err(ProfileError::BadId(id.to_string()));
        }
        Ok(self.dir.join(format!("{id}.json")))
    }

    /// Writes atomically: a temporary file is renamed over the target.
    pub fn save(&self, p: &Profile) -> Result<(), ProfileError> {
        let path = self.path(&p.profile_id)?;
        let tmp = path.with_extension("json.tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(p.to_canonical_json().as_bytes())?;
        f.write_all(b"\n")?;
        f.sync_all()?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    pub fn load(&self, id: &str) -> Result<Profile, ProfileError> {
        let path = self.path(id)?;
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(ProfileError::Missing(id.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        let parse = |detail: String| ProfileError::Parse {
            id: id.to_string(),
            detail,
        };
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| parse(e.to_string()))?;
        match value.get("format_version").and_then(|v| v.as_str()) {
            Some(PROFILE_FORMAT_VERSION) => {}
            Some(other) => {
                return Err(ProfileError::Version {
                    id: id.to_string(),
                    found: other.to_string(),
                })
            }
            None => return Err(parse("missing format_version".into())),
        }
        serde_json::from_value(value).map_err(|e| parse(e.to_string()))
    }

    /// Ids of every stored profile, sorted.
    pub fn list(&self) -> Result<Vec<String>, ProfileError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let name = entry?.file_name();
            if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(".json")) {
                out.push(id.to_string());
            }
        }
        out.sort();
        Ok(out)
    }
}
