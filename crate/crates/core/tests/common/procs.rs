//! Helpers for driving the `hyperwire` binary as separate processes.

use std::io::Read;
use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command, ExitStatus, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;

pub const BIN: &str = env!("CARGO_BIN_EXE_hyperwire");

pub fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

pub fn hyperwire() -> Command {
    let mut c = Command::new(BIN);
    c.env("HYPERWIRE_LOG", "warn").env_remove("HYPERWIRE_PORT").env_remove("HYPERWIRE_HTTP");
    c
}

/// A child process killed on drop.
pub struct Proc(pub Child);

impl Proc {
    pub fn spawn(mut cmd: Command) -> Proc {
        Proc(cmd.stdin(Stdio::null()).stdout(Stdio::piped()).stderr(Stdio::piped()).spawn().unwrap())
    }

    pub fn wait_timeout(&mut self, limit: Duration) -> Option<ExitStatus> {
        let end = Instant::now() + limit;
        while Instant::now() < end {
            if let Some(s) = self.0.try_wait().unwrap() {
                return Some(s);
            }
            std::thread::sleep(Duration::from_millis(20));
        }
        None
    }

    /// Waits for exit and returns (status, stdout, stderr).
    pub fn finish(mut self, limit: Duration) -> (Option<ExitStatus>, String, String) {
        let status = self.wait_timeout(limit);
        if status.is_none() {
            let _ = self.0.kill();
            let _ = self.0.wait();
        }
        let mut out = String::new();
        let mut err = String::new();
        if let Some(mut o) = self.0.stdout.take() {
            o.read_to_string(&mut out).unwrap();
        }
        if let Some(mut e) = self.0.stderr.take() {
            e.read_to_string(&mut err).unwrap();
        }
        (status, out, err)
    }

    #[cfg(unix)]
    pub fn signal(&self, sig: &str) {
        let ok = Command::new("kill").args(["-s", sig, &self.0.id().to_string()]).status().unwrap();
        assert!(ok.success());
    }
}

impl Drop for Proc {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

pub struct BrokerProc {
    pub proc: Proc,
    pub tcp: String,
    pub http: String,
}

impl BrokerProc {
    pub fn start(profiles: Option<&Path>) -> BrokerProc {
        let (tcp, http) = (free_port(), free_port());
        let mut cmd = hyperwire();
        cmd.args(["serve", "--listen", &format!("127.0.0.1:{tcp}"), "--http", &format!("127.0.0.1:{http}")]);
        if let Some(p) = profiles {
            cmd.arg("--profiles").arg(p);
        }
        let b = BrokerProc {
            proc: Proc::spawn(cmd),
            tcp: format!("127.0.0.1:{tcp}"),
            http: format!("http://127.0.0.1:{http}"),
        };
        b.wait_until(Duration::from_secs(10), |_| true);
        b
    }

    pub fn state(&self) -> Option<Value> {
        ureq::get(&format!("{}/v1/state", self.http)).call().ok()?.into_json().ok()
    }

    /// Polls /v1/state until `pred` holds.
    pub fn wait_until(&self, limit: Duration, pred: impl Fn(&Value) -> bool) -> Value {
        let end = Instant::now() + limit;
        loop {
            if let Some(s) = self.state() {
                if pred(&s) {
                    return s;
                }
            }
            assert!(Instant::now() < end, "broker state condition not reached");
            std::thread::sleep(Duration::from_millis(20));
        }
    }

    pub fn apply(&self, app: &str, req: &str, wiring: &impl serde::Serialize) -> Value {
        ureq::post(&format!("{}/v1/wirings/apply", self.http))
            .send_json(serde_json::json!({ "app_id": app, "requirement_id": req, "wiring": wiring }))
            .unwrap()
            .into_json()
            .unwrap()
    }
}

pub fn has_device(s: &Value, id: &str) -> bool {
    s["devices"].as_array().is_some_and(|d| d.iter().any(|d| d["device_id"] == id))
}

pub fn has_app(s: &Value, id: &str) -> bool {
    s["apps"].as_array().is_some_and(|a| a.iter().any(|a| a["app_id"] == id))
}
