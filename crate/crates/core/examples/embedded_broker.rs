//! A broker running inside the process, with a device and an application
//! talking to it over TCP and a wiring applied through the HTTP API.

use std::time::Duration;

use hyperwire::broker::{ServeConfig, Server};
use hyperwire::client::Client;
use hyperwire::registry::{Capability, Requirement};
use hyperwire::transport::{EventFrame, Message, Role};
use hyperwire::{Event, EventType};
use serde_json::{json, Value};

type Error = Box<dyn std::error::Error + Send + Sync>;

fn get(url: &str) -> Result<Value, Error> {
    Ok(ureq::get(url).call()?.into_json()?)
}

fn post(url: &str, body: Value) -> Result<Value, Error> {
    Ok(ureq::post(url).send_json(body)?.into_json()?)
}

#[tokio::main]
async fn main() -> Result<(), Error> {
    let cfg = ServeConfig {
        listen: "127.0.0.1:0".parse()?,
        http: "127.0.0.1:0".parse()?,
        profiles: None,
        ui: None,
    };
    let server = Server::bind(&cfg).await?;
    let (tcp, http) = (server.tcp_addr().to_string(), format!("http://{}", server.http_addr()));
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let serving = tokio::spawn(server.run(async {
        let _ = stopped.await;
    }));

    let trigger: EventType = "trigger/1/discrete/absolute".parse()?;
    let mut pad = Client::connect(&tcp, Role::Device, "pedal").await?;
    pad.send(&Message::AnnounceCaps { capabilities: vec![Capability::produces("brake", trigger)] })
        .await?;
    let mut app = Client::connect(&tcp, Role::App, "racer").await?;
    app.send(&Message::AnnounceReqs { requirements: vec![Requirement::new("brake", trigger, "brake")] })
        .await?;
    println!("device {} and app {} connected", pad.assigned_id, app.assigned_id);

    // registration is asynchronous; poll the state until a candidate shows up
    let state_url = format!("{http}/v1/state");
    let wiring = loop {
        let url = state_url.clone();
        let state = tokio::task::spawn_blocking(move || get(&url)).await??;
        if let Some(w) = state["candidates"][0]["wirings"].get(0) {
            break w.clone();
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    };
    let apply_url = format!("{http}/v1/wirings/apply");
    let body = json!({ "app_id": app.assigned_id, "requirement_id": "brake", "wiring": wiring });
    let applied = tokio::task::spawn_blocking(move || post(&apply_url, body)).await??;
    println!("applied {}", applied["wiring_id"]);

    match app.recv().await? {
        Some(Message::WiringSet { requirement_id, .. }) => println!("app told about wiring for {requirement_id}"),
        other => println!("unexpected {other:?}"),
    }

    for (ts, v) in [(1, 1.0), (2, 0.0)] {
        let e = Event::new("pedal", trigger, ts, vec![v])?;
        pad.send(&Message::Event(EventFrame::from_capability("brake", &e))).await?;
        if let Some(Message::Event(e)) = app.recv().await? {
            println!("app received {}", Message::Event(e).to_json());
        }
    }

    let _ = stop.send(());
    serving.await??;
    Ok(())
}
