use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use futures_util::StreamExt;
use http_body_util::BodyExt;
use hyperwire::broker::Broker;
use hyperwire::config_service::{router, CLOSE_BACKLOG};
use hyperwire::operator::Catalog;
use hyperwire::registry::{Capability, Requirement};
use hyperwire::transport::{EventFrame, Message, Role};
use hyperwire::Payload;
use serde_json::{json, Value};
use tokio::sync::mpsc;
use tokio_tungstenite::tungstenite::Message as Ws;
use tower::ServiceExt;

mod common;
use common::*;

async fn call(b: &Arc<Broker>, req: Request<Body>) -> (StatusCode, Value) {
    let res = router(b.clone(), None).oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn get(b: &Arc<Broker>, path: &str) -> Value {
    let (status, v) = call(b, Request::get(path).body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    v
}

async fn post(b: &Arc<Broker>, body: Value) -> (StatusCode, Value) {
    let req = Request::post("/v1/wirings/apply")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    call(b, req).await
}

/// Gamepad and joystick sessions plus the rotation demo app, registered
/// directly on the broker.
fn rotation_setup(b: &Broker) -> mpsc::Receiver<Message> {
    let (tx, _) = mpsc::channel(16);
    let (pad, _) = b.open_session(Role::Device, "gamepad", tx.clone());
    let (joy, _) = b.open_session(Role::Device, "joystick", tx);
    b.handle(pad, Message::AnnounceCaps {
        capabilities: vec![Capability::produces("dpad", t("axis/2/unit_signed/absolute"))],
    });
    b.handle(joy, Message::AnnounceCaps {
        capabilities: vec![Capability::produces("stick", t("rotation/1/unit_signed/relative"))],
    });
    let (app_tx, app_rx) = mpsc::channel(16);
    let (app, _) = b.open_session(Role::App, "demo", app_tx);
    b.handle(app, Message::AnnounceReqs {
        requirements: vec![Requirement::new("rotation3d", t("rotation/3/unit_signed/absolute"), "")],
    });
    app_rx
}

#[tokio::test]
async fn fresh_broker_has_empty_state() {
    let b = Broker::new(Catalog::standard(), None);
    let s = get(&b, "/v1/state").await;
    for key in ["devices", "apps", "wirings", "candidates"] {
        assert_eq!(s[key], json!([]), "{key}");
    }
    let stats = get(&b, "/v1/stats").await;
    assert_eq!(stats["wirings"], json!([]));
}

#[tokio::test]
async fn candidates_apply_and_show_up_in_state() {
    let b = Broker::new(Catalog::standard(), None);
    let mut app = rotation_setup(&b);
    let s = get(&b, "/v1/state").await;
    let wanted = serde_json::to_value(dpad_stick_wiring(&Catalog::standard(), "gamepad.dpad", "joystick.stick")).unwrap();
    let cands = s["candidates"][0]["wirings"].as_array().unwrap();
    let pick = cands.iter().find(|w| w["derivation"] == wanted).expect("offered").clone();

    let (status, v) = post(&b, json!({ "app_id": "demo", "requirement_id": "rotation3d", "wiring": pick })).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["wiring_id"], "w1");
    let s = get(&b, "/v1/state").await;
    assert_eq!(s["wirings"][0]["status"], "active");
    assert_eq!(s["wirings"][0]["wiring"]["derivation"], wanted);
    assert!(matches!(app.recv().await, Some(Message::WiringSet { .. })));

    // a bare derivation is accepted too and replaces the previous wiring
    let (status, v) = post(&b, json!({ "app_id": "demo", "requirement_id": "rotation3d", "wiring": wanted })).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["wiring_id"], "w2");
    assert_eq!(get(&b, "/v1/state").await["wirings"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn apply_errors_carry_reports() {
    let b = Broker::new(Catalog::standard(), None);
    let _app = rotation_setup(&b);
    let wiring = serde_json::to_value(dpad_stick_wiring(&Catalog::standard(), "gamepad.dpad", "gone.stick")).unwrap();
    let (status, v) = post(&b, json!({ "app_id": "demo", "requirement_id": "rotation3d", "wiring": wiring })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["code"], "missing_capability");
    assert_eq!(v["path"], "root.inputs[2].inputs[0]");

    let direct = serde_json::to_value(leaf("gamepad.dpad", "axis/2/unit_signed/absolute")).unwrap();
    let (status, v) = post(&b, json!({ "app_id": "demo", "requirement_id": "rotation3d", "wiring": direct })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["code"], "root_mismatch");

    let (status, v) = post(&b, json!({ "app_id": "nope", "requirement_id": "rotation3d", "wiring": direct })).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "unknown_app");
    let (status, _) = post(&b, json!({ "app_id": "demo", "requirement_id": "x", "wiring": direct })).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = post(&b, json!({ "app_id": "demo" })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(get(&b, "/v1/state").await["wirings"], json!([]));
}

#[tokio::test]
async fn concurrent_applies_serialize() {
    let b = Broker::new(Catalog::standard(), None);
    let _app = rotation_setup(&b);
    let cat = Catalog::standard();
    let a = serde_json::to_value(dpad_stick_wiring(&cat, "gamepad.dpad", "joystick.stick")).unwrap();
    let tasks: Vec<_> = (0..16)
        .map(|_| {
            let b = b.clone();
            let a = a.clone();
            tokio::spawn(async move { post(&b, json!({ "app_id": "demo", "requirement_id": "rotation3d", "wiring": a })).await })
        })
        .collect();
    for t in tasks {
        assert_eq!(t.await.unwrap().0, StatusCode::OK);
    }
    let s = get(&b, "/v1/state").await;
    let ws = s["wirings"].as_array().unwrap();
    assert_eq!(ws.len(), 1);
    assert_eq!(ws[0]["wiring_id"], "w16");
    assert_eq!(s["version"], 16);
}

async fn serve(b: Arc<Broker>) -> String {
    let l = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = l.local_addr().unwrap();
    let app = router(b, None);
    tokio::spawn(async move { axum::serve(l, app).await.unwrap() });
    format!("ws://{addr}/v1/events/stream")
}

async fn next_text<S>(ws: &mut S) -> Value
where
    S: StreamExt<Item = Result<Ws, tokio_tungstenite::tungstenite::Error>> + Unpin,
{
    loop {
        let m = tokio::time::timeout(Duration::from_secs(2), ws.next()).await.expect("message in time");
        if let Some(Ok(Ws::Text(t))) = m {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

#[tokio::test]
async fn device_join_is_pushed() {
    let b = Broker::new(Catalog::standard(), None);
    let url = serve(b.clone()).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    while b.subscriber_count() < 1 {
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    let (tx, _) = mpsc::channel(1);
    b.open_session(Role::Device, "pad", tx);
    let n = next_text(&mut ws).await;
    assert_eq!(n, json!({ "kind": "device_joined", "device_id": "pad" }));
}

#[tokio::test(flavor = "current_thread")]
async fn slow_subscribers_are_closed() {
    let b = Broker::new(Catalog::standard(), None);
    let url = serve(b.clone()).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    while b.subscriber_count() < 1 {
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    // the push task cannot run during this burst
    let (tx, _) = mpsc::channel(1);
    for i in 0..100 {
        b.open_session(Role::Device, &format!("d{i}"), tx.clone());
    }
    let close = loop {
        match tokio::time::timeout(Duration::from_secs(2), ws.next()).await.unwrap() {
            Some(Ok(Ws::Close(frame))) => break frame,
            Some(Ok(_)) => continue,
            other => panic!("{other:?}"),
        }
    };
    assert_eq!(u16::from(close.unwrap().code), CLOSE_BACKLOG);
}

#[tokio::test]
async fn samples_are_rate_limited() {
    let b = Broker::new(Catalog::standard(), None);
    let (tx, _) = mpsc::channel(16);
    let (pad, _) = b.open_session(Role::Device, "pad", tx);
    let button = t("button/1/discrete/absolute");
    b.handle(pad, Message::AnnounceCaps { capabilities: vec![Capability::produces("a", button)] });
    let (app_tx, _app_rx) = mpsc::channel(100_000);
    let (app, _) = b.open_session(Role::App, "app", app_tx);
    b.handle(app, Message::AnnounceReqs { requirements: vec![Requirement::new("p", button, "")] });
    b.apply("app", "p", leaf("pad.a", "button/1/discrete/absolute")).unwrap();

    let url = serve(b.clone()).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("{url}?sample=1")).await.unwrap();
    let (mut plain, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    while b.subscriber_count() < 2 {
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    let feeder = {
        let b = b.clone();
        tokio::spawn(async move {
            let start = tokio::time::Instant::now();
            let mut ts = 0u64;
            while start.elapsed() < Duration::from_millis(1000) {
                let e = EventFrame {
                    capability_id: Some("a".into()),
                    requirement_id: None,
                    ty: t("button/1/discrete/absolute"),
                    ts_ns: ts,
                    payload: Payload::Scalars(vec![(ts % 2) as f64]),
                };
                assert!(b.handle(pad, Message::Event(e)).is_none());
                ts += 1;
                tokio::time::sleep(Duration::from_micros(500)).await;
            }
            ts
        })
    };
    let mut samples = 0;
    let deadline = tokio::time::Instant::now() + Duration::from_millis(1000);
    while let Ok(Some(Ok(m))) = tokio::time::timeout_at(deadline, ws.next()).await {
        if let Ws::Text(t) = m {
            if t.contains("\"sample\"") {
                samples += 1;
            }
        }
    }
    let sent = feeder.await.unwrap();
    assert!(sent > 100, "only {sent} events");
    assert!((1..=11).contains(&samples), "{samples} samples");
    // without the flag no samples arrive
    while let Ok(Some(Ok(m))) = tokio::time::timeout(Duration::from_millis(50), plain.next()).await {
        if let Ws::Text(t) = m {
            assert!(!t.contains("\"sample\""));
        }
    }
}
