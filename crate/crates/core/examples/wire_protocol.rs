//! Framing on the wire: a 4-byte big-endian length and canonical JSON with
//! sorted keys. Shows a round trip and the structured decode errors.

use hyperwire::transport::{decode_frame, encode_frame, EventFrame, Message, Role};
use hyperwire::Payload;

fn show(label: &str, bytes: &[u8]) {
    match decode_frame(bytes) {
        Ok(m) => println!("{label:<14} ok    {}", m.type_tag()),
        Err(e) => println!("{label:<14} {:<12} {e}", e.code()),
    }
}

fn main() {
    let hello = Message::Hello { role: Role::Device, name: "gamepad".into() };
    let bytes = encode_frame(&hello);
    println!("{:02x?} {}", &bytes[..4], String::from_utf8_lossy(&bytes[4..]));

    let event = Message::Event(EventFrame {
        capability_id: Some("dpad".into()),
        requirement_id: None,
        ty: "axis/2/unit_signed/absolute".parse().unwrap(),
        ts_ns: 42,
        payload: Payload::Scalars(vec![0.5, -0.25]),
    });
    let framed = encode_frame(&event);
    assert_eq!(decode_frame(&framed).unwrap(), event);
    println!("{}", String::from_utf8_lossy(&framed[4..]));

    show("valid", &framed);
    show("short", &framed[..framed.len() - 1]);
    let mut extra = framed.clone();
    extra.push(0);
    show("trailing", &extra);
    show("huge length", &[0xff, 0xff, 0xff, 0xff]);

    let body = |s: &str| {
        let mut b = (s.len() as u32).to_be_bytes().to_vec();
        b.extend(s.as_bytes());
        b
    };
    show("not json", &body("{oops"));
    show("unknown type", &body(r#"{"t":"JUMP","v":1}"#));
    show("future", &body(r#"{"t":"HEARTBEAT","v":2}"#));
    show(
        "wrong arity",
        &body(r#"{"capability_id":"dpad","payload":[1.0],"t":"EVENT","ts_ns":1,"type":"axis/2/unit_signed/absolute","v":1}"#),
    );
}
