use std::net::TcpStream;
use std::thread;
use std::time::{Duration, Instant};

use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

use telewalk::robot::RobotParams;
use telewalk::telelocomotion::{LoopConfig, TelemetryRecord, Verdict};
use telewalk_pilot::bridge::{Bridge, BridgeOptions};
use telewalk_pilot::ui::{ClientMessage, ServerMessage, UiMode, UiPilotMessage, UI_SCHEMA_VERSION};

type Client = WebSocket<MaybeTlsStream<TcpStream>>;

fn start(duration: f64) -> (u16, thread::JoinHandle<(telewalk::telelocomotion::EpisodeResult, Vec<u8>)>) {
    let opts = BridgeOptions {
        accept_timeout: Some(Duration::from_secs(20)),
        first_command_timeout: Duration::from_secs(10),
        ..Default::default()
    };
    let bridge = Bridge::bind(0, opts).unwrap();
    let port = bridge.local_addr().unwrap().port();
    let handle = thread::spawn(move || {
        let mut buf = Vec::new();
        let r = bridge.serve(&RobotParams::default(), &LoopConfig::default(), duration, Some(&mut buf)).unwrap();
        (r, buf)
    });
    (port, handle)
}

fn connect(port: u16) -> Client {
    let (ws, _) = tungstenite::connect(format!("ws://127.0.0.1:{port}/")).unwrap();
    if let MaybeTlsStream::Plain(s) = ws.get_ref() {
        s.set_nodelay(true).unwrap();
    }
    ws
}

fn send(ws: &mut Client, msg: &ClientMessage) {
    ws.send(Message::Text(serde_json::to_string(msg).unwrap())).unwrap();
}

fn recv(ws: &mut Client) -> Option<ServerMessage> {
    match ws.read() {
        Ok(Message::Text(t)) => Some(serde_json::from_str(&t).unwrap()),
        Ok(_) => None,
        Err(tungstenite::Error::Io(e))
            if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) =>
        {
            None
        }
        Err(e) => panic!("client read: {e}"),
    }
}

fn set_timeout(ws: &Client, d: Duration) {
    if let MaybeTlsStream::Plain(s) = ws.get_ref() {
        s.set_read_timeout(Some(d)).unwrap();
    }
}

fn hello(ws: &mut Client, version: u32) -> ServerMessage {
    send(ws, &ClientMessage::Hello { version, client: "test".into() });
    set_timeout(ws, Duration::from_secs(5));
    recv(ws).expect("handshake reply")
}

fn pilot(seq: u64, mode: UiMode) -> ClientMessage {
    ClientMessage::Pilot(UiPilotMessage {
        version: UI_SCHEMA_VERSION,
        seq,
        t: 0.0,
        com_x_offset: 0.0,
        step_trigger: false,
        step_period: 0.5,
        feet_width: 0.2,
        mode,
    })
}

#[test]
fn version_mismatch_is_refused_then_session_opens() {
    let (port, handle) = start(0.3);
    let mut bad = connect(port);
    match hello(&mut bad, UI_SCHEMA_VERSION + 1) {
        ServerMessage::Refusal { version, reason } => {
            assert_eq!(version, UI_SCHEMA_VERSION);
            assert!(reason.contains("version"), "{reason}");
        }
        other => panic!("expected refusal, got {other:?}"),
    }
    let mut good = connect(port);
    assert!(matches!(hello(&mut good, UI_SCHEMA_VERSION), ServerMessage::Welcome { version: UI_SCHEMA_VERSION, .. }));
    set_timeout(&good, Duration::from_millis(2));
    let mut seq = 0;
    let mut ended = None;
    let t0 = Instant::now();
    while ended.is_none() && t0.elapsed() < Duration::from_secs(10) {
        seq += 1;
        send(&mut good, &pilot(seq, UiMode::Manual));
        let until = Instant::now() + Duration::from_millis(20);
        while Instant::now() < until {
            if let Some(ServerMessage::Ended { verdict }) = recv(&mut good) {
                ended = Some(verdict);
                break;
            }
        }
    }
    assert_eq!(ended, Some(Verdict::Completed));
    let (r, _) = handle.join().unwrap();
    assert_eq!(r.verdict, Verdict::Completed);
}

#[test]
fn dropped_socket_triggers_underrun() {
    let (port, handle) = start(30.0);
    let mut ws = connect(port);
    assert!(matches!(hello(&mut ws, UI_SCHEMA_VERSION), ServerMessage::Welcome { .. }));
    for seq in 1..=25 {
        send(&mut ws, &pilot(seq, UiMode::Manual));
        thread::sleep(Duration::from_millis(20));
    }
    drop(ws);
    let (r, telemetry) = handle.join().unwrap();
    let Verdict::Underrun { t } = r.verdict else { panic!("verdict {:?}", r.verdict) };
    assert!(t < 5.0, "underrun at {t}");
    assert!(r.underrun_ticks > 0);
    let held = telemetry
        .split(|b| *b == b'\n')
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_slice::<TelemetryRecord>(l).unwrap())
        .filter(|rec| rec.events.iter().any(|e| e == "underrun_hold"))
        .count() as u64;
    assert_eq!(held, r.underrun_ticks);
    // held ticks never exceed the hold limit
    assert!(held <= (LoopConfig::default().hold_limit / LoopConfig::default().dt).round() as u64 + 1);
}

#[test]
fn loopback_latency_and_auto_step_session() {
    let (port, handle) = start(60.0);
    let mut ws = connect(port);
    assert!(matches!(hello(&mut ws, UI_SCHEMA_VERSION), ServerMessage::Welcome { .. }));
    set_timeout(&ws, Duration::from_millis(1));
    let mut sent: Vec<Instant> = vec![Instant::now()];
    let mut latencies = Vec::new();
    let mut seen = 0;
    let mut touchdowns = 0;
    let mut frames = Vec::new();
    let t0 = Instant::now();
    let mut seq = 0;
    // AutoStep for 4.5 s, then Manual to stop stepping, then stop
    while t0.elapsed() < Duration::from_secs_f64(6.0) {
        seq += 1;
        let mode = if t0.elapsed() < Duration::from_secs_f64(4.5) { UiMode::AutoStep } else { UiMode::Manual };
        send(&mut ws, &pilot(seq, mode));
        sent.push(Instant::now());
        let until = Instant::now() + Duration::from_millis(20);
        while Instant::now() < until {
            if let Some(ServerMessage::Telemetry(f)) = recv(&mut ws) {
                if let Some(s) = f.pilot_seq {
                    if s > seen {
                        latencies.push(sent[s as usize].elapsed().as_secs_f64());
                        seen = s;
                    }
                }
                touchdowns += f.events.iter().filter(|e| e.starts_with("touchdown")).count();
                frames.push(f);
            }
        }
    }
    send(&mut ws, &ClientMessage::Stop);
    set_timeout(&ws, Duration::from_millis(50));
    let mut verdict = None;
    let t1 = Instant::now();
    while verdict.is_none() && t1.elapsed() < Duration::from_secs(5) {
        match recv(&mut ws) {
            Some(ServerMessage::Ended { verdict: v }) => verdict = Some(v),
            Some(ServerMessage::Telemetry(f)) => {
                touchdowns += f.events.iter().filter(|e| e.starts_with("touchdown")).count()
            }
            _ => {}
        }
    }
    let (r, _) = handle.join().unwrap();
    assert_eq!(verdict, Some(Verdict::SourceEnded));
    assert_eq!(r.verdict, Verdict::SourceEnded);
    assert_eq!(r.falls, 0);
    assert!(r.steps >= 5, "steps {}", r.steps);
    assert!(touchdowns >= 5, "touch-downs seen by the console {touchdowns}");
    assert!(frames.iter().all(|f| f.pilot_seq.is_some()));
    latencies.sort_by(f64::total_cmp);
    let median = latencies[latencies.len() / 2];
    println!("median loopback latency {:.1} ms over {} commands", median * 1e3, latencies.len());
    assert!(median < 0.05, "median latency {median}");
}
