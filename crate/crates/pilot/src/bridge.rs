//! Live WebSocket bridge between the browser console and the simulator.
//!
//! One client per session. The client opens with `hello`; a schema version
//! mismatch gets a `refusal` frame and the socket is closed. After
//! `welcome` the bridge thread owns the socket and talks to the control
//! loop through bounded queues: console commands in, decimated telemetry
//! out. The loop runs paced to wall-clock time.
//!
//! Liveness: a command older than `freshness` makes the live source report
//! nothing new; the loop then holds the last sample, tagging each held tick
//! with an `underrun_hold` event, and aborts once the hold exceeds the
//! loop's `hold_limit`.

use std::cell::Cell;
use std::io::{self, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::rc::Rc;
use std::sync::mpsc::{self, Receiver, SyncSender, TryRecvError, TrySendError};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;
use tungstenite::{Message, WebSocket};

use telewalk::robot::RobotParams;
use telewalk::telelocomotion::{
    run_episode_with, EpisodeError, EpisodeResult, LoopConfig, PilotPoll, PilotSource, TelemetryRecord,
};

use crate::ui::{
    check_version, ClientMessage, FrameDecimator, ServerMessage, UiPilotMessage, UiPilotSynth, MAX_COMMAND_RATE,
    UI_SCHEMA_VERSION,
};

const COMMAND_QUEUE: usize = 256;
const FRAME_QUEUE: usize = 64;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("socket error: {0}")]
    Io(#[from] io::Error),
    #[error("websocket error: {0}")]
    Ws(Box<tungstenite::Error>),
    #[error("no pilot command within {0:?} of the handshake")]
    NoPilot(Duration),
    #[error("no console connected within {0:?}")]
    NoClient(Duration),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
}

impl From<tungstenite::Error> for BridgeError {
    fn from(e: tungstenite::Error) -> Self {
        BridgeError::Ws(Box::new(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeOptions {
    /// Loop ticks per telemetry frame.
    pub frame_every: u64,
    /// Age after which a console command no longer counts as live [s].
    pub freshness: f64,
    pub accept_timeout: Option<Duration>,
    pub handshake_timeout: Duration,
    pub first_command_timeout: Duration,
    /// Pace the loop to wall-clock time.
    pub realtime: bool,
}

impl Default for BridgeOptions {
    fn default() -> Self {
        Self {
            frame_every: 20,
            freshness: 0.05,
            accept_timeout: None,
            handshake_timeout: Duration::from_secs(5),
            first_command_timeout: Duration::from_secs(30),
            realtime: true,
        }
    }
}

enum Inbound {
    Pilot(UiPilotMessage),
    Stop,
}

type Socket = WebSocket<TcpStream>;

pub struct Bridge {
    listener: TcpListener,
    opts: BridgeOptions,
}

impl Bridge {
    /// Binds to loopback; port 0 picks a free port.
    pub fn bind(port: u16, opts: BridgeOptions) -> io::Result<Self> {
        Ok(Self { listener: TcpListener::bind(("127.0.0.1", port))?, opts })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Waits for a console, then runs one live episode. Refused clients
    /// do not end the wait.
    pub fn serve(
        self,
        robot: &RobotParams,
        cfg: &LoopConfig,
        duration: f64,
        mut telemetry: Option<&mut dyn Write>,
    ) -> Result<EpisodeResult, BridgeError> {
        let opts = self.opts;
        let ws = self.accept_session(cfg)?;
        ws.get_ref().set_read_timeout(None)?;
        ws.get_ref().set_nonblocking(true)?;

        let (cmd_tx, cmd_rx) = mpsc::sync_channel(COMMAND_QUEUE);
        let (out_tx, out_rx) = mpsc::sync_channel(FRAME_QUEUE);
        let io_thread = thread::spawn(move || pump(ws, cmd_tx, out_rx));

        let first = match cmd_rx.recv_timeout(opts.first_command_timeout) {
            Ok(Inbound::Pilot(m)) => Some(m),
            Ok(Inbound::Stop) => None,
            Err(_) => {
                drop(out_tx);
                let _ = io_thread.join();
                return Err(BridgeError::NoPilot(opts.first_command_timeout));
            }
        };
        let pilot_seq = Rc::new(Cell::new(None));
        let mut source = LiveSource::new(cmd_rx, opts, pilot_seq.clone());
        if let Some(m) = first {
            source.apply(m, 0.0);
        } else {
            source.stopped = true;
        }

        let mut decimator = FrameDecimator::new(opts.frame_every);
        let mut last: Option<TelemetryRecord> = None;
        let result = run_episode_with(robot, cfg, &mut source, duration, &mut |rec| {
            if let Some(w) = telemetry.as_deref_mut() {
                serde_json::to_writer(&mut *w, rec)?;
                w.write_all(b"\n")?;
            }
            if let Some(frame) = decimator.push(rec, pilot_seq.get()) {
                match out_tx.try_send(ServerMessage::Telemetry(frame)) {
                    Ok(()) => {}
                    Err(TrySendError::Full(ServerMessage::Telemetry(f))) => decimator.requeue(f),
                    Err(_) => {}
                }
            }
            last = Some(rec.clone());
            Ok(())
        });
        if let Some(w) = telemetry {
            w.flush()?;
        }
        let result = match result {
            Ok(r) => r,
            Err(e) => {
                drop(out_tx);
                let _ = io_thread.join();
                return Err(e.into());
            }
        };
        // whatever events are still waiting go out before the verdict
        if let Some(rec) = &last {
            if let Some(frame) = decimator.flush(rec, pilot_seq.get()) {
                let _ = out_tx.send(ServerMessage::Telemetry(frame));
            }
        }
        let _ = out_tx.send(ServerMessage::Ended { verdict: result.verdict.clone() });
        drop(out_tx);
        let _ = io_thread.join();
        Ok(result)
    }

    fn accept_session(&self, cfg: &LoopConfig) -> Result<Socket, BridgeError> {
        let deadline = self.opts.accept_timeout.map(|d| (Instant::now() + d, d));
        self.listener.set_nonblocking(deadline.is_some())?;
        loop {
            let stream = match self.listener.accept() {
                Ok((s, _)) => s,
                Err(e) if e.kind() == ErrorKind::WouldBlock => {
                    if let Some((at, d)) = deadline {
                        if Instant::now() > at {
                            return Err(BridgeError::NoClient(d));
                        }
                    }
                    thread::sleep(Duration::from_millis(5));
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            stream.set_nonblocking(false)?;
            stream.set_nodelay(true)?;
            stream.set_read_timeout(Some(self.opts.handshake_timeout))?;
            let mut ws = match tungstenite::accept(stream) {
                Ok(ws) => ws,
                Err(e) => {
                    log::warn!("websocket upgrade failed: {e}");
                    continue;
                }
            };
            match handshake(&mut ws, cfg, self.opts.frame_every) {
                Ok(true) => return Ok(ws),
                Ok(false) => {}
                Err(e) => log::warn!("handshake failed: {e}"),
            }
        }
    }
}

/// Reads `hello` and answers with `welcome` or `refusal`.
fn handshake(ws: &mut Socket, cfg: &LoopConfig, frame_every: u64) -> Result<bool, BridgeError> {
    let text = loop {
        match ws.read()? {
            Message::Text(t) => break t,
            Message::Close(_) => return Ok(false),
            _ => {}
        }
    };
    let refusal = match serde_json::from_str::<ClientMessage>(&text) {
        Ok(ClientMessage::Hello { version, client }) => match check_version(version) {
            Ok(()) => {
                log::info!("console `{client}` connected");
                None
            }
            Err(e) => Some(e.to_string()),
        },
        Ok(_) => Some("expected a hello message first".to_string()),
        Err(e) => Some(format!("unreadable hello: {e}")),
    };
    match refusal {
        None => {
            let welcome = ServerMessage::Welcome {
                version: UI_SCHEMA_VERSION,
                dt: cfg.dt,
                frame_rate: 1.0 / (cfg.dt * frame_every as f64),
            };
            ws.send(Message::Text(serde_json::to_string(&welcome).expect("serializable")))?;
            Ok(true)
        }
        Some(reason) => {
            log::warn!("refusing console: {reason}");
            let msg = ServerMessage::Refusal { version: UI_SCHEMA_VERSION, reason };
            ws.send(Message::Text(serde_json::to_string(&msg).expect("serializable")))?;
            let _ = ws.close(None);
            let _ = ws.flush();
            Ok(false)
        }
    }
}

/// Socket side: forwards console commands and writes queued frames until
/// the loop drops its sender. A dead socket keeps draining the frames.
fn pump(mut ws: Socket, cmd_tx: SyncSender<Inbound>, out_rx: Receiver<ServerMessage>) {
    let mut alive = true;
    loop {
        while alive {
            match ws.read() {
                Ok(Message::Text(text)) => match serde_json::from_str::<ClientMessage>(&text) {
                    Ok(ClientMessage::Pilot(m)) => {
                        if cmd_tx.try_send(Inbound::Pilot(m)).is_err() {
                            log::warn!("command queue full, dropping seq {}", m.seq);
                        }
                    }
                    Ok(ClientMessage::Stop) => {
                        let _ = cmd_tx.send(Inbound::Stop);
                    }
                    Ok(ClientMessage::Hello { .. }) => log::warn!("ignoring repeated hello"),
                    Err(e) => log::warn!("unreadable console message: {e}"),
                },
                Ok(Message::Close(_)) => alive = false,
                Ok(_) => {}
                Err(tungstenite::Error::Io(e)) if e.kind() == ErrorKind::WouldBlock => break,
                Err(e) => {
                    log::warn!("console connection lost: {e}");
                    alive = false;
                }
            }
        }
        loop {
            match out_rx.try_recv() {
                Ok(msg) => {
                    if alive {
                        let text = serde_json::to_string(&msg).expect("serializable");
                        match ws.write(Message::Text(text)) {
                            Ok(()) => {}
                            Err(tungstenite::Error::Io(e)) if e.kind() == ErrorKind::WouldBlock => {}
                            Err(_) => alive = false,
                        }
                    }
                }
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    if alive {
                        finish(&mut ws);
                    }
                    return;
                }
            }
        }
        if alive {
            match ws.flush() {
                Ok(()) => {}
                Err(tungstenite::Error::Io(e)) if e.kind() == ErrorKind::WouldBlock => {}
                Err(_) => alive = false,
            }
        }
        thread::sleep(Duration::from_micros(500));
    }
}

fn finish(ws: &mut Socket) {
    let _ = ws.get_ref().set_nonblocking(false);
    let _ = ws.flush();
    let _ = ws.close(None);
    // let the close handshake complete so the client sees every frame
    let _ = ws.get_ref().set_read_timeout(Some(Duration::from_millis(200)));
    while let Ok(m) = ws.read() {
        if m.is_close() {
            break;
        }
    }
}

/// Pilot source fed by console commands.
pub struct LiveSource {
    rx: Receiver<Inbound>,
    synth: UiPilotSynth,
    freshness: f64,
    realtime: bool,
    start: Option<Instant>,
    last_command: Option<f64>,
    /// Newest command not yet applied, held back by the rate limit.
    pending: Option<UiPilotMessage>,
    last_applied: Option<f64>,
    stopped: bool,
    pilot_seq: Rc<Cell<Option<u64>>>,
}

impl LiveSource {
    fn new(rx: Receiver<Inbound>, opts: BridgeOptions, pilot_seq: Rc<Cell<Option<u64>>>) -> Self {
        Self {
            rx,
            synth: UiPilotSynth::default(),
            freshness: opts.freshness,
            realtime: opts.realtime,
            start: None,
            last_command: None,
            pending: None,
            last_applied: None,
            stopped: false,
            pilot_seq,
        }
    }

    fn apply(&mut self, m: UiPilotMessage, t: f64) {
        self.last_applied = Some(t);
        match self.synth.apply(m, t) {
            Ok(()) => {
                self.last_command = Some(t);
                self.pilot_seq.set(self.synth.last_seq());
            }
            Err(e) => log::warn!("rejected console command {}: {e}", m.seq),
        }
    }

    /// Commands faster than `MAX_COMMAND_RATE` are coalesced: the newest
    /// wins, but a step trigger in a superseded command is kept.
    fn receive(&mut self, m: UiPilotMessage) {
        let trigger = self.pending.is_some_and(|p| p.step_trigger);
        self.pending = Some(UiPilotMessage { step_trigger: m.step_trigger || trigger, ..m });
    }

    fn apply_pending(&mut self, t: f64) {
        let due = self.last_applied.is_none_or(|at| t - at >= 1.0 / MAX_COMMAND_RATE - 1e-9);
        if due {
            if let Some(m) = self.pending.take() {
                self.apply(m, t);
            }
        }
    }

    fn pace(&mut self, t: f64) {
        if !self.realtime {
            return;
        }
        let start = *self.start.get_or_insert_with(Instant::now);
        let due = start + Duration::from_secs_f64(t);
        let now = Instant::now();
        if due > now + Duration::from_micros(200) {
            thread::sleep(due - now);
        }
    }
}

impl PilotSource for LiveSource {
    fn poll(&mut self, t: f64) -> PilotPoll {
        self.pace(t);
        loop {
            match self.rx.try_recv() {
                Ok(Inbound::Pilot(m)) => self.receive(m),
                Ok(Inbound::Stop) => self.stopped = true,
                Err(_) => break,
            }
        }
        self.apply_pending(t);
        if self.stopped {
            return PilotPoll::End;
        }
        match self.last_command {
            Some(at) if t - at <= self.freshness + 1e-9 => PilotPoll::Sample(self.synth.sample(t)),
            _ => PilotPoll::Pending,
        }
    }
}
