//! The operator service: an autonomy thread that owns the executive and
//! serializes commands, plus sessions that talk the wire protocol.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use uvms_core::planning::{Executive, Phase, TaskEvent};
use uvms_core::sync::LatestSlot;

use crate::bandwidth::{BandwidthLedger, Channel};
use crate::nl::Grounder;
use crate::protocol::{
    parse_body, read_body, AckPayload, CloudSummary, CommandPayload, ErrorCode, ErrorPayload, Interpretation, Message,
    Payload, StatePayload, HEADER_BYTES, WarningPayload,
};
use crate::state::{cloud_summary, publish_state, refresh, snapshot, ChangeDetector, Thresholds, CLOUD_VOXEL};

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Simulated seconds per wall second, or as fast as possible when `None`.
    pub time_scale: Option<f64>,
    /// Wall time between idle simulation steps.
    pub idle_tick: Duration,
    /// How often sessions look for state changes.
    pub state_poll: Duration,
    pub thresholds: Thresholds,
    /// Keep every frame in a replayable log.
    pub record: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            time_scale: None,
            idle_tick: Duration::from_millis(20),
            state_poll: Duration::from_millis(20),
            thresholds: Thresholds::default(),
            record: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ToService,
    ToOperator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub session: u64,
    pub direction: Direction,
    pub message: Message,
}

enum Action {
    Events(Vec<TaskEvent>),
    Cloud,
}

struct Request {
    seq: u64,
    action: Action,
    interpretation: Option<Interpretation>,
    reply: Sender<Payload>,
    force: Arc<AtomicBool>,
}

struct Shared {
    config: ServiceConfig,
    started: Instant,
    grounder: Grounder,
    tools: Vec<String>,
    /// Last full snapshot; ticks refresh its moving parts.
    base: Mutex<StatePayload>,
    latest: LatestSlot<StatePayload>,
    cloud: Mutex<Option<CloudSummary>>,
    queue: Mutex<VecDeque<Request>>,
    wake: Condvar,
    stop: Arc<AtomicBool>,
    ticks: AtomicU64,
    controller: Mutex<Option<u64>>,
    next_session: AtomicU64,
    ledger: Mutex<BandwidthLedger>,
    bytes_in: AtomicU64,
    bytes_out: AtomicU64,
    log: Mutex<Vec<LogEntry>>,
    shutdown: AtomicBool,
}

impl Shared {
    fn now(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    fn account(&self, session: u64, direction: Direction, m: &Message, bytes: usize) {
        self.account_bytes(Channel::for_kind(m.kind()), bytes);
        if self.config.record {
            lock(&self.log).push(LogEntry { session, direction, message: m.clone() });
        }
    }

    fn account_bytes(&self, channel: Channel, bytes: usize) {
        lock(&self.ledger).record(channel, self.now(), bytes);
    }

    fn phase(&self) -> Phase {
        self.latest.snapshot().phase
    }

    fn enqueue(&self, r: Request, urgent: bool) {
        let mut q = lock(&self.queue);
        if urgent {
            q.push_front(r);
        } else {
            q.push_back(r);
        }
        self.wake.notify_one();
    }
}

/// Running service. Dropping it stops the autonomy thread.
pub struct Service {
    shared: Arc<Shared>,
    autonomy: Option<JoinHandle<Executive>>,
}

impl Service {
    pub fn start(executive: Executive, config: ServiceConfig) -> Self {
        Self::with_grounder(executive, config, Grounder::bundled())
    }

    pub fn with_grounder(mut executive: Executive, config: ServiceConfig, grounder: Grounder) -> Self {
        executive.observe();
        let snap = snapshot(&executive);
        let shared = Arc::new(Shared {
            tools: executive.sim.scene.tools.iter().map(|t| t.id.clone()).collect(),
            config,
            started: Instant::now(),
            grounder,
            base: Mutex::new(snap.clone()),
            latest: LatestSlot::new(snap),
            cloud: Mutex::new(None),
            queue: Mutex::new(VecDeque::new()),
            wake: Condvar::new(),
            stop: executive.stop_handle(),
            ticks: AtomicU64::new(0),
            controller: Mutex::new(None),
            next_session: AtomicU64::new(1),
            ledger: Mutex::new(BandwidthLedger::default()),
            bytes_in: AtomicU64::new(0),
            bytes_out: AtomicU64::new(0),
            log: Mutex::new(Vec::new()),
            shutdown: AtomicBool::new(false),
        });
        let s = Arc::clone(&shared);
        let autonomy = thread::Builder::new()
            .name("autonomy".into())
            .spawn(move || autonomy_loop(executive, s))
            .expect("spawn autonomy thread");
        Self { shared, autonomy: Some(autonomy) }
    }

    /// A new session; it observes until it claims control.
    pub fn open_session(&self) -> (Inbound, Outbound) {
        open_session(&self.shared)
    }

    pub fn snapshot(&self) -> Arc<StatePayload> {
        self.shared.latest.snapshot()
    }

    pub fn ledger(&self) -> BandwidthLedger {
        lock(&self.shared.ledger).clone()
    }

    /// Bytes read from and written to sockets.
    pub fn transport_bytes(&self) -> (u64, u64) {
        (self.shared.bytes_in.load(Ordering::SeqCst), self.shared.bytes_out.load(Ordering::SeqCst))
    }

    pub fn log(&self) -> Vec<LogEntry> {
        lock(&self.shared.log).clone()
    }

    /// Simulation ticks completed so far.
    pub fn ticks(&self) -> u64 {
        self.shared.ticks.load(Ordering::SeqCst)
    }

    pub fn controller(&self) -> Option<u64> {
        *lock(&self.shared.controller)
    }

    /// Stops the autonomy thread and hands back the executive.
    pub fn shutdown(mut self) -> Executive {
        self.halt().expect("autonomy thread running")
    }

    fn halt(&mut self) -> Option<Executive> {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        self.shared.wake.notify_all();
        self.autonomy.take().map(|h| h.join().expect("autonomy thread panicked"))
    }

    /// Accepts protocol clients on `addr` until the service shuts down.
    pub fn listen(&self, addr: impl ToSocketAddrs) -> io::Result<(SocketAddr, JoinHandle<()>)> {
        let listener = TcpListener::bind(addr)?;
        let local = listener.local_addr()?;
        listener.set_nonblocking(true)?;
        let shared = Arc::clone(&self.shared);
        let handle = thread::Builder::new().name("listener".into()).spawn(move || {
            while !shared.shutdown.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, peer)) => {
                        info!("operator connected from {peer}");
                        let _ = stream.set_nonblocking(false);
                        let (inb, outb) = open_session(&shared);
                        if let Err(e) = serve_connection(stream, inb, outb) {
                            warn!("connection from {peer} failed: {e}");
                        }
                    }
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
                    Err(e) => {
                        warn!("accept failed: {e}");
                        thread::sleep(Duration::from_millis(10));
                    }
                }
            }
        })?;
        Ok((local, handle))
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        let _ = self.halt();
    }
}

fn open_session(shared: &Arc<Shared>) -> (Inbound, Outbound) {
    let id = shared.next_session.fetch_add(1, Ordering::SeqCst);
    let (tx, rx) = mpsc::channel();
    let force = Arc::new(AtomicBool::new(true));
    let inbound = Inbound { id, shared: Arc::clone(shared), last_seq: None, reply: tx, force: Arc::clone(&force) };
    let outbound = Outbound {
        id,
        shared: Arc::clone(shared),
        rx,
        seq: 0,
        detector: ChangeDetector::new(shared.config.thresholds),
        force,
    };
    (inbound, outbound)
}

/// Counts bytes as they pass through.
struct Counting<S> {
    inner: S,
    counter: Arc<Shared>,
    out: bool,
}

impl<S: Read> Read for Counting<S> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.counter.bytes_in.fetch_add(n as u64, Ordering::SeqCst);
        Ok(n)
    }
}

impl<S: Write> Write for Counting<S> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        if self.out {
            self.counter.bytes_out.fetch_add(n as u64, Ordering::SeqCst);
        }
        Ok(n)
    }
    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

fn serve_connection(stream: TcpStream, mut inbound: Inbound, mut outbound: Outbound) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let closed = Arc::new(AtomicBool::new(false));
    let mut writer = Counting { inner: stream.try_clone()?, counter: Arc::clone(&outbound.shared), out: true };
    let w_closed = Arc::clone(&closed);
    thread::Builder::new().name(format!("session-{}-out", outbound.id)).spawn(move || {
        while !w_closed.load(Ordering::SeqCst) && !outbound.shared.shutdown.load(Ordering::SeqCst) {
            let Some(m) = outbound.next(outbound.shared.config.state_poll) else { continue };
            let bytes = m.encode();
            if writer.write_all(&bytes).and_then(|_| writer.flush()).is_err() {
                break;
            }
            outbound.shared.account(outbound.id, Direction::ToOperator, &m, bytes.len());
        }
        let _ = writer.inner.shutdown(std::net::Shutdown::Both);
    })?;
    let mut reader = Counting { inner: stream, counter: Arc::clone(&inbound.shared), out: false };
    thread::Builder::new().name(format!("session-{}-in", inbound.id)).spawn(move || {
        loop {
            match read_body(&mut reader) {
                Ok(Some(body)) => inbound.receive(&body),
                Ok(None) => break,
                Err(e) => {
                    debug!("session {} read error: {e}", inbound.id);
                    break;
                }
            }
        }
        closed.store(true, Ordering::SeqCst);
    })?;
    Ok(())
}

/// Receiving half of a session. Dropping it ends the session and releases
/// control.
pub struct Inbound {
    pub id: u64,
    shared: Arc<Shared>,
    last_seq: Option<u64>,
    reply: Sender<Payload>,
    force: Arc<AtomicBool>,
}

impl Inbound {
    fn error(&self, ack: Option<u64>, code: ErrorCode, message: impl Into<String>) {
        let _ = self.reply.send(Payload::Error(ErrorPayload {
            ack,
            code,
            message: message.into(),
            phase: Some(self.shared.phase()),
        }));
    }

    fn ack(&self, seq: u64, interpretation: Option<Interpretation>) {
        let _ = self.reply.send(Payload::Ack(AckPayload {
            ack: seq,
            phase: self.shared.phase(),
            controller: self.is_controller(),
            interpretation,
        }));
    }

    pub fn is_controller(&self) -> bool {
        *lock(&self.shared.controller) == Some(self.id)
    }

    /// Handles one raw frame body. Bodies that do not parse are still
    /// accounted and answered with `MalformedCommand`.
    pub fn receive(&mut self, body: &[u8]) {
        match parse_body(body) {
            Ok(m) => self.submit_sized(m, HEADER_BYTES + body.len()),
            Err(e) => {
                self.shared.account_bytes(Channel::TeleopManip, HEADER_BYTES + body.len());
                self.error(None, ErrorCode::MalformedCommand, e.to_string());
            }
        }
    }

    /// Handles one operator message, accounting its encoded size.
    pub fn submit(&mut self, m: Message) {
        let n = m.byte_size();
        self.submit_sized(m, n);
    }

    fn submit_sized(&mut self, m: Message, bytes: usize) {
        self.shared.account(self.id, Direction::ToService, &m, bytes);
        let seq = m.seq;
        if self.last_seq.is_some_and(|last| seq <= last) {
            self.error(Some(seq), ErrorCode::MalformedCommand, format!("sequence {seq} is not increasing"));
            return;
        }
        self.last_seq = Some(seq);
        match m.payload {
            Payload::Command(c) => self.command(seq, c),
            Payload::Nl(nl) => self.utterance(seq, &nl.text),
            other => self.error(Some(seq), ErrorCode::MalformedCommand, format!("operators may not send {:?}", other.kind())),
        }
    }

    fn command(&mut self, seq: u64, c: CommandPayload) {
        match &c {
            CommandPayload::ClaimControl => {
                let mut owner = lock(&self.shared.controller);
                match *owner {
                    Some(o) if o != self.id => {
                        drop(owner);
                        self.error(Some(seq), ErrorCode::NotController, "another session holds control");
                    }
                    _ => {
                        *owner = Some(self.id);
                        drop(owner);
                        self.ack(seq, None);
                    }
                }
                return;
            }
            CommandPayload::ReleaseControl => {
                let mut owner = lock(&self.shared.controller);
                if *owner == Some(self.id) {
                    *owner = None;
                }
                drop(owner);
                self.ack(seq, None);
                return;
            }
            CommandPayload::RequestState { cloud } => {
                if *cloud {
                    self.dispatch(seq, Action::Cloud, None, false);
                } else {
                    self.force.store(true, Ordering::SeqCst);
                    self.ack(seq, None);
                }
                return;
            }
            _ => {}
        }
        if !self.is_controller() {
            self.error(Some(seq), ErrorCode::NotController, "session is an observer");
            return;
        }
        match c.to_event() {
            Ok(Some(ev)) => self.events(seq, vec![ev], None),
            Ok(None) => unreachable!("session commands handled above"),
            Err(e) => self.error(Some(seq), ErrorCode::MalformedCommand, e),
        }
    }

    fn utterance(&mut self, seq: u64, text: &str) {
        if !self.is_controller() {
            self.error(Some(seq), ErrorCode::NotController, "session is an observer");
            return;
        }
        let tools: Vec<&str> = self.shared.tools.iter().map(String::as_str).collect();
        match self.shared.grounder.ground(text, &tools) {
            Ok((symbols, events)) => {
                let interpretation = Interpretation { symbols, events: events.iter().map(|e| e.name().to_string()).collect() };
                self.events(seq, events, Some(interpretation));
            }
            Err(e) => self.error(Some(seq), ErrorCode::Grounding, e.to_string()),
        }
    }

    fn events(&mut self, seq: u64, events: Vec<TaskEvent>, interpretation: Option<Interpretation>) {
        let urgent = events.contains(&TaskEvent::Stop);
        if urgent {
            // Seen by the motion loop at its next tick.
            self.shared.stop.store(true, Ordering::SeqCst);
        }
        self.dispatch(seq, Action::Events(events), interpretation, urgent);
    }

    fn dispatch(&self, seq: u64, action: Action, interpretation: Option<Interpretation>, urgent: bool) {
        let r = Request { seq, action, interpretation, reply: self.reply.clone(), force: Arc::clone(&self.force) };
        self.shared.enqueue(r, urgent);
    }
}

impl Drop for Inbound {
    fn drop(&mut self) {
        let mut owner = lock(&self.shared.controller);
        if *owner == Some(self.id) {
            *owner = None;
        }
    }
}

/// Sending half of a session: replies first, then state when it changed.
pub struct Outbound {
    pub id: u64,
    shared: Arc<Shared>,
    rx: Receiver<Payload>,
    seq: u64,
    detector: ChangeDetector,
    force: Arc<AtomicBool>,
}

impl Outbound {
    /// Next message for the operator, waiting up to `timeout`.
    pub fn next(&mut self, timeout: Duration) -> Option<Message> {
        let payload = match self.rx.recv_timeout(timeout) {
            Ok(p) => Some(p),
            Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => None,
        };
        let payload = payload.or_else(|| {
            let forced = self.force.swap(false, Ordering::SeqCst);
            let mut snap = (*self.shared.latest.snapshot()).clone();
            if forced {
                snap.cloud = lock(&self.shared.cloud).take();
            }
            publish_state(&snap, &mut self.detector, forced).map(Payload::State)
        })?;
        self.seq += 1;
        Some(Message::new(self.seq, payload))
    }

    /// Like [`Outbound::next`], encoded and accounted.
    pub fn next_frame(&mut self, timeout: Duration) -> Option<Vec<u8>> {
        let m = self.next(timeout)?;
        let bytes = m.encode();
        self.shared.account(self.id, Direction::ToOperator, &m, bytes.len());
        Some(bytes)
    }

    /// Queues a warning for this operator.
    pub fn warning(&mut self, message: impl Into<String>) -> Message {
        self.seq += 1;
        Message::new(self.seq, Payload::Warning(WarningPayload { message: message.into() }))
    }
}

fn publish(ex: &Executive, shared: &Shared) {
    let snap = snapshot(ex);
    *lock(&shared.base) = snap.clone();
    shared.latest.publish(snap);
}

fn autonomy_loop(mut ex: Executive, shared: Arc<Shared>) -> Executive {
    let s = Arc::clone(&shared);
    let wall0 = Instant::now();
    let t0 = ex.sim.time();
    ex.set_observer(Some(Box::new(move |sim, task| {
        s.ticks.store((sim.time() / sim.dt).round() as u64, Ordering::SeqCst);
        let snap = {
            let mut base = lock(&s.base);
            refresh(&mut base, sim, task);
            base.clone()
        };
        s.latest.publish(snap);
        if let Some(scale) = s.config.time_scale {
            let ahead = (sim.time() - t0) / scale - wall0.elapsed().as_secs_f64();
            if ahead > 0.0 {
                thread::sleep(Duration::from_secs_f64(ahead));
            }
        }
    })));
    publish(&ex, &shared);
    loop {
        let req = {
            let mut q = lock(&shared.queue);
            if q.is_empty() && !shared.shutdown.load(Ordering::SeqCst) {
                q = shared.wake.wait_timeout(q, shared.config.idle_tick).map(|(g, _)| g).unwrap_or_else(|e| e.into_inner().0);
            }
            q.pop_front()
        };
        if shared.shutdown.load(Ordering::SeqCst) {
            break;
        }
        let Some(req) = req else {
            ex.sim.step();
            shared.ticks.store((ex.sim.time() / ex.sim.dt).round() as u64, Ordering::SeqCst);
            let snap = {
                let mut base = lock(&shared.base);
                refresh(&mut base, &ex.sim, &ex.task);
                base.clone()
            };
            shared.latest.publish(snap);
            continue;
        };
        match req.action {
            Action::Cloud => {
                let summary = ex.stereo_cloud().map(|(cloud, pose)| cloud_summary(&cloud.transformed(&pose), CLOUD_VOXEL));
                *lock(&shared.cloud) = summary;
                req.force.store(true, Ordering::SeqCst);
                let _ = req.reply.send(Payload::Ack(AckPayload {
                    ack: req.seq,
                    phase: ex.phase(),
                    controller: false,
                    interpretation: None,
                }));
            }
            Action::Events(events) => {
                let mut predicted = ex.task.clone();
                let mut refused = None;
                for ev in &events {
                    let t = predicted.advance(ev);
                    if !t.legal() {
                        refused = Some((ev.clone(), predicted.phase));
                        break;
                    }
                    predicted = t.state;
                }
                if let Some((ev, phase)) = refused {
                    ex.handle(ev.clone());
                    let msg = ex.warnings.last().cloned().unwrap_or_else(|| format!("{} refused in {phase:?}", ev.name()));
                    let _ = req.reply.send(Payload::Error(ErrorPayload {
                        ack: Some(req.seq),
                        code: ErrorCode::Rejected,
                        message: msg,
                        phase: Some(phase),
                    }));
                    publish(&ex, &shared);
                    continue;
                }
                let _ = req.reply.send(Payload::Ack(AckPayload {
                    ack: req.seq,
                    phase: predicted.phase,
                    controller: true,
                    interpretation: req.interpretation,
                }));
                for ev in events {
                    if matches!(ev, TaskEvent::SelectTool { .. } | TaskEvent::RequestPlan | TaskEvent::Retry) {
                        ex.observe();
                    }
                    ex.handle(ev);
                    publish(&ex, &shared);
                }
            }
        }
    }
    ex.set_observer(None);
    ex
}
